use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    /// Layer normalization across the channel axis of an NCHW tensor, one
    /// statistic per pixel, followed by the affine map `gamma * x_hat + beta`
    /// (`gamma`, `beta`: `[c]`).
    #[allow(clippy::needless_range_loop)]
    pub fn layer_norm_channels(&self, gamma: &Var<'g, T>, beta: &Var<'g, T>, eps: f64) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        assert_eq!(gamma.shape(), &[c], "layer norm gamma shape");
        assert_eq!(beta.shape(), &[c], "layer norm beta shape");
        let plane = h * w;
        let eps = T::lit(eps);
        let src = self.value.data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); n * plane];
        let cf = T::lit(c as f64);
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean = mean + src[base + ch * plane + p];
                }
                mean = mean / cf;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = src[base + ch * plane + p] - mean;
                    var = var + d * d;
                }
                let is = T::one() / (var / cf + eps).sqrt();
                inv_std[b * plane + p] = is;
                for ch in 0..c {
                    xhat[base + ch * plane + p] = (src[base + ch * plane + p] - mean) * is;
                }
            }
        }
        let (gd, bd) = (gamma.value.data(), beta.value.data());
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for p in 0..plane {
                    out[off + p] = xhat[off + p] * gd[ch] + bd[ch];
                }
            }
        }
        let xhat = Rc::new(xhat);
        let gamma_v = gamma.rc();
        self.graph.op(Tensor::new(vec![n, c, h, w], out), &[self, gamma, beta], move |g| {
            let gdat = g.data();
            let gm = gamma_v.data();
            let mut dx = vec![T::zero(); gdat.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                let base = b * c * plane;
                for p in 0..plane {
                    // dx = inv_std * (dxh - mean(dxh) - xhat * mean(dxh * xhat))
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for ch in 0..c {
                        let i = base + ch * plane + p;
                        let dxh = gdat[i] * gm[ch];
                        m1 = m1 + dxh;
                        m2 = m2 + dxh * xhat[i];
                        dgamma[ch] = dgamma[ch] + gdat[i] * xhat[i];
                        dbeta[ch] = dbeta[ch] + gdat[i];
                    }
                    m1 = m1 / cf;
                    m2 = m2 / cf;
                    let is = inv_std[b * plane + p];
                    for ch in 0..c {
                        let i = base + ch * plane + p;
                        dx[i] = is * (gdat[i] * gm[ch] - m1 - xhat[i] * m2);
                    }
                }
            }
            vec![
                Some(Tensor::new(vec![n, c, h, w], dx)),
                Some(Tensor::new(vec![c], dgamma)),
                Some(Tensor::new(vec![c], dbeta)),
            ]
        })
    }
}
