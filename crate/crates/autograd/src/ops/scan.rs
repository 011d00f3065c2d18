//! Selective state-space scan with zero-order-hold style discretization.
//!
//! Per channel `d` and state `s`:
//!
//! ```text
//! abar_t = exp(delta_t[d] * A[d, s])
//! h_t    = abar_t * h_{t-1} + delta_t[d] * B_t[s] * x_t[d]      (h_0 = 0)
//! y_t[d] = sum_s C_t[s] * h_t[d, s] + D[d] * x_t[d]
//! ```

use std::rc::Rc;

use thiserror::Error;

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("non-finite value in state-space scan at step {step} (batch {batch}, channel {channel})")]
pub struct ScanError {
    pub step: usize,
    pub batch: usize,
    pub channel: usize,
}

struct Dims {
    n: usize,
    l: usize,
    d: usize,
    s: usize,
}

fn check_dims<T: Real>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    dskip: &Tensor<T>,
) -> Dims {
    let xs = x.shape();
    assert_eq!(xs.len(), 3, "scan input must be [n, l, d]");
    let (n, l, d) = (xs[0], xs[1], xs[2]);
    assert_eq!(delta.shape(), xs, "delta must match x");
    assert_eq!(a.shape().len(), 2, "A must be [d, s]");
    assert_eq!(a.shape()[0], d, "A rows must equal channel count");
    let s = a.shape()[1];
    assert_eq!(b.shape(), &[n, l, s], "B must be [n, l, s]");
    assert_eq!(c.shape(), &[n, l, s], "C must be [n, l, s]");
    assert_eq!(dskip.shape(), &[d], "D must be [d]");
    Dims { n, l, d, s }
}

/// Forward scan returning outputs and all hidden states (`[n, l, d, s]`).
pub fn selective_scan_forward<T: Real>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    c: &Tensor<T>,
    dskip: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>), ScanError> {
    let Dims { n, l, d, s } = check_dims(x, delta, a, b, c, dskip);
    let (xd, dd, ad, bd, cd, dk) = (x.data(), delta.data(), a.data(), b.data(), c.data(), dskip.data());
    let mut y = vec![T::zero(); n * l * d];
    let mut hs = vec![T::zero(); n * l * d * s];
    let mut h = vec![T::zero(); d * s];
    for bi in 0..n {
        h.fill(T::zero());
        for t in 0..l {
            let row = (bi * l + t) * d;
            let srow = (bi * l + t) * s;
            for ch in 0..d {
                let xv = xd[row + ch];
                let dv = dd[row + ch];
                let mut acc = dk[ch] * xv;
                let hc = &mut h[ch * s..(ch + 1) * s];
                for (k, hk) in hc.iter_mut().enumerate() {
                    let abar = (dv * ad[ch * s + k]).exp();
                    *hk = abar * *hk + dv * bd[srow + k] * xv;
                    acc = acc + cd[srow + k] * *hk;
                }
                if !acc.is_finite() {
                    return Err(ScanError { step: t, batch: bi, channel: ch });
                }
                y[row + ch] = acc;
            }
            hs[(bi * l + t) * d * s..(bi * l + t + 1) * d * s].copy_from_slice(&h);
        }
    }
    Ok((Tensor::new(vec![n, l, d], y), hs))
}

impl<'g, T: Real> Var<'g, T> {
    /// Selective scan over `self` (`x: [n, l, d]`). See module docs for the recurrence.
    pub fn selective_scan(
        &self,
        delta: &Var<'g, T>,
        a: &Var<'g, T>,
        b: &Var<'g, T>,
        c: &Var<'g, T>,
        dskip: &Var<'g, T>,
    ) -> Result<Var<'g, T>, ScanError> {
        let (y, hs) = selective_scan_forward(&self.value, &delta.value, &a.value, &b.value, &c.value, &dskip.value)?;
        let (x, dl, av, bv, cv, dv) = (self.rc(), delta.rc(), a.rc(), b.rc(), c.rc(), dskip.rc());
        let hs = Rc::new(hs);
        Ok(self.graph.op(y, &[self, delta, a, b, c, dskip], move |g| {
            let Dims { n, l, d, s } = check_dims(&x, &dl, &av, &bv, &cv, &dv);
            let (xd, dd, ad, bd, cd, dk) = (x.data(), dl.data(), av.data(), bv.data(), cv.data(), dv.data());
            let gd = g.data();
            let mut gx = vec![T::zero(); n * l * d];
            let mut gdelta = vec![T::zero(); n * l * d];
            let mut ga = vec![T::zero(); d * s];
            let mut gb = vec![T::zero(); n * l * s];
            let mut gc = vec![T::zero(); n * l * s];
            let mut gdk = vec![T::zero(); d];
            let mut dh = vec![T::zero(); s];
            for bi in 0..n {
                for ch in 0..d {
                    dh.fill(T::zero());
                    for t in (0..l).rev() {
                        let row = (bi * l + t) * d + ch;
                        let srow = (bi * l + t) * s;
                        let gy = gd[row];
                        let xv = xd[row];
                        let dv = dd[row];
                        gx[row] = gx[row] + gy * dk[ch];
                        gdk[ch] = gdk[ch] + gy * xv;
                        let h_t = &hs[((bi * l + t) * d + ch) * s..((bi * l + t) * d + ch + 1) * s];
                        let h_prev = (t > 0).then(|| &hs[((bi * l + t - 1) * d + ch) * s..((bi * l + t - 1) * d + ch + 1) * s]);
                        let mut gdv = T::zero();
                        let mut gxv = T::zero();
                        for k in 0..s {
                            gc[srow + k] = gc[srow + k] + gy * h_t[k];
                            let dhk = dh[k] + gy * cd[srow + k];
                            let a_k = ad[ch * s + k];
                            let abar = (dv * a_k).exp();
                            let hp = h_prev.map_or(T::zero(), |hp| hp[k]);
                            let dabar = dhk * hp * abar;
                            ga[ch * s + k] = ga[ch * s + k] + dabar * dv;
                            gdv = gdv + dabar * a_k + dhk * bd[srow + k] * xv;
                            gb[srow + k] = gb[srow + k] + dhk * dv * xv;
                            gxv = gxv + dhk * dv * bd[srow + k];
                            dh[k] = dhk * abar;
                        }
                        gdelta[row] = gdelta[row] + gdv;
                        gx[row] = gx[row] + gxv;
                    }
                }
            }
            vec![
                Some(Tensor::new(vec![n, l, d], gx)),
                Some(Tensor::new(vec![n, l, d], gdelta)),
                Some(Tensor::new(vec![d, s], ga)),
                Some(Tensor::new(vec![n, l, s], gb)),
                Some(Tensor::new(vec![n, l, s], gc)),
                Some(Tensor::new(vec![d], gdk)),
            ]
        }))
    }
}
