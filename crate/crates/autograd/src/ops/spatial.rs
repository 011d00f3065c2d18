//! Spatial resampling and layout ops: padding, cropping, bilinear resize,
//! adaptive average pooling, channel concat/slice.

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
    Reflect,
}

fn source_index(i: isize, len: usize, mode: PadMode) -> Option<usize> {
    let n = len as isize;
    if (0..n).contains(&i) {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Replicate => Some(i.clamp(0, n - 1) as usize),
        PadMode::Reflect => {
            if n == 1 {
                return Some(0);
            }
            let period = 2 * (n - 1);
            let mut j = i.rem_euclid(period);
            if j >= n {
                j = period - j;
            }
            Some(j as usize)
        }
    }
}

/// 1-D linear interpolation taps for resizing `src` samples to `dst`
/// (half-pixel centres, edge clamped).
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = if i1 == i0 { 0.0 } else { pos - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Index ranges of adaptive average pooling from `src` to `dst` cells.
fn pool_ranges(src: usize, dst: usize) -> Vec<(usize, usize)> {
    (0..dst).map(|o| ((o * src) / dst, ((o + 1) * src).div_ceil(dst))).collect()
}

impl<'g, T: Real> Var<'g, T> {
    /// Pad H and W by `(top, bottom, left, right)`.
    pub fn pad(&self, pads: [usize; 4], mode: PadMode) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        if pads == [0; 4] {
            return self.clone();
        }
        let [top, bottom, left, right] = pads;
        if mode == PadMode::Reflect {
            assert!(top < h.max(2) && bottom < h.max(2) && left < w.max(2) && right < w.max(2), "reflect pad wider than input");
        }
        let (ho, wo) = (h + top + bottom, w + left + right);
        let rows: Vec<Option<usize>> = (0..ho).map(|y| source_index(y as isize - top as isize, h, mode)).collect();
        let cols: Vec<Option<usize>> = (0..wo).map(|x| source_index(x as isize - left as isize, w, mode)).collect();
        let src = self.value.data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            for (y, ry) in rows.iter().enumerate() {
                let Some(sy) = ry else { continue };
                for (x, rx) in cols.iter().enumerate() {
                    if let Some(sx) = rx {
                        out[(p * ho + y) * wo + x] = src[(p * h + sy) * w + sx];
                    }
                }
            }
        }
        self.graph.op(Tensor::new(vec![n, c, ho, wo], out), &[self], move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for (y, ry) in rows.iter().enumerate() {
                    let Some(sy) = ry else { continue };
                    for (x, rx) in cols.iter().enumerate() {
                        if let Some(sx) = rx {
                            let t = &mut dx[(p * h + sy) * w + sx];
                            *t = *t + gd[(p * ho + y) * wo + x];
                        }
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// Spatial window `[y0, y0 + height) x [x0, x0 + width)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        assert!(y0 + height <= h && x0 + width <= w, "crop window outside input");
        if (y0, x0, height, width) == (0, 0, h, w) {
            return self.clone();
        }
        let src = self.value.data();
        let mut out = Vec::with_capacity(n * c * height * width);
        for p in 0..n * c {
            for y in 0..height {
                let row = (p * h + y0 + y) * w + x0;
                out.extend_from_slice(&src[row..row + width]);
            }
        }
        self.graph.op(Tensor::new(vec![n, c, height, width], out), &[self], move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for y in 0..height {
                    let row = (p * h + y0 + y) * w + x0;
                    dx[row..row + width].copy_from_slice(&g.data()[(p * height + y) * width..(p * height + y + 1) * width]);
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// Bilinear resize with half-pixel centres (no corner alignment).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        if (out_h, out_w) == (h, w) {
            return self.clone();
        }
        let ty = bilinear_taps(h, out_h);
        let tx = bilinear_taps(w, out_w);
        let value = resize_apply(&self.value, &ty, &tx, out_h, out_w);
        self.graph.op(value, &[self], move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
                    for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                        let v = gd[(p * out_h + y) * out_w + x];
                        let base = p * h * w;
                        dx[base + y0 * w + x0] = dx[base + y0 * w + x0] + v * gy * gx;
                        dx[base + y0 * w + x1] = dx[base + y0 * w + x1] + v * gy * fx;
                        dx[base + y1 * w + x0] = dx[base + y1 * w + x0] + v * fy * gx;
                        dx[base + y1 * w + x1] = dx[base + y1 * w + x1] + v * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// Average over adaptive windows so the output is `out_h x out_w`.
    pub fn adaptive_avg_pool(&self, out_h: usize, out_w: usize) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        if (out_h, out_w) == (h, w) {
            return self.clone();
        }
        let ry = pool_ranges(h, out_h);
        let rx = pool_ranges(w, out_w);
        let src = self.value.data();
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for p in 0..n * c {
            for (oy, &(ya, yb)) in ry.iter().enumerate() {
                for (ox, &(xa, xb)) in rx.iter().enumerate() {
                    let mut acc = T::zero();
                    for y in ya..yb {
                        for x in xa..xb {
                            acc = acc + src[(p * h + y) * w + x];
                        }
                    }
                    out[(p * out_h + oy) * out_w + ox] = acc / T::lit(((yb - ya) * (xb - xa)) as f64);
                }
            }
        }
        self.graph.op(Tensor::new(vec![n, c, out_h, out_w], out), &[self], move |g| {
            let gd = g.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for (oy, &(ya, yb)) in ry.iter().enumerate() {
                    for (ox, &(xa, xb)) in rx.iter().enumerate() {
                        let v = gd[(p * out_h + oy) * out_w + ox] / T::lit(((yb - ya) * (xb - xa)) as f64);
                        for y in ya..yb {
                            for x in xa..xb {
                                dx[(p * h + y) * w + x] = dx[(p * h + y) * w + x] + v;
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// 2x2 max pooling with stride 2 (trailing odd row/column dropped).
    /// Ties route the gradient to the first maximal element in raster order.
    pub fn max_pool2(&self) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (p * h + 2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = (p * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    arg.push(best);
                }
            }
        }
        self.graph.op(Tensor::new(vec![n, c, oh, ow], out), &[self], move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for (&i, &gv) in arg.iter().zip(g.data()) {
                dx[i] = dx[i] + gv;
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&self, start: usize, len: usize) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        assert!(start + len <= c, "channel slice out of range");
        if (start, len) == (0, c) {
            return self.clone();
        }
        let plane = h * w;
        let src = self.value.data();
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            out.extend_from_slice(&src[(b * c + start) * plane..(b * c + start + len) * plane]);
        }
        self.graph.op(Tensor::new(vec![n, len, h, w], out), &[self], move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            for b in 0..n {
                dx[(b * c + start) * plane..(b * c + start + len) * plane]
                    .copy_from_slice(&g.data()[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(Tensor::new(vec![n, c, h, w], dx))]
        })
    }

    /// Concatenate NCHW tensors along channels.
    pub fn concat_channels(parts: &[Var<'g, T>]) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let (n, _, h, w) = parts[0].dims4();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = p.dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat spatial/batch mismatch");
                pc
            })
            .collect();
        let total: usize = widths.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for (p, &pc) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value.data()[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        let refs: Vec<&Var<'g, T>> = parts.iter().collect();
        parts[0].graph.op(Tensor::new(vec![n, total, h, w], out), &refs, move |g| {
            let mut grads: Vec<Vec<T>> = widths.iter().map(|&pc| Vec::with_capacity(n * pc * plane)).collect();
            for b in 0..n {
                let mut off = b * total * plane;
                for (dst, &pc) in grads.iter_mut().zip(&widths) {
                    dst.extend_from_slice(&g.data()[off..off + pc * plane]);
                    off += pc * plane;
                }
            }
            grads
                .into_iter()
                .zip(&widths)
                .map(|(d, &pc)| Some(Tensor::new(vec![n, pc, h, w], d)))
                .collect()
        })
    }
}

/// Forward bilinear resize on a raw tensor.
fn resize_apply<T: Real>(
    x: &Tensor<T>,
    ty: &[(usize, usize, f64)],
    tx: &[(usize, usize, f64)],
    out_h: usize,
    out_w: usize,
) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let src = x.data();
    let mut out = vec![T::zero(); n * c * out_h * out_w];
    for p in 0..n * c {
        let base = p * h * w;
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let (fy, gy) = (T::lit(fy), T::lit(1.0 - fy));
            for (xo, &(x0, x1, fx)) in tx.iter().enumerate() {
                let (fx, gx) = (T::lit(fx), T::lit(1.0 - fx));
                let top = src[base + y0 * w + x0] * gx + src[base + y0 * w + x1] * fx;
                let bot = src[base + y1 * w + x0] * gx + src[base + y1 * w + x1] * fx;
                out[(p * out_h + y) * out_w + xo] = top * gy + bot * fy;
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

/// Bilinear resize of a plain tensor (same operator as [`Var::resize_bilinear`]).
pub fn resize_bilinear_tensor<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (_, _, h, w) = x.dims4();
    if (h, w) == (out_h, out_w) {
        return x.clone();
    }
    resize_apply(x, &bilinear_taps(h, out_h), &bilinear_taps(w, out_w), out_h, out_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn checkerboard_upsample_matches_hand_weights() {
        // 2x2 -> 4x4: sample positions -0.25->0 (clamped), 0.25, 0.75, 1.25->1.
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let y = x.resize_bilinear(4, 4);
        let w = [0.0, 0.25, 0.75, 1.0];
        for i in 0..4 {
            for j in 0..4 {
                let (a, b) = (w[i], w[j]);
                let want = (1.0 - a) * (1.0 - b) * 1.0 + a * b * 1.0;
                assert_eq!(y.value().at4(0, 0, i, j), want);
            }
        }
    }

    #[test]
    fn replicate_pad_preserves_constants() {
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::full([1, 2, 3, 3], 0.7));
        let p = x.pad([3, 3, 3, 3], PadMode::Replicate);
        assert_eq!(p.shape(), &[1, 2, 9, 9]);
        assert!(p.value().data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn reflect_pad_indices() {
        assert_eq!(source_index(-1, 4, PadMode::Reflect), Some(1));
        assert_eq!(source_index(4, 4, PadMode::Reflect), Some(2));
        assert_eq!(source_index(-2, 4, PadMode::Zero), None);
    }

    #[test]
    fn adaptive_pool_uneven() {
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::from_fn([1, 1, 1, 5], |i| i as f64));
        let p = x.adaptive_avg_pool(1, 2);
        // windows [0,3) and [2,5)
        assert_eq!(p.value().data(), &[1.0, 3.0]);
    }
}
