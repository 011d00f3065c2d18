//! 2-D convolution (im2col + GEMM) with stride, zero padding, dilation and groups.

use crate::graph::Var;
use crate::scalar::{gemm, MatRef, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dOptions {
    /// Stride 1, "same" zero padding for a `k x k` kernel at the given dilation.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self { stride: 1, padding: dilation * (kernel - 1) / 2, dilation, groups: 1 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn out_len(&self, len: usize, k: usize) -> usize {
        let span = self.dilation * (k - 1) + 1;
        assert!(len + 2 * self.padding >= span, "convolution kernel larger than padded input");
        (len + 2 * self.padding - span) / self.stride + 1
    }
}

struct Geometry {
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    opts: Conv2dOptions,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.opts.stride == 1 && self.opts.padding == 0
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let (s, d, p) = (self.opts.stride, self.opts.dilation, self.opts.padding as isize);
        let hw_out = self.ho * self.wo;
        for c in 0..self.cin_g {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * hw_out;
                    let dst = &mut cols[row..row + hw_out];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky * d) as isize - p;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx * d) as isize - p;
                            *v = if ix < 0 || ix >= self.w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let (s, d, p) = (self.opts.stride, self.opts.dilation, self.opts.padding as isize);
        let hw_out = self.ho * self.wo;
        for c in 0..self.cin_g {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * hw_out;
                    let src = &cols[row..row + hw_out];
                    for oy in 0..self.ho {
                        let iy = (oy * s + ky * d) as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let base = iy as usize * self.w;
                        for ox in 0..self.wo {
                            let ix = (ox * s + kx * d) as isize - p;
                            if ix >= 0 && (ix as usize) < self.w {
                                let t = &mut plane[base + ix as usize];
                                *t = *t + src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], opts: Conv2dOptions) -> Geometry {
    assert_eq!(x.len(), 4, "conv2d input must be NCHW, got {x:?}");
    assert_eq!(w.len(), 4, "conv2d weight must be [out, in/groups, kh, kw], got {w:?}");
    let (c, h, wd) = (x[1], x[2], x[3]);
    let g = opts.groups;
    assert!(g >= 1 && c.is_multiple_of(g) && w[0].is_multiple_of(g), "bad group count {g} for {c} -> {}", w[0]);
    assert_eq!(w[1], c / g, "conv2d weight expects {} input channels per group, input has {}", w[1], c / g);
    Geometry {
        cin_g: c / g,
        cout_g: w[0] / g,
        h,
        w: wd,
        kh: w[2],
        kw: w[3],
        ho: opts.out_len(h, w[2]),
        wo: opts.out_len(wd, w[3]),
        opts,
    }
}

/// Raw forward convolution on tensors.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: Conv2dOptions,
) -> Tensor<T> {
    let geo = geometry(x.shape(), weight.shape(), opts);
    let (n, c, h, w) = x.dims4();
    let cout = weight.shape()[0];
    let hw_out = geo.ho * geo.wo;
    let k = geo.k();
    let mut out = vec![T::zero(); n * cout * hw_out];
    let mut cols = if geo.pointwise() { Vec::new() } else { vec![T::zero(); k * hw_out] };
    for b in 0..n {
        for g in 0..opts.groups {
            let xs = &x.data()[(b * c + g * geo.cin_g) * h * w..(b * c + (g + 1) * geo.cin_g) * h * w];
            let ws = &weight.data()[g * geo.cout_g * k..(g + 1) * geo.cout_g * k];
            let os = &mut out[(b * cout + g * geo.cout_g) * hw_out..(b * cout + (g + 1) * geo.cout_g) * hw_out];
            let rhs = if geo.pointwise() {
                xs
            } else {
                geo.im2col(xs, &mut cols);
                &cols
            };
            gemm(MatRef::new(ws, geo.cout_g, k), MatRef::new(rhs, k, hw_out), os, false);
        }
        if let Some(bias) = bias {
            for co in 0..cout {
                let bv = bias.data()[co];
                for v in &mut out[(b * cout + co) * hw_out..(b * cout + co + 1) * hw_out] {
                    *v = *v + bv;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, geo.ho, geo.wo], out)
}

/// Gradients of a convolution with respect to input, weight and bias.
fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    opts: Conv2dOptions,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let geo = geometry(x.shape(), weight.shape(), opts);
    let (n, c, h, w) = x.dims4();
    let cout = weight.shape()[0];
    let hw_out = geo.ho * geo.wo;
    let k = geo.k();
    let mut dx = vec![T::zero(); x.numel()];
    let mut dw = vec![T::zero(); weight.numel()];
    let mut db = vec![T::zero(); cout];
    let mut cols = vec![T::zero(); k * hw_out];
    let mut dcols = vec![T::zero(); k * hw_out];
    for b in 0..n {
        for g in 0..opts.groups {
            let xs = &x.data()[(b * c + g * geo.cin_g) * h * w..(b * c + (g + 1) * geo.cin_g) * h * w];
            let ws = &weight.data()[g * geo.cout_g * k..(g + 1) * geo.cout_g * k];
            let gs = &grad.data()[(b * cout + g * geo.cout_g) * hw_out..(b * cout + (g + 1) * geo.cout_g) * hw_out];
            let dws = &mut dw[g * geo.cout_g * k..(g + 1) * geo.cout_g * k];
            let dxs = &mut dx[(b * c + g * geo.cin_g) * h * w..(b * c + (g + 1) * geo.cin_g) * h * w];
            if geo.pointwise() {
                gemm(MatRef::new(gs, geo.cout_g, hw_out), MatRef::t(xs, hw_out, k), dws, true);
                gemm(MatRef::t(ws, k, geo.cout_g), MatRef::new(gs, geo.cout_g, hw_out), dxs, true);
            } else {
                geo.im2col(xs, &mut cols);
                gemm(MatRef::new(gs, geo.cout_g, hw_out), MatRef::t(&cols, hw_out, k), dws, true);
                gemm(MatRef::t(ws, k, geo.cout_g), MatRef::new(gs, geo.cout_g, hw_out), &mut dcols, false);
                geo.col2im(&dcols, dxs);
            }
        }
        for (co, acc) in db.iter_mut().enumerate() {
            let s: T = grad.data()[(b * cout + co) * hw_out..(b * cout + co + 1) * hw_out].iter().copied().sum();
            *acc = *acc + s;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx),
        Tensor::new(weight.shape().to_vec(), dw),
        Tensor::new(vec![cout], db),
    )
}

impl<'g, T: Real> Var<'g, T> {
    /// Cross-correlation with weight `[out, in/groups, kh, kw]` and optional bias `[out]`.
    pub fn conv2d(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>, opts: Conv2dOptions) -> Var<'g, T> {
        let value = conv2d_forward(&self.value, &weight.value, bias.map(|b| &*b.value), opts);
        let (x, w) = (self.rc(), weight.rc());
        let has_bias = bias.is_some();
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.graph.op(value, &parents, move |g| {
            let (dx, dw, db) = conv2d_backward(&x, &w, g, opts);
            let mut out = vec![Some(dx), Some(dw)];
            if has_bias {
                out.push(Some(db));
            }
            out
        })
    }
}
