//! Real 2-D discrete Fourier transforms over the spatial axes of NCHW tensors.
//!
//! Forward transforms are unnormalized; the inverse carries the `1/(H*W)`
//! factor. Real-input spectra keep the half-plane `H x (W/2 + 1)`.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Planned row and column transforms for one `h x w` plane size.
pub struct Plane2d<T: Real> {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<T>>,
    row_inv: Arc<dyn Fft<T>>,
    col_fwd: Arc<dyn Fft<T>>,
    col_inv: Arc<dyn Fft<T>>,
}

impl<T: Real> Plane2d<T> {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            row_inv: planner.plan_fft_inverse(w),
            col_fwd: planner.plan_fft_forward(h),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    /// Unnormalized full complex 2-D transform of a row-major `h x w` buffer.
    pub fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let (h, w) = (self.h, self.w);
        let (row, col) = if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        row.process(buf);
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }

    fn half(&self) -> usize {
        self.w / 2 + 1
    }

    /// Multiplicity of a half-spectrum column in the Hermitian-symmetric full spectrum.
    fn column_weight(&self, kw: usize) -> T {
        if kw == 0 || (self.w.is_multiple_of(2) && kw == self.w / 2) {
            T::one()
        } else {
            T::lit(2.0)
        }
    }

    /// Forward real transform of one plane into half-spectrum parts.
    pub fn rfft(&self, x: &[T], re: &mut [T], im: &mut [T]) {
        let (h, w, wh) = (self.h, self.w, self.half());
        let mut buf: Vec<Complex<T>> = x.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, false);
        for y in 0..h {
            for k in 0..wh {
                re[y * wh + k] = buf[y * w + k].re;
                im[y * wh + k] = buf[y * w + k].im;
            }
        }
    }

    /// Adjoint of [`Plane2d::rfft`]: `Re(sum_k G_k e^{+i phi})` over the half bins.
    fn rfft_adjoint(&self, gre: Option<&[T]>, gim: Option<&[T]>, out: &mut [T]) {
        let (h, w, wh) = (self.h, self.w, self.half());
        let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
        for y in 0..h {
            for k in 0..wh {
                let r = gre.map_or(T::zero(), |g| g[y * wh + k]);
                let i = gim.map_or(T::zero(), |g| g[y * wh + k]);
                buf[y * w + k] = Complex::new(r, i);
            }
        }
        self.transform(&mut buf, true);
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re;
        }
    }

    /// Inverse real transform from half-spectrum parts. Columns 0 and `W/2`
    /// contribute only through the real part of their row transform.
    pub fn irfft(&self, re: &[T], im: &[T], out: &mut [T]) {
        let (h, w, wh) = (self.h, self.w, self.half());
        // complex inverse over columns of the half spectrum
        let mut cols = vec![Complex::new(T::zero(), T::zero()); h * wh];
        let mut column = vec![Complex::new(T::zero(), T::zero()); h];
        for k in 0..wh {
            for y in 0..h {
                column[y] = Complex::new(re[y * wh + k], im[y * wh + k]);
            }
            self.col_inv.process(&mut column);
            for y in 0..h {
                cols[y * wh + k] = column[y];
            }
        }
        let mut row = vec![Complex::new(T::zero(), T::zero()); w];
        let norm = T::one() / T::lit((h * w) as f64);
        for y in 0..h {
            let half = &cols[y * wh..(y + 1) * wh];
            row.fill(Complex::new(T::zero(), T::zero()));
            for k in 0..wh {
                let v = half[k];
                if self.column_weight(k) == T::one() {
                    row[k] = Complex::new(v.re, T::zero());
                } else {
                    row[k] = v;
                    row[w - k] = v.conj();
                }
            }
            self.row_inv.process(&mut row);
            for x in 0..w {
                out[y * w + x] = row[x].re * norm;
            }
        }
    }

    /// Adjoint of [`Plane2d::irfft`]: `(c_k / HW) * DFT(g)_k` on the half bins.
    fn irfft_adjoint(&self, g: &[T], gre: &mut [T], gim: &mut [T]) {
        let (h, w, wh) = (self.h, self.w, self.half());
        let mut buf: Vec<Complex<T>> = g.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.transform(&mut buf, false);
        let norm = T::one() / T::lit((h * w) as f64);
        for y in 0..h {
            for k in 0..wh {
                let c = self.column_weight(k) * norm;
                gre[y * wh + k] = buf[y * w + k].re * c;
                gim[y * wh + k] = buf[y * w + k].im * c;
            }
        }
    }
}

/// Half-spectrum `(re, im)` of every plane of an NCHW tensor.
pub fn rfft2_tensor<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = x.dims4();
    let plan = Plane2d::new(h, w);
    let wh = w / 2 + 1;
    let mut re = vec![T::zero(); n * c * h * wh];
    let mut im = vec![T::zero(); n * c * h * wh];
    for p in 0..n * c {
        plan.rfft(
            &x.data()[p * h * w..(p + 1) * h * w],
            &mut re[p * h * wh..(p + 1) * h * wh],
            &mut im[p * h * wh..(p + 1) * h * wh],
        );
    }
    (Tensor::new(vec![n, c, h, wh], re), Tensor::new(vec![n, c, h, wh], im))
}

/// Inverse of [`rfft2_tensor`] onto an `out_w`-wide real grid.
pub fn irfft2_tensor<T: Real>(re: &Tensor<T>, im: &Tensor<T>, out_w: usize) -> Tensor<T> {
    let (n, c, h, wh) = re.dims4();
    assert_eq!(re.shape(), im.shape(), "spectrum parts differ in shape");
    assert_eq!(out_w / 2 + 1, wh, "output width {out_w} inconsistent with {wh} spectrum columns");
    let plan = Plane2d::new(h, out_w);
    let mut out = vec![T::zero(); n * c * h * out_w];
    for p in 0..n * c {
        plan.irfft(
            &re.data()[p * h * wh..(p + 1) * h * wh],
            &im.data()[p * h * wh..(p + 1) * h * wh],
            &mut out[p * h * out_w..(p + 1) * h * out_w],
        );
    }
    Tensor::new(vec![n, c, h, out_w], out)
}

impl<'g, T: Real> Var<'g, T> {
    /// Real and imaginary parts of the unnormalized real-input 2-D transform,
    /// each `[n, c, h, w/2 + 1]`.
    pub fn rfft2(&self) -> (Var<'g, T>, Var<'g, T>) {
        let (n, c, h, w) = self.dims4();
        let (re, im) = rfft2_tensor(&self.value);
        let wh = w / 2 + 1;
        let adjoint = move |g: &Tensor<T>, real_part: bool| {
            let plan = Plane2d::new(h, w);
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let gs = &g.data()[p * h * wh..(p + 1) * h * wh];
                let (gre, gim) = if real_part { (Some(gs), None) } else { (None, Some(gs)) };
                plan.rfft_adjoint(gre, gim, &mut dx[p * h * w..(p + 1) * h * w]);
            }
            Tensor::new(vec![n, c, h, w], dx)
        };
        let re = self.graph.op(re, &[self], move |g| vec![Some(adjoint(g, true))]);
        let im = self.graph.op(im, &[self], move |g| vec![Some(adjoint(g, false))]);
        (re, im)
    }

    /// Inverse of [`Var::rfft2`] applied to `(self, imag)`, producing `out_w` columns.
    pub fn irfft2(&self, imag: &Var<'g, T>, out_w: usize) -> Var<'g, T> {
        let value = irfft2_tensor(&self.value, &imag.value, out_w);
        let (n, c, h, wh) = self.dims4();
        self.graph.op(value, &[self, imag], move |g| {
            let plan = Plane2d::new(h, out_w);
            let mut gre = vec![T::zero(); n * c * h * wh];
            let mut gim = vec![T::zero(); n * c * h * wh];
            for p in 0..n * c {
                plan.irfft_adjoint(
                    &g.data()[p * h * out_w..(p + 1) * h * out_w],
                    &mut gre[p * h * wh..(p + 1) * h * wh],
                    &mut gim[p * h * wh..(p + 1) * h * wh],
                );
            }
            vec![Some(Tensor::new(vec![n, c, h, wh], gre)), Some(Tensor::new(vec![n, c, h, wh], gim))]
        })
    }
}
