//! Matrix products, token layout conversion and row permutation.

use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::{gemm, MatRef, Real};
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    /// `[.., m, k] x [k, n] -> [.., m, n]` (shared right operand) or
    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn matmul(&self, rhs: &Var<'g, T>) -> Var<'g, T> {
        let (ls, rs) = (self.shape().to_vec(), rhs.shape().to_vec());
        assert!(ls.len() >= 2, "matmul lhs must be at least 2-D");
        let k = ls[ls.len() - 1];
        let m = ls[ls.len() - 2];
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let shared = rs.len() == 2;
        if !shared {
            assert_eq!(rs.len(), ls.len(), "batched matmul rank mismatch");
            assert_eq!(&rs[..rs.len() - 2], &ls[..ls.len() - 2], "batched matmul batch mismatch");
        }
        assert_eq!(rs[rs.len() - 2], k, "matmul inner dimension mismatch: {ls:?} x {rs:?}");
        let n = rs[rs.len() - 1];
        let mut out_shape = ls.clone();
        *out_shape.last_mut().unwrap() = n;

        let a = self.rc();
        let b = rhs.rc();
        let mut out = vec![T::zero(); batch * m * n];
        if shared {
            gemm(MatRef::new(a.data(), batch * m, k), MatRef::new(b.data(), k, n), &mut out, false);
        } else {
            for i in 0..batch {
                gemm(
                    MatRef::new(&a.data()[i * m * k..(i + 1) * m * k], m, k),
                    MatRef::new(&b.data()[i * k * n..(i + 1) * k * n], k, n),
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        self.graph.op(Tensor::new(out_shape, out), &[self, rhs], move |g| {
            let gd = g.data();
            let mut da = vec![T::zero(); a.numel()];
            let mut db = vec![T::zero(); b.numel()];
            if shared {
                gemm(MatRef::new(gd, batch * m, n), MatRef::t(b.data(), n, k), &mut da, false);
                gemm(MatRef::t(a.data(), k, batch * m), MatRef::new(gd, batch * m, n), &mut db, false);
            } else {
                for i in 0..batch {
                    let gs = &gd[i * m * n..(i + 1) * m * n];
                    gemm(MatRef::new(gs, m, n), MatRef::t(&b.data()[i * k * n..(i + 1) * k * n], n, k), &mut da[i * m * k..(i + 1) * m * k], false);
                    gemm(MatRef::t(&a.data()[i * m * k..(i + 1) * m * k], k, m), MatRef::new(gs, m, n), &mut db[i * k * n..(i + 1) * k * n], false);
                }
            }
            vec![Some(Tensor::new(a.shape().to_vec(), da)), Some(Tensor::new(b.shape().to_vec(), db))]
        })
    }

    /// `x W + b` over the last axis with `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, weight: &Var<'g, T>, bias: Option<&Var<'g, T>>) -> Var<'g, T> {
        let y = self.matmul(weight);
        match bias {
            Some(b) => y.add(b),
            None => y,
        }
    }

    /// `[n, c, h, w] -> [n, h*w, c]` (raster-ordered tokens).
    pub fn to_tokens(&self) -> Var<'g, T> {
        let (n, c, h, w) = self.dims4();
        let l = h * w;
        let value = transpose_last2(&self.value, n, c, l);
        self.graph.op(Tensor::new(vec![n, l, c], value), &[self], move |g| {
            vec![Some(Tensor::new(vec![n, c, h, w], transpose_last2(g, n, l, c)))]
        })
    }

    /// `[n, h*w, c] -> [n, c, h, w]`.
    pub fn from_tokens(&self, h: usize, w: usize) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 3, "from_tokens expects [n, l, c]");
        let (n, l, c) = (s[0], s[1], s[2]);
        assert_eq!(l, h * w, "token count does not match {h}x{w}");
        let value = transpose_last2(&self.value, n, l, c);
        self.graph.op(Tensor::new(vec![n, c, h, w], value), &[self], move |g| {
            vec![Some(Tensor::new(vec![n, l, c], transpose_last2(g, n, c, l)))]
        })
    }

    /// Reorder rows of `[n, l, c]`: `out[b, i] = x[b, order[b][i]]`.
    pub fn gather_rows(&self, order: Rc<Vec<Vec<usize>>>) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 3, "gather_rows expects [n, l, c]");
        let (n, l, c) = (s[0], s[1], s[2]);
        assert_eq!(order.len(), n, "one ordering per batch element");
        let src = self.value.data();
        let mut out = Vec::with_capacity(n * l * c);
        for (b, ord) in order.iter().enumerate() {
            assert_eq!(ord.len(), l, "ordering length mismatch");
            for &r in ord {
                out.extend_from_slice(&src[(b * l + r) * c..(b * l + r + 1) * c]);
            }
        }
        self.graph.op(Tensor::new(vec![n, l, c], out), &[self], move |g| {
            let mut dx = vec![T::zero(); n * l * c];
            for (b, ord) in order.iter().enumerate() {
                for (i, &r) in ord.iter().enumerate() {
                    let dst = &mut dx[(b * l + r) * c..(b * l + r + 1) * c];
                    for (d, &v) in dst.iter_mut().zip(&g.data()[(b * l + i) * c..(b * l + i + 1) * c]) {
                        *d = *d + v;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, l, c], dx))]
        })
    }
}

/// Per-batch transpose of `[n, rows, cols]` into `[n, cols, rows]` (flat data).
fn transpose_last2<T: Real>(x: &Tensor<T>, n: usize, rows: usize, cols: usize) -> Vec<T> {
    let src = x.data();
    let mut out = vec![T::zero(); n * rows * cols];
    for b in 0..n {
        let s = &src[b * rows * cols..(b + 1) * rows * cols];
        let d = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for q in 0..cols {
                d[q * rows + r] = s[r * cols + q];
            }
        }
    }
    out
}
