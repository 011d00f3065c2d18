//! Pointwise unary maps and broadcasting binary arithmetic.

use std::rc::Rc;

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Right-aligned numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside the broadcast shape `out` (0 on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visit every element of `out` with the flat offsets of both operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        // advance the outer multi-index
        let mut d = rank - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * idx[d];
            ob -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// Sum `grad` (broadcast shape) back down to `shape`.
pub fn sum_to_shape<T: Real>(grad: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let out = grad.shape().to_vec();
    let st = broadcast_strides(shape, &out);
    let zero = vec![0; out.len()];
    let mut acc = Tensor::zeros(shape.to_vec());
    let g = grad.data();
    let a = acc.data_mut();
    for_each_broadcast(&out, &st, &zero, |o, t, _| a[t] = a[t] + g[o]);
    acc
}

fn zip_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape())
    });
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut res = vec![T::zero(); out.iter().product()];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out, &sa, &sb, |o, i, j| res[o] = f(ad[i], bd[j]));
    Tensor::new(out, res)
}

impl<'g, T: Real> Var<'g, T> {
    /// Pointwise map with derivative `deriv(x, y)` where `y = f(x)`.
    pub fn map_pointwise(
        &self,
        f: impl Fn(T) -> T,
        deriv: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let out = Rc::new(self.value.map(f));
        let x = self.rc();
        let y = Rc::clone(&out);
        self.graph.op(out, &[self], move |g| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((&gv, &xv), &yv)| gv * deriv(xv, yv))
                .collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data))]
        })
    }

    pub fn neg(&self) -> Var<'g, T> {
        self.map_pointwise(|x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Var<'g, T> {
        self.map_pointwise(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Var<'g, T> {
        self.map_pointwise(move |x| x + c, |_, _| T::one())
    }

    pub fn square(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x * x, |x, _| x + x)
    }

    pub fn sqrt(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x.sqrt(), |_, y| T::lit(0.5) / y)
    }

    pub fn exp(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x.exp(), |_, y| y)
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&self) -> Var<'g, T> {
        self.map_pointwise(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self) -> Var<'g, T> {
        self.map_pointwise(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Var<'g, T> {
        self.map_pointwise(
            move |x| if x >= T::zero() { x } else { x * slope },
            move |x, _| if x >= T::zero() { T::one() } else { slope },
        )
    }

    pub fn tanh(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        self.map_pointwise(sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Var<'g, T> {
        self.map_pointwise(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&self) -> Var<'g, T> {
        self.map_pointwise(softplus, |x, _| sigmoid(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'g, T> {
        self.map_pointwise(gelu, gelu_deriv)
    }

    pub fn cos(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x.cos(), |x, _| -x.sin())
    }

    pub fn sin(&self) -> Var<'g, T> {
        self.map_pointwise(|x| x.sin(), |x, _| x.cos())
    }

    fn binary(
        &self,
        other: &Var<'g, T>,
        f: impl Fn(T, T) -> T,
        grads: impl Fn(&Tensor<T>, &Tensor<T>, &Tensor<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>)
            + 'static,
    ) -> Var<'g, T> {
        let value = zip_broadcast(&self.value, &other.value, f);
        let (a, b) = (self.rc(), other.rc());
        self.graph.op(value, &[self, other], move |g| {
            let (ga, gb) = grads(g, &a, &b);
            vec![
                ga.map(|t| sum_to_shape(&t, a.shape())),
                gb.map(|t| sum_to_shape(&t, b.shape())),
            ]
        })
    }

    pub fn add(&self, other: &Var<'g, T>) -> Var<'g, T> {
        self.binary(other, |a, b| a + b, |g, _, _| (Some(g.clone()), Some(g.clone())))
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Var<'g, T> {
        self.binary(
            other,
            |a, b| a - b,
            |g, _, _| (Some(g.clone()), Some(g.map(|v| -v))),
        )
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Var<'g, T> {
        self.binary(
            other,
            |a, b| a * b,
            |g, a, b| (Some(zip_broadcast(g, b, |x, y| x * y)), Some(zip_broadcast(g, a, |x, y| x * y))),
        )
    }

    pub fn div(&self, other: &Var<'g, T>) -> Var<'g, T> {
        self.binary(
            other,
            |a, b| a / b,
            |g, a, b| {
                let ga = zip_broadcast(g, b, |x, y| x / y);
                // d(a/b)/db = -a/b^2
                let ratio = zip_broadcast(a, b, |x, y| x / (y * y));
                let gb = zip_broadcast(g, &ratio, |x, r| -x * r);
                (Some(ga), Some(gb))
            },
        )
    }

    /// `atan2(self, x)` with `self` as the imaginary part. Derivatives at the
    /// origin are taken as 0.
    pub fn atan2(&self, x: &Var<'g, T>) -> Var<'g, T> {
        assert_eq!(self.shape(), x.shape(), "atan2 shape mismatch");
        self.binary(
            x,
            |y, x| y.atan2(x),
            |g, y, x| {
                let r2 = y.zip_map(x, |a, b| a * a + b * b);
                let gy = Tensor::from_fn(g.shape().to_vec(), |i| {
                    let r = r2.data()[i];
                    if r > T::zero() { g.data()[i] * x.data()[i] / r } else { T::zero() }
                });
                let gx = Tensor::from_fn(g.shape().to_vec(), |i| {
                    let r = r2.data()[i];
                    if r > T::zero() { -g.data()[i] * y.data()[i] / r } else { T::zero() }
                });
                (Some(gy), Some(gx))
            },
        )
    }

    /// `sqrt(self^2 + other^2)`; derivative at the origin taken as 0.
    pub fn hypot(&self, other: &Var<'g, T>) -> Var<'g, T> {
        assert_eq!(self.shape(), other.shape(), "hypot shape mismatch");
        let value = self.value.zip_map(&other.value, |a, b| (a * a + b * b).sqrt());
        let out = Rc::new(value);
        let (a, b) = (self.rc(), other.rc());
        self.graph.op(Rc::clone(&out), &[self, other], move |g| {
            let n = g.numel();
            let mut ga = vec![T::zero(); n];
            let mut gb = vec![T::zero(); n];
            for i in 0..n {
                let r = out.data()[i];
                if r > T::zero() {
                    ga[i] = g.data()[i] * a.data()[i] / r;
                    gb[i] = g.data()[i] * b.data()[i] / r;
                }
            }
            vec![
                Some(Tensor::new(g.shape().to_vec(), ga)),
                Some(Tensor::new(g.shape().to_vec(), gb)),
            ]
        })
    }

    pub fn sum(&self) -> Var<'g, T> {
        let shape = self.shape().to_vec();
        self.graph.op(Tensor::scalar(self.value.sum()), &[self], move |g| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self) -> Var<'g, T> {
        let n = T::lit(self.value.numel() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Reinterpret the shape; element order unchanged.
    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Var<'g, T> {
        let old = self.shape().to_vec();
        let value = (*self.value).clone().reshape(shape);
        self.graph.op(value, &[self], move |g| vec![Some(g.clone().reshape(old.clone()))])
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn gelu<T: Real>(x: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_deriv<T: Real>(x: T, _y: T) -> T {
    let k = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let c = T::lit(0.044715);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + T::lit(3.0) * c * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}
