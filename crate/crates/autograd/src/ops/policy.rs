//! Hard categorical assignment with a straight-through softmax gradient.

use crate::graph::Var;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Gradient carried by [`Var::straight_through_onehot`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentGradient {
    /// Backpropagate through `softmax(logits / tau + noise)` as if the forward were soft.
    StraightThrough,
    /// Exact derivative of the hard forward, which is zero almost everywhere.
    Exact,
}

impl<'g, T: Real> Var<'g, T> {
    /// Row-wise one-hot of `argmax(logits / tau + noise)` over the last axis, a
    /// draw from `softmax(logits / tau)` when `noise` is standard Gumbel.
    /// Ties resolve to the lowest index. Returns the one-hot tensor and the
    /// chosen index per row (`[rows]` flattened over leading axes).
    pub fn straight_through_onehot(
        &self,
        noise: Option<&Tensor<T>>,
        tau: T,
        gradient: AssignmentGradient,
    ) -> (Var<'g, T>, Vec<usize>) {
        let shape = self.shape().to_vec();
        let classes = *shape.last().expect("logits need a class axis");
        assert!(classes >= 2, "need at least two classes");
        if let Some(nz) = noise {
            assert_eq!(nz.shape(), &shape[..], "noise shape must match logits");
        }
        let rows = self.value.numel() / classes;
        let logits = self.value.data();
        let mut z = vec![T::zero(); logits.len()];
        for (i, v) in z.iter_mut().enumerate() {
            let nv = noise.map_or(T::zero(), |nz| nz.data()[i]);
            *v = logits[i] / tau + nv;
        }
        let mut hard = vec![T::zero(); logits.len()];
        let mut chosen = Vec::with_capacity(rows);
        for r in 0..rows {
            let zr = &z[r * classes..(r + 1) * classes];
            let mut best = 0;
            for k in 1..classes {
                if zr[k] > zr[best] {
                    best = k;
                }
            }
            hard[r * classes + best] = T::one();
            chosen.push(best);
        }
        let value = Tensor::new(shape.clone(), hard);
        let onehot = self.graph.op(value, &[self], move |g| {
            if gradient == AssignmentGradient::Exact {
                return vec![None];
            }
            let gd = g.data();
            let mut out = vec![T::zero(); gd.len()];
            for r in 0..rows {
                let zr = &z[r * classes..(r + 1) * classes];
                let m = zr.iter().copied().fold(T::neg_infinity(), T::max);
                let e: Vec<T> = zr.iter().map(|&v| (v - m).exp()).collect();
                let total: T = e.iter().copied().sum();
                let gr = &gd[r * classes..(r + 1) * classes];
                let dot: T = e.iter().zip(gr).map(|(&p, &gv)| p / total * gv).sum();
                for k in 0..classes {
                    let p = e[k] / total;
                    out[r * classes + k] = p * (gr[k] - dot) / tau;
                }
            }
            vec![Some(Tensor::new(g.shape().to_vec(), out))]
        });
        (onehot, chosen)
    }
}
