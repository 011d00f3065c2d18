//! Named parameter storage and the per-forward binding context.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use retinexdual_autograd::{AssignmentGradient, Gradients, Graph, Real, Tensor, Var};

/// Hierarchically named parameters (`samba.enc0.rdb.conv0.weight`, ...).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    /// Overwrite an existing parameter's values. Panics if absent or reshaped.
    pub fn set(&mut self, name: &str, value: Tensor<T>) {
        let slot = self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        assert_eq!(slot.shape(), value.shape(), "shape change for {name}");
        *slot = value;
    }

    /// Zero every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Scalar count of parameters under `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.as_str() == prefix || n.starts_with(&format!("{prefix}.")))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Names and shapes, for structural comparison.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }
}

/// Parameter initialization helpers on a seeded generator.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn fan_in_uniform<T: Real>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Tensor::from_fn(shape.to_vec(), |_| T::lit(self.rng.random_range(-bound..bound)))
    }

    pub fn normal<T: Real>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::from_fn(shape.to_vec(), |_| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            T::lit(z * std)
        })
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Whether a forward pass samples its routing policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Binds stored parameters into one graph and carries per-pass state.
pub struct Ctx<'g, T: Real> {
    graph: &'g Graph<T>,
    store: &'g ParamStore<T>,
    bound: RefCell<HashMap<String, Var<'g, T>>>,
    mode: Mode,
    rng: RefCell<ChaCha8Rng>,
    assignment: AssignmentGradient,
}

impl<'g, T: Real> Ctx<'g, T> {
    /// Evaluation context: deterministic policy.
    pub fn eval(graph: &'g Graph<T>, store: &'g ParamStore<T>) -> Self {
        Self::new(graph, store, Mode::Eval, 0)
    }

    /// Training context: policy noise drawn from `seed`.
    pub fn train(graph: &'g Graph<T>, store: &'g ParamStore<T>, seed: u64) -> Self {
        Self::new(graph, store, Mode::Train, seed)
    }

    pub fn new(graph: &'g Graph<T>, store: &'g ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(HashMap::new()),
            mode,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            assignment: AssignmentGradient::StraightThrough,
        }
    }

    /// Choose the gradient carried through hard policy assignments.
    pub fn with_assignment_gradient(mut self, gradient: AssignmentGradient) -> Self {
        self.assignment = gradient;
        self
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn assignment_gradient(&self) -> AssignmentGradient {
        self.assignment
    }

    pub fn store(&self) -> &'g ParamStore<T> {
        self.store
    }

    /// The graph variable for a stored parameter; the same variable is
    /// returned for every use of a name within one pass.
    pub fn param(&self, name: &str) -> Var<'g, T> {
        if let Some(v) = self.bound.borrow().get(name) {
            return v.clone();
        }
        let value = self.store.get(name).unwrap_or_else(|| panic!("missing parameter {name}")).clone();
        let var = if self.graph.is_recording() { self.graph.leaf(value) } else { self.graph.constant(value) };
        self.bound.borrow_mut().insert(name.to_string(), var.clone());
        var
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'g, T> {
        self.graph.constant(value)
    }

    /// Standard Gumbel noise of the given shape.
    pub fn gumbel(&self, shape: &[usize]) -> Tensor<T> {
        let mut rng = self.rng.borrow_mut();
        Tensor::from_fn(shape.to_vec(), |_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            T::lit(-(-u.ln()).ln())
        })
    }

    /// Gradients of every parameter used in this pass.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.bound.borrow().iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect()
    }
}
