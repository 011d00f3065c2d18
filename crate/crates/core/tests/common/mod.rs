#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retinexdual_core::autograd::gradcheck::relative_error;
use retinexdual_core::autograd::{AssignmentGradient, Graph, Real, Tensor, Var};
use retinexdual_core::{Ctx, ModelConfig, ParamStore};

pub fn rand_tensor<T: Real>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(lo..hi)))
}

/// A deliberately narrow model configuration for gradient and algebra tests.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        decomposer_width: 4,
        level_widths: [4, 4, 6],
        gssb_per_samb: 1,
        state_dim: 3,
        groups: 3,
        embed_rank: 2,
        pos_grid: 4,
        ffn_expansion: 2,
        fia_width: 4,
        fia_blocks: 1,
        ..ModelConfig::desk()
    }
}

fn eval<'g, T: Real>(graph: &'g Graph<T>, store: &'g ParamStore<T>) -> Ctx<'g, T> {
    Ctx::eval(graph, store).with_assignment_gradient(AssignmentGradient::Exact)
}

/// Evaluate `f` on an inference graph.
pub fn value<T: Real>(
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    f: &impl for<'g> Fn(&Ctx<'g, T>, &[Var<'g, T>]) -> Var<'g, T>,
) -> f64 {
    let g = Graph::inference();
    let ctx = Ctx::eval(&g, store);
    let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    f(&ctx, &vars).value().item().to_f64_lossy()
}

/// Analytic gradients of `f` w.r.t. inputs (in order) and every stored parameter (name order).
pub fn analytic<T: Real>(
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    f: &impl for<'g> Fn(&Ctx<'g, T>, &[Var<'g, T>]) -> Var<'g, T>,
) -> Vec<Tensor<T>> {
    let g = Graph::new();
    let ctx = eval(&g, store);
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&ctx, &vars);
    let grads = g.backward(&out);
    let by_name = ctx.param_grads(&grads);
    let mut res: Vec<Tensor<T>> = vars.iter().map(|v| grads.wrt(v)).collect();
    for (name, t) in store.iter() {
        res.push(by_name.get(name).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())));
    }
    res
}

/// Central differences of `f` in `f64` over every input and parameter scalar.
pub fn numeric(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    eps: f64,
    f: &impl for<'g> Fn(&Ctx<'g, f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        let mut g = Tensor::zeros(xs[i].shape().to_vec());
        for j in 0..xs[i].numel() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = orig + eps;
            let up = value(store, &xs, f);
            xs[i].data_mut()[j] = orig - eps;
            let down = value(store, &xs, f);
            xs[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    let mut st = store.clone();
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = st.get(&name).unwrap().numel();
        let mut g = Tensor::zeros(st.get(&name).unwrap().shape().to_vec());
        for j in 0..n {
            let orig = st.get(&name).unwrap().data()[j];
            st.get_mut(&name).unwrap().data_mut()[j] = orig + eps;
            let up = value(&st, inputs, f);
            st.get_mut(&name).unwrap().data_mut()[j] = orig - eps;
            let down = value(&st, inputs, f);
            st.get_mut(&name).unwrap().data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// Relative error between analytic gradients in `T` and `f64` central differences,
/// over inputs and all parameters.
pub fn full_check<T: Real>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: impl for<'g> Fn(&Ctx<'g, T>, &[Var<'g, T>]) -> Var<'g, T>,
    f64f: impl for<'g> Fn(&Ctx<'g, f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> f64 {
    let st: ParamStore<T> = store.cast();
    let xs: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast()).collect();
    let a = analytic(&st, &xs, &f);
    let n = numeric(store, inputs, 1e-6, &f64f);
    relative_error(&a, &n)
}

/// Directional derivative check along a random direction restricted to
/// parameters whose name starts with `prefix`.
pub fn directional_check<T: Real>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    prefix: &str,
    seed: u64,
    f: impl for<'g> Fn(&Ctx<'g, T>, &[Var<'g, T>]) -> Var<'g, T>,
    f64f: impl for<'g> Fn(&Ctx<'g, f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir: Vec<(String, Tensor<f64>)> = store
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, t)| (n.clone(), Tensor::from_fn(t.shape().to_vec(), |_| rng.random_range(-1.0..1.0))))
        .collect();
    assert!(!dir.is_empty(), "no parameters under {prefix}");
    let st: ParamStore<T> = store.cast();
    let xs: Vec<Tensor<T>> = inputs.iter().map(|t| t.cast()).collect();
    let a = analytic(&st, &xs, &f);
    let names: Vec<&String> = store.names().collect();
    let mut dot = 0.0;
    for (n, d) in &dir {
        let idx = inputs.len() + names.iter().position(|m| *m == n).unwrap();
        dot += a[idx].data().iter().zip(d.data()).map(|(g, v)| g.to_f64_lossy() * v).sum::<f64>();
    }
    let eps = 1e-6;
    let shifted = |sign: f64| {
        let mut s = store.clone();
        for (n, d) in &dir {
            let t = s.get_mut(n).unwrap();
            for (p, v) in t.data_mut().iter_mut().zip(d.data()) {
                *p += sign * eps * v;
            }
        }
        value(&s, inputs, &f64f)
    };
    let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
    let denom = dot.abs().max(fd.abs());
    if denom == 0.0 {
        0.0
    } else {
        (dot - fd).abs() / denom
    }
}

/// Contract an output with a fixed random tensor so every element matters.
pub fn probe<'g, T: Real>(v: &Var<'g, T>, seed: u64) -> Var<'g, T> {
    let w = v.graph().constant(rand_tensor(v.shape(), seed, -1.0, 1.0));
    v.mul(&w).sum()
}

/// `full_check` with one closure body instantiated for both precisions.
#[macro_export]
macro_rules! grad_check {
    ($t:ty, $store:expr, $inputs:expr, $f:expr) => {
        common::full_check::<$t>($store, $inputs, $f, $f)
    };
}

/// `directional_check` with one closure body instantiated for both precisions.
#[macro_export]
macro_rules! dir_check {
    ($t:ty, $store:expr, $inputs:expr, $prefix:expr, $seed:expr, $f:expr) => {
        common::directional_check::<$t>($store, $inputs, $prefix, $seed, $f, $f)
    };
}
