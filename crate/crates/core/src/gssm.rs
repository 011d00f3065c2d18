//! Group state-space token mixing.
//!
//! Tokens are routed to one of `T` groups by a hard categorical policy,
//! scanned in group-major order by a selective state-space recurrence whose
//! output projection is offset by a per-token embedding, then restored to
//! raster order.

use std::rc::Rc;

use retinexdual_autograd::{Real, Tensor, Var};

use crate::error::Result;
use crate::layers::{ChannelScale, Conv, LayerNorm, Linear};
use crate::params::{Ctx, Init, Mode, ParamStore};

/// Name of the embedding factor shared by every mixer in a model.
pub const GLOBAL_EMBEDDING: &str = "global_embedding";

/// A scan permutation and its inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanOrder {
    pub permutation: Vec<usize>,
    pub inverse: Vec<usize>,
}

impl ScanOrder {
    /// Stable sort of token positions by assigned group.
    pub fn from_assignment(groups: &[usize]) -> Self {
        let mut permutation: Vec<usize> = (0..groups.len()).collect();
        permutation.sort_by_key(|&i| groups[i]);
        let mut inverse = vec![0; groups.len()];
        for (pos, &src) in permutation.iter().enumerate() {
            inverse[src] = pos;
        }
        Self { permutation, inverse }
    }

    pub fn unfold<V: Clone>(&self, items: &[V]) -> Vec<V> {
        self.permutation.iter().map(|&i| items[i].clone()).collect()
    }

    pub fn fold<V: Clone>(&self, items: &[V]) -> Vec<V> {
        self.inverse.iter().map(|&i| items[i].clone()).collect()
    }
}

/// `E = Y (E_l E_g)`: one embedding row per token.
pub fn build_embedding<'g, T: Real>(onehot: &Var<'g, T>, local: &Var<'g, T>, global: &Var<'g, T>) -> Var<'g, T> {
    onehot.matmul(&local.matmul(global))
}

/// Attentive scan: `h_t = exp(Δ_t A) h_{t-1} + Δ_t B_t x_t`, `y_t = (C_t + E_t) h_t + D x_t`.
///
/// Shapes: `x, delta: [n, l, d]`, `a: [d, s]`, `b, c, e: [n, l, s]`, `dskip: [d]`.
pub fn ase_scan<'g, T: Real>(
    x: &Var<'g, T>,
    delta: &Var<'g, T>,
    a: &Var<'g, T>,
    b: &Var<'g, T>,
    c: &Var<'g, T>,
    e: &Var<'g, T>,
    dskip: &Var<'g, T>,
) -> Result<Var<'g, T>> {
    Ok(x.selective_scan(delta, a, b, &c.add(e), dskip)?)
}

/// Global scan ordering for a batch: per-element `ScanOrder` from flattened assignments.
fn batch_orders(chosen: &[usize], n: usize) -> Vec<ScanOrder> {
    let l = chosen.len() / n;
    (0..n).map(|b| ScanOrder::from_assignment(&chosen[b * l..(b + 1) * l])).collect()
}

/// The state-space module operating on `dim` channels.
#[derive(Clone, Debug)]
pub struct Gssm {
    pub prefix: String,
    pub dim: usize,
    pub state_dim: usize,
    pub groups: usize,
    pub rank: usize,
    pub pos_grid: usize,
    pub temperature: f64,
    pub in_proj: Linear,
    pub route: Linear,
    pub dt_proj: Linear,
    pub b_proj: Linear,
    pub c_proj: Linear,
    pub out_proj: Linear,
}

/// Intermediate routing state exposed for inspection.
pub struct GssmTrace<'g, T: Real> {
    pub output: Var<'g, T>,
    pub onehot: Var<'g, T>,
    pub orders: Vec<ScanOrder>,
}

impl Gssm {
    pub fn new(prefix: &str, dim: usize, state_dim: usize, groups: usize, rank: usize, pos_grid: usize, temperature: f64) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            prefix: prefix.to_string(),
            dim,
            state_dim,
            groups,
            rank,
            pos_grid,
            temperature,
            in_proj: Linear::new(p("in_proj"), dim, dim),
            route: Linear::new(p("route"), dim, groups),
            dt_proj: Linear::new(p("dt_proj"), dim, dim).without_bias(),
            b_proj: Linear::new(p("b_proj"), dim, state_dim).without_bias(),
            c_proj: Linear::new(p("c_proj"), dim, state_dim).without_bias(),
            out_proj: Linear::new(p("out_proj"), dim, dim),
        }
    }

    fn name(&self, s: &str) -> String {
        format!("{}.{s}", self.prefix)
    }

    pub fn pos_name(&self) -> String {
        self.name("pos_embed")
    }

    pub fn local_embedding_name(&self) -> String {
        self.name("local_embedding")
    }

    /// Parameters owned by this module (the shared global factor excluded).
    pub fn param_count(&self) -> usize {
        let (d, s) = (self.dim, self.state_dim);
        self.in_proj.param_count()
            + self.route.param_count()
            + self.dt_proj.param_count()
            + self.b_proj.param_count()
            + self.c_proj.param_count()
            + self.out_proj.param_count()
            + d * self.pos_grid * self.pos_grid
            + self.groups * self.rank
            + d * s // a_log
            + d // delta_bias
            + d // d_skip
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for lin in [&self.in_proj, &self.route, &self.dt_proj, &self.b_proj, &self.c_proj, &self.out_proj] {
            lin.init(store, init);
        }
        let g = self.pos_grid;
        store.insert(self.pos_name(), init.normal(&[1, self.dim, g, g], 0.02));
        store.insert(self.local_embedding_name(), init.normal(&[self.groups, self.rank], 0.02));
        if store.get(GLOBAL_EMBEDDING).is_none() {
            store.insert(GLOBAL_EMBEDDING, init.normal(&[self.rank, self.state_dim], 0.02));
        }
        let s = self.state_dim;
        store.insert(self.name("a_log"), Tensor::from_fn([self.dim, s], |i| T::lit(((i % s) + 1) as f64).ln()));
        // softplus(bias) spread log-uniformly over [1e-3, 1e-1]
        let dt = Tensor::from_fn([self.dim], |_| {
            let u: f64 = rand::Rng::random(init.rng());
            let v = (1e-3f64.ln() + u * (1e-1f64.ln() - 1e-3f64.ln())).exp();
            T::lit(v + (-(-v).exp_m1()).ln())
        });
        store.insert(self.name("delta_bias"), dt);
        store.insert(self.name("d_skip"), Tensor::ones([self.dim]));
    }

    pub fn positional_encode<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let (_, _, h, w) = x.dims4();
        let mut pos = ctx.param(&self.pos_name());
        if (h, w) != (self.pos_grid, self.pos_grid) {
            pos = pos.resize_bilinear(h, w);
        }
        x.add(&pos)
    }

    /// Hard routing of raster tokens `[n, l, dim]` to groups: one-hot `[n, l, T]` and chosen indices.
    pub fn classify<'g, T: Real>(&self, ctx: &Ctx<'g, T>, tokens: &Var<'g, T>) -> (Var<'g, T>, Vec<usize>) {
        let logits = self.route.forward(ctx, tokens);
        let noise = (ctx.mode() == Mode::Train).then(|| ctx.gumbel(logits.shape()));
        logits.straight_through_onehot(noise.as_ref(), T::lit(self.temperature), ctx.assignment_gradient())
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward_traced(ctx, x)?.output)
    }

    pub fn forward_traced<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<GssmTrace<'g, T>> {
        let (n, _, h, w) = x.dims4();
        let tokens = self.positional_encode(ctx, x).to_tokens();
        let (onehot, chosen) = self.classify(ctx, &tokens);
        let e = build_embedding(&onehot, &ctx.param(&self.local_embedding_name()), &ctx.param(GLOBAL_EMBEDDING));
        let orders = batch_orders(&chosen, n);
        let fwd = Rc::new(orders.iter().map(|o| o.permutation.clone()).collect::<Vec<_>>());
        let inv = Rc::new(orders.iter().map(|o| o.inverse.clone()).collect::<Vec<_>>());

        let xs = self.in_proj.forward(ctx, &tokens).silu().gather_rows(fwd.clone());
        let es = e.gather_rows(fwd);
        let delta = self.dt_proj.forward(ctx, &xs).add(&ctx.param(&self.name("delta_bias"))).softplus();
        let b = self.b_proj.forward(ctx, &xs);
        let c = self.c_proj.forward(ctx, &xs);
        let a = ctx.param(&self.name("a_log")).exp().neg();
        let y = ase_scan(&xs, &delta, &a, &b, &c, &es, &ctx.param(&self.name("d_skip")))?;
        let output = self.out_proj.forward(ctx, &y.gather_rows(inv)).from_tokens(h, w);
        Ok(GssmTrace { output, onehot, orders })
    }
}

/// Convolutional feed-forward: expand, depthwise 3x3, GELU, contract.
#[derive(Clone, Debug)]
pub struct Ffn {
    pub expand: Conv,
    pub depthwise: Conv,
    pub contract: Conv,
}

impl Ffn {
    pub fn new(prefix: &str, dim: usize, expansion: usize) -> Self {
        let hidden = dim * expansion;
        Self {
            expand: Conv::new(format!("{prefix}.expand"), dim, hidden, 1),
            depthwise: Conv::new(format!("{prefix}.depthwise"), hidden, hidden, 3).groups(hidden),
            contract: Conv::new(format!("{prefix}.contract"), hidden, dim, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.expand.param_count() + self.depthwise.param_count() + self.contract.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.expand.init(store, init);
        self.depthwise.init(store, init);
        self.contract.init(store, init);
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let h = self.expand.forward(ctx, x);
        let h = self.depthwise.forward(ctx, &h).gelu();
        self.contract.forward(ctx, &h)
    }
}

/// `x̂ = GSSM(LN(x)) + s ⊙ x`, `x' = FFN(LN(x̂)) + s' ⊙ x̂`.
#[derive(Clone, Debug)]
pub struct Gssb {
    pub norm1: LayerNorm,
    pub gssm: Gssm,
    pub scale1: ChannelScale,
    pub norm2: LayerNorm,
    pub ffn: Ffn,
    pub scale2: ChannelScale,
}

impl Gssb {
    pub fn new(prefix: &str, dim: usize, cfg: &crate::config::ModelConfig) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            norm1: LayerNorm::new(p("norm1"), dim),
            gssm: Gssm::new(&p("gssm"), dim, cfg.state_dim, cfg.groups, cfg.embed_rank, cfg.pos_grid, cfg.policy_temperature),
            scale1: ChannelScale::new(p("scale1"), dim),
            norm2: LayerNorm::new(p("norm2"), dim),
            ffn: Ffn::new(&p("ffn"), dim, cfg.ffn_expansion),
            scale2: ChannelScale::new(p("scale2"), dim),
        }
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.gssm.param_count()
            + self.scale1.param_count()
            + self.norm2.param_count()
            + self.ffn.param_count()
            + self.scale2.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.norm1.init(store);
        self.gssm.init(store, init);
        self.scale1.init(store);
        self.norm2.init(store);
        self.ffn.init(store, init);
        self.scale2.init(store);
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let mixed = self.gssm.forward(ctx, &self.norm1.forward(ctx, x))?;
        let xh = mixed.add(&self.scale1.forward(ctx, x));
        let ff = self.ffn.forward(ctx, &self.norm2.forward(ctx, &xh));
        Ok(ff.add(&self.scale2.forward(ctx, &xh)))
    }
}
