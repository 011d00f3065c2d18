mod common;

use common::{probe, rand_tensor, tiny_model};
use retinexdual_core::autograd::{Graph, Tensor, Var};
use retinexdual_core::gssm::GLOBAL_EMBEDDING;
use retinexdual_core::params::Init;
use retinexdual_core::samba::{Rdb, Samb, Samba};
use retinexdual_core::{Ctx, Error, ModelConfig, ParamStore};

#[test]
fn rdb_with_zero_last_layer_is_identity() {
    let rdb = Rdb::new("r", 16);
    let mut st = ParamStore::<f64>::new();
    rdb.init(&mut st, &mut Init::new(1));
    st.zero_prefix("r.conv2");
    let g = Graph::inference();
    let x = g.constant(rand_tensor(&[1, 16, 32, 32], 2, -1.0, 1.0));
    let y = rdb.forward(&Ctx::eval(&g, &st), &x);
    assert_eq!(y.shape(), &[1, 16, 32, 32]);
    assert_eq!(y.value(), x.value());
}

#[test]
fn rdb_gradient() {
    let rdb = Rdb::new("r", 3);
    let mut st = ParamStore::<f64>::new();
    rdb.init(&mut st, &mut Init::new(3));
    let x = rand_tensor::<f64>(&[1, 3, 7, 7], 4, -1.0, 1.0);
    let err = grad_check!(f64, &st, &[x], |ctx, v| rdb.forward(ctx, &v[0]).sum());
    assert!(err < 1e-4, "{err}");
}

fn samb_setup(cfg: &ModelConfig, width: usize, seed: u64) -> (Samb, ParamStore<f64>) {
    let s = Samb::new("s", width, cfg);
    let mut st = ParamStore::new();
    s.init(&mut st, &mut Init::new(seed));
    if !st.names().any(|n| n == GLOBAL_EMBEDDING) && !s.mixers.is_empty() {
        st.insert(GLOBAL_EMBEDDING, Init::new(seed + 1).normal(&[cfg.embed_rank, cfg.state_dim], 0.5));
    }
    (s, st)
}

#[test]
fn multiscale_preserves_constants() {
    let (s, mut st) = samb_setup(&ModelConfig::desk(), 16, 5);
    for conv in &s.scale_convs {
        let w = conv.dirac(&Tensor::<f64>::zeros(conv.weight_shape().to_vec()), 16, 1.0);
        st.set(&conv.weight_name(), w);
        st.zero_prefix(&conv.bias_name());
    }
    let g = Graph::inference();
    let xs = g.constant(Tensor::full([1, 16, 64, 64], 0.37));
    let out = s.multiscale_expand(&Ctx::eval(&g, &st), &xs);
    assert_eq!(out.len(), 3);
    for o in out {
        assert_eq!(o.shape(), &[1, 16, 64, 64]);
        assert!(o.value().data().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }
}

#[test]
fn bilinear_checkerboard_oracle() {
    let g = Graph::<f64>::inference();
    let x = g.constant(Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let y = x.resize_bilinear(4, 4);
    let taps = [[1.0, 0.0], [0.75, 0.25], [0.25, 0.75], [0.0, 1.0]];
    for (yy, wy) in taps.iter().enumerate() {
        for (xx, wx) in taps.iter().enumerate() {
            let oracle = wy[0] * wx[0] + wy[1] * wx[1];
            assert_eq!(y.value().at4(0, 0, yy, xx), oracle);
        }
    }
}

fn samb_parts<'g>(s: &Samb, ctx: &Ctx<'g, f64>, x: &Var<'g, f64>) -> (Var<'g, f64>, Vec<Var<'g, f64>>) {
    let xs = s.rdb.forward(ctx, x);
    let parts = s.multiscale_expand(ctx, &xs);
    (xs, parts)
}

#[test]
fn gate_reductions() {
    let (s, st) = samb_setup(&ModelConfig::desk(), 16, 6);
    let g = Graph::inference();
    let ctx = Ctx::eval(&g, &st);
    let x = g.constant(rand_tensor(&[1, 16, 32, 32], 7, -1.0, 1.0));
    let (xs, parts) = samb_parts(&s, &ctx, &x);

    let open = s.forward_with_mixer(&ctx, &x, |c| Ok(g.constant(Tensor::ones(c.shape().to_vec())))).unwrap();
    let expect = parts.iter().fold(xs.value().clone(), |acc, p| acc.zip_map(p.value(), |a, b| a + b));
    assert!(open.value().max_abs_diff(&expect) < 1e-12);

    let closed = s.forward_with_mixer(&ctx, &x, |c| Ok(g.constant(Tensor::zeros(c.shape().to_vec())))).unwrap();
    assert_eq!(closed.value(), xs.value());
}

#[test]
fn gated_sum_matches_split_oracle() {
    let (s, st) = samb_setup(&ModelConfig::desk(), 16, 8);
    let g = Graph::inference();
    let ctx = Ctx::eval(&g, &st);
    let x = g.constant(rand_tensor(&[1, 16, 16, 16], 9, -1.0, 1.0));
    let gates = rand_tensor::<f64>(&[1, 48, 16, 16], 10, -2.0, 2.0);
    let out = s.forward_with_mixer(&ctx, &x, |_| Ok(g.constant(gates.clone()))).unwrap();
    let (xs, parts) = samb_parts(&s, &ctx, &x);
    for c in 0..16 {
        for y in 0..16 {
            for xx in 0..16 {
                let mut v = xs.value().at4(0, c, y, xx);
                for (i, p) in parts.iter().enumerate() {
                    v += p.value().at4(0, c, y, xx) * gates.at4(0, i * 16 + c, y, xx);
                }
                assert!((out.value().at4(0, c, y, xx) - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mixer_shape_mismatch_is_reported() {
    let (s, st) = samb_setup(&ModelConfig::desk(), 16, 11);
    let g = Graph::inference();
    let ctx = Ctx::eval(&g, &st);
    let x = g.constant(rand_tensor(&[1, 16, 16, 16], 12, -1.0, 1.0));
    let r = s.forward_with_mixer(&ctx, &x, |_| Ok(g.constant(Tensor::ones([1, 16, 16, 16]))));
    assert!(matches!(r, Err(Error::Shape(_))));
}

#[test]
fn samb_full_block_f32() {
    let (s, st) = samb_setup(&ModelConfig::desk(), 16, 13);
    let g = Graph::<f32>::inference();
    let st32: ParamStore<f32> = st.cast();
    let x = g.constant(rand_tensor(&[1, 16, 32, 32], 14, -1.0, 1.0));
    let y = s.forward(&Ctx::eval(&g, &st32), &x).unwrap();
    assert_eq!(y.shape(), &[1, 16, 32, 32]);
    assert!(y.value().all_finite());
    let xin = rand_tensor::<f64>(&[1, 16, 32, 32], 14, -1.0, 1.0);
    let err = dir_check!(f32, &st, &[xin], "s.", 15, |ctx, v| probe(&s.forward(ctx, &v[0]).unwrap(), 16));
    assert!(err < 1e-3, "{err}");
}

#[test]
fn samb_gradient_without_multiscale() {
    let cfg = ModelConfig { multiscale: false, ..tiny_model() };
    let (s, st) = samb_setup(&cfg, 4, 17);
    let x = rand_tensor::<f64>(&[1, 4, 6, 6], 18, -1.0, 1.0);
    let err = grad_check!(f64, &st, &[x], |ctx, v| probe(&s.forward(ctx, &v[0]).unwrap(), 19));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn samba_shapes_and_zero_head() {
    let net = Samba::new("reflectance", 3, &ModelConfig::desk());
    let mut st = ParamStore::<f32>::new();
    net.init(&mut st, &mut Init::new(20));
    let g = Graph::inference();
    let ctx = Ctx::eval(&g, &st);
    let x = g.constant(rand_tensor(&[1, 3, 64, 64], 21, 0.0, 1.0));
    let out = net.forward(&ctx, &x).unwrap();
    assert_eq!(out.correction.shape(), &[1, 3, 64, 64]);
    assert!(out.correction.value().data().iter().all(|&v| v == 0.0));
    for (i, f) in out.features.iter().enumerate() {
        assert_eq!(f.shape(), &[1, 16 << i, 64 >> i, 64 >> i]);
    }
    let odd = g.constant(rand_tensor(&[1, 3, 18, 23], 22, 0.0, 1.0));
    let out = net.forward(&ctx, &odd).unwrap();
    assert_eq!(out.correction.shape(), &[1, 3, 18, 23]);
    assert_eq!(out.features[2].shape(), &[1, 64, 4, 5]);
    let small = g.constant(Tensor::zeros([1, 3, 12, 40]));
    assert!(matches!(net.forward(&ctx, &small), Err(Error::TooSmall { .. })));
}

fn conv(cin: usize, cout: usize, k: usize, groups: usize) -> usize {
    cout * (cin / groups) * k * k + cout
}

fn gssb_count(d: usize, cfg: &ModelConfig) -> usize {
    let (n, t, r, g, e) = (cfg.state_dim, cfg.groups, cfg.embed_rank, cfg.pos_grid, cfg.ffn_expansion);
    let gssm = (d * d + d) + (d * t + t) + d * d + 2 * d * n + (d * d + d) + d * g * g + t * r + d * n + 2 * d;
    let ffn = conv(d, e * d, 1, 1) + conv(e * d, e * d, 3, e * d) + conv(e * d, d, 1, 1);
    4 * d + 2 * d + gssm + ffn
}

fn samb_count(w: usize, cfg: &ModelConfig) -> usize {
    let scales = if cfg.multiscale { 3 } else { 1 };
    let mixers = if cfg.gssb { cfg.gssb_per_samb * gssb_count(w * scales, cfg) } else { 0 };
    3 * conv(w, w, 3, 1) + scales * conv(w, w, 3, 1) + mixers
}

fn samba_count(c: usize, cfg: &ModelConfig) -> usize {
    let w = cfg.level_widths;
    conv(c, w[0], 3, 1)
        + w.iter().map(|&wi| samb_count(wi, cfg)).sum::<usize>()
        + conv(w[0], w[1], 3, 1)
        + conv(w[1], w[2], 3, 1)
        + conv(w[1], w[0], 3, 1)
        + conv(w[2], w[1], 3, 1)
        + conv(w[0], c, 1, 1)
}

#[test]
fn parameter_count_matches_closed_form() {
    for cfg in [
        ModelConfig::desk(),
        ModelConfig::full(),
        ModelConfig { multiscale: false, ..ModelConfig::desk() },
        ModelConfig { gssb: false, ..ModelConfig::desk() },
    ] {
        let net = Samba::new("reflectance", 3, &cfg);
        assert_eq!(net.param_count(), samba_count(3, &cfg));
        let mut st = ParamStore::<f32>::new();
        net.init(&mut st, &mut Init::new(0));
        let shared = if cfg.gssb { cfg.embed_rank * cfg.state_dim } else { 0 };
        assert_eq!(st.count(), samba_count(3, &cfg) + shared);
    }
}
