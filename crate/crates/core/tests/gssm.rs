mod common;

use std::collections::HashSet;

use common::{probe, rand_tensor, tiny_model};
use proptest::prelude::*;
use retinexdual_core::autograd::{Graph, Tensor};
use retinexdual_core::gssm::{ase_scan, build_embedding, Gssb, Gssm, ScanOrder, GLOBAL_EMBEDDING};
use retinexdual_core::layers::LayerNorm;
use retinexdual_core::params::Init;
use retinexdual_core::{Ctx, Mode, ModelConfig, ParamStore};

/// Scalar-loop reference for the attentive scan.
#[allow(clippy::too_many_arguments)]
fn scan_oracle(
    n: usize,
    l: usize,
    d: usize,
    s: usize,
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    e: &[f64],
    dk: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; n * l * d];
    for bi in 0..n {
        for ch in 0..d {
            let mut h = vec![0.0; s];
            for t in 0..l {
                let xv = x[(bi * l + t) * d + ch];
                let dv = delta[(bi * l + t) * d + ch];
                let mut acc = 0.0;
                for k in 0..s {
                    let abar = (dv * a[ch * s + k]).exp();
                    h[k] = abar * h[k] + dv * b[(bi * l + t) * s + k] * xv;
                    acc += (c[(bi * l + t) * s + k] + e[(bi * l + t) * s + k]) * h[k];
                }
                y[(bi * l + t) * d + ch] = acc + dk[ch] * xv;
            }
        }
    }
    y
}

struct ScanCase {
    dims: (usize, usize, usize, usize),
    t: Vec<Tensor<f64>>,
}

fn scan_case(n: usize, l: usize, d: usize, s: usize, seed: u64) -> ScanCase {
    ScanCase {
        dims: (n, l, d, s),
        t: vec![
            rand_tensor(&[n, l, d], seed, -1.0, 1.0),
            rand_tensor(&[n, l, d], seed + 1, 0.01, 0.5),
            rand_tensor(&[d, s], seed + 2, -2.0, -0.1),
            rand_tensor(&[n, l, s], seed + 3, -1.0, 1.0),
            rand_tensor(&[n, l, s], seed + 4, -1.0, 1.0),
            rand_tensor(&[n, l, s], seed + 5, -1.0, 1.0),
            rand_tensor(&[d], seed + 6, -1.0, 1.0),
        ],
    }
}

fn run_scan(case: &ScanCase) -> Tensor<f64> {
    let g = Graph::<f64>::inference();
    let v: Vec<_> = case.t.iter().map(|t| g.constant(t.clone())).collect();
    ase_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]).unwrap().value().clone()
}

fn oracle(case: &ScanCase) -> Vec<f64> {
    let (n, l, d, s) = case.dims;
    let t: Vec<&[f64]> = case.t.iter().map(|t| t.data()).collect();
    scan_oracle(n, l, d, s, t[0], t[1], t[2], t[3], t[4], t[5], t[6])
}

#[test]
fn scan_with_zero_embedding_matches_oracle_in_f32() {
    let mut case = scan_case(2, 40, 4, 8, 10);
    case.t[5] = Tensor::zeros([2, 40, 8]);
    let g = Graph::<f32>::inference();
    let v: Vec<_> = case.t.iter().map(|t| g.constant(t.cast())).collect();
    let y = ase_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]).unwrap();
    let expect = oracle(&case);
    let err = y.value().data().iter().zip(&expect).map(|(a, b)| (*a as f64 - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn single_step_closed_form() {
    let case = scan_case(1, 1, 3, 4, 20);
    let y = run_scan(&case);
    let t: Vec<&[f64]> = case.t.iter().map(|t| t.data()).collect();
    for ch in 0..3 {
        let (xv, dv) = (t[0][ch], t[1][ch]);
        let h: f64 = (0..4).map(|k| (t[4][k] + t[5][k]) * dv * t[3][k] * xv).sum();
        assert!((y.data()[ch] - (h + t[6][ch] * xv)).abs() < 1e-12);
    }
}

#[test]
fn vanishing_step_leaves_only_the_skip() {
    let mut case = scan_case(1, 16, 3, 4, 30);
    case.t[1] = Tensor::full([1, 16, 3], 1e-12);
    let y = run_scan(&case);
    for (i, v) in y.data().iter().enumerate() {
        let expect = case.t[6].data()[i % 3] * case.t[0].data()[i];
        assert!((v - expect).abs() < 1e-9);
    }
}

#[test]
fn discretized_decay_is_contractive() {
    let a = rand_tensor::<f64>(&[8, 16], 40, -3.0, 3.0).map(|v| -v.exp());
    let delta = rand_tensor::<f64>(&[64], 41, 1e-4, 5.0);
    for &dl in delta.data() {
        for &av in a.data() {
            let abar = (dl * av).exp();
            assert!(abar > 0.0 && abar < 1.0);
        }
    }
}

#[test]
fn scan_reports_the_failing_step() {
    let mut case = scan_case(1, 8, 2, 2, 50);
    case.t[0].data_mut()[5 * 2 + 1] = f64::NAN;
    let g = Graph::<f64>::inference();
    let v: Vec<_> = case.t.iter().map(|t| g.constant(t.clone())).collect();
    let err = ase_scan(&v[0], &v[1], &v[2], &v[3], &v[4], &v[5], &v[6]).unwrap_err();
    assert!(err.to_string().contains("step 5"), "{err}");
}

#[test]
fn embedding_selection() {
    let g = Graph::<f64>::inference();
    let el = rand_tensor::<f64>(&[5, 3], 60, -1.0, 1.0);
    let eg = rand_tensor::<f64>(&[3, 4], 61, -1.0, 1.0);
    let em = g.constant(el.clone()).matmul(&g.constant(eg.clone())).value().clone();
    let onehot = |rows: &[usize]| {
        let mut t = Tensor::<f64>::zeros([1, rows.len(), 5]);
        for (i, &r) in rows.iter().enumerate() {
            t.data_mut()[i * 5 + r] = 1.0;
        }
        t
    };
    let e = |rows: &[usize]| {
        build_embedding(&g.constant(onehot(rows)), &g.constant(el.clone()), &g.constant(eg.clone())).value().clone()
    };
    // all rows select embedding 0
    let all0 = e(&[0; 6]);
    for i in 0..6 {
        assert_eq!(&all0.data()[i * 4..(i + 1) * 4], &em.data()[..4]);
    }
    // identity selection
    assert!(e(&[0, 1, 2, 3, 4]).max_abs_diff(&em.clone().reshape([1, 5, 4])) < 1e-15);
    // random selection vs row gather
    let rows = [4, 1, 1, 3, 0, 2, 4, 3];
    let got = e(&rows);
    for (i, &r) in rows.iter().enumerate() {
        for k in 0..4 {
            let oracle: f64 = (0..3).map(|j| el.data()[r * 3 + j] * eg.data()[j * 4 + k]).sum();
            assert!((got.data()[i * 4 + k] - oracle).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn fold_inverts_unfold(groups in proptest::collection::vec(0usize..6, 1..200)) {
        let o = ScanOrder::from_assignment(&groups);
        let items: Vec<usize> = (0..groups.len()).map(|i| i * 7 + 1).collect();
        prop_assert_eq!(o.fold(&o.unfold(&items)), items);
        let sorted = o.unfold(&groups);
        prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        let mut seen = HashSet::new();
        prop_assert!(o.permutation.iter().all(|p| seen.insert(*p)));
    }

    #[test]
    fn random_scans_match_oracle(n in 1usize..3, l in 1usize..40, d in 1usize..5, s in 1usize..6, seed in 0u64..1000) {
        let case = scan_case(n, l, d, s, seed);
        let y = run_scan(&case);
        let expect = oracle(&case);
        let err = y.data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
    }
}

fn gssm_setup(dim: usize) -> (Gssm, ParamStore<f64>) {
    let cfg = tiny_model();
    let m = Gssm::new("g", dim, cfg.state_dim, cfg.groups, cfg.embed_rank, 16, 1.0);
    let mut st = ParamStore::new();
    m.init(&mut st, &mut Init::new(3));
    (m, st)
}

#[test]
fn positional_field_is_additive_and_distinct() {
    let (m, st) = gssm_setup(48);
    let g = Graph::<f64>::inference();
    let ctx = Ctx::eval(&g, &st);
    let zero = g.constant(Tensor::zeros([1, 48, 16, 16]));
    let enc = m.positional_encode(&ctx, &zero);
    assert_eq!(enc.value(), &st.get(&m.pos_name()).unwrap().clone());
    let x = g.constant(rand_tensor(&[1, 48, 32, 32], 4, -1.0, 1.0));
    assert_eq!(m.positional_encode(&ctx, &x).shape(), &[1, 48, 32, 32]);
    let field = enc.value();
    let vec_at = |p: usize| (0..48).map(|c| field.data()[c * 256 + p].to_bits()).collect::<Vec<_>>();
    let distinct: HashSet<_> = (0..256).map(vec_at).collect();
    assert_eq!(distinct.len(), 256);
}

#[test]
fn policy_rows_are_one_hot_and_eval_is_deterministic() {
    let (m, st) = gssm_setup(12);
    let g = Graph::<f64>::inference();
    let tokens = g.constant(rand_tensor(&[2, 30, 12], 5, -1.0, 1.0));
    for mode in [Mode::Train, Mode::Eval] {
        let ctx = Ctx::new(&g, &st, mode, 9);
        let (y, chosen) = m.classify(&ctx, &tokens);
        for (r, row) in y.value().data().chunks(m.groups).enumerate() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert_eq!(row[chosen[r]], 1.0);
        }
    }
    let ctx = Ctx::eval(&g, &st);
    assert_eq!(m.classify(&ctx, &tokens).1, m.classify(&ctx, &tokens).1);
}

#[test]
fn cold_sampling_matches_argmax() {
    let (mut m, st) = gssm_setup(12);
    m.temperature = 1e-3;
    let g = Graph::<f64>::inference();
    let tokens = g.constant(rand_tensor(&[1, 100, 12], 6, -1.0, 1.0));
    let eval = m.classify(&Ctx::eval(&g, &st), &tokens).1;
    let mut agree = 0;
    for seed in 0..100 {
        let sampled = m.classify(&Ctx::train(&g, &st, seed), &tokens).1;
        agree += sampled.iter().zip(&eval).filter(|(a, b)| a == b).count();
    }
    let freq = agree as f64 / 10_000.0;
    assert!(freq >= 0.99, "{freq}");
}

#[test]
fn warm_sampling_follows_the_soft_distribution() {
    let (m, st) = gssm_setup(12);
    let g = Graph::<f64>::inference();
    let tokens = g.constant(rand_tensor(&[1, 1, 12], 21, -1.0, 1.0));
    let logits = m.route.forward(&Ctx::eval(&g, &st), &tokens).value().clone();
    let mx = logits.max_value();
    let e: Vec<f64> = logits.data().iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut counts = vec![0usize; m.groups];
    let draws = 10_000;
    for seed in 0..draws {
        counts[m.classify(&Ctx::train(&g, &st, seed), &tokens).1[0]] += 1;
    }
    for k in 0..m.groups {
        let p = e[k] / z;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((counts[k] as f64 / draws as f64 - p).abs() < 5.0 * sd + 1e-3);
    }
}

#[test]
fn gssm_preserves_shape_and_is_deterministic() {
    let (m, st) = gssm_setup(48);
    let g = Graph::<f32>::inference();
    let st32: ParamStore<f32> = st.cast();
    let ctx = Ctx::eval(&g, &st32);
    let x = g.constant(rand_tensor(&[1, 48, 32, 32], 7, -1.0, 1.0));
    let a = m.forward(&ctx, &x).unwrap();
    let b = m.forward(&ctx, &x).unwrap();
    assert_eq!(a.shape(), &[1, 48, 32, 32]);
    assert_eq!(a.value(), b.value());
    let trace = m.forward_traced(&ctx, &x).unwrap();
    for o in &trace.orders {
        let idx: Vec<usize> = (0..o.permutation.len()).collect();
        assert_eq!(o.fold(&o.unfold(&idx)), idx);
    }
}

#[test]
fn global_embedding_is_shared() {
    let cfg = ModelConfig { gssb_per_samb: 2, ..tiny_model() };
    let model = retinexdual_core::RetinexDual::new(&cfg);
    let st = model.init::<f64>(0);
    assert_eq!(st.names().filter(|n| n.ends_with(GLOBAL_EMBEDDING)).count(), 1);
    assert!(st.names().filter(|n| n.contains("local_embedding")).count() >= 6);
    // every mixer reads the single shared entry
    let mut changed = st.clone();
    changed.set(GLOBAL_EMBEDDING, Tensor::zeros(st.get(GLOBAL_EMBEDDING).unwrap().shape().to_vec()));
    let g = Graph::<f64>::inference();
    let x = g.constant(rand_tensor(&[1, 3, 16, 16], 8, 0.0, 1.0));
    let y0 = model.forward(&Ctx::eval(&g, &st), &x).unwrap().pyramid[0].value().clone();
    let y1 = model.forward(&Ctx::eval(&g, &changed), &x).unwrap().pyramid[0].value().clone();
    assert_eq!(y0, y1, "zero correction heads hide the change");
    let mut live = st.clone();
    model.zero_correction_heads(&mut live);
    for (name, t) in live.clone().iter() {
        if name.ends_with(".head.weight") {
            live.set(name, t.map(|_| 0.1));
        }
    }
    let mut live_changed = live.clone();
    live_changed.set(GLOBAL_EMBEDDING, changed.get(GLOBAL_EMBEDDING).unwrap().clone());
    let y0 = model.forward(&Ctx::eval(&g, &live), &x).unwrap().pyramid[0].value().clone();
    let y1 = model.forward(&Ctx::eval(&g, &live_changed), &x).unwrap().pyramid[0].value().clone();
    assert!(y0.max_abs_diff(&y1) > 0.0);
}

fn gssb_setup(dim: usize) -> (Gssb, ParamStore<f64>) {
    let cfg = tiny_model();
    let b = Gssb::new("b", dim, &cfg);
    let mut st = ParamStore::new();
    b.init(&mut st, &mut Init::new(11));
    st.insert(GLOBAL_EMBEDDING, Init::new(12).normal(&[cfg.embed_rank, cfg.state_dim], 0.5));
    (b, st)
}

#[test]
fn gssb_double_residual_identity() {
    let (b, mut st) = gssb_setup(12);
    st.zero_prefix("b.gssm.out_proj");
    st.zero_prefix("b.ffn.contract");
    let g = Graph::<f64>::inference();
    let x = g.constant(rand_tensor(&[1, 12, 8, 8], 13, -1.0, 1.0));
    let y = b.forward(&Ctx::eval(&g, &st), &x).unwrap();
    assert!(y.value().max_abs_diff(x.value()) < 1e-15);
}

#[test]
fn gssb_gate_algebra_with_closed_scale() {
    let (b, mut st) = gssb_setup(12);
    st.zero_prefix("b.gssm.out_proj");
    st.zero_prefix("b.scale1");
    let g = Graph::<f64>::inference();
    let ctx = Ctx::eval(&g, &st);
    let x = g.constant(rand_tensor(&[1, 12, 8, 8], 14, -1.0, 1.0));
    let y = b.forward(&ctx, &x).unwrap();
    let zero = g.constant(Tensor::zeros([1, 12, 8, 8]));
    let expect = b.ffn.forward(&ctx, &b.norm2.forward(&ctx, &zero));
    assert!(y.value().max_abs_diff(expect.value()) < 1e-15);
}

#[test]
fn layer_norm_statistics() {
    let ln = LayerNorm::new("ln", 12);
    let mut st = ParamStore::<f64>::new();
    ln.init(&mut st);
    let g = Graph::inference();
    let x = g.constant(rand_tensor(&[2, 12, 5, 5], 15, -3.0, 5.0));
    let y = ln.forward(&Ctx::eval(&g, &st), &x).value().clone();
    for b in 0..2 {
        for p in 0..25 {
            let v: Vec<f64> = (0..12).map(|c| y.data()[(b * 12 + c) * 25 + p]).collect();
            let mean = v.iter().sum::<f64>() / 12.0;
            let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "{mean} {var}");
        }
    }
}

#[test]
fn gssm_gradient_f32() {
    let (m, st) = gssm_setup(12);
    let mut st = st;
    st.insert(GLOBAL_EMBEDDING, Init::new(16).normal(&[2, 3], 0.5));
    let x = rand_tensor::<f64>(&[1, 12, 8, 8], 17, -1.0, 1.0);
    let err = grad_check!(f32, &st, &[x], |ctx, v| probe(&m.forward(ctx, &v[0]).unwrap(), 18));
    assert!(err < 1e-3, "{err}");
}

#[test]
fn gssb_gradient_f64() {
    let (b, st) = gssb_setup(6);
    let x = rand_tensor::<f64>(&[1, 6, 6, 6], 19, -1.0, 1.0);
    let err = grad_check!(f64, &st, &[x], |ctx, v| probe(&b.forward(ctx, &v[0]).unwrap(), 20));
    assert!(err < 1e-4, "{err}");
}
