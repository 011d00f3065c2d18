mod common;

use common::rand_tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use retinexdual_core::autograd::{Graph, Tensor};
use retinexdual_core::objectives::{
    charbonnier, fft_l1, gaussian_window, perceptual, ssim, ssim_loss, total_loss, Extractor, SSIM_C1, SSIM_C2,
    SSIM_SIGMA, SSIM_WINDOW,
};
use retinexdual_core::{Ctx, Error, LossConfig, ParamStore};

#[test]
fn charbonnier_examples() {
    let g = Graph::<f64>::inference();
    let p = g.constant(rand_tensor(&[1, 3, 8, 8], 1, 0.0, 1.0));
    assert!((charbonnier(&p, &p, 1e-3).unwrap().value().item() - 1e-3).abs() < 1e-15);
    let one = g.constant(Tensor::new([1], vec![1.0]));
    let zero = g.constant(Tensor::new([1], vec![0.0]));
    let v = charbonnier(&one, &zero, 1e-3).unwrap().value().item();
    assert_eq!(v, (1.0f64 + 1e-6).sqrt());
    let bad = g.constant(Tensor::zeros([1, 3, 8, 9]));
    assert!(matches!(charbonnier(&p, &bad, 1e-3), Err(Error::Shape(_))));
}

#[test]
fn charbonnier_is_flat_at_the_target() {
    let t = rand_tensor::<f64>(&[1, 1, 4, 4], 2, 0.0, 1.0);
    let g = Graph::new();
    let leaf = g.leaf(t.clone());
    let tgt = g.constant(t.clone());
    let grad = g.backward(&charbonnier(&leaf, &tgt, 1e-3).unwrap()).wrt(&leaf);
    assert!(grad.data().iter().all(|&v| v == 0.0));
    let f = |x: &Tensor<f64>| {
        let g = Graph::inference();
        charbonnier(&g.constant(x.clone()), &g.constant(t.clone()), 1e-3).unwrap().value().item()
    };
    for i in 0..16 {
        let (mut up, mut down) = (t.clone(), t.clone());
        up.data_mut()[i] += 1e-7;
        down.data_mut()[i] -= 1e-7;
        assert!(((f(&up) - f(&down)) / 2e-7).abs() < 1e-6);
    }
}

#[test]
fn fft_l1_examples() {
    let g = Graph::<f64>::inference();
    let p = g.constant(rand_tensor(&[1, 3, 8, 10], 3, 0.0, 1.0));
    assert_eq!(fft_l1(&p, &p).unwrap().value().item(), 0.0);

    let (h, w, c) = (8, 10, 0.4);
    let pred = g.constant(Tensor::full([1, 3, h, w], c));
    let target = g.constant(Tensor::zeros([1, 3, h, w]));
    let bins = (h * (w / 2 + 1)) as f64;
    let expect = c * (h * w) as f64 / (bins * 2.0);
    assert!((fft_l1(&pred, &target).unwrap().value().item() - expect).abs() < 1e-12);
}

#[test]
fn fft_l1_circular_shift_invariance() {
    let (h, w) = (8, 12);
    let a = rand_tensor::<f64>(&[1, 2, h, w], 4, 0.0, 1.0);
    let b = rand_tensor::<f64>(&[1, 2, h, w], 5, 0.0, 1.0);
    let roll = |t: &Tensor<f64>, dy: usize, dx: usize| {
        Tensor::from_fn([1, 2, h, w], |i| {
            let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
            t.data()[c * h * w + ((y + h - dy) % h) * w + (x + w - dx) % w]
        })
    };
    let g = Graph::<f64>::inference();
    let base = fft_l1(&g.constant(a.clone()), &g.constant(b.clone())).unwrap().value().item();
    let shifted = fft_l1(&g.constant(roll(&a, 0, 6)), &g.constant(roll(&b, 0, 6))).unwrap().value().item();
    let half = fft_l1(&g.constant(roll(&a, 4, 0)), &g.constant(roll(&b, 4, 0))).unwrap().value().item();
    // half-period shifts flip signs only, leaving |Δre| and |Δim| unchanged
    assert!((base - shifted).abs() < 1e-12);
    assert!((base - half).abs() < 1e-12);
}

/// Direct sliding-window SSIM with explicit loops.
fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (_, c, h, w) = a.dims4();
    let k = SSIM_WINDOW;
    let win = gaussian_window(k, SSIM_SIGMA);
    let mut total = 0.0;
    let mut count = 0;
    for ch in 0..c {
        for y in 0..=h - k {
            for x in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..k {
                    for dx in 0..k {
                        let wt = win[dy * k + dx];
                        let (p, q) = (a.at4(0, ch, y + dy, x + dx), b.at4(0, ch, y + dy, x + dx));
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_sliding_window_oracle() {
    let a = rand_tensor::<f64>(&[1, 3, 16, 16], 6, 0.0, 1.0);
    let b = a.zip_map(&rand_tensor(&[1, 3, 16, 16], 7, -0.2, 0.2), |x, n| (x + n).clamp(0.0, 1.0));
    let g = Graph::inference();
    let got = ssim(&g.constant(a.clone()), &g.constant(b.clone())).unwrap().value().item();
    assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6);
}

#[test]
fn ssim_examples() {
    let g = Graph::<f64>::inference();
    let a = g.constant(rand_tensor(&[1, 3, 16, 16], 8, 0.0, 1.0));
    assert!(ssim_loss(&a, &a).unwrap().value().item().abs() < 1e-12);
    let gray = g.constant(Tensor::full([1, 3, 16, 16], 0.5));
    let shifted = g.constant(Tensor::full([1, 3, 16, 16], 1.0));
    let l = ssim_loss(&shifted, &gray).unwrap().value().item();
    assert!(l > 0.0 && l < 1.0);
    // smaller than the window: global statistics
    let s1 = rand_tensor::<f64>(&[1, 3, 6, 6], 9, 0.0, 1.0);
    let s2 = rand_tensor::<f64>(&[1, 3, 6, 6], 10, 0.0, 1.0);
    let got = ssim(&g.constant(s1.clone()), &g.constant(s2.clone())).unwrap().value().item();
    let mut expect = 0.0;
    for c in 0..3 {
        let pa = &s1.data()[c * 36..(c + 1) * 36];
        let pb = &s2.data()[c * 36..(c + 1) * 36];
        let m = |v: &[f64]| v.iter().sum::<f64>() / 36.0;
        let (ma, mb) = (m(pa), m(pb));
        let va = pa.iter().map(|x| x * x).sum::<f64>() / 36.0 - ma * ma;
        let vb = pb.iter().map(|x| x * x).sum::<f64>() / 36.0 - mb * mb;
        let cov = pa.iter().zip(pb).map(|(x, y)| x * y).sum::<f64>() / 36.0 - ma * mb;
        expect += (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
            / 3.0;
    }
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn perceptual_examples() {
    let ex = Extractor::random(7);
    let g = Graph::<f64>::inference();
    let a = g.constant(rand_tensor(&[1, 3, 16, 16], 11, 0.0, 1.0));
    assert_eq!(perceptual(&a, &a, &ex).unwrap().value().item(), 0.0);
    let b = g.constant(rand_tensor(&[1, 3, 16, 16], 12, 0.0, 1.0));
    let v1 = perceptual(&a, &b, &ex).unwrap().value().item();
    let v2 = perceptual(&a, &b, &Extractor::random(7)).unwrap().value().item();
    assert_eq!(v1, v2);
    assert!(v1 > 0.0);
}

#[test]
fn perceptual_orders_noise_levels() {
    let ex = Extractor::random(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut big, mut small) = (0.0, 0.0);
    for trial in 0..20 {
        let clean = rand_tensor::<f64>(&[1, 3, 16, 16], 100 + trial, 0.0, 1.0);
        let noise = Tensor::<f64>::from_fn([1, 3, 16, 16], |_| normal.sample(&mut rng));
        let g = Graph::inference();
        let c = g.constant(clean.clone());
        let loud = g.constant(clean.zip_map(&noise, |x, n| x + 0.1 * n));
        let quiet = g.constant(clean.zip_map(&noise, |x, n| x + 0.01 * n));
        big += perceptual(&loud, &c, &ex).unwrap().value().item();
        small += perceptual(&quiet, &c, &ex).unwrap().value().item();
    }
    assert!(big > small);
}

#[test]
fn missing_extractor_weights_is_a_configuration_error() {
    let cfg = LossConfig { perceptual_weights: "/nonexistent/vgg16.safetensors".into(), ..LossConfig::defaults() };
    match Extractor::from_config(&cfg) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "loss.perceptual_weights"),
        other => panic!("unexpected {other:?}"),
    }
}

fn pyramid(seed: u64) -> Vec<Tensor<f64>> {
    [32, 16, 8].iter().enumerate().map(|(i, &s)| rand_tensor(&[1, 3, s, s], seed + i as u64, 0.0, 1.0)).collect()
}

fn loss_of(preds: &[Tensor<f64>], gt: &Tensor<f64>, cfg: &LossConfig) -> retinexdual_core::objectives::LossReport {
    let g = Graph::inference();
    let p: Vec<_> = preds.iter().map(|t| g.constant(t.clone())).collect();
    total_loss(&p, &g.constant(gt.clone()), cfg, &Extractor::random(cfg.extractor_seed)).unwrap().1
}

#[test]
fn perfect_pyramid_sits_on_the_floor() {
    let gt = rand_tensor::<f64>(&[1, 3, 32, 32], 14, 0.0, 1.0);
    let g = Graph::inference();
    let gv = g.constant(gt.clone());
    let preds: Vec<Tensor<f64>> =
        [32, 16, 8].iter().map(|&s| gv.resize_bilinear(s, s).value().clone()).collect();
    let cfg = LossConfig::defaults();
    let r = loss_of(&preds, &gt, &cfg);
    let floor = (1.0 + 0.5 + 0.25) * cfg.lambda_cb * cfg.epsilon;
    assert!((r.total - floor).abs() < 1e-10, "{} vs {floor}", r.total);
}

#[test]
fn report_recomputes_and_levels_follow_toggles() {
    let gt = rand_tensor::<f64>(&[1, 3, 32, 32], 15, 0.0, 1.0);
    let preds = pyramid(16);
    let cfg = LossConfig::defaults();
    let r = loss_of(&preds, &gt, &cfg);
    assert!((r.total - r.recompute()).abs() < 1e-10);
    assert_eq!(r.levels.iter().map(|l| l.weight).collect::<Vec<_>>(), [1.0, 0.5, 0.25]);

    let flat = loss_of(&preds, &gt, &LossConfig { scaling: false, ..cfg.clone() });
    assert_eq!(flat.levels.iter().map(|l| l.weight).collect::<Vec<_>>(), [1.0, 1.0, 1.0]);

    let single = loss_of(&preds, &gt, &LossConfig { multilevel: false, ..cfg.clone() });
    let g = Graph::inference();
    let alone = total_loss(
        &[g.constant(preds[0].clone())],
        &g.constant(gt.clone()),
        &LossConfig { multilevel: false, ..cfg.clone() },
        &Extractor::random(7),
    );
    assert!(alone.is_err(), "level count is fixed");
    assert!(single.levels[1..].iter().all(|l| l.terms.as_array().iter().all(Option::is_none)));
    let level0: f64 =
        r.levels[0].terms.as_array().iter().zip(r.lambdas).map(|(t, l)| l * t.unwrap()).sum();
    assert!((single.total - level0).abs() < 1e-10);
}

#[test]
fn doubling_a_lambda_doubles_its_contribution() {
    let gt = rand_tensor::<f64>(&[1, 3, 32, 32], 17, 0.0, 1.0);
    let preds = pyramid(18);
    let cfg = LossConfig::defaults();
    let a = loss_of(&preds, &gt, &cfg);
    let b = loss_of(&preds, &gt, &LossConfig { lambda_perceptual: 2.0 * cfg.lambda_perceptual, ..cfg.clone() });
    assert!((b.contribution(3) - 2.0 * a.contribution(3)).abs() < 1e-12);
    for t in 0..3 {
        assert_eq!(a.contribution(t), b.contribution(t));
    }
}

#[test]
fn disabled_terms_are_absent() {
    let gt = rand_tensor::<f64>(&[1, 3, 32, 32], 19, 0.0, 1.0);
    let preds = pyramid(20);
    let cfg = LossConfig { fft: false, perceptual: false, ..LossConfig::defaults() };
    let r = loss_of(&preds, &gt, &cfg);
    assert_eq!(r.active_terms(), ["cb", "ssim"]);
    assert!((r.total - r.recompute()).abs() < 1e-10);
}

#[test]
fn term_gradients() {
    let st = ParamStore::<f64>::new();
    let target = rand_tensor::<f64>(&[1, 3, 8, 8], 21, 0.0, 1.0);
    let pred = rand_tensor::<f64>(&[1, 3, 8, 8], 22, 0.0, 1.0);
    let ex = Extractor::random(7);
    let checks: [(&str, f64); 4] = [
        ("cb", grad_check!(f64, &st, &[pred.clone(), target.clone()], |_: &Ctx<'_, f64>, v| {
            charbonnier(&v[0], &v[1], 1e-3).unwrap()
        })),
        ("fft", grad_check!(f64, &st, &[pred.clone(), target.clone()], |_: &Ctx<'_, f64>, v| fft_l1(&v[0], &v[1])
            .unwrap())),
        ("ssim", grad_check!(f64, &st, &[pred.clone(), target.clone()], |_: &Ctx<'_, f64>, v| ssim_loss(
            &v[0], &v[1]
        )
        .unwrap())),
        ("perceptual", grad_check!(f64, &st, std::slice::from_ref(&pred), |ctx: &Ctx<'_, f64>, v| {
            perceptual(&v[0], &ctx.constant(target.clone()), &ex).unwrap()
        })),
    ];
    for (name, err) in checks {
        assert!(err < 1e-4, "{name}: {err}");
    }
}
