//! Weighted four-term objective with multi-level supervision.

use std::path::Path;

use retinexdual_autograd::{Conv2dOptions, Real, Tensor, Var};
use serde::Serialize;

use crate::config::LossConfig;
use crate::error::{Error, Result};
use crate::params::Init;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape<T: Real>(pred: &Var<'_, T>, target: &Var<'_, T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    Ok(())
}

/// `mean(sqrt((p - t)² + ε²))`.
pub fn charbonnier<'g, T: Real>(pred: &Var<'g, T>, target: &Var<'g, T>, eps: f64) -> Result<Var<'g, T>> {
    same_shape(pred, target)?;
    Ok(pred.sub(target).square().add_scalar(T::lit(eps * eps)).sqrt().mean())
}

/// Mean absolute difference of real and imaginary half-spectra per channel.
pub fn fft_l1<'g, T: Real>(pred: &Var<'g, T>, target: &Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(pred, target)?;
    let (pr, pi) = pred.rfft2();
    let (tr, ti) = target.rfft2();
    let half = T::lit(0.5);
    Ok(pr.sub(&tr).abs().mean().add(&pi.sub(&ti).abs().mean()).scale(half))
}

/// Normalized `size x size` Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

type Filter<'g, T> = Box<dyn Fn(&Var<'g, T>) -> Var<'g, T> + 'g>;

/// Mean SSIM over valid window positions and channels; images smaller than
/// the window use global per-channel statistics.
pub fn ssim<'g, T: Real>(a: &Var<'g, T>, b: &Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(a, b)?;
    let (_, c, h, w) = a.dims4();
    let filter: Filter<'g, T> = if h < SSIM_WINDOW || w < SSIM_WINDOW {
        Box::new(|v: &Var<'g, T>| v.adaptive_avg_pool(1, 1))
    } else {
        let k = SSIM_WINDOW;
        let win = gaussian_window(k, SSIM_SIGMA);
        let weight = a.graph().constant(Tensor::from_fn([c, 1, k, k], |i| T::lit(win[i % (k * k)])));
        let opts = Conv2dOptions::default().with_groups(c);
        Box::new(move |v: &Var<'g, T>| v.conv2d(&weight, None, opts))
    };
    let mu_a = filter(a);
    let mu_b = filter(b);
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b);
    let var_a = filter(&a.square()).sub(&mu_aa);
    let var_b = filter(&b.square()).sub(&mu_bb);
    let cov = filter(&a.mul(b)).sub(&mu_ab);
    let (c1, c2) = (T::lit(SSIM_C1), T::lit(SSIM_C2));
    let num = mu_ab.scale(T::lit(2.0)).add_scalar(c1).mul(&cov.scale(T::lit(2.0)).add_scalar(c2));
    let den = mu_aa.add(&mu_bb).add_scalar(c1).mul(&var_a.add(&var_b).add_scalar(c2));
    Ok(num.div(&den).mean())
}

pub fn ssim_loss<'g, T: Real>(pred: &Var<'g, T>, target: &Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(ssim(pred, target)?.neg().add_scalar(T::one()))
}

#[derive(Clone, Debug)]
struct FeatureConv {
    weight: Tensor<f64>,
    bias: Tensor<f64>,
    pool_before: bool,
}

/// Fixed convolutional feature extractor for the perceptual term.
#[derive(Clone, Debug)]
pub struct Extractor {
    layers: Vec<FeatureConv>,
    /// Layer indices (0-based) whose activations are compared.
    taps: Vec<usize>,
    imagenet_norm: bool,
}

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Indices of the first seven convolutions in the VGG16 `features` stack,
/// and whether a max-pool precedes each.
const VGG_LAYERS: [(usize, bool); 7] =
    [(0, false), (2, false), (5, true), (7, false), (10, true), (12, false), (14, false)];

impl Extractor {
    /// Three random 3x3 convolutions (3→8→16→16), every layer tapped.
    pub fn random(seed: u64) -> Self {
        let mut init = Init::new(seed);
        let widths = [3, 8, 16, 16];
        let layers = widths
            .windows(2)
            .map(|p| FeatureConv {
                weight: init.normal(&[p[1], p[0], 3, 3], (2.0 / (p[0] * 9) as f64).sqrt()),
                bias: Tensor::zeros([p[1]]),
                pool_before: false,
            })
            .collect();
        Self { layers, taps: vec![0, 1, 2], imagenet_norm: false }
    }

    /// VGG16 convolutions from a safetensors file with `features.{i}.weight|bias` entries.
    pub fn vgg16(path: &Path) -> Result<Self> {
        let cfg_err = |m: String| Error::config("loss.perceptual_weights", format!("{}: {m}", path.display()));
        let bytes = std::fs::read(path).map_err(|e| cfg_err(e.to_string()))?;
        let st = safetensors::SafeTensors::deserialize(&bytes).map_err(|e| cfg_err(e.to_string()))?;
        let read = |name: &str| -> Result<Tensor<f64>> {
            let view = st.tensor(name).map_err(|e| cfg_err(format!("{name}: {e}")))?;
            crate::checkpoint::view_to_tensor(&view).map_err(|m| cfg_err(format!("{name}: {m}")))
        };
        let mut layers = Vec::new();
        for (idx, pool_before) in VGG_LAYERS {
            let weight = read(&format!("features.{idx}.weight"))?;
            let bias = read(&format!("features.{idx}.bias"))?;
            if weight.ndim() != 4 || bias.shape() != [weight.shape()[0]] {
                return Err(cfg_err(format!("features.{idx} has unexpected shape {:?}", weight.shape())));
            }
            layers.push(FeatureConv { weight, bias, pool_before });
        }
        Ok(Self { layers, taps: vec![1, 3, 6], imagenet_norm: true })
    }

    pub fn from_config(cfg: &LossConfig) -> Result<Self> {
        if cfg.perceptual_weights.is_empty() {
            Ok(Self::random(cfg.extractor_seed))
        } else {
            Self::vgg16(Path::new(&cfg.perceptual_weights))
        }
    }

    pub fn features<'g, T: Real>(&self, x: &Var<'g, T>) -> Vec<Var<'g, T>> {
        let g = x.graph();
        let mut h = if self.imagenet_norm {
            let mean = g.constant(Tensor::from_fn([3, 1, 1], |i| T::lit(IMAGENET_MEAN[i])));
            let std = g.constant(Tensor::from_fn([3, 1, 1], |i| T::lit(IMAGENET_STD[i])));
            x.sub(&mean).div(&std)
        } else {
            x.clone()
        };
        let last = *self.taps.iter().max().expect("at least one tap");
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().take(last + 1) {
            if layer.pool_before {
                h = h.max_pool2();
            }
            let w = g.constant(layer.weight.cast());
            let b = g.constant(layer.bias.cast());
            h = h.conv2d(&w, Some(&b), Conv2dOptions::same(3, 1)).relu();
            if self.taps.contains(&i) {
                out.push(h.clone());
            }
        }
        out
    }

    /// `Σ_taps mean((φ(p) - φ(t))²)`.
    pub fn distance<'g, T: Real>(&self, pred: &Var<'g, T>, target: &Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape(pred, target)?;
        let fp = self.features(pred);
        let ft = self.features(&target.detach());
        let mut total: Option<Var<'g, T>> = None;
        for (a, b) in fp.iter().zip(&ft) {
            let d = a.sub(b).square().mean();
            total = Some(match total {
                Some(t) => t.add(&d),
                None => d,
            });
        }
        Ok(total.expect("at least one tap"))
    }
}

pub fn perceptual<'g, T: Real>(pred: &Var<'g, T>, target: &Var<'g, T>, extractor: &Extractor) -> Result<Var<'g, T>> {
    extractor.distance(pred, target)
}

/// Per-term values at one level; `None` marks a disabled term.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TermValues {
    pub cb: Option<f64>,
    pub fft: Option<f64>,
    pub ssim: Option<f64>,
    pub perceptual: Option<f64>,
}

impl TermValues {
    pub fn as_array(&self) -> [Option<f64>; 4] {
        [self.cb, self.fft, self.ssim, self.perceptual]
    }
}

pub const TERM_NAMES: [&str; 4] = ["cb", "fft", "ssim", "perceptual"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelReport {
    pub weight: f64,
    /// Raw (unweighted) terms; all `None` when the level is not supervised.
    pub terms: TermValues,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    /// `λ_cb, λ_fft, λ_ssim, λ_p`.
    pub lambdas: [f64; 4],
    pub levels: Vec<LevelReport>,
    pub total: f64,
}

impl LossReport {
    /// `Σ_levels w · Σ_terms λ · term` from the stored parts.
    pub fn recompute(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| {
                l.weight
                    * l.terms.as_array().iter().zip(self.lambdas).map(|(t, lam)| t.map_or(0.0, |v| lam * v)).sum::<f64>()
            })
            .sum()
    }

    /// Weighted contribution of one term summed over levels.
    pub fn contribution(&self, term: usize) -> f64 {
        self.levels.iter().map(|l| l.weight * self.lambdas[term] * l.terms.as_array()[term].unwrap_or(0.0)).sum()
    }

    /// Names of terms present at any level.
    pub fn active_terms(&self) -> Vec<&'static str> {
        (0..4).filter(|&i| self.levels.iter().any(|l| l.terms.as_array()[i].is_some())).map(|i| TERM_NAMES[i]).collect()
    }

    pub fn breakdown(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

/// Ground truth resized to each prediction level with the model's bilinear operator.
pub fn gt_pyramid<'g, T: Real>(gt: &Var<'g, T>, preds: &[Var<'g, T>]) -> Vec<Var<'g, T>> {
    preds
        .iter()
        .map(|p| {
            let (_, _, h, w) = p.dims4();
            gt.resize_bilinear(h, w)
        })
        .collect()
}

/// Full objective over a prediction pyramid against full-resolution ground truth.
pub fn total_loss<'g, T: Real>(
    preds: &[Var<'g, T>],
    gt: &Var<'g, T>,
    cfg: &LossConfig,
    extractor: &Extractor,
) -> Result<(Var<'g, T>, LossReport)> {
    let weights = cfg.level_weights();
    if preds.len() != weights.len() {
        return Err(Error::Shape(format!("expected {} pyramid levels, got {}", weights.len(), preds.len())));
    }
    let lambdas = [cfg.lambda_cb, cfg.lambda_fft, cfg.lambda_ssim, cfg.lambda_perceptual];
    let targets = gt_pyramid(gt, preds);
    let mut total: Option<Var<'g, T>> = None;
    let mut levels = Vec::new();
    for ((pred, target), &weight) in preds.iter().zip(&targets).zip(&weights) {
        let mut terms = TermValues::default();
        if weight > 0.0 {
            let enabled = [cfg.charbonnier, cfg.fft, cfg.ssim, cfg.perceptual];
            for (i, on) in enabled.into_iter().enumerate() {
                if !on {
                    continue;
                }
                let v = match i {
                    0 => charbonnier(pred, target, cfg.epsilon)?,
                    1 => fft_l1(pred, target)?,
                    2 => ssim_loss(pred, target)?,
                    _ => perceptual(pred, target, extractor)?,
                };
                let raw = v.value().item().to_f64_lossy();
                match i {
                    0 => terms.cb = Some(raw),
                    1 => terms.fft = Some(raw),
                    2 => terms.ssim = Some(raw),
                    _ => terms.perceptual = Some(raw),
                }
                let scaled = v.scale(T::lit(weight * lambdas[i]));
                total = Some(match total {
                    Some(t) => t.add(&scaled),
                    None => scaled,
                });
            }
        }
        levels.push(LevelReport { weight, terms });
    }
    let total = total.unwrap_or_else(|| gt.graph().constant(Tensor::scalar(T::zero())));
    let report = LossReport { lambdas, levels, total: total.value().item().to_f64_lossy() };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], w[120]);
        assert!(w[60] > w[59]);
    }
}
