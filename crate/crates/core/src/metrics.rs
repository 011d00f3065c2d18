//! Image quality metrics, the spatial-versus-spectral degradation probe and
//! parameter accounting.

use retinexdual_autograd::{Graph, Plane2d, Real, Tensor};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::objectives;
use crate::params::ParamStore;

/// `10 log10(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("psnr operands {:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

pub fn psnr_images(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    psnr(a.tensor(), b.tensor(), 1.0)
}

/// Mean SSIM of two `[n, c, H, W]` tensors, evaluated in `f64` with the same
/// core as the SSIM loss.
pub fn ssim_tensors<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let g = Graph::<f64>::inference();
    let v = objectives::ssim(&g.constant(a.cast()), &g.constant(b.cast()))?;
    Ok(v.value().item())
}

pub fn ssim_metric(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    ssim_tensors(&a.to_batch::<f64>(), &b.to_batch::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    GlobalDominant,
    LocalDominant,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyGapReport {
    pub psnr_spatial: f64,
    pub psnr_frequency: f64,
    pub verdict: Verdict,
}

/// `log(1 + |X|)` of the full 2-D spectrum of each channel, min-max scaled to `[0, 1]`.
pub fn normalized_log_spectrum(image: &ImageTensor) -> Vec<Vec<f64>> {
    let (h, w) = (image.height(), image.width());
    let plane = Plane2d::<f64>::new(h, w);
    (0..3)
        .map(|c| {
            let mut buf: Vec<_> = image.tensor().data()[c * h * w..(c + 1) * h * w]
                .iter()
                .map(|&v| retinexdual_autograd::Complex::new(v as f64, 0.0))
                .collect();
            plane.transform(&mut buf, false);
            let mag: Vec<f64> = buf.iter().map(|z| z.norm().ln_1p()).collect();
            let (lo, hi) = mag.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let span = hi - lo;
            mag.iter().map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect()
        })
        .collect()
}

/// Compare a degraded image with its clean source in pixel space and in
/// normalized log-amplitude spectrum space.
pub fn frequency_gap(degraded: &ImageTensor, clean: &ImageTensor) -> Result<FrequencyGapReport> {
    let psnr_spatial = psnr_images(degraded, clean)?;
    let sd = normalized_log_spectrum(degraded);
    let sc = normalized_log_spectrum(clean);
    let n = sd[0].len();
    let per_channel: Vec<f64> = sd
        .iter()
        .zip(&sc)
        .map(|(a, b)| {
            psnr(&Tensor::new([n], a.clone()), &Tensor::new([n], b.clone()), 1.0).expect("equal lengths")
        })
        .collect();
    let psnr_frequency = per_channel.iter().sum::<f64>() / per_channel.len() as f64;
    let verdict = if psnr_frequency >= psnr_spatial { Verdict::GlobalDominant } else { Verdict::LocalDominant };
    Ok(FrequencyGapReport { psnr_spatial, psnr_frequency, verdict })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub groups: Vec<(String, usize)>,
    pub total: usize,
}

pub const PARAM_GROUPS: [&str; 4] = ["decomposer", "reflectance", "illumination", crate::gssm::GLOBAL_EMBEDDING];

/// Exact parameter counts per top-level group of a parameter store.
pub fn count_params<T: Real>(store: &ParamStore<T>) -> ParamCounts {
    let groups = PARAM_GROUPS.iter().map(|g| (g.to_string(), store.count_prefix(g))).collect();
    ParamCounts { groups, total: store.count() }
}
