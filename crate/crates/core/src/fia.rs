//! Illumination branch: Fourier correction blocks.

use std::f64::consts::PI;

use retinexdual_autograd::{Real, Tensor, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::layers::{ChannelScale, Conv, LayerNorm};
use crate::params::{Ctx, Init, ParamStore};

/// Amplitude and phase of the half-plane spectrum.
pub struct Spectrum<'g, T: Real> {
    pub amplitude: Var<'g, T>,
    pub phase: Var<'g, T>,
}

pub fn fft_decompose<'g, T: Real>(x: &Var<'g, T>) -> Spectrum<'g, T> {
    let (re, im) = x.rfft2();
    Spectrum { amplitude: re.hypot(&im), phase: im.atan2(&re) }
}

/// Inverse of [`fft_decompose`] for an output of width `width`.
pub fn fft_compose<'g, T: Real>(s: &Spectrum<'g, T>, width: usize) -> Var<'g, T> {
    let re = s.amplitude.mul(&s.phase.cos());
    let im = s.amplitude.mul(&s.phase.sin());
    re.irfft2(&im, width)
}

/// A pointwise `Conv1x1 → ReLU → Conv1x1` map.
#[derive(Clone, Debug)]
pub struct PointMlp {
    pub first: Conv,
    pub second: Conv,
}

impl PointMlp {
    fn new(prefix: &str, width: usize) -> Self {
        Self {
            first: Conv::new(format!("{prefix}.0"), width, width, 1),
            second: Conv::new(format!("{prefix}.1"), width, width, 1),
        }
    }

    fn param_count(&self) -> usize {
        self.first.param_count() + self.second.param_count()
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.first.init(store, init);
        self.second.init(store, init);
    }

    fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        self.second.forward(ctx, &self.first.forward(ctx, x).relu())
    }

    fn set_identity<T: Real>(&self, store: &mut ParamStore<T>) {
        for c in [&self.first, &self.second] {
            let w = c.dirac(&Tensor::zeros(c.weight_shape().to_vec()), c.cout, 1.0);
            store.set(&c.weight_name(), w);
            store.set(&c.bias_name(), Tensor::zeros([c.cout]));
        }
    }
}

/// `x' = Conv3(x ⊙ x̂) + s ⊙ x` with `x̂` a spectral (or, ablated, spatial) remap of `x`.
#[derive(Clone, Debug)]
pub struct Fcb {
    pub width: usize,
    pub norm: Option<LayerNorm>,
    pub fourier: bool,
    pub amplitude: PointMlp,
    /// Absent when the block works spatially.
    pub phase: Option<PointMlp>,
    pub mix: Conv,
    pub scale: ChannelScale,
}

impl Fcb {
    pub fn new(prefix: &str, width: usize, pre_norm: bool, fourier: bool) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            width,
            norm: pre_norm.then(|| LayerNorm::new(p("norm"), width)),
            fourier,
            amplitude: PointMlp::new(&p(if fourier { "amplitude" } else { "spatial" }), width),
            phase: fourier.then(|| PointMlp::new(&p("phase"), width)),
            mix: Conv::new(p("mix"), width, width, 3),
            scale: ChannelScale::new(p("scale"), width),
        }
    }

    pub fn param_count(&self) -> usize {
        self.norm.as_ref().map_or(0, LayerNorm::param_count)
            + self.amplitude.param_count()
            + self.phase.as_ref().map_or(0, PointMlp::param_count)
            + self.mix.param_count()
            + self.scale.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        if let Some(n) = &self.norm {
            n.init(store);
        }
        self.amplitude.init(store, init);
        if let Some(p) = &self.phase {
            p.init(store, init);
        }
        self.mix.init(store, init);
        self.scale.init(store);
    }

    /// Identity 1x1 maps in both spectral paths.
    pub fn set_spectral_identity<T: Real>(&self, store: &mut ParamStore<T>) {
        self.amplitude.set_identity(store);
        if let Some(p) = &self.phase {
            p.set_identity(store);
        }
    }

    /// The remapped signal `x̂` computed from the (normalized) input.
    pub fn remap<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let src = match &self.norm {
            Some(n) => n.forward(ctx, x),
            None => x.clone(),
        };
        let Some(phase_mlp) = &self.phase else {
            return Ok(self.amplitude.forward(ctx, &src));
        };
        let (_, _, _, w) = src.dims4();
        let s = fft_decompose(&src);
        if !s.amplitude.value().all_finite() {
            return Err(Error::NonFinite { what: format!("spectrum of {}", self.mix.name) });
        }
        let pi = T::lit(PI);
        let amplitude = self.amplitude.forward(ctx, &s.amplitude);
        let phase = phase_mlp.forward(ctx, &s.phase.scale(T::one() / pi)).tanh().scale(pi);
        Ok(fft_compose(&Spectrum { amplitude, phase }, w))
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let xh = self.remap(ctx, x)?;
        Ok(self.mix.forward(ctx, &x.mul(&xh)).add(&self.scale.forward(ctx, x)))
    }
}

#[derive(Clone, Debug)]
pub struct Fia {
    pub channels: usize,
    pub stem: Conv,
    pub blocks: Vec<Fcb>,
    pub head: Conv,
}

impl Fia {
    pub fn new(prefix: &str, channels: usize, cfg: &ModelConfig) -> Self {
        let w = cfg.fia_width;
        Self {
            channels,
            stem: Conv::new(format!("{prefix}.stem"), channels, w, 3),
            blocks: (0..cfg.fia_blocks)
                .map(|i| Fcb::new(&format!("{prefix}.block{i}"), w, cfg.fcb_pre_norm, cfg.fourier))
                .collect(),
            head: Conv::new(format!("{prefix}.head"), w, channels, 3),
        }
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count() + self.blocks.iter().map(Fcb::param_count).sum::<usize>() + self.head.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.stem.init(store, init);
        self.blocks.iter().for_each(|b| b.init(store, init));
        self.head.init_zero(store);
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = self.stem.forward(ctx, x);
        for b in &self.blocks {
            h = b.forward(ctx, &h)?;
        }
        Ok(self.head.forward(ctx, &h))
    }
}
