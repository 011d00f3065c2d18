//! Reflectance branch: a three-level encoder-decoder of scale-adaptive blocks.

use retinexdual_autograd::{PadMode, Real, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gssm::Gssb;
use crate::layers::Conv;
use crate::params::{Ctx, Init, ParamStore};

/// Smallest accepted spatial side.
pub const MIN_SIDE: usize = 16;

/// Residual dilated block: `x + F(x)` with three dilated 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct Rdb {
    pub convs: [Conv; 3],
}

impl Rdb {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self { convs: [1, 2, 3].map(|d| Conv::new(format!("{prefix}.conv{}", d - 1), width, width, 3).dilation(d)) }
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv::param_count).sum()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.convs.iter().for_each(|c| c.init(store, init));
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Var<'g, T> {
        let slope = T::lit(0.2);
        let h = self.convs[0].forward(ctx, x).leaky_relu(slope);
        let h = self.convs[1].forward(ctx, &h).leaky_relu(slope);
        x.add(&self.convs[2].forward(ctx, &h))
    }
}

/// Scale-adaptive block.
#[derive(Clone, Debug)]
pub struct Samb {
    pub width: usize,
    pub multiscale: bool,
    pub rdb: Rdb,
    /// One dilated convolution per scale (only the first without multiscale).
    pub scale_convs: Vec<Conv>,
    /// Empty when token mixing is disabled.
    pub mixers: Vec<Gssb>,
}

impl Samb {
    pub fn new(prefix: &str, width: usize, cfg: &ModelConfig) -> Self {
        let scales = if cfg.multiscale { 3 } else { 1 };
        let mix_dim = width * scales;
        Self {
            width,
            multiscale: cfg.multiscale,
            rdb: Rdb::new(&format!("{prefix}.rdb"), width),
            scale_convs: (0..scales)
                .map(|i| {
                    Conv::new(format!("{prefix}.scale{i}"), width, width, 3)
                        .dilation(cfg.dilation_rates[i])
                        .pad_mode(PadMode::Replicate)
                })
                .collect(),
            mixers: if cfg.gssb {
                (0..cfg.gssb_per_samb).map(|i| Gssb::new(&format!("{prefix}.gssb{i}"), mix_dim, cfg)).collect()
            } else {
                Vec::new()
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.rdb.param_count()
            + self.scale_convs.iter().map(Conv::param_count).sum::<usize>()
            + self.mixers.iter().map(Gssb::param_count).sum::<usize>()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.rdb.init(store, init);
        self.scale_convs.iter().for_each(|c| c.init(store, init));
        self.mixers.iter().for_each(|m| m.init(store, init));
    }

    /// `x_i = Up(DB_i(pool_i(x_s)))` for scales 1, 1/2, 1/4.
    pub fn multiscale_expand<'g, T: Real>(&self, ctx: &Ctx<'g, T>, xs: &Var<'g, T>) -> Vec<Var<'g, T>> {
        let (_, _, h, w) = xs.dims4();
        self.scale_convs
            .iter()
            .enumerate()
            .map(|(i, conv)| {
                if i == 0 {
                    conv.forward(ctx, xs)
                } else {
                    let (sh, sw) = ((h >> i).max(1), (w >> i).max(1));
                    conv.forward(ctx, &xs.adaptive_avg_pool(sh, sw)).resize_bilinear(h, w)
                }
            })
            .collect()
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        if self.mixers.is_empty() {
            return self.forward_open(ctx, x);
        }
        self.forward_with_mixer(ctx, x, |cat| {
            let mut h = cat.clone();
            for m in &self.mixers {
                h = m.forward(ctx, &h)?;
            }
            Ok(h)
        })
    }

    /// Gates fixed at one: `Σ x_i + x_s`.
    fn forward_open<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let xs = self.rdb.forward(ctx, x);
        let branches = self.multiscale_expand(ctx, &xs);
        Ok(branches.iter().fold(xs.clone(), |acc, b| acc.add(b)))
    }

    /// Block with the token mixer replaced by `mixer`, which maps the
    /// concatenated scale features to gates of the same shape.
    pub fn forward_with_mixer<'g, T: Real>(
        &self,
        ctx: &Ctx<'g, T>,
        x: &Var<'g, T>,
        mixer: impl FnOnce(&Var<'g, T>) -> Result<Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let xs = self.rdb.forward(ctx, x);
        let branches = self.multiscale_expand(ctx, &xs);
        let cat = Var::concat_channels(&branches);
        let gates = mixer(&cat)?;
        if gates.shape() != cat.shape() {
            return Err(Error::Shape(format!("mixer returned {:?}, expected {:?}", gates.shape(), cat.shape())));
        }
        let c = self.width;
        Ok(branches
            .iter()
            .enumerate()
            .fold(xs.clone(), |acc, (i, b)| acc.add(&b.mul(&gates.slice_channels(i * c, c)))))
    }
}

/// Output of the encoder-decoder pass.
pub struct SambaOutput<'g, T: Real> {
    pub correction: Var<'g, T>,
    /// Decoder features at scales 1, 1/2, 1/4 (cropped to `side >> level`).
    pub features: [Var<'g, T>; 3],
}

#[derive(Clone, Debug)]
pub struct Samba {
    pub channels: usize,
    pub widths: [usize; 3],
    pub stem: Conv,
    pub encoders: [Samb; 3],
    pub downs: [Conv; 2],
    pub ups: [Conv; 2],
    pub head: Conv,
}

impl Samba {
    pub fn new(prefix: &str, channels: usize, cfg: &ModelConfig) -> Self {
        let w = cfg.level_widths;
        let p = |s: &str| format!("{prefix}.{s}");
        Self {
            channels,
            widths: w,
            stem: Conv::new(p("stem"), channels, w[0], 3),
            encoders: [0, 1, 2].map(|i| Samb::new(&p(&format!("level{i}")), w[i], cfg)),
            downs: [0, 1].map(|i| Conv::new(p(&format!("down{i}")), w[i], w[i + 1], 3).stride(2)),
            ups: [0, 1].map(|i| Conv::new(p(&format!("up{i}")), w[i + 1], w[i], 3)),
            head: Conv::new(p("head"), w[0], channels, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.stem.param_count()
            + self.encoders.iter().map(Samb::param_count).sum::<usize>()
            + self.downs.iter().chain(&self.ups).map(Conv::param_count).sum::<usize>()
            + self.head.param_count()
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        self.stem.init(store, init);
        for e in &self.encoders {
            e.init(store, init);
        }
        for c in self.downs.iter().chain(&self.ups) {
            c.init(store, init);
        }
        self.head.init_zero(store);
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<SambaOutput<'g, T>> {
        let (_, _, h, w) = x.dims4();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::TooSmall { height: h, width: w, min: MIN_SIDE });
        }
        let (ph, pw) = (h.next_multiple_of(4), w.next_multiple_of(4));
        let xp = if (ph, pw) == (h, w) { x.clone() } else { x.pad([0, ph - h, 0, pw - w], PadMode::Reflect) };

        let e0 = self.encoders[0].forward(ctx, &self.stem.forward(ctx, &xp))?;
        let e1 = self.encoders[1].forward(ctx, &self.downs[0].forward(ctx, &e0))?;
        let d2 = self.encoders[2].forward(ctx, &self.downs[1].forward(ctx, &e1))?;
        let d1 = self.up(ctx, 1, &d2, &e1);
        let d0 = self.up(ctx, 0, &d1, &e0);
        let correction = self.head.forward(ctx, &d0).crop(0, 0, h, w);
        let crop = |v: &Var<'g, T>, level: usize| {
            let (lh, lw) = (h >> level, w >> level);
            let (_, _, vh, vw) = v.dims4();
            if (vh, vw) == (lh, lw) {
                v.clone()
            } else {
                v.crop(0, 0, lh, lw)
            }
        };
        Ok(SambaOutput { correction, features: [crop(&d0, 0), crop(&d1, 1), crop(&d2, 2)] })
    }

    fn up<'g, T: Real>(&self, ctx: &Ctx<'g, T>, level: usize, deep: &Var<'g, T>, skip: &Var<'g, T>) -> Var<'g, T> {
        let (_, _, h, w) = skip.dims4();
        self.ups[level].forward(ctx, &deep.resize_bilinear(h, w)).add(skip)
    }
}
