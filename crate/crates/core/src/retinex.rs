//! Retinex decomposition, branch corrections and the full restore pipeline.

use retinexdual_autograd::{Graph, Real, Tensor, Var};

use crate::config::{Branch, ModelConfig};
use crate::error::{Error, Result};
use crate::fia::Fia;
use crate::gssm::GLOBAL_EMBEDDING;
use crate::image::{ImageTensor, RestorationOutput, RetinexPair};
use crate::layers::Conv;
use crate::params::{Ctx, Init, ParamStore};
use crate::samba::{Samba, MIN_SIDE};

/// Two 3x3 convolutions and a 1x1 projection to three reflectance channels
/// and one illumination logit.
#[derive(Clone, Debug)]
pub struct Decomposer {
    pub conv1: Conv,
    pub conv2: Conv,
    pub proj: Conv,
}

/// Decomposer output as graph variables.
pub struct Decomposition<'g, T: Real> {
    pub reflectance: Var<'g, T>,
    pub illumination: Var<'g, T>,
    /// Pre-activation of the illumination channel: `illumination = softplus(logit)`.
    pub logit: Var<'g, T>,
}

impl Decomposer {
    pub fn new(width: usize) -> Self {
        Self {
            conv1: Conv::new("decomposer.conv1", 3, width, 3),
            conv2: Conv::new("decomposer.conv2", width, width, 3),
            proj: Conv::new("decomposer.proj", width, 4, 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.proj.param_count()
    }

    /// Starts as a pass-through: the first three feature channels copy the
    /// input, reflectance is scaled by `1/ln 2` and the illumination logit is 0,
    /// so `R_eff ⊙ softplus(0) = I`.
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        for conv in [&self.conv1, &self.conv2] {
            let random: Tensor<T> = init.fan_in_uniform(&conv.weight_shape(), conv.cin * 9);
            store.insert(conv.weight_name(), conv.dirac(&random, 3, 1.0));
            let mut bias: Tensor<T> = init.fan_in_uniform(&[conv.cout], conv.cin * 9);
            bias.data_mut()[..3].iter_mut().for_each(|b| *b = T::zero());
            store.insert(conv.bias_name(), bias);
        }
        let mut w = self.proj.dirac(&Tensor::zeros(self.proj.weight_shape().to_vec()), 3, 1.0 / 2f64.ln());
        w.data_mut()[3 * self.proj.cin..].iter_mut().for_each(|v| *v = T::zero());
        store.insert(self.proj.weight_name(), w);
        store.insert(self.proj.bias_name(), Tensor::zeros([4]));
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Decomposition<'g, T> {
        let slope = T::lit(0.2);
        let h = self.conv1.forward(ctx, x).leaky_relu(slope);
        let h = self.conv2.forward(ctx, &h).leaky_relu(slope);
        let out = self.proj.forward(ctx, &h);
        let logit = out.slice_channels(3, 1);
        Decomposition { reflectance: out.slice_channels(0, 3), illumination: logit.softplus(), logit }
    }
}

/// `I = R ⊙ L` with the single illumination channel broadcast over color.
pub fn recompose<'g, T: Real>(reflectance: &Var<'g, T>, illumination: &Var<'g, T>) -> Result<Var<'g, T>> {
    let (rn, _, rh, rw) = reflectance.dims4();
    let (ln, lc, lh, lw) = illumination.dims4();
    if (rn, rh, rw) != (ln, lh, lw) || lc != 1 {
        return Err(Error::Shape(format!(
            "reflectance {:?} and illumination {:?} do not recompose",
            reflectance.shape(),
            illumination.shape()
        )));
    }
    Ok(reflectance.mul(illumination))
}

/// A correction sub-network applied to one Retinex component.
#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum BranchNet {
    Samba(Samba),
    Fia(Fia),
}

impl BranchNet {
    fn build(kind: Branch, prefix: &str, channels: usize, cfg: &ModelConfig) -> Option<Self> {
        match kind {
            Branch::Samba => Some(BranchNet::Samba(Samba::new(prefix, channels, cfg))),
            Branch::Fia => Some(BranchNet::Fia(Fia::new(prefix, channels, cfg))),
            Branch::None => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            BranchNet::Samba(s) => s.param_count(),
            BranchNet::Fia(f) => f.param_count(),
        }
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) {
        match self {
            BranchNet::Samba(s) => s.init(store, init),
            BranchNet::Fia(f) => f.init(store, init),
        }
    }

    fn head(&self) -> &Conv {
        match self {
            BranchNet::Samba(s) => &s.head,
            BranchNet::Fia(f) => &f.head,
        }
    }
}

/// Graph-level result of one forward pass.
pub struct Forward<'g, T: Real> {
    pub decomposition: Decomposition<'g, T>,
    /// Corrected components at full scale.
    pub reflectance: Var<'g, T>,
    pub illumination: Var<'g, T>,
    /// `(R_i, L_i)` at scales 1, 1/2, 1/4.
    pub pairs: Vec<(Var<'g, T>, Var<'g, T>)>,
    /// Unclamped `R_i ⊙ L_i`.
    pub pyramid: Vec<Var<'g, T>>,
}

#[derive(Clone, Debug)]
pub struct RetinexDual {
    pub config: ModelConfig,
    pub decomposer: Decomposer,
    pub reflectance: Option<BranchNet>,
    pub illumination: Option<BranchNet>,
    /// 1x1 reflectance heads on the half and quarter scale decoder features.
    pub pyramid_heads: Option<[Conv; 2]>,
}

/// Number of pyramid levels.
pub const LEVELS: usize = 3;

impl RetinexDual {
    pub fn new(config: &ModelConfig) -> Self {
        let reflectance = BranchNet::build(config.reflectance_branch, "reflectance", 3, config);
        let illumination = BranchNet::build(config.illumination_branch, "illumination", 1, config);
        let pyramid_heads = match &reflectance {
            Some(BranchNet::Samba(s)) => {
                Some([1, 2].map(|i| Conv::new(format!("reflectance.pyramid{i}"), s.widths[i], 3, 1)))
            }
            _ => None,
        };
        Self {
            config: config.clone(),
            decomposer: Decomposer::new(config.decomposer_width),
            reflectance,
            illumination,
            pyramid_heads,
        }
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        self.decomposer.init(&mut store, &mut init);
        if let Some(b) = &self.reflectance {
            b.init(&mut store, &mut init);
        }
        if let Some(b) = &self.illumination {
            b.init(&mut store, &mut init);
        }
        for h in self.pyramid_heads.iter().flatten() {
            h.init_zero(&mut store);
        }
        store
    }

    /// Zero every correction head so both branches emit exactly zero.
    pub fn zero_correction_heads<T: Real>(&self, store: &mut ParamStore<T>) {
        let heads = self.reflectance.iter().chain(&self.illumination).map(BranchNet::head);
        for h in heads.chain(self.pyramid_heads.iter().flatten()) {
            store.zero_prefix(&format!("{}.", h.name));
        }
    }

    /// Closed-form parameter counts per top-level group.
    pub fn group_counts(&self) -> Vec<(&'static str, usize)> {
        let mut out = vec![("decomposer", self.decomposer.param_count())];
        let heads: usize = self.pyramid_heads.iter().flatten().map(Conv::param_count).sum();
        out.push(("reflectance", self.reflectance.as_ref().map_or(0, BranchNet::param_count) + heads));
        out.push(("illumination", self.illumination.as_ref().map_or(0, BranchNet::param_count)));
        let uses_mixer = [&self.reflectance, &self.illumination]
            .iter()
            .any(|b| matches!(b, Some(BranchNet::Samba(s)) if !s.encoders[0].mixers.is_empty()));
        out.push((GLOBAL_EMBEDDING, if uses_mixer { self.config.embed_rank * self.config.state_dim } else { 0 }));
        out
    }

    pub fn param_count(&self) -> usize {
        self.group_counts().iter().map(|(_, n)| n).sum()
    }

    /// Check that `store` holds exactly the parameters this model expects.
    pub fn check_store<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        let expected = self.init::<f32>(0).signature();
        let found = store.signature();
        if expected == found {
            return Ok(());
        }
        let missing: Vec<_> = expected.iter().filter(|e| !found.contains(e)).map(|e| e.0.clone()).collect();
        let extra: Vec<_> = found.iter().filter(|f| !expected.contains(f)).map(|f| f.0.clone()).collect();
        Err(Error::Shape(format!(
            "weights do not match the model (missing or reshaped: {missing:?}; unexpected: {extra:?})"
        )))
    }

    pub fn validate_input<T: Real>(x: &Tensor<T>) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1] != 3 {
            return Err(Error::Shape(format!("expected [n, 3, H, W] input, got {:?}", x.shape())));
        }
        let (_, _, h, w) = x.dims4();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::TooSmall { height: h, width: w, min: MIN_SIDE });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { what: "input image".into() });
        }
        Ok(())
    }

    pub fn decompose<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Decomposition<'g, T>> {
        Self::validate_input(x.value())?;
        Ok(self.decomposer.forward(ctx, x))
    }

    pub fn forward<'g, T: Real>(&self, ctx: &Ctx<'g, T>, x: &Var<'g, T>) -> Result<Forward<'g, T>> {
        let dec = self.decompose(ctx, x)?;
        let (_, _, h, w) = x.dims4();

        let mut features = None;
        let reflectance = match &self.reflectance {
            Some(BranchNet::Samba(s)) => {
                let out = s.forward(ctx, &dec.reflectance)?;
                features = Some(out.features);
                dec.reflectance.add(&out.correction)
            }
            Some(BranchNet::Fia(f)) => dec.reflectance.add(&f.forward(ctx, &dec.reflectance)?),
            None => dec.reflectance.clone(),
        };
        // corrections act on the logit so illumination stays positive
        let illumination = match &self.illumination {
            Some(BranchNet::Samba(s)) => dec.logit.add(&s.forward(ctx, &dec.illumination)?.correction).softplus(),
            Some(BranchNet::Fia(f)) => dec.logit.add(&f.forward(ctx, &dec.illumination)?).softplus(),
            None => dec.illumination.clone(),
        };

        let mut pairs = vec![(reflectance.clone(), illumination.clone())];
        for level in 1..LEVELS {
            let (lh, lw) = (h >> level, w >> level);
            let r = match (&features, &self.pyramid_heads) {
                (Some(f), Some(heads)) => {
                    dec.reflectance.resize_bilinear(lh, lw).add(&heads[level - 1].forward(ctx, &f[level]))
                }
                _ => reflectance.resize_bilinear(lh, lw),
            };
            pairs.push((r, illumination.resize_bilinear(lh, lw)));
        }
        let pyramid = pairs.iter().map(|(r, l)| recompose(r, l)).collect::<Result<Vec<_>>>()?;
        for (i, p) in pyramid.iter().enumerate() {
            if !p.value().all_finite() {
                return Err(Error::NonFinite { what: format!("restored level {i}") });
            }
        }
        Ok(Forward { decomposition: dec, reflectance, illumination, pairs, pyramid })
    }

    /// Deterministic single-pass restoration of one image.
    pub fn restore(&self, store: &ParamStore<f32>, image: &ImageTensor) -> Result<RestorationOutput> {
        let pixels = image.height() * image.width();
        if pixels > self.config.max_pixels {
            return Err(Error::TooLarge { pixels, limit: self.config.max_pixels });
        }
        let graph = Graph::inference();
        let ctx = Ctx::eval(&graph, store);
        let x = graph.constant(image.to_batch::<f32>());
        let fwd = self.forward(&ctx, &x)?;
        let pair = |r: &Var<'_, f32>, l: &Var<'_, f32>| {
            let (_, _, h, w) = r.dims4();
            RetinexPair {
                reflectance: r.value().clone().reshape([3, h, w]),
                illumination: l.value().clone().reshape([1, h, w]),
            }
        };
        let pyramid = fwd.pyramid.iter().map(|p| ImageTensor::clamped(p.value())).collect::<Result<Vec<_>>>()?;
        Ok(RestorationOutput {
            final_image: pyramid[0].clone(),
            pyramid,
            retinex_pyramid: fwd.pairs.iter().map(|(r, l)| pair(r, l)).collect(),
            decomposition: pair(&fwd.decomposition.reflectance, &fwd.decomposition.illumination),
        })
    }
}
