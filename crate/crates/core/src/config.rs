//! Run configuration: model shape, objective, optimization recipe.
//!
//! Configs serialize to TOML with a closed schema. Dotted overrides
//! (`train.lr_init=5e-4`) are checked against the type already present at
//! that path, so a typo or a wrongly typed value is reported rather than
//! silently ignored.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named scale of the whole configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::config("preset", format!("unknown preset `{other}` (expected desk or full)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        })
    }
}

/// Sub-network used for one Retinex component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Samba,
    Fia,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Width of the decomposer's two 3x3 convolutions.
    pub decomposer_width: usize,
    /// Channel width at each of the three encoder-decoder levels.
    pub level_widths: [usize; 3],
    /// Token-mixer blocks stacked inside each scale-adaptive block.
    pub gssb_per_samb: usize,
    /// Dilation of the per-scale convolution at scales 1, 1/2, 1/4.
    pub dilation_rates: [usize; 3],
    /// Hidden state size of the scan.
    pub state_dim: usize,
    /// Number of routing groups (embedding rows).
    pub groups: usize,
    /// Inner rank of the factorized embedding bank.
    pub embed_rank: usize,
    /// Side of the learnable positional grid, resized to the input.
    pub pos_grid: usize,
    pub ffn_expansion: usize,
    pub policy_temperature: f64,
    /// Width and depth of the illumination adaptor.
    pub fia_width: usize,
    pub fia_blocks: usize,
    /// Normalize channels before the spectral transform in each block.
    pub fcb_pre_norm: bool,
    pub reflectance_branch: Branch,
    pub illumination_branch: Branch,
    /// Three-scale feature expansion inside each scale-adaptive block.
    pub multiscale: bool,
    /// State-space token mixing; off leaves the fusion gates open.
    pub gssb: bool,
    /// Spectral processing in the illumination blocks; off uses a spatial map.
    pub fourier: bool,
    /// Largest image (in pixels) restored in a single pass.
    pub max_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub charbonnier: bool,
    pub fft: bool,
    pub ssim: bool,
    pub perceptual: bool,
    /// Supervise the half and quarter scale outputs.
    pub multilevel: bool,
    /// Geometric level weights; off weights every level equally.
    pub scaling: bool,
    pub lambda_cb: f64,
    pub lambda_fft: f64,
    pub lambda_ssim: f64,
    pub lambda_perceptual: f64,
    pub epsilon: f64,
    /// VGG16 weights in safetensors format; empty selects the seeded random extractor.
    pub perceptual_weights: String,
    pub extractor_seed: u64,
}

impl LossConfig {
    pub fn level_weights(&self) -> [f64; 3] {
        match (self.multilevel, self.scaling) {
            (false, _) => [1.0, 0.0, 0.0],
            (true, true) => [1.0, 0.5, 0.25],
            (true, false) => [1.0, 1.0, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub max_steps: usize,
    pub patch: usize,
    pub batch: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    /// Steps between validation passes (0 disables).
    pub val_every: usize,
    pub hflip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self {
            decomposer_width: 16,
            level_widths: [16, 32, 64],
            gssb_per_samb: 1,
            dilation_rates: [1, 2, 3],
            state_dim: 8,
            groups: 64,
            embed_rank: 32,
            pos_grid: 16,
            ffn_expansion: 2,
            policy_temperature: 1.0,
            fia_width: 16,
            fia_blocks: 2,
            fcb_pre_norm: true,
            reflectance_branch: Branch::Samba,
            illumination_branch: Branch::Fia,
            multiscale: true,
            gssb: true,
            fourier: true,
            max_pixels: 1 << 20,
        }
    }

    pub fn full() -> Self {
        Self {
            decomposer_width: 40,
            level_widths: [40, 80, 160],
            gssb_per_samb: 2,
            state_dim: 16,
            groups: 128,
            embed_rank: 64,
            fia_width: 64,
            fia_blocks: 4,
            max_pixels: 1 << 22,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.decomposer_width", self.decomposer_width),
            ("model.state_dim", self.state_dim),
            ("model.embed_rank", self.embed_rank),
            ("model.pos_grid", self.pos_grid),
            ("model.ffn_expansion", self.ffn_expansion),
            ("model.fia_width", self.fia_width),
            ("model.max_pixels", self.max_pixels),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if self.level_widths.contains(&0) {
            return Err(Error::config("model.level_widths", "widths must be positive"));
        }
        if self.level_widths.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config("model.level_widths", "widths must be non-decreasing with depth"));
        }
        if self.dilation_rates.contains(&0) {
            return Err(Error::config("model.dilation_rates", "rates must be positive"));
        }
        if self.groups < 2 {
            return Err(Error::config("model.groups", "at least two routing groups are required"));
        }
        if !(self.policy_temperature > 0.0 && self.policy_temperature.is_finite()) {
            return Err(Error::config("model.policy_temperature", "must be a positive finite number"));
        }
        Ok(())
    }
}

impl LossConfig {
    pub fn defaults() -> Self {
        Self {
            charbonnier: true,
            fft: true,
            ssim: true,
            perceptual: true,
            multilevel: true,
            scaling: true,
            lambda_cb: 1.0,
            lambda_fft: 0.1,
            lambda_ssim: 0.5,
            lambda_perceptual: 0.4,
            epsilon: 1e-3,
            perceptual_weights: String::new(),
            extractor_seed: 7,
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        for (path, v) in [
            ("loss.lambda_cb", self.lambda_cb),
            ("loss.lambda_fft", self.lambda_fft),
            ("loss.lambda_ssim", self.lambda_ssim),
            ("loss.lambda_perceptual", self.lambda_perceptual),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(path, "weights must be finite and non-negative"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("loss.epsilon", "must be positive"));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            lr_init: 1e-4,
            lr_final: 1e-7,
            max_steps: 500,
            patch: 64,
            batch: 2,
            seed: 0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            val_every: 100,
            hflip: true,
        }
    }

    pub fn full() -> Self {
        Self { max_steps: 300_000, patch: 768, batch: 6, val_every: 5_000, ..Self::desk() }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_final <= self.lr_init) {
            return Err(Error::config("train.lr_final", "must not exceed train.lr_init"));
        }
        if !(self.lr_final >= 0.0) {
            return Err(Error::config("train.lr_final", "must be non-negative"));
        }
        if self.patch == 0 || !self.patch.is_multiple_of(4) {
            return Err(Error::config("train.patch", "must be a positive multiple of 4"));
        }
        if self.patch < 16 {
            return Err(Error::config("train.patch", "must be at least 16"));
        }
        if self.batch == 0 {
            return Err(Error::config("train.batch", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::config("train.max_steps", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("train.beta1", "betas must lie in [0, 1)"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip", "must be positive"));
        }
        Ok(())
    }
}

/// Ablation switches accepted as `--ablate key=off`.
pub const ABLATION_KEYS: &[&str] = &[
    "loss.cb",
    "loss.fft",
    "loss.ssim",
    "loss.perceptual",
    "loss.multilevel",
    "loss.scaling",
    "arch.fia",
    "arch.samba",
    "arch.multiscale",
    "arch.gssb",
    "arch.fourier",
];

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self {
                preset,
                model: ModelConfig::desk(),
                loss: LossConfig::defaults(),
                train: TrainConfig::desk(),
            },
            Preset::Full => Self {
                preset,
                model: ModelConfig::full(),
                loss: LossConfig::defaults(),
                train: TrainConfig::full(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let path = e.span().map(|s| locate(text, s.start)).unwrap_or_else(|| "config".into());
            Error::config(path, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `section.key=value`; the value must parse as the existing type.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must have the form key=value"))?;
        let (path, raw) = (path.trim(), raw.trim());
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let mut slot = &mut root;
        for part in path.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::config(path, "unknown configuration key"))?;
        }
        *slot = parse_like(slot, raw).map_err(|m| Error::config(path, m))?;
        let updated: RunConfig = root.try_into().map_err(|e: toml::de::Error| Error::config(path, e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Apply `name=off` (or `name=on`) for one of [`ABLATION_KEYS`].
    pub fn apply_ablation(&mut self, assignment: &str) -> Result<()> {
        let (key, state) = assignment.split_once('=').unwrap_or((assignment, "off"));
        let on = match state.trim() {
            "off" => false,
            "on" => true,
            other => return Err(Error::config(key, format!("expected `off` or `on`, got `{other}`"))),
        };
        let default = RunConfig::preset(self.preset);
        match key.trim() {
            "loss.cb" => self.loss.charbonnier = on,
            "loss.fft" => self.loss.fft = on,
            "loss.ssim" => self.loss.ssim = on,
            "loss.perceptual" => self.loss.perceptual = on,
            "loss.multilevel" => self.loss.multilevel = on,
            "loss.scaling" => self.loss.scaling = on,
            "arch.fia" => {
                self.model.illumination_branch = if on { default.model.illumination_branch } else { Branch::None }
            }
            "arch.samba" => {
                self.model.reflectance_branch = if on { default.model.reflectance_branch } else { Branch::None }
            }
            "arch.multiscale" => self.model.multiscale = on,
            "arch.gssb" => self.model.gssb = on,
            "arch.fourier" => self.model.fourier = on,
            other => {
                return Err(Error::config(other, format!("unknown ablation; expected one of {}", ABLATION_KEYS.join(", "))))
            }
        }
        self.validate()
    }
}

fn parse_like(existing: &toml::Value, raw: &str) -> std::result::Result<toml::Value, String> {
    use toml::Value;
    let unquoted = raw.trim_matches('"');
    match existing {
        Value::Boolean(_) => match raw {
            "true" | "on" => Ok(Value::Boolean(true)),
            "false" | "off" => Ok(Value::Boolean(false)),
            _ => Err(format!("expected a boolean, got `{raw}`")),
        },
        Value::Integer(_) => raw
            .parse::<i64>()
            .ok()
            .filter(|v| *v >= 0)
            .map(Value::Integer)
            .ok_or_else(|| format!("expected a non-negative integer, got `{raw}`")),
        Value::Float(_) => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Float)
            .ok_or_else(|| format!("expected a number, got `{raw}`")),
        Value::String(_) => Ok(Value::String(unquoted.to_string())),
        Value::Array(items) => {
            let parsed: Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .map_err(|_| format!("expected an array, got `{raw}`"))?
                .remove("v")
                .ok_or("expected an array")?;
            match &parsed {
                Value::Array(new) if new.len() == items.len() => {
                    let out: std::result::Result<Vec<_>, _> = new
                        .iter()
                        .zip(items)
                        .map(|(n, old)| parse_like(old, &n.to_string()))
                        .collect();
                    out.map(Value::Array)
                }
                _ => Err(format!("expected an array of {} items, got `{raw}`", items.len())),
            }
        }
        _ => Err("this key cannot be overridden".into()),
    }
}

/// Best-effort `section.key` naming for a byte offset in a TOML document.
fn locate(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut key = String::new();
    let mut pos = 0;
    for line in text.lines() {
        let t = line.trim();
        if pos > offset {
            break;
        }
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').to_string();
            key.clear();
        } else if let Some((k, _)) = t.split_once('=') {
            key = k.trim().to_string();
        }
        pos += line.len() + 1;
    }
    match (section.is_empty(), key.is_empty()) {
        (true, _) => if key.is_empty() { "config".into() } else { key },
        (false, true) => section,
        (false, false) => format!("{section}.{key}"),
    }
}
