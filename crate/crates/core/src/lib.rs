//! RetinexDual image restoration.
//!
//! An image is split into reflectance and illumination, each corrected by a
//! dedicated sub-network (a state-space encoder-decoder for reflectance, a
//! Fourier-domain adaptor for illumination) and recombined. The crate also
//! holds the training objective, optimizer loop, checkpoints, datasets and
//! metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fia;
pub mod gssm;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod objectives;
pub mod params;
pub mod retinex;
pub mod samba;
pub mod training;

pub use config::{Branch, LossConfig, ModelConfig, Preset, RunConfig, TrainConfig};
pub use error::{Error, Result};
pub use image::{ImageTensor, RestorationOutput, RetinexPair};
pub use params::{Ctx, Mode, ParamStore};
pub use retinex::RetinexDual;
pub use retinexdual_autograd as autograd;
