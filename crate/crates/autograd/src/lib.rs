//! Reverse-mode automatic differentiation over dense `NCHW` tensors.
//!
//! A [`Graph`] records operations performed on [`Var`] handles; a single
//! [`Graph::backward`] sweep returns gradients for every leaf. The op set is
//! the one needed by image-restoration networks: convolutions, resampling,
//! layer normalization, real 2-D FFTs, a selective state-space scan and a
//! straight-through categorical assignment.

pub mod gradcheck;
mod graph;
pub mod ops;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use ops::conv::{conv2d_forward, Conv2dOptions};
pub use ops::elementwise::{sigmoid, softplus};
pub use ops::fft::{irfft2_tensor, rfft2_tensor, Plane2d};
pub use ops::policy::AssignmentGradient;
pub use ops::scan::{selective_scan_forward, ScanError};
pub use ops::spatial::{bilinear_taps, resize_bilinear_tensor, PadMode};
pub use scalar::{gemm, MatRef, Real};
pub use rustfft::num_complex::Complex;
pub use tensor::Tensor;
