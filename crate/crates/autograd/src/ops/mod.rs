//! Differentiable operations, implemented as methods on [`crate::Var`].

pub mod conv;
pub mod elementwise;
pub mod fft;
pub mod linalg;
pub mod norm;
pub mod policy;
pub mod scan;
pub mod spatial;
