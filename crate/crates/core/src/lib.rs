//! Perturbed alternating gradient descent (PA-GD) and perturbed alternating
//! proximal point (PA-PP) for two-block smooth nonconvex problems, with the
//! spectral and trajectory checks that certify their escape behaviour near
//! strict saddle points.

pub mod error;
pub mod harness;
pub mod objectives;
pub mod optimizers;
pub mod problem;
pub mod spectral;
pub mod verification;

pub use error::{Error, Result};
