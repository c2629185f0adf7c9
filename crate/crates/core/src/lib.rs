//! Multimodal oscillating exponentially modified Gaussian (MEMG) echo fitting.
//!
//! The crate fits sums of skewed, oscillating Gaussian echo components to 1-D
//! acoustic frames (A-scans) with a staged Levenberg-Marquardt scheme, scores
//! the fits, and turns the fitted parameters into standardized features for a
//! random-forest echo-vs-clutter classifier.
//!
//! Units: time in milliseconds, frequency in kilohertz.

pub mod classify;
pub mod error;
pub mod features;
pub mod io;
pub mod lm;
pub mod model;
pub mod preprocess;
pub mod staged;
pub mod synth;

pub use error::{MemgError, Result};
pub use model::{EchoParams, Frame, Param, ParamMask, ParamSet};
pub use staged::{FitResult, InitConfig, StagePlan};
