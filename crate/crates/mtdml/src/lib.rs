//! Moving-target defense for ML classifiers.
//!
//! A base classifier is diversified into pools of student models (weight
//! perturbation, retraining on transformed data, selective adversarial
//! training). A confidence-based scheduler serves predictions from the pool
//! and retires it after a query budget, swapping in a pre-generated standby
//! pool. An attack harness (FGSM, PGD, C&W, SPSA, surrogate extraction) and
//! an evaluation suite measure what the rotation buys.

pub mod attacks;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod nn;
pub mod par;
pub mod pool;
pub mod scheduler;
pub mod server;

pub use error::{Error, Result};
