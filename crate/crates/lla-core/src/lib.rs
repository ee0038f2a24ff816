//! Local linear attention (LLA) numerics.
//!
//! The output of LLA at query `q_i` is the intercept of a kernel-weighted,
//! query-centered local linear regression fitted on the causal prefix of
//! key/value pairs. This crate provides:
//!
//! - a minimal dense matrix/vector substrate with the structural operators
//!   the algorithm is written in (`tensor`),
//! - memory-efficient attention primitives: stabilized kernel weights,
//!   relative matrix multiplication, centered-statistics accumulation
//!   (`kernel`),
//! - a batched matrix-free conjugate-gradient solver for the per-query
//!   second-moment systems (`cg`),
//! - the LLA estimator itself: a dense reference forward, a blockwise
//!   forward with linear working memory, the interpolation form, and the
//!   full analytic backward pass (`lla`),
//! - baseline estimators (softmax/Nadaraya-Watson, vanilla linear attention,
//!   MesaNet, global/local linear regression) (`baselines`),
//! - reproducible synthetic data generators for the nonstationary
//!   piecewise-linear benchmark and i.i.d. regression rate checks
//!   (`datagen`).
//!
//! Everything is `f64`, deterministic, and allocation-only (`no_std` +
//! `alloc` compatible): transcendentals go through `libm` so results are
//! bit-identical across platforms. All values are plain owned data; they are
//! `Send + Sync` and safe to share across threads. IO, CLI, and file formats
//! live in the companion `lla-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baselines;
pub mod cg;
pub mod datagen;
pub mod kernel;
pub mod lla;
pub mod tensor;

mod linalg;
mod math;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
