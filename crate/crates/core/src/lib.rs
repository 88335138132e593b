//! Fairness-guided sparse low-rank factorization for dense classifiers.
//!
//! The crate factors a chosen fully connected layer of a trained classifier
//! with a truncated SVD, scores the factor entries with per-group diagonal
//! Hessians, and zeroes the factor lines whose removal narrows the
//! performance gap between two demographic groups. No fine-tuning or
//! retraining happens at any point: the processed model is the factored,
//! sparsified model as-is.
//!
//! Everything in here is pure computation on in-memory values. The crate is
//! `no_std`-compatible (with `alloc`); file formats, CSV reports and the
//! command line live in the companion `fairlrf-cli` crate.
//!
//! Module map:
//! - [`matrix`] / [`svd`] — dense linear algebra and a one-sided Jacobi SVD
//! - [`network`] — a small dense/factored feed-forward classifier with
//!   analytic gradients and SGD training
//! - [`factorize`] — truncated-SVD layer replacement and weight accounting
//! - [`scoring`] — per-group diagonal Hessians and fairness-aware scores
//! - [`sparsify`] — line selection strategies and mask application
//! - [`metrics`] — per-group confusion tallies, equalized opportunity and
//!   equalized odds
//! - [`datagen`] — seeded synthetic datasets with a controllable group bias
//! - [`rng`] — the documented deterministic random stream everything uses

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("fairlrf-core requires either the `std` or the `libm` feature");

extern crate alloc;

mod fmath;

pub mod datagen;
pub mod error;
pub mod factorize;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod scoring;
pub mod sparsify;
pub mod svd;

pub use error::Error;
pub use matrix::Matrix;
pub use svd::SvdFactors;

/// Crate result alias.
pub type Result<T> = core::result::Result<T, Error>;
