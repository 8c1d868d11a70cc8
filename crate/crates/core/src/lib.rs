//! # rank_breaking
//!
//! Generalized rank-breaking for Plackett-Luce choice models.
//!
//! Partial preferences (posets) are reduced to maximal ordered partitions,
//! broken into hyper edges `(B(e), T(e))`, and utilities are fitted by
//! maximizing the order-M log-likelihood over the centered box
//! `{θ : Σθ = 0, |θ_i| ≤ b}`. The crate also ships baselines (full MLE,
//! pairwise breaking, oracle MLE), comparison-graph spectral diagnostics,
//! the Cramér-Rao lower bound, synthetic workloads and a CLI (`rankbreak`).
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`model`] | Parameter space, ranking probabilities, exponential-race sampling |
//! | [`poset`] | Posets, maximal ordered partitions, rank-breaking edges |
//! | [`likelihood`] | Edge probabilities, order-M log-likelihood and gradient |
//! | [`estimator`] | Projected gradient ascent and baseline estimators |
//! | [`diagnostics`] | Laplacian spectrum, topology constants, error bounds |
//! | [`synth`] | Seeded synthetic scenarios |
//! | [`io`] | Dataset JSONL and sidecar files |
//! | [`experiment`] | Seeded sweeps producing CSV |
//! | [`cli`] | `rankbreak` subcommands |
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision for the common case.

// Parameter checks are written `!(x > 0)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod poset;
pub mod scalar;
pub mod synth;

pub use likelihood::Dataset;
pub use poset::{Observation, OrderedPartition, Poset, RankBreakingEdge};
pub use scalar::Scalar;

pub type Theta64 = model::Theta<f64>;
pub type Theta32 = model::Theta<f32>;
pub type FitOptions64 = estimator::FitOptions<f64>;
pub type FitOptions32 = estimator::FitOptions<f32>;
pub type FitResult64 = estimator::FitResult<f64>;
pub type FitResult32 = estimator::FitResult<f32>;
pub type SyntheticData64 = synth::SyntheticData<f64>;
pub type GradientResult64 = likelihood::GradientResult<f64>;

