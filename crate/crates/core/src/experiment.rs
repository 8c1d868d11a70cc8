//! Seeded estimator sweeps written as CSV.
//!
//! The ground truth is drawn once from the base seed. Every `(n, trial)` cell
//! then samples its own dataset from a seed mixed from `(base, n, trial)`, and
//! all requested estimators are fitted on that same dataset. Cells run in
//! parallel; rows are emitted in the order
//! `n → trial → estimator → M` regardless of scheduling.
//!
//! Output columns (version 1):
//!
//! ```text
//! estimator,M,n,trial,mse,mse_over_d2,seconds,permutation_terms
//! ```
//!
//! `mse` is the raw squared error `‖θ̂ - θ*‖²`, `mse_over_d2` divides it by
//! `d²`, `seconds` times the fit call only and `M` is 0 for estimators that
//! have no order cap. Lines starting with `#` echo the effective settings.

use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{
    fit_order_m, full_mle_small, oracle_mle, pairwise_rb_inconsistent, EstimatorError, FitOptions, FitResult,
    FULL_MLE_MAX_KAPPA,
};
use crate::model::Theta;
use crate::synth::{draw_ground_truth, generate_canonical, ScenarioConfig, SynthError};

pub const CSV_HEADER: &str = "estimator,M,n,trial,mse,mse_over_d2,seconds,permutation_terms";
pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{estimator} (M = {order}, n = {n}, trial {trial}): {source}")]
    Fit { estimator: EstimatorKind, order: usize, n: usize, trial: usize, source: EstimatorError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Order-M generalized rank-breaking, once per configured `M`.
    Grb,
    /// Inconsistent pairwise rank-breaking.
    Prb,
    /// MLE given the hidden within-block orderings.
    Oracle,
    /// Exact MLE over consistent rankings; offers of at most 8 items.
    FullMle,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Grb => "grb",
            EstimatorKind::Prb => "prb",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::FullMle => "full_mle",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "grb" => Ok(EstimatorKind::Grb),
            "prb" => Ok(EstimatorKind::Prb),
            "oracle" => Ok(EstimatorKind::Oracle),
            "full_mle" => Ok(EstimatorKind::FullMle),
            other => Err(format!("unknown estimator '{other}' (expected grb, prb, oracle or full_mle)")),
        }
    }
}

/// Whether fit times are measured. `Off` writes 0 so CSVs can be compared
/// byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    #[default]
    Wall,
    Off,
}

impl FromStr for Timing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wall" => Ok(Timing::Wall),
            "off" => Ok(Timing::Off),
            other => Err(format!("unknown timing mode '{other}' (expected wall or off)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Data-generating scenario; its `n` and `seed` are overridden per cell.
    pub scenario: ScenarioConfig,
    pub m_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub estimators: Vec<EstimatorKind>,
    pub base_seed: u64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub workers: usize,
    #[serde(default)]
    pub timing: Timing,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Invalid(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return bad("n values must be non-empty and positive".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators requested".into());
        }
        if self.estimators.contains(&EstimatorKind::Grb) && self.m_values.is_empty() {
            return bad("grb needs at least one M value".into());
        }
        if self.m_values.contains(&0) {
            return bad("M values must be at least 1".into());
        }
        if self.estimators.contains(&EstimatorKind::FullMle) && self.scenario.kappa_value() > FULL_MLE_MAX_KAPPA {
            return bad(format!(
                "full_mle enumerates offers of at most {FULL_MLE_MAX_KAPPA} items, scenario has kappa = {}",
                self.scenario.kappa_value()
            ));
        }
        if self.max_iters == 0 || !(self.grad_tol > 0.0) {
            return bad("max_iters and grad_tol must be positive".into());
        }
        self.scenario.validate().map_err(ExperimentError::from)
    }

    fn fit_options(&self) -> FitOptions<f64> {
        FitOptions {
            b: self.scenario.b,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            workers: 1,
            ..Default::default()
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub estimator: EstimatorKind,
    /// Order cap; 0 when not applicable.
    pub order: usize,
    pub n: usize,
    pub trial: usize,
    pub mse: f64,
    pub mse_over_d2: f64,
    pub seconds: f64,
    pub permutation_terms: u64,
}

impl TrialRecord {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.estimator,
            self.order,
            self.n,
            self.trial,
            self.mse,
            self.mse_over_d2,
            self.seconds,
            self.permutation_terms
        )
    }
}

/// SplitMix64 finalizer over the cell coordinates.
pub fn trial_seed(base: u64, n: usize, trial: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ n as u64) ^ trial as u64)
}

fn record(
    kind: EstimatorKind,
    order: usize,
    n: usize,
    trial: usize,
    truth: &Theta<f64>,
    fit: Result<FitResult<f64>, EstimatorError>,
    timing: Timing,
) -> Result<TrialRecord, ExperimentError> {
    let fit = fit.map_err(|source| ExperimentError::Fit { estimator: kind, order, n, trial, source })?;
    if !fit.converged {
        log::warn!("{kind} M={order} n={n} trial={trial}: stopped after {} iterations", fit.iterations);
    }
    let mse = fit.theta_hat.squared_distance(truth);
    let d = truth.d() as f64;
    Ok(TrialRecord {
        estimator: kind,
        order,
        n,
        trial,
        mse,
        mse_over_d2: mse / (d * d),
        seconds: match timing {
            Timing::Wall => fit.wall_time.as_secs_f64(),
            Timing::Off => 0.0,
        },
        permutation_terms: fit.permutation_terms_evaluated,
    })
}

fn run_cell(
    spec: &ExperimentSpec,
    truth: &Theta<f64>,
    n: usize,
    trial: usize,
) -> Result<Vec<TrialRecord>, ExperimentError> {
    let scenario = ScenarioConfig {
        n,
        seed: trial_seed(spec.base_seed, n, trial),
        theta: Some(truth.to_vec()),
        keep_top_orderings: spec.estimators.contains(&EstimatorKind::Oracle),
        ..spec.scenario.clone()
    };
    let data = generate_canonical::<f64>(&scenario)?;
    let opts = spec.fit_options();
    let mut rows = Vec::new();
    for &kind in &spec.estimators {
        match kind {
            EstimatorKind::Grb => {
                for &m in &spec.m_values {
                    let fit = fit_order_m(&data.dataset.with_order(m), &opts);
                    rows.push(record(kind, m, n, trial, truth, fit, spec.timing)?);
                }
            }
            EstimatorKind::Prb => {
                let fit = pairwise_rb_inconsistent(&data.dataset, &opts);
                rows.push(record(kind, 0, n, trial, truth, fit, spec.timing)?);
            }
            EstimatorKind::Oracle => {
                let hidden = data.hidden.as_ref().expect("orderings are kept when the oracle is requested");
                let fit = oracle_mle(&data.dataset, hidden, &opts);
                rows.push(record(kind, 0, n, trial, truth, fit, spec.timing)?);
            }
            EstimatorKind::FullMle => {
                let fit = full_mle_small(&data.dataset, &opts);
                rows.push(record(kind, 0, n, trial, truth, fit, spec.timing)?);
            }
        }
    }
    Ok(rows)
}

/// Runs every cell of the sweep on a pool of `spec.workers` threads.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>, ExperimentError> {
    spec.validate()?;
    let truth = draw_ground_truth::<f64>(&ScenarioConfig { seed: spec.base_seed, ..spec.scenario.clone() })?;
    let cells: Vec<(usize, usize)> =
        spec.n_values.iter().flat_map(|&n| (0..spec.trials).map(move |t| (n, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Invalid(format!("thread pool: {e}")))?;
    let per_cell: Vec<Vec<TrialRecord>> = pool.install(|| {
        cells.par_iter().map(|&(n, t)| run_cell(spec, &truth, n, t)).collect::<Result<_, _>>()
    })?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Writes the commented settings echo, the header and the rows.
pub fn write_csv<W: Write>(mut out: W, spec: &ExperimentSpec, rows: &[TrialRecord]) -> Result<(), ExperimentError> {
    writeln!(out, "# rankbreak experiment csv v{CSV_VERSION}")?;
    let echo = serde_json::to_string(spec).map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    writeln!(out, "# config {echo}")?;
    writeln!(out, "# mse = squared error of theta_hat; mse_over_d2 = mse / d^2; seconds = fit call only")?;
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv_line())?;
    }
    out.flush()?;
    Ok(())
}

/// Median of a non-empty slice (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}
