//! Estimators over the centered box.
//!
//! All fitters share one projected gradient ascent driver: from `θ = 0`,
//! `θ ← Π(θ + η ∇ℒ(θ))` where `Π` is the Euclidean projection onto the box.
//! Trial steps follow the Barzilai-Borwein rule and are backtracked until the
//! Armijo condition `ℒ(θ') ≥ ℒ(θ) + c ∇ℒ(θ)·(θ' - θ)` holds, so accepted
//! iterates never decrease the objective. Stationarity is measured by the
//! gradient mapping `‖Π(θ + ∇ℒ(θ)) - θ‖`.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use log::warn;
use thiserror::Error;

use crate::likelihood::{total_log_likelihood_with, Dataset, EvalOptions, GradientResult, LikelihoodError};
use crate::math::{log_add_exp, LogSumExp};
use crate::model::{project_to_omega, ModelError, Theta};
use crate::poset::{Observation, OrderedPartition, PosetError};
use crate::scalar::Scalar;

/// Offer-set size up to which the full MLE enumerates consistent rankings.
pub const FULL_MLE_MAX_KAPPA: usize = 8;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poset(#[from] PosetError),
    #[error("dataset has no observations")]
    EmptyDataset,
    #[error("observation {index} offers {kappa} items; full MLE enumerates at most {cap}")]
    KappaTooLarge { index: usize, kappa: usize, cap: usize },
    #[error("missing or inconsistent top-set ordering: {0}")]
    MissingRefinement(String),
    #[error("full-poset objective {full} disagrees with the edge decomposition {edges}")]
    IdentityViolation { full: f64, edges: f64 },
    #[error("invalid fit options: {0}")]
    InvalidOptions(&'static str),
    #[error("objective became non-finite")]
    NonFinite,
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<F> {
    /// Box bound `b`.
    pub b: F,
    pub max_iters: usize,
    /// Threshold on the gradient-mapping norm.
    pub grad_tol: F,
    /// Multiply `grad_tol` by the effective sample size.
    pub scale_tol_by_n: bool,
    /// First trial step.
    pub initial_step: F,
    /// Backtracking factor in `(0, 1)`.
    pub shrink: F,
    /// Armijo constant.
    pub sufficient_increase: F,
    /// Worker count for likelihood evaluation.
    pub workers: usize,
    /// Largest top-set the enumeration engine accepts.
    pub max_top: usize,
}

impl<F: Scalar> Default for FitOptions<F> {
    fn default() -> Self {
        Self {
            b: F::lit(2.0),
            max_iters: 5000,
            grad_tol: F::lit(1e-7),
            scale_tol_by_n: true,
            initial_step: F::one(),
            shrink: F::lit(0.5),
            sufficient_increase: F::lit(1e-4),
            workers: 1,
            max_top: crate::likelihood::DEFAULT_MAX_TOP,
        }
    }
}

impl<F: Scalar> FitOptions<F> {
    fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.grad_tol > F::zero()) {
            return Err(EstimatorError::InvalidOptions("grad_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(EstimatorError::InvalidOptions("max_iters must be at least 1"));
        }
        if !(self.shrink > F::zero() && self.shrink < F::one()) {
            return Err(EstimatorError::InvalidOptions("shrink factor must lie in (0, 1)"));
        }
        if !(self.initial_step > F::zero()) {
            return Err(EstimatorError::InvalidOptions("initial step must be positive"));
        }
        if !(self.b > F::zero()) {
            return Err(EstimatorError::InvalidOptions("box bound must be positive"));
        }
        Ok(())
    }

    fn tolerance(&self, effective_n: usize) -> F {
        if self.scale_tol_by_n {
            self.grad_tol * F::from_usize_lossy(effective_n.max(1))
        } else {
            self.grad_tol
        }
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions { max_top: self.max_top, workers: self.workers.max(1) }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<F> {
    pub theta_hat: Theta<F>,
    pub final_value: F,
    pub iterations: usize,
    pub converged: bool,
    /// Gradient-mapping norm at `theta_hat`.
    pub grad_norm: F,
    /// Threshold the run was judged against.
    pub tolerance: F,
    pub wall_time: Duration,
    pub permutation_terms_evaluated: u64,
    /// The comparison graph had more than one connected component.
    pub disconnected: bool,
    /// Objective value at every accepted iterate, starting at `θ = 0`.
    pub objective_trace: Vec<F>,
    /// Gradient at `theta_hat`.
    pub gradient: Vec<F>,
}

type Objective<'a, F> = dyn FnMut(&[F]) -> Result<GradientResult<F>, EstimatorError> + 'a;

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn gradient_mapping_norm<F: Scalar>(theta: &[F], grad: &[F], b: F) -> Result<F, EstimatorError> {
    let stepped: Vec<F> = theta.iter().zip(grad).map(|(t, g)| *t + *g).collect();
    let proj = project_to_omega(&stepped, b)?;
    Ok(proj.iter().zip(theta).map(|(p, t)| (*p - *t) * (*p - *t)).sum::<F>().sqrt())
}

/// Projected gradient ascent from zero.
fn projected_ascent<F: Scalar>(
    d: usize,
    opts: &FitOptions<F>,
    tol: F,
    objective: &mut Objective<'_, F>,
) -> Result<FitResult<F>, EstimatorError> {
    opts.validate()?;
    let start = Instant::now();
    let mut theta = Theta::zeros(d, opts.b)?;
    let mut current = objective(&theta)?;
    let mut terms = current.permutation_terms;
    if !current.value.is_finite() {
        return Err(EstimatorError::NonFinite);
    }
    let mut trace = vec![current.value];
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = gradient_mapping_norm(&theta, &current.gradient, opts.b)?;
    let min_step = F::lit(1e-30);

    while iterations < opts.max_iters {
        if grad_norm <= tol {
            converged = true;
            break;
        }
        let mut eta = step;
        let accepted = loop {
            let raw: Vec<F> = theta.iter().zip(&current.gradient).map(|(t, g)| *t + eta * *g).collect();
            let candidate = project_to_omega(&raw, opts.b)?;
            let moved: Vec<F> = candidate.iter().zip(theta.iter()).map(|(c, t)| *c - *t).collect();
            if moved.iter().all(|v| *v == F::zero()) {
                break None;
            }
            let next = objective(&candidate)?;
            terms += next.permutation_terms;
            let predicted = dot(&current.gradient, &moved);
            let armijo = next.value >= current.value + opts.sufficient_increase * predicted;
            // Concavity: a non-negative slope at the candidate means the objective rose along the
            // whole segment. This still certifies ascent once gains drop below value rounding.
            let end_slope_ok = dot(&next.gradient, &moved) >= F::zero();
            if next.value.is_finite() && (armijo || end_slope_ok) {
                break Some((candidate, next, moved, eta));
            }
            eta *= opts.shrink;
            if eta < min_step {
                break None;
            }
        };
        let Some((candidate, next, moved, eta)) = accepted else {
            // No ascent step is representable; the iterate is as good as it gets.
            break;
        };
        iterations += 1;
        let y: Vec<F> = next.gradient.iter().zip(&current.gradient).map(|(a, b)| *a - *b).collect();
        let sy = dot(&moved, &y);
        let ss = dot(&moved, &moved);
        // Barzilai-Borwein for a concave objective: s·y < 0.
        step = if sy < F::zero() { (-ss / sy).min(F::lit(1e12)) } else { eta * F::lit(2.0) };
        theta = candidate;
        current = next;
        trace.push(current.value);
        grad_norm = gradient_mapping_norm(&theta, &current.gradient, opts.b)?;
    }
    if !converged && grad_norm <= tol {
        converged = true;
    }
    Ok(FitResult {
        theta_hat: theta,
        final_value: current.value,
        iterations,
        converged,
        grad_norm,
        tolerance: tol,
        wall_time: start.elapsed(),
        permutation_terms_evaluated: terms,
        disconnected: false,
        objective_trace: trace,
        gradient: current.gradient,
    })
}

fn flag_connectivity(dataset: &Dataset) -> bool {
    let components = dataset.comparison_components();
    if components > 1 {
        warn!(
            "comparison graph has {components} connected components; the estimate is pinned only by the box constraint"
        );
        true
    } else {
        false
    }
}

/// Order-M rank-breaking estimate: maximizes `ℒ_RB` over the box.
pub fn fit_order_m<F: Scalar>(dataset: &Dataset, opts: &FitOptions<F>) -> Result<FitResult<F>, EstimatorError> {
    if dataset.n() == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    if dataset.num_retained_edges() == 0 {
        return Err(LikelihoodError::EmptyLikelihood(dataset.order()).into());
    }
    let disconnected = flag_connectivity(dataset);
    let eval = opts.eval_options();
    let mut objective =
        |theta: &[F]| total_log_likelihood_with(theta, dataset, eval).map_err(EstimatorError::from);
    let mut result = projected_ascent(dataset.d(), opts, opts.tolerance(dataset.effective_sample_size()), &mut objective)?;
    result.disconnected = disconnected;
    Ok(result)
}

/// Consistent full rankings of an ordered partition, most preferred first:
/// every arrangement of each block, blocks stacked top to bottom.
pub fn consistent_rankings(partition: &OrderedPartition) -> Vec<Vec<usize>> {
    let blocks: Vec<Vec<usize>> = partition.blocks().iter().rev().cloned().collect();
    let mut out = Vec::new();
    let mut state: Vec<Vec<usize>> = blocks.clone();
    loop {
        out.push(state.iter().flatten().copied().collect());
        // Odometer over per-block permutations, last block fastest.
        let mut k = state.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            if crate::likelihood::next_permutation(&mut state[k]) {
                break;
            }
            state[k] = blocks[k].clone();
        }
    }
}

/// `Σ_j log Σ_{σ consistent with observation j} P_θ[σ]` with its gradient,
/// by enumeration of consistent full rankings.
pub fn full_poset_log_likelihood<F: Scalar>(
    theta: &[F],
    dataset: &Dataset,
) -> Result<GradientResult<F>, EstimatorError> {
    let d = theta.len();
    let mut value = F::zero();
    let mut gradient = vec![F::zero(); d];
    let mut terms = 0u64;
    for (index, obs) in dataset.observations().iter().enumerate() {
        if obs.kappa() > FULL_MLE_MAX_KAPPA {
            return Err(EstimatorError::KappaTooLarge { index, kappa: obs.kappa(), cap: FULL_MLE_MAX_KAPPA });
        }
        let rankings = consistent_rankings(obs.partition());
        let mut lse = LogSumExp::new();
        let logs: Vec<F> = rankings.iter().map(|r| crate::model::ranking_log_prob_unchecked(theta, r)).collect();
        for &l in &logs {
            lse.push(l);
        }
        let total = lse.value();
        value += total;
        terms += rankings.len() as u64;
        for (r, &l) in rankings.iter().zip(&logs) {
            let w = (l - total).exp();
            // ∂ log P[σ]/∂θ_k = 1 - Σ_{i ≤ pos(k)} e^{θ_k} / S_i.
            let mut log_suffix = vec![F::zero(); r.len()];
            let mut acc = F::neg_infinity();
            for (pos, &item) in r.iter().enumerate().rev() {
                acc = log_add_exp(acc, theta[item]);
                log_suffix[pos] = acc;
            }
            let mut inv_prefix = F::zero();
            for (pos, &item) in r.iter().enumerate() {
                inv_prefix += (-log_suffix[pos]).exp();
                gradient[item] += w * (F::one() - theta[item].exp() * inv_prefix);
            }
        }
    }
    if !value.is_finite() {
        return Err(EstimatorError::NonFinite);
    }
    Ok(GradientResult { value, gradient, permutation_terms: terms })
}

/// Full maximum likelihood over consistent rankings, for offer sets of at
/// most [`FULL_MLE_MAX_KAPPA`] items. Verifies at the estimate that the
/// objective equals the all-edges rank-breaking likelihood.
pub fn full_mle_small<F: Scalar>(dataset: &Dataset, opts: &FitOptions<F>) -> Result<FitResult<F>, EstimatorError> {
    if dataset.n() == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    if let Some((index, obs)) =
        dataset.observations().iter().enumerate().find(|(_, o)| o.kappa() > FULL_MLE_MAX_KAPPA)
    {
        return Err(EstimatorError::KappaTooLarge { index, kappa: obs.kappa(), cap: FULL_MLE_MAX_KAPPA });
    }
    let all = dataset.with_order(usize::MAX);
    let disconnected = flag_connectivity(&all);
    let mut objective = |theta: &[F]| full_poset_log_likelihood(theta, dataset);
    let mut result = projected_ascent(dataset.d(), opts, opts.tolerance(all.effective_sample_size()), &mut objective)?;
    result.disconnected = disconnected;

    if all.num_retained_edges() > 0 {
        let edges = total_log_likelihood_with(&result.theta_hat, &all, opts.eval_options())?.value;
        let full = result.final_value;
        let scale = F::one().max(full.abs());
        if (full - edges).abs() > F::lit(1e-8).max(F::epsilon() * F::lit(1e3)) * scale {
            return Err(EstimatorError::IdentityViolation { full: full.to_f64_lossy(), edges: edges.to_f64_lossy() });
        }
    }
    Ok(result)
}

/// Every `(winner, loser)` pair implied by the partition: the winner sits in a
/// strictly higher block.
pub fn implied_pairs(observation: &Observation) -> Vec<(usize, usize)> {
    let blocks = observation.partition().blocks();
    let mut pairs = Vec::new();
    for (a, upper) in blocks.iter().enumerate() {
        for lower in &blocks[..a] {
            for &w in upper {
                for &l in lower {
                    pairs.push((w, l));
                }
            }
        }
    }
    pairs
}

/// Counted pairwise comparisons extracted from a dataset.
fn pair_counts(dataset: &Dataset) -> BTreeMap<(usize, usize), usize> {
    let mut counts = BTreeMap::new();
    for obs in dataset.observations() {
        for pair in implied_pairs(obs) {
            *counts.entry(pair).or_insert(0) += 1;
        }
    }
    counts
}

/// `Σ c · log σ(θ_w - θ_l)` over counted pairs.
fn pairwise_objective<F: Scalar>(theta: &[F], counts: &[((usize, usize), F)], total: u64) -> GradientResult<F> {
    let mut value = F::zero();
    let mut gradient = vec![F::zero(); theta.len()];
    for &((w, l), c) in counts {
        let x = theta[w] - theta[l];
        // log σ(x) = -softplus(-x)
        let z = -x;
        let softplus = z.max(F::zero()) + (-z.abs()).exp().ln_1p();
        value -= c * softplus;
        let sig_neg = F::one() / (F::one() + x.exp());
        gradient[w] += c * sig_neg;
        gradient[l] -= c * sig_neg;
    }
    GradientResult { value, gradient, permutation_terms: total }
}

/// Inconsistent pairwise rank-breaking: every implied pair is treated as an
/// independent two-item comparison.
pub fn pairwise_rb_inconsistent<F: Scalar>(
    dataset: &Dataset,
    opts: &FitOptions<F>,
) -> Result<FitResult<F>, EstimatorError> {
    if dataset.n() == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    let counts = pair_counts(dataset);
    if counts.is_empty() {
        return Err(LikelihoodError::EmptyLikelihood(1).into());
    }
    let total: usize = counts.values().sum();
    let weighted: Vec<((usize, usize), F)> =
        counts.into_iter().map(|(k, c)| (k, F::from_usize_lossy(c))).collect();
    let disconnected = flag_connectivity(&dataset.with_order(usize::MAX));
    let mut objective = |theta: &[F]| Ok(pairwise_objective(theta, &weighted, total as u64));
    let mut result = projected_ascent(dataset.d(), opts, opts.tolerance(total), &mut objective)?;
    result.disconnected = disconnected;
    Ok(result)
}

/// Hidden within-block orderings, one list per observation aligned with its
/// partition's blocks (least preferred block first). Each ordering lists the
/// block's items most preferred first; the bottom block's entry is ignored
/// and may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TopOrderings {
    pub per_observation: Vec<Vec<Vec<usize>>>,
}

/// Expands every non-bottom block into singletons using the hidden ordering.
pub fn refine_partition(
    partition: &OrderedPartition,
    orderings: &[Vec<usize>],
) -> Result<OrderedPartition, EstimatorError> {
    let blocks = partition.blocks();
    if orderings.len() != blocks.len() {
        return Err(EstimatorError::MissingRefinement(format!(
            "expected {} block orderings, found {}",
            blocks.len(),
            orderings.len()
        )));
    }
    let mut refined = vec![blocks[0].clone()];
    for (block, order) in blocks.iter().zip(orderings).skip(1) {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if &sorted != block {
            return Err(EstimatorError::MissingRefinement(format!(
                "ordering {order:?} is not a permutation of block {block:?}"
            )));
        }
        refined.extend(order.iter().rev().map(|&i| vec![i]));
    }
    Ok(OrderedPartition::new(refined)?)
}

/// Oracle MLE: fits the PL likelihood on partitions whose top blocks are
/// expanded into their hidden orderings.
pub fn oracle_mle<F: Scalar>(
    dataset: &Dataset,
    orderings: &TopOrderings,
    opts: &FitOptions<F>,
) -> Result<FitResult<F>, EstimatorError> {
    if orderings.per_observation.len() != dataset.n() {
        return Err(EstimatorError::MissingRefinement(format!(
            "orderings cover {} observations, dataset has {}",
            orderings.per_observation.len(),
            dataset.n()
        )));
    }
    let refined: Vec<Observation> = dataset
        .observations()
        .iter()
        .zip(&orderings.per_observation)
        .map(|(o, ord)| refine_partition(o.partition(), ord).map(Observation::from_partition))
        .collect::<Result<_, _>>()?;
    let refined = Dataset::new(dataset.d(), refined, 1)?;
    fit_order_m(&refined, opts)
}
