//! Rank-breaking edge probabilities and the order-M log-likelihood.
//!
//! For an edge `e = (B, T)` with `m = |T|`,
//!
//! ```text
//! P_θ(e) = Σ_{σ ∈ perms(T)} exp(Σ_c θ_σ(c)) / Π_{u=1}^{m} (Σ_{c'≥u} e^{θ_σ(c')} + Σ_{i∈B} e^{θ_i})
//! ```
//!
//! Each of the `m!` permutation terms is formed in log space and folded into a
//! streaming log-sum-exp. The gradient of `log P_θ(e)` is
//! `1{i∈T} - E_i / P_θ(e)` where `E_i = Σ_σ A_σ B_{σ,i}`, `A_σ` is the
//! permutation term and `B_{σ,i} = Σ_{u ≤ pos_σ(i)} e^{θ_i} / D_u`. Bottom
//! items sit below every top position, so they share one prefix sum.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::math::log_add_exp;
use crate::poset::{Observation, OrderStats, RankBreakingEdge};
use crate::scalar::Scalar;

/// Largest top-set size the enumeration engine accepts by default (8! terms).
pub const DEFAULT_MAX_TOP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error("top-set of size {m} exceeds the enumeration cap of {cap}; choose a smaller order M")]
    OrderTooLarge { m: usize, cap: usize },
    #[error("item {item} outside 0..{d}")]
    UnknownItem { item: usize, d: usize },
    #[error("no edges retained at order M = {0}")]
    EmptyLikelihood(usize),
    #[error("log-likelihood is not finite")]
    NonFinite,
    #[error("observation {index} references item {item} outside 0..{d}")]
    ObservationOutOfRange { index: usize, item: usize, d: usize },
}

/// Observations over `d` items, evaluated at order cap `order` (the `M` of
/// order-M rank-breaking).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    observations: Vec<Observation>,
    order: usize,
    effective_sample_size: usize,
}

impl Dataset {
    pub fn new(d: usize, observations: Vec<Observation>, order: usize) -> Result<Self, LikelihoodError> {
        for (index, obs) in observations.iter().enumerate() {
            if let Some(&item) = obs.offer_set().iter().find(|&&i| i >= d) {
                return Err(LikelihoodError::ObservationOutOfRange { index, item, d });
            }
        }
        let effective_sample_size = observations.iter().map(|o| o.order_stats(order).p).sum();
        Ok(Self { d, observations, order, effective_sample_size })
    }

    /// Same observations with every edge retained.
    pub fn all_edges(d: usize, observations: Vec<Observation>) -> Result<Self, LikelihoodError> {
        Self::new(d, observations, usize::MAX)
    }

    /// Re-targets the dataset at a different order cap.
    pub fn with_order(&self, order: usize) -> Self {
        let effective_sample_size = self.observations.iter().map(|o| o.order_stats(order).p).sum();
        Self { d: self.d, observations: self.observations.clone(), order, effective_sample_size }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.observations.len()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn into_observations(self) -> Vec<Observation> {
        self.observations
    }

    /// `N = Σ_j Σ_a m_{j,a} 1{m_{j,a} ≤ M}`.
    pub fn effective_sample_size(&self) -> usize {
        self.effective_sample_size
    }

    /// `(ℓ_j, p_j)` for each observation.
    pub fn order_stats(&self) -> Vec<OrderStats> {
        self.observations.iter().map(|o| o.order_stats(self.order)).collect()
    }

    pub fn retained_edges(&self) -> impl Iterator<Item = &RankBreakingEdge> + '_ {
        let order = self.order;
        self.observations.iter().flat_map(move |o| o.retained_edges(order))
    }

    pub fn num_retained_edges(&self) -> usize {
        self.retained_edges().count()
    }

    /// Largest top-set among retained edges (0 if none).
    pub fn max_retained_m(&self) -> usize {
        self.retained_edges().map(RankBreakingEdge::m).max().unwrap_or(0)
    }

    /// Largest top-set among all edges.
    pub fn max_m(&self) -> usize {
        self.observations.iter().flat_map(|o| o.edges()).map(RankBreakingEdge::m).max().unwrap_or(0)
    }

    /// Items covered by at least one retained edge, grouped into connected
    /// components of the comparison graph. Returns the number of components
    /// among all `d` items (isolated items count as their own component).
    pub fn comparison_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.d).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for obs in &self.observations {
            if obs.retained_edges(self.order).next().is_none() {
                continue;
            }
            let items = obs.offer_set();
            let root = find(&mut parent, items[0]);
            for &i in &items[1..] {
                let r = find(&mut parent, i);
                if r != root {
                    parent[r] = root;
                }
            }
        }
        let roots: BTreeSet<usize> = (0..self.d).map(|i| find(&mut parent, i)).collect();
        roots.len()
    }
}

/// Log-probability and gradient of one edge, with the gradient listed over
/// `T(e) ∪ B(e)` (top-set first).
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGradient<F> {
    pub log_prob: F,
    pub gradient: Vec<(usize, F)>,
    pub permutation_terms: u64,
}

/// Value and gradient of the order-M log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientResult<F> {
    pub value: F,
    pub gradient: Vec<F>,
    pub permutation_terms: u64,
}

/// Knobs for likelihood evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Largest top-set size accepted.
    pub max_top: usize,
    /// Number of contiguous observation chunks reduced in order; 1 is serial.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { max_top: DEFAULT_MAX_TOP, workers: 1 }
    }
}

fn check_edge<F: Scalar>(theta: &[F], edge: &RankBreakingEdge, max_top: usize) -> Result<(), LikelihoodError> {
    if edge.m() > max_top {
        return Err(LikelihoodError::OrderTooLarge { m: edge.m(), cap: max_top });
    }
    if let Some(item) = edge.items().find(|&i| i >= theta.len()) {
        return Err(LikelihoodError::UnknownItem { item, d: theta.len() });
    }
    Ok(())
}

/// Advances `perm` to the next lexicographic permutation; false at the last one.
pub(crate) fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Shared enumeration kernel. With `want_grad` the per-item accumulators
/// `E_i / P` are produced in the same sweep.
fn edge_kernel<F: Scalar>(theta: &[F], edge: &RankBreakingEdge, want_grad: bool) -> EdgeGradient<F> {
    let top = edge.top();
    let m = top.len();
    // Every quantity below is invariant to a common shift; centering on the
    // edge maximum keeps the exponentials in range.
    let shift = edge.items().map(|i| theta[i]).fold(F::neg_infinity(), F::max);
    let t = |i: usize| theta[i] - shift;
    let log_bottom = edge.bottom().iter().fold(F::neg_infinity(), |acc, &i| log_add_exp(acc, t(i)));
    let top_sum: F = top.iter().map(|&i| t(i)).sum();

    // perm holds indices into `top`, enumerated lexicographically by item id.
    let mut perm: Vec<usize> = (0..m).collect();
    let mut log_denoms = vec![F::zero(); m];
    let mut prefix = vec![F::zero(); m];

    let mut run_max = F::neg_infinity();
    let mut mass = F::zero();
    // Scaled Σ_σ A_σ · prefix at the position of each top item, and at depth m.
    let mut top_acc = vec![F::zero(); m];
    let mut bottom_acc = F::zero();
    let mut terms = 0u64;

    loop {
        terms += 1;
        let mut suffix = log_bottom;
        for u in (0..m).rev() {
            suffix = log_add_exp(suffix, t(top[perm[u]]));
            log_denoms[u] = suffix;
        }
        let log_term = top_sum - log_denoms.iter().copied().sum::<F>();

        if log_term > run_max {
            let scale = if run_max == F::neg_infinity() { F::zero() } else { (run_max - log_term).exp() };
            mass *= scale;
            if want_grad {
                for v in top_acc.iter_mut() {
                    *v *= scale;
                }
                bottom_acc *= scale;
            }
            run_max = log_term;
        }
        let w = (log_term - run_max).exp();
        mass += w;

        if want_grad {
            // prefix[u] = Σ_{u' ≤ u} 1/D_{u'}, kept as plain sums of exp(-log D).
            let mut acc = F::zero();
            for u in 0..m {
                acc += (-log_denoms[u]).exp();
                prefix[u] = acc;
            }
            for (pos, &k) in perm.iter().enumerate() {
                top_acc[k] += w * prefix[pos];
            }
            bottom_acc += w * prefix[m - 1];
        }

        if !next_permutation(&mut perm) {
            break;
        }
    }

    let log_prob = run_max + mass.ln();
    let mut gradient = Vec::new();
    if want_grad {
        gradient.reserve(edge.r());
        for (k, &i) in top.iter().enumerate() {
            let ratio = t(i).exp() * top_acc[k] / mass;
            gradient.push((i, F::one() - ratio));
        }
        let shared = bottom_acc / mass;
        for &i in edge.bottom() {
            gradient.push((i, -(t(i).exp() * shared)));
        }
    }
    EdgeGradient { log_prob, gradient, permutation_terms: terms }
}

/// `log P_θ(e)`.
pub fn edge_log_prob<F: Scalar>(theta: &[F], edge: &RankBreakingEdge) -> Result<F, LikelihoodError> {
    edge_log_prob_capped(theta, edge, DEFAULT_MAX_TOP)
}

pub fn edge_log_prob_capped<F: Scalar>(
    theta: &[F],
    edge: &RankBreakingEdge,
    max_top: usize,
) -> Result<F, LikelihoodError> {
    check_edge(theta, edge, max_top)?;
    Ok(edge_kernel(theta, edge, false).log_prob)
}

/// `log P_θ(e)` together with `∂ log P_θ(e) / ∂θ_i` for `i ∈ T(e) ∪ B(e)`.
pub fn edge_log_prob_gradient<F: Scalar>(
    theta: &[F],
    edge: &RankBreakingEdge,
) -> Result<EdgeGradient<F>, LikelihoodError> {
    edge_log_prob_gradient_capped(theta, edge, DEFAULT_MAX_TOP)
}

pub fn edge_log_prob_gradient_capped<F: Scalar>(
    theta: &[F],
    edge: &RankBreakingEdge,
    max_top: usize,
) -> Result<EdgeGradient<F>, LikelihoodError> {
    check_edge(theta, edge, max_top)?;
    Ok(edge_kernel(theta, edge, true))
}

/// `ℒ_RB(θ) = Σ_j Σ_{e ∈ E_j, |T(e)| ≤ M} log P_θ(e)` and its gradient, serial.
pub fn total_log_likelihood<F: Scalar>(
    theta: &[F],
    dataset: &Dataset,
) -> Result<GradientResult<F>, LikelihoodError> {
    total_log_likelihood_with(theta, dataset, EvalOptions::default())
}

/// Like [`total_log_likelihood`], but splits observations into
/// `opts.workers` contiguous chunks evaluated in parallel and reduced in
/// chunk order, so results are reproducible for a fixed worker count.
pub fn total_log_likelihood_with<F: Scalar>(
    theta: &[F],
    dataset: &Dataset,
    opts: EvalOptions,
) -> Result<GradientResult<F>, LikelihoodError> {
    if theta.len() != dataset.d() {
        return Err(LikelihoodError::UnknownItem { item: dataset.d().max(1) - 1, d: theta.len() });
    }
    if dataset.num_retained_edges() == 0 {
        return Err(LikelihoodError::EmptyLikelihood(dataset.order()));
    }
    let order = dataset.order();
    let obs = dataset.observations();
    let workers = opts.workers.max(1);

    let eval_chunk = |chunk: &[Observation]| -> Result<GradientResult<F>, LikelihoodError> {
        let mut value = F::zero();
        let mut gradient = vec![F::zero(); theta.len()];
        let mut terms = 0u64;
        for o in chunk {
            for edge in o.retained_edges(order) {
                check_edge(theta, edge, opts.max_top)?;
                let eg = edge_kernel(theta, edge, true);
                value += eg.log_prob;
                for (i, g) in eg.gradient {
                    gradient[i] += g;
                }
                terms += eg.permutation_terms;
            }
        }
        Ok(GradientResult { value, gradient, permutation_terms: terms })
    };

    let result = if workers == 1 || obs.len() < 2 * workers {
        eval_chunk(obs)?
    } else {
        let chunk_len = obs.len().div_ceil(workers);
        let partials: Vec<Result<GradientResult<F>, LikelihoodError>> =
            obs.par_chunks(chunk_len).map(eval_chunk).collect();
        let mut total = GradientResult { value: F::zero(), gradient: vec![F::zero(); theta.len()], permutation_terms: 0 };
        for part in partials {
            let part = part?;
            total.value += part.value;
            for (t, g) in total.gradient.iter_mut().zip(part.gradient) {
                *t += g;
            }
            total.permutation_terms += part.permutation_terms;
        }
        total
    };
    if !result.value.is_finite() || result.gradient.iter().any(|g| !g.is_finite()) {
        return Err(LikelihoodError::NonFinite);
    }
    Ok(result)
}

/// Value only; cheaper than the gradient path.
pub fn log_likelihood_value<F: Scalar>(theta: &[F], dataset: &Dataset) -> Result<F, LikelihoodError> {
    if dataset.num_retained_edges() == 0 {
        return Err(LikelihoodError::EmptyLikelihood(dataset.order()));
    }
    let mut value = F::zero();
    for edge in dataset.retained_edges() {
        value += edge_log_prob(theta, edge)?;
    }
    Ok(value)
}

/// `Σ_{retained edges} m!`: permutation terms in one gradient evaluation.
pub fn expected_permutation_terms(dataset: &Dataset) -> u64 {
    dataset.retained_edges().map(|e| (1..=e.m() as u64).product::<u64>()).sum()
}
