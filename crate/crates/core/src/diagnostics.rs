//! Comparison-graph spectrum, topology constants and error bounds.
//!
//! Everything here is reported in `f64`: the quantities summarize a dataset
//! rather than feed the optimizer, and the dense eigensolver works in `f64`.
//!
//! * Laplacian `L = Σ_j p_j/(κ_j(κ_j-1)) Σ_{i<i'∈S_j} (e_i - e_i')(e_i - e_i')ᵀ`
//!   with `Tr(L) = Σ_j p_j`.
//! * `α = λ_2(L)(d-1)/Tr(L)`, `β = Tr(L)/(λ_d(L)(d-1))`.
//! * `γ_1, γ_2, γ_3, ν` from the retained edges' `(m, r, κ)`.
//! * The Cramér-Rao bound uses every edge, the upper bound only retained ones.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::{log_likelihood_value, Dataset, LikelihoodError};

/// Largest item count handled by the dense eigendecomposition.
pub const MAX_DENSE_ITEMS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("{d} items exceed the dense eigendecomposition cap of {cap}")]
    TooManyItems { d: usize, cap: usize },
    #[error("comparison graph has no weight")]
    EmptyGraph,
    #[error("eigendecomposition produced non-finite values")]
    Eigensolver,
    #[error("no retained edges")]
    NoEdges,
    #[error("comparison graph is disconnected (alpha = 0); the upper bound is undefined")]
    Disconnected,
    #[error("gamma3 = {0} is not positive and the largest top-set exceeds 3")]
    Gamma3NonPositive(f64),
    #[error("Cramér-Rao denominator is not positive")]
    ZeroDenominator,
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Dense comparison-graph Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonLaplacian {
    pub matrix: DMatrix<f64>,
}

impl ComparisonLaplacian {
    pub fn d(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Off-diagonal pair weight `A_{ii'}`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            -self.matrix[(i, j)]
        }
    }
}

/// Builds `L` from the dataset's retained edges (`p_j` is evaluated at the
/// dataset's order cap). Observations with identical offer sets are merged
/// before the dense update.
pub fn comparison_laplacian(dataset: &Dataset) -> Result<ComparisonLaplacian, DiagnosticsError> {
    let d = dataset.d();
    if d > MAX_DENSE_ITEMS {
        return Err(DiagnosticsError::TooManyItems { d, cap: MAX_DENSE_ITEMS });
    }
    let mut grouped: BTreeMap<&[usize], f64> = BTreeMap::new();
    for (obs, stats) in dataset.observations().iter().zip(dataset.order_stats()) {
        let kappa = obs.kappa();
        if stats.p == 0 || kappa < 2 {
            continue;
        }
        *grouped.entry(obs.offer_set()).or_insert(0.0) += stats.p as f64 / (kappa * (kappa - 1)) as f64;
    }
    let mut matrix = DMatrix::<f64>::zeros(d, d);
    for (items, w) in grouped {
        let deg = w * (items.len() - 1) as f64;
        for (k, &i) in items.iter().enumerate() {
            matrix[(i, i)] += deg;
            for &j in &items[k + 1..] {
                matrix[(i, j)] -= w;
                matrix[(j, i)] -= w;
            }
        }
    }
    Ok(ComparisonLaplacian { matrix })
}

/// Ascending eigenvalues with the rescaled spectral gap and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub trace: f64,
}

impl Spectrum {
    /// `λ_2 > 1e-9 λ_d`.
    pub fn connected(&self) -> bool {
        self.alpha > 0.0
    }
}

pub fn spectral_quantities(laplacian: &ComparisonLaplacian) -> Result<Spectrum, DiagnosticsError> {
    let d = laplacian.d();
    let trace = laplacian.trace();
    if d < 2 || trace <= 0.0 {
        return Err(DiagnosticsError::EmptyGraph);
    }
    let eig = SymmetricEigen::new(laplacian.matrix.clone());
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(DiagnosticsError::Eigensolver);
    }
    eigenvalues.sort_by(f64::total_cmp);
    let lambda_max = eigenvalues[d - 1];
    let lambda_2 = eigenvalues[1];
    let dm1 = (d - 1) as f64;
    let alpha = if lambda_2 <= 1e-9 * lambda_max { 0.0 } else { lambda_2 * dm1 / trace };
    let beta = trace / (lambda_max * dm1);
    Ok(Spectrum { eigenvalues, alpha, beta, trace })
}

/// Edge-shape constants over retained edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyConstants {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub nu: f64,
}

pub fn topology_constants(dataset: &Dataset, b: f64) -> Result<TopologyConstants, DiagnosticsError> {
    let order = dataset.order();
    let shapes: Vec<(f64, f64, f64)> = dataset
        .observations()
        .iter()
        .flat_map(|o| o.retained_edges(order).map(move |e| (e.m() as f64, e.r() as f64, o.kappa() as f64)))
        .collect();
    if shapes.is_empty() {
        return Err(DiagnosticsError::NoEdges);
    }
    let exponent = 2.0 * (2.0 * b).exp() - 2.0;
    let gamma1 = shapes.iter().map(|&(m, r, k)| ((r - m) / k).powf(exponent)).fold(f64::INFINITY, f64::min);
    let gamma2 = shapes.iter().map(|&(m, r, _)| ((r - m) / r).powi(2)).fold(f64::INFINITY, f64::min);
    let worst = shapes
        .iter()
        .map(|&(m, r, k)| 4.0 * (16.0 * b).exp() / gamma1 * (m * m * r * r * k * k) / (r - m).powi(5))
        .fold(f64::NEG_INFINITY, f64::max);
    let nu = shapes.iter().map(|&(m, r, k)| m * k * k / (r - m).powi(2)).fold(f64::NEG_INFINITY, f64::max);
    Ok(TopologyConstants { gamma1, gamma2, gamma3: 1.0 - worst, nu })
}

/// `η` for an edge with top-set size `m` and `r` items:
///
/// ```text
/// Σ_{u=0}^{m-1} [1/(r-u) + u(m-u)/(m(r-u)²)] + Σ_{1≤u<u'≤m-1} 2u/(m(r-u)) · (m-u')/(r-u')
/// ```
pub fn eta(m: usize, r: usize) -> f64 {
    let (mf, rf) = (m as f64, r as f64);
    let mut total = 0.0;
    for u in 0..m {
        let u = u as f64;
        total += 1.0 / (rf - u) + u * (mf - u) / (mf * (rf - u).powi(2));
    }
    for u in 1..m {
        for v in u + 1..m {
            let (u, v) = (u as f64, v as f64);
            total += 2.0 * u / (mf * (rf - u)) * (mf - v) / (rf - v);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CramerRao {
    pub bound: f64,
    pub eta_values: Vec<f64>,
    pub mu: f64,
}

/// Lower bound on `E‖θ̂ - θ*‖²` for centered unbiased estimators.
///
/// Uses every edge of the dataset regardless of its order cap; `laplacian`
/// should be built from the all-edges view as well. The second term is
/// infinite when the graph is disconnected.
pub fn cramer_rao_lower_bound(dataset: &Dataset, laplacian: &ComparisonLaplacian) -> Result<CramerRao, DiagnosticsError> {
    let d = dataset.d();
    let eta_values: Vec<f64> =
        dataset.observations().iter().flat_map(|o| o.edges().iter().map(|e| eta(e.m(), e.r()))).collect();
    if eta_values.is_empty() {
        return Err(DiagnosticsError::ZeroDenominator);
    }
    let gaps: Vec<f64> = dataset
        .observations()
        .iter()
        .flat_map(|o| o.edges())
        .zip(&eta_values)
        .map(|(e, h)| e.m() as f64 - h)
        .collect();
    let denom: f64 = gaps.iter().sum();
    let mu = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if denom <= 0.0 || mu <= 0.0 {
        return Err(DiagnosticsError::ZeroDenominator);
    }
    let first = ((d - 1) as f64).powi(2) / denom;
    let spectrum = spectral_quantities(laplacian)?;
    let second = if spectrum.connected() {
        spectrum.eigenvalues[1..].iter().map(|l| 1.0 / l).sum::<f64>() / mu
    } else {
        f64::INFINITY
    };
    Ok(CramerRao { bound: first.max(second), eta_values, mu })
}

/// Plug-in inputs for the finite-sample upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBoundInputs {
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub topology: TopologyConstants,
    pub d: usize,
    /// `N = Σ_j p_j`.
    pub effective_sample_size: usize,
    pub p_max: usize,
    pub kappa_min: usize,
    /// Largest retained top-set; at most 3 allows `γ_3 := 1`.
    pub max_m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    /// Bound on `‖θ̂ - θ*‖ / √d`.
    pub rhs: f64,
    /// Whether the effective sample size meets the bound's sample-size requirement.
    pub sample_condition_met: bool,
    /// `γ_3` actually used (1 when the substitution applies).
    pub gamma3_used: f64,
}

pub fn upper_bound(inputs: &UpperBoundInputs) -> Result<UpperBound, DiagnosticsError> {
    if !(inputs.alpha > 0.0) {
        return Err(DiagnosticsError::Disconnected);
    }
    let t = inputs.topology;
    let gamma3 = if inputs.max_m <= 3 {
        1.0
    } else if t.gamma3 > 0.0 {
        t.gamma3
    } else {
        return Err(DiagnosticsError::Gamma3NonPositive(t.gamma3));
    };
    let d = inputs.d as f64;
    let n_eff = inputs.effective_sample_size as f64;
    let dlogd = d * d.ln();
    let rhs = 40.0 * (7.0 * inputs.b).exp() / (inputs.alpha * t.gamma1 * t.gamma2.powf(1.5) * gamma3)
        * (dlogd / n_eff).sqrt();
    let required = 2f64.powi(14) * (20.0 * inputs.b).exp() * t.nu * t.nu
        / ((inputs.alpha * t.gamma1 * t.gamma2 * gamma3).powi(2) * inputs.beta)
        * (inputs.p_max as f64 / inputs.kappa_min as f64)
        * dlogd;
    Ok(UpperBound { rhs, sample_condition_met: n_eff >= required, gamma3_used: gamma3 })
}

/// Evaluates the upper bound for a dataset from its spectrum and constants.
pub fn theorem1_bounds(
    dataset: &Dataset,
    b: f64,
    spectrum: &Spectrum,
    topology: &TopologyConstants,
) -> Result<UpperBound, DiagnosticsError> {
    let stats = dataset.order_stats();
    let p_max = stats.iter().map(|s| s.p).max().unwrap_or(0);
    let kappa_min = dataset
        .observations()
        .iter()
        .zip(&stats)
        .filter(|(_, s)| s.p > 0)
        .map(|(o, _)| o.kappa())
        .min()
        .ok_or(DiagnosticsError::NoEdges)?;
    upper_bound(&UpperBoundInputs {
        b,
        alpha: spectrum.alpha,
        beta: spectrum.beta,
        topology: *topology,
        d: dataset.d(),
        effective_sample_size: dataset.effective_sample_size(),
        p_max,
        kappa_min,
        max_m: dataset.max_retained_m(),
    })
}

/// Finite-difference curvature probe of `ℒ_RB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    pub value: f64,
    /// Largest `uᵀHu` over sampled unit directions (concavity: ≤ tolerance).
    pub max_curvature: f64,
    /// Smallest `uᵀHu`.
    pub min_curvature: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central second difference of `ℒ_RB` along `direction` with step `h`.
pub fn second_difference(theta: &[f64], dataset: &Dataset, direction: &[f64], h: f64) -> Result<f64, DiagnosticsError> {
    let at = |s: f64| -> Vec<f64> { theta.iter().zip(direction).map(|(t, u)| t + s * u).collect() };
    let f0 = log_likelihood_value(theta, dataset)?;
    let fp = log_likelihood_value(&at(h), dataset)?;
    let fm = log_likelihood_value(&at(-h), dataset)?;
    Ok((fp - 2.0 * f0 + fm) / (h * h))
}

/// Samples `num_directions` random unit directions orthogonal to the all-ones
/// vector and estimates `uᵀH(θ)u` by second differences.
pub fn numerical_hessian_check<R: Rng + ?Sized>(
    theta: &[f64],
    dataset: &Dataset,
    num_directions: usize,
    rng: &mut R,
) -> Result<HessianCheck, DiagnosticsError> {
    let d = theta.len();
    let value = log_likelihood_value(theta, dataset)?;
    let tolerance = 1e-6 * value.abs().max(1.0);
    let mut max_curvature = f64::NEG_INFINITY;
    let mut min_curvature = f64::INFINITY;
    for _ in 0..num_directions {
        let mut u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let mean = u.iter().sum::<f64>() / d as f64;
        u.iter_mut().for_each(|x| *x -= mean);
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= norm);
        let c = second_difference(theta, dataset, &u, 1e-3)?;
        max_curvature = max_curvature.max(c);
        min_curvature = min_curvature.min(c);
    }
    Ok(HessianCheck { value, max_curvature, min_curvature, tolerance, passed: max_curvature <= tolerance })
}

/// Flat summary of a dataset's diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub laplacian_trace: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub nu: f64,
    pub effective_sample_size: usize,
    pub cramer_rao_bound: f64,
    pub eta_values: Vec<f64>,
    pub mu: f64,
    /// `None` when the bound is undefined (disconnected graph or `γ_3 ≤ 0`).
    pub theorem1_rhs: Option<f64>,
    pub sample_size_condition_met: bool,
}

/// Runs every diagnostic. Spectral and topology quantities use the dataset's
/// order cap; the Cramér-Rao bound uses all edges.
pub fn diagnose(dataset: &Dataset, b: f64) -> Result<DiagnosticsReport, DiagnosticsError> {
    if dataset.num_retained_edges() == 0 {
        log::warn!("no edges retained at order M = {}; diagnostics are empty", dataset.order());
        return Err(DiagnosticsError::NoEdges);
    }
    let laplacian = comparison_laplacian(dataset)?;
    let spectrum = spectral_quantities(&laplacian)?;
    let topology = topology_constants(dataset, b)?;
    let all = dataset.with_order(usize::MAX);
    let all_laplacian = comparison_laplacian(&all)?;
    let cr = cramer_rao_lower_bound(&all, &all_laplacian)?;
    let (theorem1_rhs, sample_size_condition_met) = match theorem1_bounds(dataset, b, &spectrum, &topology) {
        Ok(ub) => (Some(ub.rhs), ub.sample_condition_met),
        Err(e) => {
            log::warn!("upper bound unavailable: {e}");
            (None, false)
        }
    };
    Ok(DiagnosticsReport {
        laplacian_trace: spectrum.trace,
        alpha: spectrum.alpha,
        beta: spectrum.beta,
        gamma1: topology.gamma1,
        gamma2: topology.gamma2,
        gamma3: topology.gamma3,
        nu: topology.nu,
        effective_sample_size: dataset.effective_sample_size(),
        cramer_rao_bound: cr.bound,
        eta_values: cr.eta_values,
        mu: cr.mu,
        theorem1_rhs,
        sample_size_condition_met,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poset::{Observation, OrderedPartition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(blocks: Vec<Vec<usize>>) -> Observation {
        Observation::from_partition(OrderedPartition::new(blocks).unwrap())
    }

    #[test]
    fn single_pair_laplacian() {
        let ds = Dataset::all_edges(2, vec![obs(vec![vec![1], vec![0]])]).unwrap();
        let l = comparison_laplacian(&ds).unwrap();
        assert_eq!(l.matrix, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        assert_eq!(l.trace(), 1.0);
        assert_eq!(l.weight(0, 1), 0.5);
    }

    #[test]
    fn empty_dataset_gives_zero_matrix() {
        let ds = Dataset::all_edges(3, vec![]).unwrap();
        let l = comparison_laplacian(&ds).unwrap();
        assert!(l.matrix.iter().all(|v| *v == 0.0));
        assert_eq!(spectral_quantities(&l), Err(DiagnosticsError::EmptyGraph));
    }

    #[test]
    fn complete_offering_closed_form() {
        // Blocks top-first (1, 2) over d = 5 at M = 2: p_j = 3 for every user.
        let d = 5;
        let n = 7;
        let data = vec![obs(vec![vec![0, 1], vec![2, 3], vec![4]]); n];
        let ds = Dataset::new(d, data, 2).unwrap();
        let l = comparison_laplacian(&ds).unwrap();
        let c = (n * 3) as f64 / (d * (d - 1)) as f64;
        for i in 0..d {
            for j in 0..d {
                let expected = if i == j { c * (d - 1) as f64 } else { -c };
                assert!((l.matrix[(i, j)] - expected).abs() < 1e-12);
            }
        }
        let s = spectral_quantities(&l).unwrap();
        assert!((s.alpha - 1.0).abs() < 1e-9 && (s.beta - 1.0).abs() < 1e-9);
        assert!((s.trace - 21.0).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_has_zero_alpha() {
        let ds = Dataset::all_edges(4, vec![obs(vec![vec![0], vec![1]]), obs(vec![vec![2], vec![3]])]).unwrap();
        let s = spectral_quantities(&comparison_laplacian(&ds).unwrap()).unwrap();
        assert_eq!(s.alpha, 0.0);
    }

    #[test]
    fn path_graph_has_intermediate_alpha() {
        let data = vec![obs(vec![vec![0], vec![1]]), obs(vec![vec![1], vec![2]]), obs(vec![vec![2], vec![3]])];
        let ds = Dataset::all_edges(4, data).unwrap();
        let s = spectral_quantities(&comparison_laplacian(&ds).unwrap()).unwrap();
        // Path P4 with unit-half weights: eigenvalues 0.5·(2 - 2cos(kπ/4)).
        let expected: Vec<f64> = (0..4).map(|k| 0.5 * (2.0 - 2.0 * (k as f64 * std::f64::consts::PI / 4.0).cos())).collect();
        for (a, b) in s.eigenvalues.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(s.alpha > 0.0 && s.alpha < 1.0);
        assert!((s.trace - 3.0).abs() < 1e-12);
        assert!((s.alpha - expected[1] * 3.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn topology_constants_pairwise_at_zero_range() {
        let ds = Dataset::all_edges(2, vec![obs(vec![vec![1], vec![0]])]).unwrap();
        let t = topology_constants(&ds, 0.0).unwrap();
        assert_eq!(t.gamma1, 1.0);
        assert_eq!(t.gamma2, 0.25);
        assert_eq!(t.nu, 4.0);
    }

    #[test]
    fn gamma2_picks_the_tightest_edge() {
        // Edges (m, r) = (1, 5) and (3, 4); (r-m)/r = 4/5 and 1/4.
        let ds = Dataset::all_edges(5, vec![obs(vec![vec![0], vec![1, 2, 3], vec![4]])]).unwrap();
        let t = topology_constants(&ds, 0.0).unwrap();
        assert_eq!(t.gamma2, (1.0f64 / 4.0).powi(2));
    }

    #[test]
    fn gamma1_is_one_for_top_one_at_zero_range() {
        let d = 6;
        let ds = Dataset::all_edges(d, vec![obs(vec![(1..d).collect(), vec![0]])]).unwrap();
        assert_eq!(topology_constants(&ds, 0.0).unwrap().gamma1, 1.0);
    }

    #[test]
    fn eta_top_one() {
        for r in [2usize, 5, 17, 100] {
            assert_eq!(eta(1, r), 1.0 / r as f64);
        }
    }

    #[test]
    fn eta_grows_with_top_set_size() {
        for r in [6usize, 12, 40] {
            for m in 1..r - 1 {
                assert!(eta(m + 1, r) > eta(m, r), "m = {m}, r = {r}");
            }
        }
    }

    #[test]
    fn cramer_rao_on_repeated_pairs() {
        // n copies of one pair: η = 1/2 so the first term is 1/(n/2) and
        // L has λ_2 = n, giving a second term of (1/n)/(1/2).
        let n = 40;
        let ds = Dataset::all_edges(2, vec![obs(vec![vec![1], vec![0]]); n]).unwrap();
        let l = comparison_laplacian(&ds).unwrap();
        let cr = cramer_rao_lower_bound(&ds, &l).unwrap();
        assert_eq!(cr.mu, 0.5);
        assert!(cr.eta_values.iter().all(|&h| h == 0.5));
        assert!((cr.bound - 2.0 / n as f64).abs() < 1e-12, "{}", cr.bound);
    }

    #[test]
    fn cramer_rao_disconnected_is_infinite() {
        let ds = Dataset::all_edges(4, vec![obs(vec![vec![0], vec![1]]), obs(vec![vec![2], vec![3]])]).unwrap();
        let cr = cramer_rao_lower_bound(&ds, &comparison_laplacian(&ds).unwrap()).unwrap();
        assert!(cr.bound.is_infinite());
    }

    #[test]
    fn upper_bound_plug_in() {
        let d = 16usize;
        let n_eff = (16.0 * 16f64.ln() * 1600.0).round() as usize;
        let ones = TopologyConstants { gamma1: 1.0, gamma2: 1.0, gamma3: 1.0, nu: 1.0 };
        let inputs = UpperBoundInputs {
            b: 0.0,
            alpha: 1.0,
            beta: 1.0,
            topology: ones,
            d,
            effective_sample_size: n_eff,
            p_max: 1,
            kappa_min: 2,
            max_m: 1,
        };
        let ub = upper_bound(&inputs).unwrap();
        let expected = 40.0 * (d as f64 * (d as f64).ln() / n_eff as f64).sqrt();
        assert!((ub.rhs - expected).abs() < 1e-12);
        assert!((ub.rhs - 1.0).abs() < 1e-4);
        let doubled = upper_bound(&UpperBoundInputs { effective_sample_size: 2 * n_eff, ..inputs }).unwrap();
        assert!((doubled.rhs.powi(2) - ub.rhs.powi(2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bound_gamma3_rule() {
        let t = TopologyConstants { gamma1: 0.5, gamma2: 0.5, gamma3: -3.0, nu: 2.0 };
        let base = UpperBoundInputs {
            b: 1.0,
            alpha: 0.8,
            beta: 0.9,
            topology: t,
            d: 10,
            effective_sample_size: 1000,
            p_max: 3,
            kappa_min: 10,
            max_m: 4,
        };
        assert_eq!(upper_bound(&base), Err(DiagnosticsError::Gamma3NonPositive(-3.0)));
        let ub = upper_bound(&UpperBoundInputs { max_m: 3, ..base }).unwrap();
        assert_eq!(ub.gamma3_used, 1.0);
        assert_eq!(upper_bound(&UpperBoundInputs { alpha: 0.0, ..base }), Err(DiagnosticsError::Disconnected));
    }

    #[test]
    fn pairwise_curvature_at_zero() {
        let pairs = [(0usize, 1usize), (1, 2), (0, 2), (2, 3)];
        let data: Vec<Observation> = pairs.iter().map(|&(w, l)| obs(vec![vec![l], vec![w]])).collect();
        let ds = Dataset::all_edges(4, data).unwrap();
        let u = [0.5_f64, -0.1, -0.7, 0.3];
        let c = second_difference(&[0.0; 4], &ds, &u, 1e-3).unwrap();
        let expected: f64 = -0.25 * pairs.iter().map(|&(a, b)| (u[a] - u[b]).powi(2)).sum::<f64>();
        assert!((c - expected).abs() < 1e-6, "{c} vs {expected}");
        let ones = [1.0; 4];
        assert!(second_difference(&[0.3, -0.1, 0.0, -0.2], &ds, &ones, 1e-3).unwrap().abs() < 1e-6);
    }

    #[test]
    fn curvature_is_non_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = vec![obs(vec![vec![3, 4], vec![0, 2], vec![1]]), obs(vec![vec![0], vec![1, 2, 3], vec![4]])];
        let ds = Dataset::all_edges(5, data).unwrap();
        let theta = crate::model::project_to_omega(&[1.0, -0.5, 0.3, 0.2, -1.5], 2.0).unwrap();
        let check = numerical_hessian_check(&theta, &ds, 25, &mut rng).unwrap();
        assert!(check.passed, "{check:?}");
        assert!(check.min_curvature <= check.max_curvature);
    }

    #[test]
    fn report_serializes_flat() {
        let data = vec![obs(vec![vec![3, 4], vec![0, 2], vec![1]]), obs(vec![vec![0], vec![1, 2, 3], vec![4]])];
        let ds = Dataset::new(5, data, 2).unwrap();
        let report = diagnose(&ds, 1.0).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["laplacian_trace", "alpha", "beta", "gamma1", "gamma2", "gamma3", "nu", "effective_sample_size",
            "cramer_rao_bound", "eta_values", "mu", "theorem1_rhs", "sample_size_condition_met"]
        {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(report.eta_values.len(), 4);
        assert!((report.laplacian_trace - ds.effective_sample_size() as f64).abs() < 1e-9);
    }
}
