//! Plackett-Luce parameter space, exact ranking probabilities and sampling.
//!
//! Utilities live in the centered box `{θ : Σθ = 0, |θ_i| ≤ b}`. A ranking of
//! an offered set has probability
//!
//! ```text
//! P[σ] = Π_{i=1}^{|S|-1} e^{θ_σ(i)} / Σ_{i'≥i} e^{θ_σ(i')}
//! ```
//!
//! which is evaluated entirely in log space. Sampling uses the exponential
//! race: item `i` draws `Y_i ~ Exp(rate e^{θ_i})` and items are ranked by
//! increasing `Y`.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::math::log_add_exp;
use crate::scalar::{sum_tolerance, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter vector needs at least 2 items, got {0}")]
    TooFewItems(usize),
    #[error("box bound must be positive and finite, got {0}")]
    InvalidBound(f64),
    #[error("non-finite utility at index {0}")]
    NonFinite(usize),
    #[error("utilities sum to {0}, expected 0")]
    NotCentered(f64),
    #[error("utility {value} at index {index} exceeds bound {bound}")]
    OutOfBox { index: usize, value: f64, bound: f64 },
    #[error("item {item} outside 0..{d}")]
    UnknownItem { item: usize, d: usize },
    #[error("item {0} appears more than once")]
    DuplicateItem(usize),
    #[error("offer set needs at least 2 items, got {0}")]
    OfferTooSmall(usize),
}

/// A utility vector in the centered box of radius `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta<F> {
    values: Vec<F>,
    bound: F,
}

impl<F: Scalar> Theta<F> {
    /// Validates `values` against the sum-zero and box constraints.
    pub fn new(values: Vec<F>, bound: F) -> Result<Self, ModelError> {
        let d = values.len();
        if d < 2 {
            return Err(ModelError::TooFewItems(d));
        }
        if !bound.is_finite() || bound < F::zero() {
            return Err(ModelError::InvalidBound(bound.to_f64_lossy()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        let sum: F = values.iter().copied().sum();
        if sum.abs() > sum_tolerance(d, bound) {
            return Err(ModelError::NotCentered(sum.to_f64_lossy()));
        }
        let slack = F::lit(1e-12).max(F::epsilon() * bound * F::lit(4.0));
        if let Some(i) = values.iter().position(|v| v.abs() > bound + slack) {
            return Err(ModelError::OutOfBox {
                index: i,
                value: values[i].to_f64_lossy(),
                bound: bound.to_f64_lossy(),
            });
        }
        Ok(Self { values, bound })
    }

    /// The all-zero vector, feasible for every bound.
    pub fn zeros(d: usize, bound: F) -> Result<Self, ModelError> {
        Self::new(vec![F::zero(); d], bound)
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn bound(&self) -> F {
        self.bound
    }

    pub fn as_slice(&self) -> &[F] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<F> {
        self.values
    }

    /// Squared Euclidean distance to another parameter vector.
    pub fn squared_distance(&self, other: &Theta<F>) -> F {
        self.values.iter().zip(&other.values).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
    }
}

impl<F> std::ops::Deref for Theta<F> {
    type Target = [F];

    fn deref(&self) -> &[F] {
        &self.values
    }
}

/// Euclidean projection of `raw` onto `{Σθ = 0, |θ_i| ≤ b}`.
///
/// The minimizer has the form `clamp(raw_i - τ, -b, b)`; the shift `τ` is
/// bracketed and bisected, then solved exactly on the identified active set.
pub fn project_to_omega<F: Scalar>(raw: &[F], b: F) -> Result<Theta<F>, ModelError> {
    let d = raw.len();
    if d < 2 {
        return Err(ModelError::TooFewItems(d));
    }
    if !(b > F::zero()) || !b.is_finite() {
        return Err(ModelError::InvalidBound(b.to_f64_lossy()));
    }
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite(i));
    }

    let residual = |tau: F| -> F { raw.iter().map(|&x| (x - tau).max(-b).min(b)).sum() };

    let lo0 = raw.iter().copied().fold(F::infinity(), F::min) - b;
    let hi0 = raw.iter().copied().fold(F::neg_infinity(), F::max) + b;
    let (mut lo, mut hi) = (lo0, hi0);
    // residual is non-increasing in tau: positive at lo, negative at hi.
    for _ in 0..200 {
        let mid = (lo + hi) / F::lit(2.0);
        if mid <= lo || mid >= hi {
            break;
        }
        if residual(mid) > F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = (lo + hi) / F::lit(2.0);

    // Exact solve on the active set found at the bisection midpoint.
    let (mut free_sum, mut n_free, mut n_up, mut n_low) = (F::zero(), 0usize, 0usize, 0usize);
    for &x in raw {
        let shifted = x - mid;
        if shifted >= b {
            n_up += 1;
        } else if shifted <= -b {
            n_low += 1;
        } else {
            free_sum += x;
            n_free += 1;
        }
    }
    let tau = if n_free > 0 {
        let tau = (free_sum + b * (F::from_usize_lossy(n_up) - F::from_usize_lossy(n_low)))
            / F::from_usize_lossy(n_free);
        // Guard against an active-set misclassification at a breakpoint.
        if tau >= lo0 && tau <= hi0 && residual(tau).abs() <= residual(mid).abs() {
            tau
        } else {
            mid
        }
    } else {
        mid
    };

    let mut values: Vec<F> = raw.iter().map(|&x| (x - tau).max(-b).min(b)).collect();
    // Spread any rounding residue over the coordinates strictly inside the box.
    let rem: F = values.iter().copied().sum();
    let interior: Vec<usize> =
        (0..d).filter(|&i| values[i] > -b && values[i] < b).collect();
    if !interior.is_empty() && rem != F::zero() {
        let share = rem / F::from_usize_lossy(interior.len());
        for i in interior {
            values[i] = (values[i] - share).max(-b).min(b);
        }
    }
    Theta::new(values, b)
}

/// A total order over an offered set, most preferred first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<usize>,
}

impl Ranking {
    /// `order[0]` is the most preferred item.
    pub fn new(order: Vec<usize>) -> Result<Self, ModelError> {
        let mut seen = HashSet::with_capacity(order.len());
        for &i in &order {
            if !seen.insert(i) {
                return Err(ModelError::DuplicateItem(i));
            }
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The offered items in ascending id order.
    pub fn offer_set(&self) -> Vec<usize> {
        let mut s = self.order.clone();
        s.sort_unstable();
        s
    }
}

fn check_items(items: &[usize], d: usize) -> Result<(), ModelError> {
    let mut seen = HashSet::with_capacity(items.len());
    for &i in items {
        if i >= d {
            return Err(ModelError::UnknownItem { item: i, d });
        }
        if !seen.insert(i) {
            return Err(ModelError::DuplicateItem(i));
        }
    }
    Ok(())
}

/// Log-probability of a full ranking under PL with utilities `theta`.
///
/// Accepts any utility slice (not necessarily centered), so shift invariance
/// can be checked directly.
pub fn ranking_log_prob<F: Scalar>(theta: &[F], ranking: &Ranking) -> Result<F, ModelError> {
    let order = ranking.order();
    if order.len() < 2 {
        return Err(ModelError::OfferTooSmall(order.len()));
    }
    check_items(order, theta.len())?;
    Ok(ranking_log_prob_unchecked(theta, order))
}

/// Sum over positions of `θ_σ(i) - log Σ_{i'≥i} e^{θ_σ(i')}`.
pub(crate) fn ranking_log_prob_unchecked<F: Scalar>(theta: &[F], order: &[usize]) -> F {
    let mut suffix = F::neg_infinity();
    let mut total = F::zero();
    for &item in order.iter().rev() {
        let t = theta[item];
        suffix = log_add_exp(suffix, t);
        total += t - suffix;
    }
    total
}

/// Draws a PL ranking of `offer_set` by the exponential race.
///
/// One `Exp(1)` variate is consumed per offered item, in `offer_set` order.
/// Equal arrival times break toward the smaller item id.
pub fn sample_ranking<F: Scalar, R: Rng + ?Sized>(
    theta: &[F],
    offer_set: &[usize],
    rng: &mut R,
) -> Result<Ranking, ModelError> {
    if offer_set.len() < 2 {
        return Err(ModelError::OfferTooSmall(offer_set.len()));
    }
    check_items(offer_set, theta.len())?;
    // log Y_i = log E_i - θ_i with E_i ~ Exp(1).
    let mut keyed: Vec<(f64, usize)> = offer_set
        .iter()
        .map(|&i| {
            let e: f64 = rng.sample(Exp1);
            (e.ln() - theta[i].to_f64_lossy(), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(Ranking { order: keyed.into_iter().map(|(_, i)| i).collect() })
}
