//! Seeded synthetic workloads.
//!
//! Each user draws an offer set, samples a full PL ranking over it, and
//! reveals only the top blocks as unordered sets; the remaining items form the
//! bottom block. Block sizes are configured top block first.
//!
//! Randomness is split into ChaCha8 streams of one seed: stream 0 draws the
//! ground truth and stream `j + 1` drives user `j`, so output is identical for
//! any worker count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::TopOrderings;
use crate::likelihood::{Dataset, LikelihoodError};
use crate::model::{project_to_omega, sample_ranking, ModelError, Theta};
use crate::poset::{Observation, OrderedPartition, PosetError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Poset(#[from] PosetError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

fn default_b() -> f64 {
    2.0
}

/// A canonical sampling scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub d: usize,
    pub n: usize,
    /// Offer-set size; `None` offers all `d` items to every user.
    #[serde(default)]
    pub kappa: Option<usize>,
    /// Revealed block sizes, most preferred block first. The bottom block
    /// takes the remaining `κ - Σ block_sizes` items.
    pub block_sizes: Vec<usize>,
    /// Ground truth; when absent it is drawn i.i.d. `U[-b, b]` and projected.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep the hidden within-block orderings (needed by the oracle MLE).
    #[serde(default)]
    pub keep_top_orderings: bool,
}

impl ScenarioConfig {
    pub fn kappa_value(&self) -> usize {
        self.kappa.unwrap_or(self.d)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.d < 2 {
            return bad(format!("d = {} must be at least 2", self.d));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return bad(format!("b = {} must be positive and finite", self.b));
        }
        let kappa = self.kappa_value();
        if kappa < 2 || kappa > self.d {
            return bad(format!("kappa = {kappa} must lie in 2..={}", self.d));
        }
        if self.block_sizes.is_empty() {
            return bad("block_sizes is empty".into());
        }
        if self.block_sizes.contains(&0) {
            return bad("block sizes must be positive".into());
        }
        let revealed: usize = self.block_sizes.iter().sum();
        if revealed >= kappa {
            return bad(format!("block sizes sum to {revealed}, which must be below kappa = {kappa}"));
        }
        if let Some(theta) = &self.theta {
            if theta.len() != self.d {
                return bad(format!("theta has {} entries, expected d = {}", theta.len(), self.d));
            }
        }
        Ok(())
    }
}

/// Generated observations with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<F> {
    /// Every edge retained; re-target with [`Dataset::with_order`].
    pub dataset: Dataset,
    pub theta_star: Theta<F>,
    pub hidden: Option<TopOrderings>,
}

fn user_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The configured ground truth, or a draw from stream 0 of `config.seed`.
pub fn draw_ground_truth<F: Scalar>(config: &ScenarioConfig) -> Result<Theta<F>, SynthError> {
    let b = F::lit(config.b);
    match &config.theta {
        Some(values) => {
            let values: Vec<F> = values.iter().map(|&v| F::lit(v)).collect();
            Ok(Theta::new(values, b)?)
        }
        None => {
            let mut rng = user_rng(config.seed, 0);
            let raw: Vec<F> = (0..config.d).map(|_| F::lit(rng.random_range(-config.b..=config.b))).collect();
            Ok(project_to_omega(&raw, b)?)
        }
    }
}

/// Samples one user: returns the observation and the hidden orderings aligned
/// with its blocks (least preferred first, bottom entry empty).
fn sample_user<F: Scalar>(
    theta: &[F],
    config: &ScenarioConfig,
    user: usize,
) -> Result<(Observation, Vec<Vec<usize>>), SynthError> {
    let mut rng = user_rng(config.seed, user as u64 + 1);
    let kappa = config.kappa_value();
    let offer: Vec<usize> = if kappa == config.d {
        (0..config.d).collect()
    } else {
        let mut s = index::sample(&mut rng, config.d, kappa).into_vec();
        s.sort_unstable();
        s
    };
    let ranking = sample_ranking(theta, &offer, &mut rng)?;
    let order = ranking.order();

    let mut top_first = Vec::with_capacity(config.block_sizes.len());
    let mut at = 0;
    for &size in &config.block_sizes {
        top_first.push(order[at..at + size].to_vec());
        at += size;
    }
    let mut blocks = vec![order[at..].to_vec()];
    let mut hidden = vec![Vec::new()];
    for block in top_first.into_iter().rev() {
        blocks.push(block.clone());
        hidden.push(block);
    }
    let partition = OrderedPartition::new(blocks)?;
    Ok((Observation::from_partition(partition), hidden))
}

/// Draws `config.n` users from the canonical scenario.
pub fn generate_canonical<F: Scalar>(config: &ScenarioConfig) -> Result<SyntheticData<F>, SynthError> {
    config.validate()?;
    let theta_star = draw_ground_truth::<F>(config)?;
    let users: Vec<(Observation, Vec<Vec<usize>>)> = (0..config.n)
        .into_par_iter()
        .map(|j| sample_user(&theta_star, config, j))
        .collect::<Result<_, _>>()?;
    let (observations, hidden): (Vec<_>, Vec<_>) = users.into_iter().unzip();
    let dataset = Dataset::all_edges(config.d, observations)?;
    let hidden = config.keep_top_orderings.then_some(TopOrderings { per_observation: hidden });
    Ok(SyntheticData { dataset, theta_star, hidden })
}

/// Block sizes `1, 2, …, ℓ̃-1` of the all-items tradeoff workload, where
/// `ℓ̃ = ⌊√(2c)·d^{1/4}⌋` and the bottom block takes the rest.
pub fn tradeoff_block_sizes(d: usize, c: f64) -> Result<Vec<usize>, SynthError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(SynthError::InvalidConfig(format!("c = {c} must be positive")));
    }
    let df = d as f64;
    // The small nudge keeps exact products such as √1·256^{1/4} = 4 from flooring to 3.
    let levels = ((2.0 * c).sqrt() * df.powf(0.25) + 1e-9).floor() as usize;
    if levels < 2 {
        return Err(SynthError::InvalidConfig(format!("c = {c}, d = {d} yields fewer than two blocks")));
    }
    let sizes: Vec<usize> = (1..levels).collect();
    let revealed: usize = sizes.iter().sum();
    if revealed as f64 > c * df.sqrt() {
        return Err(SynthError::InvalidConfig(format!("revealed items {revealed} exceed c·√d = {}", c * df.sqrt())));
    }
    if 2 * (d - revealed.min(d)) < d {
        return Err(SynthError::InvalidConfig(format!("bottom block {} is smaller than d/2", d - revealed)));
    }
    Ok(sizes)
}

/// All-items workload with triangular block sizes (see [`tradeoff_block_sizes`]).
pub fn generate_tradeoff<F: Scalar>(
    d: usize,
    n: usize,
    c: f64,
    seed: u64,
    b: f64,
) -> Result<SyntheticData<F>, SynthError> {
    let config = ScenarioConfig {
        d,
        n,
        kappa: None,
        block_sizes: tradeoff_block_sizes(d, c)?,
        theta: None,
        b,
        seed,
        keep_top_orderings: false,
    };
    generate_canonical(&config)
}
