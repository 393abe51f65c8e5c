use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compose::ConstraintMode;
use crate::error::{Error, Result};

/// How negatives for an anchor pair are drawn from the other relations.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeStrategy {
    /// Uniformly among all pairs of other relations.
    Uniform,
    /// Draw `candidate_pool` pairs uniformly, keep the ones whose PairDiff
    /// vectors are closest to the anchor's.
    NearestInPool,
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NegativeStrategy::Uniform),
            "nearest-in-pool" | "nearest" => Ok(NegativeStrategy::NearestInPool),
            other => Err(Error::InvalidParameter(format!(
                "unknown negative strategy {other:?}"
            ))),
        }
    }
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeStrategy::Uniform => "uniform",
            NegativeStrategy::NearestInPool => "nearest-in-pool",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weight of the `‖A‖_F²` penalty, added once per mini-batch.
    pub lambda_a: f64,
    pub negatives_per_pair: usize,
    pub negative_strategy: NegativeStrategy,
    pub candidate_pool: usize,
    /// Upper bound on positive instances drawn from one relation group;
    /// `None` keeps every within-group pairing.
    pub max_positives_per_group: Option<usize>,
    pub seed: u64,
    pub init_range: (f64, f64),
    pub adagrad_epsilon: f64,
    pub batch_size: usize,
    /// `Diagonal` fits `P = pI`, `Q = qI`; `General` fits full matrices.
    pub mode: ConstraintMode,
    /// Train on embeddings that were not standardized.
    pub allow_unstandardized: bool,
    /// Record wall-clock seconds per epoch. Off by default so traces are
    /// reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            epochs: 100,
            lambda_a: 0.01,
            negatives_per_pair: 10,
            negative_strategy: NegativeStrategy::NearestInPool,
            candidate_pool: 50,
            max_positives_per_group: None,
            seed: 0,
            init_range: (-1.0, 1.0),
            adagrad_epsilon: 1e-8,
            batch_size: 64,
            mode: ConstraintMode::Diagonal,
            allow_unstandardized: false,
            record_timing: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda_a >= 0.0 && self.lambda_a.is_finite()) {
            return bad("lambda_a must be nonnegative");
        }
        if self.negatives_per_pair == 0 {
            return bad("negatives_per_pair must be positive");
        }
        if self.candidate_pool == 0 {
            return bad("candidate_pool must be positive");
        }
        if self.negative_strategy == NegativeStrategy::NearestInPool
            && self.candidate_pool < self.negatives_per_pair
        {
            return bad("candidate_pool must be at least negatives_per_pair");
        }
        if self.max_positives_per_group == Some(0) {
            return bad("max_positives_per_group must be positive");
        }
        let (lo, hi) = self.init_range;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return bad("init_range must satisfy lo < hi");
        }
        if !(self.adagrad_epsilon > 0.0) {
            return bad("adagrad_epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}
