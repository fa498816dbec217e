//! Pieces shared by the GRPO and SFT loops: schedule, log records, best
//! checkpoint selection on validation BLEU.

use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, EvalError};
use crate::grpo::LossError;
use crate::metrics::{MetricError, MetricId};
use crate::optim::{AdamW, OptimError};
use crate::policy::{PolicyError, SamplingParams, Trainable};
use crate::scalar::Real;
use crate::tasks::TokenizedExample;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: windowed mean KL {kl:.4} exceeds ceiling {ceiling}")]
    KlCeiling { step: usize, kl: f64, ceiling: f64 },
    #[error("step {step}: non-finite {what}")]
    NonFinite { step: usize, what: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TrainError {
    /// Whether the error is a divergence guard trip rather than a usage error.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            TrainError::KlCeiling { .. } | TrainError::NonFinite { .. } | TrainError::Optim(OptimError::NonFinite { .. })
        ) || matches!(self, TrainError::Loss(LossError::NonFinite { .. }))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub off_policy_per_group: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated_references: Option<usize>,
    pub tokens: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_kl: Option<f64>,
    /// Validation BLEU in `[0, 1]`, when a validation split was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_bleu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P, F> {
    pub policy: P,
    pub best: P,
    /// Epoch of `best` (0 when no validation split was given).
    pub best_epoch: usize,
    pub best_val_bleu: Option<f64>,
    pub optimizer: AdamW<F>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Linear warm-up over the first `warmup_fraction` of steps, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(base: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            base,
            warmup_steps: (warmup_fraction * total_steps as f64).ceil() as usize,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.base
        } else {
            self.base * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Stream id separating validation sampling from training sampling.
pub(crate) const VALIDATION_STREAM: u64 = 0x7a11;
pub(crate) const SHUFFLE_STREAM: u64 = 0x5u64;
pub(crate) const SAMPLE_STREAM: u64 = 0x5a_u64;

/// Tracks the best validation BLEU across epochs (ties keep the earlier).
pub(crate) struct BestTracker<P> {
    pub best: Option<(P, usize, f64)>,
    examples: Vec<TokenizedExample>,
    sampling: SamplingParams,
    seed: u64,
}

impl<P: Clone> BestTracker<P> {
    pub fn new(validation: &[TokenizedExample], limit: Option<usize>, sampling: SamplingParams, seed: u64) -> Self {
        let n = limit.unwrap_or(validation.len()).min(validation.len());
        Self {
            best: None,
            examples: validation[..n].to_vec(),
            sampling,
            seed,
        }
    }

    pub fn observe<F: Real>(&mut self, policy: &P, epoch: usize) -> Result<Option<f64>, TrainError>
    where
        P: Trainable<F>,
    {
        if self.examples.is_empty() {
            return Ok(None);
        }
        let scores = evaluate::<F, P>(
            policy,
            &self.examples,
            &self.sampling,
            crate::seeding::derive_seed(self.seed, &[VALIDATION_STREAM]),
            &[MetricId::Bleu],
        )?;
        let bleu = scores.get(MetricId::Bleu);
        if self.best.as_ref().is_none_or(|(_, _, b)| bleu > *b) {
            self.best = Some((policy.clone(), epoch, bleu));
        }
        Ok(Some(bleu))
    }

    pub fn finish<F: Real>(self, policy: P, optimizer: AdamW<F>, steps: Vec<StepRecord>, epochs: Vec<EpochRecord>) -> TrainOutcome<P, F> {
        let (best, best_epoch, best_val_bleu) = match self.best {
            Some((p, e, b)) => (p, e, Some(b)),
            None => (policy.clone(), 0, None),
        };
        TrainOutcome {
            policy,
            best,
            best_epoch,
            best_val_bleu,
            optimizer,
            steps,
            epochs,
        }
    }
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_then_constant() {
        let s = LrSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert!((s.at(0) - 0.1).abs() < 1e-15);
        assert_eq!(s.at(9), 1.0);
        assert_eq!(s.at(50), 1.0);
        assert_eq!(LrSchedule::new(0.5, 0.0, 100).at(0), 0.5);
    }
}
