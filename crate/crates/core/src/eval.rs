//! Scoring a policy's generations against references on every metric.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::metrics::{score, MetricError, MetricId};
use crate::policy::{sample, Policy, PolicyError, SamplingParams};
use crate::scalar::Real;
use crate::seeding::rng_for;
use crate::tasks::TokenizedExample;
use crate::vocab::{strip_eos, TokenId};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Mean metric values in `[0, 1]` over `count` examples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalScores {
    pub count: usize,
    pub means: BTreeMap<MetricId, f64>,
}

impl EvalScores {
    pub fn get(&self, metric: MetricId) -> f64 {
        self.means.get(&metric).copied().unwrap_or(0.0)
    }
}

/// One completion per example, drawn from the stream `(seed, index)`.
pub fn generate<F, P>(
    policy: &P,
    examples: &[TokenizedExample],
    sampling: &SamplingParams,
    seed: u64,
) -> Result<Vec<Vec<TokenId>>, PolicyError>
where
    F: Real,
    P: Policy<F>,
{
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = rng_for(seed, &[i as u64]);
            sample::<F, P, _>(policy, &ex.prompt, 1, sampling, &mut rng)
                .map(|mut v| v.remove(0).tokens)
        })
        .collect()
}

pub fn evaluate<F, P>(
    policy: &P,
    examples: &[TokenizedExample],
    sampling: &SamplingParams,
    seed: u64,
    metrics: &[MetricId],
) -> Result<EvalScores, EvalError>
where
    F: Real,
    P: Policy<F>,
{
    let outputs = generate::<F, P>(policy, examples, sampling, seed)?;
    score_outputs(&outputs, examples, metrics)
}

pub fn score_outputs(
    outputs: &[Vec<TokenId>],
    examples: &[TokenizedExample],
    metrics: &[MetricId],
) -> Result<EvalScores, EvalError> {
    let mut sums: BTreeMap<MetricId, f64> = metrics.iter().map(|&m| (m, 0.0)).collect();
    for (out, ex) in outputs.iter().zip(examples) {
        for &m in metrics {
            let s = score::<f64>(m, strip_eos(out), &ex.reference)?;
            *sums.get_mut(&m).expect("metric present") += s.value;
        }
    }
    let n = examples.len().max(1) as f64;
    Ok(EvalScores {
        count: examples.len(),
        means: sums.into_iter().map(|(m, s)| (m, s / n)).collect(),
    })
}
