//! Text-similarity scores over token sequences, used both as rewards and as
//! evaluation metrics. Every score lies in `[0, 1]`.
//!
//! All functions are pure. An empty reference is an error (invalid dataset
//! row); an empty candidate scores 0.

mod bleu;
mod meteor;
mod ngram;
mod rouge;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::vocab::TokenId;

pub use bleu::bleu;
pub use meteor::{meteor_lite, MeteorParams};
pub use ngram::NGramCounts;
pub use rouge::{lcs_len, rouge_l, rouge_n};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("unsupported n-gram order {0}")]
    BadOrder(usize),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "BLEU")]
    Bleu,
    #[serde(rename = "ROUGE-1")]
    Rouge1,
    #[serde(rename = "ROUGE-2")]
    Rouge2,
    #[serde(rename = "ROUGE-L")]
    RougeL,
    #[serde(rename = "METEOR")]
    Meteor,
}

impl MetricId {
    pub const ALL: [MetricId; 5] = [
        MetricId::Bleu,
        MetricId::Rouge1,
        MetricId::Rouge2,
        MetricId::RougeL,
        MetricId::Meteor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Bleu => "BLEU",
            MetricId::Rouge1 => "ROUGE-1",
            MetricId::Rouge2 => "ROUGE-2",
            MetricId::RougeL => "ROUGE-L",
            MetricId::Meteor => "METEOR",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        match norm.as_str() {
            "BLEU" => Ok(MetricId::Bleu),
            "ROUGE1" => Ok(MetricId::Rouge1),
            "ROUGE2" => Ok(MetricId::Rouge2),
            "ROUGEL" => Ok(MetricId::RougeL),
            "METEOR" => Ok(MetricId::Meteor),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricScore<F> {
    pub value: F,
    pub metric: MetricId,
}

/// Scores `candidate` against `reference` with the named metric.
pub fn score<F: Real>(
    metric: MetricId,
    candidate: &[TokenId],
    reference: &[TokenId],
) -> Result<MetricScore<F>, MetricError> {
    match metric {
        MetricId::Bleu => bleu(candidate, reference, 4),
        MetricId::Rouge1 => rouge_n(candidate, reference, 1),
        MetricId::Rouge2 => rouge_n(candidate, reference, 2),
        MetricId::RougeL => rouge_l(candidate, reference),
        MetricId::Meteor => meteor_lite(candidate, reference, &MeteorParams::default()),
    }
}

/// Reward in `[0, 1]`: the metric value itself.
pub fn reward<F: Real>(
    metric: MetricId,
    candidate: &[TokenId],
    reference: &[TokenId],
) -> Result<F, MetricError> {
    score(metric, candidate, reference).map(|s| s.value)
}

fn f1<F: Real>(p: F, r: F) -> F {
    if p + r > F::zero() {
        F::lit(2.0) * p * r / (p + r)
    } else {
        F::zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_id_parses_loosely() {
        assert_eq!("bleu".parse::<MetricId>().unwrap(), MetricId::Bleu);
        assert_eq!("ROUGE-L".parse::<MetricId>().unwrap(), MetricId::RougeL);
        assert_eq!("rouge1".parse::<MetricId>().unwrap(), MetricId::Rouge1);
        assert!("bertscore".parse::<MetricId>().is_err());
        for m in MetricId::ALL {
            assert_eq!(m.name().parse::<MetricId>().unwrap(), m);
        }
    }

    #[test]
    fn reward_dispatch() {
        let r = [5, 6, 7, 8];
        assert_eq!(reward::<f64>(MetricId::Bleu, &r, &r).unwrap(), 1.0);
        assert_eq!(reward::<f64>(MetricId::Rouge1, &[9, 10], &r).unwrap(), 0.0);
        assert_eq!(reward::<f64>(MetricId::Meteor, &[5, 6], &[6, 5]).unwrap(), 0.5);
    }

    #[test]
    fn empty_reference_propagates() {
        for m in MetricId::ALL {
            assert_eq!(
                reward::<f64>(m, &[1], &[]).unwrap_err(),
                MetricError::EmptyReference
            );
        }
    }

    #[test]
    fn empty_candidate_scores_zero() {
        for m in MetricId::ALL {
            assert_eq!(reward::<f64>(m, &[], &[4, 5]).unwrap(), 0.0);
        }
    }
}
