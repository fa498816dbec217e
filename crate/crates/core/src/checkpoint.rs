//! Versioned JSON checkpoints. Parameter vectors are stored as hex-encoded
//! little-endian `f64` bit patterns so `θ` round-trips bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optim::{AdamW, AdamWParams};
use crate::policy::{AnyPolicy, Architecture, NeuralPolicy, NeuralShape, TabularPolicy, Trainable};
use crate::scalar::Real;
use crate::vocab::Vocabulary;

pub const FORMAT: &str = "grpo-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub vocab: Vocabulary,
    pub policy: AnyPolicy<F>,
    pub optimizer: Option<AdamW<F>>,
    pub config_digest: String,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct OptimizerFile {
    params: AdamWParams,
    step: u64,
    m: String,
    v: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    label: String,
    config_digest: String,
    vocab_digest: String,
    vocab: Vocabulary,
    architecture: Architecture,
    param_count: usize,
    theta: String,
    optimizer: Option<OptimizerFile>,
}

fn encode<F: Real>(xs: &[F]) -> String {
    let mut bytes = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        bytes.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    hex::encode(bytes)
}

fn decode<F: Real>(s: &str) -> Result<Vec<F>, CheckpointError> {
    let bytes = hex::decode(s).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(CheckpointError::Format("parameter blob not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| F::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect())
}

impl<F: Real> Checkpoint<F> {
    pub fn to_json(&self) -> Result<String, CheckpointError> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            version: VERSION,
            label: self.label.clone(),
            config_digest: self.config_digest.clone(),
            vocab_digest: self.vocab.digest(),
            vocab: self.vocab.clone(),
            architecture: self.policy.architecture(),
            param_count: self.policy.params().len(),
            theta: encode(self.policy.params()),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerFile {
                params: o.params,
                step: o.step,
                m: encode(&o.m),
                v: encode(&o.v),
            }),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported format {} v{}",
                file.format, file.version
            )));
        }
        if file.vocab.digest() != file.vocab_digest {
            return Err(CheckpointError::Format("vocabulary digest mismatch".into()));
        }
        let theta: Vec<F> = decode(&file.theta)?;
        if theta.len() != file.param_count {
            return Err(CheckpointError::Format(format!(
                "expected {} parameters, found {}",
                file.param_count,
                theta.len()
            )));
        }
        let v = file.vocab.len();
        let bad = |e: crate::policy::PolicyError| CheckpointError::Format(e.to_string());
        let policy = match file.architecture {
            Architecture::Tabular { order } => {
                AnyPolicy::Tabular(TabularPolicy::from_params(v, order, theta).map_err(bad)?)
            }
            Architecture::Neural { embed, hidden } => AnyPolicy::Neural(
                NeuralPolicy::from_params(NeuralShape::new(v, embed, hidden), theta).map_err(bad)?,
            ),
        };
        let optimizer = match file.optimizer {
            None => None,
            Some(o) => {
                let m: Vec<F> = decode(&o.m)?;
                let vv: Vec<F> = decode(&o.v)?;
                if m.len() != file.param_count || vv.len() != file.param_count {
                    return Err(CheckpointError::Format("optimizer state shape".into()));
                }
                Some(AdamW {
                    params: o.params,
                    step: o.step,
                    m,
                    v: vv,
                })
            }
        };
        Ok(Self {
            vocab: file.vocab,
            policy,
            optimizer,
            config_digest: file.config_digest,
            label: file.label,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_json()?).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> Vocabulary {
        Vocabulary::new(["x", "y", "z"]).unwrap()
    }

    #[test]
    fn neural_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = vocab();
        let p = NeuralPolicy::<f64>::new(NeuralShape::new(v.len(), 4, 5), &mut rng).unwrap();
        let mut opt = AdamW::new(p.params().len(), AdamWParams::default());
        let mut theta = p.params().to_vec();
        let g: Vec<f64> = (0..theta.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        opt.step(&mut theta, &g).unwrap();
        let ck = Checkpoint {
            vocab: v,
            policy: AnyPolicy::Neural(NeuralPolicy::from_params(p.shape(), theta).unwrap()),
            optimizer: Some(opt),
            config_digest: "abc".into(),
            label: "test".into(),
        };
        let back = Checkpoint::<f64>::from_json(&ck.to_json().unwrap()).unwrap();
        let bits = |xs: &[f64]| xs.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.policy.params()), bits(ck.policy.params()));
        assert_eq!(back, ck);
    }

    #[test]
    fn f32_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = vocab();
        let p = TabularPolicy::<f32>::random(v.len(), 1, 1.0, &mut rng).unwrap();
        let ck = Checkpoint {
            vocab: v,
            policy: AnyPolicy::Tabular(p),
            optimizer: None,
            config_digest: String::new(),
            label: String::new(),
        };
        let back = Checkpoint::<f32>::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_tampered_vocab() {
        let ck = Checkpoint {
            vocab: vocab(),
            policy: AnyPolicy::Tabular(TabularPolicy::<f64>::zeros(7, 0).unwrap()),
            optimizer: None,
            config_digest: String::new(),
            label: String::new(),
        };
        let json = ck.to_json().unwrap().replace("\"z\"", "\"w\"");
        assert!(matches!(
            Checkpoint::<f64>::from_json(&json),
            Err(CheckpointError::Format(_))
        ));
    }
}
