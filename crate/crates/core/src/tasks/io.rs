//! Line-delimited JSON datasets plus a sidecar manifest.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Example, TaskError, TaskSpec};
use crate::vocab::Vocabulary;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Generator parameters and vocabulary, written next to the split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub spec: TaskSpec,
    pub vocab_digest: String,
    pub vocab: Vocabulary,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Manifest {
    pub fn new(spec: &TaskSpec, data: &DatasetSplit) -> Result<Self, TaskError> {
        let vocab = spec.vocabulary()?;
        Ok(Self {
            generator: concat!("grpo-core ", env!("CARGO_PKG_VERSION")).to_string(),
            spec: spec.clone(),
            vocab_digest: vocab.digest(),
            vocab,
            train: data.train.len(),
            validation: data.validation.len(),
            test: data.test.len(),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TaskError + '_ {
    move |source| TaskError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_split(path: &Path, examples: &[Example]) -> Result<(), TaskError> {
    let mut buf = Vec::new();
    for e in examples {
        serde_json::to_writer(&mut buf, e).expect("examples serialize");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

pub fn load_split(path: &Path) -> Result<Vec<Example>, TaskError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(line).map_err(|e| TaskError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if ex.reference.split_whitespace().next().is_none() {
            return Err(TaskError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: "empty reference".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

/// Writes `train.jsonl`, `validation.jsonl`, `test.jsonl` and the manifest.
pub fn save_dir(dir: &Path, spec: &TaskSpec, data: &DatasetSplit) -> Result<Manifest, TaskError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_split(&dir.join("train.jsonl"), &data.train)?;
    save_split(&dir.join("validation.jsonl"), &data.validation)?;
    save_split(&dir.join("test.jsonl"), &data.test)?;
    let manifest = Manifest::new(spec, data)?;
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn load_dir(dir: &Path) -> Result<(Manifest, DatasetSplit), TaskError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| TaskError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let data = DatasetSplit {
        train: load_split(&dir.join("train.jsonl"))?,
        validation: load_split(&dir.join("validation.jsonl"))?,
        test: load_split(&dir.join("test.jsonl"))?,
    };
    Ok((manifest, data))
}
