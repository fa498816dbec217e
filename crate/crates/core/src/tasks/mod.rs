//! Synthetic open-format transduction tasks.
//!
//! * `cipher`: a seeded bijective substitution applied position-wise,
//!   optionally followed by swapping adjacent pairs.
//! * `reverse`: the source read backwards.
//! * `copyqa`: a list of key/value facts and a question about one key; the
//!   answer is that key's value phrase, or a fixed phrase for absent keys.
//!
//! Prompts rotate through several instruction templates by example index.
//! Generation is a pure function of the parameters, and no source utterance
//! appears in more than one split.

mod copyqa;
mod io;
mod transduce;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vocab::{TokenId, VocabError, Vocabulary};

pub use copyqa::{CopyQaParams, UNKNOWN_ANSWER};
pub use io::{load_dir, load_split, save_dir, save_split, Manifest, MANIFEST_FILE};
pub use transduce::{CipherParams, ReverseParams};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid generation parameters: {0}")]
    Params(String),
    #[error("could only draw {got} distinct source utterances out of {wanted}")]
    Exhausted { wanted: usize, got: usize },
    #[error("I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Cipher,
    Reverse,
    CopyQa,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::Cipher => "cipher",
            TaskId::Reverse => "reverse",
            TaskId::CopyQa => "copyqa",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cipher" => Ok(TaskId::Cipher),
            "reverse" => Ok(TaskId::Reverse),
            "copyqa" => Ok(TaskId::CopyQa),
            _ => Err(TaskError::UnknownTask(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub prompt: String,
    pub reference: String,
    pub task_id: TaskId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    /// `size` training examples and `size / 10` each for validation and test.
    pub fn scaled(size: usize) -> Self {
        Self {
            train: size,
            validation: size / 10,
            test: size / 10,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 5000,
            validation: 500,
            test: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generation parameters for any task, tagged by task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum TaskSpec {
    Cipher(CipherParams),
    Reverse(ReverseParams),
    #[serde(rename = "copyqa")]
    CopyQa(CopyQaParams),
}

impl TaskSpec {
    pub fn default_for(task: TaskId, seed: u64) -> Self {
        match task {
            TaskId::Cipher => TaskSpec::Cipher(CipherParams {
                seed,
                ..CipherParams::default()
            }),
            TaskId::Reverse => TaskSpec::Reverse(ReverseParams {
                seed,
                ..ReverseParams::default()
            }),
            TaskId::CopyQa => TaskSpec::CopyQa(CopyQaParams {
                seed,
                ..CopyQaParams::default()
            }),
        }
    }

    pub fn task_id(&self) -> TaskId {
        match self {
            TaskSpec::Cipher(_) => TaskId::Cipher,
            TaskSpec::Reverse(_) => TaskId::Reverse,
            TaskSpec::CopyQa(_) => TaskId::CopyQa,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            TaskSpec::Cipher(p) => p.seed,
            TaskSpec::Reverse(p) => p.seed,
            TaskSpec::CopyQa(p) => p.seed,
        }
    }

    pub fn sizes_mut(&mut self) -> &mut SplitSizes {
        match self {
            TaskSpec::Cipher(p) => &mut p.sizes,
            TaskSpec::Reverse(p) => &mut p.sizes,
            TaskSpec::CopyQa(p) => &mut p.sizes,
        }
    }

    pub fn generate(&self) -> Result<DatasetSplit, TaskError> {
        match self {
            TaskSpec::Cipher(p) => transduce::gen_cipher(p),
            TaskSpec::Reverse(p) => transduce::gen_reverse(p),
            TaskSpec::CopyQa(p) => copyqa::gen_copyqa(p),
        }
    }

    /// Every word any prompt or reference of this task can contain.
    pub fn vocabulary(&self) -> Result<Vocabulary, TaskError> {
        let words = match self {
            TaskSpec::Cipher(p) => transduce::cipher_words(p),
            TaskSpec::Reverse(p) => transduce::reverse_words(p),
            TaskSpec::CopyQa(p) => copyqa::words(p),
        };
        Ok(Vocabulary::new(words)?)
    }

    /// The data-generating rule: the reference for a prompt.
    pub fn solve(&self, prompt: &str) -> String {
        match self {
            TaskSpec::Cipher(p) => transduce::solve_cipher(p, prompt),
            TaskSpec::Reverse(_) => transduce::solve_reverse(prompt),
            TaskSpec::CopyQa(_) => copyqa::solve(prompt),
        }
    }

    /// Rule-following pseudo-policy over `vocab`.
    pub fn oracle_policy(&self, vocab: &Vocabulary) -> crate::policy::RulePolicy {
        let spec = self.clone();
        let v = vocab.clone();
        crate::policy::RulePolicy::new(vocab.len(), move |prompt: &[TokenId]| {
            let text = v.detokenize(prompt);
            v.tokenize(&spec.solve(&text)).into_inner()
        })
    }
}

/// Prompt and reference mapped through a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub prompt: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

pub fn tokenize_examples(vocab: &Vocabulary, examples: &[Example]) -> Vec<TokenizedExample> {
    examples
        .iter()
        .map(|e| TokenizedExample {
            prompt: vocab.tokenize(&e.prompt).into_inner(),
            reference: vocab.tokenize(&e.reference).into_inner(),
        })
        .collect()
}

/// Draws distinct items with `draw` and deals them into the three splits.
fn draw_distinct<T, K, D>(
    sizes: &SplitSizes,
    seed: u64,
    key: K,
    mut draw: D,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), TaskError>
where
    K: Fn(&T) -> String,
    D: FnMut(&mut ChaCha8Rng) -> T,
{
    let wanted = sizes.total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(wanted);
    let budget = 100 * wanted + 1000;
    for _ in 0..budget {
        if items.len() == wanted {
            break;
        }
        let item = draw(&mut rng);
        if seen.insert(key(&item)) {
            items.push(item);
        }
    }
    if items.len() < wanted {
        return Err(TaskError::Exhausted {
            wanted,
            got: items.len(),
        });
    }
    let test = items.split_off(sizes.train + sizes.validation);
    let validation = items.split_off(sizes.train);
    Ok((items, validation, test))
}

fn check_len_range(min: usize, max: usize) -> Result<(), TaskError> {
    if min == 0 || min > max {
        return Err(TaskError::Params(format!("length range {min}..={max}")));
    }
    Ok(())
}
