use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_len_range, draw_distinct, DatasetSplit, Example, SplitSizes, TaskError, TaskId};

const CIPHER_TEMPLATES: [&str; 3] = [
    "encode : {}",
    "apply the cipher to : {}",
    "translate this sequence : {}",
];

const REVERSE_TEMPLATES: [&str; 3] = [
    "reverse : {}",
    "say it backwards : {}",
    "read from the end : {}",
];

/// Seed offset separating the substitution draw from the sentence draws.
const PERMUTATION_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CipherParams {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    /// Swap adjacent output pairs after substitution.
    pub swap_pairs: bool,
    /// Use the identity substitution instead of a seeded permutation.
    pub identity: bool,
}

impl Default for CipherParams {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: SplitSizes::default(),
            min_len: 3,
            max_len: 6,
            vocab_size: 32,
            swap_pairs: false,
            identity: false,
        }
    }
}

impl CipherParams {
    /// `substitution[i]` is the output symbol index for input symbol `i`.
    pub fn substitution(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.vocab_size).collect();
        if !self.identity {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ PERMUTATION_STREAM);
            perm.shuffle(&mut rng);
        }
        perm
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReverseParams {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for ReverseParams {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: SplitSizes::default(),
            min_len: 3,
            max_len: 6,
            vocab_size: 32,
        }
    }
}

pub(super) fn symbol(i: usize) -> String {
    format!("w{i}")
}

fn template_words(templates: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in templates {
        for w in t.split_whitespace().filter(|w| *w != "{}") {
            if !out.iter().any(|o| o == w) {
                out.push(w.to_string());
            }
        }
    }
    out
}

pub(super) fn cipher_words(p: &CipherParams) -> Vec<String> {
    let mut words = template_words(&CIPHER_TEMPLATES);
    words.extend((0..p.vocab_size).map(symbol));
    words
}

pub(super) fn reverse_words(p: &ReverseParams) -> Vec<String> {
    let mut words = template_words(&REVERSE_TEMPLATES);
    words.extend((0..p.vocab_size).map(symbol));
    words
}

fn draw_sentence(rng: &mut ChaCha8Rng, min: usize, max: usize, vocab: usize) -> Vec<usize> {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| rng.random_range(0..vocab)).collect()
}

fn render(ids: &[usize]) -> String {
    ids.iter().map(|&i| symbol(i)).collect::<Vec<_>>().join(" ")
}

fn encipher(p: &CipherParams, sub: &[usize], src: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = src.iter().map(|&i| sub[i]).collect();
    if p.swap_pairs {
        for pair in out.chunks_exact_mut(2) {
            pair.swap(0, 1);
        }
    }
    out
}

fn build(
    templates: &[&str],
    task: TaskId,
    splits: (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<Vec<usize>>),
    target: impl Fn(&[usize]) -> Vec<usize>,
) -> DatasetSplit {
    let mut index = 0usize;
    let mut make = |srcs: Vec<Vec<usize>>| -> Vec<Example> {
        srcs.into_iter()
            .map(|src| {
                let prompt = templates[index % templates.len()].replace("{}", &render(&src));
                index += 1;
                Example {
                    prompt,
                    reference: render(&target(&src)),
                    task_id: task,
                }
            })
            .collect()
    };
    let train = make(splits.0);
    let validation = make(splits.1);
    let test = make(splits.2);
    DatasetSplit {
        train,
        validation,
        test,
    }
}

pub fn gen_cipher(p: &CipherParams) -> Result<DatasetSplit, TaskError> {
    check_len_range(p.min_len, p.max_len)?;
    if p.vocab_size < 10 {
        return Err(TaskError::Params(format!("vocab_size {} < 10", p.vocab_size)));
    }
    let sub = p.substitution();
    let splits = draw_distinct(&p.sizes, p.seed, |s: &Vec<usize>| render(s), |rng| {
        draw_sentence(rng, p.min_len, p.max_len, p.vocab_size)
    })?;
    Ok(build(&CIPHER_TEMPLATES, TaskId::Cipher, splits, |src| {
        encipher(p, &sub, src)
    }))
}

pub fn gen_reverse(p: &ReverseParams) -> Result<DatasetSplit, TaskError> {
    check_len_range(p.min_len, p.max_len)?;
    if p.vocab_size < 10 {
        return Err(TaskError::Params(format!("vocab_size {} < 10", p.vocab_size)));
    }
    let splits = draw_distinct(&p.sizes, p.seed, |s: &Vec<usize>| render(s), |rng| {
        draw_sentence(rng, p.min_len, p.max_len, p.vocab_size)
    })?;
    Ok(build(&REVERSE_TEMPLATES, TaskId::Reverse, splits, |src| {
        src.iter().rev().copied().collect()
    }))
}

/// Source symbols: everything after the last `:`.
fn source_ids(prompt: &str) -> Vec<usize> {
    let tail = prompt.rsplit(':').next().unwrap_or("");
    tail.split_whitespace()
        .filter_map(|w| w.strip_prefix('w').and_then(|n| n.parse().ok()))
        .collect()
}

pub(super) fn solve_cipher(p: &CipherParams, prompt: &str) -> String {
    let sub = p.substitution();
    let src: Vec<usize> = source_ids(prompt)
        .into_iter()
        .filter(|&i| i < sub.len())
        .collect();
    render(&encipher(p, &sub, &src))
}

pub(super) fn solve_reverse(prompt: &str) -> String {
    let mut src = source_ids(prompt);
    src.reverse();
    render(&src)
}
