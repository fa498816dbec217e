use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{draw_distinct, DatasetSplit, Example, SplitSizes, TaskError, TaskId};

/// Answer for a question about a key that is not among the facts.
pub const UNKNOWN_ANSWER: &str = "not known";

const TEMPLATES: [&str; 3] = [
    "facts : {facts} question : what is {key} ?",
    "context : {facts} tell me {key} ?",
    "given {facts} answer for {key} ?",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopyQaParams {
    pub seed: u64,
    pub sizes: SplitSizes,
    pub num_keys: usize,
    pub num_values: usize,
    pub min_facts: usize,
    pub max_facts: usize,
    pub max_value_len: usize,
    /// Probability that the question asks about a key absent from the facts.
    pub absent_rate: f64,
}

impl Default for CopyQaParams {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: SplitSizes::default(),
            num_keys: 8,
            num_values: 10,
            min_facts: 2,
            max_facts: 3,
            max_value_len: 3,
            absent_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct Item {
    facts: Vec<(usize, Vec<usize>)>,
    key: usize,
}

impl Item {
    fn facts_text(&self) -> String {
        self.facts
            .iter()
            .map(|(k, v)| {
                let vals: Vec<String> = v.iter().map(|i| format!("v{i}")).collect();
                format!("k{k} is {} ;", vals.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn answer(&self) -> String {
        match self.facts.iter().find(|(k, _)| *k == self.key) {
            Some((_, v)) => v.iter().map(|i| format!("v{i}")).collect::<Vec<_>>().join(" "),
            None => UNKNOWN_ANSWER.to_string(),
        }
    }
}

pub(super) fn words(p: &CopyQaParams) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let fixed = TEMPLATES
        .iter()
        .flat_map(|t| t.split_whitespace())
        .chain(["is", ";"])
        .chain(UNKNOWN_ANSWER.split_whitespace())
        .filter(|w| !w.starts_with('{'));
    for w in fixed {
        if !out.iter().any(|o| o == w) {
            out.push(w.to_string());
        }
    }
    out.extend((0..p.num_keys).map(|i| format!("k{i}")));
    out.extend((0..p.num_values).map(|i| format!("v{i}")));
    out
}

fn validate(p: &CopyQaParams) -> Result<(), TaskError> {
    if p.min_facts == 0 || p.min_facts > p.max_facts {
        return Err(TaskError::Params(format!("facts range {}..={}", p.min_facts, p.max_facts)));
    }
    if p.max_facts >= p.num_keys {
        return Err(TaskError::Params("need more keys than facts per example".into()));
    }
    if p.num_values == 0 || p.max_value_len == 0 {
        return Err(TaskError::Params("empty value alphabet or phrase".into()));
    }
    if !(0.0..=1.0).contains(&p.absent_rate) {
        return Err(TaskError::Params(format!("absent_rate {}", p.absent_rate)));
    }
    Ok(())
}

fn draw(p: &CopyQaParams, rng: &mut impl Rng) -> Item {
    let n = rng.random_range(p.min_facts..=p.max_facts);
    let mut keys: Vec<usize> = (0..p.num_keys).collect();
    keys.shuffle(rng);
    let facts: Vec<(usize, Vec<usize>)> = keys[..n]
        .iter()
        .map(|&k| {
            let len = rng.random_range(1..=p.max_value_len);
            (k, (0..len).map(|_| rng.random_range(0..p.num_values)).collect())
        })
        .collect();
    let key = if rng.random_bool(p.absent_rate) {
        keys[n + rng.random_range(0..p.num_keys - n)]
    } else {
        facts[rng.random_range(0..n)].0
    };
    Item { facts, key }
}

pub fn gen_copyqa(p: &CopyQaParams) -> Result<DatasetSplit, TaskError> {
    validate(p)?;
    let (train, validation, test) = draw_distinct(
        &p.sizes,
        p.seed,
        |it: &Item| format!("{} ? k{}", it.facts_text(), it.key),
        |rng| draw(p, rng),
    )?;
    let mut index = 0usize;
    let mut make = |items: Vec<Item>| -> Vec<Example> {
        items
            .into_iter()
            .map(|it| {
                let prompt = TEMPLATES[index % TEMPLATES.len()]
                    .replace("{facts}", &it.facts_text())
                    .replace("{key}", &format!("k{}", it.key));
                index += 1;
                Example {
                    prompt,
                    reference: it.answer(),
                    task_id: TaskId::CopyQa,
                }
            })
            .collect()
    };
    let train = make(train);
    let validation = make(validation);
    let test = make(test);
    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

fn is_key(w: &str) -> bool {
    w.strip_prefix('k').is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

pub(super) fn solve(prompt: &str) -> String {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    let mut facts: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut i = 0;
    while i + 1 < words.len() {
        if is_key(words[i]) && words[i + 1] == "is" {
            let vals: Vec<&str> = words[i + 2..]
                .iter()
                .take_while(|w| **w != ";")
                .copied()
                .collect();
            i += 2 + vals.len();
            facts.insert(words[i - 2 - vals.len()], vals);
        } else {
            i += 1;
        }
    }
    let question = words.iter().rev().find(|w| is_key(w));
    match question.and_then(|q| facts.get(q)) {
        Some(vals) => vals.join(" "),
        None => UNKNOWN_ANSWER.to_string(),
    }
}
