use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::table::{format_score, render_ablation_csv, render_ablation_markdown, EvalReport, METRIC_COLUMNS};
use super::{io_err, Arm, ExperimentConfig, HarnessError, Start, INIT_STREAM};
use crate::checkpoint::Checkpoint;
use crate::eval::evaluate;
use crate::grpo::grpo_train;
use crate::metrics::MetricId;
use crate::optim::AdamW;
use crate::policy::{AnyPolicy, Architecture, NeuralPolicy, NeuralShape, Policy, TabularPolicy, Trainable};
use crate::seeding::rng_for;
use crate::sft::sft_train;
use crate::tasks::{load_dir, save_dir, Manifest};
use crate::tasks::{tokenize_examples, DatasetSplit, TaskSpec, TokenizedExample};
use crate::training::{EpochRecord, StepRecord, TrainOutcome};
use crate::vocab::Vocabulary;

/// Uniform initialization range of tabular logits.
const TABULAR_INIT_SCALE: f64 = 0.08;

/// A dataset with its vocabulary and tokenized splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub vocab: Vocabulary,
    pub raw: DatasetSplit,
    pub train: Vec<TokenizedExample>,
    pub validation: Vec<TokenizedExample>,
    pub test: Vec<TokenizedExample>,
}

impl Dataset {
    pub fn new(spec: TaskSpec, vocab: Vocabulary, raw: DatasetSplit) -> Self {
        Self {
            train: tokenize_examples(&vocab, &raw.train),
            validation: tokenize_examples(&vocab, &raw.validation),
            test: tokenize_examples(&vocab, &raw.test),
            spec,
            vocab,
            raw,
        }
    }
}

/// Loads `data_dir` when configured (checking that it was generated from the
/// configured task), otherwise generates the dataset in memory.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let expected_vocab = cfg.task.vocabulary()?;
    match &cfg.data_dir {
        None => Ok(Dataset::new(cfg.task.clone(), expected_vocab, cfg.task.generate()?)),
        Some(dir) => {
            let (manifest, raw) = load_dir(dir)?;
            if manifest.spec != cfg.task {
                return Err(HarnessError::Config(format!(
                    "dataset in {} was generated from different task parameters",
                    dir.display()
                )));
            }
            if manifest.vocab.digest() != expected_vocab.digest() {
                return Err(HarnessError::VocabMismatch {
                    checkpoint: expected_vocab.digest(),
                    dataset: manifest.vocab.digest(),
                });
            }
            Ok(Dataset::new(manifest.spec, manifest.vocab, raw))
        }
    }
}

pub fn initial_policy(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<AnyPolicy<f64>, HarnessError> {
    let mut rng = rng_for(cfg.seed, &[INIT_STREAM]);
    Ok(match cfg.model {
        Architecture::Neural { embed, hidden } => {
            AnyPolicy::Neural(NeuralPolicy::new(NeuralShape::new(vocab.len(), embed, hidden), &mut rng)?)
        }
        Architecture::Tabular { order } => {
            AnyPolicy::Tabular(TabularPolicy::random(vocab.len(), order, TABULAR_INIT_SCALE, &mut rng)?)
        }
    })
}

/// The policy a run starts from: `cold` itself, or the best checkpoint of a
/// supervised run of `epochs` epochs from `cold`.
fn starting_policy(
    cfg: &ExperimentConfig,
    data: &Dataset,
    cold: &AnyPolicy<f64>,
    start: Start,
    epochs: usize,
) -> Result<AnyPolicy<f64>, HarnessError> {
    Ok(match start {
        Start::Cold => cold.clone(),
        Start::Sft => {
            let mut warm = cfg.clone();
            warm.sft.epochs = epochs;
            train_arm(&warm, Arm::Sft, data, cold.clone(), &mut |_| {})?.best
        }
    })
}

pub type ArmRun = TrainOutcome<AnyPolicy<f64>, f64>;

/// Trains one arm from `init`. `BASE` returns `init` untouched.
pub fn train_arm(
    cfg: &ExperimentConfig,
    arm: Arm,
    data: &Dataset,
    init: AnyPolicy<f64>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<ArmRun, HarnessError> {
    Ok(match arm {
        Arm::Base => {
            let n = init.params().len();
            TrainOutcome {
                best: init.clone(),
                policy: init,
                best_epoch: 0,
                best_val_bleu: None,
                optimizer: AdamW::new(n, cfg.sft.optimizer()),
                steps: Vec::new(),
                epochs: Vec::new(),
            }
        }
        Arm::Sft => sft_train(init, &data.train, &data.validation, &cfg.sft_for_seed(), on_step)?,
        Arm::Grpo | Arm::MpGrpo => grpo_train(init, &data.train, &data.validation, &cfg.grpo_for(arm), on_step)?,
    })
}

/// Scores `policy` on the (possibly limited) test split.
pub fn evaluate_policy<P: Policy<f64>>(
    cfg: &ExperimentConfig,
    arm: Arm,
    policy: &P,
    data: &Dataset,
    checkpoint: &str,
) -> Result<EvalReport, HarnessError> {
    let n = cfg.eval.limit.unwrap_or(data.test.len()).min(data.test.len());
    let scores = evaluate::<f64, P>(policy, &data.test[..n], &cfg.eval.sampling(), cfg.eval_seed(), &METRIC_COLUMNS)?;
    Ok(EvalReport::new(
        &cfg.name,
        arm,
        data.spec.task_id(),
        checkpoint,
        cfg.eval_seed(),
        &cfg.digest(),
        &scores,
    ))
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Opens `dir/train_log.jsonl` and returns a step sink appending to it.
fn log_sink(dir: &Path) -> Result<impl FnMut(&StepRecord), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join("train_log.jsonl");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    Ok(move |r: &StepRecord| {
        let line = serde_json::to_string(r).expect("record serializes");
        if writeln!(w, "{line}").and_then(|_| w.flush()).is_err() {
            log::warn!("could not append to the training log");
        }
    })
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    let data = cfg.task.generate()?;
    Ok(save_dir(out, &cfg.task, &data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub name: String,
    pub arm: Arm,
    pub seed: u64,
    pub config_digest: String,
    pub steps: usize,
    pub best_epoch: usize,
    pub best_val_bleu: Option<f64>,
    pub epochs: Vec<EpochRecord>,
}

fn save_checkpoint(cfg: &ExperimentConfig, data: &Dataset, policy: &AnyPolicy<f64>, optimizer: Option<AdamW<f64>>, path: &Path, label: &str) -> Result<(), HarnessError> {
    let ck = Checkpoint {
        vocab: data.vocab.clone(),
        policy: policy.clone(),
        optimizer,
        config_digest: cfg.digest(),
        label: label.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(ck.save(path)?)
}

/// Trains `cfg.arm`, writing `train_log.jsonl`, `best.ckpt.json`,
/// `final.ckpt.json` and `summary.json` into `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary, HarnessError> {
    let data = load_data(cfg)?;
    let init = initial_policy(cfg, &data.vocab)?;
    let mut sink = log_sink(out)?;
    let run = train_arm(cfg, cfg.arm, &data, init, &mut sink)?;
    let base = format!("{}/{}", cfg.name, cfg.arm);
    save_checkpoint(cfg, &data, &run.best, None, &out.join("best.ckpt.json"), &format!("{base}/best"))?;
    save_checkpoint(cfg, &data, &run.policy, Some(run.optimizer.clone()), &out.join("final.ckpt.json"), &format!("{base}/final"))?;
    let summary = TrainSummary {
        name: cfg.name.clone(),
        arm: cfg.arm,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        steps: run.steps.len(),
        best_epoch: run.best_epoch,
        best_val_bleu: run.best_val_bleu,
        epochs: run.epochs.clone(),
    };
    write(&out.join("summary.json"), &to_json(&summary))?;
    Ok(summary)
}

/// Evaluates a checkpoint on the configured dataset's test split. Refuses
/// checkpoints whose vocabulary differs from the dataset's.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: Option<&Path>) -> Result<EvalReport, HarnessError> {
    let data = load_data(cfg)?;
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    if ck.vocab.digest() != data.vocab.digest() {
        return Err(HarnessError::VocabMismatch {
            checkpoint: ck.vocab.digest(),
            dataset: data.vocab.digest(),
        });
    }
    let report = evaluate_policy(cfg, cfg.arm, &ck.policy, &data, &ck.label)?;
    if let Some(dir) = out {
        write(&dir.join("eval.json"), &report.to_json())?;
        write(&dir.join("eval.md"), &report.to_markdown())?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub reward: MetricId,
    pub report: EvalReport,
    pub run: ArmRun,
}

/// One GRPO run per reward in `cfg.ablate.rewards`, sharing data, seed and
/// starting policy; each best-validation checkpoint is scored on every metric.
/// `log_dir` receives one training log per reward.
pub fn ablate(cfg: &ExperimentConfig, log_dir: Option<&Path>) -> Result<Vec<AblationRow>, HarnessError> {
    if cfg.ablate.rewards.is_empty() {
        return Err(HarnessError::Config("[ablate] rewards is empty".into()));
    }
    let arm = if cfg.arm == Arm::MpGrpo { Arm::MpGrpo } else { Arm::Grpo };
    let data = load_data(cfg)?;
    let cold = initial_policy(cfg, &data.vocab)?;
    let init = starting_policy(cfg, &data, &cold, cfg.ablate.start, cfg.ablate.warm_start_epochs)?;
    cfg.ablate
        .rewards
        .par_iter()
        .map(|&reward| {
            let mut run_cfg = cfg.clone();
            run_cfg.grpo.reward = reward;
            let mut sink: Box<dyn FnMut(&StepRecord) + Send> = match log_dir {
                Some(dir) => Box::new(log_sink(&dir.join(reward.name()))?),
                None => Box::new(|_: &StepRecord| {}),
            };
            let run = train_arm(&run_cfg, arm, &data, init.clone(), &mut sink)?;
            let report = evaluate_policy(cfg, arm, &run.best, &data, &format!("{}/{}/best", cfg.name, reward.name()))?;
            Ok(AblationRow { reward, report, run })
        })
        .collect()
}

/// Writes `ablation.csv`, `ablation.md` and `ablation.json`.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>, HarnessError> {
    let rows = ablate(cfg, Some(&out.join("logs")))?;
    let table: Vec<(MetricId, EvalReport)> = rows.iter().map(|r| (r.reward, r.report.clone())).collect();
    write(&out.join("ablation.csv"), &render_ablation_csv(&table))?;
    write(&out.join("ablation.md"), &render_ablation_markdown(&format!("Reward ablation: {}", cfg.name), &table))?;
    write(&out.join("ablation.json"), &to_json(&table.iter().map(|(_, r)| r).collect::<Vec<_>>()))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub start: Start,
    pub arm: Arm,
    pub epoch: usize,
    /// Validation BLEU ×100.
    pub val_bleu: f64,
}

#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub points: Vec<CurvePoint>,
    /// Per start: best validation BLEU of every arm.
    pub best: Vec<(Start, Vec<(Arm, f64)>)>,
    pub runs: Vec<(Start, Arm, ArmRun)>,
}

impl CompareOutcome {
    /// Arms with the highest best-validation BLEU under `start` (ties keep all).
    pub fn leaders(&self, start: Start) -> Vec<Arm> {
        let Some((_, arms)) = self.best.iter().find(|(s, _)| *s == start) else {
            return Vec::new();
        };
        let top = arms.iter().map(|(_, b)| *b).fold(f64::NEG_INFINITY, f64::max);
        arms.iter().filter(|(_, b)| *b == top).map(|(a, _)| *a).collect()
    }
}

/// Learning curves of `cfg.compare.arms` under each configured start.
pub fn compare(cfg: &ExperimentConfig, log_dir: Option<&Path>) -> Result<CompareOutcome, HarnessError> {
    let data = load_data(cfg)?;
    if data.validation.is_empty() {
        return Err(HarnessError::Config("compare needs a validation split".into()));
    }
    let cold = initial_policy(cfg, &data.vocab)?;
    let mut jobs = Vec::new();
    for &start in &cfg.compare.starts {
        let init = starting_policy(cfg, &data, &cold, start, cfg.compare.warm_start_epochs)?;
        for &arm in &cfg.compare.arms {
            jobs.push((start, arm, init.clone()));
        }
    }
    let runs: Vec<(Start, Arm, ArmRun)> = jobs
        .into_par_iter()
        .map(|(start, arm, init)| {
            let mut sink: Box<dyn FnMut(&StepRecord) + Send> = match log_dir {
                Some(dir) => Box::new(log_sink(&dir.join(format!("{start}-{arm}")))?),
                None => Box::new(|_: &StepRecord| {}),
            };
            Ok((start, arm, train_arm(cfg, arm, &data, init, &mut sink)?))
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut points = Vec::new();
    let mut best: Vec<(Start, Vec<(Arm, f64)>)> = Vec::new();
    for (start, arm, run) in &runs {
        for e in &run.epochs {
            points.push(CurvePoint {
                start: *start,
                arm: *arm,
                epoch: e.epoch,
                val_bleu: super::round2(100.0 * e.val_bleu.unwrap_or(0.0)),
            });
        }
        let b = super::round2(100.0 * run.best_val_bleu.unwrap_or(0.0));
        match best.iter_mut().find(|(s, _)| s == start) {
            Some((_, v)) => v.push((*arm, b)),
            None => best.push((*start, vec![(*arm, b)])),
        }
    }
    Ok(CompareOutcome { points, best, runs })
}

/// Writes `curves.csv` (`start,arm,epoch,val_bleu`) and `compare.md`, which
/// records which arm led under each start.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<CompareOutcome, HarnessError> {
    let outcome = compare(cfg, Some(&out.join("logs")))?;
    let mut csv = String::from("start,arm,epoch,val_bleu\n");
    for p in &outcome.points {
        let _ = writeln!(csv, "{},{},{},{}", p.start, p.arm, p.epoch, format_score(p.val_bleu));
    }
    write(&out.join("curves.csv"), &csv)?;
    let mut md = format!("# Learning curves: {}\n\nValidation BLEU (×100) per epoch.\n\n", cfg.name);
    for (start, arms) in &outcome.best {
        let _ = writeln!(md, "## {start} start\n");
        let _ = writeln!(md, "| Arm | best val BLEU |\n|---|---|");
        for (arm, b) in arms {
            let _ = writeln!(md, "| {arm} | {} |", format_score(*b));
        }
        let leaders = outcome.leaders(*start);
        let names: Vec<String> = leaders.iter().map(|a| a.to_string()).collect();
        let verdict = if leaders.len() > 1 {
            format!("tie between {}", names.join(", "))
        } else {
            format!("{} led", names.join(""))
        };
        let _ = writeln!(md, "\nLeader: {verdict}.\n");
    }
    write(&out.join("compare.md"), &md)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub arm: Arm,
    pub seeds: Vec<u64>,
    /// Per metric: mean and sample standard deviation over seeds (×100).
    pub scores: BTreeMap<MetricId, (f64, f64)>,
    pub reports: Vec<EvalReport>,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Trains and evaluates every configured arm under `cfg.report.seeds`
/// consecutive seeds, summarizing each metric as mean ± standard deviation.
pub fn report(cfg: &ExperimentConfig) -> Result<Vec<SeedSummary>, HarnessError> {
    let data = load_data(cfg)?;
    let seeds: Vec<u64> = (0..cfg.report.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let jobs: Vec<(Arm, u64)> = cfg
        .report
        .arms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let reports: Vec<(Arm, EvalReport)> = jobs
        .into_par_iter()
        .map(|(arm, seed)| {
            let run_cfg = cfg.with_seed(seed);
            let init = initial_policy(&run_cfg, &data.vocab)?;
            let run = train_arm(&run_cfg, arm, &data, init, &mut |_| {})?;
            let report = evaluate_policy(&run_cfg, arm, &run.best, &data, &format!("{}/{arm}/seed{seed}", cfg.name))?;
            Ok((arm, report))
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(cfg
        .report
        .arms
        .iter()
        .map(|&arm| {
            let rs: Vec<EvalReport> = reports.iter().filter(|(a, _)| *a == arm).map(|(_, r)| r.clone()).collect();
            let scores = METRIC_COLUMNS
                .iter()
                .map(|&m| (m, mean_sd(&rs.iter().map(|r| r.get(m)).collect::<Vec<_>>())))
                .collect();
            SeedSummary {
                arm,
                seeds: seeds.clone(),
                scores,
                reports: rs,
            }
        })
        .collect())
}

/// Writes `report.csv` (`arm,metric,mean,std,seeds`) and `report.md`.
pub fn cmd_report(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SeedSummary>, HarnessError> {
    let summaries = report(cfg)?;
    let mut csv = String::from("arm,metric,mean,std,seeds\n");
    let names: Vec<&str> = METRIC_COLUMNS.iter().map(|m| m.name()).collect();
    let mut md = format!(
        "# {}: test scores over {} seeds (mean ± std, ×100)\n\n| Arm | {} |\n|{}\n",
        cfg.name,
        cfg.report.seeds,
        names.join(" | "),
        "---|".repeat(names.len() + 1)
    );
    for s in &summaries {
        let mut cells = Vec::new();
        for m in METRIC_COLUMNS {
            let (mean, sd) = s.scores[&m];
            let _ = writeln!(csv, "{},{},{:.2},{:.2},{}", s.arm, m.name(), mean, sd, s.seeds.len());
            cells.push(format!("{mean:.2} ± {sd:.2}"));
        }
        let _ = writeln!(md, "| {} | {} |", s.arm, cells.join(" | "));
    }
    write(&out.join("report.csv"), &csv)?;
    write(&out.join("report.md"), &md)?;
    Ok(summaries)
}
