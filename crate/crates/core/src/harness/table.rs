//! Report rows and their CSV / markdown renderings. Scores are reported on
//! a 0–100 scale rounded to two decimals.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::Arm;
use crate::eval::EvalScores;
use crate::metrics::MetricId;
use crate::tasks::TaskId;

/// Column order of every score table.
pub const METRIC_COLUMNS: [MetricId; 5] = MetricId::ALL;

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn format_score(x: f64) -> String {
    format!("{x:.2}")
}

/// Mean of already-rounded column values. With five two-decimal inputs the
/// result has at most three decimals, so it is printed with three.
fn row_average(values: &[f64]) -> f64 {
    let cents: i64 = values.iter().map(|v| (v * 100.0).round() as i64).sum();
    cents as f64 / (100.0 * values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub arm: Arm,
    pub task: TaskId,
    pub checkpoint: String,
    pub count: usize,
    pub eval_seed: u64,
    pub config_digest: String,
    pub scores: BTreeMap<MetricId, f64>,
    pub avg: f64,
}

impl EvalReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        arm: Arm,
        task: TaskId,
        checkpoint: &str,
        eval_seed: u64,
        config_digest: &str,
        raw: &EvalScores,
    ) -> Self {
        let scores: BTreeMap<MetricId, f64> = METRIC_COLUMNS
            .iter()
            .map(|&m| (m, round2(100.0 * raw.get(m))))
            .collect();
        let avg = row_average(&scores.values().copied().collect::<Vec<_>>());
        Self {
            name: name.to_string(),
            arm,
            task,
            checkpoint: checkpoint.to_string(),
            count: raw.count,
            eval_seed,
            config_digest: config_digest.to_string(),
            scores,
            avg,
        }
    }

    pub fn get(&self, metric: MetricId) -> f64 {
        self.scores.get(&metric).copied().unwrap_or(0.0)
    }

    pub fn values(&self) -> Vec<f64> {
        METRIC_COLUMNS.iter().map(|&m| self.get(m)).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} ({}, {})\n", self.name, self.arm, self.task.name());
        let _ = writeln!(out, "{} test examples, config `{}`\n", self.count, &self.config_digest[..12.min(self.config_digest.len())]);
        out.push_str(&header("Arm"));
        let cells: Vec<String> = self.values().iter().map(|v| format_score(*v)).collect();
        let _ = writeln!(out, "| {} | {} | {:.3} |", self.arm, cells.join(" | "), self.avg);
        out
    }
}

fn header(first: &str) -> String {
    let names: Vec<&str> = METRIC_COLUMNS.iter().map(|m| m.name()).collect();
    format!(
        "| {first} | {} | AVG |\n|{}\n",
        names.join(" | "),
        "---|".repeat(names.len() + 2)
    )
}

/// `reward,BLEU,ROUGE-1,ROUGE-2,ROUGE-L,METEOR,AVG`, one row per reward.
pub fn render_ablation_csv(rows: &[(MetricId, EvalReport)]) -> String {
    let names: Vec<&str> = METRIC_COLUMNS.iter().map(|m| m.name()).collect();
    let mut out = format!("reward,{},AVG\n", names.join(","));
    for (reward, report) in rows {
        let cells: Vec<String> = report.values().iter().map(|v| format_score(*v)).collect();
        let _ = writeln!(out, "{},{},{:.3}", reward.name(), cells.join(","), report.avg);
    }
    out
}

/// Markdown rewards × metrics table; the best value of each column is bold.
pub fn render_ablation_markdown(title: &str, rows: &[(MetricId, EvalReport)]) -> String {
    let mut out = format!("# {title}\n\nRows: training reward. Columns: test metric (×100). Bold: column maximum.\n\n");
    out.push_str(&header("Reward"));
    let ncol = METRIC_COLUMNS.len() + 1;
    let column = |j: usize, r: &EvalReport| if j < METRIC_COLUMNS.len() { r.values()[j] } else { r.avg };
    let best: Vec<f64> = (0..ncol)
        .map(|j| rows.iter().map(|(_, r)| column(j, r)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for (reward, report) in rows {
        let cells: Vec<String> = (0..ncol)
            .map(|j| {
                let v = column(j, report);
                let s = if j < METRIC_COLUMNS.len() { format_score(v) } else { format!("{v:.3}") };
                if v == best[j] {
                    format!("**{s}**")
                } else {
                    s
                }
            })
            .collect();
        let _ = writeln!(out, "| {} | {} |", reward.name(), cells.join(" | "));
    }
    out
}
