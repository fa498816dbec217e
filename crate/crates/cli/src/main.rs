use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grpo_core::harness::{
    cmd_ablate, cmd_compare, cmd_eval, cmd_gen, cmd_report, cmd_train, format_score, Arm, ExperimentConfig,
    HarnessError, WORKERS_ENV,
};
use grpo_core::tasks::{TaskId, TaskSpec};
use grpo_core::MetricId;

#[derive(Parser)]
#[command(name = "grpo", version, about = "GRPO fine-tuning with text-similarity rewards on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset directory (splits plus manifest).
    Gen(Common),
    /// Train one arm; writes checkpoints, a step log and a summary.
    Train(Common),
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train one GRPO arm per reward and tabulate every metric.
    Ablate(Common),
    /// Record per-epoch validation curves of the compared arms.
    Compare(Common),
    /// Multi-seed mean and standard deviation per arm.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML. Without it, defaults for --task are used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    arm: Option<Arm>,
    /// Reward metric; repeat or comma-separate for ablations.
    #[arg(long, value_delimiter = ',')]
    reward: Vec<MetricId>,
    #[arg(long)]
    task: Option<TaskId>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => {
                let task = self.task.unwrap_or(TaskId::Cipher);
                ExperimentConfig::for_task(task.name(), TaskSpec::default_for(task, 0))
            }
        };
        if let Some(task) = self.task {
            if task != cfg.task.task_id() {
                cfg.task = TaskSpec::default_for(task, cfg.task.seed());
                cfg.data_dir = None;
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(arm) = self.arm {
            cfg.arm = arm;
        }
        match self.reward.as_slice() {
            [] => {}
            [one] => {
                cfg.grpo.reward = *one;
                cfg.ablate.rewards = vec![*one];
            }
            many => cfg.ablate.rewards = many.to_vec(),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: &Command) -> Result<(), HarnessError> {
    match command {
        Command::Gen(c) => {
            let mut cfg = c.config()?;
            // For generation --seed selects the dataset seed.
            if let Some(seed) = c.seed {
                cfg.task = with_task_seed(&cfg.task, seed);
            }
            let m = cmd_gen(&cfg, &c.out)?;
            println!(
                "{} dataset: {} train / {} validation / {} test, vocabulary {} -> {}",
                m.spec.task_id(),
                m.train,
                m.validation,
                m.test,
                m.vocab.len(),
                c.out.display()
            );
        }
        Command::Train(c) => {
            let cfg = c.config()?;
            let s = cmd_train(&cfg, &c.out)?;
            for e in &s.epochs {
                println!(
                    "epoch {} loss {:.4} reward {} kl {} val BLEU {}",
                    e.epoch,
                    e.mean_loss,
                    opt(e.mean_reward, 3),
                    opt(e.mean_kl, 3),
                    e.val_bleu.map(|b| format_score(100.0 * b)).unwrap_or_else(|| "-".into())
                );
            }
            println!("{} {}: {} steps, best epoch {} -> {}", s.name, s.arm, s.steps, s.best_epoch, c.out.display());
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.config()?;
            let report = cmd_eval(&cfg, checkpoint, Some(&common.out))?;
            print!("{}", report.to_markdown());
        }
        Command::Ablate(c) => {
            let cfg = c.config()?;
            cmd_ablate(&cfg, &c.out)?;
            print_file(&c.out.join("ablation.md"));
        }
        Command::Compare(c) => {
            let cfg = c.config()?;
            cmd_compare(&cfg, &c.out)?;
            print_file(&c.out.join("compare.md"));
        }
        Command::Report(c) => {
            let cfg = c.config()?;
            cmd_report(&cfg, &c.out)?;
            print_file(&c.out.join("report.md"));
        }
    }
    Ok(())
}

fn with_task_seed(task: &TaskSpec, seed: u64) -> TaskSpec {
    let mut t = task.clone();
    match &mut t {
        TaskSpec::Cipher(p) => p.seed = seed,
        TaskSpec::Reverse(p) => p.seed = seed,
        TaskSpec::CopyQa(p) => p.seed = seed,
    }
    t
}

fn opt(x: Option<f64>, digits: usize) -> String {
    x.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "-".into())
}

fn print_file(path: &Path) {
    if let Ok(text) = std::fs::read_to_string(path) {
        print!("{text}");
    }
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error [usage]: {e}");
        return ExitCode::from(2);
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = e.category();
            eprintln!("error [{}]: {e}", cat.name());
            ExitCode::from(cat.exit_code() as u8)
        }
    }
}
