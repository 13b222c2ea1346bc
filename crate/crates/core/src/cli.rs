//! Command-line front end.
//!
//! Every lifecycle command reads and rewrites one checkpoint file, so a run
//! is a sequence of invocations:
//!
//! ```text
//! conure synth --out data/
//! conure train   --data data/ --checkpoint run.ck --task 1 --config run.toml
//! conure prune   --checkpoint run.ck --task 1
//! conure retrain --data data/ --checkpoint run.ck --task 1
//! conure commit  --checkpoint run.ck --task 1
//! conure eval    --data data/ --checkpoint run.ck --task 1 --split test
//! ```
//!
//! The log level comes from `CONURE_LOG` (default `info`).

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint;
use crate::continual::{capacity_report, TaskState};
use crate::data::{
    derive_ml_tasks, generate_synthetic_tasks, parse_interactions, read_dataset, split_dataset, write_dataset,
    ContinualDataset, DatasetSplits, RatingThresholds, SplitName, SynthSpec,
};
use crate::error::{Error, Result};
use crate::eval::{audit_snapshot, forgetting_audit, MetricReport};
use crate::training::{
    label_space, retrain_after_prune, run_task, run_task_training, write_history, Learner, Mode, PhaseSummary,
    RunConfig, TaskData,
};
use crate::task::TaskId;

pub const LOG_ENV: &str = "CONURE_LOG";

#[derive(Parser, Debug)]
#[command(name = "conure", version, about = "Continual user representation learning with parameter isolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Convert a rating log into task files.
    Ingest(IngestArgs),
    /// Write a synthetic three-task dataset.
    Synth(SynthArgs),
    /// Register a task if needed and run its training phase.
    Train(TrainArgs),
    /// Prune a trained task.
    Prune(PruneArgs),
    /// Retrain a pruned task.
    Retrain(RetrainArgs),
    /// Commit a task.
    Commit(TaskArgs),
    /// Evaluate one task.
    Eval(EvalArgs),
    /// Compare committed-task metrics across checkpoints.
    Audit(AuditArgs),
    /// Train two tasks with and without parameter isolation and compare
    /// the first task before and after the second.
    DemoForgetting(DemoArgs),
    /// Metrics of every committed task, as text and JSON.
    Report(ReportArgs),
    /// Free and owned capacity of the shared backbone.
    Capacity(CheckpointArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Rating log: `user item rating timestamp` per line.
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Field separator; detected from the first line when absent.
    #[arg(long)]
    pub delimiter: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub window: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct TaskArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: u16,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Created when missing.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: u16,
    /// Run configuration for a new checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Appends JSON-lines history here.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: u16,
    /// Overrides the configured ratio.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct RetrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: u16,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub task: u16,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
}

#[derive(Args, Debug)]
pub struct AuditArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints in chronological order.
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Dataset directory; a synthetic dataset is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Step budget for each task.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate of the second task.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: SplitName,
    /// JSON output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv`, runs the command and maps errors to a nonzero status.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a, out),
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Prune(a) => prune(a, out),
        Command::Retrain(a) => retrain(a, out),
        Command::Commit(a) => commit(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Audit(a) => audit(a, out),
        Command::DemoForgetting(a) => demo(a, out),
        Command::Report(a) => report(a, out),
        Command::Capacity(a) => capacity(a, out),
    }
}

fn ingest(a: IngestArgs, out: &mut dyn Write) -> Result<()> {
    let records = parse_interactions(&a.ratings, a.delimiter.as_deref())?;
    let ds = derive_ml_tasks(&records, a.window, &RatingThresholds::default())?;
    write_dataset(&ds, &a.out)?;
    writeln!(out, "{} users, {} items", ds.num_users(), ds.num_items())?;
    writeln!(out, "T1: {} sequences over {} items", ds.sequences.len(), ds.num_items())?;
    for t in &ds.tasks {
        writeln!(out, "{}: {} instances over {} labels", t.id, t.instances.len(), t.num_labels())?;
    }
    Ok(())
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => toml::from_str(&std::fs::read_to_string(p).map_err(Error::file(p))?).map_err(|e| Error::Config(e.to_string()))?,
        None => SynthSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(u) = a.users {
        spec.users = u;
    }
    if let Some(r) = a.rho {
        spec.rho = r;
    }
    let ds = generate_synthetic_tasks(&spec)?;
    write_dataset(&ds, &a.out)?;
    writeln!(out, "{} users, {} items, {} labels", ds.num_users(), ds.num_items(), spec.num_labels())?;
    Ok(())
}

fn load_data(dir: &Path, config: &RunConfig) -> Result<(ContinualDataset, DatasetSplits)> {
    let ds = read_dataset(dir)?;
    let splits = split_dataset(&ds, &config.split, &config.split_overrides())?;
    Ok((ds, splits))
}

fn open_learner(a: &TrainArgs, num_items: usize) -> Result<Learner> {
    if a.checkpoint.exists() {
        let learner = checkpoint::load(&a.checkpoint)?;
        if a.config.is_some() {
            return Err(Error::Config("--config only applies to a new checkpoint".into()));
        }
        if let Some(m) = a.mode {
            if m != learner.mode() {
                return Err(Error::Config(format!("checkpoint was created in {} mode, not {m}", learner.mode())));
            }
        }
        return Ok(learner);
    }
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = a.mode {
        config.train.mode = m;
    }
    Learner::new(config, num_items)
}

fn append_history(path: Option<&Path>, phase: &PhaseSummary) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = BufWriter::new(file);
    write_history(&mut w, &phase.history)?;
    w.flush()?;
    Ok(())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let mut learner = open_learner(&a, ds.num_items())?;
    let splits = split_dataset(&ds, &learner.config.split, &learner.config.split_overrides())?;
    let task = TaskId(a.task);
    if learner.registry.get(task).is_err() {
        let (kind, labels) = label_space(&ds, task)?;
        learner.begin_task(task, kind, labels)?;
    }
    let summary = run_task_training(&mut learner, &TaskData::new(&ds, &splits), task, a.steps)?;
    append_history(a.history.as_deref(), &summary)?;
    checkpoint::save(&learner, &a.checkpoint)?;
    writeln!(out, "{task} trained {} steps, best validation {:.6}", summary.steps, summary.best)?;
    Ok(())
}

fn prune(a: PruneArgs, out: &mut dyn Write) -> Result<()> {
    let mut learner = checkpoint::load(&a.checkpoint)?;
    let task = TaskId(a.task);
    let decisions = learner.prune(task, a.ratio)?;
    let freed: usize = decisions.iter().map(|(_, d)| d.freed.len()).sum();
    let candidates: usize = decisions.iter().map(|(_, d)| d.candidates).sum();
    checkpoint::save(&learner, &a.checkpoint)?;
    writeln!(out, "{task} freed {freed} of {candidates} candidate weights")?;
    Ok(())
}

fn retrain(a: RetrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut learner = checkpoint::load(&a.checkpoint)?;
    let (ds, splits) = load_data(&a.data, &learner.config)?;
    let task = TaskId(a.task);
    let summary = retrain_after_prune(&mut learner, &TaskData::new(&ds, &splits), task, a.steps)?;
    append_history(a.history.as_deref(), &summary)?;
    checkpoint::save(&learner, &a.checkpoint)?;
    writeln!(out, "{task} retrained {} steps, best validation {:.6}", summary.steps, summary.best)?;
    Ok(())
}

fn commit(a: TaskArgs, out: &mut dyn Write) -> Result<()> {
    let mut learner = checkpoint::load(&a.checkpoint)?;
    let task = TaskId(a.task);
    learner.commit(task)?;
    checkpoint::save(&learner, &a.checkpoint)?;
    writeln!(out, "{task} committed")?;
    Ok(())
}

fn format_report(r: &MetricReport) -> String {
    format!("{}\t{}\t{}\t{:.6}\t{}", r.task, r.split, r.metric, r.value, r.count)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let learner = checkpoint::load(&a.checkpoint)?;
    let (ds, splits) = load_data(&a.data, &learner.config)?;
    let report = learner.evaluate(&ds, &splits, TaskId(a.task), a.split)?;
    writeln!(out, "{}", format_report(&report))?;
    Ok(())
}

fn audit(a: AuditArgs, out: &mut dyn Write) -> Result<()> {
    let mut snapshots = Vec::new();
    let mut data: Option<(ContinualDataset, DatasetSplits)> = None;
    for path in &a.checkpoints {
        let learner = checkpoint::load(path)?;
        if data.is_none() {
            data = Some(load_data(&a.data, &learner.config)?);
        }
        let (ds, splits) = data.as_ref().expect("loaded above");
        snapshots.push(audit_snapshot(
            path.display().to_string(),
            &learner.model,
            &learner.registry,
            learner.ownership.as_ref(),
            ds,
            splits,
            a.split,
            learner.config.train.max_eval,
        )?);
    }
    writeln!(out, "task\tbaseline\tcheckpoint\tbefore\tafter\tdelta\tidentical")?;
    for row in forgetting_audit(&snapshots)? {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:+.6}\t{}",
            row.task, row.baseline_checkpoint, row.checkpoint, row.baseline, row.value, row.delta, row.identical
        )?;
    }
    Ok(())
}

/// First-task metric of one mode before and after the second task.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForgettingOutcome {
    pub mode: Mode,
    pub before: f64,
    pub after: f64,
    pub identical: bool,
}

impl ForgettingOutcome {
    pub fn relative_drop(&self) -> f64 {
        if self.before == 0.0 {
            0.0
        } else {
            (self.before - self.after) / self.before
        }
    }
}

/// Trains the first two tasks of `dataset` once per mode and measures the
/// first task's test metric at its commit and after the second task.
pub fn forgetting_demo(config: &RunConfig, dataset: &ContinualDataset, modes: &[Mode]) -> Result<Vec<ForgettingOutcome>> {
    let splits = split_dataset(dataset, &config.split, &config.split_overrides())?;
    let data = TaskData::new(dataset, &splits);
    let second = dataset
        .tasks
        .first()
        .map(|t| t.id)
        .ok_or_else(|| Error::Data("the dataset has no labelled task".into()))?;
    let mut outcomes = Vec::new();
    for &mode in modes {
        let mut cfg = config.clone();
        cfg.train.mode = mode;
        let mut learner = Learner::new(cfg, dataset.num_items())?;
        run_task(&mut learner, &data, TaskId(1))?;
        let before = learner.evaluate(dataset, &splits, TaskId(1), SplitName::Test)?;
        run_task(&mut learner, &data, second)?;
        let after = learner.evaluate(dataset, &splits, TaskId(1), SplitName::Test)?;
        outcomes.push(ForgettingOutcome {
            mode,
            before: before.value,
            after: after.value,
            identical: before.fingerprint == after.fingerprint,
        });
    }
    Ok(outcomes)
}

fn demo(a: DemoArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.steps {
        config.train.steps = s;
        config.train.retrain_steps = s / 2;
    }
    if let Some(lr) = a.lr {
        config.train.lr = lr;
    }
    config.validate()?;
    let ds = match &a.data {
        Some(dir) => read_dataset(dir)?,
        None => generate_synthetic_tasks(&SynthSpec { seed: config.train.seed, ..Default::default() })?,
    };
    for o in forgetting_demo(&config, &ds, &[Mode::Sinmoall, Mode::Conure])? {
        writeln!(
            out,
            "{}\tT1 before {:.6}\tafter {:.6}\tdelta {:+.6}\trelative drop {:.1}%\tidentical {}",
            o.mode,
            o.before,
            o.after,
            o.after - o.before,
            100.0 * o.relative_drop(),
            o.identical
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    mode: Mode,
    tasks: Vec<ReportTask<'a>>,
    capacity: Option<crate::continual::CapacityReport>,
}

#[derive(Serialize)]
struct ReportTask<'a> {
    task: TaskId,
    state: TaskState,
    prune_ratio: Option<f64>,
    best_validation: Option<f64>,
    report: Option<&'a MetricReport>,
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let learner = checkpoint::load(&a.checkpoint)?;
    let (ds, splits) = load_data(&a.data, &learner.config)?;
    let snap = audit_snapshot(
        a.checkpoint.display().to_string(),
        &learner.model,
        &learner.registry,
        learner.ownership.as_ref(),
        &ds,
        &splits,
        a.split,
        learner.config.train.max_eval,
    )?;
    writeln!(out, "task\tsplit\tmetric\tvalue\tcount")?;
    for r in snap.reports.values() {
        writeln!(out, "{}", format_report(r))?;
    }
    if let Some(path) = &a.out {
        let file = ReportFile {
            mode: learner.mode(),
            tasks: learner
                .registry
                .tasks()
                .iter()
                .map(|t| ReportTask {
                    task: t.id,
                    state: t.state,
                    prune_ratio: t.prune_ratio,
                    best_validation: t.best_metric,
                    report: snap.reports.get(&t.id),
                })
                .collect(),
            capacity: learner.ownership.as_ref().map(capacity_report),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn capacity(a: CheckpointArgs, out: &mut dyn Write) -> Result<()> {
    let learner = checkpoint::load(&a.checkpoint)?;
    let own = learner
        .ownership
        .as_ref()
        .ok_or_else(|| Error::Config(format!("capacity is only tracked in conure mode, run mode is {}", learner.mode())))?;
    let rep = capacity_report(own);
    writeln!(out, "tensor\tfree\ttotal\tfree_fraction")?;
    for t in &rep.tensors {
        writeln!(out, "{}\t{}\t{}\t{:.4}", t.name, t.free, t.total, t.free_fraction())?;
    }
    for (label, n) in &rep.owned {
        writeln!(out, "owned by {}\t{n}", TaskId(*label))?;
    }
    writeln!(out, "free\t{}\t{}\t{:.4}", rep.free, rep.total, rep.free_fraction())?;
    Ok(())
}
