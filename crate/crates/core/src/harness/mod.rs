//! Command-line front end: configuration, run directories, and the
//! `gen-data | train | eval | sweep | curves | analyze` commands.
//!
//! Every command writes into one run directory: the resolved config as
//! `config.toml`, its outputs, and finally an empty `DONE` marker. A directory
//! without `DONE` holds partial output.

pub mod analysis;
pub mod config;
pub mod curves;

use crate::data::{
    decode_biased_responses, length_stats, make_dataset, noise_rates, read_jsonl, read_jsonl_for_training, write_jsonl,
    PreferenceRecord,
};
use crate::error::{Error, Result};
use crate::policy::LogLinearPolicy;
use crate::sweep::noise_sweep;
use crate::trainer::{answer_accuracy, evaluate, train_with_observer, EvalMetrics, EvalPoint, EVAL_MAX_LEN};
use analysis::{analyze_margins, MarginAnalysis};
use clap::{Parser, Subcommand};
use config::{Generator, InitPolicy, RunConfig};
use serde::Serialize;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Default parent directory for run directories when `--out` is not given.
pub const OUT_ROOT_ENV: &str = "NAPO_OUT_ROOT";
pub const DONE_MARKER: &str = "DONE";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "napo", version, about = "Noise-aware preference optimization on a synthetic bimodal task")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, training and the pilot fit.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory. Defaults to `$NAPO_OUT_ROOT/<command>-<timestamp>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Config override `key.path=value`, e.g. `train.step_size=0.05`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a preference dataset as JSONL.
    GenData,
    /// Train from the configured starting policy.
    Train {
        /// Training records; generated from `[data]` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out records; generated from `[heldout]` when absent.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Start from this checkpoint instead of `init`.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Score a checkpoint on held-out records.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference for preference accuracy; the all-zero policy when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Held-out records; generated from `[heldout]` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every (noise rate, arm, seed) cell and tabulate final metrics.
    Sweep,
    /// Tabulate MAE, BCE and Box-Cox losses over a probability grid.
    Curves,
    /// Margin histograms split by noise flag, plus response-length statistics.
    Analyze {
        /// Records with noise flags; generated from `[data]` when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Scoring policy; the pilot policy when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference policy. Without one, margins are the scoring policy's own
        /// log-probability margins.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Sweep => "sweep",
            Command::Curves => "curves",
            Command::Analyze { .. } => "analyze",
        }
    }
}

/// Output directory of one command invocation.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Uses `out` as-is when given; otherwise a fresh timestamped directory
    /// under `$NAPO_OUT_ROOT` (or `runs`). A stale `DONE` marker is removed.
    pub fn create(out: Option<&Path>, command: &str) -> Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => {
                let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
                let base = root.join(format!("{command}-{stamp}"));
                let mut candidate = base.clone();
                let mut k = 1;
                while candidate.exists() {
                    candidate = PathBuf::from(format!("{}-{k}", base.display()));
                    k += 1;
                }
                candidate
            }
        };
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let marker = path.join(DONE_MARKER);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        Ok(RunDir { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.file(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let p = self.file(name);
        let mut w = csv::Writer::from_path(&p).map_err(|e| csv_error(&p, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| csv_error(&p, e))?;
        }
        w.flush().map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn finish(&self) -> Result<()> {
        self.write(DONE_MARKER, "").map(|_| ())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("run directory: {}", dir.path().display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

/// Resolves the configuration for `cli` without running anything.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Command::Train { init: Some(p), .. } = &cli.command {
        cfg.init = InitPolicy::Checkpoint(p.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<RunDir> {
    let cfg = resolve_config(cli)?;
    let dir = RunDir::create(cli.out.as_deref(), cli.command.name())?;
    dir.write("config.toml", cfg.to_toml()?)?;
    match &cli.command {
        Command::GenData => {
            cmd_gen_data(&cfg, &dir)?;
        }
        Command::Train { data, heldout, .. } => {
            cmd_train(&cfg, &dir, data.as_deref(), heldout.as_deref())?;
        }
        Command::Eval {
            checkpoint,
            reference,
            data,
        } => {
            cmd_eval(&cfg, &dir, checkpoint, reference.as_deref(), data.as_deref())?;
        }
        Command::Sweep => cmd_sweep(&cfg, &dir)?,
        Command::Curves => cmd_curves(&cfg, &dir)?,
        Command::Analyze {
            data,
            checkpoint,
            reference,
        } => {
            cmd_analyze(&cfg, &dir, data.as_deref(), checkpoint.as_deref(), reference.as_deref())?;
        }
    }
    dir.finish()?;
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct DataSummary {
    n_records: usize,
    lb_noise_rate: f64,
    vb_noise_rate: f64,
}

/// Generates `[data]` and writes `data.jsonl`.
pub fn cmd_gen_data(cfg: &RunConfig, dir: &RunDir) -> Result<Vec<PreferenceRecord>> {
    let mut records = make_dataset(&cfg.data)?;
    if cfg.generator == Generator::Decoded {
        records = decode_biased_responses(&records, &cfg.pilot_policy()?, EVAL_MAX_LEN)?;
    }
    write_jsonl(&records, &dir.file("data.jsonl"))?;
    let (lb, vb) = noise_rates(&records)?;
    dir.write_json(
        "summary.json",
        &DataSummary {
            n_records: records.len(),
            lb_noise_rate: lb,
            vb_noise_rate: vb,
        },
    )?;
    println!("wrote {} records; lb noise rate {lb:.4}, vb noise rate {vb:.4}", records.len());
    Ok(records)
}

#[derive(Debug, Serialize)]
struct TrainMetrics<'a> {
    #[serde(rename = "final")]
    last: Option<EvalMetrics>,
    answer_accuracy: f64,
    steps: usize,
    evals: &'a [EvalPoint],
}

fn records_or_generate(path: Option<&Path>, generate: impl FnOnce() -> Result<Vec<PreferenceRecord>>) -> Result<Vec<PreferenceRecord>> {
    match path {
        Some(p) => read_jsonl_for_training(p),
        None => Ok(generate()?.into_iter().map(|r| r.strip_noise()).collect()),
    }
}

/// Trains and writes checkpoints, `events.jsonl` and `metrics.json`.
pub fn cmd_train(cfg: &RunConfig, dir: &RunDir, data: Option<&Path>, heldout: Option<&Path>) -> Result<LogLinearPolicy> {
    let records = records_or_generate(data, || make_dataset(&cfg.data))?;
    let held = records_or_generate(heldout, || make_dataset(&cfg.heldout))?;
    let initial = cfg.initial_policy()?;
    dir.write("checkpoints/initial.txt", initial.to_checkpoint_string())?;

    let events_path = dir.file("events.jsonl");
    let mut events = BufWriter::new(fs::File::create(&events_path).map_err(|e| Error::io(&events_path, e))?);
    let mut write_err = None;
    let (policy, report) = train_with_observer(&records, &initial, Some(&held), &cfg.train, |ev| {
        if write_err.is_some() {
            return;
        }
        let line = serde_json::to_string(ev).map_err(Error::from).and_then(|l| {
            writeln!(events, "{l}").map_err(|e| Error::io(&events_path, e))
        });
        if let Err(e) = line {
            write_err = Some(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    events.flush().map_err(|e| Error::io(&events_path, e))?;
    dir.write("checkpoints/final.txt", policy.to_checkpoint_string())?;

    let acc = answer_accuracy(&policy, &held)?;
    dir.write_json(
        "metrics.json",
        &TrainMetrics {
            last: report.final_metrics(),
            answer_accuracy: acc,
            steps: report.steps.len(),
            evals: &report.evals,
        },
    )?;
    if let Some(m) = report.final_metrics() {
        println!(
            "{} steps; pref_accuracy {:.4}, bias_rate {:.4}, halluc_rate {:.4}, answer accuracy {acc:.4}",
            report.steps.len(),
            m.pref_accuracy,
            m.bias_rate,
            m.halluc_rate
        );
    }
    Ok(policy)
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    metrics: EvalMetrics,
    answer_accuracy: f64,
}

/// Scores a checkpoint; writes `metrics.json`.
pub fn cmd_eval(
    cfg: &RunConfig,
    dir: &RunDir,
    checkpoint: &Path,
    reference: Option<&Path>,
    data: Option<&Path>,
) -> Result<EvalMetrics> {
    let policy = LogLinearPolicy::load(checkpoint)?;
    let reference = reference.map_or_else(|| Ok(LogLinearPolicy::zeros()), LogLinearPolicy::load)?;
    let held = records_or_generate(data, || make_dataset(&cfg.heldout))?;
    let metrics = evaluate(&policy, &reference, &held, cfg.train.objective.beta)?;
    let acc = answer_accuracy(&policy, &held)?;
    dir.write_json(
        "metrics.json",
        &EvalOutput {
            metrics,
            answer_accuracy: acc,
        },
    )?;
    println!(
        "n {}; pref_accuracy {:.4}, bias_rate {:.4}, halluc_rate {:.4}, answer accuracy {acc:.4}",
        metrics.n, metrics.pref_accuracy, metrics.bias_rate, metrics.halluc_rate
    );
    Ok(metrics)
}

/// Runs the noise sweep; writes `sweep.csv` and `summary.csv`.
pub fn cmd_sweep(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let table = noise_sweep(&cfg.sweep_config())?;
    dir.write_csv("sweep.csv", &table.rows)?;
    dir.write_csv("summary.csv", &table.summary)?;
    println!("{:>5}  {:<14} {:>17} {:>17} {:>17}", "rho", "variant", "pref_accuracy", "bias_rate", "halluc_rate");
    for s in &table.summary {
        println!(
            "{:>5}  {:<14} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4} {:>8.4} ± {:<6.4}",
            s.rho,
            s.variant,
            s.pref_accuracy_mean,
            s.pref_accuracy_sd,
            s.bias_rate_mean,
            s.bias_rate_sd,
            s.halluc_rate_mean,
            s.halluc_rate_sd
        );
    }
    Ok(())
}

/// Writes `curves.csv`.
pub fn cmd_curves(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let table = curves::loss_curves(&cfg.curves)?;
    let p = dir.file("curves.csv");
    let mut w = csv::Writer::from_path(&p).map_err(|e| csv_error(&p, e))?;
    w.write_record(table.header()).map_err(|e| csv_error(&p, e))?;
    for r in &table.rows {
        let mut rec = vec![r.x.to_string(), r.mae.to_string(), r.bce.to_string()];
        rec.extend(r.box_cox.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(&p, e))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    println!("wrote {} rows for q in {:?}", table.rows.len(), table.q_list);
    Ok(())
}

/// Writes `analysis.json` and prints the ordering checks and length table.
pub fn cmd_analyze(
    cfg: &RunConfig,
    dir: &RunDir,
    data: Option<&Path>,
    checkpoint: Option<&Path>,
    reference: Option<&Path>,
) -> Result<MarginAnalysis> {
    let records = match data {
        Some(p) => read_jsonl(p)?,
        None => make_dataset(&cfg.data)?,
    };
    let policy = match checkpoint {
        Some(p) => LogLinearPolicy::load(p)?,
        None => cfg.pilot_policy()?,
    };
    let reference = reference.map(LogLinearPolicy::load).transpose()?;
    let a = analyze_margins(&records, &policy, reference.as_ref(), cfg.train.objective.beta, cfg.histogram_bins)?;
    dir.write_json("analysis.json", &a)?;
    for o in &a.orderings {
        println!(
            "{:<16} {:<8} clean {:>9.4}  noisy {:>9.4}  z {:>7.2}  {:?}",
            o.role.label(),
            o.kind.label(),
            o.clean_mean,
            o.noisy_mean,
            o.z(),
            o.status
        );
    }
    let ls = length_stats(&records)?;
    println!("mean |y_w| {:.2}", ls.mean_len_w);
    for (name, c) in [
        ("lb clean", ls.lb_clean),
        ("lb noisy", ls.lb_noisy),
        ("vb clean", ls.vb_clean),
        ("vb noisy", ls.vb_noisy),
    ] {
        println!("{name:<9} n {:>6}  mean len {:>6.2}  mean length margin {:>7.2}", c.count, c.mean_len, c.mean_margin);
    }
    Ok(a)
}
