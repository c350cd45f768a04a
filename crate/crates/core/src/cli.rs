//! `flowgate` subcommands: train, eval, route, gradcheck, simulate.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{EngineConfig, EnvironmentKind};
use crate::diagnostics::run_gradient_suites;
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::harness::{evaluate, load_dataset, write_report, DatasetRecord, Environment, EvalReport, ReportFormat};
use crate::optimizer::Trainer;
use crate::simulation::run_simulation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "flowgate", version, about = "Difficulty-aware workflow planning, routing and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the policies on `train_dataset`.
    Train(Overrides),
    /// Evaluate the deterministic policy on `eval_dataset`.
    Eval(Overrides),
    /// Print the deterministic plan for one query.
    Route {
        #[arg(long)]
        query: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
    },
    /// Offline end-to-end run on a planted synthetic corpus.
    Simulate(Overrides),
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_cost: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => EngineConfig::load(p)?,
            None => EngineConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lambda_cost {
            cfg.training.lambda_cost = v;
        }
        if let Some(v) = self.tau {
            cfg.policy.tau = v;
        }
        if let Some(v) = self.k {
            cfg.training.k = v;
        }
        if let Some(v) = self.l_max {
            cfg.policy.l_max = v;
        }
        if let Some(v) = self.temperature {
            cfg.policy.temperature = v;
        }
        if let Some(v) = self.parallel {
            cfg.training.parallel = v;
        }
        if let Some(v) = self.episodes {
            cfg.training.episodes = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse `argv` (including the program name) and run; output goes to the
/// process streams.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Config { .. } => EXIT_CONFIG,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Train(o) => train(&o.resolve()?, out).map(|_| EXIT_OK),
        Command::Eval(o) => eval(&o.resolve()?, out).map(|_| EXIT_OK),
        Command::Route { query, overrides } => route(&overrides.resolve()?, &query, out).map(|_| EXIT_OK),
        Command::Gradcheck { seed, seeds } => gradcheck(seed, seeds, out),
        Command::Simulate(o) => simulate(&o.resolve()?, out, err).map(|_| EXIT_OK),
    }
}

fn emit(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn required(field: &str, p: &Option<PathBuf>) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| Error::config(field, "required by this command"))
}

fn environment(cfg: &EngineConfig) -> Result<Box<dyn Environment>> {
    Ok(match cfg.environment {
        EnvironmentKind::Simulator => Box::new(cfg.sim.clone()),
        EnvironmentKind::Backends => Box::new(cfg.executor_environment()?),
    })
}

/// Fresh engine, restored from the configured checkpoint when one is named.
fn trained_engine(cfg: &EngineConfig) -> Result<Engine> {
    let mut engine = cfg.build_engine()?;
    if let Some(p) = &cfg.checkpoint {
        if !p.is_file() {
            return Err(Error::config("checkpoint", format!("file not found: {}", p.display())));
        }
        engine.restore(p)?;
    }
    Ok(engine)
}

fn open_log(cfg: &EngineConfig) -> Result<Option<BufWriter<File>>> {
    cfg.training_log
        .as_ref()
        .map(|p| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e)))
        .transpose()
}

#[derive(Serialize)]
struct TrainSummary {
    episodes: usize,
    records: usize,
    mean_reward: f64,
    mean_cost_usd: f64,
    checkpoint: Option<PathBuf>,
}

fn train(cfg: &EngineConfig, out: &mut dyn Write) -> Result<()> {
    let path = required("train_dataset", &cfg.train_dataset)?;
    let records: Vec<DatasetRecord> = load_dataset(&path)?;
    let env = environment(cfg)?;
    let mut engine = cfg.build_engine()?;
    let mut trainer = Trainer::new(cfg.training.clone(), cfg.seed)?;
    let mut log = open_log(cfg)?;
    let seed = cfg.seed;
    let ckpt = cfg.checkpoint.clone();
    let mut save = |e: &Engine, _episode: usize| -> Result<()> {
        match &ckpt {
            Some(p) => e.save(p, seed),
            None => Ok(()),
        }
    };
    let history = trainer.train(
        &mut engine,
        &records,
        env.as_ref(),
        log.as_mut().map(|w| w as &mut dyn Write),
        Some(&mut save),
    )?;
    if let Some(mut w) = log {
        w.flush().map_err(|e| Error::io("<training log>", e))?;
    }
    if let Some(p) = &cfg.checkpoint {
        engine.save(p, seed)?;
    }
    let n = history.len().max(1) as f64;
    let summary = TrainSummary {
        episodes: history.len(),
        records: records.len(),
        mean_reward: history
            .iter()
            .map(|h| h.rewards.iter().sum::<f64>() / h.rewards.len() as f64)
            .sum::<f64>()
            / n,
        mean_cost_usd: history.iter().map(|h| h.mean_cost_usd).sum::<f64>() / n,
        checkpoint: cfg.checkpoint.clone(),
    };
    emit(out, &summary)
}

fn deliver_report(cfg: &EngineConfig, report: &EvalReport, out: &mut dyn Write) -> Result<()> {
    let format = cfg.report_format()?;
    match &cfg.report {
        Some(p) => write_report(report, p, format),
        None => {
            let body = match format {
                ReportFormat::Json => report.to_json()?,
                ReportFormat::Table => report.to_table(),
            };
            writeln!(out, "{body}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn eval(cfg: &EngineConfig, out: &mut dyn Write) -> Result<()> {
    let path = required("eval_dataset", &cfg.eval_dataset)?;
    let records = load_dataset(&path)?;
    let env = environment(cfg)?;
    let engine = trained_engine(cfg)?;
    let report = evaluate(&engine, &records, env.as_ref(), cfg.seed)?;
    deliver_report(cfg, &report, out)
}

fn route(cfg: &EngineConfig, query: &str, out: &mut dyn Write) -> Result<()> {
    let engine = trained_engine(cfg)?;
    let (_, plan) = engine.route(query)?;
    emit(out, &plan.to_wire(&engine.catalog))
}

fn gradcheck(seed: u64, seeds: usize, out: &mut dyn Write) -> Result<i32> {
    let results = run_gradient_suites(seed, seeds)?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        writeln!(
            out,
            "{:<10} seeds={} max_rel_err={:.3e} {}",
            r.suite,
            r.seeds,
            r.max_relative_error,
            if r.passed() { "PASS" } else { "FAIL" }
        )
        .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
}

fn simulate(cfg: &EngineConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let engine = cfg.build_engine()?;
    let mut log = open_log(cfg)?;
    let run = run_simulation(
        engine,
        &cfg.simulation,
        &cfg.sim,
        &cfg.training,
        cfg.seed,
        log.as_mut().map(|w| w as &mut dyn Write),
    )?;
    if let Some(mut w) = log {
        w.flush().map_err(|e| Error::io("<training log>", e))?;
    }
    if let Some(p) = &cfg.checkpoint {
        run.engine.save(p, cfg.seed)?;
    }
    if let Some(p) = &cfg.report {
        write_report(&run.learned, p, cfg.report_format()?)?;
    }
    let _ = writeln!(err, "trained {} episodes in {:.1}s", cfg.training.episodes, run.train_seconds);
    emit(out, &run.summary)
}
