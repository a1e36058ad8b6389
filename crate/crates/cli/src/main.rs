use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gyronet::runner::{
    cmd_convert, cmd_evaluate, cmd_gen_data, cmd_geometry_check, cmd_train_classifier, cmd_train_embeddings, RunConfig,
};

#[derive(Parser)]
#[command(name = "gyronet", version, about = "Hyperbolic embeddings and intent classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train skip-gram embeddings on a corpus (or a dataset's training split).
    TrainEmbeddings(Common),
    /// Train the Transformer classifier and report held-out metrics.
    TrainClassifier(Common),
    /// Score a saved model bundle on every row of a dataset.
    Evaluate(Common),
    /// Convert an embedding file between hyperboloid and poincare.
    Convert(Common),
    /// Write a synthetic intent dataset as TSV.
    GenData(Common),
    /// Run the geometry invariant suites.
    GeometryCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Swap in the linear ball-to-hyperboloid denominator.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Geometry {
    Euclidean,
    Hyperboloid,
    Poincare,
}

impl Geometry {
    fn key(self) -> &'static str {
        match self {
            Geometry::Euclidean => "euclidean",
            Geometry::Hyperboloid => "hyperboloid",
            Geometry::Poincare => "poincare",
        }
    }
}

#[derive(Args)]
struct Common {
    /// key=value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a shipped preset; the config file and flags apply on top.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    geometry: Option<Geometry>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// 0-based epoch, `midpoint` or `none`.
    #[arg(long)]
    restart_epoch: Option<String>,
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Any config key, e.g. `--set layers=3`. Repeatable; later wins.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_kv)]
    set: Vec<(String, String)>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut kv = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                kv.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        push("seed", self.seed.map(|v| v.to_string()));
        push("geometry", self.geometry.map(|g| g.key().to_string()));
        push("dim", self.dim.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("restart_epoch", self.restart_epoch.clone());
        push("holdout", self.holdout.map(|v| v.to_string()));
        push("out", path(&self.out));
        push("corpus", path(&self.corpus));
        push("dataset", path(&self.dataset));
        push("embeddings", path(&self.embeddings));
        push("model", path(&self.model));
        push("metrics", path(&self.metrics));
        kv.extend(self.set.iter().cloned());
        let base = match &self.preset {
            Some(name) => RunConfig::preset(name)?,
            None => RunConfig::default(),
        };
        Ok(RunConfig::resolve_from(base, self.config.as_deref(), &kv)?)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.resolve()?;
            let rows = cmd_gen_data(&cfg)?;
            println!("{} rows", rows.len());
        }
        Command::TrainEmbeddings(c) => {
            let cfg = c.resolve()?;
            let run = cmd_train_embeddings(&cfg)?;
            if cfg.out.is_none() {
                print!("{}", run.file.to_text());
            }
        }
        Command::TrainClassifier(c) => {
            let metrics = cmd_train_classifier(&c.resolve()?)?;
            print!("{}", metrics.to_json()?);
        }
        Command::Evaluate(c) => {
            let metrics = cmd_evaluate(&c.resolve()?)?;
            print!("{}", metrics.to_json()?);
        }
        Command::Convert(c) => {
            if c.geometry.is_none() && !c.set.iter().any(|(k, _)| k == "geometry") {
                return Err(anyhow!("convert needs a target --geometry"));
            }
            let file = cmd_convert(&c.resolve()?)?;
            println!("{} rows -> {}", file.tokens.len(), file.geometry);
        }
        Command::GeometryCheck { seed, inject_fault } => {
            let reports = cmd_geometry_check(seed, inject_fault);
            for r in &reports {
                println!("{r}");
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            println!("{} suites, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GYRONET_LOG", "info")).init();
    match run(Cli::parse()).context("gyronet") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
