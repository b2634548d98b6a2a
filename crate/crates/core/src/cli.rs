//! The `pdns` command line: `train`, `sample`, `evaluate`, `oracle` and
//! `baseline`. Exit codes: 0 success, 1 runtime failure, 2 invalid input or
//! mismatched files, 3 training stopped by a weight collapse.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::approximator::{read_checkpoint, write_checkpoint, Checkpoint, ParamStore};
use crate::baselines::{run_chains, ChainConfig, ChainKind};
use crate::config::{Problem, RunConfig, TargetConfig};
use crate::error::{Error, Result};
use crate::evaluate::{check_names, evaluate, EvalInput, Reference};
use crate::io::{read_samples, write_distribution, write_json, write_samples, States};
use crate::rng::{seeded, stream};
use crate::targets::{enumerate_exact, exact_interpolant, ENUMERATION_LIMIT};
use crate::trainer::{run_pdns, SamplerProblem, StageRecord};

#[derive(Debug, Parser)]
#[command(name = "pdns", version, about = "Proximal diffusion neural samplers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for rollouts and metrics (defaults to all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run on a single worker.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a sampler and write checkpoints, stage log, samples and report.
    Train(TrainArgs),
    /// Draw samples from a trained checkpoint.
    Sample(SampleArgs),
    /// Compute metrics of a sample file against a reference.
    Evaluate(EvaluateArgs),
    /// Write the exact interpolated distribution of a small discrete target.
    Oracle(OracleArgs),
    /// Run an MCMC baseline on a lattice target.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (defaults to `runs/<config hash prefix>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Run config; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accept a checkpoint written under a different config hash.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Reference sample or distribution file.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Run config providing the target and, without `--reference`, an exact reference.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interpolation level of the exact discrete reference.
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Compare files whose config hashes differ.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum Method {
    Mh,
    Sw,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::WeightCollapse(_) => 3,
        Error::Io(_) | Error::NonFinite(_) | Error::TooManyDropped { .. } => 1,
        _ => 2,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let workers = if cli.deterministic { Some(1) } else { cli.workers };
    if let Some(w) = workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return 2;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a).map(|_| 0),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| 0),
        Command::Oracle(a) => cmd_oracle(&a).map(|_| 0),
        Command::Baseline(a) => cmd_baseline(&a).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let hash = cfg.hash()?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&hash[..12]));
    std::fs::create_dir_all(out.join("checkpoints"))?;
    let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("config.toml"), text)?;
    let report = match cfg.problem()? {
        Problem::Continuous(p) => train_with(&p, &cfg, &hash, &out, States::Continuous)?,
        Problem::Discrete(p) => train_with(&p, &cfg, &hash, &out, States::Discrete)?,
    };
    write_json(&out.join("report.json"), &report)?;
    let aborted = report["aborted"].as_str();
    if let Some(msg) = aborted {
        eprintln!("training stopped: {msg}");
    }
    println!("{}", serde_json::to_string_pretty(&report["final"]).unwrap_or_default());
    Ok(if aborted.is_some() { 3 } else { 0 })
}

fn train_with<P: SamplerProblem>(
    problem: &P,
    cfg: &RunConfig,
    hash: &str,
    out: &Path,
    to_states: fn(Vec<P::State>) -> States,
) -> Result<Value> {
    check_names(&cfg.metrics.names)?;
    let mut log = BufWriter::new(File::create(out.join("stages.jsonl"))?);
    let mut on_stage = |rec: &StageRecord, store: &ParamStore| -> Result<()> {
        writeln!(
            log,
            "{}",
            serde_json::to_string(rec).map_err(|e| Error::Format(e.to_string()))?
        )?;
        log.flush()?;
        let ckpt = Checkpoint {
            store: store.clone(),
            config_hash: hash.to_string(),
        };
        write_checkpoint(&out.join("checkpoints").join(format!("stage_{:03}.pdns", rec.k)), &ckpt)
    };
    let outcome = run_pdns(problem, &cfg.train, cfg.seed, hash, None, &mut on_stage)?;
    drop(on_stage);
    log.flush()?;
    write_checkpoint(
        &out.join("final.pdns"),
        &Checkpoint {
            store: outcome.store.clone(),
            config_hash: hash.to_string(),
        },
    )?;

    let mut final_info = json!({ "ess": outcome.final_ess, "lambda": outcome.scheduler.lambda() });
    let mut metrics = serde_json::Map::new();
    if let Some(batch) = outcome.final_batch {
        let log_w = batch.log_weights();
        let states = to_states(batch.states);
        let dim = cfg.target.dim();
        write_samples(&out.join("samples.csv"), hash, dim, &states, Some(&log_w))?;
        final_info["samples"] = json!(states.len());
        final_info["dropped"] = json!(batch.dropped);
        if !cfg.metrics.names.is_empty() && !states.is_empty() {
            let reference = build_reference(cfg, &cfg.metrics.names, 0.0, cfg.seed)?;
            let input = EvalInput {
                samples: &states,
                log_w: Some(&log_w),
                target: Some(&cfg.target),
                reference: &reference,
                mode_radius: cfg.metrics.mode_radius,
            };
            metrics = evaluate(&cfg.metrics.names, &input)?;
        }
    }
    Ok(json!({
        "config_hash": hash,
        "seed": cfg.seed,
        "warm_start": outcome.warm_start,
        "stages": outcome.stages,
        "aborted": outcome.aborted,
        "final": final_info,
        "metrics": metrics,
    }))
}

const REFERENCE_METRICS: &[&str] = &[
    "mmd",
    "sinkhorn",
    "w2_energy",
    "tv",
    "magnetization",
    "abs_magnetization",
    "two_point",
];

/// Reference implied by the config: exact draws for mixtures, enumeration for
/// small discrete targets, the configured MCMC baseline otherwise.
pub fn build_reference(cfg: &RunConfig, names: &[String], lambda: f64, seed: u64) -> Result<Reference> {
    if !names.iter().any(|n| REFERENCE_METRICS.contains(&n.as_str())) {
        return Ok(Reference::None);
    }
    match &cfg.target {
        TargetConfig::Continuous(t) => {
            let mut rng = stream(seed, u64::MAX);
            match t.sample_exact(cfg.metrics.reference_samples, &mut rng) {
                Ok(s) => Ok(Reference::Samples(States::Continuous(s), None)),
                Err(_) => Ok(Reference::None),
            }
        }
        TargetConfig::Discrete(t) => {
            if t.state_count() <= ENUMERATION_LIMIT {
                return Ok(Reference::Exact(if lambda == 0.0 {
                    enumerate_exact(t)?
                } else {
                    exact_interpolant(t, lambda)?
                }));
            }
            match &cfg.baseline {
                Some(b) => Ok(Reference::Samples(
                    States::Discrete(run_chains(t, b.method, &b.chain)?),
                    None,
                )),
                None => Ok(Reference::None),
            }
        }
    }
}

fn load_config_near(explicit: Option<&Path>, beside: &Path) -> Result<RunConfig> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => beside.parent().unwrap_or(Path::new(".")).join("config.toml"),
    };
    RunConfig::load(&path)
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let cfg = load_config_near(a.config.as_deref(), &a.checkpoint)?;
    let hash = cfg.hash()?;
    let ckpt = read_checkpoint(&a.checkpoint)?;
    if ckpt.config_hash != hash && !a.force {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written under config {} but the config hashes to {hash} (use --force to override)",
            ckpt.config_hash
        )));
    }
    let mut rng = seeded(a.seed);
    let dim = cfg.target.dim();
    let (states, log_w) = match cfg.problem()? {
        Problem::Continuous(p) => sample_with(&p, &ckpt.store, a.n, &mut rng, States::Continuous)?,
        Problem::Discrete(p) => sample_with(&p, &ckpt.store, a.n, &mut rng, States::Discrete)?,
    };
    write_samples(&a.out, &ckpt.config_hash, dim, &states, Some(&log_w))
}

fn sample_with<P: SamplerProblem>(
    problem: &P,
    store: &ParamStore,
    n: usize,
    rng: &mut crate::rng::PdnsRng,
    to_states: fn(Vec<P::State>) -> States,
) -> Result<(States, Vec<f64>)> {
    problem
        .check_params(&store.ema)
        .map_err(|e| Error::Checkpoint(format!("checkpoint does not fit the configured network: {e}")))?;
    if n == 0 {
        return Ok((to_states(Vec::new()), Vec::new()));
    }
    let batch = problem.rollout(&store.ema, n, rng)?;
    let log_w = batch.log_weights();
    Ok((to_states(batch.states), log_w))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    check_names(&a.metrics)?;
    let samples = read_samples(&a.samples)?;
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let mut hashes: Vec<(String, String)> = Vec::new();
    if let Some(h) = &samples.config_hash {
        hashes.push((a.samples.display().to_string(), h.clone()));
    }
    if let Some(c) = &cfg {
        hashes.push((a.config.as_ref().expect("loaded").display().to_string(), c.hash()?));
        if c.target.dim() != samples.dim {
            return Err(Error::Shape(format!(
                "samples have {} coordinates but the target has {}",
                samples.dim,
                c.target.dim()
            )));
        }
    }
    let reference = match (&a.reference, &cfg) {
        (Some(path), _) => {
            let r = read_samples(path)?;
            if let Some(h) = &r.config_hash {
                hashes.push((path.display().to_string(), h.clone()));
            }
            if r.dim != samples.dim {
                return Err(Error::Shape(format!(
                    "samples have {} coordinates but the reference has {}",
                    samples.dim, r.dim
                )));
            }
            Reference::Samples(r.states, r.prob)
        }
        (None, Some(c)) => {
            if !(0.0..=1.0).contains(&a.lambda) {
                return Err(Error::Domain(format!("lambda must lie in [0, 1], got {}", a.lambda)));
            }
            build_reference(c, &a.metrics, a.lambda, a.seed)?
        }
        (None, None) => Reference::None,
    };
    if !a.force {
        if let Some((first, h0)) = hashes.first() {
            if let Some((other, h)) = hashes.iter().find(|(_, h)| h != h0) {
                return Err(Error::Config(format!(
                    "config hash of {other} ({h}) differs from {first} ({h0}); use --force to compare anyway"
                )));
            }
        }
    }
    let input = EvalInput {
        samples: &samples.states,
        log_w: samples.log_w.as_deref(),
        target: cfg.as_ref().map(|c| &c.target),
        reference: &reference,
        mode_radius: cfg.as_ref().and_then(|c| c.metrics.mode_radius),
    };
    let result = Value::Object(evaluate(&a.metrics, &input)?);
    println!("{}", serde_json::to_string_pretty(&result).unwrap_or_default());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| a.samples.with_extension("metrics.json"));
    write_json(&out, &result)
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let TargetConfig::Discrete(t) = &cfg.target else {
        return Err(Error::Config("the exact oracle needs a discrete target".into()));
    };
    let dist = exact_interpolant(t, a.lambda)?;
    write_distribution(&a.out, &cfg.hash()?, &dist)
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let TargetConfig::Discrete(t) = &cfg.target else {
        return Err(Error::Config("MCMC baselines need a discrete lattice target".into()));
    };
    let (mut method, mut chain) = match &cfg.baseline {
        Some(b) => (b.method, b.chain.clone()),
        None => (
            ChainKind::Sw,
            ChainConfig {
                burn_in: 10_000,
                thin: 10,
                chains: 1,
                samples: 10_000,
                seed: 0,
            },
        ),
    };
    if let Some(m) = a.method {
        method = match m {
            Method::Mh => ChainKind::Mh,
            Method::Sw => ChainKind::Sw,
        };
    }
    if let Some(n) = a.samples {
        chain.samples = n;
    }
    if let Some(s) = a.seed {
        chain.seed = s;
    }
    let samples = run_chains(t, method, &chain)?;
    write_samples(&a.out, &cfg.hash()?, t.length(), &States::Discrete(samples), None)
}
