//! `eim`: train energy-inspired models by bound maximization, evaluate them
//! with multi-sample bounds, draw samples, render density grids, and
//! cross-check the bound estimators on a tractable Gaussian reference model.
//!
//! Every command is deterministic given its seed: rerunning with identical
//! arguments reproduces every metric bit-for-bit (only wall-clock columns
//! differ).

mod grid;
mod zoo;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use eim_core::batch::Execution;
use eim_core::checkpoint;
use eim_core::rng::{streams, Rng};
use eim_core::targets::{Target, TargetKind};
use eim_core::trainer::{
    build_model, evaluate, train, LrSchedule, ModelConfig, ProposalConfig, TrainConfig,
    TrainOutput, METRICS_CSV_HEADER,
};
use eim_core::ParamStore;

#[derive(Parser)]
#[command(
    name = "eim",
    version,
    about = "energy-inspired models: exact samplers, tractable lower bounds, honest evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config.json, metrics.csv and model.ckpt.
    Train(TrainArgs),
    /// Re-evaluate a trained run's held-out bound.
    Eval(EvalArgs),
    /// Draw exact ancestral samples from a trained run.
    Sample(SampleArgs),
    /// Render a density grid (trained model or analytic target) as PGM.
    Grid(grid::GridArgs),
    /// Estimate the multi-sample bound zoo against closed-form oracles.
    Bounds(zoo::BoundsArgs),
    /// Train one model per K (snis) or T (his) setting with paired seeds.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    /// Truncated rejection sampling.
    Trs,
    /// Self-normalized importance sampling.
    Snis,
    /// Hamiltonian importance sampling.
    His,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

impl ExecArg {
    fn to_execution(self) -> Execution {
        match self {
            ExecArg::Sequential => Execution::Sequential,
            ExecArg::Parallel => Execution::Parallel,
        }
    }
}

pub(crate) fn parse_target(s: &str) -> std::result::Result<TargetKind, String> {
    TargetKind::parse(s).ok_or_else(|| {
        format!("unknown target {s:?} (expected nine_gaussians, checkerboard or two_rings)")
    })
}

#[derive(Args)]
struct TrainArgs {
    /// Model family.
    #[arg(long, value_enum)]
    model: FamilyArg,
    /// Data distribution to fit.
    #[arg(long, value_parser = parse_target, default_value = "nine_gaussians")]
    target: TargetKind,
    /// Importance samples per datum (snis only).
    #[arg(long, default_value_t = 1024)]
    k: usize,
    /// Leapfrog steps (his) or maximum proposal rounds (trs).
    #[arg(long, default_value_t = 5)]
    t: usize,
    /// Proposal draws behind the rejected-mass estimate (trs only).
    #[arg(long, default_value_t = 16)]
    inner_samples: usize,
    #[arg(long, default_value_t = 50_000)]
    steps: u64,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    /// Drop the learning rate at this step (e.g. 3e-4 -> 1e-4).
    #[arg(long)]
    lr_drop_step: Option<u64>,
    /// Learning-rate multiplier applied from the drop step on.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    lr_drop_fraction: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    proposal_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    proposal_std: f64,
    /// Train the proposal's mean and spread along with the energy.
    #[arg(long)]
    proposal_trainable: bool,
    /// Clip gradients to this global norm (off when absent).
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Accepted for config compatibility; the synthetic bounds have no KL
    /// term, so it changes nothing.
    #[arg(long)]
    kl_anneal_steps: Option<u64>,
    /// Steps between held-out evaluations (0: final step only).
    #[arg(long, default_value_t = 5000)]
    eval_interval: u64,
    /// Importance samples per held-out point.
    #[arg(long, default_value_t = 1000)]
    eval_samples: usize,
    /// Held-out points the evaluation averages over.
    #[arg(long, default_value_t = 1024)]
    eval_points: usize,
    /// Run directory for config.json, metrics.csv and model.ckpt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    execution: ExecArg,
}

impl TrainArgs {
    fn to_config(&self) -> TrainConfig {
        let model = match self.model {
            FamilyArg::Trs => ModelConfig::Trs { t: self.t, inner_samples: self.inner_samples },
            FamilyArg::Snis => ModelConfig::Snis { k: self.k },
            FamilyArg::His => ModelConfig::His { t: self.t },
        };
        let schedule = match self.lr_drop_step {
            Some(at_step) => LrSchedule::Drop { at_step, fraction: self.lr_drop_fraction },
            None => LrSchedule::Constant,
        };
        TrainConfig {
            model,
            target: self.target,
            batch_size: self.batch_size,
            lr: self.lr,
            schedule,
            steps: self.steps,
            eval_interval: self.eval_interval,
            eval_points: self.eval_points,
            eval_samples: self.eval_samples,
            seed: self.seed,
            proposal: ProposalConfig {
                mean: self.proposal_mean,
                std: self.proposal_std,
                trainable: self.proposal_trainable,
            },
            grad_clip: self.grad_clip,
            kl_anneal_steps: self.kl_anneal_steps,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// config.json written by `train`.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to load (default: model.ckpt next to the config).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Override the configured importance-sample count.
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Override the configured held-out point count.
    #[arg(long)]
    eval_points: Option<usize>,
    /// Override the configured seed for the held-out set and its noise.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    execution: ExecArg,
}

#[derive(Args)]
struct SampleArgs {
    /// config.json written by `train`.
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to load (default: model.ckpt next to the config).
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Importance-sample counts; trains one snis model per value.
    #[arg(long, value_delimiter = ',')]
    k_list: Vec<usize>,
    /// Leapfrog step counts; trains one his model per value.
    #[arg(long, value_delimiter = ',')]
    t_list: Vec<usize>,
    #[arg(long, value_parser = parse_target, default_value = "nine_gaussians")]
    target: TargetKind,
    #[arg(long, default_value_t = 1.0)]
    proposal_std: f64,
    #[arg(long, default_value_t = 0.0)]
    proposal_mean: f64,
    /// Step budget given to every setting.
    #[arg(long, default_value_t = 2000)]
    steps: u64,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    /// Shared by all settings, so runs differ only in the swept value.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    eval_samples: usize,
    #[arg(long, default_value_t = 1024)]
    eval_points: usize,
    /// Root directory; each setting gets a subdirectory plus summary.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    execution: ExecArg,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(args) => run_train(&args),
        Command::Eval(args) => run_eval(&args),
        Command::Sample(args) => run_sample(&args),
        Command::Grid(args) => grid::run(&args),
        Command::Bounds(args) => zoo::run(&args),
        Command::Sweep(args) => run_sweep(&args),
    }
}

/// Train under `config`, write all artifacts into `dir`, and return the run.
fn write_run(dir: &Path, config: &TrainConfig, exec: Execution) -> Result<TrainOutput> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let config_json = serde_json::to_string_pretty(config)?;
    fs::write(dir.join("config.json"), &config_json)?;

    let output = train(config, exec);

    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    for record in &output.records {
        csv.push_str(&record.csv_row());
        csv.push('\n');
    }
    fs::write(dir.join("metrics.csv"), csv)?;
    checkpoint::save(&dir.join("model.ckpt"), &output.store)?;
    Ok(output)
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let config = args.to_config();
    println!("{}", serde_json::to_string_pretty(&config)?);
    let output = write_run(&args.out, &config, args.execution.to_execution())?;
    if let Some((bound, se)) = output.final_eval {
        println!("final eval_bound={bound:?} eval_se={se:?}");
    }
    if let Some(reason) = output.aborted {
        bail!("training aborted ({reason}); last good state kept in {}", args.out.display());
    }
    Ok(())
}

/// Rebuild the model described by a run's config and load its checkpoint.
fn load_run(config_path: &Path, ckpt: &Option<PathBuf>) -> Result<(TrainConfig, ParamStore, eim_core::models::Model)> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let config: TrainConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    let ckpt_path = ckpt.clone().unwrap_or_else(|| {
        config_path.parent().unwrap_or(Path::new(".")).join("model.ckpt")
    });
    let mut store = ParamStore::new();
    let model = build_model(&config, &mut store);
    checkpoint::load_into(&ckpt_path, &mut store)
        .with_context(|| format!("loading {}", ckpt_path.display()))?;
    Ok((config, store, model))
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let (mut config, store, model) = load_run(&args.config, &args.ckpt)?;
    if let Some(n) = args.eval_samples {
        config.eval_samples = n;
    }
    if let Some(n) = args.eval_points {
        config.eval_points = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    eprintln!("resolved config: {}", serde_json::to_string(&config)?);
    let root = Rng::new(config.seed);
    let eval_xs = Target::new(config.target)
        .sample_batch(config.eval_points, &mut root.stream(streams::EVAL));
    let (bound, se) = evaluate(
        &model,
        &store,
        &eval_xs,
        config.eval_samples,
        &root,
        args.execution.to_execution(),
    )?;
    println!("eval_bound,eval_se");
    println!("{bound:?},{se:?}");
    Ok(())
}

fn run_sample(args: &SampleArgs) -> Result<()> {
    let (mut config, store, model) = load_run(&args.config, &args.ckpt)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    eprintln!("resolved config: {} n={}", serde_json::to_string(&config)?, args.n);
    let mut rng = Rng::new(config.seed).stream(streams::SAMPLE);
    let mut csv = String::from("x,y\n");
    for _ in 0..args.n {
        let point = model.sample(&store, &mut rng)?;
        csv.push_str(&format!("{:?},{:?}\n", point[0], point[1]));
    }
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let runs: Vec<(String, ModelConfig)> = if !args.k_list.is_empty() && args.t_list.is_empty() {
        args.k_list.iter().map(|&k| (format!("k{k}"), ModelConfig::Snis { k })).collect()
    } else if args.k_list.is_empty() && !args.t_list.is_empty() {
        args.t_list.iter().map(|&t| (format!("t{t}"), ModelConfig::His { t })).collect()
    } else {
        bail!("pass exactly one of --k-list or --t-list");
    };
    let base = |model| TrainConfig {
        model,
        target: args.target,
        batch_size: args.batch_size,
        lr: args.lr,
        schedule: LrSchedule::Constant,
        steps: args.steps,
        eval_interval: 0, // final evaluation only
        eval_points: args.eval_points,
        eval_samples: args.eval_samples,
        seed: args.seed,
        proposal: ProposalConfig {
            mean: args.proposal_mean,
            std: args.proposal_std,
            trainable: false,
        },
        grad_clip: None,
        kl_anneal_steps: None,
    };
    let mut summary = String::from("setting,eval_bound,eval_se,seconds\n");
    for (name, model) in &runs {
        let config = base(*model);
        eprintln!("sweep {name}: {}", serde_json::to_string(&config)?);
        let started = std::time::Instant::now();
        let output = write_run(&args.out.join(name), &config, args.execution.to_execution())?;
        let seconds = started.elapsed().as_secs_f64();
        if let Some(reason) = output.aborted {
            bail!("{name} run aborted: {reason}");
        }
        let (bound, se) =
            output.final_eval.context("sweep run finished without a final evaluation")?;
        println!("{name}: eval_bound={bound:?} eval_se={se:?} seconds={seconds:.3}");
        summary.push_str(&format!("{name},{bound:?},{se:?},{seconds:.3}\n"));
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("summary.csv"), summary)?;
    Ok(())
}
