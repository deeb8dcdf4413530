//! `partial-rl`: generate synthetic volumes, train, evaluate, trace walks
//! and check gradients.
//!
//! Every command except `gradcheck` writes into a fresh run directory
//! `<root>/<command>-<config hash>-<timestamp>` where the root comes from
//! `--runs-dir` or `PARTIAL_RL_RUNS` (default `runs`).
//!
//! Exit status: 0 on success, 2 for an invalid configuration (the message
//! names the field), 3 for a numerical failure, 1 for anything else.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use partial_rl::approximator::{
    gradient_check, load_checkpoint, save_checkpoint, Checkpoint, Mode, NetConfig, Optimizer,
    GRADCHECK_TOLERANCE,
};
use partial_rl::config::{generate_dataset, RunConfig};
use partial_rl::learner::{sample_start, train, write_curves_csv, write_trace_csv, TrainOutcome};
use partial_rl::localizer::{
    cases_from_volumes, evaluate, walk, write_report_csv, EvalCase, EvalSettings, OraclePolicy, Walker,
    WalkConfig,
};
use partial_rl::volume::{load_volume, save_volume, Position, Volume};
use partial_rl::Error;

#[derive(Parser, Debug)]
#[command(name = "partial-rl", version, about = "Partial-policy actor-critic landmark localization")]
struct Cli {
    /// JSON run configuration. Missing keys take their defaults; unknown keys
    /// are rejected. `partial-rl config` prints the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for run directories.
    #[arg(long, global = true, env = "PARTIAL_RL_RUNS", default_value = "runs")]
    runs_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic volumes and a ground-truth manifest.
    Gen {
        /// Number of volumes (default: data.count = 50).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a network and write curves.csv plus checkpoints.
    Train(TrainArgs),
    /// Localize landmarks with a checkpoint and write report.csv and summary.json.
    Eval(EvalArgs),
    /// Write the walk of one start as trace.csv.
    Trace(TraceArgs),
    /// Finite-difference check of the policy, value and Q gradients.
    Gradcheck,
    /// Print the effective configuration as JSON.
    Config,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory of volume files (`*.vol`). Without it the configured
    /// synthetic dataset is generated in memory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// partial | actor-critic | q-learning (default: partial).
    #[arg(long)]
    mode: Option<Mode>,
    /// Number of epochs (default: 50).
    #[arg(long)]
    epochs: Option<usize>,
    /// Episodes gathered per epoch (default: 300).
    #[arg(long)]
    episodes: Option<usize>,
    /// Steps per episode (default: 300).
    #[arg(long)]
    steps: Option<usize>,
    /// sgd | adam (default: adam).
    #[arg(long)]
    optimizer: Option<String>,
    /// Learning rate (default: 1e-4).
    #[arg(long)]
    alpha: Option<f64>,
    /// Use the tiny network shape (m = 8) instead of the desk-scale one.
    #[arg(long)]
    tiny: bool,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Starts per volume (default: 5).
    #[arg(long)]
    starts: Option<usize>,
    /// Evaluation threads (default: 1).
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Checkpoint to walk with. Without it the analytic sign policy walks.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Volume file. Without it the first held-out synthetic volume is used.
    #[arg(long)]
    volume: Option<PathBuf>,
    /// Start position `x,y,z`. Without it a seeded interior start is drawn.
    #[arg(long, value_parser = parse_position)]
    start: Option<Position>,
    /// Steps (default: eval.steps = 300).
    #[arg(long)]
    steps: Option<usize>,
}

fn parse_position(s: &str) -> Result<Position, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected x,y,z".into());
    }
    let mut p = [0i64; 3];
    for (slot, part) in p.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|e| format!("{part:?}: {e}"))?;
    }
    Ok(p)
}

fn config_error(field: &str, reason: impl Into<String>) -> anyhow::Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
    .into()
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Gen { count: Some(n) } => cfg.data.count = *n,
        Command::Train(a) => {
            if let Some(mode) = a.mode {
                cfg.train.mode = mode;
                cfg.train.exploration = partial_rl::learner::TrainConfig::for_mode(mode).exploration;
            }
            if a.tiny {
                cfg.train.net = NetConfig::tiny(cfg.train.mode);
            }
            if let Some(v) = a.epochs {
                cfg.train.epochs = v;
            }
            if let Some(v) = a.episodes {
                cfg.train.episodes_per_epoch = v;
            }
            if let Some(v) = a.steps {
                cfg.train.steps_per_episode = v;
            }
            if let Some(v) = a.alpha {
                cfg.train.alpha = v;
            }
            if let Some(name) = &a.optimizer {
                cfg.train.optimizer = match name.as_str() {
                    "sgd" => Optimizer::Sgd,
                    "adam" => Optimizer::adam(),
                    other => return Err(config_error("optimizer", format!("unknown optimizer {other:?}"))),
                };
            }
        }
        Command::Eval(a) => {
            if let Some(v) = a.starts {
                cfg.train.eval.starts = v;
            }
            if let Some(v) = a.workers {
                cfg.train.eval.workers = v;
            }
        }
        Command::Trace(a) => {
            if let Some(v) = a.steps {
                cfg.train.eval.steps = v;
            }
        }
        _ => {}
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

/// Create `<root>/<command>-<hash>-<timestamp>`, suffixing a counter rather
/// than reusing an existing directory.
fn create_run_dir(root: &Path, command: &str, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let json = cfg.to_json_pretty();
    let hash = Sha256::digest(json.as_bytes());
    let hash: String = hash.iter().take(4).map(|b| format!("{b:02x}")).collect();
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let base = format!("{command}-{hash}-{stamp}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => {
                fs::write(dir.join("config.json"), json.as_bytes())?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!("run directory counter exhausted")
}

fn volume_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .vol files in {}", dir.display());
    }
    Ok(files)
}

fn load_dir(dir: &Path) -> anyhow::Result<Vec<Volume>> {
    volume_files(dir)?
        .iter()
        .map(|p| load_volume(p).with_context(|| format!("loading {}", p.display())))
        .collect()
}

/// Training and validation volumes: the first `data.train` and the next
/// `data.val` of the directory or of the synthetic dataset.
fn split_volumes(cfg: &RunConfig, data: &DataArgs) -> anyhow::Result<(Vec<Volume>, Vec<Volume>)> {
    let mut all = match &data.data {
        Some(dir) => load_dir(dir)?,
        None => generate_dataset(&cfg.synthetic, cfg.data.train + cfg.data.val)?,
    };
    if all.len() < cfg.data.train {
        return Err(config_error(
            "data.train",
            format!("{} volumes requested, {} available", cfg.data.train, all.len()),
        ));
    }
    let rest = all.split_off(cfg.data.train);
    Ok((all, rest.into_iter().take(cfg.data.val).collect()))
}

fn cmd_gen(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    let volumes = generate_dataset(&cfg.synthetic, cfg.data.count)?;
    let mut entries = Vec::with_capacity(volumes.len());
    for (i, v) in volumes.iter().enumerate() {
        let name = format!("vol_{i:03}.vol");
        save_volume(v, dir.join(&name))?;
        entries.push(serde_json::json!({ "file": name, "landmarks": v.landmarks() }));
    }
    let manifest = serde_json::json!({ "seed": cfg.seed, "volumes": entries });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} volumes to {}", volumes.len(), dir.display());
    Ok(())
}

fn write_ckpt(dir: &Path, name: &str, network: &partial_rl::approximator::Network<f32>, epoch: usize, seed: u64) -> anyhow::Result<()> {
    let ckpt = Checkpoint {
        network: network.clone(),
        epoch,
        seed,
    };
    save_checkpoint(&ckpt, dir.join(name))?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, args: &TrainArgs, dir: &Path) -> anyhow::Result<()> {
    let (train_set, val_set) = split_volumes(cfg, &args.data)?;
    let curves_path = dir.join("curves.csv");
    let mut rows = Vec::new();
    let outcome: TrainOutcome = train(&train_set, &val_set, &cfg.train, |row, _| {
        rows.push(*row);
        write_curves_csv(&rows, BufWriter::new(fs::File::create(&curves_path)?))?;
        Ok(())
    })?;
    write_curves_csv(&outcome.curves, BufWriter::new(fs::File::create(&curves_path)?))?;
    write_ckpt(dir, "initial.ckpt", &outcome.initial, 0, cfg.seed)?;
    write_ckpt(dir, "final.ckpt", &outcome.network, cfg.train.epochs, cfg.seed)?;
    write_ckpt(dir, "best.ckpt", &outcome.best, outcome.best_epoch.unwrap_or(0), cfg.seed)?;
    if let Some(last) = outcome.curves.last() {
        println!(
            "epoch {}: mean reward {:.2}, val error {:.2} mm (median {:.2})",
            last.epoch, last.mean_reward, last.val_err, last.val_median
        );
    }
    println!("run directory {}", dir.display());
    Ok(())
}

fn eval_cases<'a>(volumes: &'a [Volume], names: Option<&[PathBuf]>) -> anyhow::Result<Vec<EvalCase<'a>>> {
    let mut cases = cases_from_volumes(volumes)?;
    if let Some(names) = names {
        for (case, path) in cases.iter_mut().zip(names) {
            if let Some(stem) = path.file_stem() {
                case.volume_id = stem.to_string_lossy().into_owned();
            }
        }
    }
    Ok(cases)
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs, dir: &Path) -> anyhow::Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let (volumes, names) = match &args.data.data {
        Some(d) => (load_dir(d)?, Some(volume_files(d)?)),
        None => (split_volumes(cfg, &args.data)?.1, None),
    };
    let cases = eval_cases(&volumes, names.as_deref())?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.net = ckpt.network.config().clone();
    let settings = EvalSettings::from_train(&train_cfg);
    let report = evaluate(&ckpt.network, &cases, &settings)?;
    write_report_csv(&report, BufWriter::new(fs::File::create(dir.join("report.csv"))?))?;
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&report.summary)? + "\n",
    )?;
    let s = report.summary;
    println!(
        "{} volumes: error {:.2} +- {:.2} mm, median {:.2} mm ({} skipped)",
        s.count, s.mean_mm, s.sd_mm, s.median_mm, s.skipped
    );
    Ok(())
}

fn cmd_trace(cfg: &RunConfig, args: &TraceArgs, dir: &Path) -> anyhow::Result<()> {
    let volume = match &args.volume {
        Some(p) => load_volume(p)?,
        None => split_volumes(cfg, &DataArgs { data: None })?
            .1
            .into_iter()
            .next()
            .ok_or_else(|| config_error("data.val", "no held-out volume to trace"))?,
    };
    let ckpt = args.checkpoint.as_ref().map(load_checkpoint).transpose()?;
    let walker: &dyn Walker = match &ckpt {
        Some(c) => &c.network,
        None => &OraclePolicy,
    };
    let window = ckpt.as_ref().map_or(cfg.train.window(), |c| c.network.config().window);
    let start = match args.start {
        Some(p) => p,
        None => sample_start(volume.dims(), window, &mut ChaCha8Rng::seed_from_u64(cfg.seed)),
    };
    let walk_cfg = WalkConfig {
        steps: cfg.train.eval.steps,
        last: cfg.train.eval.last,
        eta: cfg.train.eta,
    };
    let trace = walk(walker, &volume, start, &walk_cfg)?;
    write_trace_csv(&trace, BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;
    println!("{} steps from {:?}, cumulative reward {}", trace.steps.len(), start, trace.cumulative_reward);
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig) -> anyhow::Result<()> {
    let mut worst = 0.0f64;
    for mode in [Mode::Partial, Mode::ActorCritic, Mode::QLearning] {
        let report = gradient_check(&NetConfig::tiny(mode), cfg.seed)?;
        for (group, err) in &report.per_group {
            println!("{:<13} {:<10} {:.3e}", mode.name(), group, err);
        }
        worst = worst.max(report.max_rel_error);
    }
    println!("max relative error {worst:.3e}");
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Numerical(format!(
            "gradient check failed: {worst:.3e} > {GRADCHECK_TOLERANCE:e}"
        ))
        .into());
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let name = match &cli.command {
        Command::Gradcheck => return cmd_gradcheck(&cfg),
        Command::Config => {
            println!("{}", cfg.to_json_pretty());
            return Ok(());
        }
        Command::Gen { .. } => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Trace(_) => "trace",
    };
    let dir = create_run_dir(&cli.runs_dir, name, &cfg)?;
    log::info!("run directory {}", dir.display());
    match &cli.command {
        Command::Gen { .. } => cmd_gen(&cfg, &dir),
        Command::Train(a) => cmd_train(&cfg, a, &dir),
        Command::Eval(a) => cmd_eval(&cfg, a, &dir),
        Command::Trace(a) => cmd_trace(&cfg, a, &dir),
        Command::Gradcheck | Command::Config => unreachable!(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config { .. }) => 2,
        Some(Error::Numerical(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
