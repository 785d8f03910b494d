//! Command-line driver: dataset generation, training, closed-loop evaluation
//! and the gradient audit.
//!
//! Every command reads a flat `key = value` configuration ([`config::KEYS`]
//! lists the keys and defaults); `--set key=value` and the dedicated flags
//! override the file. Exit codes: 0 success, 1 failed check, 2 usage or IO
//! error, 3 numeric failure.

pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod train;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use sfse_core::sensors::BevConfig;
use sfse_core::OpKind;
use sfse_sim::generate_episode;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::gradcheck::GradcheckSettings;

#[derive(Debug, Parser)]
#[command(name = "sfse", version, about = "Camera/LiDAR fusion driver toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run seed (parameter init, batch order, gradcheck sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record expert episodes into a dataset directory.
    GenData {
        /// Episode seeds as `start..end` (end exclusive).
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Fit the network to a recorded dataset.
    Train {
        /// Dataset directory.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Drive one episode per seed and score it.
    Eval {
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Drive with the privileged expert instead of a checkpoint.
        #[arg(long)]
        expert: bool,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// Check in 64-bit floats.
        #[arg(long)]
        f64: bool,
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
}

fn set_seeds(cfg: &mut RunConfig, seeds: &str) -> Result<(), CliError> {
    let (a, b) = seeds
        .split_once("..")
        .ok_or_else(|| CliError::Usage(format!("seed range `{seeds}` is not start..end")))?;
    cfg.set("seed_start", a.trim())?;
    cfg.set("seed_end", b.trim())
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    let out_key = match &cli.command {
        Command::GenData { .. } => Some("data_dir"),
        Command::Train { .. } => Some("run_dir"),
        Command::Eval { .. } => Some("eval_dir"),
        Command::Gradcheck { .. } => None,
    };
    if let (Some(key), Some(out)) = (out_key, &cli.out) {
        cfg.set(key, &out.to_string_lossy())?;
    }
    match &cli.command {
        Command::GenData { seeds } => {
            if let Some(s) = seeds {
                set_seeds(&mut cfg, s)?;
            }
        }
        Command::Train { data } => {
            if let Some(d) = data {
                cfg.set("data_dir", &d.to_string_lossy())?;
            }
        }
        Command::Eval {
            seeds,
            checkpoint,
            expert,
        } => {
            if let Some(s) = seeds {
                set_seeds(&mut cfg, s)?;
            }
            if let Some(c) = checkpoint {
                cfg.set("checkpoint", &c.to_string_lossy())?;
            }
            if *expert {
                cfg.set("policy", "expert")?;
            }
        }
        Command::Gradcheck { .. } => {}
    }
    Ok(cfg)
}

fn gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let seeds = cfg.seed_range()?;
    let ep_cfg = cfg.episode()?;
    let root = cfg.path("data_dir");
    fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
    let bev = BevConfig::default();
    let (mut episodes, mut frames) = (0, 0);
    for seed in seeds {
        let ep = generate_episode(seed, &ep_cfg)?;
        frames += dataset::write_episode(&root, &ep, &bev)?;
        episodes += 1;
    }
    writeln!(out, "episodes={episodes} frames={frames}").map_err(|e| CliError::Io(e.to_string()))
}

fn run_gradcheck(cfg: &RunConfig, cli_out: &Option<PathBuf>, f64_mode: bool, fault: &Option<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let fault = match fault {
        None => None,
        Some(name) => Some(
            OpKind::DIFFERENTIABLE
                .into_iter()
                .find(|k| k.name() == name)
                .ok_or_else(|| CliError::Usage(format!("unknown op `{name}`")))?,
        ),
    };
    let settings = GradcheckSettings {
        seed: cfg.seed(),
        // single precision cannot resolve a tiny step
        eps: if f64_mode { cfg.get("gc_eps")? } else { 1e-2 },
        tol: cfg.get("gc_tol")?,
        samples: cfg.get("gc_samples")?,
        fault,
    };
    let mut text = Vec::new();
    let result = gradcheck::gradcheck(&settings, f64_mode, &mut text);
    out.write_all(&text).map_err(|e| CliError::Io(e.to_string()))?;
    if let Some(dir) = cli_out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("gradcheck.txt");
        fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    }
    result.map(|_| ())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = build_config(cli)?;
    match &cli.command {
        Command::GenData { .. } => gen_data(&cfg, out),
        Command::Train { .. } => train::train(&cfg, out).map(|_| ()),
        Command::Eval { .. } => eval::evaluate(&cfg, out).map(|_| ()),
        Command::Gradcheck { f64, fault } => run_gradcheck(&cfg, &cli.out, *f64, fault, out),
    }
}

/// Runs one invocation and returns its exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
