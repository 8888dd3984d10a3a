use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use doorspray::eval::{
    report, run_suite, summary_text, sweep, sweep_csv, write_artifacts, EvalError, SWEEP_PARAMS,
};
use doorspray::mission::{load_config, MissionConfig};
use doorspray::scene::{default_scene, load_scene};
use doorspray::SceneModel;

/// Exit status for a finished run where some trial aborted.
const EXIT_ABORTED: u8 = 1;
/// Exit status for unreadable or invalid inputs.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "doorspray",
    version,
    about = "Door-handle spraying UAV simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite of missions and write per-trial artifacts.
    Run {
        /// Scene TOML. The bundled hallway is used when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Mission TOML. Built-in defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Base seed; trial i uses seed + i.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Artifact directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scene (and optionally a mission config) and print a summary.
    Validate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a parameter over a list of values and print CSV.
    Sweep {
        /// One of: duration, distance, standoff, spray_duration, depth_std,
        /// pose_std, hold_jitter, false_negative_prob.
        #[arg(long)]
        param: String,
        #[arg(long, num_args = 1.., value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Missions per value for parameters that need the simulator.
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the CSV to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Eval(EvalError),
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Eval(e)
    }
}

fn inputs(
    scene: Option<&Path>,
    config: Option<&Path>,
) -> Result<(SceneModel, MissionConfig), CliError> {
    let s = match scene {
        Some(p) => {
            load_scene(p).map_err(|e| CliError::Input(format!("scene {}: {e}", p.display())))?
        }
        None => default_scene(),
    };
    let c = match config {
        Some(p) => {
            load_config(p).map_err(|e| CliError::Input(format!("config {}: {e}", p.display())))?
        }
        None => MissionConfig::default(),
    };
    Ok((s, c))
}

fn run(
    scene: Option<&Path>,
    config: Option<&Path>,
    trials: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<bool, CliError> {
    let (scene, cfg) = inputs(scene, config)?;
    let results = run_suite(&scene, &cfg, trials, seed)?;
    let rep = report(&results, cfg.spray.duration)?;
    print!("{}", summary_text(&rep));
    if let Some(dir) = out {
        write_artifacts(dir, &results, &rep)?;
        println!("\nartifacts written to {}", dir.display());
    }
    Ok(rep.aborted == 0)
}

fn validate(scene: &Path, config: Option<&Path>) -> Result<(), CliError> {
    let (s, c) = inputs(Some(scene), config)?;
    println!("scene {} is valid", scene.display());
    let (lo, hi) = (s.bounds.min, s.bounds.max);
    println!(
        "  bounds ({:.2}, {:.2}, {:.2}) to ({:.2}, {:.2}, {:.2})",
        lo.x, lo.y, lo.z, hi.x, hi.y, hi.z
    );
    println!(
        "  {} obstacles, {} doors, {} handles",
        s.obstacles.len(),
        s.doors.len(),
        s.handles.len()
    );
    if config.is_some() {
        doorspray::eval::sample_start(&s, &c, c.seed)?;
        println!("  config is valid and the start region has free space");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scene,
            config,
            trials,
            seed,
            out,
        } => run(
            scene.as_deref(),
            config.as_deref(),
            *trials,
            *seed,
            out.as_deref(),
        ),
        Command::Validate { scene, config } => validate(scene, config.as_deref()).map(|_| true),
        Command::Sweep {
            param,
            values,
            scene,
            config,
            trials,
            seed,
            out,
        } => inputs(scene.as_deref(), config.as_deref()).and_then(|(s, c)| {
            let rows = sweep(param, values, &s, &c, *trials, *seed)?;
            let csv = sweep_csv(param, &rows);
            print!("{csv}");
            if let Some(p) = out {
                fs::write(p, &csv).map_err(|e| CliError::Eval(EvalError::Io(e)))?;
            }
            Ok(true)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one trial aborted");
            ExitCode::from(EXIT_ABORTED)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Eval(e)) => {
            eprintln!("error: {e}");
            if let EvalError::UnknownParam(_) = e {
                eprintln!("known parameters: {}", SWEEP_PARAMS.join(", "));
            }
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
