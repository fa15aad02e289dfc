use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use ecs_core::config::{parse_config, read_config, ConfigError, ExperimentConfig};
use ecs_core::engine::EngineMode;
use ecs_core::experiment::{run_experiment, serve_plant, EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, EXIT_RUNTIME};
use ecs_core::metrics::compute_metrics;
use ecs_core::time::ticks_from_seconds;
use ecs_core::trace::read_trace_csv;

#[derive(Parser)]
#[command(name = "ecs", version, about = "Embedded control loops against simulated plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (TOML).
    config: PathBuf,
    /// Trace CSV destination; overrides [engine].output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Run length in seconds; overrides [engine].duration.
    #[arg(short, long)]
    duration: Option<f64>,
    /// Overrides [engine].seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment in deterministic virtual time.
    Simulate(RunArgs),
    /// Run the controllers in real time against live plant endpoints.
    DeployController(RunArgs),
    /// Host the configured plants behind their channels on a real-time ticker.
    ServePlant {
        config: PathBuf,
        /// Run length in seconds; overrides [engine].duration.
        #[arg(short, long)]
        duration: Option<f64>,
        /// Extra seconds to keep serving after the run length.
        #[arg(long, default_value_t = 5.0)]
        linger: f64,
    },
    /// Compute step-response metrics from a trace CSV.
    Metrics {
        trace: PathBuf,
        #[arg(long)]
        setpoint: f64,
        #[arg(long, default_value_t = 0)]
        loop_id: u16,
        #[arg(long, default_value_t = 2.0)]
        band_pct: f64,
        #[arg(long, default_value_t = 10.0)]
        tail_pct: f64,
    },
    /// Print the normalized configuration with all defaults filled in.
    DumpConfig { config: PathBuf },
}

fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Parse only; validation happens after the command-line overrides.
fn load_unchecked(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    read_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn with_overrides(
    mut cfg: ExperimentConfig,
    mode: EngineMode,
    duration: Option<f64>,
    output: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, String> {
    cfg.mode = mode;
    if let Some(s) = duration {
        cfg.duration = ticks_from_seconds(s).map_err(|e| format!("--duration: {e}"))?;
    }
    if output.is_some() {
        cfg.output = output;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate(&ecs_core::control::ControllerRegistry::with_builtins())
        .map_err(|e: ConfigError| e.to_string())?;
    Ok(cfg)
}

fn run(args: RunArgs, mode: EngineMode) -> i32 {
    let cfg = match load_unchecked(&args.config).and_then(|c| with_overrides(c, mode, args.duration, args.output, args.seed)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&cfg) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report.loops).expect("summary serializes"));
            if report.diverged() {
                eprintln!("error: a loop diverged");
                EXIT_DIVERGED
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(args) => run(args, EngineMode::VirtualTime),
        Command::DeployController(args) => run(args, EngineMode::RealTime),
        Command::ServePlant {
            config,
            duration,
            linger,
        } => {
            let cfg = match load_unchecked(&config).and_then(|c| with_overrides(c, EngineMode::RealTime, duration, None, None)) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG as u8);
                }
            };
            let stop = AtomicBool::new(false);
            match serve_plant(&cfg, Duration::from_secs_f64(linger.max(0.0)), &stop) {
                Ok(report) => {
                    eprintln!("plant served {} ticks ({} late)", report.ticks, report.late_ticks);
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    EXIT_RUNTIME
                }
            }
        }
        Command::Metrics {
            trace,
            setpoint,
            loop_id,
            band_pct,
            tail_pct,
        } => match read_trace_csv(&trace) {
            Ok(records) => {
                let recs: Vec<_> = records.into_iter().filter(|r| r.loop_id == loop_id).collect();
                match compute_metrics(&recs, setpoint, band_pct, tail_pct) {
                    Ok(m) => {
                        println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
                        EXIT_OK
                    }
                    Err(e) => {
                        eprintln!("error: loop {loop_id}: {e}");
                        EXIT_RUNTIME
                    }
                }
            }
            Err(e) => {
                eprintln!("error: {}: {e}", trace.display());
                EXIT_RUNTIME
            }
        },
        Command::DumpConfig { config } => match load(&config) {
            Ok(cfg) => {
                print!("{}", cfg.dump());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        },
    };
    ExitCode::from(code as u8)
}
