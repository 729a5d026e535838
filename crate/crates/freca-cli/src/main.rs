//! `freca` command line: run seeded federated-learning experiments from a
//! TOML config, re-render charts from stored reports, and validate
//! configs.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for runtime
//! errors. The `FRECA_OUT_DIR` environment variable, when set, overrides
//! the output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Parser, Subcommand};

use freca::config::{parse_config_with_overrides, to_toml, CaseName, CliOverrides, ConfigError};
use freca::orchestrator::run_experiment;
use freca::report::{
    build_manifest, emit_csv, emit_json, emit_manifest, emit_svg_chart, read_json, summary_table,
    CHART_SVG, MANIFEST_JSON, PER_ROUND_CSV, REPORT_JSON, SUMMARY_CSV,
};

const OUT_DIR_ENV: &str = "FRECA_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "freca",
    version,
    about = "Deterministic federated-learning simulator with truth-discovery aggregation and client contribution metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV/JSON/SVG artifacts.
    Run {
        /// Experiment config (TOML).
        config: PathBuf,
        /// Output directory (FRECA_OUT_DIR overrides; default ./freca-out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Round-count override.
        #[arg(long)]
        rounds: Option<u32>,
        /// Case preset override (case1..case5, custom).
        #[arg(long)]
        case: Option<CaseName>,
    },
    /// Re-emit the chart from a stored report.json.
    Report {
        /// Directory containing report.json.
        dir: PathBuf,
    },
    /// Parse and validate a config, printing the resolved form.
    Validate {
        /// Experiment config (TOML).
        config: PathBuf,
    },
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    flag.unwrap_or_else(|| PathBuf::from("freca-out"))
}

fn run(
    config: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    rounds: Option<u32>,
    case: Option<CaseName>,
) -> Result<(), MainError> {
    let started = unix_ms();
    let overrides = CliOverrides { seed, rounds, case };
    let cfg = parse_config_with_overrides(config, &overrides)?;

    let out_dir = resolve_out_dir(out);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| MainError::Runtime(format!("creating {}: {e}", out_dir.display())))?;

    eprintln!(
        "running {} ({} clients, {} rounds, seed {})",
        cfg.case, cfg.partition.clients, cfg.rounds, cfg.master_seed
    );
    let outcome = run_experiment(&cfg).map_err(|e| MainError::Runtime(e.to_string()))?;
    let finished = unix_ms();

    emit_csv(&outcome.report, &out_dir).map_err(runtime)?;
    emit_json(&outcome.report, &out_dir.join(REPORT_JSON)).map_err(runtime)?;
    emit_svg_chart(&outcome.report, &out_dir.join(CHART_SVG)).map_err(runtime)?;
    let manifest = build_manifest(
        &cfg,
        outcome.round_eval_counts.clone(),
        outcome.timings,
        started,
        finished,
    );
    emit_manifest(&manifest, &out_dir.join(MANIFEST_JSON)).map_err(runtime)?;

    println!("{}", summary_table(&outcome.report.averages));
    let evals: (u64, u64) = outcome
        .round_eval_counts
        .iter()
        .fold((0, 0), |acc, c| (acc.0 + c.sv, acc.1 + c.loo));
    println!(
        "utility evaluations: sv {} / loo {} / freca 0; wall clock: freca {:.3}s, sv {:.3}s, loo {:.3}s",
        evals.0,
        evals.1,
        manifest.wall_clock_seconds.freca,
        manifest.wall_clock_seconds.sv,
        manifest.wall_clock_seconds.loo,
    );
    for file in [
        PER_ROUND_CSV,
        SUMMARY_CSV,
        REPORT_JSON,
        MANIFEST_JSON,
        CHART_SVG,
    ] {
        println!("wrote {}", out_dir.join(file).display());
    }
    Ok(())
}

fn report(dir: &Path) -> Result<(), MainError> {
    let report = read_json(&dir.join(REPORT_JSON)).map_err(runtime)?;
    emit_svg_chart(&report, &dir.join(CHART_SVG)).map_err(runtime)?;
    println!("{}", summary_table(&report.averages));
    println!("wrote {}", dir.join(CHART_SVG).display());
    Ok(())
}

fn validate(config: &Path) -> Result<(), MainError> {
    let cfg = parse_config_with_overrides(config, &CliOverrides::default())?;
    let echo = to_toml(&cfg).map_err(MainError::Config)?;
    println!("config ok\n");
    print!("{echo}");
    Ok(())
}

enum MainError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for MainError {
    fn from(e: ConfigError) -> Self {
        MainError::Config(e)
    }
}

fn runtime(e: impl std::fmt::Display) -> MainError {
    MainError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            rounds,
            case,
        } => run(&config, out, seed, rounds, case),
        Command::Report { dir } => report(&dir),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(MainError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(MainError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
