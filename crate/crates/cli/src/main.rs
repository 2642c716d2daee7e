use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scooterbench_core::config::{parse_grades, StrategySelection};
use scooterbench_core::harness::{
    emit_report, regenerate_report, run_coastdown, run_dyno_sweep, run_road_vs_dyno, ReportFormat,
};
use scooterbench_core::{Config, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "scooterbench", version, about = "Scooter top-speed restriction bench: ignition retard against throttle control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Identify the road-load polynomial from a simulated coast-down pair.
    Coastdown {
        /// Config file overlaid on the shipped defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the dynamometer grade sweep and write the report tree.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated grades as fractions, or `default`.
        #[arg(long)]
        grades: Option<String>,
        /// or, vc or both.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare steady throttle on the road and on the roller.
    RoadVsDyno {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the improvement and per-km tables from a sweep directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn load(path: Option<&Path>) -> Result<Config> {
    match path {
        // an unreadable config file is a config problem, not a simulation one
        Some(p) => Config::load(p).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            other => other,
        }),
        None => Ok(Config::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Coastdown { config, out } => {
            let cfg = load(config.as_deref())?;
            let r = run_coastdown(&cfg, &out)?;
            println!(
                "resistance fit: F = {:.5} v^2 + {:.3} N (c_w {:.3}, f_R {:.4})",
                r.fit.curve.quad_coeff, r.fit.curve.const_coeff, r.derived.drag_coeff, r.derived.rolling_coeff
            );
        }
        Command::Sweep { config, grades, strategy, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(g) = grades {
                cfg.sweep.grades = parse_grades(&g)?;
            }
            if let Some(s) = strategy {
                cfg.sweep.strategy = s.parse::<StrategySelection>()?;
            }
            if let Some(s) = seed {
                cfg.sweep.seed = s;
            }
            cfg.validate()?;
            let report = run_dyno_sweep(&cfg)?;
            emit_report(&report, &out, ReportFormat::Csv)?;
            let invalid = report.points.iter().filter(|p| !p.flags.efm_valid).count();
            println!("{} points written to {} ({invalid} below the flow-meter floor)", report.points.len(), out.display());
        }
        Command::RoadVsDyno { config, out } => {
            let cfg = load(config.as_deref())?;
            for r in run_road_vs_dyno(&cfg, &out)? {
                println!("{:>4.0} km/h  road {:6.2} %  dyno {:6.2} %", r.speed, r.road, r.dyno);
            }
        }
        Command::Report { input, format } => {
            regenerate_report(&input, format.parse::<ReportFormat>()?)?;
            println!("tables regenerated in {}", input.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("scooterbench: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
