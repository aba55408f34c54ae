use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpdr_core::harness::{
    emit_outputs, read_records, run_experiment, summarize, sweep_specs, write_summary, ExperimentConfig, GroupKey,
    HarnessError,
};
use dpdr_core::netmodel::build_canadian_feeder;
use log::info;

/// Share of failed trials above which `run` exits with code 2.
const FAILURE_LIMIT: f64 = 0.05;

const EXIT_CONFIG: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "dpdr", version, about = "Privacy cost of demand response on a radial feeder")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep of a config and write records, summary and charts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Overrides the experiment seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print per-group statistics of an existing records.csv.
    Summarize {
        #[arg(long)]
        records: PathBuf,
    },
    /// Describe the 4-bus feeder.
    Feeder {
        /// Print the network file instead of a description.
        #[arg(long)]
        emit: bool,
        #[arg(long, default_value_t = 1.0)]
        section_length_km: f64,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Io { .. } | HarnessError::Csv { .. } => EXIT_IO,
        HarnessError::Config(_) | HarnessError::Parse { .. } | HarnessError::NoRecords | HarnessError::Pool(_) => {
            EXIT_CONFIG
        }
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: HarnessError| (exit_code(&e), e.to_string());
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(fail)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let output = run_experiment(&cfg, threads).map_err(fail)?;
            let paths = emit_outputs(&output, &out, cfg.output.inline_wall_ms).map_err(fail)?;
            for p in &paths {
                println!("wrote {}", p.display());
            }
            let failed = output.failure_fraction();
            info!("failed trials: {:.1}%", 100.0 * failed);
            if failed > FAILURE_LIMIT {
                return Err((
                    EXIT_SOLVER,
                    format!(
                        "{:.1}% of trials ended without a certified optimum (limit {:.0}%)",
                        100.0 * failed,
                        100.0 * FAILURE_LIMIT
                    ),
                ));
            }
            Ok(())
        }
        Command::Summarize { records } => {
            let recs = read_records(&records).map_err(fail)?;
            if recs.is_empty() {
                return Err(fail(HarnessError::NoRecords));
            }
            let rows = summarize(&recs, &[GroupKey::Case, GroupKey::N, GroupKey::Epsilon]);
            write_summary(&rows, std::io::stdout().lock()).map_err(|e| (EXIT_IO, e.to_string()))
        }
        Command::Feeder {
            emit,
            section_length_km,
        } => {
            let net = build_canadian_feeder(section_length_km, 4e6).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
            if emit {
                print!("{}", net.to_toml());
            } else {
                let base = net.base();
                println!(
                    "{} buses, {} lines, s_base {} VA, v_base {} V, z_base {:.6} ohm",
                    net.num_buses(),
                    net.lines.len(),
                    net.s_base,
                    net.v_base,
                    base.z_base()
                );
                for (i, l) in net.lines.iter().enumerate() {
                    println!(
                        "line {i}: {} -> {}, {} km, z = {:.6} + j{:.6} pu",
                        l.from_bus, l.to_bus, l.length_km, l.impedance.re, l.impedance.im
                    );
                }
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).map_err(fail)?;
            let trials: usize = cfg.sweeps.iter().map(|s| sweep_specs(&cfg, s).len()).sum();
            println!("ok: {} sweep(s), {trials} trials", cfg.sweeps.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
