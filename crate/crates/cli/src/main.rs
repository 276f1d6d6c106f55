use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ess_core::nomogram::{feasible_combinations, NomogramTable};
use ess_core::output::fmt6;
use ess_core::reserve::build_demand_curve;
use ess_core::rocof::{score_response, RocofError, ScoringConfig};
use ess_core::scenario::{load_error_samples, load_nomogram, load_response_trace};
use ess_core::{emit_outputs, load_scenario, run};

#[derive(Parser)]
#[command(name = "ess-sim", version, about = "Energy and system-services market simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write result tables.
    Run {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit a measured response and print its speed multiplier.
    ScoreRocof {
        /// CSV with columns t_s,output_mw.
        trace: PathBuf,
        #[arg(long, default_value_t = 6.0)]
        tau_ref: f64,
        #[arg(long, default_value_t = 5.0)]
        m_max: f64,
    },
    /// Build a reserve demand curve from forecast errors.
    BuildOrdc {
        /// CSV with a single error_mw column.
        errors: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        cap: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 30)]
        horizon_min: u32,
    },
    /// List table rows that support a non-synchronous level.
    Nomogram {
        table: PathBuf,
        #[arg(long)]
        nonsync: f64,
    },
    /// Load and validate a scenario without running it.
    Validate { scenario: PathBuf },
}

enum Failure {
    Validation(String),
    Runtime(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure::Validation(e.to_string())
}

fn runtime(e: impl ToString) -> Failure {
    Failure::Runtime(e.to_string())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, out } => {
            let sc = load_scenario(&scenario).map_err(invalid)?;
            let report = run(&sc).map_err(runtime)?;
            let files = emit_outputs(&report, &out).map_err(runtime)?;
            let s = &report.summary;
            println!(
                "{}: {} intervals, curtailed fraction {}, interventions {}, insecure intervals {}, total cost {}",
                report.name,
                s.intervals,
                fmt6(s.curtailed_fraction),
                s.intervention_count,
                s.insecure_intervals,
                fmt6(s.total_cost)
            );
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::ScoreRocof { trace, tau_ref, m_max } => {
            if !(tau_ref > 0.0 && m_max >= 1.0) {
                return Err(invalid("need --tau-ref > 0 and --m-max >= 1"));
            }
            let trace = load_response_trace(&trace).map_err(invalid)?;
            let config = ScoringConfig {
                tau_reference_s: tau_ref,
                m_max,
            };
            let score = score_response(&trace, None, &config).map_err(|e| match e {
                RocofError::NoConvergence(_) => runtime(e),
                other => invalid(other),
            })?;
            println!("r_max_mw,tau_s,rmse_mw,saturated,multiplier");
            println!(
                "{},{},{},{},{}",
                fmt6(score.fit.r_max),
                fmt6(score.fit.tau_s),
                fmt6(score.fit.rmse),
                score.fit.saturated,
                fmt6(score.multiplier)
            );
        }
        Command::BuildOrdc {
            errors,
            cap,
            steps,
            horizon_min,
        } => {
            let set = load_error_samples(&errors, horizon_min).map_err(invalid)?;
            let curve = build_demand_curve(&set, cap, steps).map_err(invalid)?;
            println!("reserve_mw,price");
            for (r, p) in curve.breakpoints() {
                println!("{},{}", fmt6(*r), fmt6(*p));
            }
        }
        Command::Nomogram { table, nonsync } => {
            if !(nonsync >= 0.0 && nonsync.is_finite()) {
                return Err(invalid("--nonsync must be a non-negative MW value"));
            }
            let table: NomogramTable = load_nomogram(&table).map_err(invalid)?;
            let feasible = feasible_combinations(&table, nonsync);
            println!("label,nonsync_limit_mw");
            for label in &feasible {
                let row = table.get(label).expect("label from table");
                println!("{label},{}", row.nonsync_limit_mw);
            }
            if feasible.is_empty() {
                eprintln!(
                    "no combination supports {nonsync} MW (table maximum {} MW)",
                    table.max_limit_mw()
                );
            }
        }
        Command::Validate { scenario } => {
            let sc = load_scenario(&scenario).map_err(invalid)?;
            println!(
                "{}: valid, {} intervals of {} min, {} facilities, {} offers",
                sc.name,
                sc.intervals,
                sc.market.mode.interval_minutes(),
                sc.registry.len(),
                sc.registry.offers().len()
            );
        }
    }
    Ok(())
}
