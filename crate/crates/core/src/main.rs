use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stanpinn::cli::{aggregate, run, sweep_beta, verify, workers_from_env, CliError, RunReport, SummaryRow, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "stanpinn", version, about = "PINN experiments with tanh, N-LAAF and Stan activations")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write trace.csv, result.json and checkpoint.json per seed.
    #[command(after_help = format!("Seeds run in parallel on ${WORKERS_ENV} threads (default 1)."))]
    Run { config: PathBuf },
    /// Summarise every result.json under a directory into summary.csv and summary.json.
    Aggregate { dir: PathBuf },
    /// Run the property suite; exits nonzero if any check fails.
    Verify,
    /// Run a config once per initial scale in 0.25, 0.35, ..., 1.15 and summarise.
    SweepBeta { config: PathBuf },
}

fn print_summary(rows: &[SummaryRow]) {
    println!("{:<26} {:<6} {:>6} {:>6} {:>12} {:>12}", "problem", "act", "beta", "seeds", "mean_mse", "mean_re");
    for r in rows {
        let beta = r.beta_init.map_or("-".into(), |b| format!("{b:.2}"));
        let mse = r.mean_mse.map_or("-".into(), |m| format!("{m:.4e}"));
        let re = r.mean_re.map_or("-".into(), |m| format!("{m:.4e}"));
        println!("{:<26} {:<6} {:>6} {:>6} {:>12} {:>12}", r.problem.as_str(), r.activation.name(), beta, r.seeds, mse, re);
    }
}

fn finish(reports: &[RunReport]) -> ExitCode {
    let aborted: usize = reports.iter().map(RunReport::aborted).sum();
    for report in reports {
        println!("wrote {} run(s) under {}", report.results.len(), report.dir.display());
    }
    if aborted > 0 {
        eprintln!("{aborted} run(s) aborted; partial artifacts kept");
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let workers = workers_from_env();
    match args.command {
        Command::Run { config } => match run(&config, workers) {
            Ok(report) => finish(std::slice::from_ref(&report)),
            Err(e) => fail(e),
        },
        Command::Aggregate { dir } => match aggregate(&dir) {
            Ok(rows) => {
                print_summary(&rows);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::SweepBeta { config } => match sweep_beta(&config, workers) {
            Ok((reports, rows)) => {
                print_summary(&rows);
                finish(&reports)
            }
            Err(e) => fail(e),
        },
        Command::Verify => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
