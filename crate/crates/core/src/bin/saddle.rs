use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use saddle_core::harness::{execute, objective_svg, read_trace_csv, run_experiment, ExperimentConfig, Overrides};
use saddle_core::spectral::{SpectralReport, Verdict};
use saddle_core::verification::LedgerSummary;
use saddle_core::Error;

#[derive(Parser)]
#[command(name = "saddle", version, about = "Perturbed alternating optimizers and their saddle-escape checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write traces, reports and plots.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Plot objective against iteration for one or more trace.csv files.
    Plot {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log_x: bool,
    },
    /// Run the ledger and eigenvalue checks of a config without writing artifacts.
    Verify { config: PathBuf },
}

#[derive(Serialize)]
struct VerifyLine {
    method: String,
    seeds: usize,
    ledger_violations: usize,
    primary_ledger: LedgerSummary,
    ss2_failures: usize,
    spectral: Option<SpectralReport>,
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Json(_) => ExitCode::from(2),
        Error::Numerical { .. } => ExitCode::from(3),
        Error::Io(_) | Error::Csv(_) => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("saddle: {e}");
            if let Error::Numerical { point: Some(p), .. } = &e {
                eprintln!("  at point {p:?}");
            }
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> saddle_core::Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            out,
            seed,
            budget,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir());
            let res = run_experiment(&cfg, &Overrides { seed, budget }, &out)?;
            for m in &res.methods {
                let r = &m.report;
                println!(
                    "{:<5} {:<17} f(x)={:<12.6} |grad|={:.3e} seeds={} ledgers={}",
                    m.method.name(),
                    r.termination.label(),
                    r.result_f,
                    r.final_grad_norm,
                    r.seeds.count,
                    if r.ledgers_clean { "clean" } else { "VIOLATED" }
                );
            }
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { traces, out, log_x } => {
            let series = traces
                .iter()
                .map(|p| read_trace_csv(p))
                .collect::<saddle_core::Result<Vec<_>>>()?;
            std::fs::write(&out, objective_svg(&series, log_x)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let res = execute(&cfg, &Overrides::default())?;
            let mut ok = true;
            for m in &res.methods {
                let r = &m.report;
                let spectral_ok = r.spectral.as_ref().is_none_or(|s| {
                    s.lemma != Some(Verdict::Fail) && s.corollary != Some(Verdict::Fail)
                });
                ok &= r.ledgers_clean && r.seeds.ss2_failures == 0 && spectral_ok;
                let line = VerifyLine {
                    method: m.method.name().to_string(),
                    seeds: r.seeds.count,
                    ledger_violations: r.seeds.ledger_violations,
                    primary_ledger: r.ledger,
                    ss2_failures: r.seeds.ss2_failures,
                    spectral: r.spectral.clone(),
                };
                println!("{}", serde_json::to_string(&line)?);
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
