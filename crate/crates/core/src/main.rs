use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use traceq::harness::{
    exit_code, load_config, run_eval, run_gradcheck, run_oracle_check, run_train, EXIT_CHECK_FAILED, EXIT_OK,
    EXIT_USAGE,
};
use traceq::Error;

#[derive(Parser)]
#[command(name = "traceq", version, about = "Deep recurrent Q-learning with Q(λ) traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics.csv and checkpoint.bin into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and print the mean episode return.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare BPTT gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Compare truncated λ-return targets with the brute-force oracle.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            resume,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))?;
            let rows = run_train(cfg, &dir, resume.as_deref())?;
            if let Some(last) = rows.last() {
                println!(
                    "epoch {} env_steps {} eval_mean_return {:.4}",
                    last.epoch, last.env_steps, last.eval_mean_return
                );
            }
            Ok(EXIT_OK)
        }
        Command::Eval {
            checkpoint,
            config,
            frames,
            seed,
        } => {
            let cfg = load_config(&config)?;
            let mean = run_eval(&checkpoint, &cfg, frames, seed)?;
            println!("{mean:.4}");
            Ok(EXIT_OK)
        }
        Command::Gradcheck {
            tol,
            seed,
            corrupt_backward,
        } => {
            let report = run_gradcheck(seed, corrupt_backward)?;
            let pass = report.max_relative_error < tol;
            println!(
                "{} max relative error {:e} at {} ({} values checked, tolerance {tol:e})",
                if pass { "PASS" } else { "FAIL" },
                report.max_relative_error,
                report.worst,
                report.checked
            );
            Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::OracleCheck { trials, seed } => {
            if trials == 0 {
                eprintln!("warning: zero trials requested, nothing checked");
            }
            let outcome = run_oracle_check(trials, seed)?;
            match outcome.failure {
                None => {
                    println!(
                        "PASS {} trials, max abs diff {:e}",
                        outcome.trials, outcome.max_abs_diff
                    );
                    Ok(EXIT_OK)
                }
                Some(dump) => {
                    println!("FAIL first failing case:\n{dump}");
                    Ok(EXIT_CHECK_FAILED)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = run(cli.command).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    });
    ExitCode::from(code as u8)
}
