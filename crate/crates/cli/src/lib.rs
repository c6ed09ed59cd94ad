//! Command-line front end for the forgetting lab: run, verify, gradcheck,
//! sweep and compare.

pub mod artifacts;
pub mod commands;
pub mod compare;
pub mod config;
pub mod error;

use clap::{Parser, Subcommand};
use error::CliError;
use finch_core::numeric::fmt_f64;
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "finch", version, about = "Loss-adaptive fine-tuning lab and forgetting-bound verifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain, fine-tune and write run artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to output.dir, then $FINCH_OUT_ROOT/<config stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides train.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace artifacts in a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Re-check the per-step forgetting bound on a finished run.
    Verify {
        /// Run directory written by `finch run`.
        dir: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        cases: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of schedule settings against one pretrained model.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,...` with key eta_base, lr or batch_size. Repeatable.
        #[arg(long = "grid")]
        grids: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Tabulate finished runs on the same task, with Pareto flags.
    Compare {
        #[arg(required = true, num_args = 2..)]
        dirs: Vec<PathBuf>,
        /// Also write comparison.csv into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed, overwrite } => {
            let o = commands::cmd_run(&config, out.as_deref(), seed, overwrite)?;
            let s = &o.summary;
            println!("wrote {}", o.dir.display());
            println!(
                "final new loss {}, cumulative forgetting {}",
                fmt_f64(s.final_new_loss),
                fmt_f64(s.cumulative_forgetting)
            );
            if let Some(r) = &o.report {
                println!("bound: {} steps checked, min slack {}", r.checked(), fmt_f64(r.min_slack));
            }
        }
        Command::Verify { dir } => {
            let o = commands::cmd_verify(&dir)?;
            print!("{}", o.summary);
        }
        Command::Gradcheck { config, cases, seed } => {
            let o = commands::cmd_gradcheck(&config, cases, seed)?;
            println!("gradcheck ok: {} cases, max relative error {:e}", o.cases, o.max_rel_error);
        }
        Command::Sweep { config, grids, out, seed, overwrite } => {
            let o = commands::cmd_sweep(&config, &grids, out.as_deref(), seed, overwrite)?;
            if o.duplicates > 0 {
                eprintln!("warning: dropped {} duplicate grid point(s)", o.duplicates);
            }
            print!("{}", commands::write_sweep_csv(&o.rows));
            let violations = o.rows.iter().filter(|r| r.status.starts_with("violations")).count();
            let failed = o.rows.iter().filter(|r| r.summary.is_none()).count();
            if violations > 0 {
                return Err(CliError::Failed(format!("{violations} sweep point(s) violated the bound")));
            }
            if failed > 0 {
                return Err(CliError::Diverged(format!("{failed} sweep point(s) failed")));
            }
        }
        Command::Compare { dirs, out } => {
            let rows = commands::cmd_compare(&dirs, out.as_deref())?;
            print!("{}", compare::write_comparison_csv(&rows));
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
