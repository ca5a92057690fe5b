use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cpcf::commands;
use cpcf::csv::fmt_g10;
use cpcf::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "cpcf", version, about = "Measure catastrophic forgetting with conformal prediction set sizes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// key = value configuration file
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. --set dataset=blobs (repeatable)
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (same as --set output_dir=DIR)
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Suppress per-evaluation progress on stderr
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one curriculum per seed and write its run log
    Run(ConfigArgs),
    /// Run the calibration-ratio x alpha grid and write correlation tables
    Sweep(ConfigArgs),
    /// Render SVG charts from run logs
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(short, long, default_value = "plots")]
        out: PathBuf,
    },
    /// Write the synthetic blob corpus as CSV
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination file
        #[arg(long, default_value = "blobs.csv")]
        file: PathBuf,
    },
    /// Check a run log's schema and invariants
    Verify {
        csv: PathBuf,
        /// Repeat the run from the echoed config and compare every row
        #[arg(long)]
        rerun: bool,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_env();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))?;
    }
    cfg.apply_overrides(&args.overrides)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cpcf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(args) => {
            let cfg = load_config(&args)?;
            let quiet = args.quiet;
            let results = commands::cmd_run(&cfg, &mut |r| {
                if !quiet {
                    eprintln!(
                        "task {} epoch {}: a_new={} a_prev={} cpcf={}",
                        r.task_index,
                        r.epoch,
                        fmt_g10(r.a_new),
                        r.a_prev.map(fmt_g10).unwrap_or_else(|| "-".into()),
                        r.cpcf.map(fmt_g10).unwrap_or_else(|| "-".into())
                    );
                }
            })?;
            for r in results {
                let o = r.omega;
                println!(
                    "{} omega_base={} omega_new={} omega_all={} omega_prev={}",
                    r.csv_path.map(|p| p.display().to_string()).unwrap_or(r.run_id),
                    fmt_g10(o.omega_base),
                    fmt_g10(o.omega_new),
                    fmt_g10(o.omega_all),
                    fmt_g10(o.omega_prev)
                );
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args)?;
            let quiet = args.quiet;
            let summary = commands::cmd_sweep(&cfg, &mut |cell| {
                if !quiet {
                    eprintln!("cell {cell}");
                }
            })?;
            println!("{} run logs, tables in {} and {}", summary.results.len(), summary.table2.display(), summary.table3.display());
            match summary.failed.first() {
                None => Ok(()),
                Some(_) => {
                    for (cell, e) in &summary.failed {
                        eprintln!("failed: {cell}: {e}");
                    }
                    let (_, worst) = summary.failed.into_iter().max_by_key(|(_, e)| e.exit_code()).expect("nonempty");
                    Err(worst)
                }
            }
        }
        Command::Plot { csv, out } => {
            for p in commands::cmd_plot(&csv, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Synth { cfg, file } => {
            let cfg = load_config(&cfg)?;
            let n = commands::cmd_synth(&cfg, &file)?;
            println!("{n} samples written to {}", file.display());
            Ok(())
        }
        Command::Verify { csv, rerun } => {
            let report = commands::cmd_verify(&csv, rerun)?;
            for p in &report.problems {
                println!("problem: {p}");
            }
            if let Some(m) = report.rerun_matched {
                println!("re-run {}", if m { "reproduced every row" } else { "differs" });
            }
            if report.ok() {
                println!("{}: {} rows ok", csv.display(), report.rows);
                Ok(())
            } else {
                Err(CliError::Data(format!("{} failed verification", csv.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
