use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mcgd::experiments::{
    cmd_analyze_mixing, cmd_build_chain, cmd_run, cmd_validate, ExperimentConfig, Failure,
};

#[derive(Parser)]
#[command(name = "mcgd", version, about = "Markov chain gradient descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reversible chain P and its non-reversible lift Q.
    BuildChain(Common),
    /// Tabulate deviation norms and mixing bounds for a matrix file.
    AnalyzeMixing(Common),
    /// Run the configured experiment batch.
    Run(Common),
    /// Check step sizes, noise and chains against the convergence conditions.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the step-size and noise gates.
    #[arg(long = "unsafe")]
    unsafe_schedule: bool,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf), Failure> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.unsafe_schedule |= self.unsafe_schedule;
        let out = self.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::BuildChain(c) => {
            let (cfg, out) = c.load()?;
            report_files(&cmd_build_chain(&cfg, &out)?);
        }
        Command::AnalyzeMixing(c) => {
            let (cfg, out) = c.load()?;
            report_files(&cmd_analyze_mixing(&cfg, &out)?);
        }
        Command::Run(c) => {
            let (cfg, out) = c.load()?;
            let batch = cmd_run(&cfg, &out)?;
            report_files(&batch.files);
            if !batch.failures.is_empty() {
                for f in &batch.failures {
                    eprintln!("run failed: {f}");
                }
                return Err(Failure::Runtime(format!("{} of {} runs failed", batch.failures.len(), batch.runs.len())));
            }
        }
        Command::Validate(c) => {
            let (cfg, _) = c.load()?;
            let report = cmd_validate(&cfg);
            for line in &report.lines {
                println!("{line}");
            }
            if let Some(v) = report.first_violation {
                return Err(Failure::Validation(v));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
