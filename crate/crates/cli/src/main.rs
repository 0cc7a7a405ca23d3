use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use esfem_cli::config::{ExperimentChoice, RunConfig, DEFAULT_SEED};
use esfem_cli::run::run;
use esfem_cli::verify::{verify, Fault};

#[derive(Parser)]
#[command(name = "esfem", version, about = "Monte-Carlo evolving surface finite elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a convergence study and print the error table.
    Run(Box<RunArgs>),
    /// Run the fast property suite.
    Verify {
        /// Break the problem on purpose to check that failures are reported.
        #[arg(long, value_enum)]
        inject_fault: Option<Fault>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<ExperimentChoice>,
    /// Finest level; rows run over 0..=LEVELS.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    tau_ratio: Option<f64>,
    #[arg(long)]
    m0: Option<usize>,
    #[arg(long)]
    m_ratio: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_md: Option<PathBuf>,
    /// Directory for OFF dumps of the reference meshes.
    #[arg(long)]
    mesh_dump: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        c.apply_env(|k| std::env::var(k).ok())?;
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        take!(experiment, levels, tau0, tau_ratio, m0, m_ratio, replicates, seed, tol, workers);
        if self.out_csv.is_some() {
            c.out_csv = self.out_csv;
        }
        if self.out_md.is_some() {
            c.out_md = self.out_md;
        }
        if self.mesh_dump.is_some() {
            c.mesh_dump = self.mesh_dump;
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => {
            let result = (*args).into_config().and_then(|config| run(&config, &mut std::io::stderr()));
            match result {
                Ok(out) => {
                    print!("{}", out.markdown);
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Verify { inject_fault, seed } => {
            let checks = verify(inject_fault, seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("failed: {}", failed.join(", "));
                ExitCode::FAILURE
            }
        }
    }
}
