use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poscm_cli::{emit_plot_data, run, ProtocolConfig};

#[derive(Parser)]
#[command(name = "poscm", version, about = "Run POSCM identification experiments from protocol files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a protocol and write result tables, run.json and plot data.
    Run {
        protocol: PathBuf,
        /// Output directory; defaults to the protocol's outDir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "POSCM_THREADS")]
        threads: Option<usize>,
        /// Replace the seeds with K, K+1, ... (same count).
        #[arg(long, value_name = "K")]
        seed_override: Option<u64>,
    },
    /// Validate a protocol and print its config hash.
    Check { protocol: PathBuf },
}

const CONFIG_ERROR: u8 = 1;
const PROPERTY_FAILED: u8 = 2;

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Check { protocol } => match ProtocolConfig::load(&protocol) {
            Ok(cfg) => {
                println!("{}", cfg.hash());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(CONFIG_ERROR)
            }
        },
        Command::Run { protocol, out, threads, seed_override } => {
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(CONFIG_ERROR);
                }
            }
            match run_protocol(&protocol, out, seed_override) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(PROPERTY_FAILED),
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(CONFIG_ERROR)
                }
            }
        }
    }
}

fn run_protocol(protocol: &Path, out: Option<PathBuf>, seed_override: Option<u64>) -> anyhow::Result<bool> {
    let mut cfg = ProtocolConfig::load(protocol)?;
    if let Some(k) = seed_override {
        cfg.override_seeds(k);
    }
    let dir = out
        .or_else(|| cfg.out_dir.as_ref().map(|d| cfg.base_dir.join(d)))
        .ok_or_else(|| anyhow::anyhow!("no output directory: pass --out or set outDir"))?;
    let record = run(&cfg)?;
    record.write(&dir)?;
    emit_plot_data(&record, &dir)?;
    for c in &record.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{} tables written to {} (config {})", record.tables.len(), dir.display(), &record.config_hash[..12]);
    Ok(record.passed())
}
