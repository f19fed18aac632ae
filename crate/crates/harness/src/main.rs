use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use harness::campaign::with_workers;
use harness::{run_ber_campaign, run_crlb_curve, run_nmse_campaign, write_csv, ExperimentConfig, HarnessError, Scenario};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Campaign {
    Nmse,
    Ber,
    Crlb,
}

/// Monte Carlo campaigns for delay-scale channel estimation and detection.
#[derive(Debug, Parser)]
#[command(name = "simulate")]
struct Cli {
    campaign: Campaign,
    /// TOML config file, or the name of a built-in preset.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(snr) = cli.snr {
        cfg.snr_db = snr;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    if cli.out.is_some() {
        cfg.out = cli.out;
    }
    let exp = cfg.resolve()?;
    let out = exp.out.clone();
    let records = with_workers(cli.workers, move || {
        let sc = Scenario::new(exp)?;
        match cli.campaign {
            Campaign::Nmse => run_nmse_campaign(&sc),
            Campaign::Ber => run_ber_campaign(&sc),
            Campaign::Crlb => run_crlb_curve(&sc),
        }
    })??;
    match out {
        Some(path) => write_csv(&records, BufWriter::new(File::create(path)?)),
        None => write_csv(&records, io::stdout().lock()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simulate: {e}");
            match e {
                HarnessError::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
