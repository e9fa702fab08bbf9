use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mmwave_sync::fixture::write_json;
use mmwave_sync::harness::golden::generate_golden;
use mmwave_sync::harness::output::{CsvSink, MANIFEST_FILE, RESULTS_FILE};
use mmwave_sync::harness::validate::run_invariant_suite;
use mmwave_sync::harness::{run_montecarlo_with, AlgoSelection, ExperimentConfig, RunOptions};
use mmwave_sync::Result;

#[derive(Parser)]
#[command(name = "mmwave-sync", version, about = "Monte Carlo sweeps for hybrid mmWave MIMO-OFDM synchronization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0: all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// lmmse, ekf-rts or both.
    #[arg(long)]
    algo: Option<AlgoSelection>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Sweep(Common),
    /// Write a golden fixture (channel, frame, capture, estimates) as JSON.
    Fixture(Common),
    /// Run the invariant suite.
    Validate(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(a) = c.algo {
        cfg.algorithms = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sweep(c: &Common) -> Result<bool> {
    let cfg = load(c)?;
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir)?;
    let mut sink = CsvSink::create(&dir.join(RESULTS_FILE))?;
    let total = cfg.points().len();
    let out = run_montecarlo_with(&cfg, RunOptions { threads: c.threads }, |p, rows| {
        eprintln!("point {}/{total}: {} rows", p.index + 1, rows.len());
        sink.write(rows)
    })?;
    write_json(&dir.join(MANIFEST_FILE), &out.manifest)?;
    for f in &out.manifest.failures {
        eprintln!("trial failed (point {}, trial {}): {}", f.point, f.trial, f.message);
    }
    for f in &out.manifest.bound_flags {
        eprintln!(
            "bound above achieved + slack: point {} {:?} {:?} achieved {:.2} dB bound {:.2} dB",
            f.point, f.algorithm, f.metric, f.achieved_db, f.bound_db
        );
    }
    eprintln!("wrote {} rows to {}", out.rows.len(), dir.display());
    Ok(true)
}

fn fixture(c: &Common) -> Result<bool> {
    let cfg = load(c)?;
    let path = cfg.output.dir.join(format!("golden-{}.json", cfg.seed));
    write_json(&path, &generate_golden(cfg.seed)?)?;
    eprintln!("wrote {}", path.display());
    Ok(true)
}

fn validate(c: &Common) -> Result<bool> {
    let cfg = load(c)?;
    let checks = run_invariant_suite(cfg.seed);
    for ch in &checks {
        println!("{} {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Sweep(c) => sweep(c),
        Command::Fixture(c) => fixture(c),
        Command::Validate(c) => validate(c),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
