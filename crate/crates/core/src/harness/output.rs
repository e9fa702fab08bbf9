//! Result rows, CSV emission and the run manifest.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::sync::Algorithm;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CfoNmse,
    ChannelNmse,
    PnNmse,
    HcrlbCfo,
    HcrlbChannel,
    HcrlbPn,
    /// NMSE of the recovered MIMO channel `𝗛̂[k]`.
    MimoChannelNmse,
    SpectralEfficiency,
    ToHitRate,
}

impl Metric {
    /// Bound row paired with an achieved-NMSE row.
    pub fn bound_of(self) -> Option<Metric> {
        match self {
            Metric::CfoNmse => Some(Metric::HcrlbCfo),
            Metric::ChannelNmse => Some(Metric::HcrlbChannel),
            Metric::PnNmse => Some(Metric::HcrlbPn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoLabel {
    Lmmse,
    EkfRts,
    /// Rows that do not depend on the estimator.
    None,
}

impl From<Algorithm> for AlgoLabel {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::LmmseEm => AlgoLabel::Lmmse,
            Algorithm::EkfRtsEm => AlgoLabel::EkfRts,
        }
    }
}

/// One aggregated value. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: Option<f64>,
    pub ntr: usize,
    pub lr: usize,
    pub frames: usize,
    pub pn_psd_dbc: Option<f64>,
    pub algorithm: AlgoLabel,
    pub metric: Metric,
    pub value: f64,
    pub trials: usize,
    pub stderr: Option<f64>,
}

pub const CSV_HEADER: [&str; 10] =
    ["snr_db", "ntr", "lr", "frames", "pn_psd_dbc", "algorithm", "metric", "value", "trials", "stderr"];

/// Streams rows to a CSV file, flushing after every batch.
pub struct CsvSink {
    writer: csv::Writer<File>,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        writer.write_record(CSV_HEADER)?;
        writer.flush()?;
        Ok(Self { writer })
    }

    pub fn write(&mut self, rows: &[ResultRow]) -> Result<()> {
        for r in rows {
            self.writer.serialize(r)?;
        }
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sink = CsvSink::create(path)?;
    sink.write(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::Serde(format!("unexpected CSV header {header:?}")));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// A trial that failed and was left out of the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub point: usize,
    pub trial: usize,
    pub message: String,
}

/// A bound row exceeding its achieved-NMSE row by more than the slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundFlag {
    pub point: usize,
    pub frames: usize,
    pub algorithm: AlgoLabel,
    pub metric: Metric,
    pub achieved_db: f64,
    pub bound_db: f64,
}

/// Seeds of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSeeds {
    pub point: usize,
    pub trial_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    /// `derive_seed(seed, [trial])` for common seeding, `[point, trial]` otherwise;
    /// frame `m` then derives `[m, stream]` from the trial seed.
    pub seed_derivation: String,
    pub package: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub points: usize,
    pub rows: usize,
    pub seeds: Vec<PointSeeds>,
    pub failures: Vec<TrialFailure>,
    pub bound_flags: Vec<BoundFlag>,
    /// Rows left out because their value was not finite.
    pub omitted_rows: Vec<String>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    crate::fixture::write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    crate::fixture::read_json(path)
}

/// Writes `results.csv` and `manifest.json` into `dir`; returns their paths.
pub fn emit_results(dir: &Path, rows: &[ResultRow], manifest: &Manifest) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(RESULTS_FILE);
    let man = dir.join(MANIFEST_FILE);
    write_csv(&csv, rows)?;
    write_manifest(&man, manifest)?;
    let mut f = std::fs::OpenOptions::new().append(true).open(&man)?;
    writeln!(f)?;
    Ok((csv, man))
}
