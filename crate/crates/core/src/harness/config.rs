//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crlb::BoundForm;
use crate::error::{Error, Result};
use crate::scenario::LinkConfig;
use crate::sync::{Algorithm, EmConfig};

/// Which EM estimators a sweep runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoSelection {
    #[default]
    Lmmse,
    EkfRts,
    Both,
}

impl AlgoSelection {
    pub fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgoSelection::Lmmse => vec![Algorithm::LmmseEm],
            AlgoSelection::EkfRts => vec![Algorithm::EkfRtsEm],
            AlgoSelection::Both => vec![Algorithm::LmmseEm, Algorithm::EkfRtsEm],
        }
    }
}

impl std::str::FromStr for AlgoSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lmmse" => Ok(Self::Lmmse),
            "ekf-rts" => Ok(Self::EkfRts),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown algorithm selection `{other}`"))),
        }
    }
}

/// Timing offset handed to the EM loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// True `n0`.
    #[default]
    Genie,
    /// Golay-preamble estimate over `0..=max_to`.
    Estimated,
}

/// Seed shared by the trials of different sweep points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Seeding {
    /// Trial `t` uses the same draws at every sweep point.
    #[default]
    Common,
    /// Every `(point, trial)` pair gets its own draws.
    PerPoint,
}

/// Parameters at which the HCRLB used for whitening is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceSource {
    /// True `n0`, channels and noise variance.
    #[default]
    Truth,
    /// Estimated `n0` and channels.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WhiteningMode {
    #[default]
    Averaged,
    PerSubcarrier,
}

/// Sweep axes; an empty axis keeps the value from `link` (or `frames`).
///
/// SNR and phase-noise entries are numbers in dB or the string `"off"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(with = "level_list")]
    pub snr_db: Vec<Option<f64>>,
    pub ntr: Vec<usize>,
    pub lr: Vec<usize>,
    pub frames: Vec<usize>,
    #[serde(with = "level_list")]
    pub pn_psd_dbc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub enabled: bool,
    pub form: BoundForm,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { enabled: true, form: BoundForm::Literal }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub enabled: bool,
    /// Dictionary sizes; `None` gives twice the array size.
    pub tx_grid: Option<usize>,
    pub rx_grid: Option<usize>,
    /// `N_s` for the spectral efficiency.
    pub streams: usize,
    /// `None` gives twice the number of planted rays.
    pub max_atoms: Option<usize>,
    pub subcarrier_stride: Option<usize>,
    pub gain_threshold: Option<f64>,
    pub whitening: WhiteningMode,
    pub covariance: CovarianceSource,
    /// SNR defining the noise level of the spectral efficiency; `None`
    /// uses the sweep SNR.
    pub se_snr_db: Option<f64>,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            tx_grid: None,
            rx_grid: None,
            streams: 2,
            max_atoms: None,
            subcarrier_stride: None,
            gain_threshold: None,
            whitening: WhiteningMode::Averaged,
            covariance: CovarianceSource::Truth,
            se_snr_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("results") }
    }
}

/// A full sweep: base link, estimator settings, axes and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub trials: usize,
    pub seed: u64,
    pub algorithms: AlgoSelection,
    /// Frames per trial when the `frames` axis is empty.
    pub frames: usize,
    pub timing: TimingMode,
    pub seeding: Seeding,
    pub link: LinkConfig,
    pub em: EmConfig,
    pub sweep: SweepAxes,
    pub bounds: BoundConfig,
    pub recovery: RecoveryConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults: `N_t = 16`, `N_r = 8`, `L_t = L_r = 4`, `K = 64`, 20 trials.
    pub fn desk() -> Self {
        let link = LinkConfig::default();
        let em = EmConfig { init_taps: Some(link.pilots.cp_len), ..EmConfig::default() };
        Self {
            name: "desk".into(),
            trials: 20,
            seed: 1,
            algorithms: AlgoSelection::Lmmse,
            frames: 1,
            timing: TimingMode::Genie,
            seeding: Seeding::Common,
            link,
            em,
            sweep: SweepAxes::default(),
            bounds: BoundConfig::default(),
            recovery: RecoveryConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Full-size link: `N_t = 64`, `N_r = 32`, `L_t = 8`, `L_r = 4`,
    /// `K = 256`, `N_Q = 6`, `G_t = G_r = 128`, 100 trials.
    pub fn paper() -> Self {
        let mut cfg = Self::desk();
        cfg.name = "paper".into();
        cfg.trials = 100;
        cfg.link.beams.nt = 64;
        cfg.link.beams.nr = 32;
        cfg.link.beams.lt = 8;
        cfg.link.beams.lr = 4;
        cfg.link.beams.nq = 6;
        cfg.link.channel.num_tx = 64;
        cfg.link.channel.num_rx = 32;
        cfg.link.channel.subcarriers = 256;
        cfg.link.channel.taps = 32;
        cfg.link.pilots.subcarriers = 256;
        cfg.link.pilots.cp_len = 32;
        cfg.em.init_taps = Some(32);
        cfg.recovery.tx_grid = Some(128);
        cfg.recovery.rx_grid = Some(128);
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn algorithm_list(&self) -> Vec<Algorithm> {
        self.algorithms.algorithms()
    }

    /// Frame counts swept, ascending.
    pub fn frame_counts(&self) -> Vec<usize> {
        let mut f = if self.sweep.frames.is_empty() { vec![self.frames] } else { self.sweep.frames.clone() };
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Sweep points over every axis except the frame count, in
    /// `(pn, lr, ntr, snr)` nesting order with SNR varying fastest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let or_base = |v: &Vec<Option<f64>>, base: Option<f64>| if v.is_empty() { vec![base] } else { v.clone() };
        let snrs = or_base(&self.sweep.snr_db, self.link.snr_db);
        let pns = or_base(&self.sweep.pn_psd_dbc, self.link.pn_psd_dbc);
        let ntrs = if self.sweep.ntr.is_empty() { vec![self.link.pilots.symbols] } else { self.sweep.ntr.clone() };
        let lrs = if self.sweep.lr.is_empty() { vec![self.link.beams.lr] } else { self.sweep.lr.clone() };
        let mut out = Vec::new();
        for &pn in &pns {
            for &lr in &lrs {
                for &ntr in &ntrs {
                    for &snr in &snrs {
                        out.push(SweepPoint { index: out.len(), snr_db: snr, ntr, lr, pn_psd_dbc: pn });
                    }
                }
            }
        }
        out
    }

    /// Link of one sweep point.
    pub fn link_at(&self, p: &SweepPoint) -> LinkConfig {
        let mut link = self.link.clone();
        link.snr_db = p.snr_db;
        link.pn_psd_dbc = p.pn_psd_dbc;
        link.pilots.symbols = p.ntr;
        link.beams.lr = p.lr;
        link
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.frame_counts().contains(&0) {
            return Err(Error::Config("frame counts must be at least 1".into()));
        }
        if self.sweep.ntr.contains(&0) || self.sweep.lr.contains(&0) {
            return Err(Error::Config("N_tr and L_r must be at least 1".into()));
        }
        if self.sweep.snr_db.iter().chain(&self.sweep.pn_psd_dbc).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep levels must be finite".into()));
        }
        if self.recovery.streams == 0 || self.recovery.max_atoms == Some(0) {
            return Err(Error::Config("recovery streams and max_atoms must be at least 1".into()));
        }
        if self.recovery.streams > self.link.beams.nt.min(self.link.beams.nr) {
            return Err(Error::Config("N_s exceeds min(N_t, N_r)".into()));
        }
        self.em.validate()?;
        for p in self.points() {
            self.link_at(&p).validate()?;
        }
        Ok(())
    }
}

/// One combination of the sweep axes other than the frame count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub snr_db: Option<f64>,
    pub ntr: usize,
    pub lr: usize,
    pub pn_psd_dbc: Option<f64>,
}

/// Lists of levels in dB where `"off"` stands for `None`.
mod level_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Level {
        Db(f64),
        Off(Off),
    }

    #[derive(Serialize, Deserialize)]
    enum Off {
        #[serde(rename = "off")]
        Off,
    }

    pub fn serialize<S: Serializer>(v: &[Option<f64>], s: S) -> Result<S::Ok, S::Error> {
        let levels: Vec<Level> = v.iter().map(|x| x.map_or(Level::Off(Off::Off), Level::Db)).collect();
        levels.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<f64>>, D::Error> {
        let levels = Vec::<Level>::deserialize(d)?;
        Ok(levels
            .into_iter()
            .map(|l| match l {
                Level::Db(x) => Some(x),
                Level::Off(_) => None,
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip() {
        let mut cfg = ExperimentConfig::desk();
        cfg.sweep.snr_db = vec![Some(-5.0), None, Some(10.0)];
        cfg.sweep.ntr = vec![1, 2, 4];
        let s = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn off_levels_parse() {
        let cfg = ExperimentConfig::from_toml_str("[sweep]\nsnr_db = [\"off\", 0.0]\n").unwrap();
        assert_eq!(cfg.sweep.snr_db, vec![None, Some(0.0)]);
    }

    #[test]
    fn points_nest_snr_fastest() {
        let mut cfg = ExperimentConfig::desk();
        cfg.sweep.snr_db = vec![Some(0.0), Some(10.0)];
        cfg.sweep.ntr = vec![2, 4];
        let p = cfg.points();
        assert_eq!(p.len(), 4);
        assert_eq!((p[1].snr_db, p[1].ntr), (Some(10.0), 2));
        assert_eq!((p[2].snr_db, p[2].ntr), (Some(0.0), 4));
        assert_eq!(p[3].index, 3);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ExperimentConfig::desk();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::desk();
        cfg.sweep.lr = vec![0];
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
    }

    #[test]
    fn paper_defaults_are_consistent() {
        ExperimentConfig::paper().validate().unwrap();
    }
}
