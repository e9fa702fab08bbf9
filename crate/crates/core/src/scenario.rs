//! One simulated link: a channel, its training frames and their received captures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{synthesize_channel, ChannelConfig, ChannelRealization};
use crate::error::{Error, Result};
use crate::impairments::{
    equivalent_channels, noise_var_for_snr, propagate, sample_wiener, EquivalentChannel,
    ImpairmentTruth, PnModel, ReceivedCapture,
};
use crate::rng::{derive_seed, rng_from, STREAM_CHANNEL, STREAM_NOISE, STREAM_OFFSETS, STREAM_PN};
use crate::training::{build_frame, BeamDims, PilotConfig, TrainingFrame};

/// Everything needed to simulate the frames of one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub channel: ChannelConfig,
    pub beams: BeamDims,
    pub pilots: PilotConfig,
    /// Fraction of antennas active per frame.
    pub subset_fraction: f64,
    /// Phase-noise level `G_θ` in dBc/Hz; `None` disables phase noise.
    pub pn_psd_dbc: Option<f64>,
    /// Offset frequency at which `G_θ` is specified, Hz.
    pub pn_offset_hz: f64,
    /// Per-chain SNR in dB; `None` gives noiseless captures.
    pub snr_db: Option<f64>,
    /// Timing offsets are uniform on `0..=max_to`.
    pub max_to: usize,
    /// CFOs are uniform on `(-max_cfo, max_cfo)`, cycles/sample.
    pub max_cfo: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            beams: BeamDims { nt: 16, nr: 8, lt: 4, lr: 4, nq: 6 },
            pilots: PilotConfig::default(),
            subset_fraction: 0.5,
            pn_psd_dbc: Some(-95.0),
            pn_offset_hz: 1e6,
            snr_db: Some(0.0),
            max_to: 32,
            max_cfo: 0.005,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.beams.validate()?;
        self.pilots.validate()?;
        if self.channel.num_tx != self.beams.nt || self.channel.num_rx != self.beams.nr {
            return Err(Error::Config("channel and beam antenna counts differ".into()));
        }
        if self.channel.subcarriers != self.pilots.subcarriers {
            return Err(Error::Config("channel and pilot subcarrier counts differ".into()));
        }
        if self.channel.taps > self.pilots.cp_len + 1 {
            return Err(Error::Config("need L_c ≥ D − 1".into()));
        }
        if !(self.max_cfo >= 0.0 && self.max_cfo < 0.5) {
            return Err(Error::Config("max_cfo must lie in [0, 0.5)".into()));
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Config("SNR must be finite".into()));
        }
        Ok(())
    }

    pub fn pn_model(&self) -> Result<PnModel> {
        match self.pn_psd_dbc {
            Some(level) => {
                PnModel::new(level, self.pn_offset_hz, 1.0 / self.channel.sampling_interval)
            }
            None => Ok(PnModel::none()),
        }
    }
}

/// A simulated frame together with its ground truth.
#[derive(Debug, Clone)]
pub struct SimFrame {
    pub frame: TrainingFrame,
    pub equivalent: EquivalentChannel,
    pub capture: ReceivedCapture,
}

impl SimFrame {
    pub fn truth(&self) -> &ImpairmentTruth {
        &self.capture.truth
    }
}

/// Channel of a link, seeded from `seed`.
pub fn draw_link_channel(cfg: &LinkConfig, seed: u64) -> Result<ChannelRealization> {
    synthesize_channel(derive_seed(seed, &[STREAM_CHANNEL]), &cfg.channel)
}

/// Frame `m` of a link seeded from `seed`. Beams, phase noise, noise and
/// offsets each use their own stream derived from `(seed, m)`.
pub fn draw_frame(
    cfg: &LinkConfig,
    channel: &ChannelRealization,
    seed: u64,
    m: usize,
) -> Result<SimFrame> {
    let frame = build_frame(seed, m, &cfg.beams, cfg.subset_fraction, &cfg.pilots)?;
    let equivalent = equivalent_channels(channel, &frame);
    let mut off = rng_from(derive_seed(seed, &[m as u64, STREAM_OFFSETS]));
    let n0 = off.random_range(0..=cfg.max_to);
    let cfo = if cfg.max_cfo > 0.0 { off.random_range(-cfg.max_cfo..cfg.max_cfo) } else { 0.0 };
    let noise_var = match cfg.snr_db {
        Some(snr) => noise_var_for_snr(&frame.pilots, &equivalent.freq, snr),
        None => 0.0,
    };
    let pn = cfg.pn_model()?;
    let len = n0 + frame.frame_len() + channel.num_taps();
    let mut pn_rng = rng_from(derive_seed(seed, &[m as u64, STREAM_PN]));
    let pn_path = sample_wiener(pn.increment_variance, len, &mut pn_rng);
    let truth = ImpairmentTruth { n0, cfo, pn_path, noise_var };
    let capture = propagate(channel, &frame, &truth, derive_seed(seed, &[m as u64, STREAM_NOISE]))?;
    Ok(SimFrame { frame, equivalent, capture })
}
