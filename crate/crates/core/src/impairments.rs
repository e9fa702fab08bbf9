//! Phase noise, timing and frequency offsets, and frame propagation.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::fixture::SerCMat;
use crate::linalg::{expj, CMat, RMat, C64};
use crate::rng::{complex_normal, normal, rng_from, SimRng};
use crate::training::{Pilots, TrainingFrame};

/// Wiener phase-noise model calibrated at one offset frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnModel {
    /// SSB level `G_θ` in dBc/Hz; `-inf` disables phase noise.
    pub psd_level: f64,
    pub offset_frequency: f64,
    pub sampling_rate: f64,
    /// Per-sample increment variance `σ_w²` in rad².
    pub increment_variance: f64,
}

impl PnModel {
    /// `σ_w² = T_s (2π f_off)² 10^{G_θ/10}`.
    pub fn new(psd_level: f64, offset_frequency: f64, sampling_rate: f64) -> Result<Self> {
        if !(offset_frequency > 0.0) || !(sampling_rate > 0.0) {
            return Err(Error::Config("offset frequency and sampling rate must be positive".into()));
        }
        let var = (2.0 * PI * offset_frequency).powi(2) * 10f64.powf(psd_level / 10.0) / sampling_rate;
        Ok(Self { psd_level, offset_frequency, sampling_rate, increment_variance: var })
    }

    /// Phase-noise-free model.
    pub fn none() -> Self {
        Self { psd_level: f64::NEG_INFINITY, offset_frequency: 1e6, sampling_rate: 1.0, increment_variance: 0.0 }
    }

    pub fn from_increment_variance(var: f64) -> Self {
        Self { psd_level: f64::NAN, offset_frequency: f64::NAN, sampling_rate: f64::NAN, increment_variance: var }
    }
}

/// Wiener path `θ[n] = θ[n-1] + w[n]` with `θ[0] ~ N(0, σ_w²)`.
pub fn sample_wiener(var: f64, length: usize, rng: &mut SimRng) -> Vec<f64> {
    let s = var.max(0.0).sqrt();
    let mut out = Vec::with_capacity(length);
    let mut th = 0.0;
    for _ in 0..length {
        th += normal(rng, s);
        out.push(th);
    }
    out
}

/// Prior covariance of the Wiener samples at absolute `indices`:
/// `C[i, j] = σ_w² (1 + min(p_i, p_j))`.
pub fn wiener_covariance(var: f64, indices: &[usize]) -> RMat {
    let n = indices.len();
    RMat::from_fn(n, n, |i, j| var * (1.0 + indices[i].min(indices[j]) as f64))
}

/// A sampled path and its analytic covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PnSample {
    pub path: Vec<f64>,
    pub covariance: RMat,
}

pub fn sample_pn_path(model: &PnModel, length: usize, seed: u64) -> Result<PnSample> {
    if length == 0 {
        return Err(Error::Config("phase-noise path needs length ≥ 1".into()));
    }
    let mut rng = rng_from(seed);
    let path = sample_wiener(model.increment_variance, length, &mut rng);
    let idx: Vec<usize> = (0..length).collect();
    Ok(PnSample { path, covariance: wiener_covariance(model.increment_variance, &idx) })
}

/// Ground-truth impairments of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpairmentTruth {
    pub n0: usize,
    /// Normalized CFO, cycles/sample.
    pub cfo: f64,
    pub pn_path: Vec<f64>,
    /// Noise variance per receive antenna.
    pub noise_var: f64,
}

impl ImpairmentTruth {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfo.abs() < 0.5) {
            return Err(Error::Config("|Δf| must be below 0.5".into()));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::Config("noise variance must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Sample indices of the useful OFDM samples of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolLayout {
    pub subcarriers: usize,
    pub symbols: usize,
    pub cp_len: usize,
    /// Absolute index of the first useful sample, `k0[0]`.
    pub first: usize,
}

impl SymbolLayout {
    /// Layout for a frame received with timing offset `n0`.
    pub fn for_frame(frame: &TrainingFrame, n0: usize) -> Self {
        Self {
            subcarriers: frame.subcarriers(),
            symbols: frame.num_symbols(),
            cp_len: frame.cp_len,
            first: n0 + frame.first_symbol_offset(),
        }
    }

    /// `k0[t]`.
    pub fn k0(&self, t: usize) -> usize {
        self.first + t * (self.subcarriers + self.cp_len)
    }

    /// Absolute index of useful sample `(t, n)`.
    pub fn index(&self, t: usize, n: usize) -> usize {
        self.k0(t) + n
    }

    pub fn len(&self) -> usize {
        self.subcarriers * self.symbols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All useful absolute indices in symbol-major order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.symbols)
            .flat_map(|t| (0..self.subcarriers).map(move |n| self.index(t, n)))
            .collect()
    }
}

/// Whitened per-chain received streams of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedCapture {
    /// `N × L_r`, column `i` is `r_i[n]`.
    pub streams: CMat,
    pub truth: ImpairmentTruth,
    pub frame_index: usize,
    pub subcarriers: usize,
    pub symbols: usize,
    pub cp_len: usize,
    pub preamble_len: usize,
}

impl ReceivedCapture {
    pub fn lr(&self) -> usize {
        self.streams.ncols()
    }

    pub fn layout(&self, n0: usize) -> SymbolLayout {
        SymbolLayout {
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            cp_len: self.cp_len,
            first: n0 + self.preamble_len + self.cp_len,
        }
    }

    /// CP-stripped symbols `r_{i,t}` stacked over `t`, `K N_tr × L_r`.
    pub fn symbols_at(&self, n0: usize) -> Result<CMat> {
        let lay = self.layout(n0);
        let last = lay.index(lay.symbols - 1, lay.subcarriers - 1);
        if last >= self.streams.nrows() {
            return Err(Error::Dimension("timing places symbols beyond the capture".into()));
        }
        let idx = lay.indices();
        Ok(CMat::from_fn(idx.len(), self.lr(), |r, c| self.streams[(idx[r], c)]))
    }

    pub fn to_data(&self) -> CaptureData {
        CaptureData {
            streams: (&self.streams).into(),
            truth: self.truth.clone(),
            frame_index: self.frame_index,
            subcarriers: self.subcarriers,
            symbols: self.symbols,
            cp_len: self.cp_len,
            preamble_len: self.preamble_len,
        }
    }

    pub fn from_data(d: &CaptureData) -> Result<Self> {
        Ok(Self {
            streams: d.streams.to_matrix()?,
            truth: d.truth.clone(),
            frame_index: d.frame_index,
            subcarriers: d.subcarriers,
            symbols: d.symbols,
            cp_len: d.cp_len,
            preamble_len: d.preamble_len,
        })
    }
}

/// Serializable capture with its truth attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureData {
    pub streams: SerCMat,
    pub truth: ImpairmentTruth,
    pub frame_index: usize,
    pub subcarriers: usize,
    pub symbols: usize,
    pub cp_len: usize,
    pub preamble_len: usize,
}

/// Equivalent beamformed channels of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel {
    /// `D × L_r`, row `d` is `g[d] = D_w^{-*} W_tr* H[d] F_tr q`.
    pub taps: CMat,
    /// `K × L_r`, column `i` is `𝗀_i`.
    pub freq: CMat,
}

pub fn equivalent_channels(channel: &ChannelRealization, frame: &TrainingFrame) -> EquivalentChannel {
    let b = frame.beams.whitened_combiner();
    let f = frame.beams.tx_vector();
    let lr = b.nrows();
    let d = channel.num_taps();
    let mut taps = CMat::zeros(d, lr);
    for (dd, h) in channel.taps.iter().enumerate() {
        let g = &b * (h * &f);
        taps.row_mut(dd).copy_from(&g.transpose());
    }
    let k = frame.subcarriers();
    let freq = CMat::from_fn(k, lr, |kk, i| {
        (0..d)
            .map(|dd| taps[(dd, i)] * expj(-2.0 * PI * ((kk * dd) % k) as f64 / k as f64))
            .sum()
    });
    EquivalentChannel { taps, freq }
}

/// Energy of the CP-stripped noiseless signal, `Σ_i ‖F* S 𝗀_i‖²`.
pub fn signal_energy(pilots: &Pilots, g: &CMat) -> f64 {
    let gd = pilots.gram_diag();
    (0..g.ncols())
        .map(|i| (0..g.nrows()).map(|k| gd[k] * g[(k, i)].norm_sqr()).sum::<f64>())
        .sum()
}

/// Noise variance giving `SNR = E‖signal‖² / (L_r K N_tr σ²)`.
pub fn noise_var_for_snr(pilots: &Pilots, g: &CMat, snr_db: f64) -> f64 {
    let dim = (g.ncols() * pilots.subcarriers() * pilots.num_symbols()) as f64;
    signal_energy(pilots, g) / (dim * 10f64.powf(snr_db / 10.0))
}

/// Propagate one frame through channel, TO, CFO, PN and receiver noise,
/// combine with `W_tr` and whiten with `D_w^{-*}`.
pub fn propagate(
    channel: &ChannelRealization,
    frame: &TrainingFrame,
    truth: &ImpairmentTruth,
    seed: u64,
) -> Result<ReceivedCapture> {
    truth.validate()?;
    let d = channel.num_taps();
    if d > frame.cp_len + 1 {
        return Err(Error::Model(format!(
            "CP of {} samples shorter than channel memory {}",
            frame.cp_len,
            d - 1
        )));
    }
    let x = frame.transmit_stream();
    let n_total = truth.n0 + x.len() + d;
    if truth.pn_path.len() < n_total {
        return Err(Error::Dimension(format!(
            "phase-noise path has {} samples, capture needs {n_total}",
            truth.pn_path.len()
        )));
    }
    let b = frame.beams.whitened_combiner();
    let eq = equivalent_channels(channel, frame);
    let lr = b.nrows();
    let nr = b.ncols();
    let mut rng = rng_from(seed);
    let mut streams = CMat::zeros(n_total, lr);
    let mut v = crate::linalg::CVec::zeros(nr);
    for n in 0..n_total {
        let rot = expj(2.0 * PI * truth.cfo * n as f64 + truth.pn_path[n]);
        for i in 0..lr {
            let mut acc = C64::new(0.0, 0.0);
            for dd in 0..d {
                if n >= truth.n0 + dd {
                    let m = n - truth.n0 - dd;
                    if m < x.len() {
                        acc += eq.taps[(dd, i)] * x[m];
                    }
                }
            }
            streams[(n, i)] = acc * rot;
        }
        if truth.noise_var > 0.0 {
            for a in 0..nr {
                v[a] = complex_normal(&mut rng, truth.noise_var);
            }
            let wv = &b * &v;
            for i in 0..lr {
                streams[(n, i)] += wv[i];
            }
        }
    }
    Ok(ReceivedCapture {
        streams,
        truth: truth.clone(),
        frame_index: frame.frame_index,
        subcarriers: frame.subcarriers(),
        symbols: frame.num_symbols(),
        cp_len: frame.cp_len,
        preamble_len: frame.preamble.len(),
    })
}
