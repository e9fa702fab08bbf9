//! Training frames: Zadoff-Chu pilots, the Golay preamble and quantized hybrid beams.

use rand::Rng;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fixture::SerCMat;
use crate::linalg::{expj, idft_unitary, upper_cholesky, CMat, CVec, C64};
use crate::rng::{derive_seed, rng_from, STREAM_BEAMS};

/// Length of the Golay preamble.
pub const PREAMBLE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PilotConfig {
    /// `K`.
    pub subcarriers: usize,
    /// `N_tr`.
    pub symbols: usize,
    /// `L_c`.
    pub cp_len: usize,
    pub zc_root: usize,
    pub pilot_power: f64,
    /// Cyclic shift (in subcarriers) applied per transmitted OFDM symbol.
    pub symbol_shift: usize,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self { subcarriers: 64, symbols: 4, cp_len: 16, zc_root: 1, pilot_power: 1.0, symbol_shift: 0 }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers < 2 {
            return Err(Error::Config("need K ≥ 2".into()));
        }
        if self.symbols == 0 {
            return Err(Error::Config("need N_tr ≥ 1".into()));
        }
        if self.zc_root == 0 || gcd(self.zc_root, self.subcarriers) != 1 {
            return Err(Error::Config("ZC root must be coprime with K".into()));
        }
        if !(self.pilot_power > 0.0) {
            return Err(Error::Config("pilot power must be positive".into()));
        }
        Ok(())
    }
}

/// Zadoff-Chu sequence of length `n` with root `u`.
pub fn zadoff_chu(u: usize, n: usize) -> CVec {
    CVec::from_fn(n, |k, _| {
        let (u, k, nn) = (u as f64, k as f64, n as f64);
        let arg = if n % 2 == 0 { PI * u * k * k / nn } else { PI * u * k * (k + 1.0) / nn };
        expj(-arg)
    })
}

/// Diagonal pilot matrices `S_t` stored as their diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct Pilots {
    pub symbols: Vec<CVec>,
}

impl Pilots {
    pub fn subcarriers(&self) -> usize {
        self.symbols[0].len()
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Dense `S_t`.
    pub fn matrix(&self, t: usize) -> CMat {
        CMat::from_diagonal(&self.symbols[t])
    }

    /// Vertical stack `S` of shape `K N_tr × K`.
    pub fn stacked(&self) -> CMat {
        let k = self.subcarriers();
        let mut s = CMat::zeros(k * self.num_symbols(), k);
        for (t, st) in self.symbols.iter().enumerate() {
            for i in 0..k {
                s[(t * k + i, i)] = st[i];
            }
        }
        s
    }

    /// Diagonal of `S*S`: `Σ_t |s_t[k]|²`.
    pub fn gram_diag(&self) -> Vec<f64> {
        let k = self.subcarriers();
        (0..k).map(|i| self.symbols.iter().map(|s| s[i].norm_sqr()).sum()).collect()
    }
}

/// ZC pilots for frame `m`; symbol `t` uses the base sequence cyclically
/// shifted by `(m N_tr + t) · symbol_shift`.
pub fn build_zc_pilots(cfg: &PilotConfig, frame_index: usize) -> Result<Pilots> {
    cfg.validate()?;
    let k = cfg.subcarriers;
    let base = zadoff_chu(cfg.zc_root, k) * C64::new(cfg.pilot_power.sqrt(), 0.0);
    let symbols = (0..cfg.symbols)
        .map(|t| {
            let shift = ((frame_index * cfg.symbols + t) * cfg.symbol_shift) % k;
            CVec::from_fn(k, |i, _| base[(i + shift) % k])
        })
        .collect();
    Ok(Pilots { symbols })
}

/// Recursive complementary-pair construction of length `2^len(delays)`:
/// `A_k(n) = w_k A_{k-1}(n) + B_{k-1}(n - D_k)`,
/// `B_k(n) = w_k A_{k-1}(n) - B_{k-1}(n - D_k)`.
fn golay_recursion(delays: &[usize], weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = 1usize << delays.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    a[0] = 1.0;
    b[0] = 1.0;
    for (&d, &w) in delays.iter().zip(weights) {
        let mut na = vec![0.0; n];
        let mut nb = vec![0.0; n];
        for i in 0..n {
            let shifted = if i >= d { b[i - d] } else { 0.0 };
            na[i] = w * a[i] + shifted;
            nb[i] = w * a[i] - shifted;
        }
        a = na;
        b = nb;
    }
    (a, b)
}

/// `(Ga64, Gb64)` from the IEEE 802.11ad delay/weight vectors.
pub fn golay_pair() -> (Vec<f64>, Vec<f64>) {
    golay_recursion(&[2, 1, 4, 8, 16, 32], &[1.0, 1.0, -1.0, -1.0, 1.0, -1.0])
}

/// The 64-point `Ga64` preamble.
pub fn build_golay_preamble() -> Vec<f64> {
    golay_pair().0
}

/// Aperiodic autocorrelation at nonnegative lags.
pub fn aperiodic_autocorrelation(x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|lag| (0..x.len() - lag).map(|n| x[n] * x[n + lag]).sum())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamDims {
    pub nt: usize,
    pub nr: usize,
    pub lt: usize,
    pub lr: usize,
    /// Phase-shifter resolution in bits.
    pub nq: u32,
}

impl BeamDims {
    pub fn validate(&self) -> Result<()> {
        if self.lt == 0 || self.lr == 0 || self.lt > self.nt || self.lr > self.nr {
            return Err(Error::Config("need 1 ≤ L_t ≤ N_t and 1 ≤ L_r ≤ N_r".into()));
        }
        if self.nq == 0 || self.nq > 16 {
            return Err(Error::Config("N_Q must lie in 1..=16".into()));
        }
        Ok(())
    }
}

/// Hybrid training precoder/combiner of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBeams {
    /// `F_tr`, `N_t × L_t`.
    pub f_tr: CMat,
    /// `q`, `L_t`.
    pub q: CVec,
    /// `W_tr`, `N_r × L_r`.
    pub w_tr: CMat,
    /// Upper-triangular `D_w` with `D_w* D_w = W_tr* W_tr`.
    pub d_w: CMat,
    pub tx_active: Vec<usize>,
    pub rx_active: Vec<usize>,
}

impl TrainingBeams {
    /// Effective transmit vector `F_tr q`.
    pub fn tx_vector(&self) -> CVec {
        &self.f_tr * &self.q
    }

    /// `D_w^{-*} W_tr*`, the whitened combiner, `L_r × N_r`.
    pub fn whitened_combiner(&self) -> CMat {
        let wh = self.w_tr.adjoint();
        self.d_w
            .adjoint()
            .solve_lower_triangular(&wh)
            .expect("D_w has a nonzero diagonal")
    }
}

fn quantized_phase<R: Rng + ?Sized>(rng: &mut R, nq: u32) -> f64 {
    let levels = 1u64 << nq;
    2.0 * PI * rng.random_range(0..levels) as f64 / levels as f64
}

fn subset_size(n: usize, l: usize, frac: f64) -> usize {
    ((frac * n as f64).round() as usize).clamp(l.max(1), n)
}

/// Pseudorandom quantized-phase beams on random antenna subsets; deterministic per `(seed, m)`.
pub fn draw_training_beams(
    seed: u64,
    m: usize,
    dims: &BeamDims,
    subset_fraction: f64,
) -> Result<TrainingBeams> {
    dims.validate()?;
    if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
        return Err(Error::Config("subset fraction must lie in (0, 1]".into()));
    }
    let mut rng = rng_from(derive_seed(seed, &[m as u64, STREAM_BEAMS]));
    let at = subset_size(dims.nt, dims.lt, subset_fraction);
    let ar = subset_size(dims.nr, dims.lr, subset_fraction);
    for _ in 0..16 {
        let mut tx_active = sample(&mut rng, dims.nt, at).into_vec();
        tx_active.sort_unstable();
        let mut rx_active = sample(&mut rng, dims.nr, ar).into_vec();
        rx_active.sort_unstable();
        let mut f_tr = CMat::zeros(dims.nt, dims.lt);
        for l in 0..dims.lt {
            for &n in &tx_active {
                f_tr[(n, l)] = expj(quantized_phase(&mut rng, dims.nq)) / (at as f64).sqrt();
            }
        }
        let q = CVec::from_fn(dims.lt, |_, _| {
            expj(quantized_phase(&mut rng, dims.nq)) / (dims.lt as f64).sqrt()
        });
        let mut w_tr = CMat::zeros(dims.nr, dims.lr);
        for l in 0..dims.lr {
            for &n in &rx_active {
                w_tr[(n, l)] = expj(quantized_phase(&mut rng, dims.nq)) / (ar as f64).sqrt();
            }
        }
        let gram = w_tr.adjoint() * &w_tr;
        let Ok(d_w) = upper_cholesky(&gram) else { continue };
        let diag: Vec<f64> = (0..dims.lr).map(|i| d_w[(i, i)].re).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        if diag.iter().any(|&d| d < 1e-6 * dmax) || (&f_tr * &q).norm() < 1e-9 {
            continue;
        }
        return Ok(TrainingBeams { f_tr, q, w_tr, d_w, tx_active, rx_active });
    }
    Err(Error::Numerical("could not draw a full-rank training combiner".into()))
}

/// One training frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub frame_index: usize,
    pub seed: u64,
    pub beams: TrainingBeams,
    pub pilots: Pilots,
    pub preamble: Vec<f64>,
    pub cp_len: usize,
}

pub fn build_frame(
    seed: u64,
    m: usize,
    dims: &BeamDims,
    subset_fraction: f64,
    pilot_cfg: &PilotConfig,
) -> Result<TrainingFrame> {
    Ok(TrainingFrame {
        frame_index: m,
        seed,
        beams: draw_training_beams(seed, m, dims, subset_fraction)?,
        pilots: build_zc_pilots(pilot_cfg, m)?,
        preamble: build_golay_preamble(),
        cp_len: pilot_cfg.cp_len,
    })
}

impl TrainingFrame {
    pub fn subcarriers(&self) -> usize {
        self.pilots.subcarriers()
    }

    pub fn num_symbols(&self) -> usize {
        self.pilots.num_symbols()
    }

    pub fn lr(&self) -> usize {
        self.beams.w_tr.ncols()
    }

    /// Samples from frame start to the end of the last OFDM symbol.
    pub fn frame_len(&self) -> usize {
        self.preamble.len() + self.num_symbols() * (self.subcarriers() + self.cp_len)
    }

    /// Offset of the first useful OFDM sample from frame start.
    pub fn first_symbol_offset(&self) -> usize {
        self.preamble.len() + self.cp_len
    }

    /// Scalar transmit stream: preamble followed by CP-prefixed OFDM symbols `F* s_t`.
    pub fn transmit_stream(&self) -> Vec<C64> {
        let k = self.subcarriers();
        let fi = idft_unitary(k);
        let mut out: Vec<C64> = self.preamble.iter().map(|&v| C64::new(v, 0.0)).collect();
        for st in &self.pilots.symbols {
            let u = &fi * st;
            out.extend(u.iter().skip(k - self.cp_len));
            out.extend(u.iter());
        }
        out
    }

    pub fn to_data(&self) -> FrameData {
        FrameData {
            frame_index: self.frame_index,
            seed: self.seed,
            f_tr: (&self.beams.f_tr).into(),
            q: (&self.beams.q).into(),
            w_tr: (&self.beams.w_tr).into(),
            d_w: (&self.beams.d_w).into(),
            tx_active: self.beams.tx_active.clone(),
            rx_active: self.beams.rx_active.clone(),
            pilots: self.pilots.symbols.iter().map(SerCMat::from).collect(),
            preamble: self.preamble.clone(),
            cp_len: self.cp_len,
        }
    }

    pub fn from_data(d: &FrameData) -> Result<Self> {
        Ok(Self {
            frame_index: d.frame_index,
            seed: d.seed,
            beams: TrainingBeams {
                f_tr: d.f_tr.to_matrix()?,
                q: d.q.to_vector()?,
                w_tr: d.w_tr.to_matrix()?,
                d_w: d.d_w.to_matrix()?,
                tx_active: d.tx_active.clone(),
                rx_active: d.rx_active.clone(),
            },
            pilots: Pilots {
                symbols: d.pilots.iter().map(|p| p.to_vector()).collect::<Result<_>>()?,
            },
            preamble: d.preamble.clone(),
            cp_len: d.cp_len,
        })
    }
}

/// Serializable frame dump; the seed is recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameData {
    pub frame_index: usize,
    pub seed: u64,
    pub f_tr: SerCMat,
    pub q: SerCMat,
    pub w_tr: SerCMat,
    pub d_w: SerCMat,
    pub tx_active: Vec<usize>,
    pub rx_active: Vec<usize>,
    pub pilots: Vec<SerCMat>,
    pub preamble: Vec<f64>,
    pub cp_len: usize,
}
