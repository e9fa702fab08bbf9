//! Timing, CFO, phase-noise and equivalent-channel estimation for one frame.
//!
//! [`timing`] locates the Golay preamble, [`cfo`] holds the CFO grid search,
//! the Newton update and the channel M-step, [`pn`] the linearized
//! phase-noise updates and [`em`] the two EM loops built from them.

pub mod cfo;
pub mod em;
pub mod model;
pub mod pn;
pub mod timing;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;

pub use cfo::{cfo_newton_step, init_cfo_coarse, ml_channel_update, InitObjective};
pub use em::{run_ekf_rts_em, run_em, run_lmmse_em};
pub use model::FrameModel;
pub use pn::{ekf_rts_pn_update, lmmse_pn_update, CpInflation, PnMeasurement, PnPrior};
pub use timing::estimate_to;

/// Phase-noise update used inside the EM loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    LmmseEm,
    EkfRtsEm,
}

impl Algorithm {
    pub fn tag(self) -> &'static str {
        match self {
            Algorithm::LmmseEm => "lmmse-em",
            Algorithm::EkfRtsEm => "ekf-rts-em",
        }
    }
}

/// EM settings shared by both algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Termination threshold relative to the initial residual.
    pub eta_rel: f64,
    /// Termination threshold relative to `Σ_i ‖r_i‖²`, used when the initial residual is tiny.
    pub eta_floor_rel: f64,
    pub max_iterations: usize,
    /// Coarse CFO grid step, cycles/sample.
    pub grid_step: f64,
    /// Both grids stay within `±cfo_range`.
    pub cfo_range: f64,
    /// Fine-grid points per period `1/(N_tr (K + L_c))` of the CFO comb.
    pub fine_oversample: f64,
    /// Newton iterations on the initialization criterion after the fine grid.
    pub init_newton_iterations: usize,
    /// Factor applied repeatedly to Newton steps longer than `max_step`.
    pub newton_damping: f64,
    /// Longest Newton step; defaults to the coarse grid step.
    pub max_step: Option<f64>,
    /// Restrict the initialization projector to this many channel taps.
    pub init_taps: Option<usize>,
    /// Linearize the phase-noise update at the previous estimate instead of zero.
    pub recenter: bool,
    pub cp_inflation: CpInflation,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            eta_rel: 1e-4,
            eta_floor_rel: 1e-13,
            max_iterations: 20,
            grid_step: 0.02,
            cfo_range: 0.006,
            fine_oversample: 4.0,
            init_newton_iterations: 20,
            newton_damping: 0.5,
            max_step: None,
            init_taps: None,
            recenter: true,
            cp_inflation: CpInflation::IndexGap,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_rel > 0.0) || !(self.eta_floor_rel >= 0.0) {
            return Err(Error::Config("η must be positive".into()));
        }
        if !(self.grid_step > 0.0) || !(self.cfo_range >= 0.0) || self.cfo_range >= 0.5 {
            return Err(Error::Config("CFO grid step must be positive and range below 0.5".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.newton_damping > 0.0 && self.newton_damping < 1.0) {
            return Err(Error::Config("Newton damping must lie in (0, 1)".into()));
        }
        if !(self.fine_oversample >= 0.0) {
            return Err(Error::Config("fine_oversample must be nonnegative".into()));
        }
        if self.max_step.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("max_step must be positive".into()));
        }
        Ok(())
    }

    pub fn newton_max_step(&self) -> f64 {
        self.max_step.unwrap_or(self.grid_step)
    }
}

/// Per-frame estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncEstimate {
    pub algorithm: Algorithm,
    pub n0_hat: usize,
    /// Normalized CFO, cycles/sample.
    pub cfo_hat: f64,
    /// Phase-noise estimate on the stacked useful samples.
    pub pn_hat: Vec<f64>,
    /// Posterior variances of `pn_hat`.
    pub pn_var: Vec<f64>,
    /// `K × L_r`, column `i` is `𝗀̂_i`.
    pub channels_hat: CMat,
    /// EM iterations run.
    pub iterations: usize,
    /// `Σ_i ‖r_i − Ω P F⊗* S 𝗀̂_i‖²` at initialization and after every iteration.
    pub llf_trace: Vec<f64>,
    /// Threshold the trace differences were compared against.
    pub eta: f64,
    pub converged: bool,
    /// Newton updates that hit negative curvature.
    pub newton_fallbacks: usize,
    /// Newton updates with no ascent step.
    pub newton_rejections: usize,
}

impl SyncEstimate {
    /// Phase-noise estimate with its time mean removed.
    pub fn pn_mean_removed(&self) -> Vec<f64> {
        mean_removed(&self.pn_hat)
    }
}

/// `x − mean(x)`.
pub fn mean_removed(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}
