//! Linearized phase-noise updates: batch LMMSE and EKF with RTS smoothing.
//!
//! Both updates treat the measurement of sample `p` on chain `i` as a
//! function of `θ_p` only, linearize it, and work with the real composite
//! `[Re; Im]` of the complex residual, whose noise variance is `σ²/2` per
//! real dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impairments::wiener_covariance;
use crate::linalg::{cholesky_jitter, CMat, RMat, RVec, C64};

/// Relative diagonal jitter for covariance factorizations.
pub const JITTER_REL: f64 = 1e-10;

/// Noiseless measurement model of one frame as a function of the phase noise.
pub trait PnMeasurement {
    /// Number of stacked samples.
    fn len(&self) -> usize;
    /// Number of RF chains.
    fn chains(&self) -> usize;
    /// Value and `∂/∂θ_p` of the noiseless sample `p` of chain `i` at phase `theta`.
    fn eval(&self, p: usize, i: usize, theta: f64) -> (C64, C64);
}

/// `h_{p,i}(θ) = e^{jθ_p} a_{p,i}` with `a = Ω F⊗* S 𝗀`.
#[derive(Debug, Clone)]
pub struct RotatedSignal {
    pub a: CMat,
}

impl PnMeasurement for RotatedSignal {
    fn len(&self) -> usize {
        self.a.nrows()
    }

    fn chains(&self) -> usize {
        self.a.ncols()
    }

    fn eval(&self, p: usize, i: usize, theta: f64) -> (C64, C64) {
        let h = C64::from_polar(1.0, theta) * self.a[(p, i)];
        (h, C64::i() * h)
    }
}

/// Affine surrogate `h_{p,i}(θ) = b_{p,i} + θ_p c_{p,i}`.
#[derive(Debug, Clone)]
pub struct LinearSurrogate {
    pub b: CMat,
    pub c: CMat,
}

impl PnMeasurement for LinearSurrogate {
    fn len(&self) -> usize {
        self.b.nrows()
    }

    fn chains(&self) -> usize {
        self.b.ncols()
    }

    fn eval(&self, p: usize, i: usize, theta: f64) -> (C64, C64) {
        (self.b[(p, i)] + self.c[(p, i)] * theta, self.c[(p, i)])
    }
}

/// How the variance grows between consecutive stacked samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpInflation {
    /// `σ_w²` times the sample-index gap, so `(L_c + 1) σ_w²` across a CP.
    #[default]
    IndexGap,
    /// `σ_w²` between any two consecutive stacked samples.
    Literal,
}

/// Zero-mean Wiener prior on the stacked samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PnPrior {
    pub increment_variance: f64,
    /// Absolute sample index of each stacked sample.
    pub indices: Vec<usize>,
}

impl PnPrior {
    pub fn new(increment_variance: f64, indices: Vec<usize>) -> Self {
        Self { increment_variance, indices }
    }

    /// Prior covariance `C_θθ` consistent with `mode`.
    pub fn covariance(&self, mode: CpInflation) -> RMat {
        match mode {
            CpInflation::IndexGap => wiener_covariance(self.increment_variance, &self.indices),
            CpInflation::Literal => {
                let first = self.indices.first().copied().unwrap_or(0);
                let idx: Vec<usize> = (0..self.indices.len()).map(|p| first + p).collect();
                wiener_covariance(self.increment_variance, &idx)
            }
        }
    }

    fn first_variance(&self) -> f64 {
        self.increment_variance * (1.0 + self.indices.first().copied().unwrap_or(0) as f64)
    }

    fn increment(&self, p: usize, mode: CpInflation) -> f64 {
        match mode {
            CpInflation::IndexGap => {
                self.increment_variance * (self.indices[p] - self.indices[p - 1]) as f64
            }
            CpInflation::Literal => self.increment_variance,
        }
    }
}

/// Posterior mean and marginal variances of the phase noise.
#[derive(Debug, Clone, PartialEq)]
pub struct PnPosterior {
    pub mean: RVec,
    pub variance: RVec,
    /// Largest diagonal jitter added to any factorization.
    pub jitter: f64,
}

/// Batch linearized LMMSE update.
///
/// The model is linearized at `theta_lin` and combined with the prior
/// `N(0, C)`: `θ̂ = (C^{-1} + Jᵀ J · 2/σ²)^{-1} Jᵀ y · 2/σ²`, where
/// `y = r − h(θ_lin) + J θ_lin`. The inverse of `C` is never formed; the
/// update is evaluated as `C u − C D^{1/2}(I + D^{1/2} C D^{1/2})^{-1} D^{1/2} C u`.
pub fn lmmse_pn_update<M: PnMeasurement>(
    model: &M,
    r: &CMat,
    prior_cov: &RMat,
    theta_lin: &RVec,
    noise_var: f64,
) -> Result<PnPosterior> {
    let n = model.len();
    check_dims(model, r, theta_lin)?;
    if prior_cov.nrows() != n || prior_cov.ncols() != n {
        return Err(Error::Dimension("prior covariance does not match the sample count".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Config("phase-noise update needs σ² > 0".into()));
    }
    if prior_cov.iter().all(|&v| v == 0.0) {
        return Ok(PnPosterior { mean: RVec::zeros(n), variance: RVec::zeros(n), jitter: 0.0 });
    }
    let w = 2.0 / noise_var;
    let mut u = RVec::zeros(n);
    let mut dh = RVec::zeros(n);
    for p in 0..n {
        let (mut up, mut dp) = (0.0, 0.0);
        for i in 0..model.chains() {
            let (h, j) = model.eval(p, i, theta_lin[p]);
            let y = r[(p, i)] - h + j * theta_lin[p];
            up += (j.conj() * y).re;
            dp += j.norm_sqr();
        }
        u[p] = w * up;
        dh[p] = (w * dp).sqrt();
    }
    let cu = prior_cov * &u;
    let dc = RMat::from_fn(n, n, |a, b| dh[a] * prior_cov[(a, b)]);
    let mut inner = RMat::from_fn(n, n, |a, b| dc[(a, b)] * dh[b]);
    for a in 0..n {
        inner[(a, a)] += 1.0;
    }
    let (chol, jitter) = cholesky_jitter(&inner, JITTER_REL)?;
    let dcu = dh.component_mul(&cu);
    let mean = &cu - dc.transpose() * chol.solve(&dcu);
    let mut x = dc.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut x);
    let variance = RVec::from_fn(n, |p, _| {
        let corr: f64 = x.column(p).iter().map(|v| v * v).sum();
        (prior_cov[(p, p)] - corr).max(0.0)
    });
    Ok(PnPosterior { mean, variance, jitter })
}

/// Sequential EKF over the stacked samples followed by an RTS smoother.
///
/// The state is the scalar `θ_p`; each step fuses the `L_r` chain samples,
/// linearized at the predicted phase, through a `2L_r × 2L_r` innovation
/// covariance.
pub fn ekf_rts_pn_update<M: PnMeasurement>(
    model: &M,
    r: &CMat,
    prior: &PnPrior,
    noise_var: f64,
    mode: CpInflation,
) -> Result<PnPosterior> {
    let n = model.len();
    check_dims(model, r, &RVec::zeros(n))?;
    if prior.indices.len() != n {
        return Err(Error::Dimension("prior indices do not match the sample count".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Config("phase-noise update needs σ² > 0".into()));
    }
    if prior.increment_variance == 0.0 {
        return Ok(PnPosterior { mean: RVec::zeros(n), variance: RVec::zeros(n), jitter: 0.0 });
    }
    let lr = model.chains();
    let half = 0.5 * noise_var;
    let mut m_tu = vec![0.0; n];
    let mut p_tu = vec![0.0; n];
    let mut m_mu = vec![0.0; n];
    let mut p_mu = vec![0.0; n];
    let mut jitter_max = 0.0f64;
    let mut hvec = RVec::zeros(2 * lr);
    let mut innov = RVec::zeros(2 * lr);
    for p in 0..n {
        if p == 0 {
            m_tu[0] = 0.0;
            p_tu[0] = prior.first_variance();
        } else {
            m_tu[p] = m_mu[p - 1];
            p_tu[p] = p_mu[p - 1] + prior.increment(p, mode);
        }
        for i in 0..lr {
            let (h, j) = model.eval(p, i, m_tu[p]);
            let e = r[(p, i)] - h;
            hvec[2 * i] = j.re;
            hvec[2 * i + 1] = j.im;
            innov[2 * i] = e.re;
            innov[2 * i + 1] = e.im;
        }
        let mut s = &hvec * hvec.transpose() * p_tu[p];
        for a in 0..2 * lr {
            s[(a, a)] += half;
        }
        let (chol, jit) = cholesky_jitter(&s, JITTER_REL)?;
        jitter_max = jitter_max.max(jit);
        let sh = chol.solve(&hvec);
        let gain = sh.dot(&innov);
        let quad = sh.dot(&hvec);
        m_mu[p] = m_tu[p] + p_tu[p] * gain;
        p_mu[p] = (p_tu[p] - p_tu[p] * p_tu[p] * quad).max(0.0);
    }
    let mut mean = RVec::zeros(n);
    let mut variance = RVec::zeros(n);
    mean[n - 1] = m_mu[n - 1];
    variance[n - 1] = p_mu[n - 1];
    for p in (0..n - 1).rev() {
        let g = if p_tu[p + 1] > 0.0 { p_mu[p] / p_tu[p + 1] } else { 0.0 };
        mean[p] = m_mu[p] + g * (mean[p + 1] - m_tu[p + 1]);
        variance[p] = (p_mu[p] + g * g * (variance[p + 1] - p_tu[p + 1])).max(0.0);
    }
    Ok(PnPosterior { mean, variance, jitter: jitter_max })
}

fn check_dims<M: PnMeasurement>(model: &M, r: &CMat, theta: &RVec) -> Result<()> {
    if r.nrows() != model.len() || r.ncols() != model.chains() || theta.len() != model.len() {
        return Err(Error::Dimension("measurement, capture and phase vector disagree".into()));
    }
    if model.len() == 0 {
        return Err(Error::Dimension("empty frame".into()));
    }
    Ok(())
}
