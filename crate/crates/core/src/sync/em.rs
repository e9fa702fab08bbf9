//! LMMSE-EM and EKF-RTS-EM loops.

use crate::error::{Error, Result};
use crate::impairments::{PnModel, ReceivedCapture};
use crate::linalg::{CMat, RVec};
use crate::sync::cfo::{cfo_newton_step, init_cfo_coarse, ml_channel_update, refine_cfo_grid, InitObjective};
use crate::sync::model::FrameModel;
use crate::sync::pn::{ekf_rts_pn_update, lmmse_pn_update, PnPosterior, PnPrior, RotatedSignal};
use crate::sync::{Algorithm, EmConfig, SyncEstimate};
use crate::training::Pilots;

/// Noise floor relative to the mean received power, used when `σ² = 0`.
const NOISELESS_FLOOR: f64 = 1e-14;

/// Initial CFO: coarse grid, fine grid with a parabolic peak fit, then
/// Newton ascent on the same criterion.
pub fn initial_cfo(model: &FrameModel, r: &CMat, cfg: &EmConfig) -> f64 {
    let objective = InitObjective::new(model, cfg.init_taps);
    let (coarse, _) = init_cfo_coarse(model, r, &objective, cfg.grid_step, cfg.cfo_range);
    if cfg.fine_oversample <= 0.0 {
        return coarse;
    }
    let period = 1.0 / (model.ntr() as f64 * (model.k() + model.layout.cp_len) as f64);
    let step = (period / cfg.fine_oversample).min(cfg.grid_step);
    let fine =
        refine_cfo_grid(model, r, &objective, coarse, cfg.grid_step, step, (-cfg.cfo_range, cfg.cfo_range));
    objective.newton_refine(model, r, fine, step, cfg.init_newton_iterations)
}

/// LMMSE-EM on a capture whose timing offset is `n0`.
pub fn run_lmmse_em(
    capture: &ReceivedCapture,
    pilots: &Pilots,
    n0: usize,
    pn: &PnModel,
    noise_var: f64,
    cfg: &EmConfig,
) -> Result<SyncEstimate> {
    run_em(capture, pilots, n0, pn, noise_var, cfg, Algorithm::LmmseEm)
}

/// EKF-RTS-EM on a capture whose timing offset is `n0`.
pub fn run_ekf_rts_em(
    capture: &ReceivedCapture,
    pilots: &Pilots,
    n0: usize,
    pn: &PnModel,
    noise_var: f64,
    cfg: &EmConfig,
) -> Result<SyncEstimate> {
    run_em(capture, pilots, n0, pn, noise_var, cfg, Algorithm::EkfRtsEm)
}

/// Shared EM loop: phase-noise E-step, Newton CFO update, LS channel update,
/// until the residual changes by at most `η`.
pub fn run_em(
    capture: &ReceivedCapture,
    pilots: &Pilots,
    n0: usize,
    pn: &PnModel,
    noise_var: f64,
    cfg: &EmConfig,
    algorithm: Algorithm,
) -> Result<SyncEstimate> {
    cfg.validate()?;
    if pilots.subcarriers() != capture.subcarriers || pilots.num_symbols() != capture.symbols {
        return Err(Error::Dimension("pilots do not match the capture layout".into()));
    }
    let r = capture.symbols_at(n0)?;
    let model = FrameModel::new(capture.layout(n0), pilots);
    run_em_on(&model, &r, n0, pn.increment_variance, noise_var, cfg, algorithm)
}

/// EM loop on CP-stripped samples `r` (`K N_tr × L_r`).
pub fn run_em_on(
    model: &FrameModel,
    r: &CMat,
    n0: usize,
    increment_variance: f64,
    noise_var: f64,
    cfg: &EmConfig,
    algorithm: Algorithm,
) -> Result<SyncEstimate> {
    let n = model.len();
    if r.nrows() != n {
        return Err(Error::Dimension("samples do not match the frame model".into()));
    }
    let energy: f64 = r.iter().map(|v| v.norm_sqr()).sum();
    let sigma2 = if noise_var > 0.0 {
        noise_var
    } else {
        (NOISELESS_FLOOR * energy / (n * r.ncols()) as f64).max(f64::MIN_POSITIVE)
    };
    let prior = PnPrior::new(increment_variance, model.idx.iter().map(|&p| p as usize).collect());
    let prior_cov = match algorithm {
        Algorithm::LmmseEm if increment_variance > 0.0 => Some(prior.covariance(cfg.cp_inflation)),
        _ => None,
    };

    let mut cfo = initial_cfo(model, r, cfg);
    let mut theta = RVec::zeros(n);
    let mut theta_var = RVec::zeros(n);
    let mut g = ml_channel_update(model, r, &theta, cfo);
    let res0 = model.residual(r, cfo, &theta, &g);
    let eta = (cfg.eta_rel * res0).max(cfg.eta_floor_rel * energy).max(f64::MIN_POSITIVE);
    let mut trace = vec![res0];
    let mut best = (res0, cfo, theta.clone(), theta_var.clone(), g.clone());
    let mut converged = false;
    let mut fallbacks = 0;
    let mut rejections = 0;
    let mut iterations = 0;
    let max_step = cfg.newton_max_step();

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        if increment_variance > 0.0 {
            let meas = RotatedSignal { a: model.predict(cfo, &RVec::zeros(n), &g) };
            let post: PnPosterior = match algorithm {
                Algorithm::LmmseEm => {
                    let lin = if cfg.recenter { theta.clone() } else { RVec::zeros(n) };
                    lmmse_pn_update(&meas, r, prior_cov.as_ref().expect("prior built"), &lin, sigma2)?
                }
                Algorithm::EkfRtsEm => ekf_rts_pn_update(&meas, r, &prior, sigma2, cfg.cp_inflation)?,
            };
            theta = post.mean;
            theta_var = post.variance;
        }
        let step = cfo_newton_step(model, r, &theta, &g, cfo, max_step, cfg.newton_damping);
        fallbacks += usize::from(step.fallback);
        rejections += usize::from(!step.accepted);
        cfo = step.cfo;
        g = ml_channel_update(model, r, &theta, cfo);
        let res = model.residual(r, cfo, &theta, &g);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(res);
        if res < best.0 {
            best = (res, cfo, theta.clone(), theta_var.clone(), g.clone());
        }
        if (res - prev).abs() <= eta {
            converged = true;
            break;
        }
    }
    let (_, cfo, theta, theta_var, g) = best;
    Ok(SyncEstimate {
        algorithm,
        n0_hat: n0,
        cfo_hat: cfo,
        pn_hat: theta.iter().copied().collect(),
        pn_var: theta_var.iter().copied().collect(),
        channels_hat: g,
        iterations,
        llf_trace: trace,
        eta,
        converged,
        newton_fallbacks: fallbacks,
        newton_rejections: rejections,
    })
}
