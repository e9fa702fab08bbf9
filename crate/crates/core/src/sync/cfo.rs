//! CFO initialization, Newton refinement and the channel M-step.

use std::f64::consts::PI;

use crate::linalg::{dft_taps, CMat, RVec, C64};
use crate::sync::model::FrameModel;

/// Grid-search criterion for the initial CFO.
///
/// With `taps = None` it is `Σ_i ‖S S* F⊗ Ω*(Δf) r_i‖²`. With `taps = Some(L)`
/// the projector onto the pilot space is restricted to channels with `L`
/// time-domain taps, `Σ_i ‖Q* F⊗ Ω*(Δf) r_i‖²` with `Q` an orthonormal basis
/// of `S F_L`.
#[derive(Debug, Clone)]
pub struct InitObjective {
    basis: Option<CMat>,
}

impl InitObjective {
    pub fn new(model: &FrameModel, taps: Option<usize>) -> Self {
        let k = model.k();
        let basis = taps.filter(|&l| l < k).map(|l| {
            let sb = model.pilots.stacked() * dft_taps(k, l.max(1));
            sb.qr().q()
        });
        Self { basis }
    }

    pub fn eval(&self, model: &FrameModel, r: &CMat, cfo: f64) -> f64 {
        let y = model.derotate_freq(r, cfo, &RVec::zeros(model.len()));
        self.reduce(model, &y).iter().map(|v| v.norm_sqr()).sum()
    }

    /// Criterion value with its first and second derivatives in `Δf`.
    pub fn eval_derivatives(&self, model: &FrameModel, r: &CMat, cfo: f64) -> (f64, f64, f64) {
        let zero = RVec::zeros(model.len());
        let weighted = |power: i32| {
            let mut w = r.clone();
            for (p, mut row) in w.row_iter_mut().enumerate() {
                row *= C64::new(0.0, -2.0 * PI * model.idx[p]).powi(power);
            }
            self.reduce(model, &model.derotate_freq(&w, cfo, &zero))
        };
        let (a0, a1, a2) = (weighted(0), weighted(1), weighted(2));
        let dot = |a: &CMat, b: &CMat| a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum::<C64>();
        let j0 = dot(&a0, &a0).re;
        let j1 = 2.0 * dot(&a0, &a1).re;
        let j2 = 2.0 * (dot(&a1, &a1).re + dot(&a0, &a2).re);
        (j0, j1, j2)
    }

    /// Linear map whose squared norm is the criterion: `Q* y` or `diag(√‖s_k‖²) S* y`.
    fn reduce(&self, model: &FrameModel, y: &CMat) -> CMat {
        match &self.basis {
            Some(q) => q.adjoint() * y,
            None => {
                let k = model.k();
                let gram = model.pilots.gram_diag();
                CMat::from_fn(k, y.ncols(), |kk, c| {
                    let z: C64 = model
                        .pilots
                        .symbols
                        .iter()
                        .enumerate()
                        .map(|(t, st)| st[kk].conj() * y[(t * k + kk, c)])
                        .sum();
                    z * gram[kk].sqrt()
                })
            }
        }
    }

    /// Newton ascent on the criterion from `start`, keeping only improving steps
    /// no longer than `max_step`.
    pub fn newton_refine(
        &self,
        model: &FrameModel,
        r: &CMat,
        start: f64,
        max_step: f64,
        iterations: usize,
    ) -> f64 {
        let mut cfo = start;
        let (mut val, _, _) = self.eval_derivatives(model, r, cfo);
        for _ in 0..iterations {
            let (_, d1, d2) = self.eval_derivatives(model, r, cfo);
            if !(d2 < 0.0) {
                break;
            }
            let mut step = (-d1 / d2).clamp(-max_step, max_step);
            let mut moved = false;
            for _ in 0..30 {
                let v = self.eval(model, r, cfo + step);
                if v >= val {
                    cfo += step;
                    val = v;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved || step.abs() <= 1e-15 * cfo.abs().max(1e-3) {
                break;
            }
        }
        cfo
    }
}

/// Grid points `j · step` for `|j · step| ≤ range`, ordered by increasing magnitude.
pub fn cfo_grid(step: f64, range: f64) -> Vec<f64> {
    let j_max = (range / step + 1e-9).floor() as i64;
    let mut out = vec![0.0];
    for j in 1..=j_max {
        out.push(j as f64 * step);
        out.push(-(j as f64) * step);
    }
    out
}

/// Coarse grid search; returns the maximizing grid point and the LS channels there.
pub fn init_cfo_coarse(
    model: &FrameModel,
    r: &CMat,
    objective: &InitObjective,
    step: f64,
    range: f64,
) -> (f64, CMat) {
    let mut best = (0.0, f64::NEG_INFINITY);
    for f in cfo_grid(step, range) {
        let v = objective.eval(model, r, f);
        if v > best.1 {
            best = (f, v);
        }
    }
    let g = ml_channel_update(model, r, &RVec::zeros(model.len()), best.0);
    (best.0, g)
}

/// Fine grid of spacing `step` on `center ± half_width` clipped to `bounds`,
/// then a parabolic fit through the best point and its neighbours.
pub fn refine_cfo_grid(
    model: &FrameModel,
    r: &CMat,
    objective: &InitObjective,
    center: f64,
    half_width: f64,
    step: f64,
    bounds: (f64, f64),
) -> f64 {
    let n = (half_width / step).ceil() as i64;
    let pts: Vec<f64> = (-n..=n)
        .map(|j| center + j as f64 * step)
        .filter(|f| *f >= bounds.0 - 1e-15 && *f <= bounds.1 + 1e-15)
        .collect();
    if pts.is_empty() {
        return center;
    }
    let vals: Vec<f64> = pts.iter().map(|&f| objective.eval(model, r, f)).collect();
    let (ib, _) = vals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if ib == 0 || ib + 1 == pts.len() {
        return pts[ib];
    }
    let (a, b, c) = (vals[ib - 1], vals[ib], vals[ib + 1]);
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        return pts[ib];
    }
    pts[ib] + 0.5 * step * (a - c) / den
}

/// Channel M-step `𝗀̂_i = (S*S)^{-1} S* F⊗ P*(θ̂) Ω*(Δf̂) r_i`.
pub fn ml_channel_update(model: &FrameModel, r: &CMat, theta: &RVec, cfo: f64) -> CMat {
    model.ls_channels(&model.derotate_freq(r, cfo, theta))
}

/// Terms `c = conj(r) e^{jθ} F⊗* S 𝗀̂` so that the criterion is `Σ Re{c e^{j2πΔf p}}`.
fn criterion_terms(model: &FrameModel, r: &CMat, theta: &RVec, g: &CMat) -> Vec<(f64, C64)> {
    let x = model.predict(0.0, theta, g);
    let mut out = Vec::with_capacity(model.len());
    for p in 0..model.len() {
        let c: C64 = (0..r.ncols()).map(|i| r[(p, i)].conj() * x[(p, i)]).sum();
        out.push((model.idx[p], c));
    }
    out
}

fn criterion_at(terms: &[(f64, C64)], cfo: f64) -> f64 {
    terms
        .iter()
        .map(|&(p, c)| (c * C64::from_polar(1.0, 2.0 * PI * cfo * p)).re)
        .sum()
}

/// Simplified CFO criterion `Σ_i Re{r_i* Ω P F⊗* S 𝗀̂_i}`.
pub fn cfo_criterion(model: &FrameModel, r: &CMat, theta: &RVec, g: &CMat, cfo: f64) -> f64 {
    criterion_at(&criterion_terms(model, r, theta, g), cfo)
}

/// Result of one Newton update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub cfo: f64,
    /// Raw step before damping.
    pub raw_step: f64,
    /// False when no ascent step was found and the CFO was kept.
    pub accepted: bool,
    /// Negative curvature forced a local grid refinement.
    pub fallback: bool,
}

/// Newton update `Δf⁺ = Δf − Σ Im{r* M h} / Σ Re{r* M² h}` with
/// `M = 2π diag(k0[t] + n)`. Steps longer than `max_step` are repeatedly
/// scaled by `damping`; accepted steps never decrease the criterion.
pub fn cfo_newton_step(
    model: &FrameModel,
    r: &CMat,
    theta: &RVec,
    g: &CMat,
    cfo: f64,
    max_step: f64,
    damping: f64,
) -> NewtonOutcome {
    let terms = criterion_terms(model, r, theta, g);
    let (mut num, mut den) = (0.0, 0.0);
    for &(p, c) in &terms {
        let m = 2.0 * PI * p;
        let h = c * C64::from_polar(1.0, 2.0 * PI * cfo * p);
        num += m * h.im;
        den += m * m * h.re;
    }
    let base = criterion_at(&terms, cfo);
    if !(den > 0.0) {
        let n = 40;
        let mut best = (cfo, base);
        for j in -n..=n {
            let f = cfo + max_step * j as f64 / n as f64;
            let v = criterion_at(&terms, f);
            if v > best.1 {
                best = (f, v);
            }
        }
        return NewtonOutcome { cfo: best.0, raw_step: f64::NAN, accepted: true, fallback: true };
    }
    let raw = -num / den;
    let mut step = raw;
    let damping = if damping > 0.0 && damping < 1.0 { damping } else { 0.5 };
    while step.abs() > max_step {
        step *= damping;
    }
    for _ in 0..30 {
        if criterion_at(&terms, cfo + step) >= base {
            return NewtonOutcome { cfo: cfo + step, raw_step: raw, accepted: true, fallback: false };
        }
        step *= damping;
    }
    NewtonOutcome { cfo, raw_step: raw, accepted: false, fallback: false }
}
