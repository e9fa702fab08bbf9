//! Fisher and hybrid information matrices of one frame and the hybrid
//! Cramér-Rao bounds for the CFO, the equivalent channels and the phase noise.
//!
//! Parameters are ordered `[Δf, 𝗀̃, θ]`. The channel block stacks chain `i`,
//! then subcarrier `k`, then the amplitude/phase pair `(α, β)` of
//! `𝗀_i[k] = α e^{jβ}`, so entry `(i, k, c)` sits at `2 (i K + k) + c`. The
//! phase-noise block follows the stacked sample order `(t, n)`.
//!
//! Every block carries the `2/σ²` factor of the complex Gaussian likelihood.

use std::f64::consts::PI;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, condition_1norm, symmetrize, CMat, RMat, RVec, C64};
use crate::sync::FrameModel;

/// Relative jitter used when inverting a prior covariance.
pub const PRIOR_JITTER_REL: f64 = 1e-12;

/// `s / ĩ` below which the CFO Schur complement is treated as singular.
pub const SINGULAR_REL: f64 = 1e-9;

/// Structured FIM of one frame. Lower blocks follow by symmetry.
#[derive(Debug, Clone, PartialEq)]
pub struct FimBlocks {
    /// `i_{Δf,Δf}`.
    pub cfo: f64,
    /// `i_{Δf,𝗀̃}`, length `2 K L_r`.
    pub cfo_channel: RVec,
    /// `i_{Δf,θ}`, length `K N_tr`.
    pub cfo_pn: RVec,
    /// Diagonal of `I_{𝗀̃,𝗀̃}`; the off-diagonal entries are zero.
    pub channel: RVec,
    /// `I_{𝗀̃,θ}`, `2 K L_r × K N_tr`.
    pub channel_pn: RMat,
    /// Diagonal of `I_{θ,θ}`.
    pub pn: RVec,
    pub subcarriers: usize,
    pub chains: usize,
}

impl FimBlocks {
    pub fn channel_dim(&self) -> usize {
        self.channel.len()
    }

    pub fn pn_dim(&self) -> usize {
        self.pn.len()
    }

    pub fn dim(&self) -> usize {
        1 + self.channel_dim() + self.pn_dim()
    }

    /// Dense symmetric FIM.
    pub fn to_dense(&self) -> RMat {
        let nc = self.channel_dim();
        let mut out = RMat::zeros(self.dim(), self.dim());
        out[(0, 0)] = self.cfo;
        for (j, v) in self.cfo_channel.iter().enumerate() {
            out[(0, 1 + j)] = *v;
            out[(1 + j, 0)] = *v;
        }
        for (j, v) in self.cfo_pn.iter().enumerate() {
            out[(0, 1 + nc + j)] = *v;
            out[(1 + nc + j, 0)] = *v;
        }
        for (j, v) in self.channel.iter().enumerate() {
            out[(1 + j, 1 + j)] = *v;
        }
        out.view_mut((1, 1 + nc), self.channel_pn.shape()).copy_from(&self.channel_pn);
        out.view_mut((1 + nc, 1), (self.pn_dim(), nc)).copy_from(&self.channel_pn.transpose());
        for (j, v) in self.pn.iter().enumerate() {
            out[(1 + nc + j, 1 + nc + j)] = *v;
        }
        out
    }
}

/// Position of `(α, β)` of `𝗀_i[k]` in the channel block.
#[inline]
pub fn channel_param(i: usize, k: usize, subcarriers: usize) -> usize {
    2 * (i * subcarriers + k)
}

/// Closed-form FIM of one frame at channels `g` (`K × L_r`, columns `𝗀_i`).
///
/// The result does not depend on `Δf` or `θ`.
pub fn fim_blocks(model: &FrameModel, g: &CMat, noise_var: f64) -> Result<FimBlocks> {
    let k = model.k();
    let ntr = model.ntr();
    let lr = g.ncols();
    if g.nrows() != k {
        return Err(Error::Dimension(format!("channel has {} rows, expected {k}", g.nrows())));
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::Config(format!("noise variance must be positive, got {noise_var}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite channel in FIM evaluation".into()));
    }
    let scale = 2.0 / noise_var;
    let x = model.clean(g);
    let n = model.len();
    let gram = model.pilots.gram_diag();
    let j = C64::i();

    let mut cfo = 0.0;
    let mut cfo_pn = RVec::zeros(n);
    let mut pn = RVec::zeros(n);
    for p in 0..n {
        let w = 2.0 * PI * model.idx[p];
        let e: f64 = x.row(p).iter().map(|v| v.norm_sqr()).sum();
        cfo += w * w * e;
        cfo_pn[p] = w * e;
        pn[p] = e;
    }

    let nc = 2 * k * lr;
    let mut cfo_channel = RVec::zeros(nc);
    let mut channel = RVec::zeros(nc);
    let mut channel_pn = RMat::zeros(nc, n);
    for i in 0..lr {
        let mut w = vec![C64::new(0.0, 0.0); k];
        for (t, st) in model.pilots.symbols.iter().enumerate() {
            let z = CMat::from_fn(k, 1, |nn, _| {
                x[(t * k + nn, i)].conj() * (2.0 * PI * model.idx[t * k + nn])
            });
            // F* is symmetric, so Σ_n z[n] F*[n, k] = (F* z)[k].
            let fz = &model.fi * z;
            for kk in 0..k {
                w[kk] += st[kk] * fz[(kk, 0)];
            }
        }
        for kk in 0..k {
            let gk = g[(kk, i)];
            let alpha = gk.norm();
            let eb = if alpha > 0.0 { gk / alpha } else { C64::new(1.0, 0.0) };
            let q = channel_param(i, kk, k);
            cfo_channel[q] = scale * (-j * eb * w[kk]).re;
            cfo_channel[q + 1] = scale * (gk * w[kk]).re;
            channel[q] = scale * gram[kk];
            channel[q + 1] = scale * alpha * alpha * gram[kk];
            for (t, st) in model.pilots.symbols.iter().enumerate() {
                let sc = st[kk].conj();
                for nn in 0..k {
                    let p = t * k + nn;
                    let u = sc * model.fi[(nn, kk)].conj() * x[(p, i)];
                    channel_pn[(q, p)] = scale * (j * eb.conj() * u).re;
                    channel_pn[(q + 1, p)] = scale * (gk.conj() * u).re;
                }
            }
        }
    }
    debug_assert_eq!(n, k * ntr);

    Ok(FimBlocks {
        cfo: scale * cfo,
        cfo_channel,
        cfo_pn: cfo_pn * scale,
        channel,
        channel_pn,
        pn: pn * scale,
        subcarriers: k,
        chains: lr,
    })
}

/// Tridiagonal precision of a Wiener path observed at ascending `indices`,
/// with `Var θ[i] = var (1 + i)`.
pub fn wiener_precision(var: f64, indices: &[usize]) -> Result<RMat> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Config(format!("Wiener increment variance must be positive, got {var}")));
    }
    let n = indices.len();
    let mut inc = Vec::with_capacity(n);
    for p in 0..n {
        let gap = if p == 0 {
            1 + indices[0]
        } else {
            indices[p].checked_sub(indices[p - 1]).filter(|&d| d > 0).ok_or_else(|| {
                Error::Config("Wiener precision needs strictly ascending indices".into())
            })?
        };
        inc.push(var * gap as f64);
    }
    let mut q = RMat::zeros(n, n);
    for p in 0..n {
        q[(p, p)] += 1.0 / inc[p];
        if p + 1 < n {
            q[(p, p)] += 1.0 / inc[p + 1];
            q[(p, p + 1)] = -1.0 / inc[p + 1];
            q[(p + 1, p)] = -1.0 / inc[p + 1];
        }
    }
    Ok(q)
}

/// Hybrid information matrix: the FIM plus the phase-noise prior precision.
#[derive(Debug, Clone)]
pub struct Him {
    pub fim: FimBlocks,
    /// `(θ, θ)` block `I_{θ,θ} + C_θθ^{-1}`; `None` when the phase noise is
    /// known and dropped from the parameter vector.
    pub pn_block: Option<RMat>,
    /// Diagonal jitter added to the prior covariance before inversion.
    pub prior_jitter: f64,
}

impl Him {
    /// Model with known phase noise: only `[Δf, 𝗀̃]` remain.
    pub fn known_pn(fim: FimBlocks) -> Self {
        Self { fim, pn_block: None, prior_jitter: 0.0 }
    }

    /// Adds a prior precision matrix to the `(θ, θ)` block.
    pub fn with_precision(fim: FimBlocks, precision: &RMat) -> Result<Self> {
        let n = fim.pn_dim();
        if precision.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "prior precision is {:?}, expected {n}×{n}",
                precision.shape()
            )));
        }
        let mut block = precision.clone();
        for p in 0..n {
            block[(p, p)] += fim.pn[p];
        }
        Ok(Self { fim, pn_block: Some(block), prior_jitter: 0.0 })
    }

    pub fn dim(&self) -> usize {
        match self.pn_block {
            Some(_) => self.fim.dim(),
            None => 1 + self.fim.channel_dim(),
        }
    }

    /// Dense symmetric HIM.
    pub fn to_dense(&self) -> RMat {
        let dense = self.fim.to_dense();
        match &self.pn_block {
            Some(t) => {
                let mut out = dense;
                let o = 1 + self.fim.channel_dim();
                out.view_mut((o, o), t.shape()).copy_from(t);
                out
            }
            None => {
                let d = self.dim();
                dense.view((0, 0), (d, d)).into_owned()
            }
        }
    }
}

/// HIM from a prior covariance `C_θθ`, inverted with Cholesky and jitter.
pub fn him(fim: FimBlocks, prior_cov: &RMat) -> Result<Him> {
    let (ch, jitter) = cholesky_jitter(prior_cov, PRIOR_JITTER_REL)?;
    let mut h = Him::with_precision(fim, &ch.inverse())?;
    h.prior_jitter = jitter;
    Ok(h)
}

/// HIM for a Wiener prior with increment variance `var` at sample `indices`.
/// `var = 0` gives the known-phase-noise model.
pub fn him_wiener(fim: FimBlocks, var: f64, indices: &[usize]) -> Result<Him> {
    if var == 0.0 {
        return Ok(Him::known_pn(fim));
    }
    let q = wiener_precision(var, indices)?;
    Him::with_precision(fim, &q)
}

/// Which channel block enters the coupling terms of the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    /// Uses the channel block of the HIM, `I_{𝗀̃,𝗀̃}`.
    #[default]
    Literal,
    /// Uses the Schur complement `Ĩ_{𝗀̃,𝗀̃}`: the exact block inverse.
    Schur,
}

/// Numerical health of a bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundDiagnostics {
    pub prior_jitter: f64,
    /// 1-norm condition number of the phase-noise block after eliminating
    /// the channels.
    pub pn_condition: f64,
    /// `(ĩ − xᵀĨ^{-1}x) / ĩ`.
    pub cfo_schur_ratio: f64,
    /// The CFO Schur complement vanished; CFO, channel and PN bounds are
    /// reported as infinite.
    pub singular: bool,
}

/// Channel covariance bound `diag(d) + F Fᵀ + w wᵀ`, `2 K L_r` square.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelBound {
    pub diag: RVec,
    pub factor: RMat,
    pub rank_one: RVec,
}

impl ChannelBound {
    fn infinite(n: usize) -> Self {
        Self {
            diag: RVec::from_element(n, f64::INFINITY),
            factor: RMat::zeros(n, 0),
            rank_one: RVec::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let d = if a == b { self.diag[a] } else { 0.0 };
        d + self.factor.row(a).dot(&self.factor.row(b)) + self.rank_one[a] * self.rank_one[b]
    }

    pub fn diagonal(&self) -> RVec {
        RVec::from_fn(self.dim(), |a, _| self.entry(a, a))
    }

    pub fn to_dense(&self) -> RMat {
        let mut out = &self.factor * self.factor.transpose();
        out.ger(1.0, &self.rank_one, &self.rank_one, 1.0);
        for a in 0..self.dim() {
            out[(a, a)] += self.diag[a];
        }
        out
    }
}

/// Bounds of one frame.
#[derive(Debug, Clone)]
pub struct HcrlbReport {
    pub form: BoundForm,
    /// Exact CFO bound `1/(ĩ − xᵀĨ^{-1}x)`, in cycles²/sample².
    pub cfo_bound: f64,
    /// CFO bound with `I_{𝗀̃,𝗀̃}` in place of `Ĩ_{𝗀̃,𝗀̃}`; never larger than
    /// `cfo_bound`.
    pub cfo_bound_literal: f64,
    /// `ĩ_{Δf,Δf}`.
    pub cfo_info: f64,
    /// Amplitude/phase covariance bound in the form `form`.
    pub channel_bound: ChannelBound,
    /// Diagonal of the `(θ, θ)` block of `H^{-1}`; empty for known phase noise.
    pub pn_bound: Vec<f64>,
    /// Trace of the `(θ, θ)` block of `H^{-1}` after removing the frame mean
    /// of `θ`.
    pub pn_bound_mean_removed: f64,
    /// Coupling vector `x`.
    pub coupling: RVec,
    pub diagnostics: BoundDiagnostics,
}

/// Scalar summary of a report for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub form: BoundForm,
    pub cfo_bound: f64,
    pub cfo_bound_literal: f64,
    pub channel_trace: f64,
    pub pn_trace: f64,
    pub pn_trace_mean_removed: f64,
    pub diagnostics: BoundDiagnostics,
}

impl HcrlbReport {
    pub fn summary(&self) -> BoundSummary {
        BoundSummary {
            form: self.form,
            cfo_bound: self.cfo_bound,
            cfo_bound_literal: self.cfo_bound_literal,
            channel_trace: self.channel_bound.diagonal().sum(),
            pn_trace: self.pn_bound.iter().sum(),
            pn_trace_mean_removed: self.pn_bound_mean_removed,
            diagnostics: self.diagnostics,
        }
    }
}

fn chol(a: RMat, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(a).ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

/// Hybrid CRLBs from the HIM.
///
/// The channel block is diagonal, so the channels are eliminated first and
/// all dense work happens in the `(Δf, θ)` space. With `G = I_{𝗀̃,𝗀̃}`,
/// `T' = T − EᵀG⁻¹E`, `c' = c − EᵀG⁻¹b` and `s` the CFO Schur complement,
///
/// - `Ĩ⁻¹ = G⁻¹ + G⁻¹E T'⁻¹ EᵀG⁻¹`,
/// - exact channel bound `= Ĩ⁻¹ + G⁻¹(b − E T'⁻¹c')(·)ᵀG⁻¹ / s`,
/// - literal channel bound `= Ĩ⁻¹ + G⁻¹x xᵀG⁻¹ / (ĩ − xᵀG⁻¹x)`.
pub fn hcrlb_bounds(h: &Him, form: BoundForm) -> Result<HcrlbReport> {
    let fim = &h.fim;
    let nc = fim.channel_dim();
    if fim.channel.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numerical(
            "channel information is singular (zero channel gain or pilot)".into(),
        ));
    }
    let g_inv = fim.channel.map(|v| 1.0 / v);
    let vb = fim.cfo_channel.component_mul(&g_inv);
    let a2 = fim.cfo - fim.cfo_channel.dot(&vb);

    let (cfo_info, coupling, s, pn_part) = match &h.pn_block {
        Some(t) => {
            let t_chol = chol(t.clone(), "phase-noise block of the HIM")?;
            let tc = t_chol.solve(&fim.cfo_pn);
            let cfo_info = fim.cfo - fim.cfo_pn.dot(&tc);
            let coupling = &fim.cfo_channel - &fim.channel_pn * &tc;

            let ve = RMat::from_fn(nc, fim.pn_dim(), |a, p| fim.channel_pn[(a, p)] * g_inv[a]);
            let mut tr = t - fim.channel_pn.transpose() * &ve;
            symmetrize(&mut tr);
            let c2 = &fim.cfo_pn - ve.transpose() * &fim.cfo_channel;
            let tr_chol = chol(tr.clone(), "phase-noise Schur complement")?;
            let z = tr_chol.solve(&c2);
            let s = a2 - c2.dot(&z);
            (cfo_info, coupling, s, Some((ve, tr, tr_chol, z)))
        }
        None => (fim.cfo, fim.cfo_channel.clone(), a2, None),
    };
    let ratio = if cfo_info > 0.0 { s / cfo_info } else { 0.0 };
    let singular = !(ratio > SINGULAR_REL);

    let gx = coupling.component_mul(&g_inv);
    let s_literal = cfo_info - coupling.dot(&gx);
    let cfo_bound_literal = if s_literal > 0.0 { 1.0 / s_literal } else { f64::INFINITY };

    let (factor, pn_condition) = match &pn_part {
        Some((ve, tr, tr_chol, _)) => {
            let lt = tr_chol
                .l()
                .solve_lower_triangular(&ve.transpose())
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            (lt.transpose(), condition_1norm(tr, &tr_chol.inverse()))
        }
        None => (RMat::zeros(nc, 0), 1.0),
    };
    let diagnostics =
        BoundDiagnostics { prior_jitter: h.prior_jitter, pn_condition, cfo_schur_ratio: ratio, singular };

    if singular {
        let np = if h.pn_block.is_some() { fim.pn_dim() } else { 0 };
        return Ok(HcrlbReport {
            form,
            cfo_bound: f64::INFINITY,
            cfo_bound_literal,
            cfo_info,
            channel_bound: ChannelBound::infinite(nc),
            pn_bound: vec![f64::INFINITY; np],
            pn_bound_mean_removed: if np > 0 { f64::INFINITY } else { 0.0 },
            coupling,
            diagnostics,
        });
    }

    let rank_one = match form {
        BoundForm::Schur => {
            let w = match &pn_part {
                Some((ve, _, _, z)) => &vb - ve * z,
                None => vb.clone(),
            };
            w / s.sqrt()
        }
        BoundForm::Literal if s_literal > 0.0 => &gx / s_literal.sqrt(),
        BoundForm::Literal => RVec::zeros(nc),
    };

    // θ block: (T' − c'c'ᵀ/a'')⁻¹ = T'⁻¹ + z zᵀ / s.
    let (pn_bound, pn_bound_mean_removed) = match &pn_part {
        Some((_, _, tr_chol, z)) => {
            let inv = tr_chol.inverse();
            let n = inv.nrows();
            let diag: Vec<f64> = (0..n).map(|p| inv[(p, p)] + z[p] * z[p] / s).collect();
            let ones_quad = inv.sum() + z.sum().powi(2) / s;
            let total: f64 = diag.iter().sum();
            (diag, total - ones_quad / n as f64)
        }
        None => (Vec::new(), 0.0),
    };

    Ok(HcrlbReport {
        form,
        cfo_bound: 1.0 / s,
        cfo_bound_literal,
        cfo_info,
        channel_bound: ChannelBound { diag: g_inv, factor, rank_one },
        pn_bound,
        pn_bound_mean_removed,
        coupling,
        diagnostics,
    })
}

/// Complex error variance of every `𝗀_i[k]` implied by an amplitude/phase
/// bound: `C_αα + α² C_ββ`. Output is `K × L_r`.
pub fn complex_gain_variance(channel_bound: &ChannelBound, g: &CMat) -> RMat {
    let k = g.nrows();
    RMat::from_fn(k, g.ncols(), |kk, i| {
        let q = channel_param(i, kk, k);
        channel_bound.entry(q, q) + g[(kk, i)].norm_sqr() * channel_bound.entry(q + 1, q + 1)
    })
}

/// Per-subcarrier complex covariances `C_𝗀̂[k]` (`L_r × L_r`) of a bound on
/// per-subcarrier parameters; equals [`bound_transform_chain`] with an
/// identity basis without forming the dense bound.
pub fn subcarrier_covariances(channel_bound: &ChannelBound, g: &CMat) -> Vec<CMat> {
    let (k, lr) = g.shape();
    (0..k)
        .map(|kk| {
            let jac: Vec<[C64; 2]> = (0..lr)
                .map(|i| {
                    let v = g[(kk, i)];
                    let a = v.norm();
                    [if a > 0.0 { v / a } else { C64::new(1.0, 0.0) }, C64::i() * v]
                })
                .collect();
            CMat::from_fn(lr, lr, |i, j| {
                let (qi, qj) = (channel_param(i, kk, k), channel_param(j, kk, k));
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        acc += jac[i][a] * channel_bound.entry(qi + a, qj + b) * jac[j][b].conj();
                    }
                }
                acc
            })
        })
        .collect()
}

/// Maps an amplitude/phase bound on basis coefficients `params` (`D × L_r`)
/// to per-subcarrier complex covariances `C_𝗀̂[k]` (`L_r × L_r`, one per row
/// of `basis`).
///
/// Applies `J_f = ⊕[e^{jβ}, j g]`, then `I ⊗ basis`, then the per-subcarrier
/// selection `I ⊗ e_kᵀ`. Pass `basis = I_K` when the bound is already per
/// subcarrier.
pub fn bound_transform_chain(channel_bound: &RMat, params: &CMat, basis: &CMat) -> Result<Vec<CMat>> {
    let d = params.nrows();
    let lr = params.ncols();
    if channel_bound.shape() != (2 * d * lr, 2 * d * lr) {
        return Err(Error::Dimension(format!(
            "channel bound is {:?}, expected {}×{}",
            channel_bound.shape(),
            2 * d * lr,
            2 * d * lr
        )));
    }
    if basis.ncols() != d {
        return Err(Error::Dimension(format!("basis has {} columns, expected {d}", basis.ncols())));
    }
    // J_f C J_f*, an (L_r D)-square complex covariance.
    let jac: Vec<[C64; 2]> = (0..lr)
        .flat_map(|i| {
            (0..d).map(move |dd| {
                let v = params[(dd, i)];
                let a = v.norm();
                let eb = if a > 0.0 { v / a } else { C64::new(1.0, 0.0) };
                [eb, C64::i() * v]
            })
        })
        .collect();
    let m = d * lr;
    let cov = CMat::from_fn(m, m, |r, c| {
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..2 {
            for b in 0..2 {
                acc += jac[r][a] * channel_bound[(2 * r + a, 2 * c + b)] * jac[c][b].conj();
            }
        }
        acc
    });
    let k = basis.nrows();
    Ok((0..k)
        .map(|kk| {
            let row = basis.row(kk);
            CMat::from_fn(lr, lr, |i, j| {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..d {
                    let fa = row[a];
                    if fa == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for b in 0..d {
                        acc += fa * cov[(i * d + a, j * d + b)] * row[b].conj();
                    }
                }
                acc
            })
        })
        .collect())
}

/// Per-subcarrier direct sum over frames: block `k` is `⊕_m C^{(m)}[k]`.
pub fn direct_sum(frames: &[Vec<CMat>]) -> Result<Vec<CMat>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let k = first.len();
    if frames.iter().any(|f| f.len() != k) {
        return Err(Error::Dimension("frames disagree on the number of subcarriers".into()));
    }
    Ok((0..k)
        .map(|kk| {
            let n: usize = frames.iter().map(|f| f[kk].nrows()).sum();
            let mut out = CMat::zeros(n, n);
            let mut o = 0;
            for f in frames {
                let b = &f[kk];
                out.view_mut((o, o), b.shape()).copy_from(b);
                o += b.nrows();
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impairments::{wiener_covariance, SymbolLayout};
    use crate::linalg::{dft_taps, min_eigenvalue};
    use crate::training::{build_zc_pilots, PilotConfig};

    fn tiny(k: usize, ntr: usize) -> FrameModel {
        let cfg = PilotConfig { subcarriers: k, symbols: ntr, cp_len: 2, ..PilotConfig::default() };
        let pilots = build_zc_pilots(&cfg, 0).unwrap();
        let layout = SymbolLayout { subcarriers: k, symbols: ntr, cp_len: 2, first: 5 };
        FrameModel::new(layout, &pilots)
    }

    fn channel(k: usize, lr: usize) -> CMat {
        CMat::from_fn(k, lr, |r, c| C64::new(0.3 + 0.1 * r as f64, 0.2 - 0.15 * c as f64 + 0.05 * r as f64))
    }

    #[test]
    fn zero_channel_carries_no_cfo_or_pn_information() {
        let m = tiny(4, 2);
        let f = fim_blocks(&m, &CMat::zeros(4, 2), 0.5).unwrap();
        assert_eq!(f.cfo, 0.0);
        assert!(f.pn.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn amplitude_phase_block_is_diagonal() {
        let m = tiny(4, 2);
        let mut g = channel(4, 1);
        g[(1, 0)] = C64::from_polar(2.0, 0.7);
        let sigma2 = 0.25;
        let f = fim_blocks(&m, &g, sigma2).unwrap();
        let gram = m.pilots.gram_diag()[1];
        let q = channel_param(0, 1, 4);
        assert!((f.channel[q] - 2.0 / sigma2 * gram).abs() < 1e-12);
        assert!((f.channel[q + 1] - 2.0 / sigma2 * gram * 4.0).abs() < 1e-10);
        let dense = f.to_dense();
        assert_eq!(dense[(1 + q, 2 + q)], 0.0);
    }

    #[test]
    fn dense_fim_is_symmetric_psd() {
        let m = tiny(4, 2);
        let f = fim_blocks(&m, &channel(4, 2), 1.0).unwrap();
        let d = f.to_dense();
        assert_eq!(d, d.transpose());
        assert!(min_eigenvalue(&d) >= -1e-8 * d.norm());
    }

    #[test]
    fn wiener_precision_inverts_covariance() {
        let idx = [3usize, 4, 5, 9, 10, 11];
        let q = wiener_precision(0.01, &idx).unwrap();
        let c = wiener_covariance(0.01, &idx);
        assert!((q * c - RMat::identity(6, 6)).norm() < 1e-10);
    }

    #[test]
    fn scaled_identity_prior_adds_inverse_scale() {
        let m = tiny(4, 2);
        let f = fim_blocks(&m, &channel(4, 1), 1.0).unwrap();
        let h = him(f.clone(), &(RMat::identity(8, 8) * 4.0)).unwrap();
        let t = h.pn_block.as_ref().unwrap();
        for p in 0..8 {
            assert_eq!(t[(p, p)], f.pn[p] + 0.25);
        }
    }

    #[test]
    fn decoupled_channel_bound_is_inverse() {
        let m = tiny(4, 2);
        let mut f = fim_blocks(&m, &channel(4, 1), 1.0).unwrap();
        f.cfo_channel.fill(0.0);
        f.cfo_pn.fill(0.0);
        f.channel_pn.fill(0.0);
        let h = Him::known_pn(f.clone());
        for form in [BoundForm::Literal, BoundForm::Schur] {
            let r = hcrlb_bounds(&h, form).unwrap();
            for q in 0..f.channel_dim() {
                let want = 1.0 / f.channel[q];
                assert!((r.channel_bound.entry(q, q) - want).abs() <= 1e-14 * want);
            }
            assert!((r.cfo_bound - 1.0 / f.cfo).abs() <= 1e-15 * r.cfo_bound);
        }
    }

    #[test]
    fn identity_transform_gives_unit_plus_gain_squared() {
        let g = CMat::from_fn(3, 1, |r, _| C64::new(0.5 + r as f64, 0.0));
        let out = bound_transform_chain(&RMat::identity(6, 6), &g, &CMat::identity(3, 3)).unwrap();
        for (k, c) in out.iter().enumerate() {
            let gk = g[(k, 0)].re;
            assert!((c[(0, 0)] - C64::new(1.0 + gk * gk, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn transform_matches_dense_construction() {
        let (k, d, lr) = (4, 2, 2);
        let params = channel(d, lr);
        let a = RMat::from_fn(2 * d * lr, 2 * d * lr, |r, c| ((r * 7 + c * 3) % 5) as f64 * 0.1);
        let bound = &a * a.transpose() + RMat::identity(2 * d * lr, 2 * d * lr);
        let basis = dft_taps(k, d);
        let out = bound_transform_chain(&bound, &params, &basis).unwrap();

        let mut jf = CMat::zeros(d * lr, 2 * d * lr);
        for i in 0..lr {
            for dd in 0..d {
                let v = params[(dd, i)];
                let r = i * d + dd;
                jf[(r, 2 * r)] = v / v.norm();
                jf[(r, 2 * r + 1)] = C64::i() * v;
            }
        }
        let cb = bound.map(|v| C64::new(v, 0.0));
        let big = crate::linalg::kron(&CMat::identity(lr, lr), &basis);
        let full = &big * &jf * cb * jf.adjoint() * big.adjoint();
        for kk in 0..k {
            let mut sel = CMat::zeros(lr, k * lr);
            for i in 0..lr {
                sel[(i, i * k + kk)] = C64::new(1.0, 0.0);
            }
            let want = &sel * &full * sel.adjoint();
            assert!((&out[kk] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn direct_sum_of_identical_frames_is_block_diagonal() {
        let blk = CMat::from_fn(2, 2, |r, c| C64::new((r + c) as f64, 0.0));
        let out = direct_sum(&[vec![blk.clone()], vec![blk.clone()]]).unwrap();
        assert_eq!(out[0].view((0, 0), (2, 2)), blk);
        assert_eq!(out[0].view((2, 2), (2, 2)), blk);
        assert!(out[0].view((0, 2), (2, 2)).iter().all(|v| *v == C64::new(0.0, 0.0)));
    }
}
