//! Compressive recovery of the MIMO channel from the per-frame equivalent
//! channel estimates.
//!
//! Frame `m` observes `𝗀^{(m)}[k] = (qᵀF_trᵀ ⊗ D_w^{-*}W_tr*) vec(𝗛[k])`.
//! Stacking `M` frames gives `ĝ[k] = Φ_w Ψ 𝗀^v[k] + ṽ[k]`, which is whitened
//! by one frequency-flat factor `D_v` and solved with SW-OMP over a support
//! shared by all subcarriers.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::channel::AngularDictionary;
use crate::error::{Error, Result};
use crate::linalg::{kron, upper_cholesky, CMat, CVec, C64};
use crate::training::TrainingBeams;

/// `Φ_w`: row block `m` is `qᵀF_trᵀ ⊗ D_w^{-*}W_tr*`, shape `M L_r × N_t N_r`.
pub fn build_measurement_matrix(beams: &[&TrainingBeams]) -> Result<CMat> {
    let Some(first) = beams.first() else {
        return Err(Error::Config("measurement matrix needs at least one frame".into()));
    };
    let (nt, nr) = (first.f_tr.nrows(), first.w_tr.nrows());
    let rows: usize = beams.iter().map(|b| b.w_tr.ncols()).sum();
    let mut phi = CMat::zeros(rows, nt * nr);
    let mut o = 0;
    for b in beams {
        if b.f_tr.nrows() != nt || b.w_tr.nrows() != nr {
            return Err(Error::Dimension("frames disagree on the array sizes".into()));
        }
        let v = b.tx_vector();
        let tx = CMat::from_iterator(1, v.len(), v.iter().cloned());
        let blk = kron(&tx, &b.whitened_combiner());
        phi.view_mut((o, 0), blk.shape()).copy_from(&blk);
        o += blk.nrows();
    }
    Ok(phi)
}

/// `Φ_w Ψ` without forming `Ψ`, using the Kronecker structure of each block.
pub fn sensing_matrix(beams: &[&TrainingBeams], dict: &AngularDictionary) -> Result<CMat> {
    let rows: usize = beams.iter().map(|b| b.w_tr.ncols()).sum();
    let mut out = CMat::zeros(rows, dict.num_atoms());
    let at = dict.tx_atoms.conjugate();
    let mut o = 0;
    for b in beams {
        if b.f_tr.nrows() != dict.tx_atoms.nrows() || b.w_tr.nrows() != dict.rx_atoms.nrows() {
            return Err(Error::Dimension("beams and dictionary disagree on array sizes".into()));
        }
        let v = b.tx_vector();
        let tx = CMat::from_iterator(1, v.len(), v.iter().cloned()) * &at;
        let rx = b.whitened_combiner() * &dict.rx_atoms;
        let blk = kron(&tx, &rx);
        out.view_mut((o, 0), blk.shape()).copy_from(&blk);
        o += blk.nrows();
    }
    Ok(out)
}

/// Per-subcarrier proxies `ĝ[k]` (length `M L_r`) from per-frame estimates
/// (`K × L_r` each), frames stacked in order.
pub fn stack_proxies(estimates: &[CMat]) -> Result<CMat> {
    let Some(first) = estimates.first() else {
        return Err(Error::Config("no frame estimates to stack".into()));
    };
    let k = first.nrows();
    let rows: usize = estimates.iter().map(|e| e.ncols()).sum();
    let mut out = CMat::zeros(rows, k);
    let mut o = 0;
    for e in estimates {
        if e.nrows() != k {
            return Err(Error::Dimension("frame estimates disagree on K".into()));
        }
        out.view_mut((o, 0), (e.ncols(), k)).copy_from(&e.transpose());
        o += e.ncols();
    }
    Ok(out)
}

/// Cholesky-averaged covariance: `D_v = (1/K) Σ_k chol(C_k)` and
/// `C_avg = D_v* D_v`. Returns `(C_avg, D_v)`.
pub fn average_covariance(covs: &[CMat]) -> Result<(CMat, CMat)> {
    let Some(first) = covs.first() else {
        return Err(Error::Config("no covariances to average".into()));
    };
    let n = first.nrows();
    let mut d = CMat::zeros(n, n);
    for c in covs {
        if c.shape() != (n, n) {
            return Err(Error::Dimension("covariances differ in size".into()));
        }
        d += upper_cholesky(c)?;
    }
    d /= C64::new(covs.len() as f64, 0.0);
    Ok((d.adjoint() * &d, d))
}

/// SNR-weighted combination of per-subcarrier bounds:
/// `ε = Σ_{m,k} trace(Γ̂ C[m][k]) / Σ_{m,k} trace(Γ̂)`.
///
/// `bounds[m][k]` is `L_r × L_r`; `snr[m]` is `K × L_r` with `γ̂_i[k]`.
pub fn epsilon_rule(bounds: &[Vec<CMat>], snr: &[crate::linalg::RMat]) -> Result<f64> {
    if bounds.len() != snr.len() {
        return Err(Error::Dimension("bounds and SNR estimates cover different frames".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (fb, gamma) in bounds.iter().zip(snr) {
        if fb.len() != gamma.nrows() {
            return Err(Error::Dimension("bounds and SNR estimates cover different K".into()));
        }
        for (k, c) in fb.iter().enumerate() {
            if c.nrows() != gamma.ncols() {
                return Err(Error::Dimension("bound and SNR chain counts differ".into()));
            }
            for i in 0..c.nrows() {
                let w = gamma[(k, i)];
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::Numerical(format!("invalid SNR weight {w}")));
                }
                num += w * c[(i, i)].re;
                den += w;
            }
        }
    }
    if den <= 0.0 {
        return Err(Error::Numerical("ε undefined: all SNR weights are zero".into()));
    }
    Ok(num / den)
}

/// Converts a per-entry error variance `ε` to the scale of the whitened
/// residual `(1/K) Σ_k ‖D_v^{-*} r[k]‖²`.
///
/// Unwhitened noise of per-entry variance `v` has whitened energy
/// `n v / (trace(C_avg)/n)` over `n = M L_r` entries.
pub fn whitened_epsilon(epsilon: f64, c_avg: &CMat) -> f64 {
    let n = c_avg.nrows() as f64;
    let mean_var = c_avg.trace().re / n;
    n * epsilon / mean_var
}

/// Whitening applied to the proxies and the sensing matrix.
#[derive(Debug, Clone)]
pub enum Whitening {
    /// One factor `D_v` for all subcarriers.
    Averaged(CMat),
    /// Exact per-subcarrier factors `D_v[k]`; `K` times costlier.
    PerSubcarrier(Vec<CMat>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwOmpConfig {
    pub max_atoms: usize,
    /// Correlate on every `n`-th subcarrier only (`None`: all subcarriers).
    pub subcarrier_stride: Option<usize>,
    /// Prune atoms whose mean gain power falls below this fraction of the
    /// strongest atom after the greedy stage.
    pub gain_threshold: Option<f64>,
}

impl Default for SwOmpConfig {
    fn default() -> Self {
        Self { max_atoms: 32, subcarrier_stride: None, gain_threshold: None }
    }
}

/// Sparse angular channel shared across subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannelEstimate {
    /// Selected dictionary columns in selection order.
    pub columns: Vec<usize>,
    /// `(rx_grid, tx_grid)` of each selected column.
    pub support: Vec<(usize, usize)>,
    /// `|support| × K` gains; column `k` holds `𝗀^v[k]` on the support.
    pub gains: CMat,
    /// `(1/K) Σ_k ‖whitened residual[k]‖²` before the first and after each selection.
    pub residual_trace: Vec<f64>,
    /// Stopped because the residual fell below `ε`.
    pub reached_epsilon: bool,
}

fn whiten(d: &CMat, x: &CMat) -> Result<CMat> {
    d.adjoint()
        .solve_lower_triangular(x)
        .ok_or_else(|| Error::Numerical("whitening factor is singular".into()))
}

fn ls_fit(a: &CMat, y: &CVec) -> Result<CVec> {
    let gram = a.adjoint() * a;
    let ch = Cholesky::new(gram)
        .ok_or_else(|| Error::Numerical("selected atoms are linearly dependent".into()))?;
    Ok(ch.solve(&(a.adjoint() * y)))
}

/// SW-OMP on proxies `Y` (`M L_r × K`) with sensing matrix `Φ_w Ψ`.
pub fn sw_omp(
    proxies: &CMat,
    sensing: &CMat,
    dict: &AngularDictionary,
    whitening: &Whitening,
    epsilon: f64,
    cfg: &SwOmpConfig,
) -> Result<SparseChannelEstimate> {
    if !(epsilon >= 0.0) {
        return Err(Error::Config(format!("ε must be nonnegative, got {epsilon}")));
    }
    let (rows, k) = proxies.shape();
    if sensing.nrows() != rows || sensing.ncols() != dict.num_atoms() {
        return Err(Error::Dimension(format!(
            "sensing matrix is {:?}, expected {rows}×{}",
            sensing.shape(),
            dict.num_atoms()
        )));
    }
    // Whitened proxies and dictionaries, one per distinct whitener.
    let (y, ups): (CMat, Vec<CMat>) = match whitening {
        Whitening::Averaged(d) => (whiten(d, proxies)?, vec![whiten(d, sensing)?]),
        Whitening::PerSubcarrier(ds) => {
            if ds.len() != k {
                return Err(Error::Dimension("one whitener per subcarrier required".into()));
            }
            let mut y = CMat::zeros(rows, k);
            let mut ups = Vec::with_capacity(k);
            for (kk, d) in ds.iter().enumerate() {
                y.set_column(kk, &whiten(d, &proxies.columns(kk, 1).into_owned())?.column(0));
                ups.push(whiten(d, sensing)?);
            }
            (y, ups)
        }
    };
    let ups_at = |kk: usize| -> &CMat { if ups.len() == 1 { &ups[0] } else { &ups[kk] } };
    let norms: Vec<Vec<f64>> = ups
        .iter()
        .map(|u| (0..u.ncols()).map(|j| u.column(j).norm_squared()).collect())
        .collect();
    let stride = cfg.subcarrier_stride.unwrap_or(1).max(1);

    let mse = |r: &CMat| r.iter().map(|v| v.norm_sqr()).sum::<f64>() / k as f64;
    let mut residual = y.clone();
    let mut trace = vec![mse(&residual)];
    let mut columns: Vec<usize> = Vec::new();
    let mut gains = CMat::zeros(0, k);
    let mut reached = trace[0] <= epsilon;

    while !reached && columns.len() < cfg.max_atoms.min(rows) {
        let atoms = dict.num_atoms();
        let mut score = vec![0.0; atoms];
        for kk in (0..k).step_by(stride) {
            let u = ups_at(kk);
            let c = u.adjoint() * residual.column(kk);
            let nk = &norms[if ups.len() == 1 { 0 } else { kk }];
            for j in 0..atoms {
                if nk[j] > 0.0 {
                    score[j] += c[j].norm_sqr() / nk[j];
                }
            }
        }
        for &j in &columns {
            score[j] = f64::NEG_INFINITY;
        }
        let best = score
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, _)| j)
            .filter(|&j| score[j] > 0.0);
        let Some(best) = best else { break };
        columns.push(best);
        let (g, r) = refit(&y, &ups, &columns)?;
        gains = g;
        residual = r;
        let e = mse(&residual);
        trace.push(e);
        reached = e <= epsilon;
    }

    if let Some(th) = cfg.gain_threshold {
        if !columns.is_empty() {
            let power: Vec<f64> =
                (0..columns.len()).map(|a| gains.row(a).norm_squared() / k as f64).collect();
            let pmax = power.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> =
                (0..columns.len()).filter(|&a| power[a] >= th * pmax).map(|a| columns[a]).collect();
            if keep.len() < columns.len() {
                columns = keep;
                let (g, r) = refit(&y, &ups, &columns)?;
                gains = g;
                trace.push(mse(&r));
            }
        }
    }

    Ok(SparseChannelEstimate {
        support: columns.iter().map(|&j| dict.pair(j)).collect(),
        columns,
        gains,
        residual_trace: trace,
        reached_epsilon: reached,
    })
}

fn refit(y: &CMat, ups: &[CMat], columns: &[usize]) -> Result<(CMat, CMat)> {
    let k = y.ncols();
    let mut gains = CMat::zeros(columns.len(), k);
    let mut residual = y.clone();
    let sub = |u: &CMat| CMat::from_fn(u.nrows(), columns.len(), |r, c| u[(r, columns[c])]);
    if ups.len() == 1 {
        let a = sub(&ups[0]);
        let ch = Cholesky::new(a.adjoint() * &a)
            .ok_or_else(|| Error::Numerical("selected atoms are linearly dependent".into()))?;
        let x = ch.solve(&(a.adjoint() * y));
        residual -= &a * &x;
        gains = x;
    } else {
        for kk in 0..k {
            let a = sub(&ups[kk]);
            let yk = y.column(kk).into_owned();
            let x = ls_fit(&a, &yk)?;
            residual.set_column(kk, &(yk - &a * &x));
            gains.set_column(kk, &x);
        }
    }
    Ok((gains, residual))
}

/// `𝗛̂[k] = Ã_R G^v[k] Ã_T*` over the support.
pub fn reconstruct_channel(est: &SparseChannelEstimate, dict: &AngularDictionary) -> Vec<CMat> {
    let nr = dict.rx_atoms.nrows();
    let nt = dict.tx_atoms.nrows();
    let k = est.gains.ncols();
    (0..k)
        .map(|kk| {
            let mut h = CMat::zeros(nr, nt);
            for (a, &(r, t)) in est.support.iter().enumerate() {
                let g = est.gains[(a, kk)];
                h += dict.rx_atoms.column(r) * dict.tx_atoms.column(t).adjoint() * g;
            }
            h
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RMat;

    #[test]
    fn identical_covariances_average_to_themselves() {
        let a = CMat::from_fn(3, 3, |i, j| C64::new((i * 2 + j) as f64 * 0.3, i as f64 - j as f64));
        let c = a.adjoint() * &a + CMat::identity(3, 3);
        let (avg, _) = average_covariance(&[c.clone(), c.clone(), c.clone()]).unwrap();
        assert!((avg - c).norm() < 1e-12);
    }

    #[test]
    fn diagonal_covariances_average_square_roots() {
        let da = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(4.0, 0.0), C64::new(1.0, 0.0)]));
        let db = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(9.0, 0.0)]));
        let (avg, _) = average_covariance(&[da, db]).unwrap();
        assert!((avg[(0, 0)].re - 2.25).abs() < 1e-12);
        assert!((avg[(1, 1)].re - 4.0).abs() < 1e-12);
        assert!(avg[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn uniform_bounds_give_their_level() {
        let c = CMat::identity(2, 2) * C64::new(0.3, 0.0);
        let bounds = vec![vec![c.clone(); 3]; 2];
        let snr = vec![RMat::from_fn(3, 2, |k, i| (k + 2 * i + 1) as f64); 2];
        assert!((epsilon_rule(&bounds, &snr).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_are_rejected() {
        let bounds = vec![vec![CMat::identity(2, 2); 2]];
        let snr = vec![RMat::zeros(2, 2)];
        assert!(epsilon_rule(&bounds, &snr).is_err());
    }

    #[test]
    fn stacking_keeps_frame_order() {
        let a = CMat::from_fn(3, 2, |k, i| C64::new(k as f64, i as f64));
        let b = CMat::from_fn(3, 2, |k, i| C64::new(10.0 + k as f64, i as f64));
        let y = stack_proxies(&[a.clone(), b.clone()]).unwrap();
        for k in 0..3 {
            assert_eq!(y[(0, k)], a[(k, 0)]);
            assert_eq!(y[(3, k)], b[(k, 1)]);
        }
    }
}
