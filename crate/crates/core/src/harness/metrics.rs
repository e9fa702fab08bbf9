//! Error metrics, spectral efficiency and trial aggregation.

use nalgebra::SVD;

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

/// Lowest reportable NMSE, dB.
pub const NMSE_FLOOR_DB: f64 = -200.0;

/// `10 log10(num / den)` floored at [`NMSE_FLOOR_DB`].
pub fn ratio_db(num: f64, den: f64) -> Result<f64> {
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::Numerical(format!("NMSE reference energy must be positive, got {den}")));
    }
    if !(num >= 0.0) {
        return Err(Error::Numerical(format!("invalid error energy {num}")));
    }
    Ok((10.0 * (num / den).log10()).max(NMSE_FLOOR_DB))
}

/// `‖est − truth‖² / ‖truth‖²` in dB.
pub fn nmse_db(est: &[C64], truth: &[C64]) -> Result<f64> {
    let (num, den) = error_energy(est, truth)?;
    ratio_db(num, den)
}

/// NMSE of real vectors after removing each vector's mean, in dB.
pub fn nmse_mean_removed_db(est: &[f64], truth: &[f64]) -> Result<f64> {
    let (num, den) = mean_removed_energy(est, truth)?;
    ratio_db(num, den)
}

/// `(‖est − truth‖², ‖truth‖²)`.
pub fn error_energy(est: &[C64], truth: &[C64]) -> Result<(f64, f64)> {
    if est.len() != truth.len() {
        return Err(Error::Dimension("estimate and truth lengths differ".into()));
    }
    let num = est.iter().zip(truth).map(|(e, t)| (e - t).norm_sqr()).sum();
    let den = truth.iter().map(|t| t.norm_sqr()).sum();
    Ok((num, den))
}

/// Error and reference energies of two real sequences with their means removed.
pub fn mean_removed_energy(est: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if est.len() != truth.len() {
        return Err(Error::Dimension("estimate and truth lengths differ".into()));
    }
    let e = crate::sync::mean_removed(est);
    let t = crate::sync::mean_removed(truth);
    let num = e.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum();
    let den = t.iter().map(|b| b * b).sum();
    Ok((num, den))
}

/// Achieved rate of precoder `f` and combiner `w` on channel `h`:
/// `log2 det(I + W*HFF*H*W (W*W)^{-1} / (N_s σ²))`.
pub fn beam_rate(h: &CMat, f: &CMat, w: &CMat, noise_var: f64) -> Result<f64> {
    let ns = f.ncols();
    if w.ncols() != ns {
        return Err(Error::Dimension("precoder and combiner stream counts differ".into()));
    }
    let gram = w.adjoint() * w;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Numerical("combiner has dependent columns".into()))?;
    let e = w.adjoint() * h * f;
    let m = CMat::identity(ns, ns) + &e * e.adjoint() * &gram_inv / C64::new(ns as f64 * noise_var, 0.0);
    let det = m.determinant();
    Ok(det.re.log2())
}

/// Spectral efficiency of SVD beams designed on `h_hat` and evaluated on `h`,
/// averaged over subcarriers, bits/s/Hz.
///
/// Subcarriers where `h_hat[k]` has rank below `n_s` use the available rank;
/// a zero estimate falls back to the first `n_s` singular vectors.
pub fn spectral_efficiency(h_hat: &[CMat], h: &[CMat], n_s: usize, noise_var: f64) -> Result<f64> {
    if h_hat.len() != h.len() || h.is_empty() {
        return Err(Error::Dimension("estimated and true channels cover different subcarriers".into()));
    }
    if !(noise_var > 0.0) {
        return Err(Error::Config("spectral efficiency needs a positive noise variance".into()));
    }
    let mut total = 0.0;
    for (hh, ht) in h_hat.iter().zip(h) {
        if hh.shape() != ht.shape() {
            return Err(Error::Dimension("estimated and true channel shapes differ".into()));
        }
        if n_s > ht.nrows().min(ht.ncols()) {
            return Err(Error::Config("N_s exceeds min(N_t, N_r)".into()));
        }
        let svd = SVD::new(hh.clone(), true, true);
        let (u, vt) = (svd.u.expect("requested U"), svd.v_t.expect("requested V*"));
        let s = &svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let tol = s.len().max(1) as f64 * f64::EPSILON * s.max();
        let rank = s.iter().filter(|&&v| v > tol).count();
        let streams = if rank == 0 { n_s } else { rank.min(n_s) };
        let cols = &order[..streams];
        let w = CMat::from_fn(u.nrows(), streams, |r, c| u[(r, cols[c])]);
        let f = CMat::from_fn(vt.ncols(), streams, |r, c| vt[(cols[c], r)].conj());
        total += beam_rate(ht, &f, &w, noise_var)?;
    }
    Ok(total / h.len() as f64)
}

/// Mean over trials with its standard error (`None` for a single trial).
pub fn mean_stderr(x: &[f64]) -> (f64, Option<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, None);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Ratio of trial means `Σ num / Σ den` in dB with a delta-method standard
/// error, from per-trial `(num, den)` sums.
pub fn ratio_of_means_db(pairs: &[(f64, f64)]) -> Result<(f64, Option<f64>)> {
    let n = pairs.len() as f64;
    let num = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let den = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let value = ratio_db(num, den)?;
    if pairs.len() < 2 || num <= 0.0 {
        return Ok((value, None));
    }
    let r = num / den;
    let var = pairs.iter().map(|p| (p.0 - r * p.1).powi(2)).sum::<f64>() / (n - 1.0);
    let se_r = (var / n).sqrt() / den;
    Ok((value, Some(10.0 / std::f64::consts::LN_10 * se_r / r)))
}
