//! Dense complex linear-algebra helpers shared by the estimators and bounds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// `exp(j x)`.
#[inline]
pub fn expj(x: f64) -> C64 {
    C64::from_polar(1.0, x)
}

/// Unitary DFT matrix, `F[k, n] = exp(-j 2π k n / K) / √K`.
pub fn dft_unitary(k: usize) -> CMat {
    let s = 1.0 / (k as f64).sqrt();
    CMat::from_fn(k, k, |r, c| expj(-2.0 * PI * ((r * c) % k) as f64 / k as f64) * s)
}

/// Unitary inverse DFT matrix (`F*`).
pub fn idft_unitary(k: usize) -> CMat {
    dft_unitary(k).adjoint()
}

/// First `l` columns of the unnormalized DFT: `F1[k, d] = exp(-j 2π k d / K)`.
///
/// Maps `l` time-domain taps to `K` subcarrier gains with the same convention
/// as the equivalent-channel frequency response.
pub fn dft_taps(k: usize, l: usize) -> CMat {
    CMat::from_fn(k, l, |r, c| expj(-2.0 * PI * ((r * c) % k) as f64 / k as f64))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for j in 0..ac {
        for i in 0..ar {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            let mut blk = out.view_mut((i * br, j * bc), (br, bc));
            blk.zip_apply(b, |o, v| *o = s * v);
        }
    }
    out
}

/// Upper-triangular `D` with `D* D = C` for Hermitian positive-definite `C`.
pub fn upper_cholesky(c: &CMat) -> Result<CMat> {
    let chol = Cholesky::new(c.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(chol.l().adjoint())
}

/// Cholesky factorization of a real symmetric matrix, retrying with diagonal
/// jitter `rel · trace / n` (growing tenfold per retry) when it fails.
///
/// Returns the factorization and the jitter that was finally added.
pub fn cholesky_jitter(a: &RMat, rel: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok((ch, 0.0));
    }
    let n = a.nrows().max(1) as f64;
    let scale = (a.trace().abs() / n).max(f64::MIN_POSITIVE);
    let mut jitter = rel * scale;
    for _ in 0..8 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "Cholesky failed after jitter up to {jitter:.3e}"
    )))
}

/// Complex counterpart of [`cholesky_jitter`].
pub fn cholesky_jitter_c(a: &CMat, rel: f64) -> Result<(Cholesky<C64, Dyn>, f64)> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok((ch, 0.0));
    }
    let n = a.nrows().max(1) as f64;
    let scale = (a.trace().re.abs() / n).max(f64::MIN_POSITIVE);
    let mut jitter = rel * scale;
    for _ in 0..8 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += C64::new(jitter, 0.0);
        }
        if let Some(ch) = Cholesky::new(b) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "Cholesky failed after jitter up to {jitter:.3e}"
    )))
}

/// Inverse of a real symmetric positive-definite matrix via Cholesky with jitter.
pub fn spd_inverse(a: &RMat, rel: f64) -> Result<(RMat, f64)> {
    let (ch, j) = cholesky_jitter(a, rel)?;
    Ok((ch.inverse(), j))
}

/// Reciprocal 1-norm condition estimate from an explicit inverse.
pub fn condition_1norm(a: &RMat, inv: &RMat) -> f64 {
    let norm1 = |m: &RMat| {
        (0..m.ncols())
            .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    norm1(a) * norm1(inv)
}

/// Symmetrize in place: `A ← (A + Aᵀ)/2`.
pub fn symmetrize(a: &mut RMat) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Squared Frobenius norm of a complex matrix.
pub fn fro2(a: &CMat) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Smallest eigenvalue of a real symmetric matrix.
pub fn min_eigenvalue(a: &RMat) -> f64 {
    a.clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Real vector as a complex column.
pub fn to_complex(v: &RVec) -> CVec {
    v.map(|x| C64::new(x, 0.0))
}
