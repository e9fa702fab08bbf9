//! Per-frame signal model `r_i = Ω P F⊗* S 𝗀_i + v` on the CP-stripped samples.

use std::f64::consts::PI;

use crate::impairments::SymbolLayout;
use crate::linalg::{dft_unitary, expj, CMat, CVec, RVec, C64};
use crate::training::Pilots;

/// Precomputed operators of one frame.
#[derive(Debug, Clone)]
pub struct FrameModel {
    pub layout: SymbolLayout,
    pub pilots: Pilots,
    /// Unitary DFT `F`.
    pub f: CMat,
    /// Unitary inverse DFT `F*`.
    pub fi: CMat,
    /// Absolute sample index of each stacked sample, `k0[t] + n`.
    pub idx: Vec<f64>,
}

impl FrameModel {
    pub fn new(layout: SymbolLayout, pilots: &Pilots) -> Self {
        let f = dft_unitary(layout.subcarriers);
        Self {
            fi: f.adjoint(),
            f,
            idx: layout.indices().into_iter().map(|p| p as f64).collect(),
            layout,
            pilots: pilots.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.layout.subcarriers
    }

    pub fn ntr(&self) -> usize {
        self.layout.symbols
    }

    /// Number of stacked samples `K N_tr`.
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    /// `F⊗* S 𝗀_i` for every chain, `K N_tr × L_r`.
    pub fn clean(&self, g: &CMat) -> CMat {
        let k = self.k();
        let mut out = CMat::zeros(self.len(), g.ncols());
        for (t, st) in self.pilots.symbols.iter().enumerate() {
            let sg = CMat::from_fn(k, g.ncols(), |r, c| st[r] * g[(r, c)]);
            out.view_mut((t * k, 0), (k, g.ncols())).copy_from(&(&self.fi * sg));
        }
        out
    }

    /// Diagonal of `Ω(Δf) P(θ)`: `exp(j(2πΔf (k0[t]+n) + θ_t[n]))`.
    pub fn rotation(&self, cfo: f64, theta: &RVec) -> CVec {
        CVec::from_fn(self.len(), |p, _| expj(2.0 * PI * cfo * self.idx[p] + theta[p]))
    }

    /// `Ω P F⊗* S 𝗀_i`.
    pub fn predict(&self, cfo: f64, theta: &RVec, g: &CMat) -> CMat {
        let mut x = self.clean(g);
        let rot = self.rotation(cfo, theta);
        for (p, mut row) in x.row_iter_mut().enumerate() {
            row *= rot[p];
        }
        x
    }

    /// `F⊗ P* Ω* r_i`: derotate and return to the frequency domain.
    pub fn derotate_freq(&self, r: &CMat, cfo: f64, theta: &RVec) -> CMat {
        let k = self.k();
        let rot = self.rotation(cfo, theta);
        let mut out = CMat::zeros(self.len(), r.ncols());
        for t in 0..self.ntr() {
            let blk = CMat::from_fn(k, r.ncols(), |n, c| r[(t * k + n, c)] * rot[t * k + n].conj());
            out.view_mut((t * k, 0), (k, r.ncols())).copy_from(&(&self.f * blk));
        }
        out
    }

    /// Least-squares channels `(S*S)^{-1} S* y` from frequency-domain samples `y`.
    pub fn ls_channels(&self, y: &CMat) -> CMat {
        let k = self.k();
        let gram = self.pilots.gram_diag();
        CMat::from_fn(k, y.ncols(), |kk, c| {
            let acc: C64 = self
                .pilots
                .symbols
                .iter()
                .enumerate()
                .map(|(t, st)| st[kk].conj() * y[(t * k + kk, c)])
                .sum();
            acc / gram[kk]
        })
    }

    /// `Σ_i ‖r_i − Ω P F⊗* S 𝗀_i‖²`.
    pub fn residual(&self, r: &CMat, cfo: f64, theta: &RVec, g: &CMat) -> f64 {
        (r - self.predict(cfo, theta, g)).iter().map(|v| v.norm_sqr()).sum()
    }
}
