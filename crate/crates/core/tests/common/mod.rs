//! Shared fixtures and oracle checks for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use mmwave_sync::channel::{build_dictionary, dft_of_taps, ArrayGeometry};
use mmwave_sync::crlb::{channel_param, fim_blocks};
use mmwave_sync::csrec::{average_covariance, reconstruct_channel, sensing_matrix, stack_proxies, sw_omp, SwOmpConfig, Whitening};
use mmwave_sync::harness::golden::{flat_three_ray_channel, generate_golden, golden_link, three_ray_channel};
use mmwave_sync::harness::{run_montecarlo, ExperimentConfig, RunOptions};
use mmwave_sync::impairments::SymbolLayout;
use mmwave_sync::linalg::{CMat, RMat, RVec, C64};
use mmwave_sync::rng::{complex_normal, rng_from};
use mmwave_sync::scenario::{draw_frame, draw_link_channel, LinkConfig};
use mmwave_sync::sync::pn::{ekf_rts_pn_update, lmmse_pn_update, CpInflation, LinearSurrogate, PnMeasurement, PnPrior, RotatedSignal};
use mmwave_sync::sync::{estimate_to, run_em, Algorithm, EmConfig, FrameModel, InitObjective};
use mmwave_sync::training::{build_zc_pilots, PilotConfig, TrainingBeams};

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

pub fn load_config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).unwrap()
}

pub fn nmse_db(est: &[C64], truth: &[C64]) -> f64 {
    let num: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = truth.iter().map(|b| b.norm_sqr()).sum();
    10.0 * (num / den).log10()
}

/// Frame model with `K` subcarriers and `N_tr` symbols, CP of 2, first useful sample 7.
pub fn model(k: usize, ntr: usize) -> FrameModel {
    let cfg = PilotConfig { subcarriers: k, symbols: ntr, cp_len: 2, ..PilotConfig::default() };
    let pilots = build_zc_pilots(&cfg, 0).unwrap();
    FrameModel::new(SymbolLayout { subcarriers: k, symbols: ntr, cp_len: 2, first: 7 }, &pilots)
}

pub fn channel(k: usize, lr: usize, seed: u64) -> CMat {
    let mut rng = rng_from(seed);
    CMat::from_fn(k, lr, |_, _| complex_normal(&mut rng, 1.0) + C64::new(0.2, 0.0))
}

/// Mean of all chains as a function of the stacked real parameter vector
/// `[Δf, (α, β) per (i, k), θ]`, flattened chain-major.
pub fn mean(m: &FrameModel, xi: &[f64], k: usize, lr: usize) -> Vec<C64> {
    let g = CMat::from_fn(k, lr, |kk, i| {
        let q = 1 + channel_param(i, kk, k);
        C64::from_polar(xi[q], xi[q + 1])
    });
    let theta = RVec::from_iterator(m.len(), xi[1 + 2 * k * lr..].iter().cloned());
    let mu = m.predict(xi[0], &theta, &g);
    (0..lr).flat_map(|i| mu.column(i).iter().cloned().collect::<Vec<_>>()).collect()
}

pub fn params(g: &CMat, cfo: f64, theta: &[f64]) -> Vec<f64> {
    let k = g.nrows();
    let mut xi = vec![0.0; 1 + 2 * k * g.ncols()];
    xi[0] = cfo;
    for i in 0..g.ncols() {
        for kk in 0..k {
            let q = 1 + channel_param(i, kk, k);
            xi[q] = g[(kk, i)].norm();
            xi[q + 1] = g[(kk, i)].arg();
        }
    }
    xi.extend_from_slice(theta);
    xi
}

/// Central-difference Jacobian `∂μ/∂ξ`, one column per parameter.
pub fn jacobian(m: &FrameModel, xi: &[f64], k: usize, lr: usize) -> CMat {
    let n = m.len() * lr;
    let mut jac = CMat::zeros(n, xi.len());
    for q in 0..xi.len() {
        let h = if q == 0 { 1e-7 } else { 1e-6 };
        let mut up = xi.to_vec();
        let mut dn = xi.to_vec();
        up[q] += h;
        dn[q] -= h;
        let (a, b) = (mean(m, &up, k, lr), mean(m, &dn, k, lr));
        for p in 0..n {
            jac[(p, q)] = (a[p] - b[p]) / (2.0 * h);
        }
    }
    jac
}

pub fn jacobian_fim(jac: &CMat, sigma2: f64) -> RMat {
    (jac.adjoint() * jac).map(|v| 2.0 / sigma2 * v.re)
}

/// Largest entry error scaled by `√(a_ii a_jj)`.
pub fn scaled_max_error(a: &RMat, b: &RMat) -> f64 {
    let scale = RVec::from_fn(a.nrows(), |i, _| a[(i, i)].abs().max(b[(i, i)].abs()).sqrt());
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let s = (scale[i] * scale[j]).max(1e-300);
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / s);
        }
    }
    worst
}

/// Closed-form FIM against the FIM of a finite-difference Jacobian on a tiny frame.
pub fn fim_matches_finite_differences() -> Check {
    let (k, ntr, lr) = (4, 2, 2);
    let m = model(k, ntr);
    let g = channel(k, lr, 3);
    let sigma2 = 0.5;
    let f = fim_blocks(&m, &g, sigma2).map_err(|e| e.to_string())?.to_dense();
    let mut rng = rng_from(21);
    let theta: Vec<f64> = (0..m.len()).map(|_| 0.2 * complex_normal(&mut rng, 1.0).re).collect();
    let oracle = jacobian_fim(&jacobian(&m, &params(&g, 0.004, &theta), k, lr), sigma2);
    let err = scaled_max_error(&f, &oracle);
    ensure(err <= 0.03, format!("largest scaled entry error {err:.1e}"))
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> (f64, f64) {
    let (a, b, c) = (f(x - h), f(x), f(x + h));
    ((c - a) / (2.0 * h), (c - 2.0 * b + a) / (h * h))
}

/// Analytic derivatives against central differences: the CFO initialization
/// criterion and the phase-noise measurement maps.
pub fn derivatives_match_central_differences() -> Check {
    let m = model(16, 2);
    let g = channel(16, 2, 5);
    let mut rng = rng_from(8);
    let truth = m.predict(0.003, &RVec::zeros(m.len()), &g);
    let r = truth.map(|v| v + 0.1 * complex_normal(&mut rng, 1.0));
    let mut worst: f64 = 0.0;
    for taps in [None, Some(4)] {
        let obj = InitObjective::new(&m, taps);
        let x = 0.0021;
        let (j0, j1, j2) = obj.eval_derivatives(&m, &r, x);
        let span = 2.0 * std::f64::consts::PI * m.idx.iter().cloned().fold(0.0, f64::max);
        let v = obj.eval(&m, &r, x);
        worst = worst.max((j0 - v).abs() / v);
        let (d1, _) = central(|c| obj.eval(&m, &r, c), x, 1e-7);
        let (_, d2) = central(|c| obj.eval(&m, &r, c), x, 1e-5);
        worst = worst.max((j1 - d1).abs() / (span * v));
        worst = worst.max((j2 - d2).abs() / (span * span * v));
    }
    let a = CMat::from_fn(6, 2, |_, _| complex_normal(&mut rng, 1.0));
    let lin = LinearSurrogate { b: a.clone(), c: a.map(|v| v * C64::new(0.3, -0.7)) };
    let rot = RotatedSignal { a };
    for p in 0..6 {
        for i in 0..2 {
            for theta in [-0.4, 0.0, 0.9] {
                let h = 1e-6;
                for meas in [&rot as &dyn PnMeasurement, &lin] {
                    let (_, d) = meas.eval(p, i, theta);
                    let fd = (meas.eval(p, i, theta + h).0 - meas.eval(p, i, theta - h).0) / (2.0 * h);
                    worst = worst.max((d - fd).norm() / d.norm().max(1e-12));
                }
            }
        }
    }
    ensure(worst <= 1e-6, format!("largest relative error {worst:.1e}"))
}

/// Batch LMMSE and EKF-RTS coincide when the measurement is affine.
pub fn lmmse_equals_ekf_rts_on_surrogate() -> Check {
    let mut rng = rng_from(31);
    let (n, lr) = (40, 3);
    let b = CMat::from_fn(n, lr, |_, _| complex_normal(&mut rng, 1.0));
    let c = CMat::from_fn(n, lr, |_, _| complex_normal(&mut rng, 1.0));
    let lin = LinearSurrogate { b, c };
    let r = CMat::from_fn(n, lr, |_, _| complex_normal(&mut rng, 1.0));
    // Two symbols of 20 samples separated by a 4-sample CP.
    let indices: Vec<usize> = (0..n).map(|p| 10 + p + 4 * (p / 20 + 1)).collect();
    let mut worst: f64 = 0.0;
    for mode in [CpInflation::IndexGap, CpInflation::Literal] {
        let prior = PnPrior::new(0.02, indices.clone());
        let cov = prior.covariance(mode);
        let a = lmmse_pn_update(&lin, &r, &cov, &RVec::zeros(n), 0.3).map_err(|e| e.to_string())?;
        let e = ekf_rts_pn_update(&lin, &r, &prior, 0.3, mode).map_err(|e| e.to_string())?;
        worst = worst.max((&a.mean - &e.mean).amax() / a.mean.amax());
        worst = worst.max((&a.variance - &e.variance).amax() / a.variance.amax());
    }
    ensure(worst <= 1e-8, format!("largest relative difference {worst:.1e}"))
}

/// Noiseless link with an on-grid three-ray channel: exact CFO, per-frame
/// channels and sparse support. Timing is checked on the same rays without
/// delay spread, where the strongest tap is the first.
pub fn noiseless_end_to_end() -> Check {
    let mut link = golden_link();
    link.snr_db = None;
    link.pn_psd_dbc = None;
    let em = EmConfig { init_taps: Some(link.pilots.cp_len), ..EmConfig::default() };
    let ch = three_ray_channel(&link).map_err(|e| e.to_string())?;
    let flat = flat_three_ray_channel(&link).map_err(|e| e.to_string())?;
    let frames = 8;
    let mut estimates = Vec::new();
    let mut beams: Vec<TrainingBeams> = Vec::new();
    let (mut worst_cfo, mut worst_nmse): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for m in 0..frames {
        let sim = draw_frame(&link, &ch, 404, m).map_err(|e| e.to_string())?;
        let t = sim.truth();
        let probe = draw_frame(&link, &flat, 404, m).map_err(|e| e.to_string())?;
        let n0 = estimate_to(&probe.capture, &probe.frame.preamble, 0..link.max_to + 1).map_err(|e| e.to_string())?;
        if n0 != t.n0 {
            return Err(format!("frame {m}: TO {n0} vs {}", t.n0));
        }
        let est = run_em(&sim.capture, &sim.frame.pilots, n0, &link.pn_model().unwrap(), 0.0, &em, Algorithm::LmmseEm)
            .map_err(|e| e.to_string())?;
        worst_cfo = worst_cfo.max((est.cfo_hat - t.cfo).abs());
        worst_nmse = worst_nmse.max(nmse_db(est.channels_hat.as_slice(), sim.equivalent.freq.as_slice()));
        estimates.push(est.channels_hat);
        beams.push(sim.frame.beams);
    }
    let (gr, gt) = (2 * link.beams.nr, 2 * link.beams.nt);
    let dict = build_dictionary(&ArrayGeometry::ula(link.beams.nt), &ArrayGeometry::ula(link.beams.nr), gt, gr)
        .map_err(|e| e.to_string())?;
    let refs: Vec<&TrainingBeams> = beams.iter().collect();
    let sensing = sensing_matrix(&refs, &dict).map_err(|e| e.to_string())?;
    let proxies = stack_proxies(&estimates).map_err(|e| e.to_string())?;
    let n = proxies.nrows();
    let cfg = SwOmpConfig { max_atoms: 3, ..SwOmpConfig::default() };
    let est = sw_omp(&proxies, &sensing, &dict, &Whitening::Averaged(CMat::identity(n, n)), 0.0, &cfg)
        .map_err(|e| e.to_string())?;
    let got: BTreeSet<(usize, usize)> = est.support.iter().cloned().collect();
    let want: BTreeSet<(usize, usize)> = [(1, 3), (gr / 2 + 1, gt / 4), (gr - 2, gt - 5)].into_iter().collect();
    let h_hat = reconstruct_channel(&est, &dict);
    let flat = |hs: &[CMat]| hs.iter().flat_map(|h| h.iter().copied()).collect::<Vec<_>>();
    let mimo = nmse_db(&flat(&h_hat), &flat(&ch.freq_response));
    ensure(
        worst_cfo <= 1e-8 && worst_nmse <= -100.0 && got == want,
        format!(
            "CFO error {worst_cfo:.1e}, channel NMSE {worst_nmse:.1} dB, support {got:?}, MIMO NMSE {mimo:.1} dB"
        ),
    )
}

/// Averaging identical covariances returns them unchanged.
pub fn cholesky_average_idempotent() -> Check {
    let mut rng = rng_from(41);
    let a = CMat::from_fn(5, 5, |_, _| complex_normal(&mut rng, 1.0));
    let c = a.adjoint() * &a + CMat::identity(5, 5) * C64::new(0.1, 0.0);
    let (avg, d) = average_covariance(&[c.clone(), c.clone(), c.clone()]).map_err(|e| e.to_string())?;
    let err = (&avg - &c).norm() / c.norm();
    let ferr = (d.adjoint() * &d - &c).norm() / c.norm();
    ensure(err <= 1e-12 && ferr <= 1e-12, format!("average error {err:.1e}, factor error {ferr:.1e}"))
}

/// `D_w*D_w = W_tr*W_tr`, and combined-then-whitened white noise has identity
/// covariance (1e4 draws, 5%).
pub fn whitening_identity() -> Check {
    let link = LinkConfig::default();
    let ch = draw_link_channel(&link, 5).map_err(|e| e.to_string())?;
    let sim = draw_frame(&link, &ch, 5, 0).map_err(|e| e.to_string())?;
    let b = &sim.frame.beams;
    let err = (b.d_w.adjoint() * &b.d_w - b.w_tr.adjoint() * &b.w_tr).norm() / b.w_tr.norm_squared();
    let bw = b.whitened_combiner();
    let (lr, nr) = bw.shape();
    let draws = 10_000;
    let mut rng = rng_from(6);
    let noise = CMat::from_fn(nr, draws, |_, _| complex_normal(&mut rng, 1.0));
    let y = &bw * noise;
    let cov = (&y * y.adjoint()) / C64::new(draws as f64, 0.0);
    let dev = (cov - CMat::identity(lr, lr)).iter().map(|v| v.norm()).fold(0.0, f64::max);
    ensure(err <= 1e-12 && dev <= 0.05, format!("D_w*D_w error {err:.1e}, sample covariance deviation {dev:.3}"))
}

/// Stored frequency response against the direct sum `Σ_d H[d] e^{-j2πkd/K}`.
pub fn dft_consistency() -> Check {
    let link = LinkConfig::default();
    let ch = draw_link_channel(&link, 9).map_err(|e| e.to_string())?;
    let k = ch.num_subcarriers();
    let mut worst: f64 = 0.0;
    for (kk, hk) in ch.freq_response.iter().enumerate() {
        let mut direct = CMat::zeros(hk.nrows(), hk.ncols());
        for (d, hd) in ch.taps.iter().enumerate() {
            let w = C64::from_polar(1.0, -2.0 * std::f64::consts::PI * ((kk * d) % k) as f64 / k as f64);
            direct += hd * w;
        }
        worst = worst.max((&direct - hk).norm() / hk.norm());
    }
    let via_fn = dft_of_taps(&ch.taps, k);
    let fn_err = via_fn.iter().zip(&ch.freq_response).map(|(a, b)| (a - b).norm() / b.norm()).fold(0.0, f64::max);
    ensure(worst <= 1e-10 && fn_err <= 1e-10, format!("direct-sum error {worst:.1e}, transform error {fn_err:.1e}"))
}

/// Repeated fixture generation and a repeated small sweep are bitwise equal.
pub fn determinism() -> Check {
    let a = serde_json::to_string(&generate_golden(3).map_err(|e| e.to_string())?).unwrap();
    let b = serde_json::to_string(&generate_golden(3).map_err(|e| e.to_string())?).unwrap();
    let mut cfg = ExperimentConfig::desk();
    cfg.trials = 2;
    cfg.sweep.snr_db = vec![Some(0.0), Some(10.0)];
    let x = run_montecarlo(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    let y = run_montecarlo(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    let same_rows = x.rows.len() == y.rows.len()
        && x.rows.iter().zip(&y.rows).all(|(p, q)| p.value.to_bits() == q.value.to_bits() && p == q);
    ensure(a == b && same_rows, format!("fixture {} bytes, {} sweep rows", a.len(), x.rows.len()))
}

pub fn oracle_suite() -> Vec<(&'static str, Check)> {
    vec![
        ("fim-finite-differences", fim_matches_finite_differences()),
        ("derivatives-central-differences", derivatives_match_central_differences()),
        ("noiseless-end-to-end", noiseless_end_to_end()),
        ("lmmse-equals-ekf-rts", lmmse_equals_ekf_rts_on_surrogate()),
        ("cholesky-average-idempotence", cholesky_average_idempotent()),
        ("whitening-identity", whitening_identity()),
        ("dft-consistency", dft_consistency()),
        ("determinism", determinism()),
    ]
}
