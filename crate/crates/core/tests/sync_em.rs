//! Timing, CFO, channel and phase-noise estimator oracles.

mod common;

use mmwave_sync::harness::golden::flat_three_ray_channel;
use mmwave_sync::impairments::{propagate, ImpairmentTruth, PnModel};
use mmwave_sync::linalg::{dft_taps, dft_unitary, kron, CMat, RMat, RVec, C64};
use mmwave_sync::rng::{complex_normal, rng_from};
use mmwave_sync::scenario::{draw_frame, draw_link_channel, LinkConfig};
use mmwave_sync::sync::cfo::{cfo_criterion, cfo_grid, init_cfo_coarse};
use mmwave_sync::sync::pn::{ekf_rts_pn_update, lmmse_pn_update, CpInflation, PnPrior, RotatedSignal};
use mmwave_sync::sync::{cfo_newton_step, estimate_to, ml_channel_update, run_em, Algorithm, EmConfig, InitObjective};
use mmwave_sync::training::build_frame;

fn noiseless_link() -> LinkConfig {
    LinkConfig { snr_db: None, pn_psd_dbc: None, ..LinkConfig::default() }
}

#[test]
fn noiseless_em_recovers_cfo_and_channel() {
    let cfg = noiseless_link();
    let ch = draw_link_channel(&cfg, 7).unwrap();
    let f = draw_frame(&cfg, &ch, 7, 0).unwrap();
    let em = EmConfig { init_taps: Some(16), ..EmConfig::default() };
    for algo in [Algorithm::LmmseEm, Algorithm::EkfRtsEm] {
        let est = run_em(&f.capture, &f.frame.pilots, f.truth().n0, &PnModel::none(), 0.0, &em, algo).unwrap();
        assert!((est.cfo_hat - f.truth().cfo).abs() < 1e-8, "{} vs {}", est.cfo_hat, f.truth().cfo);
        assert!(common::nmse_db(est.channels_hat.as_slice(), f.equivalent.freq.as_slice()) < -100.0);
    }
}

#[test]
fn impairment_free_frame_converges_immediately() {
    let mut cfg = noiseless_link();
    cfg.max_cfo = 0.0;
    let ch = draw_link_channel(&cfg, 12).unwrap();
    let f = draw_frame(&cfg, &ch, 12, 0).unwrap();
    let em = EmConfig { init_taps: Some(16), ..EmConfig::default() };
    let est = run_em(&f.capture, &f.frame.pilots, f.truth().n0, &PnModel::none(), 0.0, &em, Algorithm::LmmseEm).unwrap();
    assert!(est.iterations <= 2, "{} iterations", est.iterations);
    assert!(est.cfo_hat.abs() < 1e-10);
    assert!(common::nmse_db(est.channels_hat.as_slice(), f.equivalent.freq.as_slice()) < -100.0);
}

fn shifted_capture(n0: usize, cfo: f64) -> (mmwave_sync::training::TrainingFrame, mmwave_sync::impairments::ReceivedCapture) {
    let link = noiseless_link();
    let ch = flat_three_ray_channel(&link).unwrap();
    let frame = build_frame(5, 0, &link.beams, link.subset_fraction, &link.pilots).unwrap();
    let len = n0 + frame.frame_len() + ch.num_taps();
    let truth = ImpairmentTruth { n0, cfo, pn_path: vec![0.0; len], noise_var: 0.0 };
    let cap = propagate(&ch, &frame, &truth, 1).unwrap();
    (frame, cap)
}

#[test]
fn timing_at_zero_offset() {
    let (frame, cap) = shifted_capture(0, 0.002);
    assert_eq!(estimate_to(&cap, &frame.preamble, 0..64).unwrap(), 0);
}

#[test]
fn timing_at_shifted_offset() {
    let (frame, cap) = shifted_capture(37, -0.003);
    assert_eq!(estimate_to(&cap, &frame.preamble, 0..64).unwrap(), 37);
}

/// Full-frame matched filter over the same window, after removing the true CFO.
fn full_frame_to(cap: &mmwave_sync::impairments::ReceivedCapture, x: &[C64], window: usize) -> usize {
    let cfo = cap.truth.cfo;
    let mut r = cap.streams.clone();
    for (n, mut row) in r.row_iter_mut().enumerate() {
        row *= C64::from_polar(1.0, -2.0 * std::f64::consts::PI * cfo * n as f64);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for n0 in 0..window {
        if n0 + x.len() > r.nrows() {
            break;
        }
        let m: f64 = (0..r.ncols())
            .map(|i| x.iter().enumerate().map(|(n, s)| r[(n + n0, i)].conj() * s).sum::<C64>().norm())
            .sum();
        if m > best.1 {
            best = (n0, m);
        }
    }
    best.0
}

#[test]
fn low_snr_detection_rate_matches_full_frame_oracle() {
    let link = LinkConfig { snr_db: Some(-10.0), ..LinkConfig::default() };
    let ch = flat_three_ray_channel(&link).unwrap();
    let trials = 200;
    let (mut golay, mut full) = (0, 0);
    for m in 0..trials {
        let f = draw_frame(&link, &ch, 77, m).unwrap();
        let n0 = f.truth().n0;
        golay += usize::from(estimate_to(&f.capture, &f.frame.preamble, 0..link.max_to + 1).unwrap() == n0);
        full += usize::from(full_frame_to(&f.capture, &f.frame.transmit_stream(), link.max_to + 1) == n0);
    }
    let (a, b) = (golay as f64 / trials as f64, full as f64 / trials as f64);
    println!("Golay {a:.3}, full frame {b:.3}");
    assert!((a - b).abs() <= 0.02);
}

/// Noiseless samples of a two-tap channel on a small frame.
fn noiseless_model_capture(cfo: f64) -> (mmwave_sync::sync::FrameModel, CMat, CMat) {
    let m = common::model(8, 2);
    let g = dft_taps(8, 2) * common::channel(2, 2, 4);
    let r = m.predict(cfo, &RVec::zeros(m.len()), &g);
    (m, r, g)
}

#[test]
fn coarse_cfo_on_grid_is_exact() {
    let (m, r, _) = noiseless_model_capture(0.04);
    let obj = InitObjective::new(&m, Some(2));
    let (f, _) = init_cfo_coarse(&m, &r, &obj, 0.02, 0.1);
    assert!((f - 0.04).abs() < 1e-12, "{f}");
}

#[test]
fn coarse_cfo_off_grid_returns_nearest_grid_point_of_fine_maximum() {
    let (m, r, _) = noiseless_model_capture(0.047);
    let obj = InitObjective::new(&m, Some(2));
    let (f, _) = init_cfo_coarse(&m, &r, &obj, 0.02, 0.1);
    let fine = (-1000..=1000)
        .map(|j| j as f64 * 1e-4)
        .max_by(|a, b| obj.eval(&m, &r, *a).total_cmp(&obj.eval(&m, &r, *b)))
        .unwrap();
    let nearest = cfo_grid(0.02, 0.1).into_iter().min_by(|a, b| (a - fine).abs().total_cmp(&(b - fine).abs())).unwrap();
    assert!((fine - 0.047).abs() < 2e-4, "fine maximum {fine}");
    assert_eq!(f, nearest);
}

#[test]
fn newton_is_stationary_at_truth() {
    let (m, r, g) = noiseless_model_capture(0.003);
    let out = cfo_newton_step(&m, &r, &RVec::zeros(m.len()), &g, 0.003, 0.02, 0.5);
    assert!((out.cfo - 0.003).abs() < 1e-10);
}

#[test]
fn newton_converges_from_offset_start() {
    let (m, r, g) = noiseless_model_capture(0.003);
    let theta = RVec::zeros(m.len());
    let mut f = 0.008;
    let mut prev = cfo_criterion(&m, &r, &theta, &g, f);
    for _ in 0..3 {
        let out = cfo_newton_step(&m, &r, &theta, &g, f, 0.02, 0.5);
        let now = cfo_criterion(&m, &r, &theta, &g, out.cfo);
        if out.accepted {
            assert!(now >= prev);
        }
        f = out.cfo;
        prev = now;

    }
    assert!((f - 0.003).abs() < 1e-8, "{f}");
}

#[test]
fn channel_update_is_exact_with_known_impairments() {
    let m = common::model(16, 2);
    let g = common::channel(16, 3, 9);
    let mut rng = rng_from(2);
    let theta = RVec::from_fn(m.len(), |_, _| 0.1 * complex_normal(&mut rng, 1.0).re);
    let r = m.predict(0.0041, &theta, &g);
    let est = ml_channel_update(&m, &r, &theta, 0.0041);
    assert!((est - &g).norm() / g.norm() < 1e-10);
}

#[test]
fn channel_update_equals_pseudo_inverse() {
    let m = common::model(4, 2);
    let mut rng = rng_from(3);
    let r = CMat::from_fn(m.len(), 2, |_, _| complex_normal(&mut rng, 1.0));
    let theta = RVec::from_fn(m.len(), |_, _| complex_normal(&mut rng, 1.0).re);
    let cfo = 0.013;
    let rot = CMat::from_diagonal(&m.rotation(cfo, &theta).map(|v| v.conj()));
    let f_kron = kron(&CMat::identity(m.ntr(), m.ntr()), &dft_unitary(m.k()));
    let pinv = m.pilots.stacked().pseudo_inverse(1e-12).unwrap();
    let oracle = pinv * f_kron * rot * &r;
    let est = ml_channel_update(&m, &r, &theta, cfo);
    assert!((est - &oracle).norm() / oracle.norm() < 1e-12);
}

#[test]
fn channel_error_covariance_matches_least_squares() {
    let m = common::model(4, 2);
    let draws = 10_000;
    let mut rng = rng_from(4);
    let k = m.k();
    let mut cov = CMat::zeros(k, k);
    for _ in 0..draws {
        let r = CMat::from_fn(m.len(), 1, |_, _| complex_normal(&mut rng, 1.0));
        let e = ml_channel_update(&m, &r, &RVec::zeros(m.len()), 0.0);
        cov += &e * e.adjoint();
    }
    cov /= C64::new(draws as f64, 0.0);
    let gram = m.pilots.gram_diag();
    for a in 0..k {
        for b in 0..k {
            let want = if a == b { 1.0 / gram[a] } else { 0.0 };
            assert!((cov[(a, b)] - want).norm() <= 0.05 / gram[a], "({a},{b}) {} vs {want}", cov[(a, b)]);
        }
    }
}

#[test]
fn pn_updates_vanish_without_phase_noise() {
    let m = common::model(8, 2);
    let g = common::channel(8, 2, 1);
    let meas = RotatedSignal { a: m.predict(0.0, &RVec::zeros(m.len()), &g) };
    let r = meas.a.map(|v| v * C64::new(0.9, 0.1));
    let idx: Vec<usize> = m.idx.iter().map(|&p| p as usize).collect();
    let prior = PnPrior::new(0.0, idx);
    let a = lmmse_pn_update(&meas, &r, &prior.covariance(CpInflation::IndexGap), &RVec::zeros(m.len()), 0.1).unwrap();
    let b = ekf_rts_pn_update(&meas, &r, &prior, 0.1, CpInflation::IndexGap).unwrap();
    for post in [a, b] {
        assert!(post.mean.iter().chain(post.variance.iter()).all(|&v| v == 0.0));
    }
}

#[test]
fn lmmse_update_matches_dense_formula() {
    let m = common::model(4, 1);
    let g = common::channel(4, 1, 6);
    let a = m.predict(0.0, &RVec::zeros(m.len()), &g);
    let mut rng = rng_from(10);
    let r = a.map(|v| v + 0.3 * complex_normal(&mut rng, 1.0));
    let sigma2 = 0.09;
    let idx: Vec<usize> = m.idx.iter().map(|&p| p as usize).collect();
    let c = PnPrior::new(0.05, idx).covariance(CpInflation::IndexGap);
    let n = m.len();
    // Real composite of y = r − a ≈ j·diag(a)·θ.
    let h = RMat::from_fn(2 * n, n, |row, col| {
        if row % n != col {
            return 0.0;
        }
        let d = C64::i() * a[(col, 0)];
        if row < n { d.re } else { d.im }
    });
    let y = RVec::from_fn(2 * n, |row, _| {
        let e = r[(row % n, 0)] - a[(row % n, 0)];
        if row < n { e.re } else { e.im }
    });
    let s = &h * &c * h.transpose() + RMat::identity(2 * n, 2 * n) * (sigma2 / 2.0);
    let s_inv = s.try_inverse().unwrap();
    let mean = &c * h.transpose() * &s_inv * &y;
    let post = &c - &c * h.transpose() * &s_inv * &h * &c;
    let got = lmmse_pn_update(&RotatedSignal { a }, &r, &c, &RVec::zeros(n), sigma2).unwrap();
    assert!((&got.mean - &mean).amax() <= 1e-10 * mean.amax());
    assert!((&got.variance - post.diagonal()).amax() <= 1e-10 * post.diagonal().amax());
}

#[test]
fn converged_runs_end_within_threshold() {
    let link = LinkConfig::default();
    let ch = draw_link_channel(&link, 21).unwrap();
    let em = EmConfig { init_taps: Some(16), ..EmConfig::default() };
    for m in 0..4 {
        let f = draw_frame(&link, &ch, 21, m).unwrap();
        let t = f.truth();
        for algo in [Algorithm::LmmseEm, Algorithm::EkfRtsEm] {
            let est = run_em(&f.capture, &f.frame.pilots, t.n0, &link.pn_model().unwrap(), t.noise_var, &em, algo).unwrap();
            let tr = &est.llf_trace;
            assert_eq!(tr.len(), est.iterations + 1);
            if est.converged {
                assert!((tr[tr.len() - 1] - tr[tr.len() - 2]).abs() <= est.eta);
            }
            let best = tr.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(best <= tr[0]);
        }
    }
}

#[test]
fn global_phase_rotates_channels_only() {
    let cfg = noiseless_link();
    let ch = draw_link_channel(&cfg, 8).unwrap();
    let f = draw_frame(&cfg, &ch, 8, 0).unwrap();
    let em = EmConfig { init_taps: Some(16), ..EmConfig::default() };
    let n0 = f.truth().n0;
    let base = run_em(&f.capture, &f.frame.pilots, n0, &PnModel::none(), 0.0, &em, Algorithm::LmmseEm).unwrap();
    let c = 0.7;
    let mut rotated = f.capture.clone();
    rotated.streams *= C64::from_polar(1.0, c);
    let est = run_em(&rotated, &f.frame.pilots, n0, &PnModel::none(), 0.0, &em, Algorithm::LmmseEm).unwrap();
    assert!((est.cfo_hat - base.cfo_hat).abs() < 1e-10);
    let want = &base.channels_hat * C64::from_polar(1.0, c);
    assert!((est.channels_hat - &want).norm() / want.norm() < 1e-10);
}

#[test]
fn phase_only_impairments_keep_sample_magnitudes() {
    let cfg = noiseless_link();
    let ch = draw_link_channel(&cfg, 3).unwrap();
    let frame = build_frame(3, 0, &cfg.beams, cfg.subset_fraction, &cfg.pilots).unwrap();
    let len = 9 + frame.frame_len() + ch.num_taps();
    let mut rng = rng_from(1);
    let pn: Vec<f64> = (0..len).map(|_| complex_normal(&mut rng, 1.0).re).collect();
    let clean = ImpairmentTruth { n0: 9, cfo: 0.0, pn_path: vec![0.0; len], noise_var: 0.0 };
    let dirty = ImpairmentTruth { cfo: 0.0042, pn_path: pn, ..clean.clone() };
    let a = propagate(&ch, &frame, &clean, 1).unwrap();
    let b = propagate(&ch, &frame, &dirty, 1).unwrap();
    let worst = a.streams.iter().zip(b.streams.iter()).map(|(x, y)| (x.norm() - y.norm()).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-12, "{worst}");
}
