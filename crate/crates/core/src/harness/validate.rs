//! Quick invariant suite behind the `validate` subcommand.

use crate::channel::dft_of_taps;
use crate::crlb::fim_blocks;
use crate::csrec::average_covariance;
use crate::error::{Error, Result};
use crate::harness::golden::{flat_three_ray_channel, generate_golden, golden_link, three_ray_channel};
use crate::linalg::{min_eigenvalue, CMat};
use crate::scenario::{draw_frame, draw_link_channel, LinkConfig};
use crate::sync::{estimate_to, run_em, Algorithm, EmConfig, FrameModel};
use crate::training::golay_pair;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn ensure(ok: bool, detail: String) -> Result<String> {
    if ok {
        Ok(detail)
    } else {
        Err(Error::Model(detail))
    }
}

fn dft_consistency(seed: u64) -> Result<String> {
    let ch = draw_link_channel(&LinkConfig::default(), seed)?;
    let k = ch.num_subcarriers();
    let direct = dft_of_taps(&ch.taps, k);
    let err = direct
        .iter()
        .zip(&ch.freq_response)
        .map(|(a, b)| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    ensure(err <= 1e-10, format!("max relative error {err:.2e}"))
}

fn golay_complementary() -> Result<String> {
    let (a, b) = golay_pair();
    let n = a.len();
    let mut worst: f64 = 0.0;
    for lag in 0..n {
        let s: f64 = (0..n - lag).map(|i| a[i] * a[i + lag] + b[i] * b[i + lag]).sum();
        let want = if lag == 0 { 2.0 * n as f64 } else { 0.0 };
        worst = worst.max((s - want).abs());
    }
    ensure(worst == 0.0, format!("largest deviation {worst}"))
}

fn whitening_identity(seed: u64) -> Result<String> {
    let link = LinkConfig::default();
    let ch = draw_link_channel(&link, seed)?;
    let sim = draw_frame(&link, &ch, seed, 0)?;
    let b = &sim.frame.beams;
    let err = (b.d_w.adjoint() * &b.d_w - b.w_tr.adjoint() * &b.w_tr).norm() / b.w_tr.norm_squared();
    let bw = b.whitened_combiner();
    let gram_err = (&bw * bw.adjoint() - CMat::identity(bw.nrows(), bw.nrows())).norm();
    ensure(err <= 1e-12 && gram_err <= 1e-12, format!("D_w*D_w error {err:.1e}, whitened Gram error {gram_err:.1e}"))
}

fn cholesky_average_idempotent() -> Result<String> {
    let a = CMat::from_fn(3, 3, |i, j| crate::linalg::C64::new(0.2 * (i + 2 * j) as f64, (i as f64) - 0.5));
    let c = a.adjoint() * &a + CMat::identity(3, 3);
    let (avg, _) = average_covariance(&[c.clone(), c.clone()])?;
    let err = (avg - &c).norm() / c.norm();
    ensure(err <= 1e-12, format!("relative error {err:.1e}"))
}

fn fim_positive(seed: u64) -> Result<String> {
    let link = golden_link();
    let ch = draw_link_channel(&link, seed)?;
    let sim = draw_frame(&link, &ch, seed, 0)?;
    let model = FrameModel::new(sim.capture.layout(sim.truth().n0), &sim.frame.pilots);
    let f = fim_blocks(&model, &sim.equivalent.freq, sim.truth().noise_var)?.to_dense();
    let asym = (&f - f.transpose()).norm() / f.norm();
    let lam = min_eigenvalue(&f);
    let scale = f.diagonal().max();
    ensure(asym <= 1e-12 && lam >= -1e-9 * scale, format!("asymmetry {asym:.1e}, min eigenvalue {lam:.2e}"))
}

fn noiseless_recovery(seed: u64) -> Result<String> {
    let mut link = golden_link();
    link.snr_db = None;
    link.pn_psd_dbc = None;
    let em = EmConfig { init_taps: Some(link.pilots.cp_len), ..EmConfig::default() };
    let flat = draw_frame(&link, &flat_three_ray_channel(&link)?, seed, 0)?;
    let n0 = estimate_to(&flat.capture, &flat.frame.preamble, 0..link.max_to + 1)?;
    let sim = draw_frame(&link, &three_ray_channel(&link)?, seed, 0)?;
    let t = sim.truth();
    let est = run_em(&sim.capture, &sim.frame.pilots, t.n0, &link.pn_model()?, 0.0, &em, Algorithm::LmmseEm)?;
    let cfo_err = (est.cfo_hat - t.cfo).abs();
    let nmse = (&est.channels_hat - &sim.equivalent.freq).norm_squared() / sim.equivalent.freq.norm_squared();
    ensure(
        n0 == flat.truth().n0 && cfo_err <= 1e-8 && 10.0 * nmse.log10() <= -100.0,
        format!(
            "TO {n0} vs {}, CFO error {cfo_err:.1e}, channel NMSE {:.1} dB",
            flat.truth().n0,
            10.0 * nmse.log10()
        ),
    )
}

fn determinism(seed: u64) -> Result<String> {
    let a = serde_json::to_string(&generate_golden(seed)?)?;
    let b = serde_json::to_string(&generate_golden(seed)?)?;
    ensure(a == b, format!("{} bytes compared", a.len()))
}

/// Runs every check; failures are reported, not raised.
pub fn run_invariant_suite(seed: u64) -> Vec<Check> {
    let checks: Vec<(&'static str, Box<dyn Fn() -> Result<String>>)> = vec![
        ("dft-consistency", Box::new(move || dft_consistency(seed))),
        ("golay-complementary", Box::new(golay_complementary)),
        ("whitening-identity", Box::new(move || whitening_identity(seed))),
        ("cholesky-average-idempotence", Box::new(cholesky_average_idempotent)),
        ("fim-symmetric-psd", Box::new(move || fim_positive(seed))),
        ("noiseless-recovery", Box::new(move || noiseless_recovery(seed))),
        ("determinism", Box::new(move || determinism(seed))),
    ];
    checks
        .into_iter()
        .map(|(name, f)| match f() {
            Ok(detail) => Check { name, passed: true, detail },
            Err(e) => Check { name, passed: false, detail: e.to_string() },
        })
        .collect()
}
