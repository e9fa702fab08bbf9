//! Frozen fixture: regenerating it and rerunning EM on its stored capture must match bit for bit.

use std::path::PathBuf;

use mmwave_sync::channel::ChannelRealization;
use mmwave_sync::fixture::read_json;
use mmwave_sync::harness::golden::{generate_golden, EstimateData, GoldenFixture};
use mmwave_sync::impairments::ReceivedCapture;
use mmwave_sync::sync::{estimate_to, run_em};
use mmwave_sync::training::TrainingFrame;

const SEED: u64 = 2024;

fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/fixtures/golden-{SEED}.json"))
}

#[test]
fn regenerated_fixture_is_identical() {
    let stored: serde_json::Value = read_json(&fixture_path()).unwrap();
    let fresh = serde_json::to_value(generate_golden(SEED).unwrap()).unwrap();
    assert!(stored == fresh, "fixture drifted; regenerate with `mmwave-sync fixture --seed {SEED} --out tests/fixtures`");
}

#[test]
fn stored_capture_reproduces_stored_estimates() {
    let g: GoldenFixture = read_json(&fixture_path()).unwrap();
    ChannelRealization::from_data(&g.channel).unwrap();
    let frame = TrainingFrame::from_data(&g.frame).unwrap();
    let capture = ReceivedCapture::from_data(&g.capture).unwrap();
    let n0 = estimate_to(&capture, &frame.preamble, 0..g.link.max_to + 1).unwrap();
    let pn = g.link.pn_model().unwrap();
    for want in &g.estimates {
        assert_eq!(n0, want.n0_hat);
        let got = run_em(&capture, &frame.pilots, n0, &pn, capture.truth.noise_var, &g.em, want.algorithm).unwrap();
        assert_eq!(&EstimateData::from(&got), want);
    }
    assert!((g.estimates[0].cfo_hat - g.capture.truth.cfo).abs() < 2e-3);
}
