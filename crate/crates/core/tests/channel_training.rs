//! Channel, dictionary, training-frame and propagation properties.

mod common;

use std::f64::consts::PI;

use mmwave_sync::channel::{build_dictionary, coherence, synthesize_channel, ArrayGeometry, ChannelConfig};
use mmwave_sync::harness::golden::{planted_channel, PlantedRay};
use mmwave_sync::impairments::{noise_var_for_snr, propagate, signal_energy, ImpairmentTruth};
use mmwave_sync::linalg::{fro2, C64};
use mmwave_sync::scenario::{draw_frame, draw_link_channel, LinkConfig};
use mmwave_sync::training::{build_frame, draw_training_beams, BeamDims};

#[test]
fn dictionary_coherence_matches_pairwise_search() {
    let dict = build_dictionary(&ArrayGeometry::ula(16), &ArrayGeometry::ula(8), 32, 16).unwrap();
    let a = &dict.tx_atoms;
    let mut brute: f64 = 0.0;
    for i in 0..a.ncols() {
        for j in 0..a.ncols() {
            if i != j {
                let ip: C64 = (0..a.nrows()).map(|n| a[(n, i)].conj() * a[(n, j)]).sum();
                brute = brute.max(ip.norm());
            }
        }
    }
    assert!((coherence(a) - brute).abs() < 1e-12);
    assert!((0..a.ncols()).all(|j| (a.column(j).norm() - 1.0).abs() < 1e-12));
}

/// Mean channel energy over `seeds` draws.
fn mean_energy(cfg: &ChannelConfig, seeds: u64) -> f64 {
    (0..seeds).map(|s| synthesize_channel(s, cfg).unwrap().taps.iter().map(fro2).sum::<f64>()).sum::<f64>()
        / seeds as f64
}

#[test]
fn channel_energy_scales_with_array_size_over_pathloss() {
    let base = ChannelConfig::default();
    let small = ChannelConfig { num_tx: 8, num_rx: 4, pathloss: 2.0, ..base.clone() };
    let ratio = mean_energy(&base, 500) / mean_energy(&small, 500);
    let want = (16.0 * 8.0 / 1.0) / (8.0 * 4.0 / 2.0);
    assert!((ratio / want - 1.0).abs() <= 0.1, "ratio {ratio}, want {want}");
}

#[test]
fn frames_repeat_bitwise() {
    let link = LinkConfig::default();
    let a = build_frame(9, 3, &link.beams, link.subset_fraction, &link.pilots).unwrap();
    let b = build_frame(9, 3, &link.beams, link.subset_fraction, &link.pilots).unwrap();
    assert_eq!(a, b);
    let c = build_frame(9, 4, &link.beams, link.subset_fraction, &link.pilots).unwrap();
    assert_ne!(a.beams, c.beams);
}

#[test]
fn beam_entries_are_quantized_unit_modulus() {
    let dims = BeamDims { nt: 16, nr: 8, lt: 4, lr: 4, nq: 3 };
    for m in 0..10 {
        let b = draw_training_beams(2, m, &dims, 0.5).unwrap();
        for (mat, active) in [(&b.f_tr, &b.tx_active), (&b.w_tr, &b.rx_active)] {
            let amp = 1.0 / (active.len() as f64).sqrt();
            for v in mat.iter().filter(|v| v.norm() > 0.0) {
                assert!((v.norm() - amp).abs() < 1e-12);
                let step = v.arg().rem_euclid(2.0 * PI) / (2.0 * PI / 8.0);
                assert!((step - step.round()).abs() < 1e-9);
            }
            for n in 0..mat.nrows() {
                let used = mat.row(n).iter().any(|v| v.norm() > 0.0);
                assert_eq!(used, active.contains(&n));
            }
        }
        assert!((b.d_w.adjoint() * &b.d_w - b.w_tr.adjoint() * &b.w_tr).norm() < 1e-12);
    }
}

#[test]
fn single_full_array_combiner_whitens_by_its_norm() {
    let dims = BeamDims { nt: 8, nr: 8, lt: 1, lr: 1, nq: 6 };
    let b = draw_training_beams(4, 0, &dims, 1.0).unwrap();
    assert_eq!(b.rx_active.len(), 8);
    assert!((b.d_w[(0, 0)] - C64::new(b.w_tr.norm(), 0.0)).norm() < 1e-12);
}

#[test]
fn noise_only_capture_has_unit_whitened_variance() {
    let link = LinkConfig::default();
    let silent = PlantedRay { gain: C64::new(0.0, 0.0), delay_taps: 0.0, rx: 0, tx: 0 };
    let ch = planted_channel(&link, &[silent], 16, 32).unwrap();
    let frame = build_frame(1, 0, &link.beams, link.subset_fraction, &link.pilots).unwrap();
    let sigma2 = 0.37;
    let mut acc = vec![0.0; link.beams.lr];
    let mut count = 0usize;
    let mut s = 0;
    while count < 10_000 {
        let len = frame.frame_len() + ch.num_taps();
        let truth = ImpairmentTruth { n0: 0, cfo: 0.0, pn_path: vec![0.0; len], noise_var: sigma2 };
        let cap = propagate(&ch, &frame, &truth, s).unwrap();
        for row in cap.streams.row_iter() {
            for (i, v) in row.iter().enumerate() {
                acc[i] += v.norm_sqr();
            }
        }
        count += cap.streams.nrows();
        s += 1;
    }
    for a in acc {
        let var = a / count as f64;
        assert!((var / sigma2 - 1.0).abs() <= 0.03, "{var}");
    }
}

#[test]
fn noise_variance_follows_snr_definition() {
    let link = LinkConfig::default();
    let ch = draw_link_channel(&link, 5).unwrap();
    let sim = draw_frame(&link, &ch, 5, 0).unwrap();
    let g = &sim.equivalent.freq;
    let p = &sim.frame.pilots;
    for snr in [-10.0, 0.0, 17.5] {
        let s2 = noise_var_for_snr(p, g, snr);
        let snr_back = signal_energy(p, g) / ((g.ncols() * p.subcarriers() * p.num_symbols()) as f64 * s2);
        assert!((10.0 * snr_back.log10() - snr).abs() < 1e-10);
    }
}
