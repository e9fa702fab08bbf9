//! Golay-preamble timing-offset estimation.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::impairments::ReceivedCapture;
use crate::linalg::C64;

/// Timing metric `Σ_i |Σ_n r_i*[n + n0] s[n]|` at candidate `n0`.
pub fn timing_metric(capture: &ReceivedCapture, preamble: &[f64], n0: usize) -> f64 {
    let r = &capture.streams;
    (0..r.ncols())
        .map(|i| {
            let c: C64 = preamble
                .iter()
                .enumerate()
                .map(|(n, &s)| r[(n + n0, i)].conj() * s)
                .sum();
            c.norm()
        })
        .sum()
}

/// Maximize the timing metric over `window`; ties resolve to the smallest `n0`.
pub fn estimate_to(
    capture: &ReceivedCapture,
    preamble: &[f64],
    window: Range<usize>,
) -> Result<usize> {
    let last = capture.streams.nrows().saturating_sub(preamble.len());
    let window = window.start..window.end.min(last + 1);
    let mut best: Option<(usize, f64)> = None;
    for n0 in window {
        let m = timing_metric(capture, preamble, n0);
        if m.is_finite() && best.is_none_or(|(_, b)| m > b) {
            best = Some((n0, m));
        }
    }
    best.map(|(n, _)| n)
        .ok_or_else(|| Error::Numerical("timing window holds no finite metric".into()))
}
