//! Golden fixtures: one small link, its frame, capture and both EM estimates.

use serde::{Deserialize, Serialize};

use crate::channel::{grid_angle, ArrayGeometry, ChannelData, ChannelRealization, ClusterParams, Ray};
use crate::error::Result;
use crate::fixture::SerCMat;
use crate::linalg::C64;
use crate::impairments::CaptureData;
use crate::scenario::{draw_frame, draw_link_channel, LinkConfig};
use crate::sync::{estimate_to, run_em, Algorithm, EmConfig, SyncEstimate};
use crate::training::{BeamDims, FrameData, PilotConfig};

/// Serializable subset of a [`SyncEstimate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateData {
    pub algorithm: Algorithm,
    pub n0_hat: usize,
    pub cfo_hat: f64,
    pub pn_hat: Vec<f64>,
    pub channels_hat: SerCMat,
    pub iterations: usize,
    pub llf_trace: Vec<f64>,
}

impl From<&SyncEstimate> for EstimateData {
    fn from(e: &SyncEstimate) -> Self {
        Self {
            algorithm: e.algorithm,
            n0_hat: e.n0_hat,
            cfo_hat: e.cfo_hat,
            pn_hat: e.pn_hat.clone(),
            channels_hat: (&e.channels_hat).into(),
            iterations: e.iterations,
            llf_trace: e.llf_trace.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoldenFixture {
    pub seed: u64,
    pub link: LinkConfig,
    pub em: EmConfig,
    pub channel: ChannelData,
    pub frame: FrameData,
    pub capture: CaptureData,
    pub estimates: Vec<EstimateData>,
}

/// Link used for golden fixtures: `N_t = 8`, `N_r = 4`, `L_r = 2`, `K = 32`, `N_tr = 2`.
pub fn golden_link() -> LinkConfig {
    let mut link = LinkConfig::default();
    link.beams = BeamDims { nt: 8, nr: 4, lt: 2, lr: 2, nq: 6 };
    link.channel.num_tx = 8;
    link.channel.num_rx = 4;
    link.channel.subcarriers = 32;
    link.channel.taps = 8;
    link.pilots = PilotConfig { subcarriers: 32, symbols: 2, cp_len: 8, ..PilotConfig::default() };
    link.snr_db = Some(10.0);
    link.max_to = 8;
    link
}

pub fn generate_golden(seed: u64) -> Result<GoldenFixture> {
    let link = golden_link();
    let em = EmConfig { init_taps: Some(link.pilots.cp_len), ..EmConfig::default() };
    let channel = draw_link_channel(&link, seed)?;
    let sim = draw_frame(&link, &channel, seed, 0)?;
    let pn = link.pn_model()?;
    let n0 = estimate_to(&sim.capture, &sim.frame.preamble, 0..link.max_to + 1)?;
    let estimates = [Algorithm::LmmseEm, Algorithm::EkfRtsEm]
        .into_iter()
        .map(|a| {
            run_em(&sim.capture, &sim.frame.pilots, n0, &pn, sim.truth().noise_var, &em, a)
                .map(|e| EstimateData::from(&e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GoldenFixture {
        seed,
        link,
        em,
        channel: channel.to_data(),
        frame: sim.frame.to_data(),
        capture: sim.capture.to_data(),
        estimates,
    })
}

/// A ray on the dictionary grid: gain, delay in samples, rx and tx grid indices.
#[derive(Debug, Clone, Copy)]
pub struct PlantedRay {
    pub gain: C64,
    pub delay_taps: f64,
    pub rx: usize,
    pub tx: usize,
}

/// Channel of the given rays on a `rx_grid × tx_grid` dictionary grid, sized
/// for `link`. Integer tap delays give exactly sparse taps.
pub fn planted_channel(
    link: &LinkConfig,
    rays: &[PlantedRay],
    rx_grid: usize,
    tx_grid: usize,
) -> Result<ChannelRealization> {
    let ts = link.channel.sampling_interval;
    let rays: Vec<Ray> = rays
        .iter()
        .map(|r| Ray {
            gain: r.gain,
            delay: r.delay_taps * ts,
            aoa: grid_angle(r.rx, rx_grid),
            aod: grid_angle(r.tx, tx_grid),
        })
        .collect();
    let n = rays.len();
    ChannelRealization::from_rays(
        ArrayGeometry::ula(link.beams.nt),
        ArrayGeometry::ula(link.beams.nr),
        ClusterParams { clusters: vec![rays], rays_per_cluster: n, pathloss: link.channel.pathloss, angular_spread: 0.0 },
        link.channel.taps,
        link.channel.subcarriers,
        link.channel.rolloff,
        ts,
    )
}

/// Three on-grid rays for `link` on a grid twice the array size; the
/// strongest arrives first.
pub fn three_rays(link: &LinkConfig) -> [PlantedRay; 3] {
    let (gr, gt) = (2 * link.beams.nr, 2 * link.beams.nt);
    [
        PlantedRay { gain: C64::new(1.0, 0.0), delay_taps: 0.0, rx: 1, tx: 3 },
        PlantedRay { gain: C64::new(0.0, 0.6), delay_taps: 2.0, rx: gr / 2 + 1, tx: gt / 4 },
        PlantedRay { gain: C64::new(-0.3, 0.3), delay_taps: 5.0, rx: gr - 2, tx: gt - 5 },
    ]
}

pub fn three_ray_channel(link: &LinkConfig) -> Result<ChannelRealization> {
    planted_channel(link, &three_rays(link), 2 * link.beams.nr, 2 * link.beams.nt)
}

/// The rays of [`three_ray_channel`] all at delay zero, so the timing metric
/// peaks at the true offset whatever the beams.
pub fn flat_three_ray_channel(link: &LinkConfig) -> Result<ChannelRealization> {
    let rays = three_rays(link).map(|r| PlantedRay { delay_taps: 0.0, ..r });
    planted_channel(link, &rays, 2 * link.beams.nr, 2 * link.beams.nt)
}
