//! Clustered frequency-selective MIMO channels and angular dictionaries.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fixture::SerCMat;
use crate::linalg::{expj, CMat, CVec, C64};
use crate::rng::{complex_normal, rng_from};

/// Uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub num_antennas: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl ArrayGeometry {
    pub fn new(num_antennas: usize, element_spacing: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::Config("array needs at least one antenna".into()));
        }
        if !(element_spacing > 0.0) {
            return Err(Error::Config("element spacing must be positive".into()));
        }
        Ok(Self { num_antennas, element_spacing })
    }

    /// Half-wavelength ULA.
    pub fn ula(num_antennas: usize) -> Self {
        Self { num_antennas, element_spacing: 0.5 }
    }
}

/// ULA response, entry `m` equal to `exp(j 2π s m cos(angle)) / √N`.
pub fn steering_vector(geometry: &ArrayGeometry, angle: f64) -> CVec {
    let n = geometry.num_antennas;
    let psi = 2.0 * PI * geometry.element_spacing * angle.cos();
    spatial_vector(n, psi)
}

/// Array response for spatial frequency `psi` (radians per element).
pub fn spatial_vector(n: usize, psi: f64) -> CVec {
    let s = 1.0 / (n as f64).sqrt();
    CVec::from_fn(n, |m, _| expj(psi * m as f64) * s)
}

/// Raised-cosine pulse evaluated at `x` sample periods.
pub fn raised_cosine(x: f64, rolloff: f64) -> f64 {
    let sinc = |u: f64| if u.abs() < 1e-12 { 1.0 } else { (PI * u).sin() / (PI * u) };
    if rolloff == 0.0 {
        return sinc(x);
    }
    let den = 1.0 - (2.0 * rolloff * x).powi(2);
    if den.abs() < 1e-10 {
        return PI / 4.0 * sinc(1.0 / (2.0 * rolloff));
    }
    sinc(x) * (PI * rolloff * x).cos() / den
}

/// One propagation ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub gain: C64,
    /// Delay in seconds.
    pub delay: f64,
    /// Angle of arrival in radians.
    pub aoa: f64,
    /// Angle of departure in radians.
    pub aod: f64,
}

/// Ray parameters of all clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Rays grouped by cluster.
    pub clusters: Vec<Vec<Ray>>,
    pub rays_per_cluster: usize,
    /// Linear pathloss `ρ_L`.
    pub pathloss: f64,
    /// Per-cluster angular spread in radians.
    pub angular_spread: f64,
}

impl ClusterParams {
    pub fn total_rays(&self) -> usize {
        self.clusters.iter().map(|c| c.len()).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() || self.total_rays() == 0 {
            return Err(Error::Config("channel needs at least one ray".into()));
        }
        if !(self.pathloss > 0.0) {
            return Err(Error::Config("pathloss must be positive".into()));
        }
        for r in self.clusters.iter().flatten() {
            if !(r.delay >= 0.0) {
                return Err(Error::Config("ray delays must be nonnegative".into()));
            }
            for a in [r.aoa, r.aod] {
                if !(0.0..2.0 * PI).contains(&a) {
                    return Err(Error::Config("ray angles must lie in [0, 2π)".into()));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the clustered channel generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub num_tx: usize,
    pub num_rx: usize,
    pub clusters: usize,
    pub rays_per_cluster: usize,
    /// Standard deviation of the Laplacian ray-angle offsets, radians.
    pub angular_spread: f64,
    /// Cluster delays are uniform on `[0, delay_spread]`, seconds.
    pub delay_spread: f64,
    /// Mean of the exponential intra-cluster ray delay, seconds.
    pub ray_delay_spread: f64,
    /// Number of channel taps `D`.
    pub taps: usize,
    /// Number of subcarriers `K`.
    pub subcarriers: usize,
    pub rolloff: f64,
    pub pathloss: f64,
    /// Sampling interval `T_s`, seconds.
    pub sampling_interval: f64,
    /// Rician factor of an optional line-of-sight ray (linear).
    pub los_k_factor: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let ts = 1.0 / 1.76e9;
        Self {
            num_tx: 16,
            num_rx: 8,
            clusters: 2,
            rays_per_cluster: 4,
            angular_spread: 2f64.to_radians(),
            delay_spread: 6.0 * ts,
            ray_delay_spread: 0.5 * ts,
            taps: 16,
            subcarriers: 64,
            rolloff: 0.8,
            pathloss: 1.0,
            sampling_interval: ts,
            los_k_factor: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tx == 0 || self.num_rx == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        if self.clusters == 0 || self.rays_per_cluster == 0 {
            return Err(Error::Config("need at least one cluster and one ray".into()));
        }
        if self.taps == 0 || self.subcarriers < self.taps {
            return Err(Error::Config("need 1 ≤ D ≤ K".into()));
        }
        if !(self.angular_spread >= 0.0)
            || !(self.delay_spread >= 0.0)
            || !(self.ray_delay_spread >= 0.0)
        {
            return Err(Error::Config("spreads must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::Config("rolloff must lie in [0, 1]".into()));
        }
        if !(self.pathloss > 0.0) || !(self.sampling_interval > 0.0) {
            return Err(Error::Config("pathloss and T_s must be positive".into()));
        }
        Ok(())
    }
}

/// A channel realization: taps, frequency response and the rays behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `H[d]`, `N_r × N_t`, `d = 0..D`.
    pub taps: Vec<CMat>,
    /// `𝗛[k]`, `N_r × N_t`, `k = 0..K`.
    pub freq_response: Vec<CMat>,
    pub clusters: ClusterParams,
    pub sampling_interval: f64,
    pub rolloff: f64,
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
}

impl ChannelRealization {
    /// Build taps from explicit rays.
    pub fn from_rays(
        tx: ArrayGeometry,
        rx: ArrayGeometry,
        clusters: ClusterParams,
        taps: usize,
        subcarriers: usize,
        rolloff: f64,
        sampling_interval: f64,
    ) -> Result<Self> {
        clusters.validate()?;
        if taps == 0 || subcarriers < taps {
            return Err(Error::Config("need 1 ≤ D ≤ K".into()));
        }
        let (nt, nr) = (tx.num_antennas, rx.num_antennas);
        let norm = ((nr * nt) as f64 / (clusters.pathloss * clusters.total_rays() as f64)).sqrt();
        let mut h = vec![CMat::zeros(nr, nt); taps];
        for ray in clusters.clusters.iter().flatten() {
            let outer = steering_vector(&rx, ray.aoa) * steering_vector(&tx, ray.aod).adjoint();
            for (d, hd) in h.iter_mut().enumerate() {
                let p = raised_cosine(d as f64 - ray.delay / sampling_interval, rolloff);
                if p != 0.0 {
                    *hd += &outer * (ray.gain * norm * p);
                }
            }
        }
        let freq_response = dft_of_taps(&h, subcarriers);
        Ok(Self {
            taps: h,
            freq_response,
            clusters,
            sampling_interval,
            rolloff,
            tx,
            rx,
        })
    }

    pub fn num_taps(&self) -> usize {
        self.taps.len()
    }

    pub fn num_subcarriers(&self) -> usize {
        self.freq_response.len()
    }

    /// Serializable form.
    pub fn to_data(&self) -> ChannelData {
        ChannelData {
            taps: self.taps.iter().map(SerCMat::from).collect(),
            clusters: self.clusters.clone(),
            subcarriers: self.num_subcarriers(),
            sampling_interval: self.sampling_interval,
            rolloff: self.rolloff,
            tx: self.tx,
            rx: self.rx,
        }
    }

    pub fn from_data(data: &ChannelData) -> Result<Self> {
        let taps: Vec<CMat> = data.taps.iter().map(|t| t.to_matrix()).collect::<Result<_>>()?;
        Ok(Self {
            freq_response: dft_of_taps(&taps, data.subcarriers),
            taps,
            clusters: data.clusters.clone(),
            sampling_interval: data.sampling_interval,
            rolloff: data.rolloff,
            tx: data.tx,
            rx: data.rx,
        })
    }
}

/// Serializable channel container; the frequency response is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelData {
    pub taps: Vec<SerCMat>,
    pub clusters: ClusterParams,
    pub subcarriers: usize,
    pub sampling_interval: f64,
    pub rolloff: f64,
    pub tx: ArrayGeometry,
    pub rx: ArrayGeometry,
}

/// `𝗛[k] = Σ_d H[d] exp(-j2πkd/K)`.
pub fn dft_of_taps(taps: &[CMat], k: usize) -> Vec<CMat> {
    let (r, c) = taps.first().map(|t| t.shape()).unwrap_or((0, 0));
    (0..k)
        .map(|kk| {
            let mut acc = CMat::zeros(r, c);
            for (d, h) in taps.iter().enumerate() {
                acc += h * expj(-2.0 * PI * ((kk * d) % k) as f64 / k as f64);
            }
            acc
        })
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

fn laplace<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let b = std / 2f64.sqrt();
    let u: f64 = rng.random::<f64>() - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Draw a clustered channel; deterministic in `seed`.
pub fn synthesize_channel(seed: u64, cfg: &ChannelConfig) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = rng_from(seed);
    let mut clusters = Vec::with_capacity(cfg.clusters);
    for _ in 0..cfg.clusters {
        let aoa_c = rng.random::<f64>() * 2.0 * PI;
        let aod_c = rng.random::<f64>() * 2.0 * PI;
        let tau_c = rng.random::<f64>() * cfg.delay_spread;
        let rays = (0..cfg.rays_per_cluster)
            .map(|_| {
                let u: f64 = rng.random::<f64>();
                Ray {
                    gain: complex_normal(&mut rng, 1.0),
                    delay: tau_c - cfg.ray_delay_spread * (1.0 - u).ln(),
                    aoa: wrap_angle(aoa_c + laplace(&mut rng, cfg.angular_spread)),
                    aod: wrap_angle(aod_c + laplace(&mut rng, cfg.angular_spread)),
                }
            })
            .collect();
        clusters.push(rays);
    }
    if let Some(kf) = cfg.los_k_factor {
        let total = (cfg.clusters * cfg.rays_per_cluster) as f64;
        let phase = rng.random::<f64>() * 2.0 * PI;
        clusters.push(vec![Ray {
            gain: expj(phase) * (kf * total).sqrt(),
            delay: 0.0,
            aoa: rng.random::<f64>() * 2.0 * PI,
            aod: rng.random::<f64>() * 2.0 * PI,
        }]);
    }
    let params = ClusterParams {
        clusters,
        rays_per_cluster: cfg.rays_per_cluster,
        pathloss: cfg.pathloss,
        angular_spread: cfg.angular_spread,
    };
    ChannelRealization::from_rays(
        ArrayGeometry::ula(cfg.num_tx),
        ArrayGeometry::ula(cfg.num_rx),
        params,
        cfg.taps,
        cfg.subcarriers,
        cfg.rolloff,
        cfg.sampling_interval,
    )
}

/// Overcomplete transmit and receive dictionaries on uniform spatial-frequency grids.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularDictionary {
    pub tx_grid_size: usize,
    pub rx_grid_size: usize,
    /// `Ã_T`, `N_t × G_t`.
    pub tx_atoms: CMat,
    /// `Ã_R`, `N_r × G_r`.
    pub rx_atoms: CMat,
}

/// Spatial frequency of grid point `g` out of `grid`: `2π g / G`.
pub fn grid_spatial_frequency(g: usize, grid: usize) -> f64 {
    2.0 * PI * g as f64 / grid as f64
}

/// Angle in `[0, π]` whose half-wavelength ULA response equals grid atom `g`.
pub fn grid_angle(g: usize, grid: usize) -> f64 {
    let mut u = 2.0 * g as f64 / grid as f64;
    if u >= 1.0 {
        u -= 2.0;
    }
    u.clamp(-1.0, 1.0).acos()
}

fn grid_atoms(n: usize, grid: usize) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, grid, |m, g| {
        expj(2.0 * PI * ((m * g) % grid) as f64 / grid as f64) * s
    })
}

pub fn build_dictionary(
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    tx_grid: usize,
    rx_grid: usize,
) -> Result<AngularDictionary> {
    if tx_grid < tx.num_antennas || rx_grid < rx.num_antennas {
        return Err(Error::Config("dictionary grid smaller than the array".into()));
    }
    Ok(AngularDictionary {
        tx_grid_size: tx_grid,
        rx_grid_size: rx_grid,
        tx_atoms: grid_atoms(tx.num_antennas, tx_grid),
        rx_atoms: grid_atoms(rx.num_antennas, rx_grid),
    })
}

impl AngularDictionary {
    pub fn num_atoms(&self) -> usize {
        self.tx_grid_size * self.rx_grid_size
    }

    /// Column index of `Ψ` for the atom pair `(rx, tx)`.
    pub fn column(&self, rx: usize, tx: usize) -> usize {
        tx * self.rx_grid_size + rx
    }

    /// `(rx, tx)` grid pair of column `j`.
    pub fn pair(&self, j: usize) -> (usize, usize) {
        (j % self.rx_grid_size, j / self.rx_grid_size)
    }

    /// Dense `Ψ = Ã_T^C ⊗ Ã_R`.
    pub fn psi(&self) -> CMat {
        crate::linalg::kron(&self.tx_atoms.conjugate(), &self.rx_atoms)
    }

    /// `Ψ x` without forming `Ψ`: `vec(Ã_R X Ã_T*)` with `x = vec(X)`.
    pub fn apply(&self, x: &CVec) -> CVec {
        let xm = CMat::from_column_slice(self.rx_grid_size, self.tx_grid_size, x.as_slice());
        let h = &self.rx_atoms * xm * self.tx_atoms.adjoint();
        CVec::from_column_slice(h.as_slice())
    }
}

/// Mutual coherence: largest normalized inner product between distinct columns.
pub fn coherence(a: &CMat) -> f64 {
    let norms: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).norm()).collect();
    let g = a.adjoint() * a;
    let mut mu: f64 = 0.0;
    for i in 0..a.ncols() {
        for j in (i + 1)..a.ncols() {
            let d = norms[i] * norms[j];
            if d > 0.0 {
                mu = mu.max(g[(i, j)].norm() / d);
            }
        }
    }
    mu
}
