//! Monte Carlo driver.
//!
//! Per sweep point and trial: draw the channel, then for every frame draw
//! beams, offsets, phase noise and noise, estimate the timing offset, run
//! each selected EM estimator, evaluate the HCRLB at the truth, and finally
//! recover the MIMO channel from the first `M` frames for every swept `M`.
//! Frames depend only on `(trial seed, m)`, so the `M` axis reuses one set
//! of frames per trial.

use rayon::prelude::*;

use crate::channel::{build_dictionary, AngularDictionary};
use crate::crlb::{complex_gain_variance, direct_sum, fim_blocks, hcrlb_bounds, him_wiener, subcarrier_covariances};
use crate::csrec::{
    average_covariance, epsilon_rule, reconstruct_channel, sensing_matrix, stack_proxies, sw_omp,
    whitened_epsilon, SwOmpConfig, Whitening,
};
use crate::error::{Error, Result};
use crate::harness::config::{CovarianceSource, ExperimentConfig, Seeding, SweepPoint, TimingMode, WhiteningMode};
use crate::harness::metrics::{error_energy, mean_removed_energy, mean_stderr, ratio_of_means_db, spectral_efficiency};
use crate::harness::output::{AlgoLabel, BoundFlag, Manifest, Metric, PointSeeds, ResultRow, TrialFailure};
use crate::linalg::{fro2, upper_cholesky, CMat, RMat};
use crate::rng::derive_seed;
use crate::scenario::{draw_frame, draw_link_channel, LinkConfig};
use crate::sync::{estimate_to, run_em, Algorithm, FrameModel};
use crate::training::TrainingBeams;

/// Slack before a bound row above its achieved row is flagged, dB.
pub const BOUND_SLACK_DB: f64 = 3.0;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub manifest: Manifest,
}

/// Seed of `trial` at sweep point `point`.
pub fn trial_seed(cfg: &ExperimentConfig, point: usize, trial: usize) -> u64 {
    match cfg.seeding {
        Seeding::Common => derive_seed(cfg.seed, &[trial as u64]),
        Seeding::PerPoint => derive_seed(cfg.seed, &[point as u64, trial as u64]),
    }
}

#[derive(Debug, Clone)]
struct AlgoFrame {
    cfo_err2: f64,
    channel: (f64, f64),
    pn: (f64, f64),
    channels_hat: CMat,
}

#[derive(Debug, Clone)]
struct BoundFrame {
    cfo: f64,
    channel: f64,
    pn: f64,
}

#[derive(Debug, Clone)]
struct FrameRecord {
    to_hit: bool,
    cfo2: f64,
    noise_var: f64,
    algos: Vec<AlgoFrame>,
    bound: Option<BoundFrame>,
    /// Per-algorithm subcarrier covariances for whitening.
    covs: Option<Vec<Vec<CMat>>>,
    beams: TrainingBeams,
}

#[derive(Debug, Clone)]
struct RecoveryRecord {
    frames: usize,
    algo: usize,
    mimo: (f64, f64),
    se: Option<f64>,
}

#[derive(Debug, Clone)]
struct TrialRecord {
    frames: Vec<FrameRecord>,
    recovery: Vec<RecoveryRecord>,
}

/// Runs the sweep and collects every row.
pub fn run_montecarlo(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    run_montecarlo_with(cfg, opts, |_, _| Ok(()))
}

/// Runs the sweep, handing each point's rows to `sink` as soon as the point
/// completes.
pub fn run_montecarlo_with<F>(cfg: &ExperimentConfig, opts: RunOptions, mut sink: F) -> Result<RunOutput>
where
    F: FnMut(&SweepPoint, &[ResultRow]) -> Result<()>,
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let algorithms = cfg.algorithm_list();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut flags = Vec::new();
    let mut omitted = Vec::new();
    let mut seeds = Vec::new();

    for point in cfg.points() {
        let link = cfg.link_at(&point);
        let dict = if cfg.recovery.enabled {
            let tx = crate::channel::ArrayGeometry::ula(link.beams.nt);
            let rx = crate::channel::ArrayGeometry::ula(link.beams.nr);
            let gt = cfg.recovery.tx_grid.unwrap_or(2 * link.beams.nt);
            let gr = cfg.recovery.rx_grid.unwrap_or(2 * link.beams.nr);
            Some(build_dictionary(&tx, &rx, gt, gr)?)
        } else {
            None
        };
        let trial_seeds: Vec<u64> = (0..cfg.trials).map(|t| trial_seed(cfg, point.index, t)).collect();
        let outcomes: Vec<Result<TrialRecord>> = pool.install(|| {
            trial_seeds
                .par_iter()
                .map(|&s| run_trial(cfg, &link, &algorithms, dict.as_ref(), s))
                .collect()
        });
        let mut ok = Vec::new();
        for (t, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(r) => ok.push(r),
                Err(e) => failures.push(TrialFailure { point: point.index, trial: t, message: e.to_string() }),
            }
        }
        let point_rows = aggregate(cfg, &point, &algorithms, &ok, &mut omitted)?;
        flags.extend(bound_flags(&point, &point_rows));
        sink(&point, &point_rows)?;
        rows.extend(point_rows);
        seeds.push(PointSeeds { point: point.index, trial_seeds });
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        seed: cfg.seed,
        seed_derivation: match cfg.seeding {
            Seeding::Common => "trial = derive_seed(seed, [trial]); frame streams = derive_seed(trial, [m, stream])",
            Seeding::PerPoint => {
                "trial = derive_seed(seed, [point, trial]); frame streams = derive_seed(trial, [m, stream])"
            }
        }
        .into(),
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        points: seeds.len(),
        rows: rows.len(),
        seeds,
        failures,
        bound_flags: flags,
        omitted_rows: omitted,
    };
    Ok(RunOutput { rows, manifest })
}

fn run_trial(
    cfg: &ExperimentConfig,
    link: &LinkConfig,
    algorithms: &[Algorithm],
    dict: Option<&AngularDictionary>,
    seed: u64,
) -> Result<TrialRecord> {
    let channel = draw_link_channel(link, seed)?;
    let pn = link.pn_model()?;
    let max_frames = *cfg.frame_counts().last().expect("at least one frame count");
    let need_covs = cfg.recovery.enabled && cfg.bounds.enabled;
    let mut frames = Vec::with_capacity(max_frames);

    for m in 0..max_frames {
        let sim = draw_frame(link, &channel, seed, m)?;
        let truth = sim.truth();
        let n0_hat = match cfg.timing {
            TimingMode::Genie => truth.n0,
            TimingMode::Estimated => estimate_to(&sim.capture, &sim.frame.preamble, 0..link.max_to + 1)?,
        };
        let g_true = &sim.equivalent.freq;
        let true_model = FrameModel::new(sim.capture.layout(truth.n0), &sim.frame.pilots);
        let true_indices = true_model.layout.indices();
        let theta_true: Vec<f64> = true_indices.iter().map(|&i| truth.pn_path[i]).collect();
        let g_true_flat: Vec<_> = g_true.iter().copied().collect();

        let mut algos = Vec::with_capacity(algorithms.len());
        for &a in algorithms {
            let est = run_em(&sim.capture, &sim.frame.pilots, n0_hat, &pn, truth.noise_var, &cfg.em, a)?;
            let g_hat: Vec<_> = est.channels_hat.iter().copied().collect();
            algos.push(AlgoFrame {
                cfo_err2: (est.cfo_hat - truth.cfo).powi(2),
                channel: error_energy(&g_hat, &g_true_flat)?,
                pn: mean_removed_energy(&est.pn_hat, &theta_true)?,
                channels_hat: est.channels_hat,
            });
        }

        let with_bound = cfg.bounds.enabled && truth.noise_var > 0.0;
        let (bound, covs) = if with_bound {
            let fim = fim_blocks(&true_model, g_true, truth.noise_var)?;
            let report = hcrlb_bounds(&him_wiener(fim, pn.increment_variance, &true_indices)?, cfg.bounds.form)?;
            let bound = BoundFrame {
                cfo: report.cfo_bound,
                channel: complex_gain_variance(&report.channel_bound, g_true).sum(),
                pn: report.pn_bound_mean_removed,
            };
            let covs = if need_covs {
                Some(match cfg.recovery.covariance {
                    CovarianceSource::Truth => {
                        vec![subcarrier_covariances(&report.channel_bound, g_true); algorithms.len()]
                    }
                    CovarianceSource::Estimate => {
                        let model = FrameModel::new(sim.capture.layout(n0_hat), &sim.frame.pilots);
                        let idx = model.layout.indices();
                        algos
                            .iter()
                            .map(|af| {
                                let fim = fim_blocks(&model, &af.channels_hat, truth.noise_var)?;
                                let h = him_wiener(fim, pn.increment_variance, &idx)?;
                                let r = hcrlb_bounds(&h, cfg.bounds.form)?;
                                Ok(subcarrier_covariances(&r.channel_bound, &af.channels_hat))
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                })
            } else {
                None
            };
            (Some(bound), covs)
        } else {
            (None, None)
        };

        frames.push(FrameRecord {
            to_hit: n0_hat == truth.n0,
            cfo2: truth.cfo * truth.cfo,
            noise_var: truth.noise_var,
            algos,
            bound,
            covs,
            beams: sim.frame.beams,
        });
    }

    let recovery = match dict {
        Some(d) => recover_all(cfg, link, &channel.freq_response, channel.clusters.total_rays(), &frames, d)?,
        None => Vec::new(),
    };
    Ok(TrialRecord { frames, recovery })
}

fn recover_all(
    cfg: &ExperimentConfig,
    link: &LinkConfig,
    h_true: &[CMat],
    rays: usize,
    frames: &[FrameRecord],
    dict: &AngularDictionary,
) -> Result<Vec<RecoveryRecord>> {
    let beams: Vec<&TrainingBeams> = frames.iter().map(|f| &f.beams).collect();
    let sensing_all = sensing_matrix(&beams, dict)?;
    let lr = link.beams.lr;
    let k = h_true.len();
    let h_flat: Vec<_> = h_true.iter().flat_map(|h| h.iter().copied()).collect();
    let se_snr = cfg.recovery.se_snr_db.or(link.snr_db);
    let se_noise = se_snr.map(|snr| {
        let p: f64 = h_true.iter().map(fro2).sum::<f64>() / (k * link.beams.nr * link.beams.nt) as f64;
        p * 10f64.powf(-snr / 10.0)
    });
    let swomp = SwOmpConfig {
        max_atoms: cfg.recovery.max_atoms.unwrap_or(2 * rays),
        subcarrier_stride: cfg.recovery.subcarrier_stride,
        gain_threshold: cfg.recovery.gain_threshold,
    };

    let mut out = Vec::new();
    for m in cfg.frame_counts() {
        let sensing = sensing_all.rows(0, m * lr).into_owned();
        let used = &frames[..m];
        for algo in 0..used[0].algos.len() {
            let estimates: Vec<CMat> = used.iter().map(|f| f.algos[algo].channels_hat.clone()).collect();
            let proxies = stack_proxies(&estimates)?;
            let covs: Option<Vec<Vec<CMat>>> =
                used.iter().map(|f| f.covs.as_ref().map(|c| c[algo].clone())).collect();
            let (whitening, epsilon) = match covs {
                Some(covs) => {
                    let snr: Vec<RMat> = used
                        .iter()
                        .map(|f| f.algos[algo].channels_hat.map(|v| v.norm_sqr() / f.noise_var))
                        .collect();
                    let eps = epsilon_rule(&covs, &snr)?;
                    let blocks = direct_sum(&covs)?;
                    let (c_avg, d_v) = average_covariance(&blocks)?;
                    let w = match cfg.recovery.whitening {
                        WhiteningMode::Averaged => Whitening::Averaged(d_v),
                        WhiteningMode::PerSubcarrier => {
                            Whitening::PerSubcarrier(blocks.iter().map(upper_cholesky).collect::<Result<_>>()?)
                        }
                    };
                    (w, whitened_epsilon(eps, &c_avg))
                }
                None => (Whitening::Averaged(CMat::identity(m * lr, m * lr)), 0.0),
            };
            let est = sw_omp(&proxies, &sensing, dict, &whitening, epsilon, &swomp)?;
            let h_hat = reconstruct_channel(&est, dict);
            let hat_flat: Vec<_> = h_hat.iter().flat_map(|h| h.iter().copied()).collect();
            let se = match se_noise {
                Some(nv) => Some(spectral_efficiency(&h_hat, h_true, cfg.recovery.streams, nv)?),
                None => None,
            };
            out.push(RecoveryRecord { frames: m, algo, mimo: error_energy(&hat_flat, &h_flat)?, se });
        }
    }
    Ok(out)
}

fn aggregate(
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    algorithms: &[Algorithm],
    trials: &[TrialRecord],
    omitted: &mut Vec<String>,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    if trials.is_empty() {
        return Ok(rows);
    }
    let pn_on = point.pn_psd_dbc.is_some();
    for m in cfg.frame_counts() {
        let mut push = |algorithm: AlgoLabel, metric: Metric, value: f64, stderr: Option<f64>| {
            if value.is_finite() {
                rows.push(ResultRow {
                    snr_db: point.snr_db,
                    ntr: point.ntr,
                    lr: point.lr,
                    frames: m,
                    pn_psd_dbc: point.pn_psd_dbc,
                    algorithm,
                    metric,
                    value,
                    trials: trials.len(),
                    stderr: stderr.filter(|s| s.is_finite()),
                });
            } else {
                omitted.push(format!("point {} frames {m} {algorithm:?} {metric:?}: {value}", point.index));
            }
        };
        let sum = |t: &TrialRecord, f: &dyn Fn(&FrameRecord) -> (f64, f64)| {
            t.frames[..m].iter().map(f).fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
        };

        let hits: Vec<f64> = trials
            .iter()
            .map(|t| t.frames[..m].iter().filter(|f| f.to_hit).count() as f64 / m as f64)
            .collect();
        let (v, se) = mean_stderr(&hits);
        push(AlgoLabel::None, Metric::ToHitRate, v, se);

        if trials.iter().all(|t| t.frames[..m].iter().all(|f| f.bound.is_some())) {
            let b = |f: &FrameRecord| f.bound.as_ref().expect("checked above").clone();
            let cfo: Vec<_> = trials.iter().map(|t| sum(t, &|f| (b(f).cfo, f.cfo2))).collect();
            let (v, se) = ratio_of_means_db(&cfo)?;
            push(AlgoLabel::None, Metric::HcrlbCfo, v, se);
            let ch: Vec<_> = trials.iter().map(|t| sum(t, &|f| (b(f).channel, f.algos[0].channel.1))).collect();
            let (v, se) = ratio_of_means_db(&ch)?;
            push(AlgoLabel::None, Metric::HcrlbChannel, v, se);
            if pn_on {
                let pn: Vec<_> = trials.iter().map(|t| sum(t, &|f| (b(f).pn, f.algos[0].pn.1))).collect();
                let (v, se) = ratio_of_means_db(&pn)?;
                push(AlgoLabel::None, Metric::HcrlbPn, v, se);
            }
        }

        for (ai, &a) in algorithms.iter().enumerate() {
            let label = AlgoLabel::from(a);
            let cfo: Vec<_> = trials.iter().map(|t| sum(t, &|f| (f.algos[ai].cfo_err2, f.cfo2))).collect();
            let (v, se) = ratio_of_means_db(&cfo)?;
            push(label, Metric::CfoNmse, v, se);
            let ch: Vec<_> = trials.iter().map(|t| sum(t, &|f| f.algos[ai].channel)).collect();
            let (v, se) = ratio_of_means_db(&ch)?;
            push(label, Metric::ChannelNmse, v, se);
            if pn_on {
                let pn: Vec<_> = trials.iter().map(|t| sum(t, &|f| f.algos[ai].pn)).collect();
                let (v, se) = ratio_of_means_db(&pn)?;
                push(label, Metric::PnNmse, v, se);
            }
            let rec: Vec<&RecoveryRecord> = trials
                .iter()
                .filter_map(|t| t.recovery.iter().find(|r| r.frames == m && r.algo == ai))
                .collect();
            if !rec.is_empty() {
                let mimo: Vec<_> = rec.iter().map(|r| r.mimo).collect();
                let (v, se) = ratio_of_means_db(&mimo)?;
                push(label, Metric::MimoChannelNmse, v, se);
                let se_vals: Vec<f64> = rec.iter().filter_map(|r| r.se).collect();
                if se_vals.len() == rec.len() {
                    let (v, se) = mean_stderr(&se_vals);
                    push(label, Metric::SpectralEfficiency, v, se);
                }
            }
        }
    }
    Ok(rows)
}

fn bound_flags(point: &SweepPoint, rows: &[ResultRow]) -> Vec<BoundFlag> {
    let mut out = Vec::new();
    for r in rows {
        let Some(bm) = r.metric.bound_of() else { continue };
        let bound = rows.iter().find(|b| b.metric == bm && b.frames == r.frames);
        if let Some(b) = bound {
            if b.value > r.value + BOUND_SLACK_DB {
                out.push(BoundFlag {
                    point: point.index,
                    frames: r.frames,
                    algorithm: r.algorithm,
                    metric: r.metric,
                    achieved_db: r.value,
                    bound_db: b.value,
                });
            }
        }
    }
    out
}
