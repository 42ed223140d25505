//! Ground-truth and measurement simulator with an out-of-sequence delivery
//! model.
//!
//! Targets appear as a Poisson process in time, live exponentially long,
//! start from the Gaussian appearance prior and move with the exact Wiener
//! velocity kernel between scan times. Scan inter-arrival times are
//! exponential. Every `oos_every`-th scan draws a Poisson number of delivery
//! slots to be delayed by; the realized delivery order is the permutation
//! the filters consume.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal, Uniform};

use crate::config::ExperimentConfig;
use crate::continuous::wiener_kernel;
use crate::error::Result;

/// One simulated target in continuous time plus its sampled states.
#[derive(Debug, Clone)]
pub struct TruthTrajectory {
    pub appearance_time: f64,
    pub death_time: f64,
    /// `(scan index (1-based), state)` at every scan time the target is
    /// alive; contiguous in scan index.
    pub states: Vec<(usize, DVector<f64>)>,
}

/// All simulated trajectories that were alive at one or more scan times.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub trajectories: Vec<TruthTrajectory>,
    pub scan_times: Vec<f64>,
}

/// One scan with its position in the delivery stream.
#[derive(Debug, Clone)]
pub struct ScanRecord {
    /// 1-based index in measurement-time order.
    pub scan_index: usize,
    pub time: f64,
    pub measurements: Vec<DVector<f64>>,
    /// 1-based position in the delivery stream.
    pub delivery_position: usize,
    /// True when a scan with a later time stamp was delivered earlier.
    pub is_oos: bool,
    /// Delay drawn for delivery-slot placement (0 for undelayed scans).
    pub delay_slots: u32,
}

fn sample_mvn<R: Rng>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let chol = cov
        .clone()
        .cholesky()
        .expect("simulation covariances are positive definite");
    let n = mean.len();
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    mean + chol.l() * z
}

/// Deterministic RNG stream keyed by `(seed, run index, substream)`.
pub fn run_rng(seed: u64, run_index: u64, stream: u64) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&run_index.to_le_bytes());
    bytes[16..24].copy_from_slice(&stream.to_le_bytes());
    bytes[24..32].copy_from_slice(&0x7472616a_65637473u64.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

/// Run-index tag of the shared-truth stream used by `sim.fixed_truth`.
const FIXED_TRUTH_STREAM: u64 = u64::MAX;

/// Samples one scenario: ground truth plus scans in delivery order.
///
/// The stream is seeded by `(config.seed, run_index)`, so results are
/// reproducible bit for bit regardless of how runs are scheduled.
pub fn sample_scenario(
    config: &ExperimentConfig,
    run_index: usize,
) -> Result<(GroundTruth, Vec<ScanRecord>)> {
    // Scan times and trajectories come from the truth stream; with
    // `fixed_truth` that stream ignores the run index, replicating one
    // scenario across all Monte Carlo runs while detections, noise, clutter
    // and delivery delays stay run-specific.
    let truth_run = if config.fixed_truth {
        FIXED_TRUTH_STREAM
    } else {
        run_index as u64
    };
    let mut truth_rng = run_rng(config.seed, truth_run, 0);
    let mut rng = run_rng(config.seed, run_index as u64, 1);
    let model = &config.model;

    // Scan times: cumulative exponential inter-arrivals from t0 = 0.
    let inter = Exp::new(config.scan_rate)
        .map_err(|e| crate::error::TrackingError::invalid(format!("scan_rate: {e}")))?;
    let mut scan_times = Vec::with_capacity(config.n_scans);
    let mut t = 0.0;
    for _ in 0..config.n_scans {
        t += inter.sample(&mut truth_rng);
        scan_times.push(t);
    }
    let horizon = t;

    // Appearances: Poisson process with rate lambda on (0, horizon].
    let life = Exp::new(model.mu)
        .map_err(|e| crate::error::TrackingError::invalid(format!("mu: {e}")))?;
    let gap = Exp::new(model.lambda)
        .map_err(|e| crate::error::TrackingError::invalid(format!("lambda: {e}")))?;
    let mut trajectories = Vec::new();
    let mut birth = gap.sample(&mut truth_rng);
    while birth < horizon {
        let death = birth + life.sample(&mut truth_rng);
        let mut state = sample_mvn(&mut truth_rng, &model.mean_appearance, &model.cov_appearance);
        let mut prev_time = birth;
        let mut states = Vec::new();
        for (idx, &ts) in scan_times.iter().enumerate() {
            if ts < birth {
                continue;
            }
            if ts >= death {
                break;
            }
            let kernel = wiener_kernel(model.q, model.d, ts - prev_time)?;
            let mean = &kernel.f * &state;
            state = if kernel.dt > 0.0 {
                sample_mvn(&mut truth_rng, &mean, &kernel.q)
            } else {
                mean
            };
            prev_time = ts;
            states.push((idx + 1, state.clone()));
        }
        if !states.is_empty() {
            trajectories.push(TruthTrajectory {
                appearance_time: birth,
                death_time: death,
                states,
            });
        }
        birth += gap.sample(&mut truth_rng);
    }

    // Measurements per scan: detections plus uniform clutter, shuffled.
    let sensor = config.sensor()?;
    let n_z = sensor.measurement_dim();
    let clutter_count = Poisson::new(config.clutter_rate.max(1e-12))
        .map_err(|e| crate::error::TrackingError::invalid(format!("clutter_rate: {e}")))?;
    let region_dists: Vec<Uniform<f64>> = config
        .region
        .iter()
        .map(|&(lo, hi)| Uniform::new(lo, hi).expect("region bounds are ordered"))
        .collect();
    let mut scans_measurements: Vec<Vec<DVector<f64>>> = vec![Vec::new(); config.n_scans];
    for (scan_idx, meas) in scans_measurements.iter_mut().enumerate() {
        for traj in &trajectories {
            if let Some((_, state)) = traj.states.iter().find(|(s, _)| *s == scan_idx + 1) {
                if rng.random::<f64>() < sensor.p_detect {
                    let mean = &sensor.h * state;
                    meas.push(sample_mvn(&mut rng, &mean, &sensor.r));
                }
            }
        }
        if config.clutter_rate > 0.0 {
            let n_clutter = clutter_count.sample(&mut rng) as usize;
            for _ in 0..n_clutter {
                let z =
                    DVector::from_iterator(n_z, region_dists.iter().map(|d| d.sample(&mut rng)));
                meas.push(z);
            }
        }
        // Fisher-Yates shuffle so measurement order carries no information.
        for i in (1..meas.len()).rev() {
            let j = rng.random_range(0..=i);
            meas.swap(i, j);
        }
    }

    // Delivery order: every oos_every-th scan is delayed by a Poisson number
    // of slots and re-inserted after that many later scans.
    let delay_dist = Poisson::new(config.oos_delay_rate.max(1e-12))
        .map_err(|e| crate::error::TrackingError::invalid(format!("oos_delay_rate: {e}")))?;
    let mut delays = vec![0u32; config.n_scans];
    for idx in 0..config.n_scans {
        if (idx + 1) % config.oos_every == 0 && config.oos_delay_rate > 0.0 {
            delays[idx] = delay_dist.sample(&mut rng) as u32;
        }
    }
    // Sort by (index + delay); delayed scans come after the in-time scan
    // occupying their landing slot; ties between delayed scans by index.
    let mut order: Vec<usize> = (0..config.n_scans).collect();
    order.sort_by_key(|&idx| {
        (
            idx as u32 + delays[idx],
            u32::from(delays[idx] > 0),
            idx as u32,
        )
    });

    let mut records = Vec::with_capacity(config.n_scans);
    let mut max_time = f64::NEG_INFINITY;
    for (pos, &idx) in order.iter().enumerate() {
        let time = scan_times[idx];
        let is_oos = time < max_time;
        max_time = max_time.max(time);
        records.push(ScanRecord {
            scan_index: idx + 1,
            time,
            measurements: std::mem::take(&mut scans_measurements[idx]),
            delivery_position: pos + 1,
            is_oos,
            delay_slots: delays[idx],
        });
    }

    Ok((
        GroundTruth {
            trajectories,
            scan_times,
        },
        records,
    ))
}
