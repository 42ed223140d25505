//! Monte Carlo experiment harness: filter replay over delivery streams,
//! per-delivery trajectory-metric evaluation, RMS aggregation and CSV /
//! plot-data emission.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, FilterFamily, FilterVariant, OosHandling};
use crate::error::{Result, TrackingError};
use crate::metric::{rms_error, trajectory_distance, MetricReport, MetricTrajectory};
use crate::oos::{
    marginalize_oos, noos_update_with_stats, oos_update_with_stats, place_tau, retrodict,
    TauPlacement,
};
use crate::posterior::{
    estimate, lscan_truncate, predict, prune, tpmb_project, EstimatedTrajectory, EstimatorMode,
    PmbmPosterior,
};
use crate::sensor::{Scan, SensorModel};
use crate::sim::{sample_scenario, GroundTruth, ScanRecord};
use crate::update::update_with_stats;

/// One filter variant's running state over a delivery stream.
pub struct TrackingFilter {
    variant: FilterVariant,
    config: ExperimentConfig,
    sensor: SensorModel,
    pub posterior: PmbmPosterior,
    /// Scan index of each in-sequence step (step 1 onwards).
    inseq_scans: Vec<usize>,
    /// Timeline intervals (keyed by the later step) already used by an OOS
    /// scan; a second use is processed but only approximately.
    used_intervals: BTreeSet<usize>,
    /// OOS scans dropped because they fell outside the L-scan window.
    pub discarded_window: usize,
    /// OOS scans discarded by policy (the no-OOS-processing variants).
    pub discarded_policy: usize,
    /// OOS scans processed approximately (second scan in one interval).
    pub approximate_oos: usize,
    /// Measurements dropped because nothing could explain them.
    pub orphaned_measurements: usize,
}

impl TrackingFilter {
    pub fn new(config: &ExperimentConfig, variant: FilterVariant) -> Result<Self> {
        Ok(Self {
            variant,
            config: config.clone(),
            sensor: config.sensor()?,
            posterior: PmbmPosterior::empty(0.0),
            inseq_scans: Vec::new(),
            used_intervals: BTreeSet::new(),
            discarded_window: 0,
            discarded_policy: 0,
            approximate_oos: 0,
            orphaned_measurements: 0,
        })
    }

    pub fn variant(&self) -> FilterVariant {
        self.variant
    }

    /// Scan indices of the processed in-sequence steps, oldest first.
    pub fn inseq_scan_indices(&self) -> &[usize] {
        &self.inseq_scans
    }

    fn finish_update(&mut self, updated: PmbmPosterior) -> Result<()> {
        let mut post = updated;
        if self.variant.family == FilterFamily::Tpmb {
            post = tpmb_project(&post)?;
        }
        post = lscan_truncate(&post, self.config.l_scan)?;
        self.posterior = prune(
            &post,
            self.config.prune_hypothesis,
            self.config.prune_ppp,
            self.config.max_globals,
            self.config.prune_alive,
        )?;
        Ok(())
    }

    /// Snap-to-nearest update with the L-scan window check.
    fn process_nearest(&mut self, scan: &Scan, tau: f64) -> Result<()> {
        let k = self.posterior.current_step;
        let mut nearest = 0usize;
        let mut best = f64::INFINITY;
        for (j, &t) in self.posterior.step_times.iter().enumerate() {
            let d = (tau - t).abs();
            if d < best {
                best = d;
                nearest = j;
            }
        }
        if nearest + self.config.l_scan < k + 1 {
            self.discarded_window += 1;
            return Ok(());
        }
        let (updated, stats) = noos_update_with_stats(
            &self.posterior,
            scan,
            tau,
            &self.sensor,
            self.config.max_globals,
        )?;
        self.orphaned_measurements += stats.orphaned;
        self.finish_update(updated)
    }

    /// Consumes one delivered scan, routing it to the in-sequence update or
    /// the variant's OOS path.
    pub fn process(&mut self, record: &ScanRecord) -> Result<()> {
        let scan = Scan {
            time: record.time,
            measurements: record.measurements.clone(),
            scan_id: record.scan_index as u32,
        };
        if record.time > self.posterior.current_time() {
            let predicted = predict(&self.posterior, record.time, &self.config.model)?;
            let (updated, stats) =
                update_with_stats(&predicted, &scan, &self.sensor, self.config.max_globals)?;
            self.orphaned_measurements += stats.orphaned;
            self.inseq_scans.push(record.scan_index);
            return self.finish_update(updated);
        }

        match self.variant.oos {
            OosHandling::Discard => {
                self.discarded_policy += 1;
                Ok(())
            }
            OosHandling::Nearest => self.process_nearest(&scan, record.time),
            OosHandling::Optimal => match place_tau(&self.posterior.step_times, record.time) {
                TauPlacement::AtStep(_) => self.process_nearest(&scan, record.time),
                TauPlacement::OutOfRange => {
                    self.discarded_window += 1;
                    Ok(())
                }
                TauPlacement::Between { k_after, .. } => {
                    // Retrodiction needs both bracket states inside the
                    // window: k_after >= k - L + 2.
                    let k = self.posterior.current_step;
                    if k_after + self.config.l_scan < k + 2 {
                        self.discarded_window += 1;
                        return Ok(());
                    }
                    if !self.used_intervals.insert(k_after) {
                        self.approximate_oos += 1;
                    }
                    let retro = retrodict(&self.posterior, record.time, &self.config.model)?;
                    let (updated, stats) =
                        oos_update_with_stats(&retro, &scan, &self.sensor, self.config.max_globals)?;
                    self.orphaned_measurements += stats.orphaned;
                    let marginal = marginalize_oos(&updated)?;
                    self.finish_update(marginal)
                }
            },
        }
    }

    pub fn estimates(&self) -> Vec<EstimatedTrajectory> {
        match self.variant.family {
            FilterFamily::Tpmbm => estimate(
                &self.posterior,
                EstimatorMode::Tpmbm,
                self.config.estimator_tpmbm,
            ),
            FilterFamily::Tpmb => estimate(
                &self.posterior,
                EstimatorMode::Tpmb,
                self.config.estimator_tpmb,
            ),
        }
    }
}

/// Projects truth and estimates onto the processed in-sequence step grid and
/// evaluates the trajectory metric (positions only).
pub fn evaluate_estimates(
    truth: &GroundTruth,
    inseq_scans: &[usize],
    estimates: &[EstimatedTrajectory],
    config: &ExperimentConfig,
) -> Result<MetricReport> {
    let d = config.model.d;
    let horizon = inseq_scans.len();
    let mut truth_mts = Vec::new();
    for traj in &truth.trajectories {
        let mut start = None;
        let mut positions = Vec::new();
        for (grid_pos, &scan_idx) in inseq_scans.iter().enumerate() {
            if let Some((_, state)) = traj.states.iter().find(|(s, _)| *s == scan_idx) {
                if start.is_none() {
                    start = Some(grid_pos + 1);
                }
                positions.push(state.rows(0, d).into_owned());
            } else if start.is_some() {
                break;
            }
        }
        if let Some(start_step) = start {
            truth_mts.push(MetricTrajectory {
                start_step,
                positions,
            });
        }
    }
    let est_mts: Vec<MetricTrajectory> = estimates
        .iter()
        .filter(|e| e.start_step >= 1)
        .map(|e| MetricTrajectory {
            start_step: e.start_step as usize,
            positions: e.states.iter().map(|x| x.rows(0, d).into_owned()).collect(),
        })
        .collect();
    trajectory_distance(&truth_mts, &est_mts, &config.metric, horizon.max(1))
}

/// Per-delivery metric record of one filter in one run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub run: usize,
    pub delivery_index: usize,
    pub scan_index: usize,
    pub variant: FilterVariant,
    pub report: MetricReport,
}

/// Table-shaped summary for one filter variant.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub variant: FilterVariant,
    pub l: usize,
    pub rms_total: f64,
    pub rms_loc: f64,
    pub rms_false: f64,
    pub rms_miss: f64,
    pub rms_switch: f64,
    pub mean_runtime_s: f64,
}

/// Everything an experiment produces in memory.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: Vec<SummaryRow>,
    pub steps: Vec<StepRecord>,
    pub warnings: Vec<String>,
    pub discarded_window: usize,
    pub approximate_oos: usize,
    pub orphaned_measurements: usize,
}

struct RunOutput {
    steps: Vec<StepRecord>,
    runtimes: Vec<(FilterVariant, f64)>,
    warnings: Vec<String>,
    discarded_window: usize,
    approximate_oos: usize,
    orphaned_measurements: usize,
}

fn run_single(config: &ExperimentConfig, run: usize) -> RunOutput {
    let mut out = RunOutput {
        steps: Vec::new(),
        runtimes: Vec::new(),
        warnings: Vec::new(),
        discarded_window: 0,
        approximate_oos: 0,
        orphaned_measurements: 0,
    };
    let (truth, records) = match sample_scenario(config, run) {
        Ok(x) => x,
        Err(e) => {
            out.warnings.push(format!("run {run}: scenario sampling failed: {e}"));
            return out;
        }
    };
    for &variant in &config.filters {
        let mut filter = match TrackingFilter::new(config, variant) {
            Ok(f) => f,
            Err(e) => {
                out.warnings.push(format!("run {run} {variant}: {e}"));
                continue;
            }
        };
        let mut failed = false;
        let mut filter_time = 0.0f64;
        let mut steps = Vec::with_capacity(records.len());
        for record in &records {
            let started = Instant::now();
            if let Err(e) = filter.process(record) {
                out.warnings
                    .push(format!("run {run} {variant}: delivery {} failed: {e}", record.delivery_position));
                failed = true;
                break;
            }
            filter_time += started.elapsed().as_secs_f64();
            let estimates = filter.estimates();
            match evaluate_estimates(&truth, filter.inseq_scan_indices(), &estimates, config) {
                Ok(report) => steps.push(StepRecord {
                    run,
                    delivery_index: record.delivery_position,
                    scan_index: record.scan_index,
                    variant,
                    report,
                }),
                Err(e) => {
                    out.warnings
                        .push(format!("run {run} {variant}: metric failed: {e}"));
                    failed = true;
                    break;
                }
            }
        }
        if !failed {
            out.steps.extend(steps);
            out.runtimes.push((variant, filter_time));
            out.discarded_window += filter.discarded_window;
            out.approximate_oos += filter.approximate_oos;
            out.orphaned_measurements += filter.orphaned_measurements;
        }
    }
    out
}

/// Runs the Monte Carlo experiment. `threads` bounds the worker pool
/// (`None` uses the global default). Aggregation is order-independent: runs
/// are merged sorted by run index.
pub fn run_experiment(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    config.validate()?;
    let runs: Vec<usize> = (0..config.n_runs).collect();
    let mut results: Vec<(usize, RunOutput)> = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| TrackingError::InvalidArgument(format!("thread pool: {e}")))?;
            pool.install(|| {
                runs.par_iter()
                    .map(|&run| (run, run_single(config, run)))
                    .collect()
            })
        }
        None => runs
            .par_iter()
            .map(|&run| (run, run_single(config, run)))
            .collect(),
    };
    results.sort_by_key(|(run, _)| *run);

    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    let mut discarded_window = 0;
    let mut approximate_oos = 0;
    let mut orphaned_measurements = 0;
    let mut runtimes: Vec<(FilterVariant, f64)> = Vec::new();
    for (_, r) in results {
        steps.extend(r.steps);
        warnings.extend(r.warnings);
        discarded_window += r.discarded_window;
        approximate_oos += r.approximate_oos;
        orphaned_measurements += r.orphaned_measurements;
        runtimes.extend(r.runtimes);
    }

    let mut summary = Vec::new();
    for &variant in &config.filters {
        let of_variant: Vec<&StepRecord> = steps.iter().filter(|s| s.variant == variant).collect();
        if of_variant.is_empty() {
            continue;
        }
        let collect = |f: &dyn Fn(&MetricReport) -> f64| -> Vec<f64> {
            of_variant.iter().map(|s| f(&s.report).powi(2)).collect()
        };
        let rms_total = rms_error(&collect(&|r| r.total))?;
        let rms_loc = rms_error(&collect(&|r| r.localization))?;
        let rms_false = rms_error(&collect(&|r| r.false_cost))?;
        let rms_miss = rms_error(&collect(&|r| r.missed))?;
        let rms_switch = rms_error(&collect(&|r| r.switch))?;
        let times: Vec<f64> = runtimes
            .iter()
            .filter(|(v, _)| *v == variant)
            .map(|(_, t)| *t)
            .collect();
        let mean_runtime_s = times.iter().sum::<f64>() / times.len().max(1) as f64;
        summary.push(SummaryRow {
            variant,
            l: config.l_scan,
            rms_total,
            rms_loc,
            rms_false,
            rms_miss,
            rms_switch,
            mean_runtime_s,
        });
    }

    Ok(ExperimentOutput {
        summary,
        steps,
        warnings,
        discarded_window,
        approximate_oos,
        orphaned_measurements,
    })
}

/// Writes per-step and summary CSVs plus per-series plot data into `out`.
pub fn write_outputs(
    output: &ExperimentOutput,
    config: &ExperimentConfig,
    out: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out)?;

    let mut per_step = String::from(
        "run,delivery_index,scan_index,filter,L,d_total,d_loc,d_miss,d_false,d_switch\n",
    );
    for s in &output.steps {
        per_step.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            s.run,
            s.delivery_index,
            s.scan_index,
            s.variant,
            config.l_scan,
            s.report.total,
            s.report.localization,
            s.report.missed,
            s.report.false_cost,
            s.report.switch,
        ));
    }
    std::fs::write(out.join("per_step.csv"), per_step)?;

    let mut summary = String::from(
        "filter,L,rms_total,rms_loc,rms_false,rms_miss,rms_switch,mean_runtime_s\n",
    );
    for row in &output.summary {
        summary.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}\n",
            row.variant,
            row.l,
            row.rms_total,
            row.rms_loc,
            row.rms_false,
            row.rms_miss,
            row.rms_switch,
            row.mean_runtime_s,
        ));
    }
    std::fs::write(out.join("summary.csv"), summary)?;

    // Plot data: RMS against delivery index, one file per filter series.
    for &variant in &config.filters {
        let mut per_delivery: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for s in output.steps.iter().filter(|s| s.variant == variant) {
            per_delivery
                .entry(s.delivery_index)
                .or_default()
                .push(s.report.normalized_squared());
        }
        if per_delivery.is_empty() {
            continue;
        }
        let mut data = String::new();
        for (delivery, values) in per_delivery {
            data.push_str(&format!("{} {:.6}\n", delivery, rms_error(&values)?));
        }
        let slug = variant.tag().replace(':', "-");
        std::fs::write(
            out.join(format!("rms_{}_L{}.dat", slug, config.l_scan)),
            data,
        )?;
    }

    if !output.warnings.is_empty() {
        std::fs::write(out.join("warnings.txt"), output.warnings.join("\n") + "\n")?;
    }
    Ok(())
}
