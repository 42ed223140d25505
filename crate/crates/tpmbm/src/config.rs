//! Experiment configuration: a flat, schema-checked `key = value` file with
//! dotted sections.
//!
//! Unknown keys are errors, as are missing ones; every diagnostic carries
//! the offending line or field. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::continuous::ContinuousModel;
use crate::error::{Result, TrackingError};
use crate::metric::MetricParams;
use crate::sensor::{ClutterRegion, SensorModel};

/// Posterior family: full mixture or single projected multi-Bernoulli.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FilterFamily {
    Tpmbm,
    Tpmb,
}

/// How a filter treats out-of-sequence scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OosHandling {
    /// Discard OOS scans.
    Discard,
    /// Snap-to-nearest baseline update.
    Nearest,
    /// Full retrodiction / update / marginalization.
    Optimal,
}

/// One filter variant under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FilterVariant {
    pub family: FilterFamily,
    pub oos: OosHandling,
}

impl FilterVariant {
    pub fn parse(tag: &str) -> Result<Self> {
        let (fam, oos) = tag
            .split_once(':')
            .ok_or_else(|| TrackingError::Config(format!("filter tag `{tag}` is not fam:oos")))?;
        let family = match fam {
            "tpmbm" => FilterFamily::Tpmbm,
            "tpmb" => FilterFamily::Tpmb,
            other => {
                return Err(TrackingError::Config(format!(
                    "unknown filter family `{other}` (expected tpmbm or tpmb)"
                )))
            }
        };
        let oos = match oos {
            "none" => OosHandling::Discard,
            "noos" => OosHandling::Nearest,
            "oos" => OosHandling::Optimal,
            other => {
                return Err(TrackingError::Config(format!(
                    "unknown OOS mode `{other}` (expected none, noos or oos)"
                )))
            }
        };
        Ok(Self { family, oos })
    }

    pub fn tag(&self) -> String {
        let fam = match self.family {
            FilterFamily::Tpmbm => "tpmbm",
            FilterFamily::Tpmb => "tpmb",
        };
        let oos = match self.oos {
            OosHandling::Discard => "none",
            OosHandling::Nearest => "noos",
            OosHandling::Optimal => "oos",
        };
        format!("{fam}:{oos}")
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = match self.family {
            FilterFamily::Tpmbm => "TPMBM",
            FilterFamily::Tpmb => "TPMB",
        };
        match self.oos {
            OosHandling::Discard => write!(f, "{fam}"),
            OosHandling::Nearest => write!(f, "(N)OOS-{fam}"),
            OosHandling::Optimal => write!(f, "OOS-{fam}"),
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ContinuousModel,
    pub pd: f64,
    pub noise_var: f64,
    pub clutter_rate: f64,
    pub region: Vec<(f64, f64)>,
    pub gate_quantile: f64,
    pub n_scans: usize,
    pub scan_rate: f64,
    pub oos_every: usize,
    pub oos_delay_rate: f64,
    pub n_runs: usize,
    pub seed: u64,
    /// Replicate one truth draw across all runs (randomness only in
    /// measurements and delivery).
    pub fixed_truth: bool,
    pub l_scan: usize,
    pub max_globals: usize,
    pub prune_hypothesis: f64,
    pub prune_ppp: f64,
    pub prune_alive: f64,
    pub estimator_tpmbm: f64,
    pub estimator_tpmb: f64,
    pub metric: MetricParams,
    pub filters: Vec<FilterVariant>,
}

impl ExperimentConfig {
    pub fn sensor(&self) -> Result<SensorModel> {
        SensorModel::position_sensor(
            self.model.d,
            self.noise_var,
            self.pd,
            self.clutter_rate,
            ClutterRegion::new(self.region.clone())?,
            self.gate_quantile,
        )
    }

    /// The evaluation setup of the benchmark scenario: 2-D Wiener velocity
    /// targets, position sensor, exponential scan inter-arrivals, every
    /// fifth scan a delay candidate.
    pub fn benchmark(l_scan: usize, n_scans: usize, n_runs: usize, seed: u64) -> Self {
        let model = ContinuousModel::new(
            0.12,
            0.02,
            DVector::from_vec(vec![200.0, 200.0, 3.0, 0.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2500.0, 2500.0, 1.0, 1.0])),
            0.2,
            2,
        )
        .expect("benchmark model is valid");
        Self {
            model,
            pd: 0.9,
            noise_var: 4.0,
            clutter_rate: 10.0,
            region: vec![(0.0, 800.0), (0.0, 400.0)],
            gate_quantile: 0.999,
            n_scans,
            scan_rate: 1.0,
            oos_every: 5,
            oos_delay_rate: 1.0,
            n_runs,
            seed,
            fixed_truth: false,
            l_scan,
            max_globals: 200,
            prune_hypothesis: 1e-4,
            prune_ppp: 1e-5,
            prune_alive: 1e-4,
            estimator_tpmbm: 0.4,
            estimator_tpmb: 0.5,
            metric: MetricParams::new(2.0, 10.0, 1.0).expect("benchmark metric is valid"),
            filters: vec![
                FilterVariant::parse("tpmbm:none").unwrap(),
                FilterVariant::parse("tpmbm:noos").unwrap(),
                FilterVariant::parse("tpmbm:oos").unwrap(),
                FilterVariant::parse("tpmb:none").unwrap(),
                FilterVariant::parse("tpmb:noos").unwrap(),
                FilterVariant::parse("tpmb:oos").unwrap(),
            ],
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TrackingError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self> {
        let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrackingError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if raw
                .insert(key.clone(), (lineno + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(TrackingError::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }

        let mut fields = Fields { raw };
        let lambda = fields.f64("model.lambda")?;
        let mu = fields.f64("model.mu")?;
        let q = fields.f64("model.q")?;
        let d = fields.usize("model.d")?;
        let mean = fields.f64_list("model.mean_appearance")?;
        let cov_diag = fields.f64_list("model.cov_appearance_diag")?;
        if mean.len() != 2 * d || cov_diag.len() != 2 * d {
            return Err(TrackingError::Config(format!(
                "model.mean_appearance and model.cov_appearance_diag must have {} entries",
                2 * d
            )));
        }
        let model = ContinuousModel::new(
            lambda,
            mu,
            DVector::from_vec(mean),
            DMatrix::from_diagonal(&DVector::from_vec(cov_diag)),
            q,
            d,
        )
        .map_err(|e| TrackingError::Config(format!("model: {e}")))?;

        let region_flat = fields.f64_list("sensor.region")?;
        if region_flat.len() != 2 * d {
            return Err(TrackingError::Config(format!(
                "sensor.region must list {} numbers (min max per dimension)",
                2 * d
            )));
        }
        let region: Vec<(f64, f64)> = region_flat.chunks(2).map(|c| (c[0], c[1])).collect();

        let filters_raw = fields.string("run.filters")?;
        let mut filters = Vec::new();
        for tag in filters_raw.split_whitespace() {
            filters.push(FilterVariant::parse(tag)?);
        }
        if filters.is_empty() {
            return Err(TrackingError::Config("run.filters lists no filters".into()));
        }

        let config = ExperimentConfig {
            model,
            pd: fields.f64("sensor.pd")?,
            noise_var: fields.f64("sensor.noise_var")?,
            clutter_rate: fields.f64("sensor.clutter_rate")?,
            region,
            gate_quantile: fields.f64_or("sensor.gate_quantile", 0.999)?,
            n_scans: fields.usize("sim.n_scans")?,
            scan_rate: fields.f64("sim.scan_rate")?,
            oos_every: fields.usize("sim.oos_every")?,
            oos_delay_rate: fields.f64("sim.oos_delay_rate")?,
            n_runs: fields.usize("sim.n_runs")?,
            seed: fields.u64("sim.seed")?,
            fixed_truth: fields.f64_or("sim.fixed_truth", 0.0)? != 0.0,
            l_scan: fields.usize("filter.l_scan")?,
            max_globals: fields.usize("filter.max_globals")?,
            prune_hypothesis: fields.f64("filter.prune_hypothesis")?,
            prune_ppp: fields.f64("filter.prune_ppp")?,
            prune_alive: fields.f64("filter.prune_alive")?,
            estimator_tpmbm: fields.f64("filter.estimator_tpmbm")?,
            estimator_tpmb: fields.f64("filter.estimator_tpmb")?,
            metric: MetricParams::new(
                fields.f64("metric.p")?,
                fields.f64("metric.c")?,
                fields.f64("metric.gamma")?,
            )?,
            filters,
        };

        if let Some((key, (lineno, _))) = fields.raw.iter().next() {
            return Err(TrackingError::Config(format!(
                "line {lineno}: unknown key `{key}`"
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: &str| Err(TrackingError::Config(msg.into()));
        if self.n_scans == 0 || self.n_runs == 0 {
            return err("sim.n_scans and sim.n_runs must be positive");
        }
        if !(self.scan_rate > 0.0) || !(self.oos_delay_rate >= 0.0) {
            return err("sim.scan_rate must be positive and sim.oos_delay_rate nonnegative");
        }
        if self.oos_every == 0 {
            return err("sim.oos_every must be at least 1");
        }
        if self.l_scan == 0 || self.max_globals == 0 {
            return err("filter.l_scan and filter.max_globals must be at least 1");
        }
        for v in [self.prune_hypothesis, self.prune_ppp, self.prune_alive] {
            if !(0.0..=1.0).contains(&v) {
                return err("prune thresholds must lie in [0, 1]");
            }
        }
        self.sensor()?;
        Ok(())
    }

    /// Serializes back to the flat file format.
    pub fn to_file_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mean: Vec<f64> = self.model.mean_appearance.iter().cloned().collect();
        let cov: Vec<f64> = self.model.cov_appearance.diagonal().iter().cloned().collect();
        let region: Vec<f64> = self.region.iter().flat_map(|&(a, b)| [a, b]).collect();
        let filters = self
            .filters
            .iter()
            .map(|f| f.tag())
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "model.lambda = {}\nmodel.mu = {}\nmodel.q = {}\nmodel.d = {}\n\
             model.mean_appearance = {}\nmodel.cov_appearance_diag = {}\n\
             sensor.pd = {}\nsensor.noise_var = {}\nsensor.clutter_rate = {}\n\
             sensor.region = {}\nsensor.gate_quantile = {}\n\
             sim.n_scans = {}\nsim.scan_rate = {}\nsim.oos_every = {}\n\
             sim.oos_delay_rate = {}\nsim.n_runs = {}\nsim.seed = {}\n\
             sim.fixed_truth = {}\n\
             filter.l_scan = {}\nfilter.max_globals = {}\n\
             filter.prune_hypothesis = {}\nfilter.prune_ppp = {}\nfilter.prune_alive = {}\n\
             filter.estimator_tpmbm = {}\nfilter.estimator_tpmb = {}\n\
             metric.p = {}\nmetric.c = {}\nmetric.gamma = {}\nrun.filters = {}\n",
            self.model.lambda,
            self.model.mu,
            self.model.q,
            self.model.d,
            join(&mean),
            join(&cov),
            self.pd,
            self.noise_var,
            self.clutter_rate,
            join(&region),
            self.gate_quantile,
            self.n_scans,
            self.scan_rate,
            self.oos_every,
            self.oos_delay_rate,
            self.n_runs,
            self.seed,
            if self.fixed_truth { 1 } else { 0 },
            self.l_scan,
            self.max_globals,
            self.prune_hypothesis,
            self.prune_ppp,
            self.prune_alive,
            self.estimator_tpmbm,
            self.estimator_tpmb,
            self.metric.p,
            self.metric.c,
            self.metric.gamma,
            filters,
        )
    }
}

struct Fields {
    raw: BTreeMap<String, (usize, String)>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Result<String> {
        self.raw
            .remove(key)
            .map(|(_, v)| v)
            .ok_or_else(|| TrackingError::Config(format!("missing key `{key}`")))
    }

    fn string(&mut self, key: &str) -> Result<String> {
        self.take(key)
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        let v = self.take(key)?;
        v.parse::<f64>()
            .map_err(|_| TrackingError::Config(format!("key `{key}`: `{v}` is not a number")))
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.raw.remove(key) {
            Some((_, v)) => v.parse::<f64>().map_err(|_| {
                TrackingError::Config(format!("key `{key}`: `{v}` is not a number"))
            }),
            None => Ok(default),
        }
    }

    fn usize(&mut self, key: &str) -> Result<usize> {
        let v = self.take(key)?;
        v.parse::<usize>()
            .map_err(|_| TrackingError::Config(format!("key `{key}`: `{v}` is not an integer")))
    }

    fn u64(&mut self, key: &str) -> Result<u64> {
        let v = self.take(key)?;
        v.parse::<u64>()
            .map_err(|_| TrackingError::Config(format!("key `{key}`: `{v}` is not an integer")))
    }

    fn f64_list(&mut self, key: &str) -> Result<Vec<f64>> {
        let v = self.take(key)?;
        v.split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    TrackingError::Config(format!("key `{key}`: `{tok}` is not a number"))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_round_trips_through_text() {
        let config = ExperimentConfig::benchmark(5, 120, 100, 7);
        let text = config.to_file_string();
        let parsed = ExperimentConfig::from_str(&text).unwrap();
        assert_eq!(parsed.n_scans, 120);
        assert_eq!(parsed.l_scan, 5);
        assert_eq!(parsed.seed, 7);
        assert_eq!(parsed.filters.len(), 6);
        assert_eq!(parsed.model.d, 2);
    }

    #[test]
    fn unknown_key_is_an_error_with_line() {
        let mut text = ExperimentConfig::benchmark(5, 10, 1, 1).to_file_string();
        text.push_str("filter.bogus = 3\n");
        let err = ExperimentConfig::from_str(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("filter.bogus"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn missing_and_malformed_keys_error() {
        let err = ExperimentConfig::from_str("model.lambda = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("missing key"));

        let mut text = ExperimentConfig::benchmark(5, 10, 1, 1).to_file_string();
        text = text.replace("sensor.pd = 0.9", "sensor.pd = fast");
        let err = ExperimentConfig::from_str(&text).unwrap_err();
        assert!(err.to_string().contains("sensor.pd"));
    }

    #[test]
    fn filter_tags_parse_and_display() {
        let v = FilterVariant::parse("tpmb:oos").unwrap();
        assert_eq!(v.to_string(), "OOS-TPMB");
        assert_eq!(v.tag(), "tpmb:oos");
        assert_eq!(
            FilterVariant::parse("tpmbm:noos").unwrap().to_string(),
            "(N)OOS-TPMBM"
        );
        assert!(FilterVariant::parse("glmb:oos").is_err());
    }
}
