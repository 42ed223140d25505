//! Linear-Gaussian point-target sensor model and measurement scans.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, TrackingError};

/// Axis-aligned clutter region with uniform clutter density.
#[derive(Debug, Clone)]
pub struct ClutterRegion {
    /// Per-axis `(min, max)` bounds.
    pub bounds: Vec<(f64, f64)>,
}

impl ClutterRegion {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(TrackingError::invalid("degenerate clutter region"));
        }
        Ok(Self { bounds })
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        z.len() == self.bounds.len()
            && z.iter()
                .zip(self.bounds.iter())
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

/// Sensor model: `z = H x + v`, `v ~ N(0, R)`, detection probability `p_D`,
/// Poisson clutter uniform over a region.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p_detect: f64,
    /// Expected clutter count per scan.
    pub clutter_rate: f64,
    pub clutter_region: ClutterRegion,
    /// Chi-squared probability for ellipsoidal gating.
    pub gate_quantile: f64,
}

impl SensorModel {
    pub fn new(
        h: DMatrix<f64>,
        r: DMatrix<f64>,
        p_detect: f64,
        clutter_rate: f64,
        clutter_region: ClutterRegion,
        gate_quantile: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_detect) {
            return Err(TrackingError::invalid("p_detect must lie in [0, 1]"));
        }
        if clutter_rate < 0.0 {
            return Err(TrackingError::invalid("clutter_rate must be nonnegative"));
        }
        if !(0.0 < gate_quantile && gate_quantile < 1.0) {
            return Err(TrackingError::invalid("gate_quantile must lie in (0, 1)"));
        }
        if h.nrows() != r.nrows() || r.nrows() != r.ncols() {
            return Err(TrackingError::invalid("H and R dimensions disagree"));
        }
        if r.clone().cholesky().is_none() {
            return Err(TrackingError::invalid("R must be positive definite"));
        }
        if clutter_region.bounds.len() != h.nrows() {
            return Err(TrackingError::invalid(
                "clutter region dimension must match the measurement dimension",
            ));
        }
        Ok(Self {
            h,
            r,
            p_detect,
            clutter_rate,
            clutter_region,
            gate_quantile,
        })
    }

    /// Position-only sensor in `d` dimensions with `R = sigma^2 I`.
    pub fn position_sensor(
        d: usize,
        noise_var: f64,
        p_detect: f64,
        clutter_rate: f64,
        clutter_region: ClutterRegion,
        gate_quantile: f64,
    ) -> Result<Self> {
        let mut h = DMatrix::zeros(d, 2 * d);
        for i in 0..d {
            h[(i, i)] = 1.0;
        }
        let r = DMatrix::identity(d, d) * noise_var;
        Self::new(h, r, p_detect, clutter_rate, clutter_region, gate_quantile)
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }

    /// Squared-Mahalanobis gate threshold (chi-squared quantile at the
    /// measurement dimension).
    pub fn gate_threshold(&self) -> f64 {
        let chi = ChiSquared::new(self.measurement_dim() as f64)
            .expect("measurement dimension is positive");
        chi.inverse_cdf(self.gate_quantile)
    }

    /// Clutter intensity at `z`: `clutter_rate * uniform_A(z)`, zero outside
    /// the region.
    pub fn clutter_intensity(&self, z: &DVector<f64>) -> f64 {
        if self.clutter_region.contains(z) {
            self.clutter_rate / self.clutter_region.volume()
        } else {
            0.0
        }
    }
}

/// One timestamped measurement set.
#[derive(Debug, Clone)]
pub struct Scan {
    pub time: f64,
    pub measurements: Vec<DVector<f64>>,
    /// Identifier used in association histories (the scan's index in the
    /// generating stream).
    pub scan_id: u32,
}
