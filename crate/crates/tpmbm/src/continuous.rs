//! Continuous-time multi-target model and its exact discretizations.
//!
//! Target appearances follow a Poisson process with rate `lambda`, lifetimes
//! are exponential with rate `mu` (an M/M/infinity birth-death process), and
//! single-target motion is a Wiener velocity model with diffusion intensity
//! `q` in `d` spatial dimensions. All quantities needed by the discrete-time
//! filters (survival probabilities, transition kernels, birth intensities)
//! are produced here for arbitrary time intervals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, TrackingError};
use crate::linalg::{adaptive_quadrature, symmetrize};

/// Relative tolerance for the birth-moment quadrature.
const BIRTH_QUAD_REL_TOL: f64 = 1e-10;

/// Continuous-time multi-target model parameters.
#[derive(Debug, Clone)]
pub struct ContinuousModel {
    /// Appearance rate (1/s).
    pub lambda: f64,
    /// Death rate (1/s); mean lifetime is `1/mu`.
    pub mu: f64,
    /// Mean state at appearance, dimension `2d` (positions then velocities).
    pub mean_appearance: DVector<f64>,
    /// State covariance at appearance, `2d x 2d`, symmetric positive definite.
    pub cov_appearance: DMatrix<f64>,
    /// Wiener velocity diffusion intensity (m^2/s^3).
    pub q: f64,
    /// Spatial dimension.
    pub d: usize,
}

impl ContinuousModel {
    pub fn new(
        lambda: f64,
        mu: f64,
        mean_appearance: DVector<f64>,
        cov_appearance: DMatrix<f64>,
        q: f64,
        d: usize,
    ) -> Result<Self> {
        // lambda = 0 is admitted for birth-free analyses.
        if !(lambda >= 0.0) || !(mu > 0.0) || !(q > 0.0) || d < 1 {
            return Err(TrackingError::invalid(
                "lambda must be nonnegative, mu and q positive, d >= 1",
            ));
        }
        let nx = 2 * d;
        if mean_appearance.len() != nx || cov_appearance.nrows() != nx || cov_appearance.ncols() != nx
        {
            return Err(TrackingError::invalid(format!(
                "appearance moments must have dimension {nx}"
            )));
        }
        if !crate::linalg::is_symmetric_psd(&cov_appearance)
            || cov_appearance.clone().cholesky().is_none()
        {
            return Err(TrackingError::invalid(
                "cov_appearance must be symmetric positive definite",
            ));
        }
        Ok(Self {
            lambda,
            mu,
            mean_appearance,
            cov_appearance,
            q,
            d,
        })
    }

    /// State dimension `2d`.
    pub fn state_dim(&self) -> usize {
        2 * self.d
    }
}

/// Exact discretization of the Wiener velocity SDE over one interval.
#[derive(Debug, Clone)]
pub struct DiscretizedKernel {
    /// Transition matrix.
    pub f: DMatrix<f64>,
    /// Process-noise covariance.
    pub q: DMatrix<f64>,
    /// Interval length (s).
    pub dt: f64,
}

/// Gaussian fit to a birth PPP: expected count plus moment-matched moments.
#[derive(Debug, Clone)]
pub struct GaussianBirthFit {
    /// Expected number of new trajectories.
    pub expected_count: f64,
    /// Moment-matched mean.
    pub mean: DVector<f64>,
    /// Moment-matched covariance.
    pub cov: DMatrix<f64>,
}

/// Probability that a target alive at the start of an interval of length
/// `dt` is still alive at its end: `exp(-mu dt)`.
pub fn survival_probability(mu: f64, dt: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(TrackingError::invalid("mu must be positive"));
    }
    if dt < 0.0 {
        return Err(TrackingError::invalid("dt must be nonnegative"));
    }
    Ok((-mu * dt).exp())
}

/// Conditional survival across a sub-interval: the probability that a target
/// known to die (or to have appeared) within an interval of length
/// `dt_interval` is still alive a lag `dt` into it. Truncated-exponential
/// tail `(exp(-mu dt) - exp(-mu dt_interval)) / (1 - exp(-mu dt_interval))`.
pub fn oos_survival_probability(mu: f64, dt: f64, dt_interval: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(TrackingError::invalid("mu must be positive"));
    }
    if !(dt_interval > 0.0) {
        return Err(TrackingError::invalid("dt_interval must be positive"));
    }
    if dt < 0.0 || dt > dt_interval {
        return Err(TrackingError::invalid(
            "dt must lie within [0, dt_interval]",
        ));
    }
    let num = (-mu * dt).exp() - (-mu * dt_interval).exp();
    let den = -(-mu * dt_interval).exp_m1();
    Ok((num / den).clamp(0.0, 1.0))
}

/// Exact transition kernel of the Wiener velocity model over `dt` seconds.
///
/// F has identity position/velocity blocks with a `dt I` coupling; Q has
/// blocks `q dt^3/3`, `q dt^2/2`, `q dt`.
pub fn wiener_kernel(q: f64, d: usize, dt: f64) -> Result<DiscretizedKernel> {
    if !(q > 0.0) || d < 1 {
        return Err(TrackingError::invalid("q must be positive and d >= 1"));
    }
    if dt < 0.0 {
        return Err(TrackingError::invalid("dt must be nonnegative"));
    }
    let nx = 2 * d;
    let mut f = DMatrix::identity(nx, nx);
    let mut qm = DMatrix::zeros(nx, nx);
    for i in 0..d {
        f[(i, d + i)] = dt;
        qm[(i, i)] = q * dt.powi(3) / 3.0;
        qm[(i, d + i)] = q * dt * dt / 2.0;
        qm[(d + i, i)] = q * dt * dt / 2.0;
        qm[(d + i, d + i)] = q * dt;
    }
    Ok(DiscretizedKernel { f, q: qm, dt })
}

/// Single-target density an elapsed time `t` after appearance:
/// `N(x; F_t x_a, F_t P_a F_t^T + Q_t)`. Returns (mean, cov).
fn appearance_moments_at_lag(model: &ContinuousModel, t: f64) -> (DVector<f64>, DMatrix<f64>) {
    let kernel = wiener_kernel(model.q, model.d, t).expect("lag is nonnegative");
    let mean = &kernel.f * &model.mean_appearance;
    let mut cov = &kernel.f * &model.cov_appearance * kernel.f.transpose() + &kernel.q;
    symmetrize(&mut cov);
    (mean, cov)
}

/// Moment-matches the time-lag mixture
/// `int_0^dt N(x; F_t x_a, F_t P_a F_t^T + Q_t) p_dt(t) dt`
/// where `p_dt` is the truncated exponential lag density. The quadrature
/// integrates `[density, density * mean, density * second_moment]` jointly
/// and normalizes by the computed mass.
fn lag_mixture_moments(model: &ContinuousModel, dt: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nx = model.state_dim();
    let mu = model.mu;
    let norm = -(-mu * dt).exp_m1(); // 1 - exp(-mu dt)
    let integrand = |t: f64| -> DVector<f64> {
        let density = mu * (-mu * t).exp() / norm;
        let (mean, cov) = appearance_moments_at_lag(model, t);
        let second = &cov + &mean * mean.transpose();
        let mut out = DVector::zeros(1 + nx + nx * nx);
        out[0] = density;
        for i in 0..nx {
            out[1 + i] = density * mean[i];
        }
        for c in 0..nx {
            for r in 0..nx {
                out[1 + nx + c * nx + r] = density * second[(r, c)];
            }
        }
        out
    };
    let raw = adaptive_quadrature(integrand, 0.0, dt, BIRTH_QUAD_REL_TOL)?;
    let mass = raw[0];
    if !(mass > 0.0) {
        return Err(TrackingError::NumericalFailure {
            what: "birth lag density integrated to a nonpositive mass".into(),
            residual: mass,
        });
    }
    let mean = DVector::from_iterator(nx, (0..nx).map(|i| raw[1 + i] / mass));
    let mut second = DMatrix::zeros(nx, nx);
    for c in 0..nx {
        for r in 0..nx {
            second[(r, c)] = raw[1 + nx + c * nx + r] / mass;
        }
    }
    let mut cov = second - &mean * mean.transpose();
    symmetrize(&mut cov);
    Ok((mean, cov))
}

/// Gaussian fit to the birth PPP over one prediction interval.
///
/// The expected count is `(lambda/mu)(1 - exp(-mu dt))`; the moments are the
/// moment-matched (KLD-minimizing) Gaussian fit to the appearance-lag
/// mixture, computed by adaptive quadrature.
pub fn birth_fit(model: &ContinuousModel, dt: f64) -> Result<GaussianBirthFit> {
    if !(dt > 0.0) {
        return Err(TrackingError::invalid("dt must be positive"));
    }
    let expected_count = model.lambda / model.mu * (-(-model.mu * dt).exp_m1());
    let (mean, cov) = lag_mixture_moments(model, dt)?;
    Ok(GaussianBirthFit {
        expected_count,
        mean,
        cov,
    })
}

/// Gaussian fit to the PPP of trajectories that appear during the first
/// sub-interval (`dt1`) and disappear during the second (`dt2`). The
/// expected count is `(lambda/mu)(1 - exp(-mu dt1))(1 - exp(-mu dt2))`;
/// the spatial moments coincide with `birth_fit` over `dt1`.
pub fn oos_birth_fit(model: &ContinuousModel, dt1: f64, dt2: f64) -> Result<GaussianBirthFit> {
    if !(dt1 > 0.0) || !(dt2 > 0.0) {
        return Err(TrackingError::invalid("dt1 and dt2 must be positive"));
    }
    let base = birth_fit(model, dt1)?;
    let expected_count = oos_birth_expected_count(model.lambda, model.mu, dt1, dt2);
    Ok(GaussianBirthFit {
        expected_count,
        mean: base.mean,
        cov: base.cov,
    })
}

/// Expected number of trajectories that appear within `dt1` and disappear
/// within the following `dt2`.
pub fn oos_birth_expected_count(lambda: f64, mu: f64, dt1: f64, dt2: f64) -> f64 {
    lambda / mu * (-(-mu * dt1).exp_m1()) * (-(-mu * dt2).exp_m1())
}
