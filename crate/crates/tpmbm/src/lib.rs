//! Continuous-discrete trajectory PMBM/PMB multi-target tracking with exact
//! Bayesian out-of-sequence measurement processing.
//!
//! The crate provides:
//!
//! - continuous-time model discretization at arbitrary intervals
//!   ([`continuous`]),
//! - the trajectory-PMBM posterior with prediction, L-scan truncation,
//!   pruning, multi-Bernoulli projection and estimation ([`posterior`]),
//! - the in-sequence measurement update ([`update`]),
//! - out-of-sequence processing via retrodiction, update and
//!   marginalization, plus a snap-to-nearest baseline ([`oos`]),
//! - ranked assignment solvers ([`assignment`]),
//! - a trajectory metric with localization/missed/false/switch
//!   decomposition ([`metric`]),
//! - a scenario simulator and Monte Carlo experiment harness ([`sim`],
//!   [`experiment`]).

pub use nalgebra;

pub mod assignment;
pub mod config;
pub mod continuous;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metric;
pub mod oos;
pub mod posterior;
pub mod sensor;
pub mod sim;
pub mod trajectory;
pub mod update;

pub use config::{ExperimentConfig, FilterFamily, FilterVariant, OosHandling};
pub use continuous::{
    birth_fit, oos_birth_fit, oos_survival_probability, survival_probability, wiener_kernel,
    ContinuousModel, DiscretizedKernel, GaussianBirthFit,
};
pub use error::{Result, TrackingError};
pub use experiment::{run_experiment, write_outputs, ExperimentOutput, SummaryRow, TrackingFilter};
pub use metric::{rms_error, trajectory_distance, MetricParams, MetricReport, MetricTrajectory};
pub use oos::{marginalize_oos, noos_update, oos_update, place_tau, retrodict, TauPlacement};
pub use posterior::{
    estimate, lscan_truncate, predict, prune, tpmb_project, BernoulliLocalHypothesis,
    EstimatedTrajectory, EstimatorMode, GlobalHypothesis, OosContext, PmbmPosterior,
    PoissonComponent,
};
pub use sensor::{ClutterRegion, Scan, SensorModel};
pub use sim::{sample_scenario, GroundTruth, ScanRecord, TruthTrajectory};
pub use trajectory::{MixtureTerm, TrajectoryGaussian, TrajectoryMixture};
pub use update::update;
