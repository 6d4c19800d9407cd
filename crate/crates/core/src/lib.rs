//! Identity-perturbation ellipsoid fitting for random Gaussian point clouds.
//!
//! * [`linalg`]: packed symmetric matrices, Cholesky solves, extreme eigenvalues.
//! * [`sampling`]: seeded Gaussian point clouds.
//! * [`ellipsoid`]: the construction, its certificates and a least-norm oracle.
//! * [`diagnostics`]: concentration events, heavy/light splits, tail estimates.
//! * [`harness`]: config-driven phase sweeps with CSV output.

pub mod diagnostics;
pub mod ellipsoid;
pub mod harness;
pub mod linalg;
pub mod sampling;
pub mod stats;

pub use diagnostics::{
    check_events, diagnose, epsilon_moments, epsilon_tail, heavy_light_split, tensor_tail, Cutoffs,
    DiagnoseOptions, DiagnosticsError, DiagnosticsReport, EventReport, SplitResult, TailEstimate,
};
pub use ellipsoid::{
    fit_ellipsoid, fit_ellipsoid_detailed, least_norm_oracle, verify, Certificate, DeviationVector,
    EllipsoidError, Fit, FitResult, FitStatus, QFile,
};
pub use harness::{
    estimate_threshold, run_sweep, run_sweep_with, HarnessError, RunOptions, SweepConfig,
    SweepResult, TrialRecord,
};
pub use linalg::{EigPair, LinalgError, SymMatrix};
pub use sampling::{derive_trial_seed, sample_cloud, CloudFile, PointCloud, SamplingError};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
