//! Incentive model for private vehicular data sharing.
//!
//! A data consumer pays vehicles `c1` per sample, asks them to report at
//! `f_d` samples per minute, and spreads reports over `s` servers. Vehicles
//! participate when the payment outweighs their perceived privacy loss.
//! This crate calibrates the loss and utility models from trajectories,
//! maximizes the consumer's profit, and simulates the server layer.
//!
//! Modules, bottom up:
//!
//! * [`trajectory`], [`grid`]: ingestion, synthetic walks, subsampling,
//!   projection and spatio-temporal occupancy maps.
//! * [`privacy`]: discrete Fréchet distance, path similarity, loss
//!   calibration and the total loss function.
//! * [`utility`]: per-cell utility, the average-utility surface and its fit.
//! * [`econ`]: participation, server cost and profit.
//! * [`optimize`]: multi-start Nelder-Mead, the grid oracle and sweeps.
//! * [`smpc`]: routing, additive secret sharing and the adversary.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod econ;
pub mod error;
pub mod fit;
pub mod grid;
pub mod nelder_mead;
pub mod optimize;
pub mod privacy;
pub mod smpc;
pub mod stats;
pub mod trajectory;
pub mod utility;

pub use econ::{
    expected_participants, per_server_cost, profit, profit_breakdown, validate_params, vehicle_utility,
    EconParams, GuidanceWarning, ParticipationModel, PrivacySensitivity, ProfitBreakdown, ServerCostModel,
};
pub use error::{Error, Result};
pub use grid::{build_map, build_map_with, CountMode, GridSpec, SpatioTemporalMap};
pub use optimize::{grid_oracle, optimize_profit, sweep, Bounds, Solution, SweepParameter, SweepResult};
pub use privacy::{
    calibrate_per_server_loss, discrete_frechet, path_similarity, total_loss, CalibrationReport, LossModel,
};
pub use smpc::{
    adversary_reconstruct, aggregate_secure, empirical_privacy_curve, route_samples, secret_share,
    AdversaryModel, AggregationTranscript, FieldElement, ServerInbox,
};
pub use stats::lognormal_cdf;
pub use trajectory::{
    generate_synthetic, parse_traces, project_planar, subsample, BBox, GeoSample, PlanarPath, Trajectory,
};
pub use utility::{build_utility_surface, eval_utility, fit_utility, grid_utility, UtilityModel, UtilitySurface};
