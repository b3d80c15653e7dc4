//! Pose-only multi-state constrained Kalman filter (PO-MSCKF) for
//! visual-inertial odometry.
//!
//! The filter keeps the usual MSCKF state (IMU motion state plus a sliding
//! window of cloned camera poses) but replaces the triangulation-based
//! reprojection model with a pose-only prediction of each feature: the
//! camera-frame point is reconstructed, up to a common parallax scale, from
//! the relative poses of a maximal-parallax base-view pair and the base
//! observations themselves.  The resulting residual is linear in the motion
//! error state alone, so the update is a standard EKF correction with no
//! null-space projection and no feature position estimate.
//!
//! Crate layout:
//! - [`geom`] — quaternion/rotation helpers and the small-angle error
//!   convention shared by every module;
//! - [`po_geometry`] — pose-only two-view and multi-view geometry (parallax,
//!   depths, base-view selection, point prediction, residual);
//! - [`propagation`] — strapdown nominal-state integration and error-state
//!   covariance propagation;
//! - [`window`] — stochastic cloning and sliding-window maintenance;
//! - [`update`] — analytic observation Jacobians, residual stacking, gating
//!   and the EKF correction;
//! - [`sim`] — synthetic trajectories, IMU streams and feature tracks;
//! - [`io`] — CSV / TUM file formats;
//! - [`filter`] — the per-frame orchestration loop;
//! - [`eval`] — trajectory association, rigid alignment and ATE RMSE;
//! - [`audit`] — finite-difference audits of every analytic Jacobian.

pub mod audit;
pub mod error;
pub mod eval;
pub mod filter;
pub mod geom;
pub mod io;
pub mod po_geometry;
pub mod propagation;
pub mod sim;
pub mod update;
pub mod window;

pub use error::Error;
pub use geom::{Mat3, Quat, Vec3};

/// Convenience result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
