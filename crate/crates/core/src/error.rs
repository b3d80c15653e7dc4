use thiserror::Error;

/// Errors shared by the geometry, filter and pipeline layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Parallax between the candidate base views is below the configured
    /// minimum; the pair (or the whole track) carries no usable depth
    /// information.
    #[error("degenerate parallax: theta = {theta:.3e} <= theta_min = {theta_min:.3e}")]
    DegenerateParallax { theta: f64, theta_min: f64 },

    /// The predicted pose-only point has non-positive depth in the target
    /// view, so the normalized residual is undefined.
    #[error("non-positive depth in pose-only prediction: z = {z:.3e}")]
    NonPositiveDepth { z: f64 },

    /// IMU timestamps are not strictly increasing.
    #[error("non-monotonic timestamps: {prev} then {next}")]
    TimestampOrder { prev: f64, next: f64 },

    /// The covariance lost symmetry or positive semi-definiteness.
    #[error("covariance corrupt: {0}")]
    CovarianceCorrupt(String),

    /// The sliding window already holds the maximum number of clones.
    #[error("window full: {n} clones (max {n_max})")]
    WindowFull { n: usize, n_max: usize },

    /// A clone id was requested that does not exist in the window.
    #[error("no such clone: id {0}")]
    NoSuchClone(u64),

    /// No usable measurement rows survived stacking; the update is skipped.
    #[error("no measurements")]
    NoMeasurements,

    /// A feature was observed twice in the same frame.
    #[error("duplicate observation of feature {feature_id} in frame {frame_id}")]
    DuplicateObservation { feature_id: u64, frame_id: u64 },

    /// A data file could not be parsed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A data file contained no samples.
    #[error("empty stream: {0}")]
    EmptyStream(String),

    /// Fewer than three associated pose pairs; the rigid alignment is
    /// underdetermined.
    #[error("alignment underdetermined: {pairs} associated pairs")]
    AlignmentUnderdetermined { pairs: usize },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
