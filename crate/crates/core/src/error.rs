//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (max asymmetry {defect:.3e})")]
    NotSkewSymmetric { defect: f64 },

    #[error("rotation axis must be a unit vector (norm {norm})")]
    NonUnitAxis { norm: f64 },

    #[error("matrix fails the rotation check (orthonormality defect {defect:.3e})")]
    InvalidRotation { defect: f64 },

    #[error("rotation angle too close to pi for a stable logarithm (trace {trace})")]
    LogBranchPoint { trace: f64 },

    #[error("steering angle must satisfy |phi| < pi/2 (got {phi})")]
    SteeringLimit { phi: f64 },

    #[error("point is not on the sphere of radius {radius} (|y| = {norm})")]
    OffSphere { norm: f64, radius: f64 },

    #[error("curve leaves the sphere tangentially (<y, y'> = {inner:.3e})")]
    NotTangent { inner: f64 },

    #[error("south-pole configuration: the heading frame is undefined there")]
    PoleSingularity,

    #[error("curve speed vanishes; the flat parametrization is undefined")]
    ZeroSpeed,

    #[error("positions are antipodal; the tracking-error axis is undefined")]
    Antipodal,

    #[error("speed feedback singular: |<tau, beta_d>| = {denominator:.3e} outside the limit region")]
    SingularConfiguration { denominator: f64 },

    #[error("delta-rate denominator |sin(delta) sin(sigma)| = {denominator:.3e} with non-vanishing numerator")]
    DeltaRateSingular { denominator: f64 },

    #[error("steering solve infeasible: {reason}")]
    InfeasibleSteering { reason: String },

    #[error("pole placement failed: {reason}")]
    PolePlacement { reason: String },

    #[error("observer gain l22 must be negative (got {l22})")]
    GainSignCondition { l22: f64 },

    #[error("observer error {angle} rad is outside the local regime")]
    OutOfLocalRegime { angle: f64 },

    #[error("tracking diverged (sigma = {sigma} rad)")]
    Diverged { sigma: f64 },

    #[error("speed must stay positive for reparametrization (v = {speed} at t = {t})")]
    NonPositiveSpeed { speed: f64, t: f64 },

    #[error("quadrature residual {residual:.3e} exceeds tolerance; refine the time grid")]
    QuadratureResidual { residual: f64 },

    #[error("invalid value for `{field}`: {reason}")]
    ConfigValidation { field: String, reason: String },

    #[error("could not parse configuration: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("at arc length {station}: {source}")]
    AtStation {
        station: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach the arc-length station at which the error occurred.
    pub fn at_station(self, station: f64) -> Error {
        Error::AtStation {
            station,
            source: Box::new(self),
        }
    }

    /// The innermost error, unwrapping station annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStation { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit status for the command-line runner: 2 for controller
    /// infeasibility, 3 for observer/regime failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::SingularConfiguration { .. }
            | Error::DeltaRateSingular { .. }
            | Error::InfeasibleSteering { .. } => 2,
            Error::OutOfLocalRegime { .. } | Error::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
