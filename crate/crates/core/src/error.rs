use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice basis is singular (det = {0:e})")]
    SingularBasis(f64),

    #[error("twist angle {0} rad makes the moiré lattice degenerate")]
    CommensurateDegenerate(f64),

    #[error("twist angle {0} rad outside the supported range (0, pi/6]")]
    TwistOutOfRange(f64),

    #[error("invalid commensurate indices (m, n) = ({m}, {n}): {reason}")]
    InvalidCommensurate { m: i64, n: i64, reason: &'static str },

    #[error("unknown orbital pair ({0}, {1})")]
    UnknownOrbitalPair(usize, usize),

    #[error("basis radius {lambda} exceeds the homotopy-safe limit {limit} (momenta region wraps around the monolayer cell)")]
    HomotopyViolation { lambda: f64, limit: f64 },

    #[error("real-space mesh spacing {spacing} Å cannot resolve momenta up to {max_momentum} Å⁻¹")]
    MeshTooCoarse { spacing: f64, max_momentum: f64 },

    #[error("quadrature grid too coarse: energy changed by {change:e} on refinement")]
    Aliasing { change: f64 },

    #[error("relaxation did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    #[error("coupling table does not cover the requested basis: {0}")]
    SampleMismatch(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("atoms {0} and {1} closer than 0.5 Å")]
    AtomsTooClose(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("fit rejected: {0}")]
    FitRejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
