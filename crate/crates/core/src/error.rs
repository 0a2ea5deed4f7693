use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants split into two families: input problems (malformed or
/// inconsistent data) and numerical failures. [`Error::is_numerical`]
/// tells them apart, which the command-line front end maps to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("unknown state slot `{0}`")]
    UnknownSlot(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(
        "power flow did not converge after {iterations} iterations (max mismatch {mismatch:.3e})"
    )]
    NoConvergence { iterations: usize, mismatch: f64 },
    #[error("initialization infeasible: {0}")]
    InitInfeasible(String),
    #[error("singular eliminated block during Kron reduction")]
    SingularBlock,
    #[error("singular network equations")]
    SingularNetwork,
    #[error("numerical blow-up at t = {time:.4} s in state index {index}")]
    NumericalBlowup { time: f64, index: usize },
    #[error("linearization point is not an equilibrium (|f|inf = {residual:.3e})")]
    NotAnEquilibrium { residual: f64 },
    #[error("eigensolver failed to converge")]
    ConvergenceFailure,
    #[error(
        "eigenvectors are not normalized (|psi_i . phi_i - 1| = {deviation:.3e} for mode {mode})"
    )]
    NotNormalized { mode: usize, deviation: f64 },
    #[error("no oscillatory mode below {f_max} Hz")]
    NoCandidates { f_max: f64 },
    #[error("initial deviation excites no mode")]
    NoExcitation,
    #[error("matrix has an eigenvalue with real part {real_part:.3e} (not strictly stable)")]
    UnstableA { real_part: f64 },
    #[error("balancing transformation is ill-conditioned (condition number {condition:.3e})")]
    IllConditionedBalancing { condition: f64 },
    #[error("external area has no generators")]
    EmptyExternal,
    #[error("reduced-model construction failed at the switch: {0}")]
    SwitchFailure(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("unknown reduction method `{0}`")]
    UnknownMethod(String),
}

impl Error {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::InitInfeasible(_)
                | Error::SingularBlock
                | Error::SingularNetwork
                | Error::NumericalBlowup { .. }
                | Error::NotAnEquilibrium { .. }
                | Error::ConvergenceFailure
                | Error::NotNormalized { .. }
                | Error::NoCandidates { .. }
                | Error::NoExcitation
                | Error::UnstableA { .. }
                | Error::IllConditionedBalancing { .. }
                | Error::SwitchFailure(_)
        )
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "Io",
            Error::Parse(_) => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::UnknownSlot(_) => "UnknownSlot",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::InitInfeasible(_) => "InitInfeasible",
            Error::SingularBlock => "SingularBlock",
            Error::SingularNetwork => "SingularNetwork",
            Error::NumericalBlowup { .. } => "NumericalBlowup",
            Error::NotAnEquilibrium { .. } => "NotAnEquilibrium",
            Error::ConvergenceFailure => "ConvergenceFailure",
            Error::NotNormalized { .. } => "NotNormalized",
            Error::NoCandidates { .. } => "NoCandidates",
            Error::NoExcitation => "NoExcitation",
            Error::UnstableA { .. } => "UnstableA",
            Error::IllConditionedBalancing { .. } => "IllConditionedBalancing",
            Error::EmptyExternal => "EmptyExternal",
            Error::SwitchFailure(_) => "SwitchFailure",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::UnknownMethod(_) => "UnknownMethod",
        }
    }
}
