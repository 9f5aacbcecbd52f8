use thiserror::Error;

/// Errors produced by qfb-core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QfbError {
    #[error("duplicate system label `{0}`")]
    LabelCollision(String),
    #[error("unknown system label `{0}`")]
    UnknownLabel(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix has a negative eigenvalue {0:.3e}")]
    NotPositive(f64),
    #[error("trace {0} differs from 1")]
    BadTrace(f64),
    #[error("vector norm {0} differs from 1")]
    BadNorm(f64),
    #[error("channel is not trace preserving (defect {0:.3e})")]
    NotTracePreserving(f64),
    #[error("operator is not an isometry (defect {0:.3e})")]
    NotIsometry(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("eigensolver failed to converge")]
    EigenFailure,
    #[error("infeasible energy constraint: budget {budget} below ground energy {ground}")]
    Infeasible { budget: f64, ground: f64 },
    #[error("conditional state is not pure (purity {0})")]
    NotPure(f64),
    #[error("branch pruning discarded mass {0:.3e}")]
    PrunedMass(f64),
    #[error("per-branch dimension {dim} exceeds cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("norm drifted by {0:.3e} through an isometric step")]
    PurityLoss(f64),
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("trace and bound refer to different channels: {0}")]
    ChannelMismatch(String),
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, QfbError>;
