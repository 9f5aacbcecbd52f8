//! Output-entropy upper bounds on the classical capacity of quantum
//! channels assisted by classical feedback, together with simulators for
//! feedback protocols and randomized checks of the entropy inequalities
//! behind the bound.

pub mod bounds;
pub mod channel;
pub mod cq;
pub mod error;
pub mod linalg;
pub mod protocol;
pub mod random;
pub mod serde_util;
pub mod state;
pub mod tol;
pub mod verify;

pub use bounds::{
    binary_entropy, feedback_rate_bound, g_function, max_avg_output_entropy, max_output_entropy, BoundReport,
    EnergyConstraint,
};
pub use channel::{
    make_erasure, make_named, random_channel, ChannelMixture, ChannelSpec, IsometricDilation, KrausChannel,
    NamedChannel,
};
pub use cq::{CQEnsemble, Instrument, LoccOutcome, OneWayLocc};
pub use error::{QfbError, Result};
pub use state::{
    eigh, expectation, partial_trace, purify, tensor, trace_distance, von_neumann_entropy, DensityMatrix,
    HermitianObservable, PureState, SystemLayout,
};
pub use tol::Tolerances;
pub use verify::{
    check_lemma1, check_lemma2, check_lemma3, check_lemma3_mixture, check_mixture_fleet, check_single_channel_fleet,
    check_theorem1_chain, check_theorem2_chain, CheckResult, FleetConfig, ProtocolFleet,
};
