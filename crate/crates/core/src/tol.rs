//! Numerical tolerances. All absolute, all in natural units (bits for
//! entropic quantities).

use serde::{Deserialize, Serialize};

pub const HERM: f64 = 1e-10;
pub const PSD: f64 = 1e-9;
pub const TRACE: f64 = 1e-9;
pub const EIG: f64 = 1e-9;
pub const EQ: f64 = 1e-8;
pub const TP: f64 = 1e-9;
pub const INEQ: f64 = 1e-7;
/// Eigenvalues at or below this are treated as exact zeros in entropies.
pub const CLIP: f64 = 1e-12;
/// Floor applied to output eigenvalues before taking the log in gradients.
pub const LOG_FLOOR: f64 = 1e-12;
/// Branches lighter than this are dropped.
pub const P_MIN: f64 = 1e-12;
/// Total mass a single pruning step may discard.
pub const PRUNE_BUDGET: f64 = 1e-9;
/// Margins below this are genuine counterexamples, not roundoff.
pub const GENUINE_VIOLATION: f64 = 1e-5;

/// Overridable tolerance set used by input validation and the
/// verification harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub herm: f64,
    pub psd: f64,
    pub tr: f64,
    pub eig: f64,
    pub eq: f64,
    pub tp: f64,
    pub ineq: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { herm: HERM, psd: PSD, tr: TRACE, eig: EIG, eq: EQ, tp: TP, ineq: INEQ }
    }
}

impl Tolerances {
    pub fn all_positive(&self) -> bool {
        [self.herm, self.psd, self.tr, self.eig, self.eq, self.tp, self.ineq].iter().all(|t| *t > 0.0 && t.is_finite())
    }
}
