//! Energy-constrained maximum output entropy by Frank–Wolfe, and the
//! finite-blocklength rate cap it implies.

use serde::{Deserialize, Serialize};

use crate::channel::{top_level_population, ChannelMixture, KrausChannel};
use crate::error::{QfbError, Result};
use crate::linalg::{self, c64, CMatrix, CVector};
use crate::state::{matrix_entropy, DensityMatrix, HermitianObservable, SystemLayout};
use crate::tol;

const MAX_ITERS: usize = 500;
const GAP_TOL: f64 = 1e-6;
const GOLDEN_ITERS: usize = 40;
const BISECT_ITERS: usize = 100;
const ATOM_MERGE: f64 = 1e-10;
const ATOM_DROP: f64 = 1e-15;

/// `Tr{Hρ} ≤ E`, or no constraint at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyConstraint {
    pub hamiltonian: HermitianObservable,
    pub budget: f64,
    pub unconstrained: bool,
}

impl EnergyConstraint {
    pub fn new(hamiltonian: HermitianObservable, budget: f64) -> Result<Self> {
        let ground = hamiltonian.min_eigenvalue()?;
        if budget.is_nan() || budget < ground - tol::EQ {
            return Err(QfbError::Infeasible { budget, ground });
        }
        Ok(Self { hamiltonian, budget, unconstrained: false })
    }

    pub fn unconstrained(dim: usize) -> Self {
        let layout = SystemLayout::single("A", dim.max(1)).expect("positive dimension");
        Self { hamiltonian: HermitianObservable::zero(layout), budget: 0.0, unconstrained: true }
    }

    /// Mean photon number at most `mean_photons` on a Fock space truncated
    /// to `dim` levels.
    pub fn photon_number(dim: usize, mean_photons: f64) -> Result<Self> {
        Self::new(HermitianObservable::number_operator("A", dim)?, mean_photons)
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.matrix().nrows()
    }

    pub fn energy(&self, rho: &CMatrix) -> f64 {
        if self.unconstrained {
            return 0.0;
        }
        (self.hamiltonian.matrix() * rho).trace().re
    }
}

/// Result of a bound computation.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub value: f64,
    pub optimizer: DensityMatrix,
    pub iterations: usize,
    pub duality_gap_estimate: f64,
    /// `E − Tr{Hρ*}`; absent without a constraint.
    pub constraint_slack: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoundReportJson {
    value_bits: f64,
    iterations: usize,
    gap: f64,
    optimizer_diag: Vec<f64>,
    constraint_slack: Option<f64>,
}

impl Serialize for BoundReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BoundReportJson {
            value_bits: self.value,
            iterations: self.iterations,
            gap: self.duality_gap_estimate,
            optimizer_diag: self.optimizer_diag(),
            constraint_slack: self.constraint_slack,
        }
        .serialize(s)
    }
}

impl BoundReport {
    pub fn optimizer_diag(&self) -> Vec<f64> {
        self.optimizer.matrix().diagonal().iter().map(|z| z.re).collect()
    }

    /// Population of the highest input level; a large value means a
    /// truncated model is cutting off the optimizer.
    pub fn tail_population(&self) -> f64 {
        top_level_population(&self.optimizer)
    }
}

/// Weighted sum of output entropies and its gradient.
struct Objective<'a> {
    parts: Vec<(f64, &'a KrausChannel)>,
}

impl Objective<'_> {
    fn value(&self, rho: &CMatrix) -> Result<f64> {
        let mut v = 0.0;
        for (w, ch) in &self.parts {
            v += w * matrix_entropy(&ch.apply_matrix(rho))?;
        }
        Ok(v)
    }

    fn gradient(&self, rho: &CMatrix) -> Result<CMatrix> {
        let d = rho.nrows();
        let mut g = CMatrix::zeros(d, d);
        for (w, ch) in &self.parts {
            g += ch.adjoint_matrix(&clipped_log2(&ch.apply_matrix(rho))?) * c64(-w, 0.0);
        }
        Ok(linalg::hermitian_part(&g))
    }
}

fn clipped_log2(m: &CMatrix) -> Result<CMatrix> {
    linalg::spectral_map(m, |l| l.max(tol::LOG_FLOOR).log2())
}

/// `−N†(log₂ N(ρ))` with output eigenvalues clipped at `LOG_FLOOR`; the
/// gradient of `S(N(ρ))` up to a multiple of the identity.
pub fn output_entropy_gradient(ch: &KrausChannel, rho: &DensityMatrix) -> Result<CMatrix> {
    Objective { parts: vec![(1.0, ch)] }.gradient(rho.matrix())
}

fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Maximizes `⟨G, σ⟩` over states with `Tr{Hσ} ≤ E`.
fn linear_oracle(g: &CMatrix, ec: &EnergyConstraint) -> Result<CMatrix> {
    let top = |lambda: f64| -> Result<CVector> {
        let shifted = if ec.unconstrained { g.clone() } else { g - ec.hamiltonian.matrix() * c64(lambda, 0.0) };
        let (_, vecs) = linalg::eigh_sorted(&shifted)?;
        Ok(vecs.column(0).into_owned())
    };
    let energy = |v: &CVector| ec.energy(&projector(v));
    let v0 = top(0.0)?;
    if ec.unconstrained || energy(&v0) <= ec.budget {
        return Ok(projector(&v0));
    }
    let mut lo = (0.0, v0);
    let mut hi_lambda = 1.0_f64.max(linalg::max_abs_diff(g, &CMatrix::zeros(g.nrows(), g.ncols())));
    let mut hi = top(hi_lambda)?;
    let mut grow = 0;
    while energy(&hi) > ec.budget && grow < 200 {
        lo = (hi_lambda, hi);
        hi_lambda *= 2.0;
        hi = top(hi_lambda)?;
        grow += 1;
    }
    let mut hi = (hi_lambda, hi);
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo.0 + hi.0);
        if hi.0 - lo.0 <= 1e-10 * hi.0 {
            break;
        }
        let v = top(mid)?;
        if energy(&v) > ec.budget {
            lo = (mid, v);
        } else {
            hi = (mid, v);
        }
    }
    let (e_lo, e_hi) = (energy(&lo.1), energy(&hi.1));
    let t = if e_lo - e_hi > 0.0 { ((ec.budget - e_hi) / (e_lo - e_hi)).clamp(0.0, 1.0) } else { 0.0 };
    Ok(projector(&lo.1) * c64(t, 0.0) + projector(&hi.1) * c64(1.0 - t, 0.0))
}

/// `I/d`, mixed with the ground space of `H` when too energetic.
fn initial_point(dim: usize, ec: &EnergyConstraint) -> Result<CMatrix> {
    let mixed = linalg::identity(dim) * c64(1.0 / dim as f64, 0.0);
    let e_mixed = ec.energy(&mixed);
    if ec.unconstrained || e_mixed <= ec.budget {
        return Ok(mixed);
    }
    let (vals, vecs) = linalg::eigh_sorted(ec.hamiltonian.matrix())?;
    let ground = vals[vals.len() - 1];
    let degenerate: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] - ground <= tol::EIG).collect();
    let mut p = CMatrix::zeros(dim, dim);
    for &k in &degenerate {
        p += projector(&vecs.column(k).into_owned());
    }
    p /= c64(degenerate.len() as f64, 0.0);
    let t = if e_mixed - ground > 0.0 { ((ec.budget - ground) / (e_mixed - ground)).clamp(0.0, 1.0) } else { 1.0 };
    Ok(mixed * c64(t, 0.0) + p * c64(1.0 - t, 0.0))
}

/// Golden-section maximization of a concave slice on `[0, 1]`.
fn golden_section(f: impl Fn(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for end in [0.0, 1.0] {
        let fe = f(end)?;
        if fe > best.1 {
            best = (end, fe);
        }
    }
    Ok(best)
}

/// Pairwise Frank–Wolfe: the iterate is kept as a convex combination of
/// oracle atoms, and each step moves weight from the worst active atom to
/// the oracle atom. Falls back to a plain step when that stalls.
fn frank_wolfe(obj: &Objective, dim_in: usize, dim_out: usize, ec: &EnergyConstraint) -> Result<BoundReport> {
    if !ec.unconstrained && ec.dim() != dim_in {
        return Err(QfbError::DimensionMismatch(format!(
            "Hamiltonian acts on dimension {}, channel input is {dim_in}",
            ec.dim()
        )));
    }
    let mut rho = initial_point(dim_in, ec)?;
    let mut atoms: Vec<(f64, CMatrix)> = vec![(1.0, rho.clone())];
    let mut value = obj.value(&rho)?;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let inner = |a: &CMatrix, b: &CMatrix| a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum::<f64>();
    while iterations < MAX_ITERS {
        let g = obj.gradient(&rho)?;
        let s = linear_oracle(&g, ec)?;
        let gs = inner(&g, &s);
        gap = (gs - inner(&g, &rho)).max(0.0);
        if gap <= GAP_TOL {
            break;
        }
        iterations += 1;
        let away = atoms
            .iter()
            .enumerate()
            .map(|(k, (_, a))| (k, inner(&g, a)))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(k, _)| k)
            .expect("active set is never empty");
        let (alpha_away, a_away) = atoms[away].clone();
        let pair_dir = &s - &a_away;
        let (t, v) = golden_section(|t| obj.value(&(&rho + &pair_dir * c64(t * alpha_away, 0.0))))?;
        let (dir, gamma, v, pairwise) = if t > 0.0 && v > value {
            (pair_dir, t * alpha_away, v, true)
        } else {
            let dir = &s - &rho;
            let (t, v) = golden_section(|t| obj.value(&(&rho + &dir * c64(t, 0.0))))?;
            (dir, t, v, false)
        };
        if gamma <= 0.0 || v < value {
            break;
        }
        rho += dir * c64(gamma, 0.0);
        value = v;
        if pairwise {
            atoms[away].0 -= gamma;
        } else {
            for a in &mut atoms {
                a.0 *= 1.0 - gamma;
            }
        }
        match atoms.iter().position(|(_, a)| linalg::max_abs_diff(a, &s) < ATOM_MERGE) {
            Some(k) => atoms[k].0 += gamma,
            None => atoms.push((gamma, s)),
        }
        atoms.retain(|(w, _)| *w > ATOM_DROP);
    }
    let layout = SystemLayout::single("A", dim_in)?;
    let constraint_slack = (!ec.unconstrained).then(|| ec.budget - ec.energy(&rho));
    Ok(BoundReport {
        value: value.clamp(0.0, (dim_out as f64).log2()),
        optimizer: DensityMatrix::from_parts(layout, linalg::hermitian_part(&rho)),
        iterations,
        duality_gap_estimate: gap,
        constraint_slack,
    })
}

/// `sup { S(N(ρ)) : Tr{Hρ} ≤ E }` in bits.
pub fn max_output_entropy(ch: &KrausChannel, ec: &EnergyConstraint) -> Result<BoundReport> {
    frank_wolfe(&Objective { parts: vec![(1.0, ch)] }, ch.dim_in(), ch.dim_out(), ec)
}

/// `sup { Σ_z p(z) S(N^z(ρ)) : Tr{Hρ} ≤ E }` in bits.
pub fn max_avg_output_entropy(mix: &ChannelMixture, ec: &EnergyConstraint) -> Result<BoundReport> {
    let parts = mix.components().iter().filter(|(w, _)| *w > 0.0).map(|(w, c)| (*w, c)).collect();
    frank_wolfe(&Objective { parts }, mix.dim_in(), mix.dim_out(), ec)
}

/// `(n·b + h₂(ε)) / (1 − ε)`, the largest `log₂ M` compatible with error `ε`.
pub fn feedback_rate_bound(n: usize, epsilon: f64, bound_per_use: f64) -> Result<f64> {
    if n == 0 {
        return Err(QfbError::InvalidParameter("n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(QfbError::InvalidParameter(format!("epsilon {epsilon} outside [0, 1)")));
    }
    Ok((n as f64 * bound_per_use + binary_entropy(epsilon)) / (1.0 - epsilon))
}

pub fn binary_entropy(eps: f64) -> f64 {
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    term(eps) + term(1.0 - eps)
}

/// `(x+1) log₂(x+1) − x log₂ x`, the entropy of a thermal state with mean
/// photon number `x`.
pub fn g_function(x: f64) -> Result<f64> {
    if x.is_nan() || x < 0.0 {
        return Err(QfbError::InvalidParameter(format!("g requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((x + 1.0) * (x + 1.0).log2() - x * x.log2())
}
