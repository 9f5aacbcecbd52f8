//! Feedback-assisted communication protocols.
//!
//! [`run_original`] executes a protocol on density matrices.
//! [`run_purified`] executes its purified simulation, where every branch
//! (message, feedback history, mixture labels) carries a pure vector and
//! Bob keeps a copy of each feedback value. [`run_mixture_simulation`]
//! additionally draws a shared label `Z_i` before every channel use and
//! applies the matching mixture component.
//!
//! Branch vectors are stored over five slots, `[A', X, B', RB, R]`: Alice's
//! memory, the system in flight (`A` before the channel, `B` after it,
//! trivial otherwise), Bob's memory, Bob's purifying reference and an inert
//! reference `R` holding Alice's purification together with encoder and
//! channel environments. Nothing ever acts on `R` again, so it is
//! Schmidt-compressed branch by branch.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::binary_entropy;
use crate::channel::{random_channel_with, ChannelSpec, IsometricDilation, KrausChannel};
use crate::cq::{CQEnsemble, Instrument};
use crate::error::{QfbError, Result};
use crate::linalg::{self, c64, CMatrix, CVector};
use crate::random::{dirichlet_uniform, haar_isometry, haar_unitary, random_density, rng_from_seed};
use crate::serde_util;
use crate::state::{
    entropy_from_spectrum, matrix_entropy, purify_with_reference_dim, trace_distance, DensityMatrix,
    HermitianObservable, SystemLayout,
};
use crate::tol;

pub const DEFAULT_DIM_CAP: usize = 64;

/// A protocol: `n` channel uses, `m` messages, encoders indexed by the
/// latest feedback value, intermediate decoders as instruments whose
/// outcome is fed back, and a final POVM on `B_n B'_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ProtocolSpec {
    pub n: usize,
    pub m: usize,
    pub channel: ChannelSpec,
    /// Register `F0` with Bob's initial states on a single factor.
    pub initial_bob: CQEnsemble,
    /// One state on `A'_0` per message.
    pub codewords: Vec<DensityMatrix>,
    /// `encoders[i][f]` maps `A'_i → A'_{i+1} ⊗ A` given feedback `f`.
    pub encoders: Vec<Vec<KrausChannel>>,
    /// `decoders[i]` maps `B ⊗ B'_{i+1} → B'_{i+2}`, outcome `F_{i+1}`.
    pub decoders: Vec<Instrument>,
    pub povm: Vec<CMatrix>,
    pub hamiltonian: HermitianObservable,
    pub energy_budget: f64,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    n: usize,
    m: usize,
    channel: ChannelSpec,
    initial_bob: CQEnsemble,
    codewords: Vec<DensityMatrix>,
    encoders: Vec<Vec<KrausChannel>>,
    decoders: Vec<Instrument>,
    #[serde(with = "serde_util::matrix_list")]
    povm: Vec<CMatrix>,
    hamiltonian: HermitianObservable,
    energy_budget: f64,
}

impl TryFrom<RawSpec> for ProtocolSpec {
    type Error = QfbError;
    fn try_from(r: RawSpec) -> Result<Self> {
        let spec = ProtocolSpec {
            n: r.n,
            m: r.m,
            channel: r.channel,
            initial_bob: r.initial_bob,
            codewords: r.codewords,
            encoders: r.encoders,
            decoders: r.decoders,
            povm: r.povm,
            hamiltonian: r.hamiltonian,
            energy_budget: r.energy_budget,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ProtocolSpec> for RawSpec {
    fn from(s: ProtocolSpec) -> Self {
        RawSpec {
            n: s.n,
            m: s.m,
            channel: s.channel,
            initial_bob: s.initial_bob,
            codewords: s.codewords,
            encoders: s.encoders,
            decoders: s.decoders,
            povm: s.povm,
            hamiltonian: s.hamiltonian,
            energy_budget: s.energy_budget,
        }
    }
}

/// Dimensions of every system in every round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolDims {
    pub a: usize,
    pub b: usize,
    /// `a_prime[i]` is the dimension of `A'_i`, for `i = 0..=n`.
    pub a_prime: Vec<usize>,
    /// `b_prime[i]` is the dimension of Bob's memory entering round `i+1`.
    pub b_prime: Vec<usize>,
    /// `feedback[i]` is the alphabet size of `F_i`.
    pub feedback: Vec<usize>,
}

fn bad(msg: impl Into<String>) -> QfbError {
    QfbError::InvalidProtocol(msg.into())
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<ProtocolDims> {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return Err(bad("need at least one round and one message"));
        }
        let a = self.channel.dim_in();
        let b = self.channel.dim_out();
        if self.codewords.len() != m {
            return Err(bad(format!("{} codewords for {m} messages", self.codewords.len())));
        }
        let a0 = self.codewords[0].dim();
        if self.codewords.iter().any(|c| c.layout().len() != 1 || c.dim() != a0) {
            return Err(bad("codewords must be single-factor states of equal dimension"));
        }
        if self.initial_bob.registers().len() != 1 || self.initial_bob.layout().len() != 1 {
            return Err(bad("initial Bob ensemble needs one register and one quantum factor"));
        }
        let mut feedback = vec![self.initial_bob.registers()[0].1];
        feedback.extend(self.decoders.iter().map(Instrument::num_outcomes));
        let mut a_prime = vec![a0];
        if self.encoders.len() != n {
            return Err(bad(format!("{} encoders for {n} rounds", self.encoders.len())));
        }
        if self.decoders.len() != n - 1 {
            return Err(bad(format!("{} decoders for {n} rounds", self.decoders.len())));
        }
        for (i, encs) in self.encoders.iter().enumerate() {
            if encs.len() != feedback[i] {
                return Err(bad(format!(
                    "round {} has {} encoders for {} feedback values",
                    i + 1,
                    encs.len(),
                    feedback[i]
                )));
            }
            let (din, dout) = (encs[0].dim_in(), encs[0].dim_out());
            if encs.iter().any(|e| e.dim_in() != din || e.dim_out() != dout) {
                return Err(bad(format!("round {} encoders differ in shape", i + 1)));
            }
            if din != a_prime[i] || dout % a != 0 {
                return Err(QfbError::DimensionMismatch(format!(
                    "round {} encoder is {din} -> {dout}, Alice holds {} and the channel takes {a}",
                    i + 1,
                    a_prime[i]
                )));
            }
            a_prime.push(dout / a);
        }
        let mut b_prime = vec![self.initial_bob.layout().dim()];
        for (i, d) in self.decoders.iter().enumerate() {
            if d.dim_in() != b * b_prime[i] {
                return Err(QfbError::DimensionMismatch(format!(
                    "decoder {} takes {}, Bob holds {}",
                    i + 1,
                    d.dim_in(),
                    b * b_prime[i]
                )));
            }
            b_prime.push(d.dim_out());
        }
        let dm = b * b_prime[n - 1];
        if self.povm.len() != m {
            return Err(bad(format!("{} POVM elements for {m} messages", self.povm.len())));
        }
        let mut sum = CMatrix::zeros(dm, dm);
        for e in &self.povm {
            if e.shape() != (dm, dm) {
                return Err(QfbError::DimensionMismatch(format!("POVM elements must be {dm}x{dm}")));
            }
            let dev = linalg::hermitian_deviation(e);
            if dev > tol::HERM {
                return Err(QfbError::NotHermitian(dev));
            }
            let low = linalg::eigvalsh(e)?.last().copied().unwrap_or(0.0);
            if low < -tol::PSD {
                return Err(QfbError::NotPositive(low));
            }
            sum += e;
        }
        let defect = linalg::max_abs_diff(&sum, &linalg::identity(dm));
        if defect > tol::TP {
            return Err(QfbError::NotTracePreserving(defect));
        }
        if self.hamiltonian.matrix().nrows() != a {
            return Err(QfbError::DimensionMismatch("Hamiltonian must act on the channel input".into()));
        }
        if !self.energy_budget.is_finite() || self.energy_budget < 0.0 {
            return Err(bad("energy budget must be finite and non-negative"));
        }
        Ok(ProtocolDims { a, b, a_prime, b_prime, feedback })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Include Bob's feedback copies in the monotone.
    pub keep_copies: bool,
    /// Record per-round ensembles in the trace.
    pub keep_states: bool,
    /// Largest allowed product of non-reference dimensions in a branch.
    pub dim_cap: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { keep_copies: true, keep_states: false, dim_cap: DEFAULT_DIM_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    Original,
    Purified,
    Mixture,
}

/// States recorded for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStates {
    /// After encoding, on `A' A B'`.
    pub omega: CQEnsemble,
    /// After the channel, on `A' B B'`.
    pub rho: CQEnsemble,
    /// Bob's side entering the channel use, as fed to the monotone.
    pub bob_before: CQEnsemble,
    /// Bob's side after the channel use.
    pub bob_after: CQEnsemble,
    pub input: DensityMatrix,
    pub output: DensityMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub monotone_before: f64,
    pub monotone_after: f64,
    pub input_energy: f64,
    /// `S(B_i)`.
    pub channel_output_entropy: f64,
    /// `S(B_i | Z_i)` in mixture simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditional_output_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<RoundStates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub mode: TraceMode,
    pub n: usize,
    pub m: usize,
    pub keep_copies: bool,
    pub dim_in: usize,
    pub dim_out: usize,
    pub rounds: Vec<RoundRecord>,
    /// `p(w, ŵ)`, indexed `[w][ŵ]`.
    pub joint_distribution: Vec<Vec<f64>>,
    pub error_probability: f64,
    /// `½‖Φ̄ − ρ_WŴ‖₁`.
    pub final_trace_distance: f64,
    /// `I(W;Ŵ)`.
    pub message_information: f64,
    pub average_energy: f64,
    pub energy_budget: f64,
    /// `S(N(ω̄))` for the averaged input `ω̄`.
    pub average_output_entropy: f64,
    /// `Σ_z p(z) S(N^z(ω̄))` in mixture simulations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_conditional_output_entropy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_weights: Option<Vec<f64>>,
    pub pruned_mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_input: Option<DensityMatrix>,
}

impl ProtocolTrace {
    pub fn sum_output_entropy(&self) -> f64 {
        self.rounds.iter().map(|r| r.channel_output_entropy).sum()
    }

    pub fn sum_conditional_output_entropy(&self) -> Option<f64> {
        self.rounds.iter().map(|r| r.conditional_output_entropy).sum()
    }
}

/// Statistics of the final measurement shared by all runners.
struct Outcome {
    joint: Vec<Vec<f64>>,
    error: f64,
    distance: f64,
    information: f64,
}

fn outcome_from_joint(joint: Vec<Vec<f64>>) -> Result<Outcome> {
    let m = joint.len();
    let error = 1.0 - (0..m).map(|w| joint[w][w]).sum::<f64>();
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    let ideal: Vec<f64> = (0..m * m).map(|k| if k / m == k % m { 1.0 / m as f64 } else { 0.0 }).collect();
    let layout = SystemLayout::from_pairs(&[("W", m), ("What", m)])?;
    let distance =
        trace_distance(&DensityMatrix::diagonal(layout.clone(), &ideal)?, &DensityMatrix::diagonal(layout, &flat)?)?;
    let information = if m == 1 {
        0.0
    } else {
        let pw: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
        let pwh: Vec<f64> = (0..m).map(|c| joint.iter().map(|r| r[c]).sum()).collect();
        entropy_from_spectrum(&pw)? + entropy_from_spectrum(&pwh)? - entropy_from_spectrum(&flat)?
    };
    Ok(Outcome { joint, error: error.clamp(0.0, 1.0), distance, information })
}

fn register_names(registers: &[(String, usize)], keep_copies: bool) -> Vec<String> {
    if !keep_copies {
        return Vec::new();
    }
    registers.iter().skip(1).map(|(n, _)| n.clone()).collect()
}

fn average_over(parts: impl Iterator<Item = (f64, CMatrix)>, dim: usize) -> CMatrix {
    let mut avg = CMatrix::zeros(dim, dim);
    for (p, m) in parts {
        avg += m * c64(p, 0.0);
    }
    avg
}

// ---------------------------------------------------------------------------
// Original protocol on density matrices.

/// Runs the protocol as specified, on density matrices.
pub fn run_original(spec: &ProtocolSpec, opts: &RunOptions) -> Result<ProtocolTrace> {
    let dims = spec.validate()?;
    let channel = spec.channel.flattened();
    let (n, m) = (spec.n, spec.m);
    let active = dims.a_prime.iter().max().unwrap() * dims.a.max(dims.b) * dims.b_prime.iter().max().unwrap();
    if active > opts.dim_cap {
        return Err(QfbError::DimensionCap { dim: active, cap: opts.dim_cap });
    }
    let bob_layout = SystemLayout::single("B'", dims.b_prime[0])?;
    let mut entries = Vec::new();
    for (w, cw) in spec.codewords.iter().enumerate() {
        for (key, p, sigma) in spec.initial_bob.entries() {
            let state = DensityMatrix::new(
                SystemLayout::from_pairs(&[("A'", dims.a_prime[0]), ("B'", dims.b_prime[0])])?,
                linalg::kron(cw.matrix(), sigma.clone().with_layout(bob_layout.clone())?.matrix()),
            )?;
            entries.push((vec![w, key[0]], p / m as f64, state));
        }
    }
    let mut ens = CQEnsemble::new(vec![("W".into(), m), ("F0".into(), dims.feedback[0])], entries)?;
    let mut rounds = Vec::with_capacity(n);
    let mut input_sum = CMatrix::zeros(dims.a, dims.a);
    let mut pruned = 0.0;
    for i in 0..n {
        let register = format!("F{i}");
        let split = SystemLayout::from_pairs(&[("A'", dims.a_prime[i + 1]), ("A", dims.a), ("B'", dims.b_prime[i])])?;
        let omega = ens
            .apply_conditional_channel(&register, &spec.encoders[i], "A'", "A'")?
            .map_states(|s| s.clone().with_layout(split.clone()))?;
        let f_names = register_names(omega.registers(), opts.keep_copies);
        let input = omega.marginal(&["A"])?.average_state();
        let input_energy = (spec.hamiltonian.matrix() * input.matrix()).trace().re;
        input_sum += input.matrix();
        let bob_before = omega.marginal(&owned_names(omega.registers(), &["B'"]))?;
        let monotone_before = bob_before.monotone("W", &f_names, &["B'"])?;
        let rho = omega.apply_channel(&channel, "A", "B")?;
        let bob_after = rho.marginal(&owned_names(rho.registers(), &["B", "B'"]))?;
        let monotone_after = bob_after.monotone("W", &f_names, &["B", "B'"])?;
        let output = rho.marginal(&["B"])?.average_state();
        let channel_output_entropy = matrix_entropy(output.matrix())?;
        rounds.push(RoundRecord {
            round: i + 1,
            monotone_before,
            monotone_after,
            input_energy,
            channel_output_entropy,
            conditional_output_entropy: None,
            states: opts.keep_states.then(|| RoundStates {
                omega: omega.clone(),
                rho: rho.clone(),
                bob_before,
                bob_after,
                input,
                output,
            }),
        });
        if i + 1 < n {
            let before = rho.total_probability();
            ens = rho
                .apply_instrument(&spec.decoders[i], &["B", "B'"], &format!("F{}", i + 1))?
                .map_states(|s| s.relabel("B", "B'"))?;
            pruned += (before - ens.total_probability()).max(0.0);
        } else {
            ens = rho;
        }
    }
    let mut joint = vec![vec![0.0; m]; m];
    for (key, p, state) in ens.entries() {
        let bb = state.reduce_to(&["B", "B'"])?;
        for (wh, el) in spec.povm.iter().enumerate() {
            joint[key[0]][wh] += p * (el * bb.matrix()).trace().re;
        }
    }
    finish(spec, TraceMode::Original, opts, &dims, rounds, joint, input_sum, pruned)
}

fn owned_names(registers: &[(String, usize)], quantum: &[&str]) -> Vec<String> {
    registers.iter().map(|(n, _)| n.clone()).chain(quantum.iter().map(|q| q.to_string())).collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    spec: &ProtocolSpec,
    mode: TraceMode,
    opts: &RunOptions,
    dims: &ProtocolDims,
    rounds: Vec<RoundRecord>,
    joint: Vec<Vec<f64>>,
    input_sum: CMatrix,
    pruned_mass: f64,
) -> Result<ProtocolTrace> {
    let n = spec.n;
    let outcome = outcome_from_joint(joint)?;
    let average_energy = rounds.iter().map(|r| r.input_energy).sum::<f64>() / n as f64;
    let avg_input = linalg::hermitian_part(&(input_sum / c64(n as f64, 0.0)));
    let average_output_entropy = matrix_entropy(&spec.channel.flattened().apply_matrix(&avg_input))?;
    let (average_conditional_output_entropy, mixture_weights) = if mode == TraceMode::Mixture {
        let mix = spec.channel.as_mixture();
        let mut s = 0.0;
        for (w, ch) in mix.components() {
            if *w > 0.0 {
                s += w * matrix_entropy(&ch.apply_matrix(&avg_input))?;
            }
        }
        (Some(s), Some(mix.weights()))
    } else {
        (None, None)
    };
    let average_input =
        if opts.keep_states { Some(DensityMatrix::new(SystemLayout::single("A", dims.a)?, avg_input)?) } else { None };
    Ok(ProtocolTrace {
        mode,
        n,
        m: spec.m,
        keep_copies: opts.keep_copies,
        dim_in: dims.a,
        dim_out: dims.b,
        rounds,
        joint_distribution: outcome.joint,
        error_probability: outcome.error,
        final_trace_distance: outcome.distance,
        message_information: outcome.information,
        average_energy,
        energy_budget: spec.energy_budget,
        average_output_entropy,
        average_conditional_output_entropy,
        mixture_weights,
        pruned_mass,
        average_input,
    })
}

// ---------------------------------------------------------------------------
// Purified simulation on branch vectors.

const SA: usize = 0;
const SX: usize = 1;
const SB: usize = 2;
const SRB: usize = 3;
const SR: usize = 4;

type Key = Vec<usize>;

struct Branches {
    registers: Vec<(String, usize)>,
    dims: Vec<usize>,
    map: BTreeMap<Key, (f64, CVector)>,
    pruned: f64,
    cap: usize,
}

/// Permutes factors into the concatenation of `groups` and merges each
/// group into one factor (empty groups become trivial factors).
fn regroup(v: &CVector, dims: &[usize], groups: &[&[usize]]) -> (CVector, Vec<usize>) {
    let order: Vec<usize> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let (out, _) = linalg::permute_vec(v, dims, &order);
    let merged = groups.iter().map(|g| g.iter().map(|&k| dims[k]).product()).collect();
    (out, merged)
}

fn norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

impl Branches {
    fn check_cap(&self) -> Result<()> {
        let active: usize = self.dims[..SR].iter().product();
        if active > self.cap {
            return Err(QfbError::DimensionCap { dim: active, cap: self.cap });
        }
        Ok(())
    }

    fn register_index(&self, name: &str) -> usize {
        self.registers.iter().position(|(n, _)| n == name).expect("register exists")
    }

    /// Applies a per-branch isometry and regroups; checks the norm.
    fn map_isometric(
        &mut self,
        targets: &[usize],
        out_dims: &[usize],
        groups: &[&[usize]],
        op: impl Fn(&[usize]) -> CMatrix,
    ) -> Result<()> {
        let mut new_dims = None;
        for (key, (_, v)) in self.map.iter_mut() {
            let (w, d) = linalg::apply_local_vec(v, &self.dims, targets, &op(key), out_dims);
            let (w, d) = regroup(&w, &d, groups);
            let loss = (norm_sq(&w) - 1.0).abs();
            if loss > tol::EQ {
                return Err(QfbError::PurityLoss(loss));
            }
            *v = w;
            new_dims = Some(d);
        }
        self.dims = new_dims.expect("branches are never empty");
        self.check_cap()?;
        self.compress_reference()
    }

    /// Keeps the reference at most as large as everything else; exact
    /// because a pure state's Schmidt rank is bounded by the smaller side.
    fn compress_reference(&mut self) -> Result<()> {
        let r = self.dims[SR];
        let rest: usize = self.dims[..SR].iter().product();
        if r <= rest {
            return Ok(());
        }
        for (_, v) in self.map.values_mut() {
            let psi = CMatrix::from_fn(rest, r, |a, b| v[a * r + b]);
            let (_, vecs) = linalg::eigh_sorted(&(psi.adjoint() * &psi))?;
            let kept = &psi * vecs.columns(0, rest);
            *v = CVector::from_iterator(
                rest * rest,
                (0..rest).flat_map(|a| (0..rest).map(move |b| (a, b))).map(|(a, b)| kept[(a, b)]),
            );
        }
        self.dims[SR] = rest;
        Ok(())
    }

    /// Projects Bob's reference onto the support of its average state, the
    /// same isometry in every branch.
    fn compress_bob_reference(&mut self) -> Result<()> {
        let d = self.dims[SRB];
        if d <= 1 {
            return Ok(());
        }
        let avg =
            average_over(self.map.values().map(|(p, v)| (*p, linalg::reduced_from_vec(v, &self.dims, &[SRB]))), d);
        let (vals, vecs) = linalg::eigh_sorted(&avg)?;
        let keep = vals.iter().filter(|&&l| l > tol::CLIP).count().max(1);
        if keep == d {
            return Ok(());
        }
        let proj = vecs.columns(0, keep).adjoint();
        for (_, v) in self.map.values_mut() {
            let (w, _) = linalg::apply_local_vec(v, &self.dims, &[SRB], &proj, &[keep]);
            let nrm = norm_sq(&w).sqrt();
            *v = w / c64(nrm, 0.0);
        }
        self.dims[SRB] = keep;
        Ok(())
    }

    /// Splits every branch on a new register. `ops[x]` gives the operator
    /// for outcome `x` and the branch key; the outcome probability is the
    /// squared norm.
    fn split(
        &mut self,
        name: &str,
        size: usize,
        targets: &[usize],
        out_dims: &[usize],
        groups: &[&[usize]],
        op: impl Fn(&[usize], usize) -> Option<(f64, CMatrix)>,
    ) -> Result<()> {
        let mut next = BTreeMap::new();
        let mut new_dims = None;
        let mut pruned = 0.0;
        for (key, (p, v)) in &self.map {
            let mut total = 0.0;
            for x in 0..size {
                let Some((weight, o)) = op(key, x) else { continue };
                let (w, d) = linalg::apply_local_vec(v, &self.dims, targets, &o, out_dims);
                let (w, d) = regroup(&w, &d, groups);
                new_dims = Some(d);
                let q = norm_sq(&w) * weight;
                total += q;
                let joint = p * q;
                if joint < tol::P_MIN {
                    pruned += joint.max(0.0);
                    continue;
                }
                let mut k2 = key.clone();
                k2.push(x);
                next.insert(k2, (joint, w / c64((q / weight).sqrt(), 0.0)));
            }
            let loss = (total - 1.0).abs();
            if loss > tol::EQ {
                return Err(QfbError::PurityLoss(loss));
            }
        }
        if pruned > tol::PRUNE_BUDGET {
            return Err(QfbError::PrunedMass(pruned));
        }
        let norm: f64 = next.values().map(|(p, _)| p).sum();
        for (p, _) in next.values_mut() {
            *p /= norm;
        }
        self.pruned += pruned;
        self.map = next;
        self.dims = new_dims.expect("branches are never empty");
        self.registers.push((name.to_string(), size));
        self.check_cap()
    }

    fn reduced(&self, slots: &[usize]) -> impl Iterator<Item = (&Key, f64, CMatrix)> + '_ {
        let slots = slots.to_vec();
        self.map.iter().map(move |(k, (p, v))| (k, *p, linalg::reduced_from_vec(v, &self.dims, &slots)))
    }

    fn ensemble(&self, slots: &[usize], labels: &[&str]) -> Result<CQEnsemble> {
        let pairs: Vec<(&str, usize)> = slots.iter().zip(labels).map(|(&s, &l)| (l, self.dims[s])).collect();
        let layout = SystemLayout::from_pairs(&pairs)?;
        let entries = self
            .reduced(slots)
            .map(|(k, p, m)| (k.clone(), (p, DensityMatrix::from_parts(layout.clone(), m))))
            .collect();
        Ok(CQEnsemble::from_parts(self.registers.clone(), layout, entries))
    }

    fn average(&self, slot: usize) -> CMatrix {
        average_over(self.reduced(&[slot]).map(|(_, p, m)| (p, m)), self.dims[slot])
    }

    /// `Σ_z p(z) S(X | Z = z)` over the values of register `reg`.
    fn conditional_entropy(&self, slot: usize, reg: usize) -> Result<f64> {
        let mut groups: BTreeMap<usize, (f64, CMatrix)> = BTreeMap::new();
        let d = self.dims[slot];
        for (k, p, m) in self.reduced(&[slot]) {
            let g = groups.entry(k[reg]).or_insert_with(|| (0.0, CMatrix::zeros(d, d)));
            g.0 += p;
            g.1 += m * c64(p, 0.0);
        }
        let mut s = 0.0;
        for (p, m) in groups.values() {
            if *p > 0.0 {
                s += p * matrix_entropy(&(m / c64(*p, 0.0)))?;
            }
        }
        Ok(s)
    }
}

fn pad_dilations(channels: &[KrausChannel]) -> Vec<IsometricDilation> {
    let env = channels.iter().map(|c| c.kraus().len()).max().unwrap_or(1);
    channels.iter().map(|c| IsometricDilation::from_kraus(c.dim_in(), c.dim_out(), c.kraus(), env)).collect()
}

fn initial_branches(spec: &ProtocolSpec, dims: &ProtocolDims, cap: usize) -> Result<Branches> {
    let m = spec.m;
    let (a0, b0) = (dims.a_prime[0], dims.b_prime[0]);
    let alice: Vec<CVector> = spec
        .codewords
        .iter()
        .map(|c| purify_with_reference_dim(c, "R", a0).map(|p| p.amplitudes().clone()))
        .collect::<Result<_>>()?;
    let mut map = BTreeMap::new();
    for (key, p, sigma) in spec.initial_bob.entries() {
        let bob = purify_with_reference_dim(sigma, "RB", b0)?;
        for (w, psi) in alice.iter().enumerate() {
            // [A', R] ⊗ [B', RB] reordered to [A', X, B', RB, R].
            let v = psi.kronecker(bob.amplitudes());
            let (v, _) = regroup(&v, &[a0, a0, b0, b0], &[&[0], &[], &[2], &[3], &[1]]);
            map.insert(vec![w, key[0]], (p / m as f64, v));
        }
    }
    let b = Branches {
        registers: vec![("W".into(), m), ("F0".into(), dims.feedback[0])],
        dims: vec![a0, 1, b0, b0, a0],
        map,
        pruned: 0.0,
        cap,
    };
    b.check_cap()?;
    Ok(b)
}

fn run_branches(
    spec: &ProtocolSpec,
    opts: &RunOptions,
    components: &[(f64, KrausChannel)],
    mode: TraceMode,
) -> Result<ProtocolTrace> {
    let dims = spec.validate()?;
    let (n, m) = (spec.n, spec.m);
    let mut br = initial_branches(spec, &dims, opts.dim_cap)?;
    let channel_dils = pad_dilations(&components.iter().map(|(_, c)| c.clone()).collect::<Vec<_>>());
    let env_c = channel_dils[0].dim_env();
    let mut rounds = Vec::with_capacity(n);
    let mut input_sum = CMatrix::zeros(dims.a, dims.a);
    let with_z = mode == TraceMode::Mixture;
    for i in 0..n {
        let f_reg = br.register_index(&format!("F{i}"));
        if with_z {
            let weights: Vec<f64> = components.iter().map(|(w, _)| *w).collect();
            let id = linalg::identity(br.dims[SX]);
            br.split(
                &format!("Z{}", i + 1),
                components.len(),
                &[SX],
                &[br.dims[SX]],
                &[&[0], &[1], &[2], &[3], &[4]],
                |_, z| (weights[z] > 0.0).then(|| (weights[z], id.clone())),
            )?;
        }
        // Encoding: A' → A' ⊗ A ⊗ env, env joins R.
        let encs = pad_dilations(&spec.encoders[i]);
        let (an, env_e) = (dims.a_prime[i + 1], encs[0].dim_env());
        br.map_isometric(&[SA], &[an, dims.a, env_e], &[&[0], &[1, 3], &[4], &[5], &[6, 2]], |k| {
            encs[k[f_reg]].isometry().clone()
        })?;
        let f_names = register_names(&br.registers, opts.keep_copies);
        let bob_before = br.ensemble(&[SB, SRB], &["B'", "RB"])?;
        let monotone_before = bob_before.monotone("W", &f_names, &["B'", "RB"])?;
        let input = br.average(SX);
        let input_energy = (spec.hamiltonian.matrix() * &input).trace().re;
        input_sum += &input;
        let omega = opts.keep_states.then(|| br.ensemble(&[SA, SX, SB], &["A'", "A", "B'"])).transpose()?;
        // Channel: A → B ⊗ E, E joins R.
        let z_reg = with_z.then(|| br.register_index(&format!("Z{}", i + 1)));
        br.map_isometric(&[SX], &[dims.b, env_c], &[&[0], &[1], &[3], &[4], &[5, 2]], |k| {
            channel_dils[z_reg.map_or(0, |r| k[r])].isometry().clone()
        })?;
        let bob_after = br.ensemble(&[SX, SB, SRB], &["B", "B'", "RB"])?;
        let monotone_after = bob_after.monotone("W", &f_names, &["B", "B'", "RB"])?;
        let output = br.average(SX);
        let channel_output_entropy = matrix_entropy(&output)?;
        let conditional_output_entropy = z_reg.map(|r| br.conditional_entropy(SX, r)).transpose()?;
        let states = if opts.keep_states {
            Some(RoundStates {
                omega: omega.expect("recorded above"),
                rho: br.ensemble(&[SA, SX, SB], &["A'", "B", "B'"])?,
                bob_before,
                bob_after,
                input: DensityMatrix::new(SystemLayout::single("A", dims.a)?, linalg::hermitian_part(&input))?,
                output: DensityMatrix::new(SystemLayout::single("B", dims.b)?, linalg::hermitian_part(&output))?,
            })
        } else {
            None
        };
        rounds.push(RoundRecord {
            round: i + 1,
            monotone_before,
            monotone_after,
            input_energy,
            channel_output_entropy,
            conditional_output_entropy,
            states,
        });
        if i + 1 < n {
            // Decoding: B ⊗ B' → B'' ⊗ env per outcome, env joins RB.
            let dec = &spec.decoders[i];
            let env_d = dec.max_kraus();
            let ops: Vec<CMatrix> = dec
                .outcomes()
                .iter()
                .map(|(_, ks)| IsometricDilation::from_kraus(dec.dim_in(), dec.dim_out(), ks, env_d).isometry().clone())
                .collect();
            br.split(
                &format!("F{}", i + 1),
                dec.num_outcomes(),
                &[SX, SB],
                &[dec.dim_out(), env_d],
                &[&[0], &[], &[1], &[3, 2], &[4]],
                |_, f| Some((1.0, ops[f].clone())),
            )?;
            br.compress_bob_reference()?;
        }
    }
    let roots: Vec<CMatrix> = spec.povm.iter().map(linalg::psd_sqrt).collect::<Result<_>>()?;
    let mut joint = vec![vec![0.0; m]; m];
    for (key, (p, v)) in &br.map {
        for (wh, r) in roots.iter().enumerate() {
            let (w, _) = linalg::apply_local_vec(v, &br.dims, &[SX, SB], r, &[dims.b, dims.b_prime[n - 1]]);
            joint[key[0]][wh] += p * norm_sq(&w);
        }
    }
    let pruned = br.pruned;
    finish(spec, mode, opts, &dims, rounds, joint, input_sum, pruned)
}

/// Purified simulation: every conditional state stays pure, Bob keeps
/// feedback copies, and the final POVM is applied through `√Λ`.
pub fn run_purified(spec: &ProtocolSpec, opts: &RunOptions) -> Result<ProtocolTrace> {
    run_branches(spec, opts, &[(1.0, spec.channel.flattened())], TraceMode::Purified)
}

/// Purified simulation in which each channel use first draws `Z_i ~ p`
/// (visible to both parties, ignored by the encoders and decoders) and
/// then applies component `N^{Z_i}`. Branches over `Z` are enumerated
/// exactly.
pub fn run_mixture_simulation(spec: &ProtocolSpec, opts: &RunOptions) -> Result<ProtocolTrace> {
    let mix = spec.channel.as_mixture();
    run_branches(spec, opts, mix.components(), TraceMode::Mixture)
}

// ---------------------------------------------------------------------------
// Generators.

/// Parameters of the random protocol generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSpecParams {
    pub n: usize,
    pub m: usize,
    pub feedback_alphabet: usize,
    /// `None` draws a random qubit channel.
    pub channel: Option<ChannelSpec>,
    pub energy_budget: f64,
}

impl Default for RandomSpecParams {
    fn default() -> Self {
        Self { n: 2, m: 2, feedback_alphabet: 2, channel: None, energy_budget: 1.0 }
    }
}

pub fn random_spec(params: &RandomSpecParams, seed: u64) -> Result<ProtocolSpec> {
    random_spec_with(&mut rng_from_seed(seed), params)
}

/// Random protocol with qubit memories: mixed codewords, random encoder
/// channels, decoders built from a random isometry followed by a readout
/// of the feedback value, and a POVM from a random basis.
pub fn random_spec_with<R: Rng + ?Sized>(rng: &mut R, params: &RandomSpecParams) -> Result<ProtocolSpec> {
    let RandomSpecParams { n, m, feedback_alphabet: nf, ref channel, energy_budget } = *params;
    if n == 0 || m == 0 || nf == 0 {
        return Err(QfbError::InvalidParameter("rounds, messages and feedback alphabet must be positive".into()));
    }
    let channel = match channel {
        Some(c) => c.clone(),
        None => ChannelSpec::Single(random_channel_with(rng, 2, 2, 2)?),
    };
    let (da, db) = (channel.dim_in(), channel.dim_out());
    let mem = 2;
    let codewords =
        (0..m).map(|_| random_density(rng, SystemLayout::single("A'", mem)?, mem)).collect::<Result<Vec<_>>>()?;
    let probs = dirichlet_uniform(rng, nf);
    let bob = (0..nf)
        .map(|f| Ok((vec![f], probs[f], random_density(rng, SystemLayout::single("B'", mem)?, mem)?)))
        .collect::<Result<Vec<_>>>()?;
    let initial_bob = CQEnsemble::new(vec![("F0".into(), nf)], bob)?;
    let encoders = (0..n)
        .map(|_| (0..nf).map(|_| random_channel_with(rng, mem, mem * da, 2)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let mut bp = mem;
    let mut decoders = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let din = db * bp;
        let dnext = din.div_ceil(nf);
        let u = haar_isometry(rng, nf * dnext, din);
        let outcomes = (0..nf).map(|f| (f.to_string(), vec![u.rows(f * dnext, dnext).into_owned()])).collect();
        decoders.push(Instrument::new(din, dnext, outcomes)?);
        bp = dnext;
    }
    let dm = db * bp;
    let basis = haar_unitary(rng, dm);
    let povm = (0..m)
        .map(|w| {
            let mut el = CMatrix::zeros(dm, dm);
            for j in (w..dm).step_by(m) {
                let col = basis.column(j);
                el += col * col.adjoint();
            }
            el
        })
        .collect();
    let mut h = vec![0.0; da];
    if da > 1 {
        h[1] = 1.0;
    }
    let hamiltonian = HermitianObservable::diagonal(SystemLayout::single("A", da)?, &h)?;
    let spec =
        ProtocolSpec { n, m, channel, initial_bob, codewords, encoders, decoders, povm, hamiltonian, energy_budget };
    spec.validate()?;
    Ok(spec)
}

/// One use of a noiseless qubit carrying one bit: codewords `|0⟩, |1⟩`,
/// computational-basis readout.
pub fn noiseless_qubit_spec() -> ProtocolSpec {
    let id = KrausChannel::new(2, 2, vec![linalg::identity(2)]).expect("identity is a channel");
    let trivial = SystemLayout::single("B'", 1).expect("valid layout");
    let initial_bob =
        CQEnsemble::new(vec![("F0".into(), 1)], vec![(vec![0], 1.0, DensityMatrix::maximally_mixed(trivial))])
            .expect("valid ensemble");
    let a0 = SystemLayout::single("A'", 2).expect("valid layout");
    let codewords = (0..2).map(|k| DensityMatrix::basis(a0.clone(), k).expect("basis state")).collect();
    let povm = (0..2)
        .map(|k| CMatrix::from_fn(2, 2, |i, j| if i == k && j == k { c64(1.0, 0.0) } else { c64(0.0, 0.0) }))
        .collect();
    let hamiltonian = HermitianObservable::diagonal(SystemLayout::single("A", 2).expect("valid layout"), &[0.0, 1.0])
        .expect("diagonal");
    ProtocolSpec {
        n: 1,
        m: 2,
        channel: ChannelSpec::Single(id.clone()),
        initial_bob,
        codewords,
        encoders: vec![vec![id]],
        decoders: Vec::new(),
        povm,
        hamiltonian,
        energy_budget: 1.0,
    }
}

/// `(1 − ε) log₂ M`.
pub fn fano_lhs(m: usize, epsilon: f64) -> f64 {
    (1.0 - epsilon) * (m as f64).log2()
}

/// `I(W;Ŵ) + h₂(ε)` for a trace.
pub fn fano_rhs(trace: &ProtocolTrace) -> f64 {
    trace.message_information + binary_entropy(trace.error_probability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_erasure, make_named, NamedChannel};

    #[test]
    fn noiseless_qubit_is_error_free() {
        let spec = noiseless_qubit_spec();
        for t in
            [run_purified(&spec, &RunOptions::default()).unwrap(), run_original(&spec, &RunOptions::default()).unwrap()]
        {
            assert!(t.error_probability.abs() < 1e-12);
            assert!((t.message_information - 1.0).abs() < 1e-12);
            assert!((t.rounds[0].channel_output_entropy - 1.0).abs() < 1e-12);
            assert!((t.average_energy - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn first_round_monotone_is_zero() {
        let spec = random_spec(&RandomSpecParams::default(), 5).unwrap();
        let t = run_purified(&spec, &RunOptions::default()).unwrap();
        assert!(t.rounds[0].monotone_before.abs() < tol::EQ);
    }

    #[test]
    fn purified_and_original_agree() {
        for seed in 0..4 {
            let spec = random_spec(&RandomSpecParams { n: 3, ..Default::default() }, seed).unwrap();
            let a = run_purified(&spec, &RunOptions::default()).unwrap();
            let b = run_original(&spec, &RunOptions::default()).unwrap();
            assert!((a.error_probability - b.error_probability).abs() < 1e-8);
            assert!((a.average_energy - b.average_energy).abs() < 1e-8);
            for (x, y) in a.rounds.iter().zip(&b.rounds) {
                assert!((x.channel_output_entropy - y.channel_output_entropy).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn error_equals_trace_distance() {
        let spec = random_spec(&RandomSpecParams { m: 3, ..Default::default() }, 9).unwrap();
        let t = run_purified(&spec, &RunOptions::default()).unwrap();
        assert!((t.error_probability - t.final_trace_distance).abs() < tol::EQ);
    }

    #[test]
    fn full_erasure_cannot_beat_guessing() {
        let params = RandomSpecParams {
            n: 1,
            m: 3,
            channel: Some(ChannelSpec::Mixture(make_erasure(2, 1.0).unwrap())),
            ..Default::default()
        };
        let t = run_purified(&random_spec(&params, 2).unwrap(), &RunOptions::default()).unwrap();
        assert!(t.error_probability >= 1.0 - 1.0 / 3.0 - 1e-12);
    }

    #[test]
    fn single_component_mixture_matches_purified() {
        let ch = make_named(&NamedChannel::Depolarizing { d: 2, q: 0.3 }).unwrap();
        let params = RandomSpecParams { channel: Some(ChannelSpec::Single(ch)), ..Default::default() };
        let spec = random_spec(&params, 4).unwrap();
        let a = run_purified(&spec, &RunOptions::default()).unwrap();
        let b = run_mixture_simulation(&spec, &RunOptions::default()).unwrap();
        assert!((a.error_probability - b.error_probability).abs() < 1e-12);
        for (x, y) in a.rounds.iter().zip(&b.rounds) {
            assert!((x.monotone_after - y.monotone_after).abs() < 1e-10);
            assert!((x.channel_output_entropy - y.conditional_output_entropy.unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let spec = random_spec(&RandomSpecParams { n: 3, ..Default::default() }, 1).unwrap();
        let opts = RunOptions { dim_cap: 8, ..Default::default() };
        assert!(matches!(run_purified(&spec, &opts), Err(QfbError::DimensionCap { .. })));
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = random_spec(&RandomSpecParams::default(), 3).unwrap();
        let back: ProtocolSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
