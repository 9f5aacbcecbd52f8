//! Randomized checks of the entropy inequalities behind the bound and of
//! the telescoping chain on protocol traces.
//!
//! Every check reports margins `rhs − lhs`; a margin below `−tolerance`
//! is a violation, one in `[−tolerance, 0)` a numerical zero. Trials are
//! seeded by `split_seed(seed, trial)`, so results do not depend on the
//! thread schedule.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{binary_entropy, max_avg_output_entropy, max_output_entropy, BoundReport, EnergyConstraint};
use crate::channel::{make_erasure, random_channel_with, ChannelSpec, KrausChannel};
use crate::cq::{CQEnsemble, LoccOutcome, OneWayLocc};
use crate::error::{QfbError, Result};
use crate::linalg;
use crate::protocol::{
    fano_lhs, random_spec_with, run_mixture_simulation, run_purified, ProtocolSpec, ProtocolTrace, RandomSpecParams,
    RunOptions, TraceMode,
};
use crate::random::{dirichlet_uniform, haar_isometry, haar_pure, random_density, rng_from_seed, split_seed, QfbRng};
use crate::state::{DensityMatrix, PureState, SystemLayout};
use crate::tol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    pub numerical_zeros: usize,
    pub worst_margin: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<f64>>,
    /// Names of the margins, for chain checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Replay file written for a genuine violation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn from_margins(name: &str, seed: u64, margins: Vec<f64>, tolerance: f64, keep: bool) -> Self {
        let violations = margins.iter().filter(|&&m| m < -tolerance).count();
        let numerical_zeros = margins.iter().filter(|&&m| m >= -tolerance && m < 0.0).count();
        let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            name: name.to_string(),
            trials: margins.len(),
            violations,
            numerical_zeros,
            worst_margin: if worst_margin.is_finite() { worst_margin } else { 0.0 },
            seed,
            margins: keep.then_some(margins),
            labels: None,
            replay: None,
        }
    }
}

/// Settings shared by all fleets.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetConfig {
    pub trials: usize,
    /// Largest per-system dimension drawn.
    pub max_dim: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub genuine_threshold: f64,
    pub record_margins: bool,
    pub replay_dir: Option<PathBuf>,
}

impl FleetConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            max_dim: 4,
            seed,
            tolerance: tol::INEQ,
            genuine_threshold: tol::GENUINE_VIOLATION,
            record_margins: false,
            replay_dir: None,
        }
    }
}

/// A randomly drawn instance of one inequality.
pub trait Instance: Sized + Serialize {
    const NAME: &'static str;
    fn generate(rng: &mut QfbRng, max_dim: usize) -> Result<Self>;
    fn margin(&self) -> Result<f64>;
    fn wrap(self) -> ReplayInstance;
}

/// Serialized instance of a genuine violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check")]
pub enum ReplayInstance {
    #[serde(rename = "lemma1")]
    LoccEntropy(LoccEntropyInstance),
    #[serde(rename = "lemma2")]
    LoccMonotone(LoccMonotoneInstance),
    #[serde(rename = "lemma3")]
    Amortized(AmortizedInstance),
    #[serde(rename = "lemma3z")]
    AmortizedMixture(AmortizedMixtureInstance),
    #[serde(rename = "thm1")]
    SingleChannelChain(ChainInstance),
    #[serde(rename = "thm2")]
    MixtureChain(ChainInstance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub seed: u64,
    pub trial: usize,
    pub margin: f64,
    pub instance: ReplayInstance,
}

impl ReplayInstance {
    pub fn margin(&self) -> Result<f64> {
        match self {
            Self::LoccEntropy(i) => i.margin(),
            Self::LoccMonotone(i) => i.margin(),
            Self::Amortized(i) => i.margin(),
            Self::AmortizedMixture(i) => i.margin(),
            Self::SingleChannelChain(i) => i.worst_link(TraceMode::Purified),
            Self::MixtureChain(i) => i.worst_link(TraceMode::Mixture),
        }
    }
}

/// Re-evaluates a replay file.
pub fn replay_file(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| QfbError::Serde(e.to_string()))?;
    let rec: ReplayRecord = serde_json::from_str(&text).map_err(|e| QfbError::Serde(e.to_string()))?;
    rec.instance.margin()
}

fn write_replay(dir: &Path, name: &str, rec: &ReplayRecord) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| QfbError::Serde(e.to_string()))?;
    let path = dir.join(format!("{name}-seed{}-trial{}.json", rec.seed, rec.trial));
    let text = serde_json::to_string_pretty(rec).map_err(|e| QfbError::Serde(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| QfbError::Serde(e.to_string()))?;
    Ok(path)
}

fn trial_rng(seed: u64, trial: usize) -> QfbRng {
    rng_from_seed(split_seed(seed, trial as u64))
}

/// Runs `cfg.trials` instances of `I` in parallel.
pub fn run_fleet<I: Instance>(cfg: &FleetConfig) -> Result<CheckResult> {
    if cfg.max_dim < 2 {
        return Err(QfbError::InvalidParameter("fleet dimensions must be at least 2".into()));
    }
    let margins = (0..cfg.trials)
        .into_par_iter()
        .map(|t| I::generate(&mut trial_rng(cfg.seed, t), cfg.max_dim)?.margin())
        .collect::<Result<Vec<f64>>>()?;
    let mut result = CheckResult::from_margins(I::NAME, cfg.seed, margins.clone(), cfg.tolerance, cfg.record_margins);
    if let Some(trial) = margins.iter().position(|&m| m < -cfg.genuine_threshold) {
        let instance = I::generate(&mut trial_rng(cfg.seed, trial), cfg.max_dim)?;
        let rec = ReplayRecord { seed: cfg.seed, trial, margin: margins[trial], instance: instance.wrap() };
        if let Some(dir) = &cfg.replay_dir {
            result.replay = Some(write_replay(dir, I::NAME, &rec)?);
        }
    }
    Ok(result)
}

fn dim_in<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi.max(lo))
}

/// Random one-way map: sender isometries `A → A'`, receiver operators
/// cut from one isometry `B → X ⊗ B'`.
pub fn random_locc<R: Rng + ?Sized>(rng: &mut R, da: usize, db: usize, max_dim: usize) -> Result<OneWayLocc> {
    let nx = dim_in(rng, 1, 3);
    let da_out = dim_in(rng, da, max_dim);
    let db_out = dim_in(rng, db.div_ceil(nx), max_dim);
    let u = haar_isometry(rng, nx * db_out, db);
    let outcomes = (0..nx)
        .map(|x| LoccOutcome {
            label: x.to_string(),
            sender: haar_isometry(rng, da_out, da),
            receiver: u.rows(x * db_out, db_out).into_owned(),
        })
        .collect();
    OneWayLocc::new(outcomes)
}

/// Pure bipartite state and a one-way map; margin `S(B) − S(B'|X)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoccEntropyInstance {
    pub state: PureState,
    pub map: OneWayLocc,
}

impl Instance for LoccEntropyInstance {
    const NAME: &'static str = "lemma1";

    fn generate(rng: &mut QfbRng, max_dim: usize) -> Result<Self> {
        let (da, db) = (dim_in(rng, 2, max_dim), dim_in(rng, 2, max_dim));
        let state = haar_pure(rng, SystemLayout::from_pairs(&[("A", da), ("B", db)])?);
        let map = random_locc(rng, da, db, max_dim)?;
        Ok(Self { state, map })
    }

    fn margin(&self) -> Result<f64> {
        let rho = self.state.to_density();
        let before = crate::state::von_neumann_entropy(&rho.reduce_to(&["B"])?)?;
        let after = CQEnsemble::from_state(rho).apply_1wlocc(&self.map, &["A"], &["B"], "X")?;
        Ok(before - after.conditional_entropy(&["B"], &["X"])?)
    }

    fn wrap(self) -> ReplayInstance {
        ReplayInstance::LoccEntropy(self)
    }
}

fn random_registers<R: Rng + ?Sized>(rng: &mut R, with_z: bool) -> Vec<(String, usize)> {
    let mut regs = vec![("W".to_string(), dim_in(rng, 2, 3)), ("F".to_string(), dim_in(rng, 1, 2))];
    if with_z {
        regs.push(("Z".to_string(), dim_in(rng, 2, 3)));
    }
    regs
}

fn all_keys(regs: &[(String, usize)]) -> Vec<Vec<usize>> {
    regs.iter().fold(vec![Vec::new()], |acc, (_, size)| {
        acc.into_iter()
            .flat_map(|k| {
                (0..*size).map(move |v| {
                    let mut k = k.clone();
                    k.push(v);
                    k
                })
            })
            .collect()
    })
}

fn random_ensemble<R: Rng + ?Sized>(
    rng: &mut R,
    regs: Vec<(String, usize)>,
    state: impl Fn(&mut R) -> Result<DensityMatrix>,
) -> Result<CQEnsemble> {
    let keys = all_keys(&regs);
    let probs = dirichlet_uniform(rng, keys.len());
    let entries = keys.into_iter().zip(probs).map(|(k, p)| Ok((k, p, state(rng)?))).collect::<Result<Vec<_>>>()?;
    CQEnsemble::new(regs, entries)
}

/// Ensemble with pure conditionals on `A B` and a one-way map; margin is
/// the drop of the monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoccMonotoneInstance {
    pub ensemble: CQEnsemble,
    pub map: OneWayLocc,
}

impl Instance for LoccMonotoneInstance {
    const NAME: &'static str = "lemma2";

    fn generate(rng: &mut QfbRng, max_dim: usize) -> Result<Self> {
        let (da, db) = (dim_in(rng, 2, max_dim), dim_in(rng, 2, max_dim));
        let layout = SystemLayout::from_pairs(&[("A", da), ("B", db)])?;
        let regs = random_registers(rng, false);
        let ensemble = random_ensemble(rng, regs, |r| Ok(haar_pure(r, layout.clone()).to_density()))?;
        let map = random_locc(rng, da, db, max_dim)?;
        Ok(Self { ensemble, map })
    }

    fn margin(&self) -> Result<f64> {
        let before = self.ensemble.monotone("W", &["F"], &["B"])?;
        let after = self.ensemble.apply_1wlocc(&self.map, &["A"], &["B"], "X")?;
        Ok(before - after.monotone("W", &["F", "X"], &["B"])?)
    }

    fn wrap(self) -> ReplayInstance {
        ReplayInstance::LoccMonotone(self)
    }
}

/// Ensemble on `A B'` and a channel `A → B`; margin is `S(B)` minus the
/// increase of the monotone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizedInstance {
    pub ensemble: CQEnsemble,
    pub channel: KrausChannel,
}

fn random_mixed_cq<R: Rng + ?Sized>(rng: &mut R, max_dim: usize, with_z: bool) -> Result<(CQEnsemble, usize)> {
    let (da, dbp) = (dim_in(rng, 2, max_dim), dim_in(rng, 2, max_dim));
    let layout = SystemLayout::from_pairs(&[("A", da), ("B'", dbp)])?;
    let regs = random_registers(rng, with_z);
    let ens = random_ensemble(rng, regs, |r| {
        let rank = dim_in(r, 1, da * dbp);
        random_density(r, layout.clone(), rank)
    })?;
    Ok((ens, da))
}

fn random_channel_from<R: Rng + ?Sized>(rng: &mut R, da: usize, db: usize) -> Result<KrausChannel> {
    let env = dim_in(rng, da.div_ceil(db), 3);
    random_channel_with(rng, da, db, env)
}

impl AmortizedInstance {
    pub fn increase(&self) -> Result<f64> {
        let before = self.ensemble.monotone("W", &["F"], &["B'"])?;
        let omega = self.ensemble.apply_channel(&self.channel, "A", "B")?;
        Ok(omega.monotone("W", &["F"], &["B", "B'"])? - before)
    }
}

impl Instance for AmortizedInstance {
    const NAME: &'static str = "lemma3";

    fn generate(rng: &mut QfbRng, max_dim: usize) -> Result<Self> {
        let (ensemble, da) = random_mixed_cq(rng, max_dim, false)?;
        let db = dim_in(rng, 2, max_dim);
        let channel = random_channel_from(rng, da, db)?;
        Ok(Self { ensemble, channel })
    }

    fn margin(&self) -> Result<f64> {
        let omega = self.ensemble.apply_channel(&self.channel, "A", "B")?;
        let s_b = crate::state::von_neumann_entropy(&omega.marginal(&["B"])?.average_state())?;
        Ok(s_b - self.increase()?)
    }

    fn wrap(self) -> ReplayInstance {
        ReplayInstance::Amortized(self)
    }
}

/// As [`AmortizedInstance`] with a register `Z` selecting the channel
/// component; the bound is `S(B|Z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizedMixtureInstance {
    pub ensemble: CQEnsemble,
    pub channels: Vec<KrausChannel>,
}

impl Instance for AmortizedMixtureInstance {
    const NAME: &'static str = "lemma3z";

    fn generate(rng: &mut QfbRng, max_dim: usize) -> Result<Self> {
        let (ensemble, da) = random_mixed_cq(rng, max_dim, true)?;
        let db = dim_in(rng, 2, max_dim);
        let nz = ensemble.registers()[2].1;
        let channels = (0..nz).map(|_| random_channel_from(rng, da, db)).collect::<Result<_>>()?;
        Ok(Self { ensemble, channels })
    }

    fn margin(&self) -> Result<f64> {
        let before = self.ensemble.monotone("W", &["F", "Z"], &["B'"])?;
        let omega = self.ensemble.apply_conditional_channel("Z", &self.channels, "A", "B")?;
        let increase = omega.monotone("W", &["F", "Z"], &["B", "B'"])? - before;
        Ok(omega.conditional_entropy(&["B"], &["Z"])? - increase)
    }

    fn wrap(self) -> ReplayInstance {
        ReplayInstance::AmortizedMixture(self)
    }
}

pub fn check_lemma1(cfg: &FleetConfig) -> Result<CheckResult> {
    run_fleet::<LoccEntropyInstance>(cfg)
}

pub fn check_lemma2(cfg: &FleetConfig) -> Result<CheckResult> {
    run_fleet::<LoccMonotoneInstance>(cfg)
}

pub fn check_lemma3(cfg: &FleetConfig) -> Result<CheckResult> {
    run_fleet::<AmortizedInstance>(cfg)
}

pub fn check_lemma3_mixture(cfg: &FleetConfig) -> Result<CheckResult> {
    run_fleet::<AmortizedMixtureInstance>(cfg)
}

// ---------------------------------------------------------------------------
// Chains on protocol traces.

/// One inequality of a chain, `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainLink {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl ChainLink {
    fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), lhs, rhs }
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Best upper estimate of the supremum: the optimizer value plus its
/// duality gap.
fn certified(bound: &BoundReport) -> f64 {
    bound.value + bound.duality_gap_estimate
}

/// Links shared by both chains: Fano, the first-round zero, the
/// amortized increase per round, monotonicity between rounds, and data
/// processing at the end.
fn telescoping_links(trace: &ProtocolTrace, per_round_cap: impl Fn(usize) -> f64) -> Result<Vec<ChainLink>> {
    let eps = trace.error_probability;
    let mut links =
        vec![ChainLink::new("a: fano", fano_lhs(trace.m, eps), trace.message_information + binary_entropy(eps))];
    let first = trace.rounds.first().ok_or_else(|| QfbError::InvalidParameter("trace has no rounds".into()))?;
    links.push(ChainLink::new("b: initial monotone vanishes", first.monotone_before.abs(), 0.0));
    for (i, r) in trace.rounds.iter().enumerate() {
        links.push(ChainLink::new(
            format!("b: round {} increase", r.round),
            r.monotone_after - r.monotone_before,
            per_round_cap(i),
        ));
        if let Some(next) = trace.rounds.get(i + 1) {
            links.push(ChainLink::new(format!("b: decoding {}", r.round), next.monotone_before, r.monotone_after));
        }
        if let Some(st) = &r.states {
            let names: Vec<String> = st.bob_after.registers().iter().skip(1).map(|(n, _)| n.clone()).collect();
            let f: Vec<String> = if trace.keep_copies { names } else { Vec::new() };
            let q: Vec<&str> = st.bob_after.layout().labels().collect();
            let recomputed = st.bob_after.monotone("W", &f, &q)?;
            links.push(ChainLink::new(
                format!("b: round {} recomputed", r.round),
                (recomputed - r.monotone_after).abs(),
                0.0,
            ));
        }
    }
    let last = trace.rounds.last().expect("non-empty");
    links.push(ChainLink::new("b: final data processing", trace.message_information, last.monotone_after));
    Ok(links)
}

fn check_compat(trace: &ProtocolTrace, bound: &BoundReport, mode: TraceMode) -> Result<()> {
    if trace.mode != mode {
        return Err(QfbError::InvalidParameter(format!("chain check expects a {mode:?} trace, got {:?}", trace.mode)));
    }
    if bound.optimizer.dim() != trace.dim_in {
        return Err(QfbError::ChannelMismatch(format!(
            "bound input dimension {} vs trace input dimension {}",
            bound.optimizer.dim(),
            trace.dim_in
        )));
    }
    Ok(())
}

fn feasible(trace: &ProtocolTrace) -> bool {
    trace.average_energy <= trace.energy_budget + tol::EQ
}

/// All links of the single-channel chain on a purified trace.
pub fn single_channel_links(trace: &ProtocolTrace, bound: &BoundReport) -> Result<Vec<ChainLink>> {
    check_compat(trace, bound, TraceMode::Purified)?;
    let n = trace.n as f64;
    let mut links = telescoping_links(trace, |i| trace.rounds[i].channel_output_entropy)?;
    links.push(ChainLink::new("c: concavity", trace.sum_output_entropy(), n * trace.average_output_entropy));
    let cap = n * certified(bound);
    if feasible(trace) {
        links.push(ChainLink::new("d: energy-constrained supremum", n * trace.average_output_entropy, cap));
        links.push(ChainLink::new(
            "e: rate bound",
            fano_lhs(trace.m, trace.error_probability),
            cap + binary_entropy(trace.error_probability),
        ));
    }
    Ok(links)
}

/// All links of the mixture chain on a mixture-simulation trace.
pub fn mixture_links(trace: &ProtocolTrace, bound: &BoundReport) -> Result<Vec<ChainLink>> {
    check_compat(trace, bound, TraceMode::Mixture)?;
    let n = trace.n as f64;
    let cond = |i: usize| trace.rounds[i].conditional_output_entropy.unwrap_or(f64::NAN);
    let mut links = telescoping_links(trace, cond)?;
    let sum = trace.sum_conditional_output_entropy().unwrap_or(f64::NAN);
    let avg = trace.average_conditional_output_entropy.unwrap_or(f64::NAN);
    links.push(ChainLink::new(
        "a+b: conditional output entropies",
        fano_lhs(trace.m, trace.error_probability),
        sum + binary_entropy(trace.error_probability),
    ));
    links.push(ChainLink::new("c: concavity of conditional entropy", sum, n * avg));
    let cap = n * certified(bound);
    if feasible(trace) {
        links.push(ChainLink::new("d: energy-constrained supremum", n * avg, cap));
        links.push(ChainLink::new(
            "e: rate bound",
            fano_lhs(trace.m, trace.error_probability),
            cap + binary_entropy(trace.error_probability),
        ));
    }
    Ok(links)
}

fn links_result(name: &str, seed: u64, links: &[ChainLink], tolerance: f64) -> CheckResult {
    let margins: Vec<f64> = links.iter().map(ChainLink::margin).collect();
    let mut r = CheckResult::from_margins(name, seed, margins, tolerance, true);
    r.labels = Some(links.iter().map(|l| l.name.clone()).collect());
    r
}

pub fn check_theorem1_chain(trace: &ProtocolTrace, bound: &BoundReport) -> Result<CheckResult> {
    Ok(links_result("thm1", 0, &single_channel_links(trace, bound)?, tol::INEQ))
}

pub fn check_theorem2_chain(trace: &ProtocolTrace, bound: &BoundReport) -> Result<CheckResult> {
    Ok(links_result("thm2", 0, &mixture_links(trace, bound)?, tol::INEQ))
}

/// Largest deviation between the `Z`-marginal of a mixture trace and the
/// purified trace of the flattened channel: final statistics, per-round
/// scalars, and (when recorded) the per-round states on `A' B B'`.
pub fn mixture_marginal_deviation(mixture: &ProtocolTrace, flat: &ProtocolTrace) -> Result<f64> {
    if mixture.rounds.len() != flat.rounds.len() {
        return Err(QfbError::InvalidParameter("traces differ in length".into()));
    }
    let mut dev = (mixture.error_probability - flat.error_probability)
        .abs()
        .max((mixture.average_energy - flat.average_energy).abs())
        .max((mixture.average_output_entropy - flat.average_output_entropy).abs());
    for (a, b) in mixture.rounds.iter().zip(&flat.rounds) {
        dev = dev
            .max((a.channel_output_entropy - b.channel_output_entropy).abs())
            .max((a.input_energy - b.input_energy).abs());
        if let (Some(sa), Some(sb)) = (&a.states, &b.states) {
            let keep: Vec<String> = sb
                .rho
                .registers()
                .iter()
                .map(|(n, _)| n.clone())
                .chain(sb.rho.layout().labels().map(str::to_string))
                .collect();
            let marg = sa.rho.marginal(&keep)?;
            if marg.len() != sb.rho.len() {
                return Ok(f64::INFINITY);
            }
            for ((ka, pa, xa), (kb, pb, xb)) in marg.entries().zip(sb.rho.entries()) {
                if ka != kb {
                    return Ok(f64::INFINITY);
                }
                let d =
                    linalg::max_abs_diff(&(xa.matrix() * linalg::c64(pa, 0.0)), &(xb.matrix() * linalg::c64(pb, 0.0)));
                dev = dev.max(d);
            }
        }
    }
    Ok(dev)
}

/// A protocol with the energy constraint used for its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainInstance {
    pub spec: ProtocolSpec,
}

impl ChainInstance {
    fn constraint(&self) -> Result<EnergyConstraint> {
        EnergyConstraint::new(self.spec.hamiltonian.clone(), self.spec.energy_budget)
    }

    pub fn links(&self, mode: TraceMode) -> Result<Vec<ChainLink>> {
        let opts = RunOptions { keep_states: true, ..Default::default() };
        let ec = self.constraint()?;
        match mode {
            TraceMode::Mixture => {
                let trace = run_mixture_simulation(&self.spec, &opts)?;
                let bound = max_avg_output_entropy(&self.spec.channel.as_mixture(), &ec)?;
                let mut links = mixture_links(&trace, &bound)?;
                let flat = run_purified(&self.spec, &opts)?;
                links.push(ChainLink::new("z-marginal", mixture_marginal_deviation(&trace, &flat)?, 0.0));
                Ok(links)
            }
            _ => {
                let trace = run_purified(&self.spec, &opts)?;
                let bound = max_output_entropy(&self.spec.channel.flattened(), &ec)?;
                single_channel_links(&trace, &bound)
            }
        }
    }

    fn worst_link(&self, mode: TraceMode) -> Result<f64> {
        Ok(self.links(mode)?.iter().map(ChainLink::margin).fold(f64::INFINITY, f64::min))
    }
}

/// Settings of the protocol fleets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolFleet {
    pub protocols: usize,
    pub max_rounds: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub genuine_threshold: f64,
    pub replay_dir: Option<PathBuf>,
}

impl ProtocolFleet {
    pub fn new(protocols: usize, seed: u64) -> Self {
        Self {
            protocols,
            max_rounds: 3,
            seed,
            tolerance: tol::INEQ,
            genuine_threshold: tol::GENUINE_VIOLATION,
            replay_dir: None,
        }
    }
}

fn chain_fleet(
    fleet: &ProtocolFleet,
    name: &str,
    mode: TraceMode,
    channel: impl Fn(&mut QfbRng) -> Option<ChannelSpec> + Sync,
) -> Result<CheckResult> {
    let make = |k: usize| -> Result<ChainInstance> {
        let mut rng = trial_rng(fleet.seed, k);
        let n = rng.random_range(1..=fleet.max_rounds.max(1));
        let m = if rng.random_bool(0.5) { 2 } else { 4 };
        let params = RandomSpecParams { n, m, channel: channel(&mut rng), ..Default::default() };
        Ok(ChainInstance { spec: random_spec_with(&mut rng, &params)? })
    };
    let per_protocol =
        (0..fleet.protocols).into_par_iter().map(|k| make(k)?.links(mode)).collect::<Result<Vec<_>>>()?;
    let worst: Vec<f64> =
        per_protocol.iter().map(|ls| ls.iter().map(ChainLink::margin).fold(f64::INFINITY, f64::min)).collect();
    let margins: Vec<f64> = per_protocol.iter().flatten().map(ChainLink::margin).collect();
    let mut result = CheckResult::from_margins(name, fleet.seed, margins, fleet.tolerance, false);
    result.trials = fleet.protocols;
    if let Some(k) = worst.iter().position(|&m| m < -fleet.genuine_threshold) {
        let inst = make(k)?;
        let instance = if mode == TraceMode::Mixture {
            ReplayInstance::MixtureChain(inst)
        } else {
            ReplayInstance::SingleChannelChain(inst)
        };
        let rec = ReplayRecord { seed: fleet.seed, trial: k, margin: worst[k], instance };
        if let Some(dir) = &fleet.replay_dir {
            result.replay = Some(write_replay(dir, name, &rec)?);
        }
    }
    Ok(result)
}

/// Random purified protocols over random qubit channels.
pub fn check_single_channel_fleet(fleet: &ProtocolFleet) -> Result<CheckResult> {
    chain_fleet(fleet, "thm1", TraceMode::Purified, |_| None)
}

/// Random mixture simulations over the qubit erasure channel with
/// erasure probability 1/4. Rounds are capped at two to stay within the
/// default dimension cap.
pub fn check_mixture_fleet(fleet: &ProtocolFleet) -> Result<CheckResult> {
    let erasure = ChannelSpec::Mixture(make_erasure(2, 0.25)?);
    let capped = ProtocolFleet { max_rounds: fleet.max_rounds.min(2), ..fleet.clone() };
    chain_fleet(&capped, "thm2", TraceMode::Mixture, |_| Some(erasure.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{make_named, NamedChannel};
    use crate::linalg::{c64, CMatrix, CVector};
    use crate::protocol::noiseless_qubit_spec;

    fn phi_plus() -> PureState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_vec(vec![c64(s, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(s, 0.0)]);
        PureState::new(SystemLayout::from_pairs(&[("A", 2), ("B", 2)]).unwrap(), v).unwrap()
    }

    fn projector(k: usize) -> CMatrix {
        CMatrix::from_fn(2, 2, |i, j| if i == k && j == k { c64(1.0, 0.0) } else { c64(0.0, 0.0) })
    }

    #[test]
    fn locc_entropy_equality_and_measurement() {
        let id = LoccEntropyInstance { state: phi_plus(), map: OneWayLocc::identity(2, 2) };
        assert!(id.margin().unwrap().abs() < 1e-12);
        let outcomes = (0..2)
            .map(|x| LoccOutcome { label: x.to_string(), sender: linalg::identity(2), receiver: projector(x) })
            .collect();
        let meas = LoccEntropyInstance { state: phi_plus(), map: OneWayLocc::new(outcomes).unwrap() };
        assert!((meas.margin().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn locc_monotone_identity_and_discard() {
        let ens = CQEnsemble::new(
            vec![("W".into(), 2), ("F".into(), 1)],
            vec![(vec![0], 0.5, phi_plus().to_density()), (vec![1], 0.5, phi_plus().to_density())]
                .into_iter()
                .map(|(w, p, s)| (vec![w[0], 0], p, s))
                .collect(),
        )
        .unwrap();
        let id = LoccMonotoneInstance { ensemble: ens.clone(), map: OneWayLocc::identity(2, 2) };
        assert!(id.margin().unwrap().abs() < 1e-12);
        let outcomes = (0..2)
            .map(|x| LoccOutcome {
                label: x.to_string(),
                sender: linalg::identity(2),
                receiver: CMatrix::from_fn(1, 2, |_, j| if j == x { c64(1.0, 0.0) } else { c64(0.0, 0.0) }),
            })
            .collect();
        let discard = LoccMonotoneInstance { ensemble: ens, map: OneWayLocc::new(outcomes).unwrap() };
        assert!(discard.margin().unwrap() >= 0.0);
    }

    #[test]
    fn amortized_examples() {
        let layout = SystemLayout::from_pairs(&[("A", 2), ("B'", 2)]).unwrap();
        let phi = phi_plus().to_density().with_layout(layout).unwrap();
        let ens = CQEnsemble::new(vec![("W".into(), 1), ("F".into(), 1)], vec![(vec![0, 0], 1.0, phi)]).unwrap();
        let inst =
            AmortizedInstance { ensemble: ens.clone(), channel: make_named(&NamedChannel::Identity { d: 2 }).unwrap() };
        assert!((inst.increase().unwrap() + 1.0).abs() < 1e-12);
        assert!((inst.margin().unwrap() - 2.0).abs() < 1e-12);
        let constant = AmortizedInstance {
            ensemble: ens,
            channel: make_named(&NamedChannel::AmplitudeDamping { gamma: 1.0 }).unwrap(),
        };
        assert!(constant.increase().unwrap() <= 1e-12);
        assert!(constant.margin().unwrap() >= -1e-12);
    }

    #[test]
    fn fleets_are_deterministic() {
        let cfg = FleetConfig { record_margins: true, ..FleetConfig::new(8, 11) };
        let a = check_lemma2(&cfg).unwrap();
        let b = check_lemma2(&cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.passed());
    }

    #[test]
    fn noiseless_qubit_chain_is_tight() {
        let spec = noiseless_qubit_spec();
        let trace = run_purified(&spec, &RunOptions { keep_states: true, ..Default::default() }).unwrap();
        let ec = EnergyConstraint::new(spec.hamiltonian.clone(), spec.energy_budget).unwrap();
        let bound = max_output_entropy(&spec.channel.flattened(), &ec).unwrap();
        let links = single_channel_links(&trace, &bound).unwrap();
        let e = links.iter().find(|l| l.name.starts_with("e:")).unwrap();
        assert!((e.lhs - 1.0).abs() < 1e-12 && (e.rhs - 1.0).abs() < 1e-9);
        assert!(check_theorem1_chain(&trace, &bound).unwrap().passed());
    }

    #[test]
    fn chain_rejects_wrong_mode() {
        let spec = noiseless_qubit_spec();
        let trace = crate::protocol::run_original(&spec, &RunOptions::default()).unwrap();
        let bound = max_output_entropy(&spec.channel.flattened(), &EnergyConstraint::unconstrained(2)).unwrap();
        assert!(check_theorem1_chain(&trace, &bound).is_err());
    }

    #[test]
    fn replay_roundtrip() {
        let mut rng = trial_rng(3, 0);
        let inst = AmortizedMixtureInstance::generate(&mut rng, 3).unwrap();
        let m = inst.margin().unwrap();
        let rec = ReplayRecord { seed: 3, trial: 0, margin: m, instance: inst.wrap() };
        let back: ReplayRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        assert_eq!(back.instance.margin().unwrap(), m);
    }
}
