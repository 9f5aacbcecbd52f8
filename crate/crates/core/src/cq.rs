//! Classical–quantum ensembles, their entropic functionals, quantum
//! instruments, and one-way LOCC maps from receiver to sender.
//!
//! Classical registers stay symbolic: an ensemble is a map from a tuple of
//! register values to a probability and a conditional density matrix.
//! [`CQEnsemble::flatten`] embeds the registers as diagonal blocks when a
//! single matrix is needed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{tp_defect, KrausChannel};
use crate::error::{QfbError, Result};
use crate::linalg::{self, c64, CMatrix};
use crate::serde_util;
use crate::state::{entropy_from_spectrum, matrix_entropy, DensityMatrix, SystemLayout};
use crate::tol;

type Key = Vec<usize>;

/// Labeled ensemble `Σ p(x) |x⟩⟨x| ⊗ τ^x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnsemble", into = "RawEnsemble")]
pub struct CQEnsemble {
    registers: Vec<(String, usize)>,
    layout: SystemLayout,
    entries: BTreeMap<Key, (f64, DensityMatrix)>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    labels: Vec<usize>,
    prob: f64,
    state: DensityMatrix,
}

#[derive(Serialize, Deserialize)]
struct RawEnsemble {
    registers: Vec<(String, usize)>,
    layout: SystemLayout,
    entries: Vec<RawEntry>,
}

impl TryFrom<RawEnsemble> for CQEnsemble {
    type Error = QfbError;
    fn try_from(raw: RawEnsemble) -> Result<Self> {
        let entries = raw.entries.into_iter().map(|e| (e.labels, e.prob, e.state)).collect();
        let e = CQEnsemble::new(raw.registers, entries)?;
        if e.layout != raw.layout && !e.entries.is_empty() {
            return Err(QfbError::InvalidLayout("entry layouts disagree with ensemble layout".into()));
        }
        Ok(e)
    }
}

impl From<CQEnsemble> for RawEnsemble {
    fn from(e: CQEnsemble) -> Self {
        RawEnsemble {
            registers: e.registers,
            layout: e.layout,
            entries: e.entries.into_iter().map(|(labels, (prob, state))| RawEntry { labels, prob, state }).collect(),
        }
    }
}

/// Where a name lives inside an ensemble.
enum Part {
    Register(usize),
    Quantum(usize),
}

impl CQEnsemble {
    pub fn new(registers: Vec<(String, usize)>, entries: Vec<(Vec<usize>, f64, DensityMatrix)>) -> Result<Self> {
        let layout = entries
            .first()
            .map(|(_, _, s)| s.layout().clone())
            .ok_or_else(|| QfbError::InvalidParameter("ensemble has no entries".into()))?;
        for (k, (name, size)) in registers.iter().enumerate() {
            if *size == 0 {
                return Err(QfbError::InvalidParameter(format!("register `{name}` has empty alphabet")));
            }
            if registers[..k].iter().any(|(n, _)| n == name) || layout.contains(name) {
                return Err(QfbError::LabelCollision(name.clone()));
            }
        }
        let mut map = BTreeMap::new();
        let mut total = 0.0;
        for (labels, p, state) in entries {
            if labels.len() != registers.len() || labels.iter().zip(&registers).any(|(v, (_, s))| v >= s) {
                return Err(QfbError::InvalidParameter(format!("bad register values {labels:?}")));
            }
            if p.is_nan() || p < 0.0 {
                return Err(QfbError::InvalidParameter(format!("negative probability {p}")));
            }
            if state.layout() != &layout {
                return Err(QfbError::DimensionMismatch("conditional states differ in layout".into()));
            }
            total += p;
            if map.insert(labels.clone(), (p, state)).is_some() {
                return Err(QfbError::InvalidParameter(format!("duplicate register values {labels:?}")));
            }
        }
        if (total - 1.0).abs() > tol::TRACE {
            return Err(QfbError::BadTrace(total));
        }
        Ok(Self { registers, layout, entries: map })
    }

    /// Register-free ensemble holding one state.
    pub fn from_state(state: DensityMatrix) -> Self {
        let layout = state.layout().clone();
        let mut entries = BTreeMap::new();
        entries.insert(Vec::new(), (1.0, state));
        Self { registers: Vec::new(), layout, entries }
    }

    pub(crate) fn from_parts(
        registers: Vec<(String, usize)>,
        layout: SystemLayout,
        entries: BTreeMap<Key, (f64, DensityMatrix)>,
    ) -> Self {
        Self { registers, layout, entries }
    }

    pub fn registers(&self) -> &[(String, usize)] {
        &self.registers
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64, &DensityMatrix)> {
        self.entries.iter().map(|(k, (p, s))| (k.as_slice(), *p, s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        self.entries.values().map(|(p, _)| p).sum()
    }

    fn locate(&self, name: &str) -> Result<Part> {
        if let Some(k) = self.registers.iter().position(|(n, _)| n == name) {
            return Ok(Part::Register(k));
        }
        self.layout.position(name).map(Part::Quantum).map_err(|_| QfbError::UnknownLabel(name.to_string()))
    }

    fn split_parts<S: AsRef<str>>(&self, names: &[S]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut regs = Vec::new();
        let mut quantum = Vec::new();
        for n in names {
            match self.locate(n.as_ref())? {
                Part::Register(k) => regs.push(k),
                Part::Quantum(k) => quantum.push(k),
            }
        }
        regs.sort_unstable();
        regs.dedup();
        quantum.sort_unstable();
        quantum.dedup();
        Ok((regs, quantum))
    }

    /// Groups entries by the values of `regs`, summing `p · Tr_rest τ`
    /// over the quantum factors `quantum`. Each group is unnormalized with
    /// trace equal to its mass.
    fn grouped(&self, regs: &[usize], quantum: &[usize]) -> BTreeMap<Key, (f64, CMatrix)> {
        let dims = self.layout.dims();
        let qdim: usize = quantum.iter().map(|&k| dims[k]).product();
        let mut groups: BTreeMap<Key, (f64, CMatrix)> = BTreeMap::new();
        for (key, (p, state)) in &self.entries {
            let g: Key = regs.iter().map(|&r| key[r]).collect();
            let reduced = if quantum.len() == self.layout.len() {
                state.matrix().clone()
            } else {
                linalg::partial_trace_keep(state.matrix(), &dims, quantum)
            };
            let slot = groups.entry(g).or_insert_with(|| (0.0, CMatrix::zeros(qdim, qdim)));
            slot.0 += p;
            slot.1 += reduced * c64(*p, 0.0);
        }
        groups
    }

    /// Entropy of the marginal on the given registers and quantum factors.
    fn joint_entropy(&self, regs: &[usize], quantum: &[usize]) -> Result<f64> {
        let mut spectrum = Vec::new();
        for (_, (_, m)) in self.grouped(regs, quantum) {
            spectrum.extend(linalg::eigvalsh(&m)?);
        }
        entropy_from_spectrum(&spectrum)
    }

    /// `I(A;B) = S(A) + S(B) − S(AB)`; names may be registers or quantum
    /// factors. Exactly zero when `A` is classical with a single value.
    pub fn mutual_information<S: AsRef<str>, T: AsRef<str>>(&self, part_a: &[S], part_b: &[T]) -> Result<f64> {
        let (ra, qa) = self.split_parts(part_a)?;
        let (rb, qb) = self.split_parts(part_b)?;
        if ra.iter().any(|r| rb.contains(r)) || qa.iter().any(|q| qb.contains(q)) {
            return Err(QfbError::InvalidParameter("mutual information parts overlap".into()));
        }
        if qa.is_empty() && self.grouped(&ra, &[]).values().filter(|(p, _)| *p > 0.0).count() <= 1 {
            return Ok(0.0);
        }
        if qb.is_empty() && self.grouped(&rb, &[]).values().filter(|(p, _)| *p > 0.0).count() <= 1 {
            return Ok(0.0);
        }
        let union = |x: &[usize], y: &[usize]| {
            let mut v: Vec<usize> = x.iter().chain(y).copied().collect();
            v.sort_unstable();
            v
        };
        let sa = self.joint_entropy(&ra, &qa)?;
        let sb = self.joint_entropy(&rb, &qb)?;
        let sab = self.joint_entropy(&union(&ra, &rb), &union(&qa, &qb))?;
        Ok(sa + sb - sab)
    }

    /// `S(target | given) = Σ_g p(g) S(τ_target^g)` for classical `given`.
    pub fn conditional_entropy<S: AsRef<str>, T: AsRef<str>>(&self, target: &[S], given: &[T]) -> Result<f64> {
        let (rt, qt) = self.split_parts(target)?;
        if !rt.is_empty() {
            return Err(QfbError::InvalidParameter("conditional entropy target must be quantum".into()));
        }
        let (rg, qg) = self.split_parts(given)?;
        if !qg.is_empty() {
            return Err(QfbError::InvalidParameter("conditioning systems must be classical registers".into()));
        }
        let mut s = 0.0;
        for (_, (p, m)) in self.grouped(&rg, &qt) {
            if p > 0.0 {
                s += p * matrix_entropy(&(m / c64(p, 0.0)))?;
            }
        }
        Ok(s.max(0.0))
    }

    /// `I(W; C F) + S(C | W F)`.
    pub fn monotone<S: AsRef<str>, T: AsRef<str>>(&self, w: &str, f: &[S], c: &[T]) -> Result<f64> {
        let mut cf: Vec<&str> = c.iter().map(AsRef::as_ref).collect();
        cf.extend(f.iter().map(AsRef::as_ref));
        let mut wf: Vec<&str> = vec![w];
        wf.extend(f.iter().map(AsRef::as_ref));
        Ok(self.mutual_information(&[w], &cf)? + self.conditional_entropy(c, &wf)?)
    }

    /// Block-diagonal density matrix with registers as leading factors.
    pub fn flatten(&self) -> DensityMatrix {
        let layout = SystemLayout::new(self.registers.clone())
            .and_then(|r| r.concat(&self.layout))
            .expect("register names were checked against quantum labels");
        let qdim = self.layout.dim();
        let reg_dims: Vec<usize> = self.registers.iter().map(|(_, s)| *s).collect();
        let st = linalg::strides(&reg_dims);
        let mut m = CMatrix::zeros(layout.dim(), layout.dim());
        for (key, (p, state)) in &self.entries {
            let off = key.iter().zip(&st).map(|(v, s)| v * s).sum::<usize>() * qdim;
            for i in 0..qdim {
                for j in 0..qdim {
                    m[(off + i, off + j)] = state.matrix()[(i, j)] * c64(*p, 0.0);
                }
            }
        }
        DensityMatrix::from_parts(layout, m)
    }

    /// Marginal on the named registers and quantum factors.
    pub fn marginal<S: AsRef<str>>(&self, keep: &[S]) -> Result<CQEnsemble> {
        let (regs, quantum) = self.split_parts(keep)?;
        let registers = regs.iter().map(|&r| self.registers[r].clone()).collect();
        let layout = self.layout.select(&quantum);
        let entries = self
            .grouped(&regs, &quantum)
            .into_iter()
            .filter(|(_, (p, _))| *p > 0.0)
            .map(|(k, (p, m))| (k, (p, DensityMatrix::from_parts(layout.clone(), m / c64(p, 0.0)))))
            .collect();
        Ok(Self { registers, layout, entries })
    }

    /// Applies `f` to every conditional state. All outputs must share a
    /// layout.
    pub fn map_states(&self, f: impl Fn(&DensityMatrix) -> Result<DensityMatrix>) -> Result<CQEnsemble> {
        let mut entries = BTreeMap::new();
        for (key, (p, state)) in &self.entries {
            entries.insert(key.clone(), (*p, f(state)?));
        }
        let layout = entries
            .values()
            .next()
            .map(|(_, s): &(f64, DensityMatrix)| s.layout().clone())
            .expect("ensemble has entries");
        if entries.values().any(|(_, s)| s.layout() != &layout) {
            return Err(QfbError::DimensionMismatch("mapped states differ in layout".into()));
        }
        Ok(Self { registers: self.registers.clone(), layout, entries })
    }

    /// `Σ p τ` over all entries.
    pub fn average_state(&self) -> DensityMatrix {
        let all: Vec<usize> = (0..self.layout.len()).collect();
        let (_, (_, m)) = self.grouped(&[], &all).into_iter().next().expect("ensemble has entries");
        DensityMatrix::from_parts(self.layout.clone(), m)
    }

    /// Applies `channel` to factor `on` in every branch; the output factor
    /// is labeled `out_label`.
    pub fn apply_channel(&self, channel: &KrausChannel, on: &str, out_label: &str) -> Result<CQEnsemble> {
        self.apply_conditional_channel("", std::slice::from_ref(channel), on, out_label)
    }

    /// Applies `channels[v]` to factor `on` in branches where `register`
    /// holds `v`. With an empty register name, `channels[0]` applies
    /// everywhere.
    pub fn apply_conditional_channel(
        &self,
        register: &str,
        channels: &[KrausChannel],
        on: &str,
        out_label: &str,
    ) -> Result<CQEnsemble> {
        let reg = if register.is_empty() {
            None
        } else {
            match self.locate(register)? {
                Part::Register(k) => Some(k),
                Part::Quantum(_) => return Err(QfbError::InvalidParameter(format!("`{register}` is not a register"))),
            }
        };
        let mut entries = BTreeMap::new();
        let mut layout = None;
        for (key, (p, state)) in &self.entries {
            let idx = reg.map_or(0, |r| key[r]);
            let ch = channels
                .get(idx)
                .ok_or_else(|| QfbError::InvalidParameter(format!("no channel for register value {idx}")))?;
            let out = ch.apply_as(state, on, out_label)?;
            layout.get_or_insert_with(|| out.layout().clone());
            entries.insert(key.clone(), (*p, out));
        }
        let layout = layout.expect("ensemble has entries");
        if entries.values().any(|(_, s): &(f64, DensityMatrix)| s.layout() != &layout) {
            return Err(QfbError::DimensionMismatch("conditional channels disagree on output dimension".into()));
        }
        Ok(Self { registers: self.registers.clone(), layout, entries })
    }

    fn push_register(&self, name: &str, size: usize) -> Result<Vec<(String, usize)>> {
        if self.registers.iter().any(|(n, _)| n == name) || self.layout.contains(name) {
            return Err(QfbError::LabelCollision(name.to_string()));
        }
        let mut regs = self.registers.clone();
        regs.push((name.to_string(), size));
        Ok(regs)
    }

    /// Measures `on` with `inst`, recording the outcome in `new_register`.
    /// The measured factors are replaced by one output factor carrying the
    /// first label of `on`. Branches below `P_MIN` are dropped.
    pub fn apply_instrument<S: AsRef<str>>(
        &self,
        inst: &Instrument,
        on: &[S],
        new_register: &str,
    ) -> Result<CQEnsemble> {
        let pos = self.layout.positions(on)?;
        let dim_on: usize = pos.iter().map(|&k| self.layout.factors()[k].1).product();
        if dim_on != inst.dim_in {
            return Err(QfbError::DimensionMismatch(format!(
                "instrument input {} vs measured dimension {dim_on}",
                inst.dim_in
            )));
        }
        let out_label = on.first().map(|s| s.as_ref().to_string()).unwrap_or_else(|| "out".into());
        let out = [(out_label, inst.dim_out)];
        let registers = self.push_register(new_register, inst.outcomes.len())?;
        let layout = self.layout.replaced(&pos, &out)?;
        let mut branches = Vec::new();
        for (key, (p, state)) in &self.entries {
            for (x, (_, ops)) in inst.outcomes.iter().enumerate() {
                let mut m = CMatrix::zeros(layout.dim(), layout.dim());
                for k in ops {
                    m += state.conjugate_local(&pos, k, &out)?.0;
                }
                let px = linalg::trace(&m).re;
                let mut k2 = key.clone();
                k2.push(x);
                branches.push((k2, p * px, m, px));
            }
        }
        Ok(Self::from_parts(registers, layout.clone(), prune(branches, &layout)?))
    }

    /// Applies a one-way LOCC map: sender isometry `U^x` on `a`, receiver
    /// operator `V^x` on `b`, outcome recorded in `x_register`. Every
    /// conditional state must be pure on `a ∪ b`.
    pub fn apply_1wlocc<S: AsRef<str>, T: AsRef<str>>(
        &self,
        m: &OneWayLocc,
        a: &[S],
        b: &[T],
        x_register: &str,
    ) -> Result<CQEnsemble> {
        let a_names: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
        let b_names: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
        let mut ab = a_names.clone();
        ab.extend(&b_names);
        for (_, state) in self.entries.values() {
            let purity = state.reduce_to(&ab)?.purity();
            if purity < 1.0 - tol::EQ {
                return Err(QfbError::NotPure(purity));
            }
        }
        let a_pos = self.layout.positions(&a_names)?;
        let b_pos = self.layout.positions(&b_names)?;
        let da: usize = a_pos.iter().map(|&k| self.layout.factors()[k].1).product();
        let db: usize = b_pos.iter().map(|&k| self.layout.factors()[k].1).product();
        if da != m.dim_a_in || db != m.dim_b_in {
            return Err(QfbError::DimensionMismatch(format!(
                "LOCC expects ({}, {}), systems are ({da}, {db})",
                m.dim_a_in, m.dim_b_in
            )));
        }
        let a_out = [(a_names[0].to_string(), m.dim_a_out)];
        let b_out = [(b_names[0].to_string(), m.dim_b_out)];
        let registers = self.push_register(x_register, m.outcomes.len())?;
        let mid_layout = self.layout.replaced(&a_pos, &a_out)?;
        let b_pos_mid = mid_layout.positions(&b_names)?;
        let layout = mid_layout.replaced(&b_pos_mid, &b_out)?;
        let mut branches = Vec::new();
        for (key, (p, state)) in &self.entries {
            for (x, o) in m.outcomes.iter().enumerate() {
                let (mid, _) = state.conjugate_local(&a_pos, &o.sender, &a_out)?;
                let mid = DensityMatrix::from_parts(mid_layout.clone(), mid);
                let (fin, _) = mid.conjugate_local(&b_pos_mid, &o.receiver, &b_out)?;
                let px = linalg::trace(&fin).re;
                let mut k2 = key.clone();
                k2.push(x);
                branches.push((k2, p * px, fin, px));
            }
        }
        Ok(Self::from_parts(registers, layout.clone(), prune(branches, &layout)?))
    }
}

/// Normalizes branch states, drops branches lighter than `P_MIN` and
/// renormalizes the survivors.
fn prune(
    branches: Vec<(Key, f64, CMatrix, f64)>,
    layout: &SystemLayout,
) -> Result<BTreeMap<Key, (f64, DensityMatrix)>> {
    let mut pruned = 0.0;
    let mut kept = Vec::new();
    for (key, joint, m, local) in branches {
        if joint < tol::P_MIN || local <= 0.0 {
            pruned += joint.max(0.0);
        } else {
            kept.push((key, joint, DensityMatrix::from_parts(layout.clone(), m / c64(local, 0.0))));
        }
    }
    if pruned > tol::PRUNE_BUDGET {
        return Err(QfbError::PrunedMass(pruned));
    }
    let total: f64 = kept.iter().map(|(_, p, _)| p).sum();
    Ok(kept.into_iter().map(|(k, p, s)| (k, (p / total, s))).collect())
}

/// Labeled CP maps whose sum is trace preserving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstrument", into = "RawInstrument")]
pub struct Instrument {
    dim_in: usize,
    dim_out: usize,
    outcomes: Vec<(String, Vec<CMatrix>)>,
}

#[derive(Serialize, Deserialize)]
struct RawOutcome {
    label: String,
    #[serde(with = "serde_util::matrix_list")]
    kraus: Vec<CMatrix>,
}

#[derive(Serialize, Deserialize)]
struct RawInstrument {
    dim_in: usize,
    dim_out: usize,
    outcomes: Vec<RawOutcome>,
}

impl TryFrom<RawInstrument> for Instrument {
    type Error = QfbError;
    fn try_from(raw: RawInstrument) -> Result<Self> {
        Instrument::new(raw.dim_in, raw.dim_out, raw.outcomes.into_iter().map(|o| (o.label, o.kraus)).collect())
    }
}

impl From<Instrument> for RawInstrument {
    fn from(i: Instrument) -> Self {
        RawInstrument {
            dim_in: i.dim_in,
            dim_out: i.dim_out,
            outcomes: i.outcomes.into_iter().map(|(label, kraus)| RawOutcome { label, kraus }).collect(),
        }
    }
}

impl Instrument {
    pub fn new(dim_in: usize, dim_out: usize, outcomes: Vec<(String, Vec<CMatrix>)>) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(QfbError::InvalidParameter("instrument has no outcomes".into()));
        }
        let all: Vec<CMatrix> = outcomes.iter().flat_map(|(_, ks)| ks.iter().cloned()).collect();
        if all.iter().any(|k| k.nrows() != dim_out || k.ncols() != dim_in) {
            return Err(QfbError::DimensionMismatch(format!("instrument operators must be {dim_out}x{dim_in}")));
        }
        let defect = tp_defect(dim_in, &all);
        if defect > tol::TP {
            return Err(QfbError::NotTracePreserving(defect));
        }
        Ok(Self { dim_in, dim_out, outcomes })
    }

    /// One outcome, one operator.
    pub fn trivial(channel: &KrausChannel) -> Self {
        Self {
            dim_in: channel.dim_in(),
            dim_out: channel.dim_out(),
            outcomes: vec![("0".into(), channel.kraus().to_vec())],
        }
    }

    /// Projective measurement in the computational basis, post-measurement
    /// state kept.
    pub fn computational_basis(dim: usize) -> Self {
        let outcomes = (0..dim)
            .map(|x| {
                let p = CMatrix::from_fn(dim, dim, |i, j| if i == x && j == x { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
                (x.to_string(), vec![p])
            })
            .collect();
        Self { dim_in: dim, dim_out: dim, outcomes }
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn outcomes(&self) -> &[(String, Vec<CMatrix>)] {
        &self.outcomes
    }

    pub fn num_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    /// Largest Kraus count over outcomes.
    pub fn max_kraus(&self) -> usize {
        self.outcomes.iter().map(|(_, k)| k.len()).max().unwrap_or(0)
    }
}

/// One branch of a one-way LOCC map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoccOutcome {
    pub label: String,
    #[serde(with = "serde_util::matrix")]
    pub sender: CMatrix,
    #[serde(with = "serde_util::matrix")]
    pub receiver: CMatrix,
}

/// `Σ_x U^x ⊗ V^x(·)V^x† ⊗ |x⟩⟨x|` with isometric `U^x` and
/// `Σ V^x†V^x = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLocc", into = "RawLocc")]
pub struct OneWayLocc {
    dim_a_in: usize,
    dim_a_out: usize,
    dim_b_in: usize,
    dim_b_out: usize,
    outcomes: Vec<LoccOutcome>,
}

#[derive(Serialize, Deserialize)]
struct RawLocc {
    outcomes: Vec<LoccOutcome>,
}

impl TryFrom<RawLocc> for OneWayLocc {
    type Error = QfbError;
    fn try_from(raw: RawLocc) -> Result<Self> {
        OneWayLocc::new(raw.outcomes)
    }
}

impl From<OneWayLocc> for RawLocc {
    fn from(m: OneWayLocc) -> Self {
        RawLocc { outcomes: m.outcomes }
    }
}

impl OneWayLocc {
    pub fn new(outcomes: Vec<LoccOutcome>) -> Result<Self> {
        let first = outcomes.first().ok_or_else(|| QfbError::InvalidParameter("LOCC map has no outcomes".into()))?;
        let (dao, dai) = first.sender.shape();
        let (dbo, dbi) = first.receiver.shape();
        for o in &outcomes {
            if o.sender.shape() != (dao, dai) || o.receiver.shape() != (dbo, dbi) {
                return Err(QfbError::DimensionMismatch("LOCC outcomes differ in shape".into()));
            }
            let d = linalg::isometry_defect(&o.sender);
            if d > tol::TP {
                return Err(QfbError::NotIsometry(d));
            }
        }
        let receivers: Vec<CMatrix> = outcomes.iter().map(|o| o.receiver.clone()).collect();
        let defect = tp_defect(dbi, &receivers);
        if defect > tol::TP {
            return Err(QfbError::NotTracePreserving(defect));
        }
        Ok(Self { dim_a_in: dai, dim_a_out: dao, dim_b_in: dbi, dim_b_out: dbo, outcomes })
    }

    /// `U = I`, `V = I`, one outcome.
    pub fn identity(dim_a: usize, dim_b: usize) -> Self {
        Self {
            dim_a_in: dim_a,
            dim_a_out: dim_a,
            dim_b_in: dim_b,
            dim_b_out: dim_b,
            outcomes: vec![LoccOutcome {
                label: "0".into(),
                sender: linalg::identity(dim_a),
                receiver: linalg::identity(dim_b),
            }],
        }
    }

    pub fn outcomes(&self) -> &[LoccOutcome] {
        &self.outcomes
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.dim_a_in, self.dim_a_out, self.dim_b_in, self.dim_b_out)
    }
}
