//! Quantum channels in Kraus form, their isometric dilations, named
//! constructors and Haar-random sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QfbError, Result};
use crate::linalg::{self, c64, CMatrix, C64};
use crate::random;
use crate::serde_util;
use crate::state::{DensityMatrix, HermitianObservable, SystemLayout};
use crate::tol;

/// Completely positive trace-preserving map `dim_in -> dim_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChannel", into = "RawChannel")]
pub struct KrausChannel {
    dim_in: usize,
    dim_out: usize,
    kraus: Vec<CMatrix>,
}

#[derive(Serialize, Deserialize)]
struct RawChannel {
    dim_in: usize,
    dim_out: usize,
    #[serde(with = "serde_util::matrix_list")]
    kraus: Vec<CMatrix>,
}

impl TryFrom<RawChannel> for KrausChannel {
    type Error = QfbError;
    fn try_from(raw: RawChannel) -> Result<Self> {
        KrausChannel::new(raw.dim_in, raw.dim_out, raw.kraus)
    }
}

impl From<KrausChannel> for RawChannel {
    fn from(c: KrausChannel) -> Self {
        RawChannel { dim_in: c.dim_in, dim_out: c.dim_out, kraus: c.kraus }
    }
}

/// `max |Σ K†K − I|` for a list of `dim_out x dim_in` operators.
pub fn tp_defect(dim_in: usize, kraus: &[CMatrix]) -> f64 {
    let mut sum = CMatrix::zeros(dim_in, dim_in);
    for k in kraus {
        sum += k.adjoint() * k;
    }
    linalg::max_abs_diff(&sum, &linalg::identity(dim_in))
}

/// Nonzero entries of `k` when a pairwise sum over them is cheaper than
/// two dense products.
fn sparse_entries(k: &CMatrix) -> Option<Vec<(usize, usize, C64)>> {
    let (r, c) = k.shape();
    let budget = (2 * r * c * r.max(c)) as f64;
    let nz: Vec<(usize, usize, C64)> = (0..c)
        .flat_map(|j| (0..r).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let v = k[(i, j)];
            (v.re != 0.0 || v.im != 0.0).then_some((i, j, v))
        })
        .collect();
    ((nz.len() * nz.len()) as f64 <= 0.5 * budget).then_some(nz)
}

impl KrausChannel {
    pub fn new(dim_in: usize, dim_out: usize, kraus: Vec<CMatrix>) -> Result<Self> {
        Self::new_with_tol(dim_in, dim_out, kraus, tol::TP)
    }

    pub fn new_with_tol(dim_in: usize, dim_out: usize, kraus: Vec<CMatrix>, tp_tol: f64) -> Result<Self> {
        if dim_in == 0 || dim_out == 0 || kraus.is_empty() {
            return Err(QfbError::InvalidParameter(
                "channel needs positive dims and at least one Kraus operator".into(),
            ));
        }
        if let Some(k) = kraus.iter().find(|k| k.nrows() != dim_out || k.ncols() != dim_in) {
            return Err(QfbError::DimensionMismatch(format!(
                "Kraus operator is {}x{}, expected {dim_out}x{dim_in}",
                k.nrows(),
                k.ncols()
            )));
        }
        let defect = tp_defect(dim_in, &kraus);
        if defect > tp_tol {
            return Err(QfbError::NotTracePreserving(defect));
        }
        Ok(Self { dim_in, dim_out, kraus })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn tp_defect(&self) -> f64 {
        tp_defect(self.dim_in, &self.kraus)
    }

    /// Applies the channel to factor `on`; the factor keeps its label.
    pub fn apply(&self, rho: &DensityMatrix, on: &str) -> Result<DensityMatrix> {
        self.apply_as(rho, on, on)
    }

    /// Applies the channel to factor `on` and renames the output factor.
    pub fn apply_as(&self, rho: &DensityMatrix, on: &str, out_label: &str) -> Result<DensityMatrix> {
        let pos = rho.layout().position(on)?;
        let d = rho.layout().factors()[pos].1;
        if d != self.dim_in {
            return Err(QfbError::DimensionMismatch(format!(
                "factor `{on}` has dimension {d}, channel expects {}",
                self.dim_in
            )));
        }
        let out = [(out_label.to_string(), self.dim_out)];
        let mut acc: Option<(CMatrix, SystemLayout)> = None;
        for k in &self.kraus {
            let (m, layout) = rho.conjugate_local(&[pos], k, &out)?;
            acc = Some(match acc {
                Some((a, l)) => (a + m, l),
                None => (m, layout),
            });
        }
        let (m, layout) = acc.expect("at least one Kraus operator");
        Ok(DensityMatrix::from_parts(layout, m))
    }

    /// `Σ K m K†` on the raw input space.
    pub fn apply_matrix(&self, m: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim_out, self.dim_out);
        for k in &self.kraus {
            match sparse_entries(k) {
                Some(nz) => {
                    for &(i, j, v) in &nz {
                        for &(i2, j2, v2) in &nz {
                            out[(i, i2)] += v * m[(j, j2)] * v2.conj();
                        }
                    }
                }
                None => out += k * m * k.adjoint(),
            }
        }
        out
    }

    /// `Σ K† g K` on the raw output space.
    pub fn adjoint_matrix(&self, g: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim_in, self.dim_in);
        for k in &self.kraus {
            match sparse_entries(k) {
                Some(nz) => {
                    for &(i, j, v) in &nz {
                        for &(i2, j2, v2) in &nz {
                            out[(j, j2)] += v.conj() * g[(i, i2)] * v2;
                        }
                    }
                }
                None => out += k.adjoint() * g * k,
            }
        }
        out
    }

    /// Heisenberg-picture action on a single-factor observable. The result
    /// lives on the same label with dimension `dim_in`.
    pub fn adjoint_apply(&self, g: &HermitianObservable) -> Result<HermitianObservable> {
        if g.layout().dim() != self.dim_out {
            return Err(QfbError::DimensionMismatch(format!(
                "observable dimension {} vs channel output {}",
                g.layout().dim(),
                self.dim_out
            )));
        }
        let label = g.layout().labels().next().unwrap_or("A").to_string();
        let layout = SystemLayout::single(&label, self.dim_in)?;
        Ok(HermitianObservable::from_parts(layout, self.adjoint_matrix(g.matrix())))
    }

    /// `V = Σᵢ Kᵢ ⊗ |i⟩_E`.
    pub fn stinespring(&self) -> IsometricDilation {
        IsometricDilation::from_kraus(self.dim_in, self.dim_out, &self.kraus, self.kraus.len())
    }
}

/// Isometry `dim_in -> dim_out ⊗ dim_env`, environment as the least
/// significant factor.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometricDilation {
    isometry: CMatrix,
    dim_in: usize,
    dim_out: usize,
    dim_env: usize,
}

impl IsometricDilation {
    /// Stacks Kraus operators into an isometry, zero-padding the
    /// environment up to `dim_env ≥ kraus.len()`.
    pub fn from_kraus(dim_in: usize, dim_out: usize, kraus: &[CMatrix], dim_env: usize) -> Self {
        assert!(dim_env >= kraus.len());
        let mut v = CMatrix::zeros(dim_out * dim_env, dim_in);
        for (e, k) in kraus.iter().enumerate() {
            for b in 0..dim_out {
                for a in 0..dim_in {
                    v[(b * dim_env + e, a)] = k[(b, a)];
                }
            }
        }
        Self { isometry: v, dim_in, dim_out, dim_env }
    }

    pub fn isometry(&self) -> &CMatrix {
        &self.isometry
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn dim_env(&self) -> usize {
        self.dim_env
    }

    pub fn isometry_defect(&self) -> f64 {
        linalg::isometry_defect(&self.isometry)
    }

    /// Conjugates factor `on` by the isometry; `on` becomes the channel
    /// output (same label) followed by a new `env_label` factor.
    pub fn apply(&self, rho: &DensityMatrix, on: &str, env_label: &str) -> Result<DensityMatrix> {
        let pos = rho.layout().position(on)?;
        if rho.layout().factors()[pos].1 != self.dim_in {
            return Err(QfbError::DimensionMismatch(format!("factor `{on}` vs dilation input {}", self.dim_in)));
        }
        let out = [(on.to_string(), self.dim_out), (env_label.to_string(), self.dim_env)];
        let (m, layout) = rho.conjugate_local(&[pos], &self.isometry, &out)?;
        Ok(DensityMatrix::from_parts(layout, m))
    }
}

/// Probabilistic mixture `Σ_x p(x) N^x` of channels sharing dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixture", into = "RawMixture")]
pub struct ChannelMixture {
    components: Vec<(f64, KrausChannel)>,
}

#[derive(Serialize, Deserialize)]
struct RawMixture {
    weights: Vec<f64>,
    components: Vec<KrausChannel>,
}

impl TryFrom<RawMixture> for ChannelMixture {
    type Error = QfbError;
    fn try_from(raw: RawMixture) -> Result<Self> {
        if raw.weights.len() != raw.components.len() {
            return Err(QfbError::InvalidParameter("weights and components differ in length".into()));
        }
        ChannelMixture::new(raw.weights.into_iter().zip(raw.components).collect())
    }
}

impl From<ChannelMixture> for RawMixture {
    fn from(m: ChannelMixture) -> Self {
        let (weights, components) = m.components.into_iter().unzip();
        RawMixture { weights, components }
    }
}

impl ChannelMixture {
    pub fn new(components: Vec<(f64, KrausChannel)>) -> Result<Self> {
        let first = components.first().ok_or_else(|| QfbError::InvalidParameter("empty mixture".into()))?;
        let (din, dout) = (first.1.dim_in, first.1.dim_out);
        let mut total = 0.0;
        for (w, ch) in &components {
            if w.is_nan() || *w < 0.0 {
                return Err(QfbError::InvalidParameter(format!("negative weight {w}")));
            }
            if ch.dim_in != din || ch.dim_out != dout {
                return Err(QfbError::DimensionMismatch("mixture components differ in dimension".into()));
            }
            total += w;
        }
        if (total - 1.0).abs() > tol::TRACE {
            return Err(QfbError::InvalidParameter(format!("weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn single(channel: KrausChannel) -> Self {
        Self { components: vec![(1.0, channel)] }
    }

    pub fn components(&self) -> &[(f64, KrausChannel)] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    pub fn dim_in(&self) -> usize {
        self.components[0].1.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.components[0].1.dim_out
    }

    /// Single channel with Kraus set `{√p_x K^x_j}`; zero-weight components
    /// are dropped.
    pub fn flatten(&self) -> KrausChannel {
        let kraus = self
            .components
            .iter()
            .filter(|(w, _)| *w > 0.0)
            .flat_map(|(w, ch)| ch.kraus.iter().map(move |k| k * c64(w.sqrt(), 0.0)))
            .collect();
        KrausChannel { dim_in: self.dim_in(), dim_out: self.dim_out(), kraus }
    }
}

/// A channel given either directly or as a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelSpec {
    Mixture(ChannelMixture),
    Single(KrausChannel),
}

impl ChannelSpec {
    pub fn dim_in(&self) -> usize {
        match self {
            Self::Single(c) => c.dim_in(),
            Self::Mixture(m) => m.dim_in(),
        }
    }

    pub fn dim_out(&self) -> usize {
        match self {
            Self::Single(c) => c.dim_out(),
            Self::Mixture(m) => m.dim_out(),
        }
    }

    /// The averaged channel.
    pub fn flattened(&self) -> KrausChannel {
        match self {
            Self::Single(c) => c.clone(),
            Self::Mixture(m) => m.flatten(),
        }
    }

    pub fn as_mixture(&self) -> ChannelMixture {
        match self {
            Self::Single(c) => ChannelMixture::single(c.clone()),
            Self::Mixture(m) => m.clone(),
        }
    }
}

/// Erasure channel on a qudit: identity embedding into `d + 1` levels with
/// weight `1 − p`, the flag `|d⟩` with weight `p`.
pub fn make_erasure(d: usize, p: f64) -> Result<ChannelMixture> {
    if d < 2 {
        return Err(QfbError::InvalidParameter(format!("erasure needs d >= 2, got {d}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(QfbError::InvalidParameter(format!("erasure probability {p} outside [0,1]")));
    }
    let embed = CMatrix::from_fn(d + 1, d, |i, j| if i == j { c64(1.0, 0.0) } else { c64(0.0, 0.0) });
    let keep = KrausChannel::new(d, d + 1, vec![embed])?;
    let flags = (0..d)
        .map(|j| CMatrix::from_fn(d + 1, d, |i, k| if i == d && k == j { c64(1.0, 0.0) } else { c64(0.0, 0.0) }))
        .collect();
    let erase = KrausChannel::new(d, d + 1, flags)?;
    ChannelMixture::new(vec![(1.0 - p, keep), (p, erase)])
}

/// Named channel families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum NamedChannel {
    Identity {
        d: usize,
    },
    /// `ρ ↦ (1−q)ρ + q I/d`.
    Depolarizing {
        d: usize,
        q: f64,
    },
    /// Qubit `ρ ↦ (1−p)ρ + p ZρZ`.
    Dephasing {
        p: f64,
    },
    AmplitudeDamping {
        gamma: f64,
    },
    /// Beamsplitter of transmissivity `eta` with a vacuum environment, on
    /// Fock space truncated at `cutoff` photons.
    TruncatedPureLoss {
        eta: f64,
        cutoff: usize,
    },
}

fn unit_interval(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(QfbError::InvalidParameter(format!("{name} = {x} outside [0,1]")))
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

pub fn make_named(named: &NamedChannel) -> Result<KrausChannel> {
    let one = c64(1.0, 0.0);
    match *named {
        NamedChannel::Identity { d } => {
            if d == 0 {
                return Err(QfbError::InvalidParameter("identity needs d >= 1".into()));
            }
            KrausChannel::new(d, d, vec![linalg::identity(d)])
        }
        NamedChannel::Depolarizing { d, q } => {
            unit_interval("q", q)?;
            if d == 0 {
                return Err(QfbError::InvalidParameter("depolarizing needs d >= 1".into()));
            }
            let mut kraus = vec![linalg::identity(d) * c64((1.0 - q).sqrt(), 0.0)];
            let amp = c64((q / d as f64).sqrt(), 0.0);
            for i in 0..d {
                for j in 0..d {
                    kraus.push(CMatrix::from_fn(d, d, |r, c| if r == i && c == j { amp } else { c64(0.0, 0.0) }));
                }
            }
            KrausChannel::new(d, d, kraus)
        }
        NamedChannel::Dephasing { p } => {
            unit_interval("p", p)?;
            let z = CMatrix::from_row_slice(2, 2, &[one, c64(0.0, 0.0), c64(0.0, 0.0), -one]);
            KrausChannel::new(2, 2, vec![linalg::identity(2) * c64((1.0 - p).sqrt(), 0.0), z * c64(p.sqrt(), 0.0)])
        }
        NamedChannel::AmplitudeDamping { gamma } => {
            unit_interval("gamma", gamma)?;
            let zero = c64(0.0, 0.0);
            let k0 = CMatrix::from_row_slice(2, 2, &[one, zero, zero, c64((1.0 - gamma).sqrt(), 0.0)]);
            let k1 = CMatrix::from_row_slice(2, 2, &[zero, c64(gamma.sqrt(), 0.0), zero, zero]);
            KrausChannel::new(2, 2, vec![k0, k1])
        }
        NamedChannel::TruncatedPureLoss { eta, cutoff } => {
            unit_interval("eta", eta)?;
            let d = cutoff + 1;
            // (K_k)_{n-k, n} = sqrt(C(n,k) η^(n-k) (1-η)^k): k photons lost to the environment.
            let kraus = (0..d)
                .map(|k| {
                    CMatrix::from_fn(d, d, |m, n| {
                        if n >= k && m == n - k {
                            let w = binomial(n, k) * eta.powi((n - k) as i32) * (1.0 - eta).powi(k as i32);
                            c64(w.sqrt(), 0.0)
                        } else {
                            c64(0.0, 0.0)
                        }
                    })
                })
                .collect();
            KrausChannel::new(d, d, kraus)
        }
    }
}

/// Parses a channel family from its name and a parameter lookup.
pub fn named_from_params(name: &str, get: impl Fn(&str) -> Option<f64>) -> Result<NamedChannel> {
    let need =
        |key: &str| get(key).ok_or_else(|| QfbError::InvalidParameter(format!("channel `{name}` needs --{key}")));
    let dim = |key: &str| -> Result<usize> {
        let v = need(key)?;
        if v < 1.0 || v.fract() != 0.0 {
            return Err(QfbError::InvalidParameter(format!("--{key} must be a positive integer")));
        }
        Ok(v as usize)
    };
    Ok(match name {
        "identity" => NamedChannel::Identity { d: dim("d")? },
        "depolarizing" => NamedChannel::Depolarizing { d: dim("d")?, q: need("q")? },
        "dephasing" => NamedChannel::Dephasing { p: need("p")? },
        "amplitude_damping" => NamedChannel::AmplitudeDamping { gamma: need("gamma")? },
        "pure_loss" | "truncated_pure_loss" => {
            NamedChannel::TruncatedPureLoss { eta: need("eta")?, cutoff: dim("cutoff")? }
        }
        other => return Err(QfbError::UnknownChannel(other.to_string())),
    })
}

/// Channel whose Kraus operators are the blocks of a Haar isometry
/// `dim_in -> dim_out ⊗ dim_env`.
pub fn random_channel(dim_in: usize, dim_out: usize, dim_env: usize, seed: u64) -> Result<KrausChannel> {
    random_channel_with(&mut random::rng_from_seed(seed), dim_in, dim_out, dim_env)
}

pub fn random_channel_with<R: Rng + ?Sized>(
    rng: &mut R,
    dim_in: usize,
    dim_out: usize,
    dim_env: usize,
) -> Result<KrausChannel> {
    if dim_in == 0 || dim_out == 0 || dim_env == 0 {
        return Err(QfbError::InvalidParameter("dimensions must be positive".into()));
    }
    if dim_out * dim_env < dim_in {
        return Err(QfbError::InvalidParameter(format!("no isometry {dim_in} -> {dim_out}x{dim_env}")));
    }
    let v = random::haar_isometry(rng, dim_out * dim_env, dim_in);
    let kraus = (0..dim_env).map(|e| CMatrix::from_fn(dim_out, dim_in, |b, a| v[(b * dim_env + e, a)])).collect();
    KrausChannel::new(dim_in, dim_out, kraus)
}

/// Population of the highest basis level; for Fock-truncated states this
/// is the weight sitting at the cutoff.
pub fn top_level_population(rho: &DensityMatrix) -> f64 {
    let d = rho.dim();
    rho.matrix()[(d - 1, d - 1)].re
}
