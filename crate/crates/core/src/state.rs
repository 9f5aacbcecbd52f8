//! Labeled tensor-product layouts, density matrices, pure states and
//! observables, with the entropic primitives built on them.

use serde::{Deserialize, Serialize};

use crate::error::{QfbError, Result};
use crate::linalg::{self, c64, CMatrix, CVector, C64};
use crate::serde_util;
use crate::tol::{self, Tolerances};

/// Ordered list of labeled tensor factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, usize)>", into = "Vec<(String, usize)>")]
pub struct SystemLayout {
    factors: Vec<(String, usize)>,
}

impl TryFrom<Vec<(String, usize)>> for SystemLayout {
    type Error = QfbError;

    fn try_from(factors: Vec<(String, usize)>) -> Result<Self> {
        Self::new(factors)
    }
}

impl From<SystemLayout> for Vec<(String, usize)> {
    fn from(l: SystemLayout) -> Self {
        l.factors
    }
}

impl SystemLayout {
    pub fn new(factors: Vec<(String, usize)>) -> Result<Self> {
        for (k, (label, dim)) in factors.iter().enumerate() {
            if *dim == 0 {
                return Err(QfbError::InvalidLayout(format!("factor `{label}` has dimension 0")));
            }
            if factors[..k].iter().any(|(l, _)| l == label) {
                return Err(QfbError::LabelCollision(label.clone()));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(label: &str, dim: usize) -> Result<Self> {
        Self::new(vec![(label.to_string(), dim)])
    }

    /// Layout with no factors (total dimension 1).
    pub fn empty() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn from_pairs(pairs: &[(&str, usize)]) -> Result<Self> {
        Self::new(pairs.iter().map(|(l, d)| (l.to_string(), *d)).collect())
    }

    pub fn dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| d).product()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factors(&self) -> &[(String, usize)] {
        &self.factors
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().map(|(l, _)| l.as_str())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.factors.iter().any(|(l, _)| l == label)
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.factors.iter().position(|(l, _)| l == label).ok_or_else(|| QfbError::UnknownLabel(label.to_string()))
    }

    pub fn positions<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        labels.iter().map(|l| self.position(l.as_ref())).collect()
    }

    pub fn factor_dim(&self, label: &str) -> Result<usize> {
        Ok(self.factors[self.position(label)?].1)
    }

    pub fn concat(&self, other: &SystemLayout) -> Result<SystemLayout> {
        let mut f = self.factors.clone();
        f.extend(other.factors.iter().cloned());
        Self::new(f)
    }

    /// Sub-layout of the factors at `positions`, kept in layout order.
    pub fn select(&self, positions: &[usize]) -> SystemLayout {
        Self { factors: (0..self.len()).filter(|k| positions.contains(k)).map(|k| self.factors[k].clone()).collect() }
    }

    /// Replaces the factors at `targets` by `out`, inserted where the first
    /// target was.
    pub fn replaced(&self, targets: &[usize], out: &[(String, usize)]) -> Result<SystemLayout> {
        let first = targets.iter().copied().min().unwrap_or(self.len());
        let mut f = Vec::new();
        for (k, factor) in self.factors.iter().enumerate() {
            if k == first {
                f.extend(out.iter().cloned());
            }
            if !targets.contains(&k) {
                f.push(factor.clone());
            }
        }
        if first == self.len() {
            f.extend(out.iter().cloned());
        }
        Self::new(f)
    }

    pub fn permuted(&self, order: &[usize]) -> SystemLayout {
        Self { factors: order.iter().map(|&k| self.factors[k].clone()).collect() }
    }
}

/// Anything carrying a Hermitian matrix on a layout.
pub trait HermitianMatrix {
    fn layout(&self) -> &SystemLayout;
    fn matrix(&self) -> &CMatrix;
}

/// Hermitian, PSD, unit-trace matrix on a labeled layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOperator", into = "RawOperator")]
pub struct DensityMatrix {
    layout: SystemLayout,
    entries: CMatrix,
}

#[derive(Serialize, Deserialize)]
struct RawOperator {
    layout: SystemLayout,
    entries: serde_util::RawMatrix,
}

impl TryFrom<RawOperator> for DensityMatrix {
    type Error = QfbError;

    fn try_from(raw: RawOperator) -> Result<Self> {
        let m = serde_util::matrix_from_raw(&raw.entries).map_err(QfbError::Serde)?;
        DensityMatrix::new(raw.layout, m)
    }
}

impl From<DensityMatrix> for RawOperator {
    fn from(d: DensityMatrix) -> Self {
        RawOperator { entries: serde_util::matrix_to_raw(&d.entries), layout: d.layout }
    }
}

fn check_shape(layout: &SystemLayout, m: &CMatrix) -> Result<()> {
    let d = layout.dim();
    if m.nrows() != d || m.ncols() != d {
        return Err(QfbError::DimensionMismatch(format!(
            "matrix is {}x{}, layout dimension is {d}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl DensityMatrix {
    pub fn new(layout: SystemLayout, entries: CMatrix) -> Result<Self> {
        Self::new_with_tol(layout, entries, &Tolerances::default())
    }

    pub fn new_with_tol(layout: SystemLayout, entries: CMatrix, tol: &Tolerances) -> Result<Self> {
        check_shape(&layout, &entries)?;
        let dev = linalg::hermitian_deviation(&entries);
        if dev > tol.herm {
            return Err(QfbError::NotHermitian(dev));
        }
        let tr = linalg::trace(&entries).re;
        if (tr - 1.0).abs() > tol.tr {
            return Err(QfbError::BadTrace(tr));
        }
        let min = linalg::eigvalsh(&entries)?.last().copied().unwrap_or(0.0);
        if min < -tol.psd {
            return Err(QfbError::NotPositive(min));
        }
        Ok(Self { layout, entries })
    }

    /// Skips validation; for results of operations that preserve validity.
    pub(crate) fn from_parts(layout: SystemLayout, entries: CMatrix) -> Self {
        debug_assert_eq!(layout.dim(), entries.nrows());
        Self { layout, entries }
    }

    pub fn maximally_mixed(layout: SystemLayout) -> Self {
        let d = layout.dim();
        Self::from_parts(layout, linalg::identity(d) * c64(1.0 / d as f64, 0.0))
    }

    /// Diagonal state with the given probabilities.
    pub fn diagonal(layout: SystemLayout, probs: &[f64]) -> Result<Self> {
        if probs.len() != layout.dim() {
            return Err(QfbError::DimensionMismatch("diagonal length".into()));
        }
        let diag = CVector::from_iterator(probs.len(), probs.iter().map(|&p| c64(p, 0.0)));
        Self::new(layout, CMatrix::from_diagonal(&diag))
    }

    pub fn basis(layout: SystemLayout, index: usize) -> Result<Self> {
        Ok(PureState::basis(layout, index)?.to_density())
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.entries).re
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        linalg::eigvalsh(&self.entries)
    }

    pub fn with_layout(self, layout: SystemLayout) -> Result<Self> {
        check_shape(&layout, &self.entries)?;
        Ok(Self { layout, entries: self.entries })
    }

    pub fn relabel(&self, from: &str, to: &str) -> Result<Self> {
        let mut f = self.layout.factors().to_vec();
        let k = self.layout.position(from)?;
        f[k].0 = to.to_string();
        Ok(Self { layout: SystemLayout::new(f)?, entries: self.entries.clone() })
    }

    /// Reduced state on `keep`, factors kept in layout order.
    pub fn reduce_to<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        let pos = self.layout.positions(keep)?;
        let m = linalg::partial_trace_keep(&self.entries, &self.layout.dims(), &pos);
        Ok(Self::from_parts(self.layout.select(&pos), m))
    }

    /// `op (·) op†` on the `targets` factors, which are replaced by `out`.
    /// Trace is not renormalized; callers handle non-TP pieces.
    pub(crate) fn conjugate_local(
        &self,
        targets: &[usize],
        op: &CMatrix,
        out: &[(String, usize)],
    ) -> Result<(CMatrix, SystemLayout)> {
        let layout = self.layout.replaced(targets, out)?;
        let out_dims: Vec<usize> = out.iter().map(|(_, d)| *d).collect();
        let (full, _) = linalg::embed_operator(&self.layout.dims(), targets, op, &out_dims);
        Ok((&full * &self.entries * full.adjoint(), layout))
    }

    /// Convex combination of states on one layout.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| QfbError::InvalidParameter("empty mixture".into()))?.1;
        let mut m = CMatrix::zeros(first.dim(), first.dim());
        let mut total = 0.0;
        for (w, s) in parts {
            if s.layout.dims() != first.layout.dims() {
                return Err(QfbError::DimensionMismatch("mixture layouts differ".into()));
            }
            m += s.matrix() * c64(*w, 0.0);
            total += w;
        }
        if (total - 1.0).abs() > tol::TRACE {
            return Err(QfbError::BadTrace(total));
        }
        Ok(Self::from_parts(first.layout.clone(), m))
    }
}

impl HermitianMatrix for DensityMatrix {
    fn layout(&self) -> &SystemLayout {
        &self.layout
    }
    fn matrix(&self) -> &CMatrix {
        &self.entries
    }
}

/// Unit vector on a labeled layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPure", into = "RawPure")]
pub struct PureState {
    layout: SystemLayout,
    amplitudes: CVector,
}

#[derive(Serialize, Deserialize)]
struct RawPure {
    layout: SystemLayout,
    #[serde(with = "serde_util::vector")]
    amplitudes: CVector,
}

impl TryFrom<RawPure> for PureState {
    type Error = QfbError;
    fn try_from(raw: RawPure) -> Result<Self> {
        PureState::new(raw.layout, raw.amplitudes)
    }
}

impl From<PureState> for RawPure {
    fn from(p: PureState) -> Self {
        RawPure { layout: p.layout, amplitudes: p.amplitudes }
    }
}

impl PureState {
    pub fn new(layout: SystemLayout, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(QfbError::DimensionMismatch(format!(
                "vector length {} vs layout dimension {}",
                amplitudes.len(),
                layout.dim()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > tol::TRACE {
            return Err(QfbError::BadNorm(norm));
        }
        Ok(Self { layout, amplitudes })
    }

    pub(crate) fn from_parts(layout: SystemLayout, amplitudes: CVector) -> Self {
        debug_assert_eq!(layout.dim(), amplitudes.len());
        Self { layout, amplitudes }
    }

    pub fn basis(layout: SystemLayout, index: usize) -> Result<Self> {
        let d = layout.dim();
        if index >= d {
            return Err(QfbError::InvalidParameter(format!("basis index {index} >= {d}")));
        }
        let mut v = CVector::zeros(d);
        v[index] = c64(1.0, 0.0);
        Ok(Self { layout, amplitudes: v })
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::from_parts(self.layout.clone(), m)
    }

    /// Reduced state on `keep`, factors kept in layout order.
    pub fn reduce_to<S: AsRef<str>>(&self, keep: &[S]) -> Result<DensityMatrix> {
        let pos = self.layout.positions(keep)?;
        let m = linalg::reduced_from_vec(&self.amplitudes, &self.layout.dims(), &pos);
        Ok(DensityMatrix::from_parts(self.layout.select(&pos), m))
    }
}

/// Hermitian operator on a labeled layout (a Hamiltonian or a gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOperator", into = "RawOperator")]
pub struct HermitianObservable {
    layout: SystemLayout,
    entries: CMatrix,
}

impl TryFrom<RawOperator> for HermitianObservable {
    type Error = QfbError;
    fn try_from(raw: RawOperator) -> Result<Self> {
        let m = serde_util::matrix_from_raw(&raw.entries).map_err(QfbError::Serde)?;
        HermitianObservable::new(raw.layout, m)
    }
}

impl From<HermitianObservable> for RawOperator {
    fn from(h: HermitianObservable) -> Self {
        RawOperator { entries: serde_util::matrix_to_raw(&h.entries), layout: h.layout }
    }
}

impl HermitianObservable {
    pub fn new(layout: SystemLayout, entries: CMatrix) -> Result<Self> {
        check_shape(&layout, &entries)?;
        let dev = linalg::hermitian_deviation(&entries);
        if dev > tol::HERM {
            return Err(QfbError::NotHermitian(dev));
        }
        Ok(Self { layout, entries })
    }

    pub(crate) fn from_parts(layout: SystemLayout, entries: CMatrix) -> Self {
        Self { layout, entries }
    }

    pub fn zero(layout: SystemLayout) -> Self {
        let d = layout.dim();
        Self { layout, entries: CMatrix::zeros(d, d) }
    }

    pub fn identity(layout: SystemLayout) -> Self {
        let d = layout.dim();
        Self { layout, entries: linalg::identity(d) }
    }

    pub fn diagonal(layout: SystemLayout, values: &[f64]) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(QfbError::DimensionMismatch("diagonal length".into()));
        }
        let diag = CVector::from_iterator(values.len(), values.iter().map(|&v| c64(v, 0.0)));
        Ok(Self { layout, entries: CMatrix::from_diagonal(&diag) })
    }

    /// Photon-number operator `diag(0, 1, ..., dim-1)`.
    pub fn number_operator(label: &str, dim: usize) -> Result<Self> {
        let values: Vec<f64> = (0..dim).map(|n| n as f64).collect();
        Self::diagonal(SystemLayout::single(label, dim)?, &values)
    }

    pub fn layout(&self) -> &SystemLayout {
        &self.layout
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.entries
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(linalg::eigvalsh(&self.entries)?.last().copied().unwrap_or(0.0))
    }
}

impl HermitianMatrix for HermitianObservable {
    fn layout(&self) -> &SystemLayout {
        &self.layout
    }
    fn matrix(&self) -> &CMatrix {
        &self.entries
    }
}

/// Kronecker product of two states on disjoint labels.
pub trait Tensor: Sized {
    fn tensor(&self, other: &Self) -> Result<Self>;
}

impl Tensor for DensityMatrix {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Self::from_parts(layout, linalg::kron(&self.entries, &other.entries)))
    }
}

impl Tensor for PureState {
    fn tensor(&self, other: &Self) -> Result<Self> {
        let layout = self.layout.concat(&other.layout)?;
        Ok(Self::from_parts(layout, self.amplitudes.kronecker(&other.amplitudes)))
    }
}

pub fn tensor<T: Tensor>(a: &T, b: &T) -> Result<T> {
    a.tensor(b)
}

/// Traces out the `discard` factors.
pub fn partial_trace<S: AsRef<str>>(rho: &DensityMatrix, discard: &[S]) -> Result<DensityMatrix> {
    let disc = rho.layout.positions(discard)?;
    if disc.len() >= rho.layout.len() && !rho.layout.is_empty() {
        return Err(QfbError::InvalidParameter("cannot discard every factor".into()));
    }
    let keep: Vec<usize> = (0..rho.layout.len()).filter(|k| !disc.contains(k)).collect();
    let m = linalg::partial_trace_keep(&rho.entries, &rho.layout.dims(), &keep);
    Ok(DensityMatrix::from_parts(rho.layout.select(&keep), m))
}

/// Eigenvalues (descending) and unitary eigenvector matrix.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn eigh<H: HermitianMatrix>(m: &H) -> Result<Eigh> {
    eigh_matrix(m.matrix())
}

/// Hermitian eigendecomposition of a raw matrix, rejecting inputs that are
/// non-Hermitian beyond `tol::HERM`.
pub fn eigh_matrix(m: &CMatrix) -> Result<Eigh> {
    let dev = linalg::hermitian_deviation(m);
    if dev > tol::HERM {
        return Err(QfbError::NotHermitian(dev));
    }
    let (values, vectors) = linalg::eigh_sorted(m)?;
    Ok(Eigh { values, vectors })
}

/// `-Σ λ log₂ λ` with eigenvalues in `[-PSD, CLIP]` treated as zero.
pub fn entropy_from_spectrum(values: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &l in values {
        if l < -tol::PSD {
            return Err(QfbError::NotPositive(l));
        }
        if l > tol::CLIP {
            s -= l * l.log2();
        }
    }
    Ok(s.max(0.0))
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    entropy_from_spectrum(&rho.eigenvalues()?)
}

pub(crate) fn matrix_entropy(m: &CMatrix) -> Result<f64> {
    entropy_from_spectrum(&linalg::eigvalsh(m)?)
}

/// Purification `Σ √λᵢ |vᵢ⟩|i⟩` with a reference of dimension `rank(ρ)`.
pub fn purify(rho: &DensityMatrix, reference_label: &str) -> Result<PureState> {
    let rank = rho.eigenvalues()?.iter().filter(|&&l| l > tol::CLIP).count().max(1);
    purify_with_reference_dim(rho, reference_label, rank)
}

/// Purification onto a reference of fixed dimension `ref_dim ≥ rank(ρ)`;
/// eigenvectors beyond `ref_dim` must carry no weight.
pub fn purify_with_reference_dim(rho: &DensityMatrix, reference_label: &str, ref_dim: usize) -> Result<PureState> {
    if rho.layout.contains(reference_label) {
        return Err(QfbError::LabelCollision(reference_label.to_string()));
    }
    let e = eigh(rho)?;
    if let Some(&dropped) = e.values.get(ref_dim) {
        if dropped > tol::CLIP {
            return Err(QfbError::InvalidParameter(format!("reference dimension {ref_dim} below rank")));
        }
    }
    let d = rho.dim();
    let mut v = CVector::zeros(d * ref_dim);
    for (i, &l) in e.values.iter().enumerate().take(ref_dim) {
        let w = l.max(0.0).sqrt();
        if w == 0.0 {
            continue;
        }
        for a in 0..d {
            v[a * ref_dim + i] += e.vectors[(a, i)] * w;
        }
    }
    // Renormalize away clipped negative roundoff.
    let n = v.norm();
    v /= c64(n, 0.0);
    let layout = rho.layout.concat(&SystemLayout::single(reference_label, ref_dim)?)?;
    Ok(PureState::from_parts(layout, v))
}

/// `½‖ρ − σ‖₁`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.layout != sigma.layout {
        return Err(QfbError::DimensionMismatch("trace_distance layouts differ".into()));
    }
    let diff = &rho.entries - &sigma.entries;
    let vals = linalg::eigvalsh(&diff)?;
    Ok((0.5 * vals.iter().map(|l| l.abs()).sum::<f64>()).clamp(0.0, 1.0))
}

/// `Tr{Hρ}`.
pub fn expectation(rho: &DensityMatrix, h: &HermitianObservable) -> Result<f64> {
    if rho.layout.dims() != h.layout.dims() {
        return Err(QfbError::DimensionMismatch("expectation layouts differ".into()));
    }
    let v: C64 = (h.matrix() * rho.matrix()).trace();
    Ok(v.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qubit(label: &str) -> SystemLayout {
        SystemLayout::single(label, 2).unwrap()
    }

    fn bell() -> PureState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = CVector::from_vec(vec![c64(s, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(s, 0.0)]);
        PureState::new(SystemLayout::from_pairs(&[("A", 2), ("B", 2)]).unwrap(), v).unwrap()
    }

    #[test]
    fn layout_rejects_duplicates_and_zero_dims() {
        assert!(matches!(SystemLayout::from_pairs(&[("A", 2), ("A", 3)]), Err(QfbError::LabelCollision(_))));
        assert!(SystemLayout::from_pairs(&[("A", 0)]).is_err());
        assert_eq!(SystemLayout::empty().dim(), 1);
    }

    #[test]
    fn tensor_of_maximally_mixed() {
        let a = DensityMatrix::maximally_mixed(qubit("A"));
        let b = DensityMatrix::maximally_mixed(qubit("B"));
        let ab = tensor(&a, &b).unwrap();
        let expect = linalg::identity(4) * c64(0.25, 0.0);
        assert!(linalg::max_abs_diff(ab.matrix(), &expect) < 1e-15);
        assert_eq!(ab.layout().labels().collect::<Vec<_>>(), vec!["A", "B"]);
    }

    #[test]
    fn tensor_of_basis_vectors() {
        let zero = PureState::basis(qubit("A"), 0).unwrap();
        let one = PureState::basis(qubit("B"), 1).unwrap();
        let v = tensor(&zero, &one).unwrap();
        assert_eq!(v.amplitudes()[1], c64(1.0, 0.0));
    }

    #[test]
    fn tensor_label_collision() {
        let a = DensityMatrix::maximally_mixed(qubit("A"));
        assert!(matches!(tensor(&a, &a), Err(QfbError::LabelCollision(_))));
    }

    #[test]
    fn bell_tensor_ancilla_has_unit_trace() {
        let c = DensityMatrix::basis(qubit("C"), 0).unwrap();
        let t = tensor(&bell().to_density(), &c).unwrap();
        assert!((t.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn partial_trace_of_bell_is_maximally_mixed() {
        let r = partial_trace(&bell().to_density(), &["B"]).unwrap();
        assert!(linalg::max_abs_diff(r.matrix(), &(linalg::identity(2) * c64(0.5, 0.0))) < 1e-15);
    }

    #[test]
    fn partial_trace_of_product() {
        let rho = DensityMatrix::diagonal(qubit("A"), &[0.7, 0.3]).unwrap();
        let sigma = DensityMatrix::maximally_mixed(SystemLayout::single("B", 3).unwrap());
        let r = partial_trace(&tensor(&rho, &sigma).unwrap(), &["B"]).unwrap();
        assert!(linalg::max_abs_diff(r.matrix(), rho.matrix()) < 1e-15);
    }

    #[test]
    fn partial_trace_errors() {
        let rho = bell().to_density();
        assert!(matches!(partial_trace(&rho, &["Q"]), Err(QfbError::UnknownLabel(_))));
        assert!(partial_trace(&rho, &["A", "B"]).is_err());
    }

    #[test]
    fn eigh_examples() {
        let rho = DensityMatrix::diagonal(qubit("A"), &[0.3, 0.7]).unwrap();
        let e = eigh(&rho).unwrap();
        assert!((e.values[0] - 0.7).abs() < 1e-15 && (e.values[1] - 0.3).abs() < 1e-15);
        let x = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]);
        let e = eigh(&HermitianObservable::new(qubit("A"), x).unwrap()).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
        let bad = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        assert!(matches!(eigh_matrix(&bad), Err(QfbError::NotHermitian(_))));
    }

    #[test]
    fn entropy_examples() {
        let mixed = DensityMatrix::maximally_mixed(qubit("A"));
        assert!((von_neumann_entropy(&mixed).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(von_neumann_entropy(&bell().to_density()).unwrap(), 0.0);
        let rho = DensityMatrix::diagonal(qubit("A"), &[0.75, 0.25]).unwrap();
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((von_neumann_entropy(&rho).unwrap() - h).abs() < 1e-14);
        assert!((h - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn entropy_rejects_negative_spectrum() {
        assert!(entropy_from_spectrum(&[1.1, -0.1]).is_err());
        assert_eq!(entropy_from_spectrum(&[1.0, -1e-10]).unwrap(), 0.0);
    }

    #[test]
    fn density_validation() {
        let l = qubit("A");
        let m = CMatrix::from_row_slice(2, 2, &[c64(1.2, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(-0.2, 0.0)]);
        assert!(matches!(DensityMatrix::new(l.clone(), m), Err(QfbError::NotPositive(_))));
        let m = CMatrix::from_row_slice(2, 2, &[c64(0.5, 0.0), c64(0.0, 0.0), c64(0.0, 0.0), c64(0.6, 0.0)]);
        assert!(matches!(DensityMatrix::new(l, m), Err(QfbError::BadTrace(_))));
    }

    #[test]
    fn purify_maximally_mixed_gives_maximally_entangled() {
        let p = purify(&DensityMatrix::maximally_mixed(qubit("A")), "R").unwrap();
        assert_eq!(p.layout().dims(), vec![2, 2]);
        let reduced = p.reduce_to(&["R"]).unwrap();
        assert!((von_neumann_entropy(&reduced).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn purify_pure_state_uses_rank_one_reference() {
        let rho = DensityMatrix::basis(qubit("A"), 1).unwrap();
        let p = purify(&rho, "R").unwrap();
        assert_eq!(p.layout().dims(), vec![2, 1]);
        assert!((p.amplitudes()[1].norm() - 1.0).abs() < 1e-14);
        assert!(matches!(purify(&rho, "A"), Err(QfbError::LabelCollision(_))));
    }

    #[test]
    fn trace_distance_examples() {
        let zero = DensityMatrix::basis(qubit("A"), 0).unwrap();
        let one = DensityMatrix::basis(qubit("A"), 1).unwrap();
        let mixed = DensityMatrix::maximally_mixed(qubit("A"));
        assert_eq!(trace_distance(&zero, &zero).unwrap(), 0.0);
        assert!((trace_distance(&zero, &one).unwrap() - 1.0).abs() < 1e-14);
        assert!((trace_distance(&mixed, &zero).unwrap() - 0.5).abs() < 1e-14);
        let other = DensityMatrix::basis(qubit("B"), 0).unwrap();
        assert!(trace_distance(&zero, &other).is_err());
    }

    #[test]
    fn expectation_examples() {
        let z = HermitianObservable::diagonal(qubit("A"), &[1.0, -1.0]).unwrap();
        assert!(expectation(&DensityMatrix::maximally_mixed(qubit("A")), &z).unwrap().abs() < 1e-15);
        let n = HermitianObservable::number_operator("A", 2).unwrap();
        assert!((expectation(&DensityMatrix::basis(qubit("A"), 1).unwrap(), &n).unwrap() - 1.0).abs() < 1e-15);
        let thermal = DensityMatrix::diagonal(qubit("A"), &[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((expectation(&thermal, &n).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let wrong = HermitianObservable::number_operator("A", 3).unwrap();
        assert!(expectation(&thermal, &wrong).is_err());
    }

    #[test]
    fn layout_replace_keeps_order() {
        let l = SystemLayout::from_pairs(&[("A", 2), ("B", 3), ("C", 4)]).unwrap();
        let r = l.replaced(&[1], &[("X".into(), 5), ("Y".into(), 6)]).unwrap();
        assert_eq!(r.labels().collect::<Vec<_>>(), vec!["A", "X", "Y", "C"]);
    }
}
