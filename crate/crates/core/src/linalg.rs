//! Dense complex linear algebra on tensor-product index spaces.
//!
//! Composite indices are row-major: the first factor is the most
//! significant digit, matching the Kronecker product convention.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{QfbError, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[inline]
pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Largest entrywise modulus of `m - m†`.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c64(0.5, 0.0)
}

/// Largest entrywise modulus of `V†V - I`.
pub fn isometry_defect(v: &CMatrix) -> f64 {
    let g = v.adjoint() * v;
    max_abs_diff(&g, &identity(v.ncols()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Hermitian eigendecomposition with eigenvalues in descending order.
///
/// Only the Hermitian part of `m` is used; callers are responsible for
/// rejecting inputs that are far from Hermitian.
pub fn eigh_sorted(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), CMatrix::zeros(0, 0)));
    }
    if n == 1 {
        return Ok((vec![m[(0, 0)].re], identity(1)));
    }
    let eig = hermitian_part(m).try_symmetric_eigen(f64::EPSILON, 0).ok_or(QfbError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Eigenvalues only, descending.
pub fn eigvalsh(m: &CMatrix) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n <= 1 {
        return Ok(eigh_sorted(m)?.0);
    }
    let mut vals: Vec<f64> = hermitian_part(m)
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(QfbError::EigenFailure)?
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// `U diag(f(λ)) U†` for a Hermitian matrix.
pub fn spectral_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> Result<CMatrix> {
    let (vals, vecs) = eigh_sorted(m)?;
    Ok(from_spectrum(&vals.iter().map(|&l| f(l)).collect::<Vec<_>>(), &vecs))
}

pub fn from_spectrum(values: &[f64], vectors: &CMatrix) -> CMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &l) in values.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= l;
        }
    }
    scaled * vectors.adjoint()
}

/// Principal square root of a PSD matrix; tiny negative eigenvalues are
/// clamped to zero.
pub fn psd_sqrt(m: &CMatrix) -> Result<CMatrix> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

pub fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// For every composite index, the flat index within the `targets`
/// factors (in the listed order) and within the remaining factors (in
/// layout order). Returned as a table `table[rest * dim_targets + t] =
/// full index`.
pub fn split_table(dims: &[usize], targets: &[usize]) -> (Vec<usize>, usize, usize) {
    let st = strides(dims);
    let rest: Vec<usize> = (0..dims.len()).filter(|k| !targets.contains(k)).collect();
    let dim_t: usize = targets.iter().map(|&k| dims[k]).product();
    let dim_r: usize = rest.iter().map(|&k| dims[k]).product();
    let mut table = vec![0; dim_t * dim_r];
    let mut digits = vec![0usize; dims.len()];
    for r in 0..dim_r {
        let mut rem = r;
        for &k in rest.iter().rev() {
            digits[k] = rem % dims[k];
            rem /= dims[k];
        }
        for t in 0..dim_t {
            let mut rem = t;
            for &k in targets.iter().rev() {
                digits[k] = rem % dims[k];
                rem /= dims[k];
            }
            table[r * dim_t + t] = digits.iter().zip(&st).map(|(d, s)| d * s).sum();
        }
    }
    (table, dim_t, dim_r)
}

/// Output dims and the position of the inserted block when the
/// `targets` factors are replaced by `out_dims`, inserted where the first
/// target used to be.
pub fn replaced_dims(dims: &[usize], targets: &[usize], out_dims: &[usize]) -> (Vec<usize>, usize) {
    let first = targets.iter().copied().min().unwrap_or(dims.len());
    let pos = (0..first).filter(|k| !targets.contains(k)).count();
    let rest: Vec<usize> = (0..dims.len()).filter(|k| !targets.contains(k)).map(|k| dims[k]).collect();
    let mut new_dims = rest[..pos].to_vec();
    new_dims.extend_from_slice(out_dims);
    new_dims.extend_from_slice(&rest[pos..]);
    (new_dims, pos)
}

/// Applies `op` (dim_out x dim_in) to the `targets` factors of a vector.
pub fn apply_local_vec(
    v: &CVector,
    dims: &[usize],
    targets: &[usize],
    op: &CMatrix,
    out_dims: &[usize],
) -> (CVector, Vec<usize>) {
    let (in_table, dim_t, dim_r) = split_table(dims, targets);
    let (new_dims, pos) = replaced_dims(dims, targets, out_dims);
    let out_targets: Vec<usize> = (pos..pos + out_dims.len()).collect();
    let (out_table, dim_o, _) = split_table(&new_dims, &out_targets);
    debug_assert_eq!(op.ncols(), dim_t);
    debug_assert_eq!(op.nrows(), dim_o);
    let mut out = CVector::zeros(dim_o * dim_r);
    for r in 0..dim_r {
        for t in 0..dim_t {
            let x = v[in_table[r * dim_t + t]];
            if x == C64::default() {
                continue;
            }
            for o in 0..dim_o {
                out[out_table[r * dim_o + o]] += op[(o, t)] * x;
            }
        }
    }
    (out, new_dims)
}

/// The full operator `op ⊗ I` acting on the `targets` factors.
pub fn embed_operator(dims: &[usize], targets: &[usize], op: &CMatrix, out_dims: &[usize]) -> (CMatrix, Vec<usize>) {
    let (in_table, dim_t, dim_r) = split_table(dims, targets);
    let (new_dims, pos) = replaced_dims(dims, targets, out_dims);
    let out_targets: Vec<usize> = (pos..pos + out_dims.len()).collect();
    let (out_table, dim_o, _) = split_table(&new_dims, &out_targets);
    let mut full = CMatrix::zeros(dim_o * dim_r, dim_t * dim_r);
    for r in 0..dim_r {
        for t in 0..dim_t {
            for o in 0..dim_o {
                full[(out_table[r * dim_o + o], in_table[r * dim_t + t])] = op[(o, t)];
            }
        }
    }
    (full, new_dims)
}

/// Traces out every factor not listed in `keep`.
pub fn partial_trace_keep(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !keep.contains(k)).collect();
    let (table, dim_t, dim_r) = split_table(dims, &traced);
    CMatrix::from_fn(dim_r, dim_r, |a, b| (0..dim_t).map(|t| m[(table[a * dim_t + t], table[b * dim_t + t])]).sum())
}

/// Reduced density matrix of `|v⟩⟨v|` on the `keep` factors (layout order).
pub fn reduced_from_vec(v: &CVector, dims: &[usize], keep: &[usize]) -> CMatrix {
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !keep.contains(k)).collect();
    let (table, dim_t, dim_r) = split_table(dims, &traced);
    // psi[r, t]; reduced = psi psi†
    let psi = CMatrix::from_fn(dim_r, dim_t, |r, t| v[table[r * dim_t + t]]);
    &psi * psi.adjoint()
}

/// Reorders factors so that new factor `k` is old factor `order[k]`.
pub fn permute_vec(v: &CVector, dims: &[usize], order: &[usize]) -> (CVector, Vec<usize>) {
    let new_dims: Vec<usize> = order.iter().map(|&k| dims[k]).collect();
    let new_st = strides(&new_dims);
    let mut out = CVector::zeros(v.len());
    let mut digits = vec![0usize; dims.len()];
    for (idx, x) in v.iter().enumerate() {
        let mut rem = idx;
        for k in (0..dims.len()).rev() {
            digits[k] = rem % dims[k];
            rem /= dims[k];
        }
        let new_idx: usize = order.iter().zip(&new_st).map(|(&k, s)| digits[k] * s).sum();
        out[new_idx] = *x;
    }
    (out, new_dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_matches_kron_on_first_factor() {
        let op = CMatrix::from_row_slice(2, 2, &[c64(0.0, 0.0), c64(1.0, 0.0), c64(1.0, 0.0), c64(0.0, 0.0)]);
        let (full, dims) = embed_operator(&[2, 3], &[0], &op, &[2]);
        assert_eq!(dims, vec![2, 3]);
        assert!(max_abs_diff(&full, &kron(&op, &identity(3))) < 1e-15);
        let (full, _) = embed_operator(&[3, 2], &[1], &op, &[2]);
        assert!(max_abs_diff(&full, &kron(&identity(3), &op)) < 1e-15);
    }

    #[test]
    fn permute_swaps_factors() {
        // |0⟩_2 ⊗ |2⟩_3 -> |2⟩_3 ⊗ |0⟩_2
        let mut v = CVector::zeros(6);
        v[2] = c64(1.0, 0.0);
        let (w, dims) = permute_vec(&v, &[2, 3], &[1, 0]);
        assert_eq!(dims, vec![3, 2]);
        assert_eq!(w[4], c64(1.0, 0.0));
    }

    #[test]
    fn replaced_dims_inserts_at_first_target() {
        assert_eq!(replaced_dims(&[2, 3, 4], &[1], &[5, 6]), (vec![2, 5, 6, 4], 1));
        assert_eq!(replaced_dims(&[2, 3, 4], &[2, 0], &[7]), (vec![7, 3], 0));
    }

    #[test]
    fn eigh_sorted_descends() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![c64(0.2, 0.0), c64(0.5, 0.0), c64(0.3, 0.0)]));
        let (vals, vecs) = eigh_sorted(&m).unwrap();
        assert_eq!(vals, vec![0.5, 0.3, 0.2]);
        assert!(max_abs_diff(&from_spectrum(&vals, &vecs), &m) < 1e-14);
    }
}
