//! Seeded samplers for states, isometries and probability vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::Result;
use crate::linalg::{c64, CMatrix, CVector};
use crate::state::{DensityMatrix, PureState, SystemLayout};

pub type QfbRng = ChaCha20Rng;

pub fn rng_from_seed(seed: u64) -> QfbRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Derives an independent seed for `(seed, index)` (splitmix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64(re, im)
    })
}

/// Haar-random isometry `cols -> rows` (requires `rows >= cols`).
pub fn haar_isometry<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    assert!(rows >= cols, "isometry {cols} -> {rows} does not exist");
    let qr = ginibre(rng, rows, cols).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c64(1.0, 0.0) };
        for i in 0..rows {
            q[(i, j)] *= phase;
        }
    }
    q
}

pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CMatrix {
    haar_isometry(rng, dim, dim)
}

pub fn haar_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> CVector {
    let g = ginibre(rng, dim, 1);
    let n = g.norm();
    CVector::from_iterator(dim, g.iter().map(|z| z / n))
}

pub fn haar_pure<R: Rng + ?Sized>(rng: &mut R, layout: SystemLayout) -> PureState {
    let v = haar_vector(rng, layout.dim());
    PureState::from_parts(layout, v)
}

/// Random state of rank at most `rank`: the marginal of a Haar vector on
/// `dim x rank`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, layout: SystemLayout, rank: usize) -> Result<DensityMatrix> {
    let d = layout.dim();
    let g = ginibre(rng, d, rank.max(1));
    let m = &g * g.adjoint();
    let tr: f64 = m.diagonal().iter().map(|z| z.re).sum();
    Ok(DensityMatrix::from_parts(layout, m / c64(tr, 0.0)))
}

/// Uniform sample from the probability simplex.
pub fn dirichlet_uniform<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}
