//! Reference values frozen from independent computations: thermal-state
//! series, Bloch-sphere closed forms, and hand-built mixtures.

use qfb_core::linalg::{c64, CMatrix};
use qfb_core::*;

/// `−Σ p_n log₂ p_n` over the geometric photon distribution.
fn thermal_entropy_series(x: f64) -> f64 {
    let ratio = x / (1.0 + x);
    (0..600).map(|n| ratio.powi(n) / (1.0 + x)).filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

fn bloch_state(x: f64, y: f64, z: f64) -> DensityMatrix {
    let m = CMatrix::from_row_slice(
        2,
        2,
        &[c64((1.0 + z) / 2.0, 0.0), c64(x / 2.0, -y / 2.0), c64(x / 2.0, y / 2.0), c64((1.0 - z) / 2.0, 0.0)],
    );
    DensityMatrix::new(SystemLayout::single("A", 2).unwrap(), m).unwrap()
}

#[test]
fn binary_entropy_frozen() {
    // Series value 0.8112781244591328.
    assert!((binary_entropy(0.25) - 0.8112781244591328).abs() < 1e-12);
    assert_eq!(binary_entropy(0.0), 0.0);
    assert_eq!(binary_entropy(1.0), 0.0);
}

#[test]
fn g_matches_thermal_series() {
    assert!((thermal_entropy_series(0.8) - 1.7839369077088005).abs() < 1e-12);
    for x in [0.1, 0.8, 1.0, 3.5] {
        assert!((g_function(x).unwrap() - thermal_entropy_series(x)).abs() < 1e-9, "x = {x}");
    }
}

#[test]
fn depolarizing_bloch_grid() {
    // Output eigenvalues (1 ± (1−q)|r|)/2.
    let q = 0.5;
    let ch = make_named(&NamedChannel::Depolarizing { d: 2, q }).unwrap();
    let frozen = [(0.0, 1.0), (0.5, 0.954434002924965), (1.0, 0.8112781244591328)];
    for (r, s) in frozen {
        for (ux, uy, uz) in [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0), (0.6, 0.0, 0.8)] {
            let rho = bloch_state(r * ux, r * uy, r * uz);
            let out = von_neumann_entropy(&ch.apply(&rho, "A").unwrap()).unwrap();
            assert!((out - s).abs() < 1e-12, "r = {r}");
        }
    }
    let bound = max_output_entropy(&ch, &EnergyConstraint::unconstrained(2)).unwrap();
    assert!((bound.value - 1.0).abs() < 1e-6);
}

#[test]
fn erasure_grid_matches_closed_form() {
    for d in [2usize, 3] {
        for k in 0..=10 {
            let p = k as f64 / 10.0;
            let mix = make_erasure(d, p).unwrap();
            let b = max_avg_output_entropy(&mix, &EnergyConstraint::unconstrained(d)).unwrap();
            let expected = (1.0 - p) * (d as f64).log2();
            assert!((b.value - expected).abs() < 1e-4, "d = {d}, p = {p}: {}", b.value);
        }
    }
}

#[test]
fn identity_gives_log_dimension() {
    for d in [2usize, 3, 4, 8] {
        let ch = make_named(&NamedChannel::Identity { d }).unwrap();
        let b = max_output_entropy(&ch, &EnergyConstraint::unconstrained(d)).unwrap();
        assert!((b.value - (d as f64).log2()).abs() < 1e-4);
    }
}

#[test]
fn flattened_mixture_decomposes() {
    // Flattening scales each Kraus set by √p_z, so the output is the
    // average Σ p_z N^z(ρ).
    let a = make_named(&NamedChannel::AmplitudeDamping { gamma: 0.3 }).unwrap();
    let b = make_named(&NamedChannel::Dephasing { p: 0.2 }).unwrap();
    let mix = ChannelMixture::new(vec![(0.4, a.clone()), (0.6, b.clone())]).unwrap();
    let rho = bloch_state(0.3, -0.2, 0.5);
    let flat = mix.flatten().apply_matrix(rho.matrix());
    let expected = a.apply_matrix(rho.matrix()) * c64(0.4, 0.0) + b.apply_matrix(rho.matrix()) * c64(0.6, 0.0);
    assert!(qfb_core::linalg::max_abs_diff(&flat, &expected) < 1e-12);
    assert_eq!(mix.flatten().kraus().len(), 4);
}

#[test]
fn rate_bound_frozen() {
    assert!((feedback_rate_bound(10, 0.0, 1.0).unwrap() - 10.0).abs() < 1e-12);
    let v = feedback_rate_bound(5, 0.25, 0.75).unwrap();
    assert!((v - (3.75 + 0.8112781244591328) / 0.75).abs() < 1e-12);
}
