use proptest::prelude::*;
use qfb_core::linalg::{self, c64};
use qfb_core::random::{haar_unitary, random_density, rng_from_seed};
use qfb_core::*;

fn layout(d: usize) -> SystemLayout {
    SystemLayout::single("A", d).unwrap()
}

fn full_rank(seed: u64, d: usize) -> DensityMatrix {
    random_density(&mut rng_from_seed(seed), layout(d), d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn gradient_matches_finite_difference(seed in any::<u64>(), din in 2usize..=3, dout in 2usize..=3) {
        let ch = random_channel(din, dout, 2, seed).unwrap();
        let rho = full_rank(seed ^ 1, din);
        let sigma = full_rank(seed ^ 2, din);
        let delta = sigma.matrix() - rho.matrix();
        let g = qfb_core::bounds::output_entropy_gradient(&ch, &rho).unwrap();
        let analytic = linalg::trace(&(&g * &delta)).re;
        let t = 1e-5;
        let at = |s: f64| {
            let m = rho.matrix() + &delta * c64(s, 0.0);
            von_neumann_entropy(&DensityMatrix::new(layout(dout), ch.apply_matrix(&m)).unwrap()).unwrap()
        };
        let numeric = (at(t) - at(-t)) / (2.0 * t);
        prop_assert!((analytic - numeric).abs() < 1e-4, "{analytic} vs {numeric}");
    }

    #[test]
    fn bound_dominates_random_inputs(seed in any::<u64>(), d in 2usize..=3) {
        let ch = random_channel(d, 2, 2, seed).unwrap();
        let b = max_output_entropy(&ch, &EnergyConstraint::unconstrained(d)).unwrap();
        let rho = random_density(&mut rng_from_seed(seed ^ 7), layout(d), 1 + (seed % d as u64) as usize).unwrap();
        let s = von_neumann_entropy(&ch.apply(&rho, "A").unwrap()).unwrap();
        prop_assert!(s <= b.value + 1e-7);
        prop_assert!(b.value <= 1.0 + 1e-9);
    }

    #[test]
    fn trace_distance_contracts(seed in any::<u64>(), d in 2usize..=4) {
        let ch = random_channel(d, 2, 3, seed).unwrap();
        let rho = random_density(&mut rng_from_seed(seed ^ 3), layout(d), 1).unwrap();
        let sigma = random_density(&mut rng_from_seed(seed ^ 4), layout(d), 2).unwrap();
        let before = trace_distance(&rho, &sigma).unwrap();
        let after = trace_distance(&ch.apply(&rho, "A").unwrap(), &ch.apply(&sigma, "A").unwrap()).unwrap();
        prop_assert!(after <= before + 1e-9);
    }

    /// Safety envelope `0 ≤ I(W;CF) + S(C|WF) ≤ log₂|W| + log₂ dim C`; not
    /// a stated bound, just a sanity range for random ensembles.
    #[test]
    fn monotone_within_envelope(seed in any::<u64>(), nw in 1usize..=3, nf in 1usize..=2, dc in 2usize..=4) {
        let mut rng = rng_from_seed(seed);
        let keys: Vec<Vec<usize>> = (0..nw).flat_map(|w| (0..nf).map(move |f| vec![w, f])).collect();
        let probs = qfb_core::random::dirichlet_uniform(&mut rng, keys.len());
        let entries = keys
            .into_iter()
            .zip(probs)
            .map(|(k, p)| {
                let rank = 1 + (seed as usize + k[0]) % dc;
                (k, p, random_density(&mut rng, SystemLayout::single("C", dc).unwrap(), rank).unwrap())
            })
            .collect();
        let ens = CQEnsemble::new(vec![("W".into(), nw), ("F".into(), nf)], entries).unwrap();
        let m = ens.monotone("W", &["F"], &["C"]).unwrap();
        prop_assert!(m >= -1e-9);
        prop_assert!(m <= (nw as f64).log2() + (dc as f64).log2() + 1e-9);
    }

    #[test]
    fn mutual_information_processing(seed in any::<u64>(), d in 2usize..=3) {
        let mut rng = rng_from_seed(seed);
        let states = (0..3)
            .map(|w| (vec![w], 1.0 / 3.0, random_density(&mut rng, layout(d), 1).unwrap()))
            .collect();
        let ens = CQEnsemble::new(vec![("W".into(), 3)], states).unwrap();
        let ch = random_channel(d, 2, 2, seed ^ 5).unwrap();
        let before = ens.mutual_information(&["W"], &["A"]).unwrap();
        let after = ens.apply_channel(&ch, "A", "B").unwrap().mutual_information(&["W"], &["B"]).unwrap();
        prop_assert!(after <= before + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn purification_roundtrip(seed in any::<u64>(), d in 1usize..=4, rank in 1usize..=4) {
        let rho = random_density(&mut rng_from_seed(seed), layout(d), rank.min(d)).unwrap();
        let psi = purify(&rho, "R").unwrap();
        let back = psi.reduce_to(&["A"]).unwrap();
        prop_assert!(linalg::max_abs_diff(back.matrix(), rho.matrix()) <= 1e-10);
    }

    #[test]
    fn entropy_unitary_invariance(seed in any::<u64>(), d in 2usize..=4, rank in 1usize..=4) {
        let mut rng = rng_from_seed(seed);
        let rho = random_density(&mut rng, layout(d), rank.min(d)).unwrap();
        let u = haar_unitary(&mut rng, d);
        let rotated = DensityMatrix::new(layout(d), &u * rho.matrix() * u.adjoint()).unwrap();
        let diff = von_neumann_entropy(&rho).unwrap() - von_neumann_entropy(&rotated).unwrap();
        prop_assert!(diff.abs() <= 1e-8);
    }

    #[test]
    fn channels_preserve_trace(seed in any::<u64>(), din in 1usize..=4, dout in 1usize..=4) {
        let env = din.div_ceil(dout);
        let ch = random_channel(din, dout, env, seed).unwrap();
        prop_assert!(ch.tp_defect() <= 1e-9);
        let rho = random_density(&mut rng_from_seed(seed ^ 9), layout(din), 1).unwrap();
        prop_assert!((ch.apply(&rho, "A").unwrap().trace() - 1.0).abs() <= 1e-9);
    }
}
