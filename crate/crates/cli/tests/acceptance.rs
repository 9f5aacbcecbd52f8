//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p qfb-cli --test acceptance -- --nocapture` to see the
//! table. Criteria run sequentially so runtimes are measured in isolation.

use std::time::{Duration, Instant};

use qfb_core::linalg::{self, c64};
use qfb_core::protocol::{
    noiseless_qubit_spec, random_spec_with, run_mixture_simulation, run_purified, RandomSpecParams, RunOptions,
};
use qfb_core::random::{haar_unitary, random_density, rng_from_seed, split_seed};
use qfb_core::verify::mixture_marginal_deviation;
use qfb_core::*;
use rand::Rng;
use serde_json::Value;

struct Outcome {
    ok: bool,
    detail: String,
}

fn cli(args: &[&str]) -> (i32, Value) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("qfb").chain(args.iter().copied());
    let code = qfb_cli::run(argv, &mut out, &mut err);
    let value = serde_json::from_slice(&out).unwrap_or(Value::Null);
    (code, value)
}

fn bound_value(args: &[&str]) -> f64 {
    let mut full = vec!["bound"];
    full.extend_from_slice(args);
    let (code, v) = cli(&full);
    assert_eq!(code, 0, "bound {args:?} exited {code}");
    v["value_bits"].as_f64().expect("value_bits")
}

fn erasure_bounds() -> Outcome {
    let mut worst: f64 = 0.0;
    for (d, p, expected) in [("2", "0.25", 0.75), ("4", "0.5", 1.0)] {
        worst = worst.max((bound_value(&["--named", "erasure", "--d", d, "--p", p]) - expected).abs());
    }
    for d in [2usize, 4] {
        for k in 0..=10 {
            let p = k as f64 / 10.0;
            let v = bound_value(&["--named", "erasure", "--d", &d.to_string(), "--p", &p.to_string()]);
            worst = worst.max((v - (1.0 - p) * (d as f64).log2()).abs());
        }
    }
    Outcome { ok: worst <= 1e-4, detail: format!("max deviation {worst:.2e}") }
}

fn noiseless_qudits() -> Outcome {
    let worst = [2usize, 3, 4, 8]
        .iter()
        .map(|&d| (bound_value(&["--named", "identity", "--d", &d.to_string()]) - (d as f64).log2()).abs())
        .fold(0.0, f64::max);
    Outcome { ok: worst <= 1e-4, detail: format!("max deviation {worst:.2e}") }
}

fn pure_loss() -> Outcome {
    let target = g_function(0.8).unwrap();
    let values: Vec<f64> = ["10", "15", "20"]
        .iter()
        .map(|c| bound_value(&["--named", "pure_loss", "--eta", "0.8", "--ns", "1", "--cutoff", c]))
        .collect();
    let monotone = values.windows(2).all(|w| w[1] >= w[0] && w[1] <= target + 1e-6);
    let last = (values[2] - target).abs();
    Outcome {
        ok: monotone && last <= 1e-2,
        detail: format!("cutoffs 10/15/20: {:.6} {:.6} {:.6}, g(0.8) = {target:.6}", values[0], values[1], values[2]),
    }
}

fn verify_report(args: &[&str]) -> (i32, Vec<Value>) {
    let mut full = vec!["verify"];
    full.extend_from_slice(args);
    let dir = std::env::temp_dir();
    full.extend_from_slice(&["--replay-dir", dir.to_str().unwrap()]);
    let (code, v) = cli(&full);
    (code, v["results"].as_array().cloned().unwrap_or_default())
}

fn summarize(results: &[Value]) -> (bool, String) {
    let mut ok = !results.is_empty();
    let mut parts = Vec::new();
    for r in results {
        let worst = r["worst_margin"].as_f64().unwrap();
        ok &= r["violations"] == 0 && worst >= -1e-7;
        parts.push(format!("{} {}x worst {worst:+.1e}", r["name"].as_str().unwrap(), r["trials"]));
    }
    (ok, parts.join(", "))
}

fn inequality_fleets() -> Outcome {
    let (code, results) = verify_report(&["all", "--trials", "500", "--seed", "42"]);
    let (ok, detail) = summarize(&results);
    Outcome { ok: ok && code == 0 && results.len() == 6, detail }
}

fn single_channel_chain() -> Outcome {
    let (code, results) = verify_report(&["thm1", "--protocols", "50", "--seed", "42"]);
    let (ok, detail) = summarize(&results);
    let spec = noiseless_qubit_spec();
    let trace = run_purified(&spec, &RunOptions::default()).unwrap();
    let ec = EnergyConstraint::new(spec.hamiltonian.clone(), spec.energy_budget).unwrap();
    let bound = max_output_entropy(&spec.channel.flattened(), &ec).unwrap();
    let links = qfb_core::verify::single_channel_links(&trace, &bound).unwrap();
    let e = links.iter().find(|l| l.name.starts_with("e:")).expect("rate link");
    let tight = (e.lhs - 1.0).abs() <= 1e-7 && (e.rhs - 1.0).abs() <= 1e-7;
    Outcome { ok: ok && code == 0 && tight, detail: format!("{detail}; noiseless qubit {:.9} <= {:.9}", e.lhs, e.rhs) }
}

fn mixture_chain() -> Outcome {
    let (code, results) = verify_report(&["thm2", "--protocols", "20", "--seed", "42"]);
    let (ok, detail) = summarize(&results);
    let erasure = ChannelSpec::Mixture(make_erasure(2, 0.25).unwrap());
    let opts = RunOptions { keep_states: true, ..Default::default() };
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let mut rng = rng_from_seed(split_seed(42, k));
        let params = RandomSpecParams {
            n: rng.random_range(1..=2),
            m: if rng.random_bool(0.5) { 2 } else { 4 },
            channel: Some(erasure.clone()),
            ..Default::default()
        };
        let spec = random_spec_with(&mut rng, &params).unwrap();
        let mix = run_mixture_simulation(&spec, &opts).unwrap();
        let flat = run_purified(&spec, &opts).unwrap();
        worst = worst.max(mixture_marginal_deviation(&mix, &flat).unwrap());
    }
    Outcome { ok: ok && code == 0 && worst <= 1e-8, detail: format!("{detail}; Z-marginal deviation {worst:.1e}") }
}

fn core_properties() -> Outcome {
    let layout = |d: usize| SystemLayout::single("A", d).unwrap();
    let mut grad_worst: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = rng_from_seed(split_seed(7, k));
        let (din, dout) = (rng.random_range(2..=4), rng.random_range(2..=4));
        let ch = qfb_core::channel::random_channel_with(&mut rng, din, dout, din.div_ceil(dout) + 1).unwrap();
        let rho = random_density(&mut rng, layout(din), din).unwrap();
        let sigma = random_density(&mut rng, layout(din), din).unwrap();
        let delta = sigma.matrix() - rho.matrix();
        let g = qfb_core::bounds::output_entropy_gradient(&ch, &rho).unwrap();
        let analytic = linalg::trace(&(&g * &delta)).re;
        let at = |s: f64| {
            let m = rho.matrix() + &delta * c64(s, 0.0);
            von_neumann_entropy(&DensityMatrix::new(layout(dout), ch.apply_matrix(&m)).unwrap()).unwrap()
        };
        let t = 1e-5;
        grad_worst = grad_worst.max((analytic - (at(t) - at(-t)) / (2.0 * t)).abs());
    }
    let (mut purif_worst, mut unitary_worst): (f64, f64) = (0.0, 0.0);
    for k in 0..200u64 {
        let mut rng = rng_from_seed(split_seed(8, k));
        let d = rng.random_range(1..=4);
        let rank = rng.random_range(1..=d);
        let rho = random_density(&mut rng, layout(d), rank).unwrap();
        let back = purify(&rho, "R").unwrap().reduce_to(&["A"]).unwrap();
        purif_worst = purif_worst.max(linalg::max_abs_diff(back.matrix(), rho.matrix()));
        let u = haar_unitary(&mut rng, d);
        let rotated = DensityMatrix::new(layout(d), &u * rho.matrix() * u.adjoint()).unwrap();
        let diff = von_neumann_entropy(&rho).unwrap() - von_neumann_entropy(&rotated).unwrap();
        unitary_worst = unitary_worst.max(diff.abs());
    }
    Outcome {
        ok: grad_worst <= 1e-4 && purif_worst <= 1e-10 && unitary_worst <= 1e-8,
        detail: format!("gradient {grad_worst:.1e}, purification {purif_worst:.1e}, unitary {unitary_worst:.1e}"),
    }
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome, u64);
    let criteria: [Criterion; 7] = [
        ("1 erasure bound", erasure_bounds, 10),
        ("2 noiseless qudit", noiseless_qudits, 10),
        ("3 pure loss", pure_loss, 120),
        ("4 lemma fleets", inequality_fleets, 300),
        ("5 single-channel chain", single_channel_chain, 300),
        ("6 mixture chain", mixture_chain, 180),
        ("7 numerical core", core_properties, 60),
    ];
    let mut failed = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let ok = outcome.ok && elapsed < Duration::from_secs(limit);
        println!(
            "{} criterion {name}: {} [{:.2}s of {limit}s]",
            if ok { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
