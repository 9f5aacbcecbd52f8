use qfb_core::protocol::*;
use qfb_core::verify::{mixture_marginal_deviation, single_channel_links};
use qfb_core::*;

fn erasure_spec(seed: u64, n: usize, m: usize) -> ProtocolSpec {
    let params = RandomSpecParams {
        n,
        m,
        channel: Some(ChannelSpec::Mixture(make_erasure(2, 0.25).unwrap())),
        ..Default::default()
    };
    random_spec(&params, seed).unwrap()
}

fn with_states() -> RunOptions {
    RunOptions { keep_states: true, ..Default::default() }
}

#[test]
fn mixture_marginal_matches_flattened_channel() {
    for seed in 0..6 {
        let spec = erasure_spec(seed, 1 + (seed as usize % 2), 2);
        let mix = run_mixture_simulation(&spec, &with_states()).unwrap();
        let flat = run_purified(&spec, &with_states()).unwrap();
        let dev = mixture_marginal_deviation(&mix, &flat).unwrap();
        assert!(dev <= 1e-8, "seed {seed}: {dev}");
    }
}

#[test]
fn round_outputs_stay_below_bound() {
    for seed in 0..8 {
        let spec = random_spec(&RandomSpecParams { n: 2, m: 4, ..Default::default() }, seed).unwrap();
        let trace = run_purified(&spec, &RunOptions::default()).unwrap();
        let ec = EnergyConstraint::new(spec.hamiltonian.clone(), spec.energy_budget).unwrap();
        let bound = max_output_entropy(&spec.channel.flattened(), &ec).unwrap();
        for r in &trace.rounds {
            assert!(r.channel_output_entropy <= bound.value + bound.duality_gap_estimate + 1e-7);
        }
        assert!(single_channel_links(&trace, &bound).unwrap().iter().all(|l| l.margin() >= -1e-7));
    }
}

#[test]
fn purified_and_original_agree_on_statistics() {
    for seed in 0..4 {
        let spec = random_spec(&RandomSpecParams::default(), seed).unwrap();
        let a = run_original(&spec, &RunOptions::default()).unwrap();
        let b = run_purified(&spec, &RunOptions::default()).unwrap();
        assert!((a.error_probability - b.error_probability).abs() < 1e-9);
        assert!((a.average_energy - b.average_energy).abs() < 1e-9);
        assert!((a.message_information - b.message_information).abs() < 1e-9);
    }
}

#[test]
fn trace_json_roundtrip() {
    let spec = erasure_spec(4, 2, 4);
    let trace = run_mixture_simulation(&spec, &RunOptions::default()).unwrap();
    let text = serde_json::to_string(&trace).unwrap();
    let back: ProtocolTrace = serde_json::from_str(&text).unwrap();
    assert_eq!(back, trace);
    let spec_back: ProtocolSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
    assert_eq!(spec_back, spec);
}

#[test]
fn seed_determines_protocol() {
    let p = RandomSpecParams { n: 3, m: 4, ..Default::default() };
    assert_eq!(random_spec(&p, 9).unwrap(), random_spec(&p, 9).unwrap());
    assert_ne!(random_spec(&p, 9).unwrap(), random_spec(&p, 10).unwrap());
}
