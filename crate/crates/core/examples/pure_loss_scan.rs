//! Prints the energy-constrained output-entropy bound of a truncated
//! pure-loss channel across Fock cutoffs.

use qfb_core::{g_function, make_named, max_output_entropy, EnergyConstraint, NamedChannel};

fn main() {
    let eta = 0.8;
    let ns = 1.0;
    println!("target g(eta*ns) = {:.6}", g_function(eta * ns).unwrap());
    for cutoff in [10, 15, 20] {
        let t = std::time::Instant::now();
        let ch = make_named(&NamedChannel::TruncatedPureLoss { eta, cutoff }).unwrap();
        let ec = EnergyConstraint::photon_number(cutoff + 1, ns).unwrap();
        let r = max_output_entropy(&ch, &ec).unwrap();
        println!(
            "cutoff {cutoff:>3}: {:.6} bits, {} iterations, gap {:.2e}, tail {:.2e}, {:.2?}",
            r.value,
            r.iterations,
            r.duality_gap_estimate,
            r.tail_population(),
            t.elapsed()
        );
    }
}
