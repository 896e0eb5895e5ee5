//! Noiseless original-memory accuracy on 20-way 5-shot problems for a range
//! of generator spreads, to pick `within_class_sd` for a precision.
//!
//! cargo run --release --example calibrate -- binary 0.08 0.085 0.09

use gkv_core::harness::{baseline_accuracy, ExperimentSpec};
use gkv_core::{generate_bank, GeneratorParams, Precision};

fn main() {
    let mut args = std::env::args().skip(1);
    let precision: Precision = args
        .next()
        .unwrap_or_else(|| "real".into())
        .parse()
        .expect("precision: real, bipolar or binary");
    let spreads: Vec<f64> = args.map(|s| s.parse().expect("spread")).collect();
    let spreads = if spreads.is_empty() {
        vec![GeneratorParams::calibrated_spread(precision)]
    } else {
        spreads
    };
    for spread in spreads {
        let params = GeneratorParams {
            within_class_sd: spread,
            ..GeneratorParams::omniglot_shaped(1)
        };
        let bank = generate_bank(&params).expect("bank");
        let spec = ExperimentSpec {
            precision,
            episodes: 300,
            master_seed: 11,
            ..ExperimentSpec::default()
        };
        let stats = baseline_accuracy(&bank, &spec).expect("baseline");
        println!(
            "{precision} spread {spread}: {:.4} +- {:.4}",
            stats.mean, stats.std_error
        );
    }
}
