//! Per-window inference cost of a SEMI pipeline against a supervised LSTM.
//!
//! ```text
//! cargo run --release --example latency_bench -- [features] [classes]
//! ```

use fedsemi::bench::{compare_latency, mac_count, time_pipeline, Pipeline, DEFAULT_REPETITIONS, DEFAULT_WINDOW};
use fedsemi::data::repr_dim;
use fedsemi::models::{AeVariant, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec};
use fedsemi::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let nf: usize = args.next().map_or(Ok(52), |s| s.parse())?;
    let classes: usize = args.next().map_or(Ok(12), |s| s.parse())?;
    let d = repr_dim(nf, 0.5)?;

    let semi = Pipeline {
        name: "SEMI".into(),
        encoder: Some(Autoencoder::build(AutoencoderSpec::new(AeVariant::Lstm, nf, d), 0)?),
        classifier: Classifier::build(ClassifierSpec::softmax(d, classes), 0)?,
    };
    let sup = Pipeline {
        name: "SUPERVISED".into(),
        encoder: None,
        classifier: Classifier::build(ClassifierSpec::lstm(nf, classes), 0)?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 200 * DEFAULT_WINDOW;
    let data = Tensor::new(vec![n, nf], (0..n * nf).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut reports = Vec::new();
    for p in [&semi, &sup] {
        println!("{}: {} MACs per window", p.name, mac_count(&p.layers(), DEFAULT_WINDOW)?);
        let r = time_pipeline(p, &data, DEFAULT_WINDOW, DEFAULT_REPETITIONS)?;
        let s = r.summary();
        println!(
            "  {} windows: mean {:.1}us, median {:.1}us, p95 {:.1}us, {} parameters, {} bytes",
            s.windows, s.mean_us, s.median_us, s.p95_us, s.parameter_count, s.serialized_bytes
        );
        reports.push(r);
    }
    let mw = compare_latency(&reports[0], &reports[1])?;
    println!("Mann-Whitney U {:.0}, p {:.3e}, faster {:?}", mw.u, mw.p_value, mw.faster);
    Ok(())
}
