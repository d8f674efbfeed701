//! Generates the synthetic benchmark and prints class balance and bout lengths.
//!
//! ```text
//! cargo run --release --example synthetic_data -- [seed]
//! ```

use fedsemi::data::{synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map_or(Ok(0), |s| s.parse())?;
    let cfg = SynthConfig { seed, ..Default::default() };
    let (train, test) = synth_generate(&cfg)?;
    for (name, ds) in [("train", &train), ("test", &test)] {
        let bouts = 1 + ds.labels.windows(2).filter(|w| w[0] != w[1]).count();
        println!(
            "{name}: {} samples x {} features, class histogram {:?}, mean bout {:.0} samples",
            ds.len(),
            ds.num_features(),
            ds.class_histogram(),
            ds.len() as f64 / bouts as f64
        );
    }
    let t = cfg.templates();
    println!("class 0 amplitudes: {:.2?}", t.amplitude[0]);
    Ok(())
}
