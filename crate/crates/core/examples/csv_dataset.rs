//! Writes a small CSV recording, loads it back and evaluates an untrained
//! classifier on it.
//!
//! ```text
//! cargo run --release --example csv_dataset -- [path.csv]
//! ```

use std::io::Write;

use fedsemi::data::{load_csv_with, synth_generate, CsvOptions, SynthConfig};
use fedsemi::eval::windowed_accuracy;
use fedsemi::models::{Classifier, ClassifierSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let (_, test) = synth_generate(&SynthConfig { test_len: 10_000, ..Default::default() })?;
            let path = std::env::temp_dir().join("fedsemi-example.csv");
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let header: Vec<String> = (0..test.num_features()).map(|f| format!("f{f}")).collect();
            writeln!(w, "{},label", header.join(","))?;
            for r in 0..test.len() {
                let row: Vec<String> = test.features.row(r).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{}", row.join(","), test.labels[r])?;
            }
            path
        }
    };
    let ds = load_csv_with(&path, &CsvOptions { num_classes: None, ..Default::default() })?;
    println!(
        "{}: {} samples, {} features, {} classes",
        path.display(),
        ds.len(),
        ds.num_features(),
        ds.num_classes
    );
    let cls = Classifier::build(ClassifierSpec::softmax(ds.num_features(), ds.num_classes), 0)?;
    let acc = windowed_accuracy(None, &cls, &ds, 5000)?;
    println!("untrained softmax: accuracy {:.4} over {} windows", acc.accuracy, acc.windows);
    Ok(())
}
