//! Splits a training stream across clients and samples the labelled subset.
//!
//! ```text
//! cargo run --release --example partitioning -- [clients] [label_ratio]
//! ```

use fedsemi::data::{partition_iid, partition_noniid, sample_labeled_subset, synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let clients: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let label_ratio: f64 = args.next().map_or(Ok(1.0 / 16.0), |s| s.parse())?;
    let (train, _) = synth_generate(&SynthConfig::default())?;

    let iid = partition_iid(&train, clients, 10, 1)?;
    let non = partition_noniid(&train, clients, 10, 1)?;
    for (name, parts) in [("IID", &iid), ("non-IID", &non)] {
        let sizes: Vec<usize> = parts.iter().map(|p| p.n_k()).collect();
        let windows: Vec<usize> = parts.iter().map(|p| p.fragments.len()).collect();
        println!("{name}: n_k {sizes:?}");
        println!("{name}: windows per client {windows:?}");
    }

    let labelled = sample_labeled_subset(&train, label_ratio, 1)?;
    println!(
        "labelled subset at r_l = {label_ratio}: {} of {} samples, classes {:?}",
        labelled.len(),
        train.len(),
        labelled.class_histogram()
    );
    Ok(())
}
