//! Converged accuracy of SEMI, CS, SUPERVISED and DA on synthetic data.
//!
//! ```text
//! cargo run --release --example compare_schemes -- [replicates] [rounds] [SCHEME [IID|NONIID]]
//! ```

use std::time::Instant;

use fedsemi::data::{synth_generate, SynthConfig};
use fedsemi::eval::{converged_accuracy, mean_stderr};
use fedsemi::federation::{run_experiment, Executor, FederationConfig, PartitionKind, Scheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let replicates: usize = args.next().map_or(Ok(4), |s| s.parse())?;
    let rounds: usize = args.next().map_or(Ok(30), |s| s.parse())?;
    let schemes: Vec<(Scheme, PartitionKind)> = match args.next().as_deref() {
        None => vec![
            (Scheme::Semi, PartitionKind::Iid),
            (Scheme::Cs, PartitionKind::Iid),
            (Scheme::Supervised, PartitionKind::Iid),
            (Scheme::Da, PartitionKind::Iid),
            (Scheme::Semi, PartitionKind::NonIid),
        ],
        Some(s) => vec![(
            serde_json::from_str(&format!("\"{s}\""))?,
            serde_json::from_str(&format!("\"{}\"", args.next().unwrap_or("IID".into())))?,
        )],
    };

    let exec = Executor::from_env()?;
    for (scheme, partition) in schemes {
        let started = Instant::now();
        let mut converged = Vec::new();
        for rep in 0..replicates {
            let seed = rep as u64;
            let (train, test) = synth_generate(&SynthConfig { seed, ..Default::default() })?;
            let cfg = FederationConfig {
                num_clients: 20,
                client_fraction: 0.25,
                rounds,
                label_ratio: 1.0 / 16.0,
                scheme,
                partition,
                classifier: scheme.default_head(),
                seed,
                ..Default::default()
            };
            let run = run_experiment(&cfg, &train, &test, rep, &exec)?;
            let curve: Vec<String> = run
                .metrics
                .iter()
                .map(|m| format!("{:.3}", m.accuracy))
                .collect();
            println!("  {scheme} {partition:?} rep {rep}: {}", curve.join(" "));
            converged.push(converged_accuracy(&run.metrics, 3).unwrap_or(f64::NAN));
        }
        let (mean, se) = mean_stderr(&converged);
        println!(
            "{scheme} {partition:?}: converged {mean:.4} ± {se:.4} ({:.1}s)",
            started.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
