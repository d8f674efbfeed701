//! One semi-supervised federated run with its accuracy curve, saved as a
//! checkpoint.
//!
//! ```text
//! cargo run --release --example federated_semi -- [rounds] [out.fsfl]
//! ```
//!
//! `FEDSEMI_WORKERS` sets the number of client threads.

use fedsemi::checkpoint::ModelCheckpoint;
use fedsemi::data::{synth_generate, SynthConfig};
use fedsemi::federation::{run_experiment, Executor, FederationConfig, Scheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let rounds: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let out = args.next().unwrap_or_else(|| "semi.fsfl".into());

    let (train, test) = synth_generate(&SynthConfig::default())?;
    let cfg = FederationConfig {
        num_clients: 20,
        client_fraction: 0.25,
        rounds,
        label_ratio: 1.0 / 16.0,
        scheme: Scheme::Semi,
        classifier: Scheme::Semi.default_head(),
        ..Default::default()
    };
    let run = run_experiment(&cfg, &train, &test, 0, &Executor::from_env()?)?;
    for m in &run.metrics {
        println!("round {:>3}: accuracy {:.4} over {} windows", m.round, m.accuracy, m.windows_evaluated);
    }

    let ckpt = ModelCheckpoint {
        autoencoder: run.state.autoencoder,
        classifier: run.state.classifier,
        config_fingerprint: 0,
    };
    ckpt.save(&out)?;
    println!("saved {out}");
    Ok(())
}
