//! Trains each autoencoder variant on unlabelled data and reports the
//! reconstruction loss before and after.
//!
//! ```text
//! cargo run --release --example train_autoencoder -- [epochs]
//! ```

use fedsemi::data::{repr_dim, synth_generate, SynthConfig};
use fedsemi::models::{AeVariant, Autoencoder, AutoencoderSpec, TrainOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let (train, test) = synth_generate(&SynthConfig { train_len: 5000, ..Default::default() })?;
    let nf = train.num_features();
    let d = repr_dim(nf, 0.5)?;
    let probe = test.features.slice_rows(0, 500);
    let opts = TrainOptions { lr: 0.01, epochs, policy: Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for variant in [AeVariant::Fc, AeVariant::Cnn, AeVariant::Lstm] {
        let ae = Autoencoder::build(AutoencoderSpec::new(variant, nf, d), 0)?;
        let before = ae.reconstruction_loss(&probe)?;
        let out = ae.train_locally(&train.features, &opts, &mut rng)?;
        let after = out.model.reconstruction_loss(&probe)?;
        println!(
            "{}: {nf} -> {d}, {} parameters, test MSE {before:.3} -> {after:.3}, epoch losses {:.3?}",
            variant.name(),
            out.model.params().parameter_count(),
            out.epoch_losses
        );
    }
    Ok(())
}
