//! Saves a model, reloads it, and shows how a damaged file is rejected.
//!
//! ```text
//! cargo run --release --example checkpoint_roundtrip
//! ```

use fedsemi::checkpoint::{decode_tensors, ModelCheckpoint};
use fedsemi::models::{AeVariant, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ckpt = ModelCheckpoint {
        autoencoder: Some(Autoencoder::build(AutoencoderSpec::new(AeVariant::Lstm, 9, 5), 1)?),
        classifier: Classifier::build(ClassifierSpec::softmax(5, 3), 2)?,
        config_fingerprint: 42,
    };
    let dir = std::env::temp_dir().join("fedsemi-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.fsfl");
    ckpt.save(&path)?;
    let bytes = std::fs::read(&path)?;
    println!("wrote {} bytes to {}", bytes.len(), path.display());
    println!("reloaded equal: {}", ModelCheckpoint::load(&path)? == ckpt);

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 1;
    println!("bit flip: {}", decode_tensors(&flipped).unwrap_err());
    println!("truncated: {}", decode_tensors(&bytes[..bytes.len() - 10]).unwrap_err());
    let mut magic = bytes;
    magic[0] = b'X';
    println!("bad magic: {}", decode_tensors(&magic).unwrap_err());
    Ok(())
}
