//! Binary checkpoints of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSFL" | u32 version = 1 | u32 tensor count
//! per tensor: u16 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 data[∏dims]
//! u64 FNV-1a hash of every preceding byte
//! ```
//!
//! A model checkpoint stores the autoencoder under `ae.`, the classifier
//! under `cls.`, and small `meta.` tensors describing both specs and the
//! configuration fingerprint.

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use thiserror::Error;

use crate::models::{
    AeVariant, Autoencoder, AutoencoderSpec, Classifier, ClassifierHead, ClassifierSpec,
    ModelError,
};
use crate::params::ModelParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FSFL";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;
const CHECKSUM_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Serializes tensors in the given order.
pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>, CheckpointError> {
    let mut out = Vec::with_capacity(HEADER_LEN + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(tensors.len(), "tensor count")?.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| CheckpointError::Malformed(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&u32_of(t.rank(), "rank")?.to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&u32_of(d, "dimension")?.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn u32_of(n: usize, what: &str) -> Result<u32, CheckpointError> {
    u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated {
                offset: self.bytes.len(),
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Walks the tensor records of `body`, returning them and the end offset.
fn walk(body: &[u8]) -> Result<(Vec<(String, Tensor)>, usize), CheckpointError> {
    let mut r = Reader {
        bytes: body,
        pos: HEADER_LEN,
    };
    let count = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CheckpointError::Malformed(format!("{name}: shape {shape:?}")))?;
        let data = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        out.push((name, t));
    }
    Ok((out, r.pos))
}

/// Parses `body` (everything before the checksum), which must hold exactly the records.
fn parse_body(body: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let (out, end) = walk(body)?;
    if end != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} unexpected bytes after the last tensor",
            body.len() - end
        )));
    }
    Ok(out)
}

/// Parses and verifies a checkpoint.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated { offset: bytes.len() }
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated { offset: bytes.len() });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(CheckpointError::Truncated { offset: bytes.len() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let computed = fnv1a(body);
    if stored != computed {
        // Records or checksum that end past the file mean it was cut short.
        match walk(bytes) {
            Err(e @ CheckpointError::Truncated { .. }) => return Err(e),
            Ok((_, end)) if bytes.len() - end < CHECKSUM_LEN => {
                return Err(CheckpointError::Truncated { offset: bytes.len() })
            }
            _ => {}
        }
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    parse_body(body)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensors(tensors)?).map_err(|e| io_err(path, e))
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let path = path.as_ref();
    decode_tensors(&std::fs::read(path).map_err(|e| io_err(path, e))?)
}

fn io_err(path: &Path, e: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Global models of one replicate plus the configuration fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub autoencoder: Option<Autoencoder>,
    pub classifier: Classifier,
    pub config_fingerprint: u64,
}

const FINGERPRINT: &str = "meta.config_fingerprint";
const AE_SPEC: &str = "meta.ae_spec";
const CLS_SPEC: &str = "meta.cls_spec";

fn ints(v: &[usize]) -> Tensor {
    Tensor::vector(v.iter().map(|&x| x as f32).collect())
}

impl ModelCheckpoint {
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let fp = self.config_fingerprint;
        let chunks = (0..4).map(|i| ((fp >> (16 * i)) & 0xffff) as usize).collect::<Vec<_>>();
        let mut out = vec![(FINGERPRINT.to_string(), ints(&chunks))];
        if let Some(ae) = &self.autoencoder {
            let s = ae.spec();
            let code = match s.variant {
                AeVariant::Fc => 0,
                AeVariant::Cnn => 1,
                AeVariant::Lstm => 2,
            };
            out.push((AE_SPEC.into(), ints(&[code, s.input_dim, s.repr_dim])));
        }
        let s = self.classifier.spec();
        let head = match s.head {
            ClassifierHead::Lstm => 0,
            ClassifierHead::Softmax => 1,
        };
        out.push((CLS_SPEC.into(), ints(&[head, s.input_dim, s.num_classes, s.hidden_dim])));
        if let Some(ae) = &self.autoencoder {
            for e in ae.params().entries() {
                out.push((format!("ae.{}", e.name), e.tensor.clone()));
            }
        }
        for e in self.classifier.params().entries() {
            out.push((format!("cls.{}", e.name), e.tensor.clone()));
        }
        out
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self, CheckpointError> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let meta = |name: &str, len: usize| -> Result<Option<Vec<usize>>, CheckpointError> {
            let Some(t) = find(name) else { return Ok(None) };
            if t.len() != len || t.data().iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err(CheckpointError::Malformed(format!("{name} is not {len} integers")));
            }
            Ok(Some(t.data().iter().map(|&v| v as usize).collect()))
        };
        let fp = meta(FINGERPRINT, 4)?
            .ok_or_else(|| CheckpointError::Malformed(format!("missing {FINGERPRINT}")))?;
        let config_fingerprint = fp
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &c)| acc | ((c as u64 & 0xffff) << (16 * i)));

        let autoencoder = match meta(AE_SPEC, 3)? {
            None => None,
            Some(v) => {
                let variant = match v[0] {
                    0 => AeVariant::Fc,
                    1 => AeVariant::Cnn,
                    2 => AeVariant::Lstm,
                    c => return Err(CheckpointError::Malformed(format!("autoencoder code {c}"))),
                };
                let spec = AutoencoderSpec::new(variant, v[1], v[2]);
                let params = fill(Autoencoder::build(spec, 0)?.into_params(), &tensors, "ae.")?;
                Some(Autoencoder::from_params(spec, params)?)
            }
        };
        let v = meta(CLS_SPEC, 4)?
            .ok_or_else(|| CheckpointError::Malformed(format!("missing {CLS_SPEC}")))?;
        let head = match v[0] {
            0 => ClassifierHead::Lstm,
            1 => ClassifierHead::Softmax,
            c => return Err(CheckpointError::Malformed(format!("classifier code {c}"))),
        };
        let spec = ClassifierSpec {
            head,
            input_dim: v[1],
            num_classes: v[2],
            hidden_dim: v[3],
        };
        let params = fill(Classifier::build(spec, 0)?.into_params(), &tensors, "cls.")?;
        let classifier = Classifier::from_params(spec, params)?;
        Ok(Self {
            autoencoder,
            classifier,
            config_fingerprint,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        save_tensors(path, &self.to_tensors())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_tensors(load_tensors(path)?)
    }
}

/// Replaces every tensor of `template` with the stored `{prefix}{name}` one.
fn fill(
    mut template: ModelParams,
    tensors: &[(String, Tensor)],
    prefix: &str,
) -> Result<ModelParams, CheckpointError> {
    let stored = tensors.iter().filter(|(n, _)| n.starts_with(prefix)).count();
    if stored != template.len() {
        return Err(CheckpointError::Malformed(format!(
            "{stored} tensors under {prefix:?}, model needs {}",
            template.len()
        )));
    }
    for e in template.entries_mut() {
        let name = format!("{prefix}{}", e.name);
        let (_, t) = tensors
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {name}")))?;
        if t.shape() != e.tensor.shape() {
            return Err(CheckpointError::Malformed(format!(
                "{name}: shape {:?}, expected {:?}",
                t.shape(),
                e.tensor.shape()
            )));
        }
        e.tensor = t.clone();
    }
    Ok(template)
}
