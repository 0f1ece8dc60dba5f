//! Binary model files: a JSON manifest followed by every parameter as raw
//! little-endian `f64`s.
//!
//! Layout: 8-byte magic, manifest length as `u64` LE, manifest JSON, then the
//! arrays in manifest order. `p` is stored as a final `1 x 1` array so that no
//! float passes through text.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::debias::{CoreModel, ModelConfig};
use crate::error::{Error, Result};
use crate::ndmath::Tensor;
use crate::params::ParamStore;

const MAGIC: &[u8; 8] = b"KTCORE\x00\x01";
pub const FORMAT_VERSION: u32 = 1;
const P_NAME: &str = "p";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// How the training students were chosen, so evaluation can rebuild the
/// same test split from the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
    pub max_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub n_questions: usize,
    pub n_concepts: usize,
    pub vocab_hash: String,
    pub split: SplitSpec,
    /// Resolved configuration of the run that produced the file.
    pub config: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: CoreModel,
}

impl Checkpoint {
    pub fn new(model: CoreModel, vocab_hash: String, split: SplitSpec, config: serde_json::Value) -> Self {
        let mut arrays: Vec<ArrayEntry> = model
            .params
            .names()
            .zip(model.params.tensors())
            .map(|(name, t)| ArrayEntry {
                name: name.to_string(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect();
        arrays.push(ArrayEntry {
            name: P_NAME.into(),
            rows: 1,
            cols: 1,
        });
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                model: model.config,
                n_questions: model.n_questions,
                n_concepts: model.n_concepts,
                vocab_hash,
                split,
                config,
                arrays,
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        let p = Tensor::scalar(self.model.p);
        for t in self.model.params.tensors().iter().chain([&p]) {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a model file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }

        let mut data = &bytes[16 + len..];
        let mut stored = ParamStore::new();
        let mut p = None;
        for entry in &manifest.arrays {
            let n = entry.rows * entry.cols;
            if data.len() < 8 * n {
                return Err(Error::Checkpoint(format!("array `{}` is truncated", entry.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[8 * n..];
            let t = Tensor::new(entry.rows, entry.cols, values)?;
            if entry.name == P_NAME {
                p = Some(t.item()?);
            } else {
                stored.add(entry.name.clone(), t);
            }
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after the last array"));
        }
        let mut model = CoreModel::new(manifest.model, manifest.n_questions, manifest.n_concepts);
        model.params.load_values(&stored)?;
        model.p = p.ok_or_else(|| bad("missing `p`"))?;
        Ok(Checkpoint { manifest, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails unless the file was trained on a corpus with this vocabulary.
    pub fn check_vocabulary(&self, vocab_hash: &str) -> Result<()> {
        if self.manifest.vocab_hash != vocab_hash {
            return Err(Error::VocabularyMismatch {
                expected: self.manifest.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            dim: 4,
            branch_hidden: 3,
            ..ModelConfig::default()
        };
        let mut model = CoreModel::new(cfg, 6, 2);
        model.p = -0.1234567890123;
        let split = SplitSpec {
            train_ratio: 0.8,
            seed: 3,
            max_len: 200,
        };
        Checkpoint::new(model, "abc".into(), split, serde_json::json!({"lr": 0.001}))
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let a = sample();
        let bytes = a.to_bytes().unwrap();
        let b = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(b.to_bytes().unwrap(), bytes);
        assert_eq!(b.model.p, a.model.p);
        assert_eq!(b.model.params, a.model.params);
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        assert!(Checkpoint::from_bytes(b"hello world, not a model").is_err());
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn vocabulary_check() {
        let c = sample();
        assert!(c.check_vocabulary("abc").is_ok());
        assert!(matches!(
            c.check_vocabulary("abd"),
            Err(Error::VocabularyMismatch { .. })
        ));
    }
}
