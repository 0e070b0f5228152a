//! Checkpoint directories: `manifest.json`, `params.bin` and `vocab.txt`.
//!
//! `params.bin` is the concatenation of every tensor as row-major
//! little-endian `f32`, in manifest order. The manifest records the format
//! version, the model config, the label names and, per tensor, its shape,
//! dtype and byte range.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, EMBEDDING};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub embedding_trainable: bool,
    pub tensors: IndexMap<String, TensorEntry>,
}

/// Everything needed to run a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub config: ModelConfig,
    pub labels: Vec<String>,
    pub vocab: Vocabulary,
    pub params: ModelParams<T>,
}

impl<T: Scalar> Checkpoint<T> {
    /// Writes the checkpoint, rounding parameters to `f32`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut blob = Vec::new();
        let mut tensors = IndexMap::new();
        for (name, tensor, _) in self.params.named() {
            let offset = blob.len();
            for &v in tensor.data() {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
            tensors.insert(
                name,
                TensorEntry {
                    shape: tensor.shape().to_vec(),
                    dtype: "f32".into(),
                    byte_offset: offset,
                    byte_length: blob.len() - offset,
                },
            );
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            labels: self.labels.clone(),
            embedding_trainable: self.params.embedding.trainable,
            tensors,
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(format!("cannot serialize manifest: {e}")))?;
        let params_path = dir.join(PARAMS_FILE);
        fs::write(&params_path, &blob).map_err(|e| Error::io(&params_path, e))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, json + "\n").map_err(|e| Error::io(&manifest_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        manifest
            .config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("invalid config in manifest: {e}")))?;
        if manifest.labels.len() != manifest.config.num_classes {
            return Err(Error::Checkpoint(format!(
                "{} labels for {} classes",
                manifest.labels.len(),
                manifest.config.num_classes
            )));
        }
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        let params_path = dir.join(PARAMS_FILE);
        let blob = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;

        let expected = ModelParams::<T>::expected_shapes(&manifest.config, vocab.len());
        if manifest.tensors.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "manifest lists {} tensors, config implies {}",
                manifest.tensors.len(),
                expected.len()
            )));
        }
        let mut loaded: Vec<Tensor<T>> = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let entry = manifest
                .tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` missing from manifest")))?;
            if &entry.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config implies {shape:?}",
                    entry.shape
                )));
            }
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has unsupported dtype {}",
                    entry.dtype
                )));
            }
            let numel: usize = shape.iter().product();
            let end = entry.byte_offset.checked_add(entry.byte_length);
            if entry.byte_length != numel * 4 || end.is_none_or(|e| e > blob.len()) {
                return Err(Error::Checkpoint(format!("tensor `{name}` byte range is inconsistent")));
            }
            let bytes = &blob[entry.byte_offset..entry.byte_offset + entry.byte_length];
            let data = bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            let tensor = Tensor::new(shape, data)?;
            if !tensor.all_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` contains non-finite values")));
            }
            loaded.push(tensor);
        }
        let total: usize = manifest.tensors.values().map(|e| e.byte_length).sum();
        if total != blob.len() {
            return Err(Error::Checkpoint(format!(
                "{PARAMS_FILE} has {} bytes, manifest accounts for {total}",
                blob.len()
            )));
        }

        let mut it = loaded.into_iter();
        let embedding = EmbeddingMatrix {
            weights: it.next().expect("embedding"),
            trainable: manifest.embedding_trainable,
        };
        let filters = (0..manifest.config.filter_sizes.len())
            .map(|_| it.next().expect("filter"))
            .collect();
        let params = ModelParams {
            embedding,
            filters,
            se_w1: it.next().expect("se.w1"),
            se_w2: it.next().expect("se.w2"),
            dense_w: it.next().expect("dense.w"),
            dense_b: it.next().expect("dense.b"),
        };
        debug_assert_eq!(expected[0].0, EMBEDDING);
        Ok(Checkpoint {
            config: manifest.config,
            labels: manifest.labels,
            vocab,
            params,
        })
    }
}
