use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::normalizer::Vocab;
use crate::params::ParamSet;
use crate::trainer::{EmbeddingQueue, EncoderPair};

const MAGIC: &[u8; 4] = b"GMCK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset into the data block, in elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub capacity: usize,
    pub dim: usize,
    pub head: usize,
    pub labels: Vec<String>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub epoch: usize,
    pub config: serde_json::Value,
    pub vocab: Vocab,
    pub tensors: Vec<TensorEntry>,
    pub queue: Option<QueueEntry>,
}

/// Query and key parameters, vocabulary, queue and run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    data: Vec<f64>,
}

impl Checkpoint {
    pub fn new<P: ParamSet>(
        config: serde_json::Value,
        vocab: &Vocab,
        epoch: usize,
        pair: &EncoderPair<P>,
        queue: Option<&EmbeddingQueue>,
    ) -> Self {
        let mut data = Vec::new();
        let mut tensors = Vec::new();
        for (side, params) in [("query", &pair.query), ("key", &pair.key)] {
            for (name, t) in params.tensors() {
                tensors.push(TensorEntry {
                    name: format!("{side}.{name}"),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                    offset: data.len(),
                });
                data.extend(t.iter().copied());
            }
        }
        let queue = queue.map(|q| {
            let offset = data.len();
            data.extend(q.rows().iter().copied());
            QueueEntry {
                capacity: q.capacity(),
                dim: q.dim(),
                head: q.head(),
                labels: q.labels().to_vec(),
                offset,
            }
        });
        Self {
            manifest: CheckpointManifest {
                epoch,
                config,
                vocab: vocab.clone(),
                tensors,
                queue,
            },
            data,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(MAGIC, &self.manifest, &self.data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, data): (CheckpointManifest, Vec<f64>) = container::decode(MAGIC, bytes)?;
        let ck = Self { manifest, data };
        for t in &ck.manifest.tensors {
            if t.dtype != "f64" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", t.name, t.dtype)));
            }
            ck.slice(t.offset, t.shape.iter().product(), &t.name)?;
        }
        if let Some(q) = &ck.manifest.queue {
            ck.slice(q.offset, q.capacity * q.dim, "queue")?;
        }
        Ok(ck)
    }

    /// Writes the checkpoint and returns its fingerprint.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<String> {
        let bytes = self.to_bytes()?;
        container::write_file(path.as_ref(), &bytes)?;
        Ok(container::fingerprint(&bytes))
    }

    /// Reads a checkpoint and its fingerprint.
    pub fn read(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path)?;
        Ok((Self::from_bytes(&bytes)?, container::fingerprint(&bytes)))
    }

    fn slice(&self, offset: usize, len: usize, what: &str) -> Result<&[f64]> {
        self.data
            .get(offset..offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("{what}: data block too short")))
    }

    pub fn tensor(&self, name: &str) -> Result<ArrayD<f64>> {
        let t = self
            .manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let values = self.slice(t.offset, t.shape.iter().product(), name)?;
        Ok(ArrayD::from_shape_vec(IxDyn(&t.shape), values.to_vec()).expect("length checked"))
    }

    /// Overwrites every tensor of `template` with the stored `side` (`query`
    /// or `key`) values; names and shapes must match exactly.
    pub fn load_into<P: ParamSet>(&self, side: &str, template: &mut P) -> Result<()> {
        let expected = template.tensors().len();
        let stored = self.manifest.tensors.iter().filter(|t| t.name.starts_with(&format!("{side}."))).count();
        if stored != expected {
            return Err(Error::Checkpoint(format!("{side}: {stored} stored tensors, model has {expected}")));
        }
        for (name, mut t) in template.tensors_mut() {
            let full = format!("{side}.{name}");
            let stored = self.tensor(&full)?;
            if stored.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{full}: stored shape {:?}, model shape {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            t.assign(&stored);
        }
        Ok(())
    }

    pub fn load_pair<P: ParamSet>(&self, template: &P) -> Result<EncoderPair<P>> {
        let mut query = template.clone();
        self.load_into("query", &mut query)?;
        let mut key = template.clone();
        self.load_into("key", &mut key)?;
        Ok(EncoderPair { query, key })
    }

    pub fn queue(&self) -> Result<Option<EmbeddingQueue>> {
        let Some(q) = &self.manifest.queue else {
            return Ok(None);
        };
        let values = self.slice(q.offset, q.capacity * q.dim, "queue")?;
        let buffer = Array2::from_shape_vec((q.capacity, q.dim), values.to_vec()).expect("length checked");
        EmbeddingQueue::from_parts(buffer, q.labels.clone(), q.head).map(Some)
    }
}
