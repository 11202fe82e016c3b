//! Exact cosine-similarity index over function embeddings.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::corpus::{Corpus, VariantKey};
use crate::error::{Error, Result};
use crate::model::Model;

const MAGIC: &[u8; 4] = b"GMIX";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexManifest {
    keys: Vec<VariantKey>,
    fingerprint: String,
    dims: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub keys: Vec<VariantKey>,
    pub matrix: Array2<f64>,
    /// Fingerprint of the checkpoint that produced the rows.
    pub fingerprint: String,
}

impl EmbeddingIndex {
    pub fn new(keys: Vec<VariantKey>, matrix: Array2<f64>, fingerprint: String) -> Result<Self> {
        if keys.len() != matrix.nrows() {
            return Err(Error::ShapeMismatch(format!("{} keys for {} rows", keys.len(), matrix.nrows())));
        }
        for (k, row) in keys.iter().zip(matrix.outer_iter()) {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::Precondition(format!("row for {k} has norm {n}")));
            }
        }
        Ok(Self { keys, matrix, fingerprint })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, key: &VariantKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = IndexManifest {
            keys: self.keys.clone(),
            fingerprint: self.fingerprint.clone(),
            dims: self.matrix.dim(),
        };
        let data: Vec<f64> = self.matrix.iter().copied().collect();
        container::encode(MAGIC, &manifest, &data)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (m, data): (IndexManifest, Vec<f64>) = container::decode(MAGIC, bytes)?;
        let matrix = Array2::from_shape_vec(m.dims, data).map_err(|e| Error::Checkpoint(format!("index data: {e}")))?;
        Self::new(m.keys, matrix, m.fingerprint)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_file(path.as_ref(), &self.to_bytes()?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Embeds every variant of `corpus` with the model's query encoder.
pub fn build_index(model: &Model, corpus: &Corpus) -> Result<EmbeddingIndex> {
    let keys: Vec<VariantKey> = corpus.variants().iter().map(|v| v.key()).collect();
    let matrix = model.embed_corpus(corpus)?;
    EmbeddingIndex::new(keys, matrix, model.fingerprint.clone())
}

/// Exhaustive scan: the `top_k` most similar rows, descending, ties by key.
pub fn query_index(index: &EmbeddingIndex, query: ArrayView1<f64>, top_k: usize) -> Result<Vec<(VariantKey, f64)>> {
    if top_k == 0 {
        return Err(Error::Precondition("top_k must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if query.len() != index.matrix.ncols() {
        return Err(Error::ShapeMismatch(format!("query width {} vs index {}", query.len(), index.matrix.ncols())));
    }
    let qn = query.dot(&query).sqrt();
    if qn == 0.0 {
        return Err(Error::ZeroVector);
    }
    let sims = index.matrix.dot(&query) / qn;
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| index.keys[a].cmp(&index.keys[b]))
    });
    order.truncate(top_k);
    Ok(order.into_iter().map(|i| (index.keys[i].clone(), sims[i])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Arch, Bitness, OptLevel};
    use ndarray::array;

    fn key(fid: &str) -> VariantKey {
        VariantKey {
            function_id: fid.into(),
            arch: Arch::Mips,
            bitness: Bitness::B32,
            compiler: "clang".into(),
            compiler_version: "11".into(),
            opt_level: OptLevel::O1,
        }
    }

    fn sample() -> EmbeddingIndex {
        let m = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.0, 1.0]];
        EmbeddingIndex::new(vec![key("a"), key("d"), key("b"), key("c")], m, "fp".into()).unwrap()
    }

    #[test]
    fn self_query_ranks_first() {
        let idx = sample();
        let r = query_index(&idx, idx.matrix.row(2), 1).unwrap();
        assert_eq!(r[0].0, key("b"));
        assert!((r[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_and_breaks_ties_by_key() {
        let idx = sample();
        let r = query_index(&idx, array![0.0, 2.0].view(), 10).unwrap();
        let ids: Vec<_> = r.iter().map(|(k, _)| k.function_id.as_str()).collect();
        assert_eq!(ids, ["c", "d", "b", "a"]);
    }

    #[test]
    fn empty_and_bad_queries() {
        let empty = EmbeddingIndex::new(vec![], Array2::zeros((0, 2)), "fp".into()).unwrap();
        assert!(matches!(query_index(&empty, array![1.0, 0.0].view(), 3), Err(Error::EmptyIndex)));
        assert!(query_index(&sample(), array![1.0, 0.0].view(), 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let idx = sample();
        assert_eq!(EmbeddingIndex::from_bytes(&idx.to_bytes().unwrap()).unwrap(), idx);
    }
}
