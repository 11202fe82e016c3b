use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{embed_all, EncodedFunction, Encoder};
use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-5;

/// Fixed-capacity FIFO of unit-norm key embeddings.
///
/// `head` is the slot of the oldest row; the next enqueue overwrites from
/// there. `labels` carries the function id behind each row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingQueue {
    buffer: Array2<f64>,
    labels: Vec<String>,
    head: usize,
}

fn check_unit_rows(rows: ArrayView2<f64>) -> Result<()> {
    for (i, r) in rows.outer_iter().enumerate() {
        let n = r.dot(&r).sqrt();
        if !n.is_finite() {
            return Err(Error::NonFinite(format!("queue row {i}")));
        }
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Precondition(format!("queue row {i} has norm {n}")));
        }
    }
    Ok(())
}

impl EmbeddingQueue {
    pub fn from_rows(buffer: Array2<f64>, labels: Vec<String>) -> Result<Self> {
        Self::from_parts(buffer, labels, 0)
    }

    pub fn from_parts(buffer: Array2<f64>, labels: Vec<String>, head: usize) -> Result<Self> {
        if buffer.nrows() == 0 {
            return Err(Error::Precondition("queue capacity must be positive".into()));
        }
        if labels.len() != buffer.nrows() || head >= buffer.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels / head {head} for {} rows",
                labels.len(),
                buffer.nrows()
            )));
        }
        check_unit_rows(buffer.view())?;
        Ok(Self { buffer, labels, head })
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buffer.ncols()
    }

    pub fn head(&self) -> usize {
        self.head
    }

    /// Rows in storage order (not FIFO order); the loss does not care.
    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.buffer.view()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Rows from oldest to newest.
    pub fn ordered(&self) -> Array2<f64> {
        let k = self.capacity();
        let mut out = Array2::zeros(self.buffer.raw_dim());
        for i in 0..k {
            out.row_mut(i).assign(&self.buffer.row((self.head + i) % k));
        }
        out
    }

    /// Replaces the `N` oldest rows with `batch`.
    pub fn enqueue_dequeue(&mut self, batch: ArrayView2<f64>, labels: &[String]) -> Result<()> {
        let (n, k) = (batch.nrows(), self.capacity());
        if n > k {
            return Err(Error::QueueOverflow { batch: n, capacity: k });
        }
        if batch.ncols() != self.dim() || labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "enqueue of {}x{} with {} labels into width {}",
                n,
                batch.ncols(),
                labels.len(),
                self.dim()
            )));
        }
        check_unit_rows(batch)?;
        for (i, row) in batch.outer_iter().enumerate() {
            let slot = (self.head + i) % k;
            self.buffer.row_mut(slot).assign(&row);
            self.labels[slot] = labels[i].clone();
        }
        self.head = (self.head + n) % k;
        Ok(())
    }
}

/// Fills a queue of `k` rows with key-encoder embeddings of corpus variants
/// (distinct variants while they last, then draws with replacement).
pub fn init_queue<E: Encoder>(
    fns: &[EncodedFunction],
    encoder: &E,
    key_params: &E::Params,
    k: usize,
    seed: u64,
) -> Result<EmbeddingQueue> {
    if fns.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = k.min(fns.len());
    let mut picks = sample(&mut rng, fns.len(), distinct).into_vec();
    picks.extend((distinct..k).map(|_| rng.gen_range(0..fns.len())));
    let batch: Vec<&EncodedFunction> = picks.iter().map(|&i| &fns[i]).collect();
    let rows = embed_all(encoder, key_params, &batch, 64)?;
    let labels = batch.iter().map(|f| f.key.function_id.clone()).collect();
    EmbeddingQueue::from_rows(rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn unit(k: usize, dim: usize, hot: usize) -> Array2<f64> {
        let mut a = Array2::zeros((k, dim));
        for i in 0..k {
            a[[i, (hot + i) % dim]] = 1.0;
        }
        a
    }

    fn labels(tag: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{tag}{i}")).collect()
    }

    #[test]
    fn fifo_trace() {
        let mut q = EmbeddingQueue::from_rows(unit(4, 8, 0), labels("a", 4)).unwrap();
        q.enqueue_dequeue(unit(2, 8, 4).view(), &labels("b", 2)).unwrap();
        q.enqueue_dequeue(unit(2, 8, 6).view(), &labels("c", 2)).unwrap();
        assert_eq!(q.labels(), ["b0", "b1", "c0", "c1"]);
        assert_eq!(q.ordered(), ndarray::concatenate![ndarray::Axis(0), unit(2, 8, 4), unit(2, 8, 6)]);
        assert_eq!(q.capacity(), 4);
    }

    #[test]
    fn full_replacement_and_overflow() {
        let mut q = EmbeddingQueue::from_rows(unit(4, 8, 0), labels("a", 4)).unwrap();
        q.enqueue_dequeue(unit(4, 8, 3).view(), &labels("z", 4)).unwrap();
        assert_eq!(q.ordered(), unit(4, 8, 3));
        let err = q.enqueue_dequeue(unit(5, 8, 0).view(), &labels("x", 5));
        assert!(matches!(err, Err(Error::QueueOverflow { batch: 5, capacity: 4 })));
    }

    #[test]
    fn rejects_non_unit_rows() {
        let mut q = EmbeddingQueue::from_rows(unit(2, 3, 0), labels("a", 2)).unwrap();
        let bad = Array2::from_elem((1, 3), 1.0);
        assert!(q.enqueue_dequeue(bad.view(), &labels("b", 1)).is_err());
    }
}
