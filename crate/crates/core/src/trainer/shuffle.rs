use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Explicit permutation: position `i` of the shuffled batch holds original
/// element `perm[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Precondition(format!("{perm:?} is not a permutation")));
            }
        }
        Ok(Self(perm))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} items for a permutation of {}", items.len(), self.len())));
        }
        Ok(self.0.iter().map(|&i| items[i].clone()).collect())
    }

    /// Inverse of [`Permutation::apply`].
    pub fn restore<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} items for a permutation of {}", items.len(), self.len())));
        }
        let mut out: Vec<Option<T>> = vec![None; items.len()];
        for (i, &p) in self.0.iter().enumerate() {
            out[p] = Some(items[i].clone());
        }
        Ok(out.into_iter().map(|x| x.expect("permutation covers every slot")).collect())
    }
}

/// Reorders `batch` by a uniformly random permutation and returns it with the
/// permutation.
pub fn preshuffle<T: Clone, R: Rng + ?Sized>(batch: &[T], rng: &mut R) -> (Vec<T>, Permutation) {
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    let perm = Permutation(perm);
    let shuffled = perm.apply(batch).expect("lengths agree");
    (shuffled, perm)
}

/// Puts embedding rows computed in shuffled order back into original order.
pub fn unshuffle(embeddings: &Array2<f64>, perm: &Permutation) -> Result<Array2<f64>> {
    if embeddings.nrows() != perm.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows for a permutation of {}",
            embeddings.nrows(),
            perm.len()
        )));
    }
    let mut out = Array2::zeros(embeddings.raw_dim());
    for (i, &p) in perm.as_slice().iter().enumerate() {
        out.row_mut(p).assign(&embeddings.row(i));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn hand_permutation() {
        let perm = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(perm.apply(&['a', 'b', 'c']).unwrap(), ['c', 'a', 'b']);
        assert_eq!(perm.restore(&['c', 'a', 'b']).unwrap(), ['a', 'b', 'c']);
        let rows = array![[3.0], [1.0], [2.0]];
        assert_eq!(unshuffle(&rows, &perm).unwrap(), array![[1.0], [2.0], [3.0]]);
    }

    #[test]
    fn singleton_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (b, p) = preshuffle(&[7], &mut rng);
        assert_eq!(b, [7]);
        assert_eq!(p, Permutation::identity(1));
    }

    #[test]
    fn permutations_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let (_, p) = preshuffle(&[0, 1, 2], &mut rng);
            *counts.entry(p.as_slice().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 6.0).abs() <= 0.02);
        }
    }

    #[test]
    fn mismatched_lengths() {
        let p = Permutation::identity(2);
        assert!(unshuffle(&array![[1.0]], &p).is_err());
        assert!(Permutation::new(vec![0, 0]).is_err());
    }
}
