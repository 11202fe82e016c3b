//! Small numeric building blocks shared by the encoders.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

pub(crate) fn uniform_vector<R: Rng>(rng: &mut R, len: usize, bound: f64) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.gen_range(-bound..=bound))
}

/// Row-wise L2 normalization; returns the normalized rows and the norms.
pub fn normalize_rows(z: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(f64::MIN_POSITIVE));
    let e = &z / &norms.view().insert_axis(Axis(1));
    (e, norms)
}

/// Backward of [`normalize_rows`]: `dz = (de - e (e . de)) / |z|`.
pub fn normalize_rows_backward(e: ArrayView2<f64>, norms: &Array1<f64>, de: ArrayView2<f64>) -> Array2<f64> {
    let proj = (&e * &de).sum_axis(Axis(1));
    let mut dz = &de - &(&e * &proj.insert_axis(Axis(1)));
    dz /= &norms.view().insert_axis(Axis(1));
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalized_rows_are_unit() {
        let (e, n) = normalize_rows(array![[3.0, 4.0], [0.0, 2.0]].view());
        assert_eq!(n, array![5.0, 2.0]);
        assert_eq!(e, array![[0.6, 0.8], [0.0, 1.0]]);
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let z = array![[0.3, -1.2, 0.7]];
        let w = array![[0.5, 0.1, -0.4]];
        let f = |z: &Array2<f64>| (&normalize_rows(z.view()).0 * &w).sum();
        let (e, n) = normalize_rows(z.view());
        let dz = normalize_rows_backward(e.view(), &n, w.view());
        for j in 0..3 {
            let mut p = z.clone();
            p[[0, j]] += 1e-6;
            let mut m = z.clone();
            m[[0, j]] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - dz[[0, j]]).abs() < 1e-8);
        }
    }
}
