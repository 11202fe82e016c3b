use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRIPLET_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Infonce,
    Triplet,
}

fn check_inputs(q: ArrayView2<f64>, k_pos: ArrayView2<f64>, queue: ArrayView2<f64>) -> Result<()> {
    if q.dim() != k_pos.dim() || q.ncols() != queue.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "q {:?}, k {:?}, queue {:?}",
            q.dim(),
            k_pos.dim(),
            queue.dim()
        )));
    }
    if q.nrows() == 0 {
        return Err(Error::Precondition("empty query batch".into()));
    }
    for (name, m) in [("queries", q), ("positive keys", k_pos), ("queue", queue)] {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
    }
    Ok(())
}

/// Mean InfoNCE over the batch.
pub fn info_nce_loss(q: ArrayView2<f64>, k_pos: ArrayView2<f64>, queue: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(q, k_pos, queue, tau, None)?.0)
}

/// InfoNCE and its gradient w.r.t. `q` (keys and queue are constants).
///
/// Logit 0 of row `i` is `q_i . k_i / tau`, followed by one logit per queue
/// row. `mask[i][j] = true` drops queue row `j` from row `i`'s softmax.
pub fn info_nce_with_grad(
    q: ArrayView2<f64>,
    k_pos: ArrayView2<f64>,
    queue: ArrayView2<f64>,
    tau: f64,
    mask: Option<&[Vec<bool>]>,
) -> Result<(f64, Array2<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::Precondition(format!("temperature {tau} must be positive")));
    }
    check_inputs(q, k_pos, queue)?;
    let n = q.nrows();
    let pos: Array1<f64> = (&q * &k_pos).sum_axis(Axis(1)) / tau;
    let neg = q.dot(&queue.t()) / tau;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(q.raw_dim());
    for i in 0..n {
        let masked = |j: usize| mask.is_some_and(|m| m[i][j]);
        let max = neg
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| !masked(j))
            .fold(pos[i], |a, (_, &b)| a.max(b));
        let mut weights: Vec<f64> = neg
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, &l)| if masked(j) { 0.0 } else { (l - max).exp() })
            .collect();
        let w_pos = (pos[i] - max).exp();
        let z = w_pos + weights.iter().sum::<f64>();
        loss += z.ln() + max - pos[i];
        weights.iter_mut().for_each(|w| *w /= z);
        let p_pos = w_pos / z;
        let mut g = grad.row_mut(i);
        g.scaled_add(p_pos - 1.0, &k_pos.row(i));
        for (j, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                g.scaled_add(w, &queue.row(j));
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("InfoNCE loss".into()));
    }
    grad /= tau * n as f64;
    Ok((loss / n as f64, grad))
}

/// Mean hinge `max(0, margin - q.k_pos + q.k_neg)` over every query and every
/// queue row, with its gradient w.r.t. `q`.
pub fn triplet_with_grad(
    q: ArrayView2<f64>,
    k_pos: ArrayView2<f64>,
    queue: ArrayView2<f64>,
    margin: f64,
    mask: Option<&[Vec<bool>]>,
) -> Result<(f64, Array2<f64>)> {
    check_inputs(q, k_pos, queue)?;
    let n = q.nrows();
    let pos = (&q * &k_pos).sum_axis(Axis(1));
    let neg = q.dot(&queue.t());
    let mut loss = 0.0;
    let mut grad = Array2::zeros(q.raw_dim());
    for i in 0..n {
        let active: Vec<usize> = (0..queue.nrows()).filter(|&j| !mask.is_some_and(|m| m[i][j])).collect();
        if active.is_empty() {
            continue;
        }
        let scale = 1.0 / (active.len() * n) as f64;
        let mut g = grad.row_mut(i);
        for j in active {
            let h = margin - pos[i] + neg[[i, j]];
            if h > 0.0 {
                loss += h * scale;
                g.scaled_add(scale, &queue.row(j));
                g.scaled_add(-scale, &k_pos.row(i));
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_two_way_softmax() {
        let q = array![[1.0, 0.0]];
        let k = array![[0.0, 1.0]];
        let queue = array![[0.0, -1.0]];
        let l = info_nce_loss(q.view(), k.view(), queue.view(), 0.07).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_positive() {
        let q = array![[1.0, 0.0]];
        let queue = array![[0.0, 1.0]];
        let l = info_nce_loss(q.view(), q.view(), queue.view(), 0.07).unwrap();
        let t: f64 = 1.0 / 0.07;
        let want = -(t.exp() / (t.exp() + 1.0)).ln();
        assert!((l - want).abs() < 1e-15);
        assert!((l - 6.2e-7).abs() < 1e-8);
    }

    #[test]
    fn uninformative_logits_give_log_k_plus_one() {
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let k = array![[0.0, 1.0], [1.0, 0.0]];
        let queue = array![[0.0, 1.0], [0.0, -1.0], [0.0, 1.0]];
        let l = info_nce_loss(q.slice(ndarray::s![..1, ..]), k.slice(ndarray::s![..1, ..]), queue.view(), 0.5).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        let q = array![[1.0, 0.0]];
        assert!(info_nce_loss(q.view(), q.view(), q.view(), 0.0).is_err());
        let nan = array![[f64::NAN, 0.0]];
        assert!(matches!(info_nce_loss(nan.view(), q.view(), q.view(), 1.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = array![[0.6, 0.8, 0.0], [0.0, 0.6, -0.8]];
        let k = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let queue = array![[0.0, 0.0, 1.0], [0.8, -0.6, 0.0], [-1.0, 0.0, 0.0]];
        let mask = vec![vec![false, true, false], vec![false, false, false]];
        for kind in [LossKind::Infonce, LossKind::Triplet] {
            let f = |q: &Array2<f64>| match kind {
                LossKind::Infonce => info_nce_with_grad(q.view(), k.view(), queue.view(), 0.3, Some(&mask)).unwrap(),
                LossKind::Triplet => triplet_with_grad(q.view(), k.view(), queue.view(), TRIPLET_MARGIN, Some(&mask)).unwrap(),
            };
            let (_, g) = f(&q);
            for i in 0..2 {
                for j in 0..3 {
                    let mut hi = q.clone();
                    hi[[i, j]] += 1e-6;
                    let mut lo = q.clone();
                    lo[[i, j]] -= 1e-6;
                    let fd = (f(&hi).0 - f(&lo).0) / 2e-6;
                    assert!((fd - g[[i, j]]).abs() < 1e-7, "{kind:?} {fd} vs {}", g[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn masking_removes_negatives() {
        let q = array![[1.0, 0.0]];
        let queue = array![[1.0, 0.0], [0.0, 1.0]];
        let mask = vec![vec![true, false]];
        let (masked, _) = info_nce_with_grad(q.view(), q.view(), queue.view(), 1.0, Some(&mask)).unwrap();
        let plain = info_nce_loss(q.view(), q.view(), queue.slice(ndarray::s![1.., ..]), 1.0).unwrap();
        assert!((masked - plain).abs() < 1e-15);
    }
}
