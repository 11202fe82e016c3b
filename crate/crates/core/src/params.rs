//! Named parameter tensors and the generic operations the trainer needs on
//! them (zeroing, norms, momentum blends, Adam).

use ndarray::{ArrayViewD, ArrayViewMutD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed, ordered collection of named `f64` tensors.
///
/// `tensors` and `tensors_mut` must list the same names in the same order.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)>;
}

pub(crate) fn prefixed<'a, T>(prefix: &str, items: Vec<(String, T)>) -> impl Iterator<Item = (String, T)> + 'a
where
    T: 'a,
{
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

pub fn zeros_like<P: ParamSet>(p: &P) -> P {
    let mut out = p.clone();
    for (_, mut t) in out.tensors_mut() {
        t.fill(0.0);
    }
    out
}

pub fn param_count<P: ParamSet>(p: &P) -> usize {
    p.tensors().iter().map(|(_, t)| t.len()).sum()
}

pub fn flatten<P: ParamSet>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
}

pub fn global_norm<P: ParamSet>(p: &P) -> f64 {
    p.tensors()
        .iter()
        .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite<P: ParamSet>(p: &P) -> bool {
    p.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
}

/// Applies `f(target, source)` elementwise over matching tensors.
pub fn zip_apply<P: ParamSet>(target: &mut P, source: &P, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
    let src = source.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!(
            "parameter sets hold {} and {} tensors",
            dst.len(),
            src.len()
        )));
    }
    for ((dn, d), (sn, s)) in dst.iter_mut().zip(&src) {
        if dn != sn || d.shape() != s.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{dn} {:?} vs {sn} {:?}",
                d.shape(),
                s.shape()
            )));
        }
        Zip::from(d).and(s).for_each(|a, &b| f(a, b));
    }
    Ok(())
}

pub fn scale<P: ParamSet>(p: &mut P, factor: f64) {
    for (_, mut t) in p.tensors_mut() {
        t.mapv_inplace(|x| x * factor);
    }
}

/// Key-encoder update `key <- m * key + (1 - m) * query`; `query` is untouched.
pub fn momentum_update<P: ParamSet>(key: &mut P, query: &P, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::Precondition(format!("momentum {m} outside [0, 1)")));
    }
    zip_apply(key, query, |k, q| *k = m * *k + (1.0 - m) * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adaptive-moment optimizer over any [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam<P: ParamSet> {
    pub config: AdamConfig,
    first: P,
    second: P,
    step: u64,
}

impl<P: ParamSet> Adam<P> {
    pub fn new(params: &P, config: AdamConfig) -> Self {
        Self {
            config,
            first: zeros_like(params),
            second: zeros_like(params),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);

        let mut g = grads.clone();
        if c.weight_decay != 0.0 {
            zip_apply(&mut g, params, |gi, p| *gi += c.weight_decay * p)?;
        }
        zip_apply(&mut self.first, &g, |m, gi| *m = c.beta1 * *m + (1.0 - c.beta1) * gi)?;
        zip_apply(&mut self.second, &g, |v, gi| *v = c.beta2 * *v + (1.0 - c.beta2) * gi * gi)?;

        let mut update = self.first.clone();
        zip_apply(&mut update, &self.second, |m, v| {
            *m = c.lr * (*m / bc1) / ((v / bc2).sqrt() + c.eps);
        })?;
        zip_apply(params, &update, |p, u| *p -= u)
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use ndarray::{Array1, Array2};

    #[derive(Debug, Clone, PartialEq)]
    pub struct Toy {
        pub w: Array2<f64>,
        pub b: Array1<f64>,
    }

    impl ParamSet for Toy {
        fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
            vec![("w".into(), self.w.view().into_dyn()), ("b".into(), self.b.view().into_dyn())]
        }
        fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
            vec![
                ("w".into(), self.w.view_mut().into_dyn()),
                ("b".into(), self.b.view_mut().into_dyn()),
            ]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::Toy;
    use super::*;
    use ndarray::{array, Array1, Array2};

    fn toy(v: f64) -> Toy {
        Toy {
            w: Array2::from_elem((2, 3), v),
            b: Array1::from_elem(3, v),
        }
    }

    #[test]
    fn momentum_boundaries() {
        let q = toy(0.0);
        let mut k = toy(1.0);
        momentum_update(&mut k, &q, 0.999).unwrap();
        assert!(k.w.iter().all(|&x| (x - 0.999).abs() < 1e-15));
        momentum_update(&mut k, &q, 0.0).unwrap();
        assert_eq!(k, q);
        assert!(momentum_update(&mut k, &q, 1.0).is_err());
    }

    #[test]
    fn momentum_shape_mismatch() {
        let q = Toy {
            w: Array2::zeros((3, 3)),
            b: Array1::zeros(3),
        };
        let mut k = toy(1.0);
        assert!(matches!(momentum_update(&mut k, &q, 0.5), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = Toy {
            w: array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]],
            b: array![2.0, 2.0, -2.0],
        };
        let mut opt = Adam::new(
            &p,
            AdamConfig {
                lr: 0.05,
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        for _ in 0..500 {
            let g = p.clone(); // gradient of ||p||^2 / 2
            opt.step(&mut p, &g).unwrap();
        }
        assert!(global_norm(&p) < 0.05, "{}", global_norm(&p));
    }

    #[test]
    fn zero_parameter_stays_zero_under_decay() {
        let mut p = toy(0.0);
        let mut opt = Adam::new(&p, AdamConfig::default());
        opt.step(&mut p, &toy(0.0)).unwrap();
        assert_eq!(p, toy(0.0));
    }
}
