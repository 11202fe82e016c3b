//! Strand CNN block encoder.
//!
//! Convolutions of several window sizes slide over a block's instruction
//! embeddings; each filter is globally max-pooled, and the pooled strand
//! features are concatenated with the mean instruction embedding. Blocks
//! shorter than the largest window are zero-padded (the mean ignores padding).

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{uniform_matrix, uniform_vector, Activation};
use crate::params::ParamSet;

pub const MAX_WINDOW: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct StrandCnnParams {
    pub windows: Vec<usize>,
    /// One `filters x (h * width)` matrix per window size; a window is the
    /// row-major concatenation of `h` instruction embeddings.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl StrandCnnParams {
    pub fn filters_per_size(&self) -> usize {
        self.weights[0].nrows()
    }

    /// Width of one instruction embedding (`2d`).
    pub fn input_width(&self) -> usize {
        self.weights[0].ncols() / self.windows[0]
    }

    pub fn output_width(&self) -> usize {
        self.windows.len() * self.filters_per_size() + self.input_width()
    }

    pub fn max_window(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(1)
    }
}

impl ParamSet for StrandCnnParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = Vec::new();
        for (h, (w, b)) in self.windows.iter().zip(self.weights.iter().zip(&self.biases)) {
            out.push((format!("w{h}"), w.view().into_dyn()));
            out.push((format!("b{h}"), b.view().into_dyn()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = Vec::new();
        for (h, (w, b)) in self.windows.iter().zip(self.weights.iter_mut().zip(self.biases.iter_mut())) {
            out.push((format!("w{h}"), w.view_mut().into_dyn()));
            out.push((format!("b{h}"), b.view_mut().into_dyn()));
        }
        out
    }
}

fn check_windows(windows: &[usize]) -> Result<()> {
    if windows.is_empty() || windows.contains(&0) {
        return Err(Error::Precondition("window sizes must be non-empty and positive".into()));
    }
    if let Some(&h) = windows.iter().find(|&&h| h > MAX_WINDOW) {
        return Err(Error::Precondition(format!("window size {h} exceeds {MAX_WINDOW}")));
    }
    Ok(())
}

/// Fan-in scaled uniform init: weights in `±1/sqrt(h * 2d)`; `d` is the token
/// embedding width.
pub fn init_strand_params(
    windows: &[usize],
    filters_per_size: usize,
    d: usize,
    activation: Activation,
    seed: u64,
) -> Result<StrandCnnParams> {
    check_windows(windows)?;
    if filters_per_size == 0 || d == 0 {
        return Err(Error::Precondition("filters and d must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = 2 * d;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for &h in windows {
        let bound = 1.0 / ((h * width) as f64).sqrt();
        weights.push(uniform_matrix(&mut rng, filters_per_size, h * width, bound));
        biases.push(uniform_vector(&mut rng, filters_per_size, bound));
    }
    Ok(StrandCnnParams {
        windows: windows.to_vec(),
        weights,
        biases,
        activation,
    })
}

#[derive(Debug, Clone)]
struct WindowCache {
    inputs: Array2<f64>,
    outputs: Array2<f64>,
    /// Per block and filter: global window row achieving the max.
    argmax: Array2<usize>,
    /// For each window row: (block index, position within the padded block).
    origin: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct StrandCache {
    blocks: Vec<Range<usize>>,
    n_rows: usize,
    per_size: Vec<WindowCache>,
}

fn validate_blocks(params: &StrandCnnParams, x: ArrayView2<f64>, blocks: &[Range<usize>]) -> Result<()> {
    check_windows(&params.windows)?;
    if x.ncols() != params.input_width() {
        return Err(Error::ShapeMismatch(format!(
            "instruction width {} vs strand input width {}",
            x.ncols(),
            params.input_width()
        )));
    }
    for r in blocks {
        if r.is_empty() {
            return Err(Error::Precondition("cannot encode an empty block".into()));
        }
        if r.end > x.nrows() {
            return Err(Error::IndexOutOfBounds {
                what: "block row",
                index: r.end - 1,
                len: x.nrows(),
            });
        }
    }
    Ok(())
}

/// Encodes many blocks at once. `x` holds every instruction embedding and
/// `blocks[b]` is the row range belonging to block `b`.
pub fn forward_blocks(
    params: &StrandCnnParams,
    x: ArrayView2<f64>,
    blocks: &[Range<usize>],
) -> Result<(Array2<f64>, StrandCache)> {
    validate_blocks(params, x, blocks)?;
    let width = params.input_width();
    let filters = params.filters_per_size();
    let hmax = params.max_window();
    let mut out = Array2::zeros((blocks.len(), params.output_width()));
    let mut per_size = Vec::with_capacity(params.windows.len());

    for (t, &h) in params.windows.iter().enumerate() {
        let mut origin = Vec::new();
        for (b, r) in blocks.iter().enumerate() {
            let padded = r.len().max(hmax);
            origin.extend((0..=padded - h).map(|i| (b, i)));
        }
        let mut inputs = Array2::zeros((origin.len(), h * width));
        for (row, &(b, i)) in inputs.outer_iter_mut().zip(&origin) {
            let r = &blocks[b];
            let mut row = row;
            for j in 0..h {
                if i + j < r.len() {
                    row.slice_mut(s![j * width..(j + 1) * width])
                        .assign(&x.row(r.start + i + j));
                }
            }
        }
        let mut outputs = inputs.dot(&params.weights[t].t());
        outputs += &params.biases[t];
        outputs.mapv_inplace(|v| params.activation.apply(v));

        let mut argmax = Array2::zeros((blocks.len(), filters));
        let mut best = Array2::from_elem((blocks.len(), filters), f64::NEG_INFINITY);
        for (w, &(b, _)) in origin.iter().enumerate() {
            for f in 0..filters {
                let v = outputs[[w, f]];
                if v > best[[b, f]] {
                    best[[b, f]] = v;
                    argmax[[b, f]] = w;
                }
            }
        }
        out.slice_mut(s![.., t * filters..(t + 1) * filters]).assign(&best);
        per_size.push(WindowCache {
            inputs,
            outputs,
            argmax,
            origin,
        });
    }

    let mean_at = params.windows.len() * filters;
    for (b, r) in blocks.iter().enumerate() {
        let mean = x.slice(s![r.clone(), ..]).mean_axis(Axis(0)).expect("block is non-empty");
        out.slice_mut(s![b, mean_at..]).assign(&mean);
    }

    Ok((
        out,
        StrandCache {
            blocks: blocks.to_vec(),
            n_rows: x.nrows(),
            per_size,
        },
    ))
}

/// Gradients w.r.t. the parameters and w.r.t. the instruction rows.
pub fn backward_blocks(params: &StrandCnnParams, cache: &StrandCache, d_out: ArrayView2<f64>) -> (StrandCnnParams, Array2<f64>) {
    let width = params.input_width();
    let filters = params.filters_per_size();
    let mut grads = crate::params::zeros_like(params);
    let mut dx = Array2::zeros((cache.n_rows, width));

    for (t, &h) in params.windows.iter().enumerate() {
        let wc = &cache.per_size[t];
        let mut dpre = Array2::zeros(wc.outputs.raw_dim());
        for b in 0..cache.blocks.len() {
            for f in 0..filters {
                let w = wc.argmax[[b, f]];
                dpre[[w, f]] += d_out[[b, t * filters + f]] * params.activation.grad_from_output(wc.outputs[[w, f]]);
            }
        }
        grads.weights[t] = dpre.t().dot(&wc.inputs);
        grads.biases[t] = dpre.sum_axis(Axis(0));
        let dwin = dpre.dot(&params.weights[t]);
        for (row, &(b, i)) in dwin.outer_iter().zip(&wc.origin) {
            let r = &cache.blocks[b];
            for j in 0..h {
                if i + j < r.len() {
                    let mut target = dx.row_mut(r.start + i + j);
                    target += &row.slice(s![j * width..(j + 1) * width]);
                }
            }
        }
    }

    let mean_at = params.windows.len() * filters;
    for (b, r) in cache.blocks.iter().enumerate() {
        let share = &d_out.slice(s![b, mean_at..]) / r.len() as f64;
        for i in r.clone() {
            let mut target = dx.row_mut(i);
            target += &share;
        }
    }
    (grads, dx)
}

/// Encodes a single block given its `n x 2d` instruction embeddings.
pub fn encode_block(instr_embeds: ArrayView2<f64>, params: &StrandCnnParams) -> Result<Array1<f64>> {
    let whole = 0..instr_embeds.nrows();
    let (out, _) = forward_blocks(params, instr_embeds, std::slice::from_ref(&whole))?;
    Ok(out.row(0).to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn hand_params() -> StrandCnnParams {
        StrandCnnParams {
            windows: vec![2],
            weights: vec![array![[1.0, 0.0, 0.0, 1.0]]],
            biases: vec![array![0.0]],
            activation: Activation::Identity,
        }
    }

    #[test]
    fn hand_evaluated_convolution() {
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let out = encode_block(x.view(), &hand_params()).unwrap();
        // windows: 1 + 4 = 5 and 3 + 6 = 9, max 9; then the mean (3, 4)
        assert_eq!(out, array![9.0, 3.0, 4.0]);
    }

    #[test]
    fn single_instruction_block_mean_is_exact() {
        let p = init_strand_params(&[2, 3, 4], 5, 3, Activation::Tanh, 1).unwrap();
        let x = array![[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]];
        let out = encode_block(x.view(), &p).unwrap();
        assert_eq!(out.len(), 3 * 5 + 6);
        assert_eq!(out.slice(s![15..]), x.row(0));
    }

    #[test]
    fn zero_inputs_zero_bias_give_zero_strands() {
        let mut p = init_strand_params(&[2, 3, 4], 4, 2, Activation::Tanh, 3).unwrap();
        for b in &mut p.biases {
            b.fill(0.0);
        }
        let out = encode_block(Array2::zeros((6, 4)).view(), &p).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_contract() {
        let a = init_strand_params(&[2, 3, 4], 8, 4, Activation::Tanh, 9).unwrap();
        assert_eq!(a, init_strand_params(&[2, 3, 4], 8, 4, Activation::Tanh, 9).unwrap());
        for (h, w) in a.windows.iter().zip(&a.weights) {
            let bound = 1.0 / ((h * 8) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= bound));
        }
        assert!(init_strand_params(&[2, 5], 8, 4, Activation::Tanh, 9).is_err());
    }

    #[test]
    fn empty_block_rejected() {
        let p = init_strand_params(&[2], 2, 1, Activation::Tanh, 0).unwrap();
        assert!(encode_block(Array2::zeros((0, 2)).view(), &p).is_err());
    }

    #[test]
    fn output_width_constant() {
        let p = init_strand_params(&[2, 3, 4], 6, 2, Activation::Tanh, 0).unwrap();
        for n in 1..12 {
            let out = encode_block(Array2::ones((n, 4)).view(), &p).unwrap();
            assert_eq!(out.len(), p.output_width());
        }
    }

    #[test]
    fn batched_equals_individual() {
        let p = init_strand_params(&[2, 3, 4], 6, 2, Activation::Tanh, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = uniform_matrix(&mut rng, 17, 4, 1.0);
        let blocks = vec![0..1, 1..6, 6..9, 9..17];
        let (all, _) = forward_blocks(&p, x.view(), &blocks).unwrap();
        for (b, r) in blocks.iter().enumerate() {
            let single = encode_block(x.slice(s![r.clone(), ..]), &p).unwrap();
            assert_eq!(all.row(b), single);
        }
    }

    #[test]
    fn appended_zero_row_keeps_earlier_windows() {
        let p = init_strand_params(&[2, 3, 4], 6, 2, Activation::Tanh, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = uniform_matrix(&mut rng, 7, 4, 1.0);
        let mut longer = Array2::zeros((8, 4));
        longer.slice_mut(s![..7, ..]).assign(&x);
        let a = encode_block(x.view(), &p).unwrap();
        let b = encode_block(longer.view(), &p).unwrap();
        let strands = 18;
        for f in 0..strands {
            assert!(b[f] >= a[f] - 1e-15);
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = init_strand_params(&[2, 3, 4], 3, 2, Activation::Tanh, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = uniform_matrix(&mut rng, 7, 4, 1.0);
        let blocks = vec![0..2, 2..7];
        let weights = uniform_matrix(&mut rng, 2, p.output_width(), 1.0);
        let objective = |p: &StrandCnnParams, x: &Array2<f64>| {
            let (out, _) = forward_blocks(p, x.view(), &blocks).unwrap();
            (&out * &weights).sum()
        };
        let (_, cache) = forward_blocks(&p, x.view(), &blocks).unwrap();
        let (g, dx) = backward_blocks(&p, &cache, weights.view());

        let eps = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / denom <= 1e-4, "{analytic} vs {numeric}");
        };
        for t in 0..p.windows.len() {
            for _ in 0..10 {
                let (r, c) = (rng.gen_range(0..3), rng.gen_range(0..p.weights[t].ncols()));
                let mut hi = p.clone();
                hi.weights[t][[r, c]] += eps;
                let mut lo = p.clone();
                lo.weights[t][[r, c]] -= eps;
                check(g.weights[t][[r, c]], (objective(&hi, &x) - objective(&lo, &x)) / (2.0 * eps));
            }
            for f in 0..3 {
                let mut hi = p.clone();
                hi.biases[t][f] += eps;
                let mut lo = p.clone();
                lo.biases[t][f] -= eps;
                check(g.biases[t][f], (objective(&hi, &x) - objective(&lo, &x)) / (2.0 * eps));
            }
        }
        for i in 0..7 {
            for j in 0..4 {
                let mut hi = x.clone();
                hi[[i, j]] += eps;
                let mut lo = x.clone();
                lo[[i, j]] -= eps;
                check(dx[[i, j]], (objective(&p, &hi) - objective(&p, &lo)) / (2.0 * eps));
            }
        }
    }
}
