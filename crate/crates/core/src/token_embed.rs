//! Instruction embeddings: separate operation and operand tables, with an
//! instruction vector formed as `op_row || sum(operand_rows)` (width `2d`).

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::normalizer::{EncodedInstruction, PAD_ID};
use crate::params::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingTable {
    pub op_table: Array2<f64>,
    /// Row 0 (PAD) is all zeros and never trained.
    pub operand_table: Array2<f64>,
}

impl TokenEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.op_table.ncols()
    }

    pub fn instruction_width(&self) -> usize {
        2 * self.dim()
    }

    fn check_ids(&self, ins: &EncodedInstruction) -> Result<()> {
        let (n_ops, n_operands) = (self.op_table.nrows(), self.operand_table.nrows());
        if ins.op as usize >= n_ops {
            return Err(Error::IndexOutOfBounds {
                what: "operation id",
                index: ins.op as usize,
                len: n_ops,
            });
        }
        if let Some(&bad) = ins.operands.iter().find(|&&id| id as usize >= n_operands) {
            return Err(Error::IndexOutOfBounds {
                what: "operand id",
                index: bad as usize,
                len: n_operands,
            });
        }
        Ok(())
    }

    pub fn embed_instruction(&self, ins: &EncodedInstruction) -> Result<Array1<f64>> {
        self.check_ids(ins)?;
        let d = self.dim();
        let mut out = Array1::zeros(2 * d);
        out.slice_mut(s![..d]).assign(&self.op_table.row(ins.op as usize));
        let mut sum = out.slice_mut(s![d..]);
        for &id in &ins.operands {
            sum += &self.operand_table.row(id as usize);
        }
        Ok(out)
    }

    /// Stacks instruction embeddings into an `n x 2d` matrix.
    pub fn embed_sequence(&self, instrs: &[EncodedInstruction]) -> Result<Array2<f64>> {
        let d = self.dim();
        let mut out = Array2::zeros((instrs.len(), 2 * d));
        for (mut row, ins) in out.outer_iter_mut().zip(instrs) {
            self.check_ids(ins)?;
            row.slice_mut(s![..d]).assign(&self.op_table.row(ins.op as usize));
            let mut sum = row.slice_mut(s![d..]);
            for &id in &ins.operands {
                if id != PAD_ID {
                    sum += &self.operand_table.row(id as usize);
                }
            }
        }
        Ok(out)
    }

    /// Accumulates `d_embeds` (gradient w.r.t. `embed_sequence` output) into
    /// `grad`. The PAD operand row receives nothing.
    pub fn accumulate_grad(&self, instrs: &[EncodedInstruction], d_embeds: ArrayView2<f64>, grad: &mut TokenEmbeddingTable) {
        let d = self.dim();
        for (row, ins) in d_embeds.outer_iter().zip(instrs) {
            let mut op = grad.op_table.row_mut(ins.op as usize);
            op += &row.slice(s![..d]);
            for &id in &ins.operands {
                if id != PAD_ID {
                    let mut r = grad.operand_table.row_mut(id as usize);
                    r += &row.slice(s![d..]);
                }
            }
        }
    }
}

impl ParamSet for TokenEmbeddingTable {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("op_table".into(), self.op_table.view().into_dyn()),
            ("operand_table".into(), self.operand_table.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("op_table".into(), self.op_table.view_mut().into_dyn()),
            ("operand_table".into(), self.operand_table.view_mut().into_dyn()),
        ]
    }
}

/// Uniform(-1/sqrt(d), 1/sqrt(d)) tables with a zeroed PAD operand row.
pub fn init_tables(op_vocab_size: usize, operand_vocab_size: usize, d: usize, seed: u64) -> Result<TokenEmbeddingTable> {
    if op_vocab_size < 2 || operand_vocab_size < 2 || d == 0 {
        return Err(Error::Precondition(format!(
            "token tables need >= 2 rows each and d >= 1 (got {op_vocab_size}, {operand_vocab_size}, {d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut draw = |rows: usize| Array2::from_shape_simple_fn((rows, d), || rng.gen_range(-bound..=bound));
    let op_table = draw(op_vocab_size);
    let mut operand_table = draw(operand_vocab_size);
    operand_table.row_mut(PAD_ID as usize).fill(0.0);
    Ok(TokenEmbeddingTable {
        op_table,
        operand_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn ins(op: u32, operands: [u32; 4]) -> EncodedInstruction {
        EncodedInstruction { op, operands }
    }

    fn hand_table() -> TokenEmbeddingTable {
        TokenEmbeddingTable {
            op_table: array![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
            operand_table: array![[0.0, 0.0], [0.0, 0.0], [0.5, 0.5], [-0.5, 1.5]],
        }
    }

    #[test]
    fn hand_arithmetic() {
        let out = hand_table().embed_instruction(&ins(2, [2, 3, 0, 0])).unwrap();
        assert_eq!(out, array![1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_pad_gives_zero_operand_half() {
        let t = init_tables(5, 6, 3, 1).unwrap();
        let out = t.embed_instruction(&ins(3, [0, 0, 0, 0])).unwrap();
        assert_eq!(out.slice(s![..3]), t.op_table.row(3));
        assert!(out.slice(s![3..]).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn operand_order_is_irrelevant() {
        let t = init_tables(5, 6, 3, 2).unwrap();
        let a = t.embed_instruction(&ins(2, [4, 5, 0, 0])).unwrap();
        let b = t.embed_instruction(&ins(2, [5, 4, 0, 0])).unwrap();
        assert!((&a - &b).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn out_of_bounds_ids() {
        let t = init_tables(3, 3, 2, 0).unwrap();
        assert!(matches!(t.embed_instruction(&ins(3, [0; 4])), Err(Error::IndexOutOfBounds { .. })));
        assert!(matches!(t.embed_instruction(&ins(0, [0, 9, 0, 0])), Err(Error::IndexOutOfBounds { .. })));
    }

    #[test]
    fn init_properties() {
        let a = init_tables(10, 12, 16, 42).unwrap();
        assert_eq!(a, init_tables(10, 12, 16, 42).unwrap());
        assert!(a.operand_table.row(0).iter().all(|&x| x == 0.0));
        let bound = 1.0 / 4.0;
        assert!(a.op_table.iter().chain(a.operand_table.iter()).all(|x| x.abs() <= bound));
        assert!(init_tables(1, 4, 2, 0).is_err());
        assert!(init_tables(4, 4, 0, 0).is_err());
    }

    #[test]
    fn sequence_matches_single() {
        let t = init_tables(6, 7, 4, 3).unwrap();
        let seq = [ins(2, [3, 4, 0, 0]), ins(5, [1, 6, 6, 2])];
        let m = t.embed_sequence(&seq).unwrap();
        for (row, i) in m.outer_iter().zip(&seq) {
            assert_eq!(row, t.embed_instruction(i).unwrap());
        }
    }

    #[test]
    fn pad_row_gets_no_gradient() {
        let t = init_tables(4, 4, 2, 3).unwrap();
        let seq = [ins(2, [3, 0, 0, 0])];
        let mut g = crate::params::zeros_like(&t);
        t.accumulate_grad(&seq, Array2::ones((1, 4)).view(), &mut g);
        assert!(g.operand_table.row(0).iter().all(|&x| x == 0.0));
        assert_eq!(g.operand_table.row(3), array![1.0, 1.0]);
        assert_eq!(g.op_table.row(2), array![1.0, 1.0]);
    }
}
