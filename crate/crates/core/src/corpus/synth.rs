//! Deterministic pseudo-assembly corpus generator.
//!
//! Each source function is a random template CFG over abstract operation
//! classes. A variant lowers the template to one of six pseudo ISAs
//! (arch x bitness) and applies semantics-preserving perturbations keyed by
//! the variant index: register renaming, NOP padding, block splitting,
//! literal replacement and mnemonic synonyms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Acfg, Arch, BasicBlock, Bitness, Corpus, FunctionVariant, OptLevel, RawInstruction};
use crate::error::{Error, Result};

/// Upper bound on blocks added to a template by splitting.
pub const MAX_SPLITS: usize = 2;

const NUM_REGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Move,
    LoadImm,
    Load,
    Store,
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Cmp,
    Call,
    Push,
    Pop,
}

const BODY_CLASSES: [Class; 16] = [
    Class::Move,
    Class::LoadImm,
    Class::Load,
    Class::Store,
    Class::Add,
    Class::Sub,
    Class::Mul,
    Class::And,
    Class::Or,
    Class::Xor,
    Class::Shl,
    Class::Shr,
    Class::Cmp,
    Class::Call,
    Class::Push,
    Class::Pop,
];

#[derive(Debug, Clone)]
enum Operand {
    Reg(usize),
    Imm,
    RegList(Vec<usize>),
}

#[derive(Debug, Clone)]
struct AbstractInstr {
    class: Class,
    operands: Vec<Operand>,
}

#[derive(Debug, Clone, Copy)]
enum Terminator {
    Fallthrough,
    Branch { cond: usize, target: usize },
    Jump { target: usize },
    Ret,
}

#[derive(Debug, Clone)]
struct TemplateBlock {
    body: Vec<AbstractInstr>,
    term: Terminator,
}

#[derive(Debug, Clone)]
struct Template {
    blocks: Vec<TemplateBlock>,
}

impl Template {
    fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            match b.term {
                Terminator::Fallthrough => edges.push((i, i + 1)),
                Terminator::Branch { target, .. } => {
                    edges.push((i, i + 1));
                    edges.push((i, target));
                }
                Terminator::Jump { target } => edges.push((i, target)),
                Terminator::Ret => {}
            }
        }
        edges
    }
}

fn random_template(rng: &mut ChaCha8Rng) -> Template {
    let n_blocks = rng.gen_range(3..=15);
    let blocks = (0..n_blocks)
        .map(|i| {
            let n_instr = rng.gen_range(2..=20);
            let term = if i == n_blocks - 1 {
                Terminator::Ret
            } else {
                match rng.gen_range(0..4) {
                    0 => Terminator::Fallthrough,
                    1 => Terminator::Jump {
                        target: rng.gen_range(0..n_blocks),
                    },
                    _ => Terminator::Branch {
                        cond: rng.gen_range(0..4),
                        target: rng.gen_range(0..n_blocks),
                    },
                }
            };
            let body_len = match term {
                Terminator::Fallthrough => n_instr,
                _ => n_instr - 1,
            };
            let body = (0..body_len).map(|_| random_instr(rng)).collect();
            TemplateBlock { body, term }
        })
        .collect();
    Template { blocks }
}

fn random_instr(rng: &mut ChaCha8Rng) -> AbstractInstr {
    let class = *BODY_CLASSES.choose(rng).unwrap();
    let reg = |rng: &mut ChaCha8Rng| Operand::Reg(rng.gen_range(0..NUM_REGS));
    let operands = match class {
        Class::Move | Class::Load | Class::Store => vec![reg(rng), reg(rng)],
        Class::LoadImm => vec![reg(rng), Operand::Imm],
        Class::Add | Class::Sub | Class::Mul | Class::And | Class::Or | Class::Xor => {
            let src = if rng.gen_bool(0.3) { Operand::Imm } else { reg(rng) };
            vec![reg(rng), reg(rng), src]
        }
        Class::Shl | Class::Shr => vec![reg(rng), reg(rng), Operand::Imm],
        Class::Cmp => {
            let rhs = if rng.gen_bool(0.4) { Operand::Imm } else { reg(rng) };
            vec![reg(rng), rhs]
        }
        Class::Call => vec![],
        Class::Push | Class::Pop => {
            let mut regs: Vec<usize> = (0..NUM_REGS).collect();
            regs.shuffle(rng);
            regs.truncate(rng.gen_range(1..=3));
            regs.sort_unstable();
            vec![Operand::RegList(regs)]
        }
    };
    AbstractInstr { class, operands }
}

/// One concrete pseudo ISA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Isa {
    arch: Arch,
    bitness: Bitness,
}

// Order chosen so that the first variants of a function span architectures.
const ISAS: [Isa; 6] = [
    Isa { arch: Arch::X86, bitness: Bitness::B64 },
    Isa { arch: Arch::Arm, bitness: Bitness::B32 },
    Isa { arch: Arch::Mips, bitness: Bitness::B64 },
    Isa { arch: Arch::X86, bitness: Bitness::B32 },
    Isa { arch: Arch::Arm, bitness: Bitness::B64 },
    Isa { arch: Arch::Mips, bitness: Bitness::B32 },
];

impl Isa {
    fn registers(self) -> [&'static str; NUM_REGS] {
        match (self.arch, self.bitness) {
            (Arch::X86, Bitness::B32) => ["eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp"],
            (Arch::X86, Bitness::B64) => ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "r8", "r9"],
            (Arch::Arm, Bitness::B32) => ["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7"],
            (Arch::Arm, Bitness::B64) => ["x19", "x20", "x21", "x22", "x23", "x24", "x25", "x26"],
            (Arch::Mips, Bitness::B32) => ["$t0", "$t1", "$t2", "$t3", "$t4", "$t5", "$t6", "$t7"],
            (Arch::Mips, Bitness::B64) => ["$s0", "$s1", "$s2", "$s3", "$s4", "$s5", "$s6", "$s7"],
        }
    }

    /// Mnemonic synonyms per class; the first entry is canonical.
    fn mnemonics(self, class: Class) -> &'static [&'static str] {
        use Class::*;
        match (self.arch, self.bitness) {
            (Arch::X86, Bitness::B32) => match class {
                Move | Load | Store => &["movl"],
                LoadImm => &["movl"],
                Add => &["addl", "leal"],
                Sub => &["subl"],
                Mul => &["imull"],
                And => &["andl"],
                Or => &["orl"],
                Xor => &["xorl"],
                Shl => &["shll", "sall"],
                Shr => &["shrl", "sarl"],
                Cmp => &["cmpl", "testl"],
                Call => &["calll"],
                Push => &["pushl"],
                Pop => &["popl"],
            },
            (Arch::X86, Bitness::B64) => match class {
                Move | Load | Store => &["movq"],
                LoadImm => &["movabsq", "movq"],
                Add => &["addq", "leaq"],
                Sub => &["subq"],
                Mul => &["imulq"],
                And => &["andq"],
                Or => &["orq"],
                Xor => &["xorq"],
                Shl => &["shlq", "salq"],
                Shr => &["shrq", "sarq"],
                Cmp => &["cmpq", "testq"],
                Call => &["callq"],
                Push => &["pushq"],
                Pop => &["popq"],
            },
            (Arch::Arm, Bitness::B32) => match class {
                Move => &["mov", "cpy"],
                LoadImm => &["movw", "mov"],
                Load => &["ldr"],
                Store => &["str"],
                Add => &["add", "adds"],
                Sub => &["sub", "subs"],
                Mul => &["mul"],
                And => &["and", "ands"],
                Or => &["orr"],
                Xor => &["eor"],
                Shl => &["lsl"],
                Shr => &["lsr", "asr"],
                Cmp => &["cmp", "tst"],
                Call => &["bl"],
                Push => &["push", "stmdb"],
                Pop => &["pop", "ldmia"],
            },
            (Arch::Arm, Bitness::B64) => match class {
                Move => &["mov.x"],
                LoadImm => &["movz", "movk"],
                Load => &["ldur", "ldr.x"],
                Store => &["stur", "str.x"],
                Add => &["add.x"],
                Sub => &["sub.x"],
                Mul => &["madd", "mul.x"],
                And => &["and.x"],
                Or => &["orr.x"],
                Xor => &["eor.x"],
                Shl => &["lsl.x", "ubfiz"],
                Shr => &["lsr.x", "ubfx"],
                Cmp => &["cmp.x", "ccmp"],
                Call => &["bl.x"],
                Push => &["stp"],
                Pop => &["ldp"],
            },
            (Arch::Mips, Bitness::B32) => match class {
                Move => &["move"],
                LoadImm => &["li", "addiu"],
                Load => &["lw"],
                Store => &["sw"],
                Add => &["addu", "add"],
                Sub => &["subu"],
                Mul => &["mul"],
                And => &["and"],
                Or => &["or"],
                Xor => &["xor"],
                Shl => &["sll"],
                Shr => &["srl", "sra"],
                Cmp => &["slt", "sltu"],
                Call => &["jal"],
                Push => &["sw"],
                Pop => &["lw"],
            },
            (Arch::Mips, Bitness::B64) => match class {
                Move => &["dmove"],
                LoadImm => &["dli", "daddiu"],
                Load => &["ld"],
                Store => &["sd"],
                Add => &["daddu", "dadd"],
                Sub => &["dsubu"],
                Mul => &["dmul"],
                And => &["and.d"],
                Or => &["or.d"],
                Xor => &["xor.d"],
                Shl => &["dsll"],
                Shr => &["dsrl", "dsra"],
                Cmp => &["slt.d", "sltu.d"],
                Call => &["jalr"],
                Push => &["sd"],
                Pop => &["ld"],
            },
        }
    }

    fn branch(self, cond: usize) -> &'static str {
        let table: [&str; 4] = match (self.arch, self.bitness) {
            (Arch::X86, _) => ["jne", "je", "jg", "jl"],
            (Arch::Arm, Bitness::B32) => ["bne", "beq", "bgt", "blt"],
            (Arch::Arm, Bitness::B64) => ["b.ne", "b.eq", "b.gt", "b.lt"],
            (Arch::Mips, Bitness::B32) => ["bne", "beq", "bgtz", "bltz"],
            (Arch::Mips, Bitness::B64) => ["bnel", "beql", "bgtzl", "bltzl"],
        };
        table[cond % 4]
    }

    fn jump(self) -> &'static str {
        match (self.arch, self.bitness) {
            (Arch::X86, _) => "jmp",
            (Arch::Arm, Bitness::B32) => "b",
            (Arch::Arm, Bitness::B64) => "b.x",
            (Arch::Mips, _) => "j",
        }
    }

    fn ret(self) -> Vec<&'static str> {
        match (self.arch, self.bitness) {
            (Arch::X86, Bitness::B32) => vec!["retl"],
            (Arch::X86, Bitness::B64) => vec!["retq"],
            (Arch::Arm, Bitness::B32) => vec!["bx", "lr"],
            (Arch::Arm, Bitness::B64) => vec!["ret"],
            (Arch::Mips, _) => vec!["jr", "$ra"],
        }
    }

    fn nop(self) -> &'static str {
        match self.arch {
            Arch::X86 => "nop",
            Arch::Arm => "nop",
            Arch::Mips => "ssnop",
        }
    }

    fn stack_pointer(self) -> &'static str {
        match (self.arch, self.bitness) {
            (Arch::X86, Bitness::B32) => "esp",
            (Arch::X86, Bitness::B64) => "rsp",
            (Arch::Arm, _) => "sp",
            (Arch::Mips, _) => "$sp",
        }
    }
}

/// Perturbation strength per optimization level.
struct Perturb {
    nop_prob: f64,
    synonym_prob: f64,
    max_splits: usize,
}

impl Perturb {
    fn for_opt(opt: OptLevel) -> Self {
        let (nop_prob, synonym_prob, max_splits) = match opt {
            OptLevel::O0 => (0.0, 0.1, 0),
            OptLevel::O1 => (0.05, 0.2, 1),
            OptLevel::O2 => (0.08, 0.3, MAX_SPLITS),
            OptLevel::O3 => (0.1, 0.3, MAX_SPLITS),
            OptLevel::Os => (0.02, 0.2, 1),
        };
        Self {
            nop_prob,
            synonym_prob,
            max_splits,
        }
    }
}

struct Lowering<'a> {
    isa: Isa,
    regmap: [usize; NUM_REGS],
    perturb: &'a Perturb,
    rng: ChaCha8Rng,
}

impl Lowering<'_> {
    fn reg(&self, r: usize) -> String {
        self.isa.registers()[self.regmap[r]].to_string()
    }

    fn imm(&mut self) -> String {
        let v: u32 = self.rng.gen_range(0..0x200);
        match self.isa.arch {
            Arch::Arm => format!("#0x{v:x}"),
            _ => format!("0x{v:x}"),
        }
    }

    fn offset(&mut self) -> u32 {
        self.rng.gen_range(0..64) * 4
    }

    fn mem(&mut self, base: usize) -> String {
        let off = self.offset();
        let base = self.reg(base);
        match self.isa.arch {
            Arch::X86 => format!("[{base}+0x{off:x}]"),
            Arch::Arm => format!("[{base},#0x{off:x}]"),
            Arch::Mips => format!("0x{off:x}({base})"),
        }
    }

    fn mnemonic(&mut self, class: Class) -> String {
        let options = self.isa.mnemonics(class);
        let pick = if options.len() > 1 && self.rng.gen_bool(self.perturb.synonym_prob) {
            self.rng.gen_range(1..options.len())
        } else {
            0
        };
        options[pick].to_string()
    }

    fn operand(&mut self, op: &Operand) -> String {
        match op {
            Operand::Reg(r) => self.reg(*r),
            Operand::Imm => self.imm(),
            Operand::RegList(_) => unreachable!("register lists are lowered per class"),
        }
    }

    fn lower(&mut self, ins: &AbstractInstr) -> Vec<RawInstruction> {
        let m = self.mnemonic(ins.class);
        let ops = &ins.operands;
        let x86 = self.isa.arch == Arch::X86;
        let tokens: Vec<String> = match ins.class {
            Class::Move | Class::LoadImm => {
                vec![m, self.operand(&ops[0]), self.operand(&ops[1])]
            }
            Class::Load => {
                let Operand::Reg(base) = ops[1] else { unreachable!() };
                vec![m, self.operand(&ops[0]), self.mem(base)]
            }
            Class::Store => {
                let Operand::Reg(base) = ops[0] else { unreachable!() };
                let mem = self.mem(base);
                if x86 {
                    vec![m, mem, self.operand(&ops[1])]
                } else {
                    vec![m, self.operand(&ops[1]), mem]
                }
            }
            Class::Add
            | Class::Sub
            | Class::Mul
            | Class::And
            | Class::Or
            | Class::Xor
            | Class::Shl
            | Class::Shr => {
                if x86 {
                    vec![m, self.operand(&ops[0]), self.operand(&ops[2])]
                } else {
                    vec![m, self.operand(&ops[0]), self.operand(&ops[1]), self.operand(&ops[2])]
                }
            }
            Class::Cmp => {
                if self.isa.arch == Arch::Mips {
                    vec![m, "$at".into(), self.operand(&ops[0]), self.operand(&ops[1])]
                } else {
                    vec![m, self.operand(&ops[0]), self.operand(&ops[1])]
                }
            }
            Class::Call => {
                let addr = format!("0x{:x}", self.rng.gen_range(0x40_0000u32..0x80_0000));
                return vec![RawInstruction::new([m, addr]).with_targets([], [1])];
            }
            Class::Push | Class::Pop => {
                let Operand::RegList(regs) = &ops[0] else { unreachable!() };
                return self.lower_reg_list(m, regs);
            }
        };
        vec![RawInstruction::new(tokens)]
    }

    fn lower_reg_list(&mut self, m: String, regs: &[usize]) -> Vec<RawInstruction> {
        let names: Vec<String> = regs.iter().map(|&r| self.reg(r)).collect();
        let sp = self.isa.stack_pointer();
        match (self.isa.arch, self.isa.bitness) {
            (Arch::Arm, Bitness::B32) => {
                let mut tokens = vec![m, "{".to_string()];
                tokens.extend(names);
                tokens.push("}".into());
                vec![RawInstruction::new(tokens)]
            }
            (Arch::Arm, Bitness::B64) => names
                .chunks(2)
                .map(|pair| {
                    let mut tokens = vec![m.clone()];
                    tokens.extend(pair.iter().cloned());
                    tokens.push(format!("[{sp},#-0x10]!"));
                    RawInstruction::new(tokens)
                })
                .collect(),
            (Arch::X86, _) => names
                .into_iter()
                .map(|r| RawInstruction::new([m.clone(), r]))
                .collect(),
            (Arch::Mips, _) => names
                .into_iter()
                .map(|r| {
                    let off = self.offset();
                    RawInstruction::new([m.clone(), r, format!("0x{off:x}({sp})")])
                })
                .collect(),
        }
    }

    fn terminator(&mut self, term: Terminator, target_addr: impl Fn(usize) -> String) -> Option<RawInstruction> {
        match term {
            Terminator::Fallthrough => None,
            Terminator::Branch { cond, target } => {
                let m = self.isa.branch(cond).to_string();
                let addr = target_addr(target);
                Some(if self.isa.arch == Arch::Mips {
                    let (ra, rb) = (self.rng.gen_range(0..NUM_REGS), self.rng.gen_range(0..NUM_REGS));
                    let (a, b) = (self.reg(ra), self.reg(rb));
                    RawInstruction::new([m, a, b, addr]).with_targets([3], [])
                } else {
                    RawInstruction::new([m, addr]).with_targets([1], [])
                })
            }
            Terminator::Jump { target } => Some(
                RawInstruction::new([self.isa.jump().to_string(), target_addr(target)])
                    .with_targets([1], []),
            ),
            Terminator::Ret => Some(RawInstruction::new(self.isa.ret())),
        }
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lower_variant(template: &Template, isa: Isa, opt: OptLevel, rng_seed: u64) -> Acfg {
    let perturb = Perturb::for_opt(opt);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut regmap: [usize; NUM_REGS] = std::array::from_fn(|i| i);
    regmap.shuffle(&mut rng);
    let base: u64 = 0x1_0000 + rng.gen_range(0..0x1000u64) * 0x100;
    let mut low = Lowering {
        isa,
        regmap,
        perturb: &perturb,
        rng,
    };

    // provisional block addresses, 4 bytes per template instruction
    let mut addrs = Vec::with_capacity(template.blocks.len());
    let mut cursor = base;
    for b in &template.blocks {
        addrs.push(cursor);
        cursor += 4 * (b.body.len() as u64 + 1);
    }

    let mut blocks: Vec<Vec<RawInstruction>> = template
        .blocks
        .iter()
        .map(|tb| {
            let mut out = Vec::new();
            for ins in &tb.body {
                if low.rng.gen_bool(perturb.nop_prob) {
                    out.push(RawInstruction::new([isa.nop()]));
                }
                out.extend(low.lower(ins));
            }
            if let Some(t) = low.terminator(tb.term, |i| format!("0x{:x}", addrs[i])) {
                out.push(t);
            }
            out
        })
        .collect();
    let mut edges = template.edges();

    let n_splits = low.rng.gen_range(0..=perturb.max_splits);
    for _ in 0..n_splits {
        let candidates: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i].len() >= 4).collect();
        let Some(&victim) = candidates.choose(&mut low.rng) else { break };
        let at = low.rng.gen_range(2..=blocks[victim].len() - 2);
        let tail = blocks[victim].split_off(at);
        let new_idx = blocks.len();
        blocks.push(tail);
        for e in edges.iter_mut() {
            if e.0 == victim {
                e.0 = new_idx;
            }
        }
        edges.push((victim, new_idx));
    }

    let blocks = blocks
        .into_iter()
        .map(|instructions| BasicBlock { instructions })
        .collect();
    Acfg::new(blocks, edges).expect("generated ACFG is valid")
}

/// Generates `n_functions` source functions with `variants_per_function`
/// compiled variants each. Pure function of its arguments.
pub fn synth_corpus(n_functions: usize, variants_per_function: usize, seed: u64) -> Result<Corpus> {
    if n_functions == 0 || variants_per_function == 0 {
        return Err(Error::Precondition(
            "synth_corpus needs at least one function and one variant".into(),
        ));
    }
    let mut variants = Vec::with_capacity(n_functions * variants_per_function);
    for f in 0..n_functions {
        let mut trng = ChaCha8Rng::seed_from_u64(mix(seed, f as u64, u64::MAX));
        let template = random_template(&mut trng);
        let function_id = format!("fn_{f:05}");
        for v in 0..variants_per_function {
            let isa = ISAS[v % ISAS.len()];
            let round = v / ISAS.len();
            let compiler = if round.is_multiple_of(2) { "gcc" } else { "clang" };
            let compiler_version = format!("{}", 7 + 2 * (round / 2));
            let opt = OptLevel::ALL[(mix(seed, f as u64, round as u64) % 5) as usize];
            let acfg = lower_variant(&template, isa, opt, mix(seed, f as u64, v as u64));
            variants.push(FunctionVariant {
                function_id: function_id.clone(),
                arch: isa.arch,
                bitness: isa.bitness,
                compiler: compiler.to_string(),
                compiler_version,
                opt_level: opt,
                acfg,
            });
        }
    }
    Corpus::new(variants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::write_corpus;

    fn bytes(c: &Corpus) -> Vec<u8> {
        let mut buf = Vec::new();
        write_corpus(c, &mut buf).unwrap();
        buf
    }

    #[test]
    fn minimal_corpus() {
        let c = synth_corpus(1, 1, 0).unwrap();
        assert_eq!(c.groups().len(), 1);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(synth_corpus(0, 1, 0).is_err());
        assert!(synth_corpus(1, 0, 0).is_err());
    }

    #[test]
    fn deterministic_bytes() {
        assert_eq!(bytes(&synth_corpus(5, 3, 9).unwrap()), bytes(&synth_corpus(5, 3, 9).unwrap()));
        assert_ne!(bytes(&synth_corpus(5, 3, 9).unwrap()), bytes(&synth_corpus(5, 3, 10).unwrap()));
    }

    #[test]
    fn variants_differ_but_share_block_count_within_split_bound() {
        let c = synth_corpus(50, 4, 3).unwrap();
        assert_eq!(c.len(), 200);
        for group in c.groups().values() {
            let vs: Vec<_> = group.iter().map(|&i| &c.variants()[i]).collect();
            let counts: Vec<usize> = vs.iter().map(|v| v.acfg.blocks.len()).collect();
            let lo = *counts.iter().min().unwrap();
            let hi = *counts.iter().max().unwrap();
            assert!(hi - lo <= MAX_SPLITS, "block counts {counts:?}");
            for i in 0..vs.len() {
                for j in i + 1..vs.len() {
                    assert_ne!(vs[i].acfg, vs[j].acfg);
                }
            }
        }
    }

    #[test]
    fn many_variants_keep_unique_keys() {
        let c = synth_corpus(2, 30, 1).unwrap();
        assert_eq!(c.len(), 60);
    }

    #[test]
    fn template_block_sizes_in_range() {
        let c = synth_corpus(30, 1, 5).unwrap();
        for v in c.variants() {
            // O0 variants are never split, so block counts equal the template's
            if v.opt_level == OptLevel::O0 {
                assert!((3..=15).contains(&v.acfg.blocks.len()));
            }
            assert!(v.acfg.blocks.iter().all(|b| !b.instructions.is_empty()));
        }
    }
}
