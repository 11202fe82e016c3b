//! Instruction normalization, fixed-length padding and the token vocabulary.
//!
//! Rules, in order of precedence:
//! 1. operands known (or heuristically matched) to be addresses become
//!    `inaddress` / `ouraddress` depending on function scope;
//! 2. a `{ ... }` register-list span collapses to `Pregister`;
//! 3. numeric and string literals become `IMM` (inner literals of memory
//!    operands are rewritten in place, e.g. `[rax+IMM]`).
//!
//! Plain tokens are lower-cased and every instruction is padded or
//! truncated to one operation plus [`OPERAND_SLOTS`] operands.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RawInstruction};
use crate::error::{Error, Result};

pub const OPERAND_SLOTS: usize = 4;
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

pub const IMM: &str = "IMM";
pub const IN_ADDRESS: &str = "inaddress";
pub const OUT_ADDRESS: &str = "ouraddress";
pub const PREGISTER: &str = "Pregister";

/// Bumped whenever the normalization rules change token output.
pub const VOCAB_VERSION: u32 = 1;

pub const DEFAULT_ADDRESS_PATTERN: &str = r"^0x[0-9a-f]{6,}$";

static LITERAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^(#?-?(0x[0-9a-f]+|[0-9]+)|"[^"]*"|'[^']*')$"#).unwrap()
});
static INNER_LITERAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"#?-?\b(0x[0-9a-f]+|[0-9]+)\b").unwrap());

fn is_special(tok: &str) -> bool {
    matches!(tok, IMM | IN_ADDRESS | OUT_ADDRESS | PREGISTER | PAD)
}

/// Lower-cases `tok` while keeping embedded `IMM` markers intact.
fn lower_preserving_imm(tok: &str) -> String {
    tok.split(IMM)
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(IMM)
}

#[derive(Debug, Clone)]
pub struct NormalizerConfig {
    /// Untagged operands matching this are treated as out-of-function addresses.
    pub address_pattern: Regex,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            address_pattern: Regex::new(DEFAULT_ADDRESS_PATTERN).unwrap(),
        }
    }
}

impl NormalizerConfig {
    pub fn with_address_pattern(pattern: &str) -> Result<Self> {
        Regex::new(pattern)
            .map(|address_pattern| Self { address_pattern })
            .map_err(|e| Error::Precondition(format!("bad address pattern: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedInstruction {
    pub operation: String,
    pub operands: [String; OPERAND_SLOTS],
}

impl NormalizedInstruction {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.operation.as_str()).chain(self.operands.iter().map(String::as_str))
    }

    /// The padded five-token form, usable as normalizer input again.
    pub fn to_raw(&self) -> RawInstruction {
        RawInstruction::new(self.tokens().map(str::to_string))
    }
}

pub fn normalize_instruction(instr: &RawInstruction, config: &NormalizerConfig) -> Result<NormalizedInstruction> {
    if instr.tokens.is_empty() {
        return Err(Error::Precondition("cannot normalize an empty instruction".into()));
    }
    let inside = instr.in_function_targets.as_ref();
    let outside = instr.out_function_targets.as_ref();
    let tagged = instr.has_tags();

    let mut operands = Vec::new();
    let mut i = 1;
    while i < instr.tokens.len() {
        let raw = instr.tokens[i].as_str();
        if raw == PAD {
            i += 1;
            continue;
        }
        let lowered = raw.to_lowercase();
        if inside.is_some_and(|s| s.contains(&i)) {
            operands.push(IN_ADDRESS.to_string());
        } else if outside.is_some_and(|s| s.contains(&i)) || (!tagged && config.address_pattern.is_match(&lowered)) {
            operands.push(OUT_ADDRESS.to_string());
        } else if raw.starts_with('{') {
            // maximal span up to the closing brace (or end of instruction)
            let mut j = i;
            while j < instr.tokens.len() && !instr.tokens[j].ends_with('}') {
                j += 1;
            }
            operands.push(PREGISTER.to_string());
            i = j + 1;
            continue;
        } else if is_special(raw) {
            operands.push(raw.to_string());
        } else if LITERAL.is_match(&lowered) {
            operands.push(IMM.to_string());
        } else {
            let lowered = lower_preserving_imm(raw);
            operands.push(INNER_LITERAL.replace_all(&lowered, IMM).into_owned());
        }
        i += 1;
    }
    operands.truncate(OPERAND_SLOTS);
    operands.resize(OPERAND_SLOTS, PAD.to_string());

    let op = &instr.tokens[0];
    let operation = if is_special(op) { op.clone() } else { op.to_lowercase() };
    Ok(NormalizedInstruction {
        operation,
        operands: operands.try_into().expect("resized to OPERAND_SLOTS"),
    })
}

/// Token id pair for one instruction: operation id plus operand-slot ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedInstruction {
    pub op: u32,
    pub operands: [u32; OPERAND_SLOTS],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub ops: BTreeMap<String, u32>,
    pub operands: BTreeMap<String, u32>,
    pub version: u32,
}

fn dense_index(tokens: BTreeSet<String>) -> BTreeMap<String, u32> {
    let mut index = BTreeMap::from([(PAD.to_string(), PAD_ID), (UNK.to_string(), UNK_ID)]);
    for tok in tokens {
        if tok != PAD && tok != UNK {
            let id = index.len() as u32;
            index.insert(tok, id);
        }
    }
    index
}

impl Vocab {
    pub fn from_instructions<'a>(instrs: impl IntoIterator<Item = &'a NormalizedInstruction>) -> Self {
        let mut ops = BTreeSet::new();
        let mut operands = BTreeSet::new();
        for ins in instrs {
            ops.insert(ins.operation.clone());
            operands.extend(ins.operands.iter().cloned());
        }
        Self {
            ops: dense_index(ops),
            operands: dense_index(operands),
            version: VOCAB_VERSION,
        }
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn operand_count(&self) -> usize {
        self.operands.len()
    }

    pub fn encode(&self, n: &NormalizedInstruction) -> EncodedInstruction {
        let lookup = |index: &BTreeMap<String, u32>, tok: &str| index.get(tok).copied().unwrap_or(UNK_ID);
        EncodedInstruction {
            op: lookup(&self.ops, &n.operation),
            operands: std::array::from_fn(|k| lookup(&self.operands, &n.operands[k])),
        }
    }

    pub fn decode(&self, e: &EncodedInstruction) -> NormalizedInstruction {
        let reverse = |index: &BTreeMap<String, u32>, id: u32| {
            index
                .iter()
                .find(|(_, &v)| v == id)
                .map(|(k, _)| k.clone())
                .unwrap_or_else(|| UNK.to_string())
        };
        NormalizedInstruction {
            operation: reverse(&self.ops, e.op),
            operands: std::array::from_fn(|k| reverse(&self.operands, e.operands[k])),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: Vocab = serde_json::from_str(s)?;
        v.check()?;
        Ok(v)
    }

    fn check(&self) -> Result<()> {
        for (name, index) in [("ops", &self.ops), ("operands", &self.operands)] {
            if index.get(PAD) != Some(&PAD_ID) || index.get(UNK) != Some(&UNK_ID) {
                return Err(Error::Precondition(format!("{name} index lacks reserved PAD/UNK ids")));
            }
            let ids: BTreeSet<u32> = index.values().copied().collect();
            if ids.len() != index.len() || ids.last().copied() != Some(index.len() as u32 - 1) {
                return Err(Error::Precondition(format!("{name} ids are not dense")));
            }
        }
        Ok(())
    }
}

/// Shared cross-architecture vocabulary over every instruction in `corpus`.
pub fn build_vocab(corpus: &Corpus, config: &NormalizerConfig) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut normalized = Vec::new();
    for v in corpus.variants() {
        for b in &v.acfg.blocks {
            for ins in &b.instructions {
                normalized.push(normalize_instruction(ins, config)?);
            }
        }
    }
    Ok(Vocab::from_instructions(&normalized))
}

pub fn encode_instruction(n: &NormalizedInstruction, vocab: &Vocab) -> EncodedInstruction {
    vocab.encode(n)
}
