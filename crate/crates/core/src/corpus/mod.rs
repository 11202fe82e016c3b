//! Binary-function variants, their attributed control-flow graphs, and the
//! corpus that groups variants by source function.
//!
//! A [`Corpus`] is immutable once built. Positive pairs for contrastive
//! training are produced by sampling two compiled variants of the same
//! source function ([`Corpus::sample_positive_pair`]).

mod jsonl;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{load_corpus, parse_corpus, write_corpus};
pub use synth::synth_corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    X86,
    Arm,
    Mips,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::X86, Arch::Arm, Arch::Mips];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::X86 => "x86",
            Arch::Arm => "arm",
            Arch::Mips => "mips",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Bitness {
    B32,
    B64,
}

impl Bitness {
    pub fn bits(self) -> u8 {
        match self {
            Bitness::B32 => 32,
            Bitness::B64 => 64,
        }
    }
}

impl TryFrom<u8> for Bitness {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            32 => Ok(Bitness::B32),
            64 => Ok(Bitness::B64),
            other => Err(format!("bitness must be 32 or 64, got {other}")),
        }
    }
}

impl From<Bitness> for u8 {
    fn from(b: Bitness) -> u8 {
        b.bits()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
    Os,
}

impl OptLevel {
    pub const ALL: [OptLevel; 5] = [
        OptLevel::O0,
        OptLevel::O1,
        OptLevel::O2,
        OptLevel::O3,
        OptLevel::Os,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptLevel::O0 => "O0",
            OptLevel::O1 => "O1",
            OptLevel::O2 => "O2",
            OptLevel::O3 => "O3",
            OptLevel::Os => "Os",
        }
    }
}

/// One disassembled instruction before normalization.
///
/// `tokens[0]` is the mnemonic. The address-target sets hold token indices
/// known to reference addresses inside / outside the enclosing function;
/// `None` means the producer did not supply scope information.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawInstruction {
    pub tokens: Vec<String>,
    pub in_function_targets: Option<BTreeSet<usize>>,
    pub out_function_targets: Option<BTreeSet<usize>>,
}

impl RawInstruction {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
            in_function_targets: None,
            out_function_targets: None,
        }
    }

    pub fn with_targets(
        mut self,
        inside: impl IntoIterator<Item = usize>,
        outside: impl IntoIterator<Item = usize>,
    ) -> Self {
        self.in_function_targets = Some(inside.into_iter().collect());
        self.out_function_targets = Some(outside.into_iter().collect());
        self
    }

    pub fn has_tags(&self) -> bool {
        self.in_function_targets.is_some() || self.out_function_targets.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Precondition("instruction has no tokens".into()));
        }
        let len = self.tokens.len();
        let inside = self.in_function_targets.clone().unwrap_or_default();
        let outside = self.out_function_targets.clone().unwrap_or_default();
        if let Some(&bad) = inside.iter().chain(outside.iter()).find(|&&i| i >= len) {
            return Err(Error::IndexOutOfBounds {
                what: "address tag",
                index: bad,
                len,
            });
        }
        if let Some(both) = inside.intersection(&outside).next() {
            return Err(Error::Precondition(format!(
                "token {both} tagged as both inside and outside address"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BasicBlock {
    pub instructions: Vec<RawInstruction>,
}

/// Attributed control-flow graph: basic blocks plus directed edges.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Acfg {
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<(usize, usize)>,
}

impl Acfg {
    /// Validates the graph and collapses duplicate edges (self loops are kept).
    pub fn new(blocks: Vec<BasicBlock>, edges: Vec<(usize, usize)>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Precondition("ACFG has no blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.instructions.is_empty() {
                return Err(Error::Precondition(format!("block {i} is empty")));
            }
            for ins in &b.instructions {
                ins.validate()?;
            }
        }
        let n = blocks.len();
        let mut seen = BTreeSet::new();
        let mut unique = Vec::with_capacity(edges.len());
        for (s, t) in edges {
            for idx in [s, t] {
                if idx >= n {
                    return Err(Error::IndexOutOfBounds {
                        what: "edge endpoint",
                        index: idx,
                        len: n,
                    });
                }
            }
            if seen.insert((s, t)) {
                unique.push((s, t));
            }
        }
        Ok(Self {
            blocks,
            edges: unique,
        })
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }
}

/// Identity of one compiled variant; unique within a corpus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VariantKey {
    pub function_id: String,
    pub arch: Arch,
    pub bitness: Bitness,
    pub compiler: String,
    pub compiler_version: String,
    pub opt_level: OptLevel,
}

impl fmt::Display for VariantKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}@{}-{}/{}-{}/{}",
            self.function_id,
            self.arch.as_str(),
            self.bitness.bits(),
            self.compiler,
            self.compiler_version,
            self.opt_level.as_str()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FunctionVariant {
    pub function_id: String,
    pub arch: Arch,
    pub bitness: Bitness,
    pub compiler: String,
    pub compiler_version: String,
    pub opt_level: OptLevel,
    pub acfg: Acfg,
}

impl FunctionVariant {
    pub fn key(&self) -> VariantKey {
        VariantKey {
            function_id: self.function_id.clone(),
            arch: self.arch,
            bitness: self.bitness,
            compiler: self.compiler.clone(),
            compiler_version: self.compiler_version.clone(),
            opt_level: self.opt_level,
        }
    }
}

/// Whether a single-variant function may be paired with itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairPolicy {
    #[default]
    DistinctOnly,
    AllowSelfPairs,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    variants: Vec<FunctionVariant>,
    groups: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Builds the function-id grouping; rejects duplicate variant keys.
    pub fn new(variants: Vec<FunctionVariant>) -> Result<Self> {
        let mut keys = HashMap::with_capacity(variants.len());
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, v) in variants.iter().enumerate() {
            if keys.insert(v.key(), i).is_some() {
                return Err(Error::DuplicateVariant(v.key().to_string()));
            }
            groups.entry(v.function_id.clone()).or_default().push(i);
        }
        Ok(Self { variants, groups })
    }

    pub fn variants(&self) -> &[FunctionVariant] {
        &self.variants
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn function_ids(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn group(&self, function_id: &str) -> Result<&[usize]> {
        self.groups
            .get(function_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownFunction(function_id.to_string()))
    }

    /// Function ids usable for pair sampling under `policy`.
    pub fn trainable_ids(&self, policy: PairPolicy) -> Vec<String> {
        self.groups
            .iter()
            .filter(|(_, g)| g.len() >= 2 || policy == PairPolicy::AllowSelfPairs)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn subset(&self, ids: &[&String]) -> Corpus {
        let mut variants = Vec::new();
        for id in ids {
            for &i in &self.groups[*id] {
                variants.push(self.variants[i].clone());
            }
        }
        Corpus::new(variants).expect("subset of a valid corpus is valid")
    }

    /// Splits by function id into (train, val, test).
    ///
    /// Group counts are assigned with the largest-remainder rule; every part
    /// with a nonzero ratio receives at least one group.
    pub fn split(&self, ratios: (f64, f64, f64), seed: u64) -> Result<(Corpus, Corpus, Corpus)> {
        let r = [ratios.0, ratios.1, ratios.2];
        if r.iter().any(|x| !x.is_finite() || *x < 0.0) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Precondition(format!(
                "split ratios must be non-negative and sum to 1, got {r:?}"
            )));
        }
        let n = self.groups.len();
        let nonzero = r.iter().filter(|x| **x > 0.0).count();
        if n < nonzero {
            return Err(Error::InfeasibleSplit { groups: n, nonzero });
        }

        let mut counts = [0usize; 3];
        let mut remainders = Vec::with_capacity(3);
        for (i, ratio) in r.iter().enumerate() {
            let exact = ratio * n as f64;
            counts[i] = exact.floor() as usize;
            remainders.push((exact - exact.floor(), i));
        }
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = n - counts.iter().sum::<usize>();
        for &(_, i) in remainders.iter().cycle() {
            if left == 0 {
                break;
            }
            if r[i] > 0.0 {
                counts[i] += 1;
                left -= 1;
            }
        }
        for i in 0..3 {
            if r[i] > 0.0 && counts[i] == 0 {
                let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }

        let mut ids: Vec<&String> = self.groups.keys().collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (train, rest) = ids.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        Ok((self.subset(train), self.subset(val), self.subset(test)))
    }

    /// Index pair of two variants of `function_id`, uniform over distinct
    /// ordered pairs.
    pub fn sample_positive_indices<R: Rng + ?Sized>(
        &self,
        function_id: &str,
        policy: PairPolicy,
        rng: &mut R,
    ) -> Result<(usize, usize)> {
        let group = self.group(function_id)?;
        match group.len() {
            0 => unreachable!("groups are never empty"),
            1 if policy == PairPolicy::AllowSelfPairs => Ok((group[0], group[0])),
            1 => Err(Error::SingletonGroup(function_id.to_string())),
            n => {
                let a = rng.gen_range(0..n);
                let mut b = rng.gen_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                Ok((group[a], group[b]))
            }
        }
    }

    pub fn sample_positive_pair<R: Rng + ?Sized>(
        &self,
        function_id: &str,
        policy: PairPolicy,
        rng: &mut R,
    ) -> Result<(&FunctionVariant, &FunctionVariant)> {
        let (a, b) = self.sample_positive_indices(function_id, policy, rng)?;
        Ok((&self.variants[a], &self.variants[b]))
    }

    /// Drops variants whose compilation setting and graph are identical to a
    /// variant of an earlier function id (ids in sorted order).
    pub fn dedup_identical(&self) -> Corpus {
        let mut seen = std::collections::HashSet::new();
        let mut keep = Vec::new();
        for idxs in self.groups.values() {
            for &i in idxs {
                let v = &self.variants[i];
                let sig = (
                    v.arch,
                    v.bitness,
                    v.compiler.clone(),
                    v.compiler_version.clone(),
                    v.opt_level,
                    v.acfg.clone(),
                );
                if seen.insert(sig) {
                    keep.push(v.clone());
                }
            }
        }
        Corpus::new(keep).expect("dedup of a valid corpus is valid")
    }

    /// Stable hex digest of the serialized corpus.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_corpus(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variant(fid: &str, opt: OptLevel) -> FunctionVariant {
        let block = BasicBlock {
            instructions: vec![RawInstruction::new(["mov", "eax", "1"])],
        };
        FunctionVariant {
            function_id: fid.into(),
            arch: Arch::X86,
            bitness: Bitness::B64,
            compiler: "gcc".into(),
            compiler_version: "9".into(),
            opt_level: opt,
            acfg: Acfg::new(vec![block], vec![]).unwrap(),
        }
    }

    fn corpus_with_groups(n: usize, per: usize) -> Corpus {
        let mut vs = Vec::new();
        for g in 0..n {
            for o in OptLevel::ALL.iter().take(per) {
                vs.push(variant(&format!("f{g:03}"), *o));
            }
        }
        Corpus::new(vs).unwrap()
    }

    #[test]
    fn groups_partition_variants() {
        let c = corpus_with_groups(7, 3);
        let total: usize = c.groups().values().map(Vec::len).sum();
        assert_eq!(total, c.len());
        let mut all: Vec<usize> = c.groups().values().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = Corpus::new(vec![variant("f", OptLevel::O0), variant("f", OptLevel::O0)]);
        assert!(matches!(err, Err(Error::DuplicateVariant(_))));
    }

    #[test]
    fn acfg_collapses_duplicate_edges_keeps_self_loops() {
        let block = || BasicBlock {
            instructions: vec![RawInstruction::new(["nop"])],
        };
        let g = Acfg::new(vec![block(), block()], vec![(0, 1), (0, 1), (1, 1)]).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 1)]);
        assert!(Acfg::new(vec![block()], vec![(0, 3)]).is_err());
        assert!(Acfg::new(vec![], vec![]).is_err());
    }

    #[test]
    fn split_by_function_ratio_arithmetic() {
        let c = corpus_with_groups(10, 2);
        let (tr, va, te) = c.split((0.8, 0.1, 0.1), 7).unwrap();
        assert_eq!(
            (tr.groups().len(), va.groups().len(), te.groups().len()),
            (8, 1, 1)
        );
        let ids = |c: &Corpus| c.function_ids().map(String::from).collect::<BTreeSet<_>>();
        assert!(ids(&tr).is_disjoint(&ids(&va)));
        assert!(ids(&tr).is_disjoint(&ids(&te)));
        assert!(ids(&va).is_disjoint(&ids(&te)));
        assert_eq!(tr.len() + va.len() + te.len(), c.len());
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus_with_groups(25, 2);
        let a = c.split((0.6, 0.2, 0.2), 3).unwrap();
        let b = c.split((0.6, 0.2, 0.2), 3).unwrap();
        assert_eq!(a.0.fingerprint(), b.0.fingerprint());
        assert_eq!(a.2.fingerprint(), b.2.fingerprint());
    }

    #[test]
    fn split_infeasible() {
        let c = corpus_with_groups(2, 2);
        assert!(matches!(
            c.split((0.5, 0.25, 0.25), 1),
            Err(Error::InfeasibleSplit { groups: 2, nonzero: 3 })
        ));
        assert!(c.split((0.5, 0.5, 0.0), 1).is_ok());
        assert!(c.split((0.5, 0.6, 0.0), 1).is_err());
    }

    #[test]
    fn pair_of_two_is_either_order() {
        let c = corpus_with_groups(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = BTreeSet::new();
        for _ in 0..200 {
            let (a, b) = c.sample_positive_indices("f000", PairPolicy::DistinctOnly, &mut rng).unwrap();
            assert_ne!(a, b);
            seen.insert((a, b));
        }
        assert_eq!(seen, BTreeSet::from([(0, 1), (1, 0)]));
    }

    #[test]
    fn singleton_policy() {
        let c = corpus_with_groups(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            c.sample_positive_indices("f000", PairPolicy::DistinctOnly, &mut rng),
            Err(Error::SingletonGroup(_))
        ));
        let (a, b) = c
            .sample_positive_pair("f000", PairPolicy::AllowSelfPairs, &mut rng)
            .unwrap();
        assert_eq!(a, b);
        assert!(c.trainable_ids(PairPolicy::DistinctOnly).is_empty());
        assert!(matches!(
            c.sample_positive_indices("nope", PairPolicy::AllowSelfPairs, &mut rng),
            Err(Error::UnknownFunction(_))
        ));
    }

    #[test]
    fn unordered_pair_frequencies_are_uniform() {
        let c = corpus_with_groups(1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = HashMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let (a, b) = c.sample_positive_indices("f000", PairPolicy::DistinctOnly, &mut rng).unwrap();
            *counts.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        for n in counts.values() {
            let freq = *n as f64 / draws as f64;
            assert!((freq - 1.0 / 3.0).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn dedup_removes_cross_function_clones() {
        let c = Corpus::new(vec![variant("a", OptLevel::O0), variant("b", OptLevel::O0), variant("b", OptLevel::O1)]).unwrap();
        assert_eq!(c.dedup_identical().len(), 2);
    }
}
