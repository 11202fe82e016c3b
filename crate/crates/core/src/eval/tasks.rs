use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VariantKey};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetaAxis {
    Arch,
    Bitness,
    Compiler,
    CompilerVersion,
    OptLevel,
}

impl MetaAxis {
    pub fn name(self) -> &'static str {
        match self {
            MetaAxis::Arch => "architecture",
            MetaAxis::Bitness => "bitness",
            MetaAxis::Compiler => "compiler",
            MetaAxis::CompilerVersion => "compiler version",
            MetaAxis::OptLevel => "optimization level",
        }
    }

    fn same(self, a: &VariantKey, b: &VariantKey) -> bool {
        match self {
            MetaAxis::Arch => a.arch == b.arch,
            MetaAxis::Bitness => a.bitness == b.bitness,
            MetaAxis::Compiler => a.compiler == b.compiler,
            MetaAxis::CompilerVersion => a.compiler_version == b.compiler_version,
            MetaAxis::OptLevel => a.opt_level == b.opt_level,
        }
    }

    fn value(self, k: &VariantKey) -> String {
        match self {
            MetaAxis::Arch => k.arch.as_str().into(),
            MetaAxis::Bitness => k.bitness.bits().to_string(),
            MetaAxis::Compiler => k.compiler.clone(),
            MetaAxis::CompilerVersion => format!("{}-{}", k.compiler, k.compiler_version),
            MetaAxis::OptLevel => k.opt_level.as_str().into(),
        }
    }
}

/// Cross-configuration pair tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Arch,
    Opt,
    Comp,
    Xc,
    XcXb,
    Xa,
    Xm,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Arch,
        TaskKind::Opt,
        TaskKind::Comp,
        TaskKind::Xc,
        TaskKind::XcXb,
        TaskKind::Xa,
        TaskKind::Xm,
    ];

    /// Axes on which the two sides of every pair must differ.
    pub fn differ(self) -> &'static [MetaAxis] {
        use MetaAxis::*;
        match self {
            TaskKind::Arch => &[Arch],
            TaskKind::Opt => &[OptLevel],
            TaskKind::Comp => &[Compiler],
            TaskKind::Xc => &[Compiler, CompilerVersion, OptLevel],
            TaskKind::XcXb => &[Compiler, CompilerVersion, OptLevel, Bitness],
            TaskKind::Xa => &[Arch, Bitness],
            TaskKind::Xm => &[],
        }
    }

    /// Axes on which the two sides of every pair must agree.
    pub fn agree(self) -> &'static [MetaAxis] {
        use MetaAxis::*;
        match self {
            TaskKind::Opt => &[Arch, Bitness, Compiler, CompilerVersion],
            TaskKind::Xc => &[Arch, Bitness],
            TaskKind::XcXb => &[Arch],
            TaskKind::Xa => &[Compiler, CompilerVersion, OptLevel],
            TaskKind::Arch | TaskKind::Comp | TaskKind::Xm => &[],
        }
    }

    pub fn admits(self, a: &VariantKey, b: &VariantKey) -> bool {
        self.differ().iter().all(|ax| !ax.same(a, b)) && self.agree().iter().all(|ax| ax.same(a, b))
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            TaskKind::Arch => "arch",
            TaskKind::Opt => "opt",
            TaskKind::Comp => "comp",
            TaskKind::Xc => "xc",
            TaskKind::XcXb => "xcxb",
            TaskKind::Xa => "xa",
            TaskKind::Xm => "xm",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Arch => "arch",
            TaskKind::Opt => "opt",
            TaskKind::Comp => "comp",
            TaskKind::Xc => "XC",
            TaskKind::XcXb => "XC+XB",
            TaskKind::Xa => "XA",
            TaskKind::Xm => "XM",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('+', "");
        TaskKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == norm)
            .ok_or_else(|| Error::Precondition(format!("unknown task kind `{s}`")))
    }
}

/// One ranking query: candidates with relevance flags and the total number
/// of relevant items for the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolQuery {
    pub query: VariantKey,
    pub candidates: Vec<VariantKey>,
    pub relevant: Vec<bool>,
    pub n_rel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTask {
    pub kind: TaskKind,
    pub pool_size: usize,
    /// Candidate 0 of each query is its positive; the rest are negatives.
    pub queries: Vec<PoolQuery>,
}

impl PairTask {
    pub fn positive_pairs(&self) -> Vec<(VariantKey, VariantKey)> {
        self.queries
            .iter()
            .map(|q| (q.query.clone(), q.candidates[0].clone()))
            .collect()
    }

    pub fn negative_pairs(&self) -> Vec<(VariantKey, VariantKey)> {
        self.queries
            .iter()
            .flat_map(|q| q.candidates[1..].iter().map(|c| (q.query.clone(), c.clone())))
            .collect()
    }
}

fn infeasible(kind: impl ToString, axis: impl Into<String>) -> Error {
    Error::InfeasibleTask {
        kind: kind.to_string(),
        axis: axis.into(),
    }
}

/// Samples up to `n_pairs` positive pairs satisfying `kind`, each with up to
/// `pool_size - 1` negatives that satisfy the same constraint relative to the
/// query.
pub fn build_pair_task(corpus: &Corpus, kind: TaskKind, n_pairs: usize, pool_size: usize, seed: u64) -> Result<PairTask> {
    if pool_size < 2 || n_pairs == 0 {
        return Err(Error::Precondition("pool size must be >= 2 and at least one pair requested".into()));
    }
    let keys: Vec<VariantKey> = corpus.variants().iter().map(|v| v.key()).collect();
    for &axis in kind.differ() {
        let values: BTreeSet<String> = keys.iter().map(|k| axis.value(k)).collect();
        if values.len() < 2 {
            return Err(infeasible(kind, format!("corpus has a single {} value", axis.name())));
        }
    }
    let mut positives = Vec::new();
    for group in corpus.groups().values() {
        for &a in group {
            for &b in group {
                if a != b && kind.admits(&keys[a], &keys[b]) {
                    positives.push((a, b));
                }
            }
        }
    }
    if positives.is_empty() {
        let axes: Vec<_> = kind.differ().iter().chain(kind.agree()).map(|a| a.name()).collect();
        return Err(infeasible(kind, format!("no same-function pair satisfies the {} constraints", axes.join("/"))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, positives.len(), n_pairs.min(positives.len()));
    let mut queries = Vec::with_capacity(chosen.len());
    for p in chosen {
        let (a, b) = positives[p];
        let pool: Vec<usize> = (0..keys.len())
            .filter(|&c| keys[c].function_id != keys[a].function_id && kind.admits(&keys[a], &keys[c]))
            .collect();
        if pool.is_empty() {
            continue;
        }
        let take = (pool_size - 1).min(pool.len());
        let mut candidates = vec![keys[b].clone()];
        candidates.extend(sample(&mut rng, pool.len(), take).into_iter().map(|i| keys[pool[i]].clone()));
        let mut relevant = vec![false; candidates.len()];
        relevant[0] = true;
        queries.push(PoolQuery {
            query: keys[a].clone(),
            candidates,
            relevant,
            n_rel: 1,
        });
    }
    if queries.is_empty() {
        return Err(infeasible(kind, "no negative from another function satisfies the constraints"));
    }
    Ok(PairTask { kind, pool_size, queries })
}

/// Pool search: every other variant of the query's function is relevant and
/// always in the pool; unrelated variants fill it up to `pool_size`.
pub fn build_search_task(corpus: &Corpus, n_queries: usize, pool_size: usize, seed: u64) -> Result<Vec<PoolQuery>> {
    if pool_size == 0 || n_queries == 0 {
        return Err(Error::Precondition("pool size and query count must be positive".into()));
    }
    let keys: Vec<VariantKey> = corpus.variants().iter().map(|v| v.key()).collect();
    let eligible: Vec<usize> = (0..keys.len())
        .filter(|&i| corpus.group(&keys[i].function_id).map_or(0, <[usize]>::len) > 1)
        .collect();
    if eligible.is_empty() {
        return Err(infeasible("search", "no function has more than one variant"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, eligible.len(), n_queries.min(eligible.len()));
    let mut out = Vec::new();
    for e in chosen {
        let q = eligible[e];
        let fid = &keys[q].function_id;
        let rel: Vec<usize> = corpus.group(fid)?.iter().copied().filter(|&i| i != q).collect();
        let others: Vec<usize> = (0..keys.len()).filter(|&i| &keys[i].function_id != fid).collect();
        let take = pool_size.saturating_sub(rel.len()).min(others.len());
        let mut candidates: Vec<VariantKey> = rel.iter().map(|&i| keys[i].clone()).collect();
        candidates.extend(sample(&mut rng, others.len(), take).into_iter().map(|i| keys[others[i]].clone()));
        let mut relevant = vec![false; candidates.len()];
        relevant[..rel.len()].fill(true);
        out.push(PoolQuery {
            query: keys[q].clone(),
            candidates,
            relevant,
            n_rel: rel.len(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;

    #[test]
    fn kinds_parse_and_print() {
        for k in TaskKind::ALL {
            assert_eq!(k.cli_name().parse::<TaskKind>().unwrap(), k);
            assert_eq!(k.to_string().parse::<TaskKind>().unwrap(), k);
        }
        assert!("foo".parse::<TaskKind>().is_err());
    }

    #[test]
    fn pairs_satisfy_constraints() {
        let corpus = synth_corpus(30, 12, 2).unwrap();
        for kind in TaskKind::ALL {
            let Ok(task) = build_pair_task(&corpus, kind, 40, 10, 1) else {
                continue;
            };
            for (a, b) in task.positive_pairs() {
                assert_eq!(a.function_id, b.function_id);
                assert!(kind.admits(&a, &b), "{kind} {a} {b}");
            }
            for (a, b) in task.negative_pairs() {
                assert_ne!(a.function_id, b.function_id);
                assert!(kind.admits(&a, &b));
            }
            assert!(task.queries.iter().all(|q| q.candidates.len() <= 10));
        }
        let arch = build_pair_task(&corpus, TaskKind::Arch, 40, 10, 1).unwrap();
        assert!(arch.positive_pairs().iter().all(|(a, b)| a.arch != b.arch));
        assert_eq!(build_pair_task(&corpus, TaskKind::Xm, 40, 10, 1).unwrap().queries.len(), 40);
    }

    #[test]
    fn deterministic_given_seed() {
        let corpus = synth_corpus(20, 6, 3).unwrap();
        let a = build_pair_task(&corpus, TaskKind::Xm, 30, 20, 7).unwrap();
        assert_eq!(a, build_pair_task(&corpus, TaskKind::Xm, 30, 20, 7).unwrap());
    }

    #[test]
    fn single_arch_corpus_rejects_xa() {
        let full = synth_corpus(10, 6, 3).unwrap();
        let x86: Vec<_> = full
            .variants()
            .iter()
            .filter(|v| v.arch == crate::corpus::Arch::X86)
            .cloned()
            .collect();
        let corpus = Corpus::new(x86).unwrap();
        match build_pair_task(&corpus, TaskKind::Xa, 10, 5, 0) {
            Err(Error::InfeasibleTask { axis, .. }) => assert!(axis.contains("architecture")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn search_pools_hold_every_relevant_variant() {
        let corpus = synth_corpus(15, 4, 5).unwrap();
        let qs = build_search_task(&corpus, 10, 20, 1).unwrap();
        assert_eq!(qs.len(), 10);
        for q in qs {
            assert_eq!(q.n_rel, 3);
            assert_eq!(q.candidates.len(), 20);
            assert_eq!(q.relevant.iter().filter(|&&r| r).count(), 3);
            assert!(!q.candidates.contains(&q.query));
        }
    }
}
