//! Similarity metrics, evaluation tasks and the evaluation report.

mod metrics;
mod tasks;

pub use metrics::{
    auc_roc, average_precision, classify, cosine_sim, mean_ap, mrr_at_k, recall_at_1, threshold_accuracy, QueryRanking,
};
pub use tasks::{build_pair_task, build_search_task, MetaAxis, PairTask, PoolQuery, TaskKind};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, VariantKey};
use crate::error::{Error, Result};
use crate::model::Model;

/// Cutoff used by MRR and MAP.
pub const RANK_CUTOFF: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    Mrr10,
    Recall1,
    Map,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auc => "auc",
            Metric::Mrr10 => "mrr10",
            Metric::Recall1 => "recall1",
            Metric::Map => "map",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out: Vec<Metric> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(Error::Precondition("no metrics requested".into()));
        }
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::Auc, Metric::Mrr10, Metric::Recall1, Metric::Map]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Precondition(format!("unknown metric `{s}`")))
    }
}

/// Either a pair task or pool search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalTask {
    Pair(TaskKind),
    Search,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalTask::Pair(k) => write!(f, "{k}"),
            EvalTask::Search => f.write_str("search"),
        }
    }
}

impl FromStr for EvalTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "search" {
            Ok(EvalTask::Search)
        } else {
            s.parse().map(EvalTask::Pair)
        }
    }
}

/// Ranks every query's candidates by cosine similarity of their embeddings.
pub fn rank_queries(queries: &[PoolQuery], embedding: &HashMap<&VariantKey, usize>, matrix: &Array2<f64>) -> Result<Vec<QueryRanking>> {
    let row = |k: &VariantKey| {
        embedding
            .get(k)
            .map(|&i| matrix.row(i))
            .ok_or_else(|| Error::Precondition(format!("no embedding for {k}")))
    };
    queries
        .iter()
        .map(|q| {
            let qe = row(&q.query)?;
            let items = q
                .candidates
                .iter()
                .zip(&q.relevant)
                .map(|(c, &r)| Ok((c.clone(), cosine_sim(qe, row(c)?)?, r)))
                .collect::<Result<Vec<_>>>()?;
            Ok(QueryRanking::new(q.query.clone(), items, q.n_rel))
        })
        .collect()
}

pub fn compute_metrics(rankings: &[QueryRanking], metrics: &[Metric], cap_nrel: bool) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for &m in metrics {
        let v = match m {
            Metric::Auc => {
                let scores: Vec<f64> = rankings.iter().flat_map(|r| r.scores.iter().copied()).collect();
                let labels: Vec<bool> = rankings.iter().flat_map(|r| r.relevant.iter().copied()).collect();
                auc_roc(&scores, &labels)?
            }
            Metric::Mrr10 => mrr_at_k(rankings, RANK_CUTOFF)?,
            Metric::Recall1 => recall_at_1(rankings)?,
            Metric::Map => mean_ap(rankings, RANK_CUTOFF, cap_nrel)?,
        };
        out.insert(m.name().to_string(), v);
    }
    Ok(out)
}

/// Recall@1 when each variant queries all others and any other variant of
/// the same function counts as a hit. Rows of `emb` must be unit norm.
pub fn self_search_recall_at_1(emb: &Array2<f64>, keys: &[VariantKey]) -> Result<f64> {
    let sims = emb.dot(&emb.t());
    let mut hits = 0usize;
    let mut queries = 0usize;
    for i in 0..keys.len() {
        if !keys.iter().enumerate().any(|(j, k)| j != i && k.function_id == keys[i].function_id) {
            continue;
        }
        queries += 1;
        let best = (0..keys.len())
            .filter(|&j| j != i)
            .max_by(|&a, &b| sims[[i, a]].total_cmp(&sims[[i, b]]).then_with(|| keys[b].cmp(&keys[a])))
            .expect("at least one other key");
        if keys[best].function_id == keys[i].function_id {
            hits += 1;
        }
    }
    if queries == 0 {
        return Err(Error::UndefinedMetric("no function with two variants".into()));
    }
    Ok(hits as f64 / queries as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub task: EvalTask,
    pub pool: usize,
    pub queries: usize,
    pub metrics: Vec<Metric>,
    pub seed: u64,
    pub cap_nrel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub pool: usize,
    pub metrics: BTreeMap<String, f64>,
    pub config: serde_json::Value,
    pub corpus_fingerprint: String,
}

pub fn build_queries(corpus: &Corpus, options: &EvalOptions) -> Result<Vec<PoolQuery>> {
    match options.task {
        EvalTask::Pair(kind) => Ok(build_pair_task(corpus, kind, options.queries, options.pool, options.seed)?.queries),
        EvalTask::Search => build_search_task(corpus, options.queries, options.pool, options.seed),
    }
}

/// Embeds the corpus with the model's query encoder, ranks the task's pools
/// and reports the requested metrics.
pub fn run_search_eval(model: &Model, corpus: &Corpus, options: &EvalOptions) -> Result<EvalReport> {
    let queries = build_queries(corpus, options)?;
    let matrix = model.embed_corpus(corpus)?;
    let keys: Vec<VariantKey> = corpus.variants().iter().map(|v| v.key()).collect();
    let index: HashMap<&VariantKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    let rankings = rank_queries(&queries, &index, &matrix)?;
    let metrics = compute_metrics(&rankings, &options.metrics, options.cap_nrel)?;
    Ok(EvalReport {
        task: options.task.to_string(),
        pool: options.pool,
        metrics,
        config: serde_json::json!({
            "checkpoint_fingerprint": model.fingerprint,
            "model": model.config,
            "eval": options,
            "queries": rankings.len(),
        }),
        corpus_fingerprint: corpus.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Arch, Bitness, OptLevel};
    use ndarray::array;

    fn key(fid: &str, arch: Arch) -> VariantKey {
        VariantKey {
            function_id: fid.into(),
            arch,
            bitness: Bitness::B64,
            compiler: "gcc".into(),
            compiler_version: "9".into(),
            opt_level: OptLevel::O0,
        }
    }

    #[test]
    fn metric_lists() {
        assert_eq!(Metric::parse_list("map,auc,auc").unwrap(), [Metric::Auc, Metric::Map]);
        assert!(Metric::parse_list("auc,bogus").is_err());
        assert!(Metric::parse_list("").is_err());
    }

    #[test]
    fn task_names() {
        assert_eq!("search".parse::<EvalTask>().unwrap(), EvalTask::Search);
        assert_eq!("xcxb".parse::<EvalTask>().unwrap(), EvalTask::Pair(TaskKind::XcXb));
    }

    #[test]
    fn pool_of_true_variants_is_perfect() {
        let keys = vec![key("a", Arch::X86), key("a", Arch::Arm), key("b", Arch::X86)];
        let m = array![[1.0, 0.0], [0.6, 0.8], [0.0, -1.0]];
        let index: HashMap<&VariantKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
        let q = PoolQuery {
            query: keys[0].clone(),
            candidates: vec![keys[1].clone()],
            relevant: vec![true],
            n_rel: 1,
        };
        let r = rank_queries(&[q], &index, &m).unwrap();
        let out = compute_metrics(&r, &[Metric::Recall1, Metric::Map], false).unwrap();
        assert_eq!(out.keys().collect::<Vec<_>>(), ["map", "recall1"]);
        assert_eq!(out["recall1"], 1.0);
        assert_eq!(self_search_recall_at_1(&m, &keys).unwrap(), 1.0);
    }
}
