//! Command-line front end. Every flag may also come from a JSON `--config`
//! file (keys are flag names, `-` or `_`); explicit flags win.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::corpus::{load_corpus, synth_corpus, write_corpus};
use crate::eval::{run_search_eval, EvalOptions, EvalTask, Metric};
use crate::index::{build_index, query_index, EmbeddingIndex};
use crate::model::{train_model, write_initial_checkpoint, Model, ModelConfig, SplitConfig, Subset};
use crate::trainer::LossKind;

#[derive(Debug, Parser)]
#[command(name = "graphmoco", version, about = "Binary function embeddings by graph momentum contrast")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-architecture corpus.
    Synth(SynthArgs),
    /// Train an encoder pair and write a checkpoint.
    Train(TrainArgs),
    /// Embed a corpus into an index file.
    Embed(EmbedArgs),
    /// Query an index with one function's embedding.
    Search(SearchArgs),
    /// Evaluate a checkpoint on a pair or search task.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    functions: Option<usize>,
    #[arg(long)]
    variants: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    queue: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_preshuffle: bool,
    #[arg(long, value_enum)]
    loss: Option<LossKind>,
    /// Token embedding width d.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Passes over the training functions per epoch.
    #[arg(long)]
    passes: Option<usize>,
    /// Train/validation/test ratios, e.g. `0.8,0.1,0.1`.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    mask_same_function: bool,
    #[arg(long)]
    dedup: bool,
    #[arg(long)]
    directed: bool,
    #[arg(long)]
    no_two_tuple: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    function_id: Option<String>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// arch, opt, comp, xc, xcxb, xa, xm or search.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    pool: Option<usize>,
    /// Comma-separated subset of auc,mrr10,recall1,map.
    #[arg(long)]
    metrics: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of queries to sample.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divide AP by min(N_rel, 10) instead of N_rel.
    #[arg(long)]
    cap_nrel: bool,
    /// Restrict to one part of the checkpoint's function split.
    #[arg(long, value_enum)]
    subset: Option<Subset>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// A missing required flag; reported with usage and exit code 2.
#[derive(Debug)]
struct MissingFlag {
    command: &'static str,
    flag: &'static str,
}

impl std::fmt::Display for MissingFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing required flag --{} for `{}`", self.flag, self.command)
    }
}

impl std::error::Error for MissingFlag {}

/// Values from a `--config` file.
struct FileConfig(Map<String, Value>);

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self(Map::new()));
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        match serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))? {
            Value::Object(map) => Ok(Self(
                map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect(),
            )),
            _ => bail!("config {} must hold a JSON object", path.display()),
        }
    }

    fn get<T: DeserializeOwned>(&self, flag: &str) -> anyhow::Result<Option<T>> {
        match self.0.get(&flag.replace('-', "_")) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key `{flag}`")),
        }
    }

    /// Explicit flag, else config value.
    fn pick<T: DeserializeOwned>(&self, cli: Option<T>, flag: &str) -> anyhow::Result<Option<T>> {
        match cli {
            Some(v) => Ok(Some(v)),
            None => self.get(flag),
        }
    }

    fn or<T: DeserializeOwned>(&self, cli: Option<T>, flag: &str, default: T) -> anyhow::Result<T> {
        Ok(self.pick(cli, flag)?.unwrap_or(default))
    }

    fn required<T: DeserializeOwned>(&self, cli: Option<T>, command: &'static str, flag: &'static str) -> anyhow::Result<T> {
        self.pick(cli, flag)?
            .ok_or_else(|| MissingFlag { command, flag }.into())
    }

    fn switch(&self, cli: bool, flag: &str) -> anyhow::Result<bool> {
        Ok(cli || self.get::<bool>(flag)?.unwrap_or(false))
    }
}

fn parse_split(s: &str) -> anyhow::Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("split `{s}`"))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split `{s}` needs three comma-separated ratios"),
    }
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let cfg = FileConfig::load(a.config.as_ref())?;
    let functions: usize = cfg.required(a.functions, "synth", "functions")?;
    let variants: usize = cfg.required(a.variants, "synth", "variants")?;
    let out: PathBuf = cfg.required(a.out, "synth", "out")?;
    let seed = cfg.or(a.seed, "seed", 0)?;
    let corpus = synth_corpus(functions, variants, seed)?;
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_corpus(&corpus, std::io::BufWriter::new(file))?;
    info!("wrote {} variants of {} functions to {}", corpus.len(), functions, out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = FileConfig::load(a.config.as_ref())?;
    let corpus_path: PathBuf = cfg.required(a.corpus, "train", "corpus")?;
    let out: PathBuf = cfg.required(a.out, "train", "out")?;
    let mut model = ModelConfig::default();
    let t = &mut model.train;
    t.epochs = cfg.or(a.epochs, "epochs", t.epochs)?;
    t.batch_size = cfg.or(a.batch, "batch", t.batch_size)?;
    t.queue_size = cfg.or(a.queue, "queue", t.queue_size)?;
    t.tau = cfg.or(a.tau, "tau", t.tau)?;
    t.momentum = cfg.or(a.momentum, "momentum", t.momentum)?;
    t.lr = cfg.or(a.lr, "lr", t.lr)?;
    t.weight_decay = cfg.or(a.wd, "wd", t.weight_decay)?;
    t.seed = cfg.or(a.seed, "seed", t.seed)?;
    t.preshuffle = !cfg.switch(a.no_preshuffle, "no_preshuffle")?;
    t.loss = cfg.or(a.loss, "loss", t.loss)?;
    t.passes_per_epoch = cfg.or(a.passes, "passes", t.passes_per_epoch)?;
    t.mask_same_function = cfg.switch(a.mask_same_function, "mask_same_function")?;
    let e = &mut model.encoder;
    e.d = cfg.or(a.dim, "dim", e.d)?;
    e.filters = cfg.or(a.filters, "filters", e.filters)?;
    e.hidden = cfg.or(a.hidden, "hidden", e.hidden)?;
    e.layers = cfg.or(a.layers, "layers", e.layers)?;
    e.directed = cfg.switch(a.directed, "directed")?;
    e.two_tuple = !cfg.switch(a.no_two_tuple, "no_two_tuple")?;
    if let Some(split) = cfg.pick(a.split, "split")? {
        model.split.ratios = parse_split(&split)?;
    }
    model.split = SplitConfig {
        seed: model.train.seed,
        ..model.split
    };
    model.dedup = cfg.switch(a.dedup, "dedup")?;

    let corpus = load_corpus(&corpus_path)?;
    if model.train.epochs == 0 {
        fs::create_dir_all(&out)?;
        let path = out.join(crate::model::CHECKPOINT_FILE);
        write_initial_checkpoint(&corpus, &model, &path)?;
        println!("{}", path.display());
        return Ok(());
    }
    let run = train_model(&corpus, &model, &out)?;
    if let Some(last) = run.history.last() {
        info!("final mean loss {:.4}", last.mean_loss);
    }
    println!("{}", run.checkpoint.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> anyhow::Result<()> {
    let cfg = FileConfig::load(a.config.as_ref())?;
    let checkpoint: PathBuf = cfg.required(a.checkpoint, "embed", "checkpoint")?;
    let corpus_path: PathBuf = cfg.required(a.corpus, "embed", "corpus")?;
    let out: PathBuf = cfg.required(a.out, "embed", "out")?;
    let model = Model::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let corpus = load_corpus(&corpus_path)?;
    let index = build_index(&model, &corpus)?;
    index.write(&out)?;
    info!("indexed {} variants into {}", index.len(), out.display());
    Ok(())
}

fn search(a: SearchArgs) -> anyhow::Result<()> {
    let cfg = FileConfig::load(a.config.as_ref())?;
    let index_path: PathBuf = cfg.required(a.index, "search", "index")?;
    let function_id: String = cfg.required(a.function_id, "search", "function-id")?;
    let top = cfg.or(a.top, "top", 10)?;
    let index = EmbeddingIndex::read(&index_path)?;
    let query_row = index
        .keys
        .iter()
        .enumerate()
        .filter(|(_, k)| k.function_id == function_id)
        .min_by(|a, b| a.1.cmp(b.1))
        .map(|(i, _)| i)
        .with_context(|| format!("function `{function_id}` is not in the index"))?;
    let query_key = index.keys[query_row].clone();
    let hits = query_index(&index, index.matrix.row(query_row), top + 1)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "query: {query_key}")?;
    writeln!(stdout, "{:>4}  {:>10}  key", "rank", "similarity")?;
    for (rank, (key, sim)) in hits.into_iter().filter(|(k, _)| *k != query_key).take(top).enumerate() {
        writeln!(stdout, "{:>4}  {:>10.6}  {}", rank + 1, sim, key)?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let cfg = FileConfig::load(a.config.as_ref())?;
    let checkpoint: PathBuf = cfg.required(a.checkpoint, "eval", "checkpoint")?;
    let corpus_path: PathBuf = cfg.required(a.corpus, "eval", "corpus")?;
    let task: String = cfg.required(a.task, "eval", "task")?;
    let options = EvalOptions {
        task: task.parse::<EvalTask>()?,
        pool: cfg.or(a.pool, "pool", 100)?,
        queries: cfg.or(a.queries, "queries", 1000)?,
        metrics: Metric::parse_list(&cfg.or(a.metrics, "metrics", "auc,mrr10,recall1,map".to_string())?)?,
        seed: cfg.or(a.seed, "seed", 0)?,
        cap_nrel: cfg.switch(a.cap_nrel, "cap_nrel")?,
    };
    let subset = cfg.or(a.subset, "subset", Subset::All)?;
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;

    let model = Model::load(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let corpus = model.config.subset(&load_corpus(&corpus_path)?, subset)?;
    let report = run_search_eval(&model, &corpus, &options)?;
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    for (name, value) in &report.metrics {
        info!("{name}: {value:.4}");
    }
    Ok(())
}

fn usage_error(command: &str, message: &str) -> i32 {
    let mut cmd = Cli::command();
    let sub = cmd.find_subcommand_mut(command).map(|c| c.clone()).unwrap_or_else(Cli::command);
    let err = sub.bin_name(format!("graphmoco {command}")).error(ErrorKind::MissingRequiredArgument, message);
    let _ = err.print();
    2
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("GRAPHMOCO_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            if let Some(m) = e.downcast_ref::<MissingFlag>() {
                return usage_error(m.command, &m.to_string());
            }
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_parsing() {
        assert_eq!(parse_split("0.8,0.1,0.1").unwrap(), (0.8, 0.1, 0.1));
        assert!(parse_split("0.8,0.2").is_err());
        assert!(parse_split("a,b,c").is_err());
    }

    #[test]
    fn unknown_command_and_missing_flag_exit_2() {
        assert_eq!(cli_main(["graphmoco", "frobnicate"]), 2);
        assert_eq!(cli_main(["graphmoco", "synth", "--functions", "3"]), 2);
        assert_eq!(cli_main(["graphmoco"]), 2);
    }

    #[test]
    fn config_merges_under_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("c.json");
        fs::write(&cfg_path, r#"{"functions": 2, "variants": 2, "seed": 5, "out": "ignored.jsonl"}"#).unwrap();
        let out = dir.path().join("x.jsonl");
        let code = cli_main([
            "graphmoco".into(),
            "synth".into(),
            "--config".into(),
            cfg_path.clone().into_os_string(),
            "--out".into(),
            out.clone().into_os_string(),
        ]);
        assert_eq!(code, 0);
        let corpus = load_corpus(&out).unwrap();
        assert_eq!(corpus.len(), 4);
        assert!(!dir.path().join("ignored.jsonl").exists());
    }

    #[test]
    fn runtime_failure_exits_1() {
        assert_eq!(cli_main(["graphmoco", "embed", "--checkpoint", "/nonexistent", "--corpus", "/nonexistent", "--out", "/tmp/x"]), 1);
    }
}
