//! A trained function encoder bundled with its vocabulary and configuration,
//! plus the end-to-end training driver used by the command line.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::{embed_all, encode_corpus, init_encoder, EncodedFunction, EncoderConfig, EncoderParams, FunctionEncoder};
use crate::error::{Error, Result};
use crate::normalizer::{build_vocab, NormalizerConfig, Vocab, DEFAULT_ADDRESS_PATTERN, VOCAB_VERSION};
use crate::trainer::{train, Checkpoint, EncoderPair, EpochStats, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.gmck";
pub const HISTORY_FILE: &str = "history.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub split: SplitConfig,
    /// Remove variants duplicated across function ids before training.
    pub dedup: bool,
    pub address_pattern: Option<String>,
}

impl ModelConfig {
    pub fn normalizer(&self) -> Result<NormalizerConfig> {
        NormalizerConfig::with_address_pattern(self.address_pattern.as_deref().unwrap_or(DEFAULT_ADDRESS_PATTERN))
    }

    /// The requested split of `corpus`, recomputed deterministically.
    pub fn subset(&self, corpus: &Corpus, subset: Subset) -> Result<Corpus> {
        if subset == Subset::All {
            return Ok(corpus.clone());
        }
        let (train, val, test) = corpus.split(self.split.ratios, self.split.seed)?;
        Ok(match subset {
            Subset::Train => train,
            Subset::Val => val,
            Subset::Test => test,
            Subset::All => unreachable!(),
        })
    }
}

/// Query encoder of a checkpoint, ready to embed corpora.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub params: EncoderParams,
    pub normalizer: NormalizerConfig,
    pub fingerprint: String,
}

impl Model {
    pub fn from_checkpoint(ck: &Checkpoint, fingerprint: String) -> Result<Self> {
        let vocab = ck.manifest.vocab.clone();
        if vocab.version != VOCAB_VERSION {
            return Err(Error::VocabMismatch {
                expected: VOCAB_VERSION,
                found: vocab.version,
            });
        }
        let config: ModelConfig = serde_json::from_value(ck.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("configuration: {e}")))?;
        let mut params = init_encoder(&config.encoder, &vocab, 0)?;
        ck.load_into("query", &mut params)?;
        let normalizer = config.normalizer()?;
        Ok(Self {
            config,
            vocab,
            params,
            normalizer,
            fingerprint,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (ck, fp) = Checkpoint::read(path)?;
        Self::from_checkpoint(&ck, fp)
    }

    pub fn encode(&self, corpus: &Corpus) -> Result<Vec<EncodedFunction>> {
        encode_corpus(corpus, &self.vocab, &self.normalizer)
    }

    /// Unit-norm embeddings of every variant, in corpus order.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<Array2<f64>> {
        let fns = self.encode(corpus)?;
        let refs: Vec<&EncodedFunction> = fns.iter().collect();
        embed_all(&FunctionEncoder, &self.params, &refs, 64)
    }
}

pub struct TrainRun {
    pub checkpoint: PathBuf,
    pub history: Vec<EpochStats>,
}

/// Splits `corpus` by function, builds the vocabulary on the training part,
/// trains, and writes the checkpoint (after every epoch) and loss history
/// into `out_dir`.
pub fn train_model(corpus: &Corpus, config: &ModelConfig, out_dir: &Path) -> Result<TrainRun> {
    config.train.validate()?;
    let corpus = if config.dedup { corpus.dedup_identical() } else { corpus.clone() };
    let train_split = config.subset(&corpus, Subset::Train)?;
    let val_split = config.subset(&corpus, Subset::Val)?;
    if train_split.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let normalizer = config.normalizer()?;
    let vocab = build_vocab(&train_split, &normalizer)?;
    let train_fns = encode_corpus(&train_split, &vocab, &normalizer)?;
    let val_fns = encode_corpus(&val_split, &vocab, &normalizer)?;
    info!(
        "training on {} variants ({} functions), validating on {}; vocab {} ops / {} operands",
        train_split.len(),
        train_split.groups().len(),
        val_split.len(),
        vocab.op_count(),
        vocab.operand_count()
    );
    let init = init_encoder(&config.encoder, &vocab, config.train.seed)?;
    fs::create_dir_all(out_dir)?;
    let ck_path = out_dir.join(CHECKPOINT_FILE);
    let config_json = serde_json::to_value(config)?;
    let outcome = train(
        &FunctionEncoder,
        init,
        &train_split,
        &train_fns,
        &val_fns,
        &config.train,
        |epoch, state| {
            let ck = Checkpoint::new(config_json.clone(), &vocab, epoch, &state.pair, Some(&state.queue));
            ck.write(&ck_path)?;
            Ok(())
        },
    )?;
    fs::write(out_dir.join(HISTORY_FILE), serde_json::to_string_pretty(&outcome.history)?)?;
    Ok(TrainRun {
        checkpoint: ck_path,
        history: outcome.history,
    })
}

/// Writes an untrained checkpoint (both sides equal to the initialization).
pub fn write_initial_checkpoint(corpus: &Corpus, config: &ModelConfig, path: &Path) -> Result<String> {
    let train_split = config.subset(corpus, Subset::Train)?;
    let normalizer = config.normalizer()?;
    let vocab = build_vocab(&train_split, &normalizer)?;
    let init = init_encoder(&config.encoder, &vocab, config.train.seed)?;
    Checkpoint::new(serde_json::to_value(config)?, &vocab, 0, &EncoderPair::new(init), None).write(path)
}
