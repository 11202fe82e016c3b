//! Momentum-contrast training: query/key encoders, the key queue, InfoNCE and
//! the preshuffled key batch.

mod checkpoint;
mod loss;
mod queue;
mod shuffle;

pub use checkpoint::{Checkpoint, CheckpointManifest, QueueEntry, TensorEntry};
pub use loss::{info_nce_loss, info_nce_with_grad, triplet_with_grad, LossKind, TRIPLET_MARGIN};
pub use queue::{init_queue, EmbeddingQueue};
pub use shuffle::{preshuffle, unshuffle, Permutation};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PairPolicy};
use crate::encoder::{embed_all, EncodedFunction, Encoder};
use crate::error::{Error, Result};
use crate::eval::self_search_recall_at_1;
use crate::params::{global_norm, momentum_update, scale, Adam, AdamConfig, ParamSet};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair<P> {
    pub query: P,
    pub key: P,
}

impl<P: ParamSet> EncoderPair<P> {
    /// Both sides start from identical parameters.
    pub fn new(params: P) -> Self {
        Self {
            key: params.clone(),
            query: params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub momentum: f64,
    pub queue_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub preshuffle: bool,
    pub loss: LossKind,
    /// Drop queue rows of the query's own function from its negatives.
    pub mask_same_function: bool,
    pub pair_policy: PairPolicy,
    pub grad_clip: f64,
    /// Passes over the training functions per epoch.
    pub passes_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            momentum: 0.999,
            queue_size: 5120,
            batch_size: 128,
            lr: 0.01,
            weight_decay: 1e-4,
            epochs: 100,
            seed: 0,
            preshuffle: true,
            loss: LossKind::Infonce,
            mask_same_function: false,
            pair_policy: PairPolicy::DistinctOnly,
            grad_clip: 5.0,
            passes_per_epoch: 1,
        }
    }
}

impl TrainConfig {
    /// Small queue and batch for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            queue_size: 256,
            batch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Precondition(m));
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.tau > 0.0) {
            return fail(format!("temperature {} must be positive", self.tau));
        }
        if self.batch_size == 0 || self.queue_size == 0 {
            return fail("batch and queue sizes must be positive".into());
        }
        if !self.queue_size.is_multiple_of(self.batch_size) {
            return fail(format!(
                "queue size {} is not a multiple of batch size {}",
                self.queue_size, self.batch_size
            ));
        }
        if self.passes_per_epoch == 0 {
            return fail("passes per epoch must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Everything a training step mutates.
#[derive(Debug, Clone)]
pub struct TrainState<P: ParamSet> {
    pub pair: EncoderPair<P>,
    pub queue: EmbeddingQueue,
    pub optimizer: Adam<P>,
}

impl<P: ParamSet> TrainState<P> {
    pub fn new(pair: EncoderPair<P>, queue: EmbeddingQueue, config: &TrainConfig) -> Self {
        let optimizer = Adam::new(&pair.query, config.adam());
        Self { pair, queue, optimizer }
    }
}

/// One iteration over a batch of function ids; `fns[i]` must be the encoded
/// form of `corpus.variants()[i]`. Returns the loss before the update.
pub fn train_step<E: Encoder, R: Rng>(
    encoder: &E,
    state: &mut TrainState<E::Params>,
    batch_ids: &[String],
    corpus: &Corpus,
    fns: &[EncodedFunction],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    if batch_ids.is_empty() {
        return Err(Error::Precondition("empty training batch".into()));
    }
    let mut queries = Vec::with_capacity(batch_ids.len());
    let mut keys = Vec::with_capacity(batch_ids.len());
    for id in batch_ids {
        let (a, b) = corpus.sample_positive_indices(id, config.pair_policy, rng)?;
        queries.push(&fns[a]);
        keys.push(&fns[b]);
    }

    let k = if config.preshuffle {
        let (shuffled, perm) = preshuffle(&keys, rng);
        unshuffle(&encoder.embed(&state.pair.key, &shuffled)?, &perm)?
    } else {
        encoder.embed(&state.pair.key, &keys)?
    };
    let (q, cache) = encoder.forward(&state.pair.query, &queries)?;

    let mask: Option<Vec<Vec<bool>>> = config.mask_same_function.then(|| {
        batch_ids
            .iter()
            .map(|id| state.queue.labels().iter().map(|l| l == id).collect())
            .collect()
    });
    let (loss, dq) = match config.loss {
        LossKind::Infonce => info_nce_with_grad(q.view(), k.view(), state.queue.rows(), config.tau, mask.as_deref())?,
        LossKind::Triplet => triplet_with_grad(q.view(), k.view(), state.queue.rows(), TRIPLET_MARGIN, mask.as_deref())?,
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }

    let mut grads = encoder.backward(&state.pair.query, &cache, dq.view());
    let norm = global_norm(&grads);
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if norm > config.grad_clip {
        scale(&mut grads, config.grad_clip / norm);
    }
    state.optimizer.step(&mut state.pair.query, &grads)?;
    momentum_update(&mut state.pair.key, &state.pair.query, config.momentum)?;
    state.queue.enqueue_dequeue(k.view(), batch_ids)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_recall_at_1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P: ParamSet> {
    pub pair: EncoderPair<P>,
    pub queue: EmbeddingQueue,
    pub history: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

/// Runs `config.epochs` epochs. `on_epoch` sees the state after
/// initialization (epoch 0) and after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train<E: Encoder>(
    encoder: &E,
    init: E::Params,
    corpus: &Corpus,
    fns: &[EncodedFunction],
    val_fns: &[EncodedFunction],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &TrainState<E::Params>) -> Result<()>,
) -> Result<TrainOutcome<E::Params>> {
    config.validate()?;
    if fns.len() != corpus.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} encoded functions for {} variants",
            fns.len(),
            corpus.len()
        )));
    }
    let ids = corpus.trainable_ids(config.pair_policy);
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pair = EncoderPair::new(init);
    let queue = init_queue(fns, encoder, &pair.key, config.queue_size, rng.gen())?;
    let mut state = TrainState::new(pair, queue, config);
    on_epoch(0, &state)?;

    let val_refs: Vec<&EncodedFunction> = val_fns.iter().collect();
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    for epoch in 1..=config.epochs {
        let mut losses = Vec::new();
        for _ in 0..config.passes_per_epoch {
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let loss = train_step(encoder, &mut state, batch, corpus, fns, config, &mut rng)?;
                debug!("epoch {epoch} step {}: loss {loss:.5}", step_losses.len() + losses.len());
                losses.push(loss);
            }
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        step_losses.extend(losses);
        let val_recall_at_1 = if val_refs.is_empty() {
            None
        } else {
            let emb = embed_all(encoder, &state.pair.query, &val_refs, 64)?;
            let keys: Vec<_> = val_fns.iter().map(|f| f.key.clone()).collect();
            self_search_recall_at_1(&emb, &keys).ok()
        };
        info!(
            "epoch {epoch}: mean loss {mean_loss:.4}, validation recall@1 {}",
            val_recall_at_1.map_or("n/a".to_string(), |r| format!("{r:.3}"))
        );
        history.push(EpochStats {
            epoch,
            mean_loss,
            val_recall_at_1,
        });
        on_epoch(epoch, &state)?;
    }
    Ok(TrainOutcome {
        pair: state.pair,
        queue: state.queue,
        history,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use crate::encoder::{encode_corpus, init_encoder, EncoderConfig, FunctionEncoder};
    use crate::normalizer::{build_vocab, NormalizerConfig};
    use crate::params::zip_apply;

    fn small() -> (Corpus, Vec<EncodedFunction>, crate::encoder::EncoderParams) {
        let corpus = synth_corpus(20, 3, 4).unwrap();
        let ncfg = NormalizerConfig::default();
        let vocab = build_vocab(&corpus, &ncfg).unwrap();
        let fns = encode_corpus(&corpus, &vocab, &ncfg).unwrap();
        let cfg = EncoderConfig {
            d: 8,
            filters: 8,
            hidden: 16,
            layers: 2,
            ..EncoderConfig::default()
        };
        let params = init_encoder(&cfg, &vocab, 1).unwrap();
        (corpus, fns, params)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            queue_size: 16,
            batch_size: 8,
            epochs: 5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::desk().validate().is_ok());
        assert!(TrainConfig { queue_size: 250, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { momentum: 1.0, ..TrainConfig::desk() }.validate().is_err());
        assert!(TrainConfig { tau: 0.0, ..TrainConfig::desk() }.validate().is_err());
    }

    #[test]
    fn step_follows_update_algebra() {
        let (corpus, fns, params) = small();
        let config = cfg();
        let queue = init_queue(&fns, &FunctionEncoder, &params, config.queue_size, 0).unwrap();
        let mut state = TrainState::new(EncoderPair::new(params), queue, &config);
        let before = state.clone();
        let ids: Vec<String> = corpus.function_ids().take(8).map(String::from).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let loss = train_step(&FunctionEncoder, &mut state, &ids, &corpus, &fns, &config, &mut rng).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
        let mut expected = before.pair.key.clone();
        momentum_update(&mut expected, &state.pair.query, config.momentum).unwrap();
        let mut diff = expected.clone();
        zip_apply(&mut diff, &state.pair.key, |a, b| *a -= b).unwrap();
        assert!(global_norm(&diff) < 1e-12);
        assert_ne!(state.pair.query, before.pair.query);
        assert_eq!(state.queue.capacity(), config.queue_size);
        assert_eq!(state.queue.head(), 8);
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (corpus, fns, params) = small();
        let config = TrainConfig { epochs: 0, ..cfg() };
        let out = train(&FunctionEncoder, params.clone(), &corpus, &fns, &[], &config, |_, _| Ok(())).unwrap();
        assert_eq!(out.pair, EncoderPair::new(params));
        assert!(out.history.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_loss_trace() {
        let (corpus, fns, params) = small();
        let config = TrainConfig { epochs: 2, ..cfg() };
        let a = train(&FunctionEncoder, params.clone(), &corpus, &fns, &[], &config, |_, _| Ok(())).unwrap();
        let b = train(&FunctionEncoder, params, &corpus, &fns, &[], &config, |_, _| Ok(())).unwrap();
        assert_eq!(a.step_losses, b.step_losses);
        assert_eq!(a.pair, b.pair);
    }

    #[test]
    fn smoke_run_loss_decreases() {
        let (corpus, fns, params) = small();
        let out = train(&FunctionEncoder, params, &corpus, &fns, &[], &cfg(), |_, _| Ok(())).unwrap();
        let first = out.history.first().unwrap().mean_loss;
        let last = out.history.last().unwrap().mean_loss;
        assert!(last < first, "{:?}", out.history);
    }
}
