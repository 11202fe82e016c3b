//! The full instruction → block → graph function encoder.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block_encoder::{backward_blocks, forward_blocks, init_strand_params, StrandCache, StrandCnnParams};
use crate::corpus::{Corpus, FunctionVariant, VariantKey};
use crate::error::{Error, Result};
use crate::graph_encoder::{self, init_graph_params, GraphBatch, GraphCache, GraphEncoderConfig, GraphEncoderParams, EMBED_DIM};
use crate::nn::Activation;
use crate::normalizer::{normalize_instruction, EncodedInstruction, NormalizerConfig, Vocab};
use crate::params::{prefixed, ParamSet};
use crate::token_embed::{init_tables, TokenEmbeddingTable};

/// A variant reduced to vocabulary ids: what the encoder actually consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFunction {
    pub key: VariantKey,
    pub blocks: Vec<Vec<EncodedInstruction>>,
    pub edges: Vec<(usize, usize)>,
}

impl EncodedFunction {
    pub fn from_variant(variant: &FunctionVariant, vocab: &Vocab, config: &NormalizerConfig) -> Result<Self> {
        let blocks = variant
            .acfg
            .blocks
            .iter()
            .map(|b| {
                b.instructions
                    .iter()
                    .map(|ins| Ok(vocab.encode(&normalize_instruction(ins, config)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            key: variant.key(),
            blocks,
            edges: variant.acfg.edges.clone(),
        })
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// Encodes every variant of `corpus`, in corpus order.
pub fn encode_corpus(corpus: &Corpus, vocab: &Vocab, config: &NormalizerConfig) -> Result<Vec<EncodedFunction>> {
    corpus
        .variants()
        .par_iter()
        .map(|v| EncodedFunction::from_variant(v, vocab, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Token embedding width; instruction vectors are `2d` wide.
    pub d: usize,
    pub windows: Vec<usize>,
    pub filters: usize,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub two_tuple: bool,
    pub two_tuple_node_cap: usize,
    pub directed: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            windows: vec![2, 3, 4],
            filters: 64,
            hidden: 128,
            layers: 3,
            activation: Activation::Tanh,
            two_tuple: true,
            two_tuple_node_cap: graph_encoder::DEFAULT_TWO_TUPLE_NODE_CAP,
            directed: false,
        }
    }
}

impl EncoderConfig {
    pub fn block_width(&self) -> usize {
        self.windows.len() * self.filters + 2 * self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub tokens: TokenEmbeddingTable,
    pub strand: StrandCnnParams,
    pub graph: GraphEncoderParams,
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        prefixed("tokens", self.tokens.tensors())
            .chain(prefixed("strand", self.strand.tensors()))
            .chain(prefixed("graph", self.graph.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        prefixed("tokens", self.tokens.tensors_mut())
            .chain(prefixed("strand", self.strand.tensors_mut()))
            .chain(prefixed("graph", self.graph.tensors_mut()))
            .collect()
    }
}

pub fn init_encoder(config: &EncoderConfig, vocab: &Vocab, seed: u64) -> Result<EncoderParams> {
    let tokens = init_tables(vocab.op_count(), vocab.operand_count(), config.d, seed)?;
    let strand = init_strand_params(
        &config.windows,
        config.filters,
        config.d,
        config.activation,
        seed.wrapping_add(1),
    )?;
    let graph = init_graph_params(
        &GraphEncoderConfig {
            input: config.block_width(),
            hidden: config.hidden,
            output: EMBED_DIM,
            layers: config.layers,
            activation: config.activation,
            two_tuple: config.two_tuple,
            two_tuple_node_cap: config.two_tuple_node_cap,
            directed: config.directed,
        },
        seed.wrapping_add(2),
    )?;
    Ok(EncoderParams { tokens, strand, graph })
}

/// Anything the trainer can drive: a batched forward to unit-norm rows and a
/// backward from the gradient w.r.t. those rows.
pub trait Encoder: Sync {
    type Params: ParamSet + Send + Sync;
    type Cache;

    fn forward(&self, params: &Self::Params, batch: &[&EncodedFunction]) -> Result<(Array2<f64>, Self::Cache)>;

    fn backward(&self, params: &Self::Params, cache: &Self::Cache, d_emb: ArrayView2<f64>) -> Self::Params;

    /// Forward without keeping a cache.
    fn embed(&self, params: &Self::Params, batch: &[&EncodedFunction]) -> Result<Array2<f64>> {
        Ok(self.forward(params, batch)?.0)
    }
}

/// The three-level encoder over [`EncoderParams`].
#[derive(Debug, Clone, Copy, Default)]
pub struct FunctionEncoder;

pub struct FunctionCache {
    instructions: Vec<EncodedInstruction>,
    strand: StrandCache,
    batch: GraphBatch,
    graph: GraphCache,
}

impl Encoder for FunctionEncoder {
    type Params = EncoderParams;
    type Cache = FunctionCache;

    fn forward(&self, params: &EncoderParams, batch: &[&EncodedFunction]) -> Result<(Array2<f64>, FunctionCache)> {
        if batch.is_empty() {
            return Err(Error::Precondition("cannot encode an empty batch".into()));
        }
        let mut instructions = Vec::with_capacity(batch.iter().map(|f| f.instruction_count()).sum());
        let mut ranges: Vec<Range<usize>> = Vec::new();
        for f in batch {
            for b in &f.blocks {
                let start = instructions.len();
                instructions.extend_from_slice(b);
                ranges.push(start..instructions.len());
            }
        }
        let x = params.tokens.embed_sequence(&instructions)?;
        let (block_vecs, strand) = forward_blocks(&params.strand, x.view(), &ranges)?;
        let graphs: Vec<(usize, &[(usize, usize)])> = batch.iter().map(|f| (f.blocks.len(), f.edges.as_slice())).collect();
        let cap = params.graph.pair.as_ref().map(|_| params.graph.two_tuple_node_cap);
        let gbatch = GraphBatch::new(&graphs, cap)?;
        let (emb, graph) = graph_encoder::forward(&params.graph, &gbatch, block_vecs.view())?;
        Ok((
            emb,
            FunctionCache {
                instructions,
                strand,
                batch: gbatch,
                graph,
            },
        ))
    }

    fn backward(&self, params: &EncoderParams, cache: &FunctionCache, d_emb: ArrayView2<f64>) -> EncoderParams {
        let (graph, d_blocks) = graph_encoder::backward(&params.graph, &cache.batch, &cache.graph, d_emb);
        let (strand, d_x) = backward_blocks(&params.strand, &cache.strand, d_blocks.view());
        let mut tokens = crate::params::zeros_like(&params.tokens);
        params.tokens.accumulate_grad(&cache.instructions, d_x.view(), &mut tokens);
        EncoderParams { tokens, strand, graph }
    }
}

pub fn encode_function(params: &EncoderParams, f: &EncodedFunction) -> Result<Array1<f64>> {
    Ok(FunctionEncoder.embed(params, &[f])?.row(0).to_owned())
}

pub fn encode_batch(params: &EncoderParams, fs: &[&EncodedFunction]) -> Result<Array2<f64>> {
    FunctionEncoder.embed(params, fs)
}

/// Embeds any number of functions in parallel chunks of `chunk` rows. Chunking
/// cannot change results for an encoder without cross-sample statistics.
pub fn embed_all<E: Encoder>(encoder: &E, params: &E::Params, fs: &[&EncodedFunction], chunk: usize) -> Result<Array2<f64>> {
    if fs.is_empty() {
        return Ok(Array2::zeros((0, EMBED_DIM)));
    }
    let parts = fs
        .par_chunks(chunk.max(1))
        .map(|c| encoder.embed(params, c))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))
}
