//! The complete graph-to-text model: shared embedding table, stacked graph
//! encoder and attention decoder over one [`ParamStore`].

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    beam_search, decode_step, log_softmax, nll_loss, DecoderParams, DecoderState, Hypothesis,
    StepScorer,
};
use crate::encoder::{
    init_node_embeddings, register_layers, stack_layers, Aggregation, EncoderGraph, EncoderKind,
    Init, LayerParams,
};
use crate::error::{Error, Result};
use crate::graph::{drop_graphs, to_levi, to_multigraph, EdgeLabel, MultiGraph};
use crate::kg::Triple;
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{Vocabulary, BOS_ID, EOS_ID, GLOBAL_ID, PAD_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub aggregation: Aggregation,
    pub encoder: EncoderKind,
    /// Graphs kept by the multi-graph encoder; the rest are ablated.
    pub graphs: BTreeSet<EdgeLabel>,
    /// Divide neighbor sums by the in-degree.
    pub mean_neighbors: bool,
    pub input_feeding: bool,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 360,
            layers: 6,
            aggregation: Aggregation::Sum,
            encoder: EncoderKind::Mgcn,
            graphs: EdgeLabel::ALL.into_iter().collect(),
            mean_neighbors: false,
            input_feeding: true,
            init_scale: 0.08,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 {
            return Err(Error::Config("hidden size and layer count must be >= 1".into()));
        }
        if !self.graphs.contains(&EdgeLabel::SelfLoop) {
            return Err(Error::SelfGraphRemoval);
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be a finite non-negative number".into()));
        }
        Ok(())
    }

    /// Labels removed from the full six-graph set.
    pub fn removed_graphs(&self) -> BTreeSet<EdgeLabel> {
        EdgeLabel::ALL
            .into_iter()
            .filter(|l| !self.graphs.contains(l))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    embedding: ParamId,
    layers: Vec<LayerParams>,
    decoder: DecoderParams,
}

impl Model {
    /// Registers every parameter, initialized uniformly in
    /// `[-init_scale, init_scale]` from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            rng: &mut rng,
            scale: config.init_scale,
        };
        let mut store = ParamStore::new();
        let d = config.hidden;
        let embedding = store.add("embedding", init.matrix(vocab.len(), d))?;
        let layers = register_layers(
            &mut store,
            config.encoder,
            config.aggregation,
            config.layers,
            d,
            &mut init,
        )?;
        let decoder = DecoderParams::register(
            &mut store,
            embedding,
            d,
            config.layers * d,
            config.input_feeding,
            &mut init,
        )?;
        Ok(Model {
            config,
            vocab,
            store,
            embedding,
            layers,
            decoder,
        })
    }

    pub fn embedding(&self) -> ParamId {
        self.embedding
    }

    pub fn decoder(&self) -> &DecoderParams {
        &self.decoder
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Multi-graph of `triples` with the configured graphs removed.
    pub fn multigraph(&self, triples: &[Triple]) -> Result<MultiGraph> {
        drop_graphs(&to_multigraph(triples)?, &self.config.removed_graphs())
    }

    /// Builds the encoder input for `triples` according to the encoder kind.
    pub fn prepare(&self, triples: &[Triple]) -> Result<EncoderGraph> {
        match self.config.encoder {
            EncoderKind::Mgcn => Ok(EncoderGraph::from_multigraph(&self.multigraph(triples)?)),
            EncoderKind::Levi => Ok(EncoderGraph::from_levi(&to_levi(triples)?)),
        }
    }

    /// `h_final` for `graph`, shape `N × layers·hidden`.
    pub fn encode(&self, tape: &mut Tape, graph: &EncoderGraph) -> Result<Var> {
        let table = tape.param(self.embedding);
        let h0 = init_node_embeddings(tape, graph.nodes(), table, &self.vocab)?;
        let (h_final, _) = stack_layers(tape, graph, h0, &self.layers, self.config.mean_neighbors)?;
        Ok(h_final)
    }

    /// Summed negative log-likelihood of `reference` and its token count
    /// (end-of-sequence included).
    pub fn loss(&self, tape: &mut Tape, graph: &EncoderGraph, reference: &[String]) -> Result<(Var, usize)> {
        let memory = self.encode(tape, graph)?;
        nll_loss(tape, &self.decoder, memory, &self.vocab.encode(reference))
    }

    /// Encodes once and returns `h_final` as a plain tensor.
    pub fn memory(&self, graph: &EncoderGraph) -> Result<Tensor> {
        let mut tape = Tape::new(&self.store);
        let h = self.encode(&mut tape, graph)?;
        Ok(tape.value(h).clone())
    }

    pub fn scorer(&self, memory: Tensor) -> ModelScorer<'_> {
        ModelScorer {
            model: self,
            memory,
        }
    }

    pub fn generate(&self, graph: &EncoderGraph, beam: usize, max_len: usize) -> Result<Hypothesis> {
        let memory = self.memory(graph)?;
        beam_search(&self.scorer(memory), beam, max_len)
    }

    pub fn words(&self, tokens: &[usize]) -> Vec<String> {
        tokens
            .iter()
            .map(|&t| self.vocab.token(t).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// Scores next tokens with the decoder over a fixed encoded graph. Padding,
/// start and global tokens are never proposed.
pub struct ModelScorer<'m> {
    model: &'m Model,
    memory: Tensor,
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> Result<DecoderState> {
        let d = &self.model.decoder;
        Ok(DecoderState::zeros(d.hidden, d.memory_width))
    }

    fn step(&self, state: &DecoderState, prefix: &[usize]) -> Result<(Vec<f64>, DecoderState)> {
        let mut tape = Tape::new(&self.model.store);
        let memory = tape.constant(self.memory.clone());
        let vars = state.to_vars(&mut tape);
        let prev = prefix.last().copied().unwrap_or(BOS_ID);
        let out = decode_step(&mut tape, &self.model.decoder, &vars, prev, memory)?;
        let mut log_probs = log_softmax(tape.value(out.logits).data());
        for banned in [PAD_ID, BOS_ID, GLOBAL_ID] {
            if let Some(lp) = log_probs.get_mut(banned) {
                *lp = f64::NEG_INFINITY;
            }
        }
        Ok((log_probs, DecoderState::from_vars(&tape, &out.state)))
    }

    fn eos(&self) -> Option<usize> {
        Some(EOS_ID)
    }
}
