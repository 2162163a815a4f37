//! Two-layer LSTM decoder with bilinear cross-attention over the node
//! representations, tied input/output embeddings, teacher-forced loss and
//! beam search.

use std::cmp::Ordering;

use rand::Rng;

use crate::encoder::Init;
use crate::error::{Error, Result};
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    /// `4d × input`
    pub w_input: ParamId,
    /// `4d × d`
    pub w_hidden: ParamId,
    /// `1 × 4d`
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderParams {
    /// `|V| × d`; also the output projection.
    pub embedding: ParamId,
    pub lstm: [LstmParams; 2],
    /// `d × w` where `w` is the width of the node representations.
    pub attention: ParamId,
    /// `d × (d + w)`
    pub combine_weight: ParamId,
    pub combine_bias: ParamId,
    pub hidden: usize,
    pub memory_width: usize,
    pub input_feeding: bool,
}

impl DecoderParams {
    /// Registers decoder parameters. The embedding table must already exist
    /// in `store`, since the encoder shares it.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        embedding: ParamId,
        hidden: usize,
        memory_width: usize,
        input_feeding: bool,
        init: &mut Init<R>,
    ) -> Result<Self> {
        let d = hidden;
        let first_input = if input_feeding { d + memory_width } else { d };
        let mut lstm = Vec::with_capacity(2);
        for (layer, input) in [first_input, d].into_iter().enumerate() {
            lstm.push(LstmParams {
                w_input: store.add(format!("decoder.lstm{layer}.w_input"), init.matrix(4 * d, input))?,
                w_hidden: store.add(format!("decoder.lstm{layer}.w_hidden"), init.matrix(4 * d, d))?,
                bias: store.add(format!("decoder.lstm{layer}.bias"), init.matrix(1, 4 * d))?,
            });
        }
        Ok(DecoderParams {
            embedding,
            lstm: [lstm[0], lstm[1]],
            attention: store.add("decoder.attention", init.matrix(d, memory_width))?,
            combine_weight: store.add("decoder.combine.weight", init.matrix(d, d + memory_width))?,
            combine_bias: store.add("decoder.combine.bias", init.matrix(1, d))?,
            hidden,
            memory_width,
            input_feeding,
        })
    }

    /// The softmax projection; identical to the embedding table.
    pub fn output_projection(&self) -> ParamId {
        self.embedding
    }
}

/// Recurrent state as plain values, for decoding outside a training tape.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: [Tensor; 2],
    pub cell: [Tensor; 2],
    pub context: Tensor,
}

impl DecoderState {
    pub fn zeros(hidden: usize, memory_width: usize) -> Self {
        DecoderState {
            hidden: [Tensor::zeros(1, hidden), Tensor::zeros(1, hidden)],
            cell: [Tensor::zeros(1, hidden), Tensor::zeros(1, hidden)],
            context: Tensor::zeros(1, memory_width),
        }
    }

    pub fn to_vars(&self, tape: &mut Tape) -> StateVars {
        StateVars {
            hidden: [tape.constant(self.hidden[0].clone()), tape.constant(self.hidden[1].clone())],
            cell: [tape.constant(self.cell[0].clone()), tape.constant(self.cell[1].clone())],
            context: tape.constant(self.context.clone()),
        }
    }

    pub fn from_vars(tape: &Tape, vars: &StateVars) -> Self {
        DecoderState {
            hidden: vars.hidden.map(|v| tape.value(v).clone()),
            cell: vars.cell.map(|v| tape.value(v).clone()),
            context: tape.value(vars.context).clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(Tensor::is_finite) && self.context.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateVars {
    pub hidden: [Var; 2],
    pub cell: [Var; 2],
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `1 × |V|`
    pub logits: Var,
    pub state: StateVars,
    /// `1 × N`, one weight per node.
    pub attention: Var,
}

fn lstm_cell(
    tape: &mut Tape,
    params: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
    d: usize,
) -> Result<(Var, Var)> {
    let wi = tape.param(params.w_input);
    let wh = tape.param(params.w_hidden);
    let b = tape.param(params.bias);
    let xi = tape.matmul_nt(x, wi)?;
    let hh = tape.matmul_nt(h, wh)?;
    let sum = tape.add(xi, hh)?;
    let gates = tape.add(sum, b)?;
    let i = tape.slice_cols(gates, 0, d)?;
    let f = tape.slice_cols(gates, d, d)?;
    let g = tape.slice_cols(gates, 2 * d, d)?;
    let o = tape.slice_cols(gates, 3 * d, d)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_next = tape.add(keep, write)?;
    let squashed = tape.tanh(c_next);
    let h_next = tape.mul(o, squashed)?;
    Ok((h_next, c_next))
}

/// One decoding step: embed `prev_token`, run both LSTM layers, attend over
/// the rows of `memory` (`N × w`) and project onto the vocabulary through the
/// tied embedding table.
pub fn decode_step(
    tape: &mut Tape,
    params: &DecoderParams,
    state: &StateVars,
    prev_token: usize,
    memory: Var,
) -> Result<StepOutput> {
    let d = params.hidden;
    let table = tape.param(params.embedding);
    let embedded = tape.gather_rows(table, &[prev_token])?;
    let input = if params.input_feeding {
        tape.concat(&[embedded, state.context], Axis::Cols)?
    } else {
        embedded
    };
    let (h0, c0) = lstm_cell(tape, &params.lstm[0], input, state.hidden[0], state.cell[0], d)?;
    let (h1, c1) = lstm_cell(tape, &params.lstm[1], h0, state.hidden[1], state.cell[1], d)?;

    let a = tape.param(params.attention);
    let query = tape.matmul(h1, a)?;
    let scores = tape.matmul_nt(query, memory)?;
    let attention = tape.softmax(scores, Axis::Cols)?;
    let context = tape.attend(attention, memory)?;

    let joined = tape.concat(&[h1, context], Axis::Cols)?;
    let wc = tape.param(params.combine_weight);
    let bc = tape.param(params.combine_bias);
    // Linear combination: a squashing nonlinearity here caps the logit
    // range and slows fitting considerably at small learning rates.
    let output = tape.matmul_nt(joined, wc)?;
    let output = tape.add(output, bc)?;
    let logits = tape.matmul_nt(output, table)?;

    Ok(StepOutput {
        logits,
        state: StateVars {
            hidden: [h0, h1],
            cell: [c0, c1],
            context,
        },
        attention,
    })
}

/// Teacher-forced negative log-likelihood of `reference` followed by the
/// end-of-sequence token. Returns the summed loss and the number of
/// predicted tokens (`reference.len() + 1`).
pub fn nll_loss(
    tape: &mut Tape,
    params: &DecoderParams,
    memory: Var,
    reference: &[usize],
) -> Result<(Var, usize)> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let mut state = DecoderState::zeros(params.hidden, params.memory_width).to_vars(tape);
    let mut logits = Vec::with_capacity(reference.len() + 1);
    let mut targets = Vec::with_capacity(reference.len() + 1);
    let mut prev = BOS_ID;
    for &gold in reference.iter().chain(std::iter::once(&EOS_ID)) {
        let step = decode_step(tape, params, &state, prev, memory)?;
        logits.push(step.logits);
        targets.push(gold);
        state = step.state;
        prev = gold;
    }
    let stacked = tape.concat(&logits, Axis::Rows)?;
    let loss = tape.cross_entropy(stacked, &targets)?;
    Ok((loss, targets.len()))
}

/// Log-softmax of a row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let lse = max + crate::numerics::order_free_sum(&mut exps).ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Anything that can score next-token candidates given a decoding prefix.
pub trait StepScorer {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;

    /// Log-probabilities over the vocabulary for the token following
    /// `prefix`, plus the successor state.
    fn step(&self, state: &Self::State, prefix: &[usize]) -> Result<(Vec<f64>, Self::State)>;

    /// End-of-sequence token, if the vocabulary has one.
    fn eos(&self) -> Option<usize>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, end-of-sequence excluded.
    pub tokens: Vec<usize>,
    /// Summed log-probability, end-of-sequence included.
    pub log_prob: f64,
    /// Number of scored tokens, end-of-sequence included.
    pub length: usize,
    pub ended: bool,
}

impl Hypothesis {
    /// Length-normalized score.
    pub fn score(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.log_prob / self.length as f64
        }
    }
}

fn final_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.length.cmp(&b.length))
}

/// Beam search with length-normalized final scoring. Each step keeps the
/// `beam` best extensions by log-probability (ties: lower token sequence);
/// extensions ending in end-of-sequence leave the beam as finished.
/// Search stops once `beam` hypotheses have finished, the beam is empty or
/// `max_len` tokens have been produced; hypotheses cut off by `max_len` are
/// returned only if none finished.
pub fn beam_search<S: StepScorer>(scorer: &S, beam: usize, max_len: usize) -> Result<Hypothesis> {
    if beam == 0 {
        return Err(Error::InvalidArgument("beam must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    let eos = scorer.eos();
    let mut alive: Vec<(Hypothesis, S::State)> = vec![(
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            length: 0,
            ended: false,
        },
        scorer.start()?,
    )];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        let mut candidates: Vec<(Hypothesis, usize)> = Vec::new();
        let mut successors = Vec::with_capacity(alive.len());
        for (parent, (hyp, state)) in alive.iter().enumerate() {
            let (log_probs, next) = scorer.step(state, &hyp.tokens)?;
            successors.push(next);
            for (token, lp) in log_probs.into_iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let ended = Some(token) == eos;
                let mut tokens = hyp.tokens.clone();
                if !ended {
                    tokens.push(token);
                }
                candidates.push((
                    Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + lp,
                        length: hyp.length + 1,
                        ended,
                    },
                    parent,
                ));
            }
        }
        candidates.sort_by(|(a, _), (b, _)| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| a.tokens.cmp(&b.tokens))
                .then_with(|| a.ended.cmp(&b.ended))
        });
        candidates.truncate(beam);

        let mut next_alive = Vec::with_capacity(candidates.len());
        for (hyp, parent) in candidates {
            if hyp.ended {
                finished.push(hyp);
            } else {
                next_alive.push((hyp, successors[parent].clone()));
            }
        }
        alive = next_alive;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }
    // Unfinished hypotheses only compete when nothing reached end-of-sequence.
    if finished.is_empty() {
        finished.extend(alive.into_iter().map(|(h, _)| h));
    }
    finished.sort_by(final_order);
    finished
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("beam search produced no hypothesis".into()))
}

/// Argmax decoding; ties go to the lowest token index.
pub fn greedy_decode<S: StepScorer>(scorer: &S, max_len: usize) -> Result<Hypothesis> {
    let eos = scorer.eos();
    let mut state = scorer.start()?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        length: 0,
        ended: false,
    };
    while hyp.length < max_len {
        let (log_probs, next) = scorer.step(&state, &hyp.tokens)?;
        let (token, lp) = log_probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, lp)| if lp > best.1 { (i, lp) } else { best });
        hyp.log_prob += lp;
        hyp.length += 1;
        if Some(token) == eos {
            hyp.ended = true;
            break;
        }
        hyp.tokens.push(token);
        state = next;
    }
    Ok(hyp)
}
