//! Graph convolutional encoders.
//!
//! The multi-graph encoder runs one single-weight convolution per active
//! edge label and merges the per-graph outputs with an [`Aggregation`].
//! The Levi baseline runs one convolution with separate weights for
//! incoming, outgoing and self edges. Both stack `n` layers and concatenate
//! the layer outputs column-wise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeLabel, GraphNode, LeviGraph, MultiGraph, NodeKind};
use crate::numerics::{Axis, EdgeList, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{tokenize, Vocabulary, GLOBAL_ID, UNK_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Avg,
    Conv,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Aggregation::Sum),
            "avg" => Ok(Aggregation::Avg),
            "conv" => Ok(Aggregation::Conv),
            other => Err(Error::Config(format!(
                "aggregation must be sum, avg or conv, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Avg => "avg",
            Aggregation::Conv => "conv",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mgcn,
    Levi,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mgcn" => Ok(EncoderKind::Mgcn),
            "levi" => Ok(EncoderKind::Levi),
            other => Err(Error::Config(format!(
                "encoder must be mgcn or levi, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Mgcn => "mgcn",
            EncoderKind::Levi => "levi",
        })
    }
}

/// One convolution: a `d×d` weight and a `1×d` bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, d: usize, init: &mut Init<R>) -> Result<Self> {
        Ok(ConvParams {
            weight: store.add(format!("{prefix}.weight"), init.matrix(d, d))?,
            bias: store.add(format!("{prefix}.bias"), init.matrix(1, d))?,
        })
    }
}

/// Three-direction parameters of the Levi baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirectionalParams {
    pub incoming: ConvParams,
    pub outgoing: ConvParams,
    pub self_loop: ConvParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MgcnLayerParams {
    /// Indexed by [`EdgeLabel::index`].
    pub graphs: [ConvParams; 6],
    pub aggregation: Aggregation,
    /// `6×d` per-(graph, channel) weights and `1×d` bias, for `Conv` only.
    pub conv: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerParams {
    Mgcn(MgcnLayerParams),
    Levi(DirectionalParams),
}

/// Uniform initializer over `[-scale, scale]`.
pub struct Init<'r, R: Rng> {
    pub rng: &'r mut R,
    pub scale: f64,
}

impl<R: Rng> Init<'_, R> {
    pub fn matrix(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-self.scale..=self.scale))
            .collect();
        Tensor::matrix(rows, cols, data)
    }
}

/// Registers the parameters of `layers` encoder layers of width `d`.
pub fn register_layers<R: Rng>(
    store: &mut ParamStore,
    kind: EncoderKind,
    aggregation: Aggregation,
    layers: usize,
    d: usize,
    init: &mut Init<R>,
) -> Result<Vec<LayerParams>> {
    let mut out = Vec::with_capacity(layers);
    for k in 0..layers {
        let prefix = format!("encoder.layer{k}");
        let layer = match kind {
            EncoderKind::Mgcn => {
                let mut graphs = Vec::with_capacity(6);
                for label in EdgeLabel::ALL {
                    graphs.push(ConvParams::register(store, &format!("{prefix}.{label}"), d, init)?);
                }
                let conv = if aggregation == Aggregation::Conv {
                    Some((
                        store.add(format!("{prefix}.aggregate.weight"), init.matrix(6, d))?,
                        store.add(format!("{prefix}.aggregate.bias"), init.matrix(1, d))?,
                    ))
                } else {
                    None
                };
                LayerParams::Mgcn(MgcnLayerParams {
                    graphs: graphs.try_into().expect("six labels"),
                    aggregation,
                    conv,
                })
            }
            EncoderKind::Levi => LayerParams::Levi(DirectionalParams {
                incoming: ConvParams::register(store, &format!("{prefix}.in"), d, init)?,
                outgoing: ConvParams::register(store, &format!("{prefix}.out"), d, init)?,
                self_loop: ConvParams::register(store, &format!("{prefix}.self"), d, init)?,
            }),
        };
        out.push(layer);
    }
    Ok(out)
}

/// Edge lists ready for the tape, built once per input graph.
#[derive(Debug, Clone)]
pub enum EncoderGraph {
    Multi {
        nodes: Vec<GraphNode>,
        /// Active labels with their edges, in canonical label order.
        graphs: Vec<(EdgeLabel, EdgeList)>,
    },
    Levi {
        nodes: Vec<GraphNode>,
        incoming: EdgeList,
        outgoing: EdgeList,
        self_loop: EdgeList,
    },
}

impl EncoderGraph {
    pub fn from_multigraph(mg: &MultiGraph) -> Self {
        let n = mg.node_count();
        EncoderGraph::Multi {
            nodes: mg.nodes().to_vec(),
            graphs: mg
                .active_labels()
                .into_iter()
                .map(|l| (l, EdgeList::new(n, mg.edges(l).to_vec())))
                .collect(),
        }
    }

    pub fn from_levi(levi: &LeviGraph) -> Self {
        let n = levi.node_count();
        EncoderGraph::Levi {
            nodes: levi.nodes.clone(),
            incoming: EdgeList::new(n, levi.edges.clone()),
            outgoing: EdgeList::new(n, levi.edges.iter().map(|&(s, t)| (t, s)).collect()),
            self_loop: EdgeList::new(n, (0..n).map(|i| (i, i)).collect()),
        }
    }

    pub fn nodes(&self) -> &[GraphNode] {
        match self {
            EncoderGraph::Multi { nodes, .. } | EncoderGraph::Levi { nodes, .. } => nodes,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }
}

/// `h0`: each node row is the mean embedding of its label tokens (unknown
/// tokens use the unknown row); the global node uses the reserved global
/// token row.
pub fn init_node_embeddings(
    tape: &mut Tape,
    nodes: &[GraphNode],
    embedding: Var,
    vocab: &Vocabulary,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(nodes.len());
    for node in nodes {
        let ids = if node.kind == NodeKind::Global {
            vec![GLOBAL_ID]
        } else {
            let ids = vocab.encode(&tokenize(&node.label));
            if ids.is_empty() {
                vec![UNK_ID]
            } else {
                ids
            }
        };
        let gathered = tape.gather_rows(embedding, &ids)?;
        rows.push(tape.mean_rows(gathered)?);
    }
    tape.concat(&rows, Axis::Rows)
}

/// Pre-activation of one convolution: `Σ_{(i,j)} (W x_i + b)` for each node
/// `j`, or the neighbor mean when `mean` is set.
fn conv_preactivation(
    tape: &mut Tape,
    edges: &EdgeList,
    h: Var,
    params: &ConvParams,
    mean: bool,
) -> Result<Var> {
    let messages = tape.sparse_adj_matmul(edges, h, mean)?;
    let w = tape.param(params.weight);
    let linear = tape.matmul_nt(messages, w)?;
    let bias_counts: Vec<f64> = edges
        .in_degrees()
        .into_iter()
        .map(|d| if mean { (d > 0) as u8 as f64 } else { d as f64 })
        .collect();
    let counts = tape.constant(Tensor::matrix(edges.nodes, 1, bias_counts));
    let b = tape.param(params.bias);
    let bias = tape.matmul(counts, b)?;
    tape.add(linear, bias)
}

/// Single-weight graph convolution over one edge set:
/// `h_j = ReLU(Σ_{i→j} W x_i + b)`. Nodes without incoming edges get 0.
pub fn basic_encode(
    tape: &mut Tape,
    edges: &EdgeList,
    h: Var,
    params: &ConvParams,
    mean: bool,
) -> Result<Var> {
    let pre = conv_preactivation(tape, edges, h, params, mean)?;
    Ok(tape.relu(pre))
}

/// Levi baseline convolution with separate parameters for the three edge
/// directions.
pub fn directional_encode(
    tape: &mut Tape,
    incoming: &EdgeList,
    outgoing: &EdgeList,
    self_loop: &EdgeList,
    h: Var,
    params: &DirectionalParams,
    mean: bool,
) -> Result<Var> {
    let a = conv_preactivation(tape, incoming, h, &params.incoming, mean)?;
    let b = conv_preactivation(tape, outgoing, h, &params.outgoing, mean)?;
    let c = conv_preactivation(tape, self_loop, h, &params.self_loop, mean)?;
    let pre = tape.add_n(&[a, b, c])?;
    Ok(tape.relu(pre))
}

/// One MGCN layer: a convolution per active graph, then aggregation.
pub fn mgcn_layer(
    tape: &mut Tape,
    graphs: &[(EdgeLabel, EdgeList)],
    h: Var,
    params: &MgcnLayerParams,
    mean: bool,
) -> Result<Var> {
    if graphs.is_empty() {
        return Err(Error::NoGraphs);
    }
    let mut outputs = Vec::with_capacity(graphs.len());
    for (label, edges) in graphs {
        outputs.push(basic_encode(tape, edges, h, &params.graphs[label.index()], mean)?);
    }
    match params.aggregation {
        Aggregation::Sum => tape.add_n(&outputs),
        Aggregation::Avg => {
            let total = tape.add_n(&outputs)?;
            Ok(tape.div_scalar(total, outputs.len() as f64))
        }
        Aggregation::Conv => {
            let (weights, bias) = params
                .conv
                .ok_or_else(|| Error::Config("conv aggregation without conv parameters".into()))?;
            let rows: Vec<usize> = graphs.iter().map(|(l, _)| l.index()).collect();
            let w = tape.param(weights);
            let b = tape.param(bias);
            tape.conv_stack(w, &rows, &outputs, b)
        }
    }
}

/// Runs every layer and concatenates `h^(1) .. h^(n)` column-wise.
/// Returns the concatenation together with the individual layer outputs.
pub fn stack_layers(
    tape: &mut Tape,
    graph: &EncoderGraph,
    h0: Var,
    layers: &[LayerParams],
    mean: bool,
) -> Result<(Var, Vec<Var>)> {
    if layers.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    let mut h = h0;
    let mut outputs = Vec::with_capacity(layers.len());
    for layer in layers {
        h = match (graph, layer) {
            (EncoderGraph::Multi { graphs, .. }, LayerParams::Mgcn(p)) => {
                mgcn_layer(tape, graphs, h, p, mean)?
            }
            (
                EncoderGraph::Levi {
                    incoming,
                    outgoing,
                    self_loop,
                    ..
                },
                LayerParams::Levi(p),
            ) => directional_encode(tape, incoming, outgoing, self_loop, h, p, mean)?,
            _ => {
                return Err(Error::Config(
                    "encoder parameters do not match the graph kind".into(),
                ))
            }
        };
        outputs.push(h);
    }
    let last = *outputs.last().unwrap();
    let h_final = if outputs.len() == 1 {
        last
    } else {
        tape.concat(&outputs, Axis::Cols)?
    };
    Ok((h_final, outputs))
}
