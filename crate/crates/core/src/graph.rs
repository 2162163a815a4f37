//! Multi-graph and Levi-graph views of a triple set.
//!
//! Both views turn every triple occurrence into a relation node between its
//! two entities. The multi-graph additionally keeps direct entity-to-entity
//! edges, explicit reverse edges, self-loops and a global broadcast node,
//! each kind in its own adjacency list.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{dedup_triples, Triple};
use crate::preprocess::GLOBAL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    #[serde(rename = "self")]
    SelfLoop,
    Default1,
    Reverse1,
    Default2,
    Reverse2,
    Global,
}

impl EdgeLabel {
    pub const ALL: [EdgeLabel; 6] = [
        EdgeLabel::SelfLoop,
        EdgeLabel::Default1,
        EdgeLabel::Reverse1,
        EdgeLabel::Default2,
        EdgeLabel::Reverse2,
        EdgeLabel::Global,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeLabel::SelfLoop => "self",
            EdgeLabel::Default1 => "default1",
            EdgeLabel::Reverse1 => "reverse1",
            EdgeLabel::Default2 => "default2",
            EdgeLabel::Reverse2 => "reverse2",
            EdgeLabel::Global => "global",
        }
    }
}

impl fmt::Display for EdgeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EdgeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeLabel::ALL
            .into_iter()
            .find(|l| l.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown graph label `{s}`")))
    }
}

/// Parses a comma-separated list such as `self,default1,reverse1`.
pub fn parse_label_list(s: &str) -> Result<BTreeSet<EdgeLabel>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Entity,
    Relation,
    Global,
}

impl NodeKind {
    fn name(self) -> &'static str {
        match self {
            NodeKind::Entity => "entity",
            NodeKind::Relation => "relation",
            NodeKind::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    /// Entity label, predicate label, or the reserved global token.
    pub label: String,
    pub kind: NodeKind,
    /// Index of the originating triple for relation nodes.
    pub triple: Option<usize>,
}

impl GraphNode {
    /// Unique display name: relation nodes are suffixed with `#<triple>`.
    pub fn display_name(&self) -> String {
        match self.triple {
            Some(t) => format!("{}#{t}", self.label),
            None => self.label.clone(),
        }
    }
}

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiGraph {
    nodes: Vec<GraphNode>,
    adjacency: [Vec<Edge>; 6],
    active: [bool; 6],
}

impl MultiGraph {
    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self, label: EdgeLabel) -> &[Edge] {
        &self.adjacency[label.index()]
    }

    /// Labels that were not removed by [`drop_graphs`], in canonical order.
    pub fn active_labels(&self) -> Vec<EdgeLabel> {
        EdgeLabel::ALL
            .into_iter()
            .filter(|l| self.active[l.index()])
            .collect()
    }

    pub fn is_active(&self, label: EdgeLabel) -> bool {
        self.active[label.index()]
    }

    /// Builds a graph from raw parts without checking invariants; see
    /// [`validate`].
    pub fn from_parts(nodes: Vec<GraphNode>, adjacency: [Vec<Edge>; 6]) -> Self {
        MultiGraph {
            nodes,
            adjacency,
            active: [true; 6],
        }
    }

    pub fn edges_mut(&mut self, label: EdgeLabel) -> &mut Vec<Edge> {
        &mut self.adjacency[label.index()]
    }

    pub fn nodes_mut(&mut self) -> &mut Vec<GraphNode> {
        &mut self.nodes
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`. Edge
    /// lists keep their order; only endpoints are renamed.
    pub fn permuted(&self, perm: &[usize]) -> MultiGraph {
        assert_eq!(perm.len(), self.nodes.len(), "permutation length");
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = node.clone();
        }
        let adjacency = std::array::from_fn(|l| {
            self.adjacency[l]
                .iter()
                .map(|&(s, t)| (perm[s], perm[t]))
                .collect()
        });
        MultiGraph {
            nodes,
            adjacency,
            active: self.active,
        }
    }

    /// Text dump: node table followed by one edge section per label.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes {}", self.nodes.len()).unwrap();
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(out, "{i}\t{}\t{}", n.kind.name(), n.display_name()).unwrap();
        }
        for label in EdgeLabel::ALL {
            let edges = self.edges(label);
            writeln!(out, "edges {label} {}", edges.len()).unwrap();
            for (s, t) in edges {
                writeln!(out, "{s}\t{t}").unwrap();
            }
        }
        out
    }
}

fn entity_order(triples: &[Triple]) -> (Vec<String>, HashMap<&str, usize>) {
    let mut order = Vec::new();
    let mut index = HashMap::new();
    for t in triples {
        for e in [&t.subject, &t.object] {
            if !index.contains_key(e.as_str()) {
                index.insert(e.as_str(), order.len());
                order.push(e.clone());
            }
        }
    }
    (order, index)
}

fn transpose(edges: &[Edge]) -> Vec<Edge> {
    edges.iter().map(|&(s, t)| (t, s)).collect()
}

/// Builds the six-graph structure. Node order: entities by first
/// occurrence, then one relation node per triple, then the global node.
pub fn to_multigraph(triples: &[Triple]) -> Result<MultiGraph> {
    let triples = dedup_triples(triples.iter().cloned());
    if triples.is_empty() {
        return Err(Error::EmptyTripleSet);
    }
    let (entities, index) = entity_order(&triples);
    let e = entities.len();
    let m = triples.len();
    let global = e + m;

    let mut nodes: Vec<GraphNode> = entities
        .iter()
        .map(|label| GraphNode {
            label: label.clone(),
            kind: NodeKind::Entity,
            triple: None,
        })
        .collect();
    nodes.extend(triples.iter().enumerate().map(|(k, t)| GraphNode {
        label: t.predicate.clone(),
        kind: NodeKind::Relation,
        triple: Some(k),
    }));
    nodes.push(GraphNode {
        label: GLOBAL.to_string(),
        kind: NodeKind::Global,
        triple: None,
    });

    let self_loops = (0..=global).map(|i| (i, i)).collect();
    let mut default1 = Vec::with_capacity(2 * m);
    let mut default2 = Vec::with_capacity(m);
    let mut seen_pairs = HashSet::new();
    for (k, t) in triples.iter().enumerate() {
        let s = index[t.subject.as_str()];
        let o = index[t.object.as_str()];
        let r = e + k;
        default1.push((s, r));
        default1.push((r, o));
        if seen_pairs.insert((s, o)) {
            default2.push((s, o));
        }
    }
    let reverse1 = transpose(&default1);
    let reverse2 = transpose(&default2);
    let global_edges = (0..global).map(|j| (global, j)).collect();

    Ok(MultiGraph {
        nodes,
        adjacency: [self_loops, default1, reverse1, default2, reverse2, global_edges],
        active: [true; 6],
    })
}

/// Clears the adjacency of every label in `removed`. The self graph cannot
/// be removed.
pub fn drop_graphs(mg: &MultiGraph, removed: &BTreeSet<EdgeLabel>) -> Result<MultiGraph> {
    if removed.contains(&EdgeLabel::SelfLoop) {
        return Err(Error::SelfGraphRemoval);
    }
    let mut out = mg.clone();
    for label in removed {
        out.adjacency[label.index()].clear();
        out.active[label.index()] = false;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: &'static str,
    pub detail: String,
}

fn edge_set(edges: &[Edge]) -> BTreeSet<Edge> {
    edges.iter().copied().collect()
}

fn check_transpose(
    out: &mut Vec<Violation>,
    mg: &MultiGraph,
    forward: EdgeLabel,
    backward: EdgeLabel,
    invariant: &'static str,
) {
    if !mg.is_active(forward) || !mg.is_active(backward) {
        return;
    }
    let expected: BTreeSet<Edge> = edge_set(&transpose(mg.edges(forward)));
    let actual = edge_set(mg.edges(backward));
    if expected != actual {
        let missing: Vec<_> = expected.difference(&actual).collect();
        let extra: Vec<_> = actual.difference(&expected).collect();
        out.push(Violation {
            invariant,
            detail: format!("{backward} missing {missing:?}, unexpected {extra:?}"),
        });
    }
}

/// Checks every multi-graph invariant; an empty result means the graph is
/// well formed. Removed graphs are exempt from their edge-set checks.
pub fn validate(mg: &MultiGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = mg.nodes.len();

    let globals: Vec<usize> = mg
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, node)| node.kind == NodeKind::Global)
        .map(|(i, _)| i)
        .collect();
    if globals.as_slice() != [n.wrapping_sub(1)] {
        out.push(Violation {
            invariant: "single global node in last position",
            detail: format!("global nodes at {globals:?}, node count {n}"),
        });
    }

    let mut seen_triples = HashMap::new();
    for (i, node) in mg.nodes.iter().enumerate() {
        let bad = match node.kind {
            NodeKind::Relation => match node.triple {
                Some(t) => seen_triples.insert(t, i).is_some(),
                None => true,
            },
            _ => node.triple.is_some(),
        };
        if bad {
            out.push(Violation {
                invariant: "one relation node per triple",
                detail: format!("node {i} ({})", node.display_name()),
            });
        }
    }

    let out_of_range: Vec<(EdgeLabel, Edge)> = EdgeLabel::ALL
        .into_iter()
        .flat_map(|l| mg.edges(l).iter().map(move |&e| (l, e)))
        .filter(|&(_, (s, t))| s >= n || t >= n)
        .collect();
    if !out_of_range.is_empty() {
        out.push(Violation {
            invariant: "edge endpoints in range",
            detail: format!("{out_of_range:?}"),
        });
    }

    let self_expected: BTreeSet<Edge> = (0..n).map(|i| (i, i)).collect();
    let self_actual = edge_set(mg.edges(EdgeLabel::SelfLoop));
    if self_expected != self_actual || mg.edges(EdgeLabel::SelfLoop).len() != n {
        let missing: Vec<_> = self_expected.difference(&self_actual).collect();
        let extra: Vec<_> = self_actual.difference(&self_expected).collect();
        out.push(Violation {
            invariant: "self graph is the identity relation",
            detail: format!("missing {missing:?}, unexpected {extra:?}"),
        });
    }

    check_transpose(
        &mut out,
        mg,
        EdgeLabel::Default1,
        EdgeLabel::Reverse1,
        "reverse1 is the transpose of default1",
    );
    check_transpose(
        &mut out,
        mg,
        EdgeLabel::Default2,
        EdgeLabel::Reverse2,
        "reverse2 is the transpose of default2",
    );

    if mg.is_active(EdgeLabel::Global) && n > 0 {
        let g = n - 1;
        let expected: BTreeSet<Edge> = (0..g).map(|j| (g, j)).collect();
        let actual = edge_set(mg.edges(EdgeLabel::Global));
        if expected != actual {
            let missing: Vec<_> = expected.difference(&actual).collect();
            let extra: Vec<_> = actual.difference(&expected).collect();
            out.push(Violation {
                invariant: "global graph broadcasts from the global node",
                detail: format!("missing {missing:?}, unexpected {extra:?}"),
            });
        }
    }
    out
}

/// Levi graph: entities and per-triple relation nodes, with the original
/// triple orientation and no entity-to-entity edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeviGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<Edge>,
}

impl LeviGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "nodes {}", self.nodes.len()).unwrap();
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(out, "{i}\t{}\t{}", n.kind.name(), n.display_name()).unwrap();
        }
        writeln!(out, "edges levi {}", self.edges.len()).unwrap();
        for (s, t) in &self.edges {
            writeln!(out, "{s}\t{t}").unwrap();
        }
        out
    }
}

/// Node indices coincide with those of [`to_multigraph`] on the same input.
pub fn to_levi(triples: &[Triple]) -> Result<LeviGraph> {
    let triples = dedup_triples(triples.iter().cloned());
    if triples.is_empty() {
        return Err(Error::EmptyTripleSet);
    }
    let (entities, index) = entity_order(&triples);
    let e = entities.len();
    let mut nodes: Vec<GraphNode> = entities
        .into_iter()
        .map(|label| GraphNode {
            label,
            kind: NodeKind::Entity,
            triple: None,
        })
        .collect();
    let mut edges = Vec::with_capacity(2 * triples.len());
    for (k, t) in triples.iter().enumerate() {
        nodes.push(GraphNode {
            label: t.predicate.clone(),
            kind: NodeKind::Relation,
            triple: Some(k),
        });
        edges.push((index[t.subject.as_str()], e + k));
        edges.push((e + k, index[t.object.as_str()]));
    }
    Ok(LeviGraph { nodes, edges })
}
