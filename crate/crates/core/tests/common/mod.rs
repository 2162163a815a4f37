//! Helpers shared by the integration tests: random inputs and independent
//! reference implementations.
#![allow(dead_code)]

pub mod grad;

use std::collections::BTreeSet;

use mgcn::decoder::{Hypothesis, StepScorer};
use mgcn::kg::{Instance, KnowledgeGraph, Triple};
use mgcn::Result;
use rand::Rng;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Random triple list over entities `e0..e{entities}` and predicates
/// `p0..p{predicates}`; may contain duplicates and self-loops.
pub fn random_triples<R: Rng>(rng: &mut R, max_triples: usize, entities: usize, predicates: usize) -> Vec<Triple> {
    let m = rng.gen_range(1..=max_triples);
    (0..m)
        .map(|_| {
            Triple::new(
                format!("e{}", rng.gen_range(0..entities)),
                format!("p{}", rng.gen_range(0..predicates)),
                format!("e{}", rng.gen_range(0..entities)),
            )
        })
        .collect()
}

/// Brute-force reference for subgraph extraction: every triple touching
/// `main`, plus both triples of every simple undirected path
/// `main - x - topic` found by trying all ordered pairs of triples.
pub fn brute_force_subgraph(kg: &KnowledgeGraph, main: &str, topics: &[String], max_hops: usize) -> BTreeSet<Triple> {
    let triples = kg.triples();
    let ends = |t: &Triple| [t.subject.clone(), t.object.clone()];
    let joins = |t: &Triple, a: &str, b: &str| {
        let [s, o] = ends(t);
        (s == a && o == b) || (s == b && o == a)
    };
    let mut out: BTreeSet<Triple> = triples
        .iter()
        .filter(|t| t.subject == main || t.object == main)
        .cloned()
        .collect();
    if max_hops < 2 {
        return out;
    }
    for topic in topics {
        if topic == main || !kg.entities().contains(topic) {
            continue;
        }
        for first in triples {
            for second in triples {
                for mid in kg.entities() {
                    if mid == main || mid == topic {
                        continue;
                    }
                    if joins(first, main, mid) && joins(second, mid, topic) {
                        out.insert(first.clone());
                        out.insert(second.clone());
                    }
                }
            }
        }
    }
    out
}

/// PageRank by solving the linear system `(I - d·M) r = (1-d)/n · 1 +
/// dangling` directly with Gaussian elimination, with dangling nodes linked
/// to every node.
pub fn pagerank_linear(n: usize, edges: &[(usize, usize)], damping: f64) -> Vec<f64> {
    let mut out_deg = vec![0usize; n];
    for &(s, _) in edges {
        out_deg[s] += 1;
    }
    // column-stochastic transition matrix
    let mut m = vec![vec![0.0; n]; n];
    for &(s, o) in edges {
        m[o][s] += 1.0 / out_deg[s] as f64;
    }
    for s in 0..n {
        if out_deg[s] == 0 {
            for row in m.iter_mut() {
                row[s] = 1.0 / n as f64;
            }
        }
    }
    let mut a = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = if i == j { 1.0 } else { 0.0 } - damping * m[i][j];
        }
        a[i][n] = (1.0 - damping) / n as f64;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let r: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    let total: f64 = r.iter().sum();
    r.into_iter().map(|x| x / total).collect()
}

/// Next-token log-probabilities that depend only on the prefix, derived
/// from a seeded hash so the table never needs to be stored.
pub struct RandomScorer {
    pub vocab: usize,
    pub eos: Option<usize>,
    pub seed: u64,
}

impl RandomScorer {
    fn weight(&self, prefix: &[usize], token: usize) -> f64 {
        let mut h: u64 = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in prefix.iter().chain(std::iter::once(&token)) {
            h ^= t as u64 + 1;
            h = h.wrapping_mul(0x1000_0000_01b3).rotate_left(29) ^ (h >> 17);
        }
        0.05 + (h % 10_000) as f64 / 10_000.0
    }
}

impl StepScorer for RandomScorer {
    type State = ();

    fn start(&self) -> Result<()> {
        Ok(())
    }

    fn step(&self, _: &(), prefix: &[usize]) -> Result<(Vec<f64>, ())> {
        let w: Vec<f64> = (0..self.vocab).map(|t| self.weight(prefix, t)).collect();
        let z: f64 = w.iter().sum();
        Ok((w.into_iter().map(|x| (x / z).ln()).collect(), ()))
    }

    fn eos(&self) -> Option<usize> {
        self.eos
    }
}

/// Exhaustive search with the same final ranking as beam search: among
/// sequences that end in EOS within `max_len` steps (or, if none can,
/// all sequences of exactly `max_len` tokens) pick the best
/// length-normalized score; ties prefer the smaller token sequence, then
/// the shorter length.
pub fn exhaustive_best<S: StepScorer<State = ()>>(scorer: &S, max_len: usize) -> Hypothesis {
    let eos = scorer.eos();
    let mut finished = Vec::new();
    let mut frontier = vec![(Vec::<usize>::new(), 0.0f64)];
    for depth in 1..=max_len {
        let mut next = Vec::new();
        for (prefix, lp) in &frontier {
            let (log_probs, ()) = scorer.step(&(), prefix).unwrap();
            for (tok, &l) in log_probs.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                if Some(tok) == eos {
                    finished.push(Hypothesis {
                        tokens: prefix.clone(),
                        log_prob: lp + l,
                        length: depth,
                        ended: true,
                    });
                } else {
                    let mut p = prefix.clone();
                    p.push(tok);
                    next.push((p, lp + l));
                }
            }
        }
        frontier = next;
    }
    let pool = if finished.is_empty() {
        frontier
            .into_iter()
            .map(|(tokens, log_prob)| Hypothesis {
                tokens,
                log_prob,
                length: max_len,
                ended: false,
            })
            .collect()
    } else {
        finished
    };
    pool.into_iter()
        .min_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then_with(|| a.tokens.cmp(&b.tokens))
                .then_with(|| a.length.cmp(&b.length))
        })
        .unwrap()
}

/// LCS length by enumerating every subsequence of `a` (only for short `a`).
pub fn lcs_enumerate(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 12);
    let is_subsequence = |sub: &[&String]| {
        let mut it = b.iter();
        sub.iter().all(|x| it.any(|y| y == *x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub) {
            best = sub.len();
        }
    }
    best
}

/// Checks whether a synthetic instance's reference would survive the
/// delexicalize → relexicalize round trip unchanged.
pub fn mentions_are_exact(instance: &Instance) -> bool {
    let text = instance.text();
    std::iter::once(&instance.main_entity)
        .chain(&instance.topic_entities)
        .all(|e| text.contains(e.as_str()))
}
