//! Corpus BLEU and ROUGE-1/2/L.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

fn ngrams<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(|t| t.as_ref()).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and candidate n-gram total.
fn overlap<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let refs = ngrams(reference, n);
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.values().sum())
}

/// Corpus BLEU on a 0–100 scale with one reference per candidate. Clipped
/// counts are pooled over the corpus before taking precisions. Without
/// `smoothing` a zero precision yields 0; with it, counts for n > 1 get
/// add-one smoothing.
pub fn bleu<T: AsRef<str>>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: bool,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("BLEU of an empty candidate list".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("max_n must be >= 1".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, reference) in candidates.iter().zip(references) {
        c_len += cand.len();
        r_len += reference.len();
        for n in 1..=max_n {
            let (m, t) = overlap(cand, reference, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    if c_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if smoothing && n > 0 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let brevity = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    Ok(100.0 * brevity * (log_sum / max_n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(hits: usize, candidate: usize, reference: usize) -> Self {
        let precision = if candidate == 0 { 0.0 } else { hits as f64 / candidate as f64 };
        let recall = if reference == 0 { 0.0 } else { hits as f64 / reference as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

pub fn rouge_n<T: AsRef<str>>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    let (hits, cand_total) = overlap(candidate, reference, n);
    let ref_total = if n == 0 { 0 } else { (reference.len() + 1).saturating_sub(n) };
    Prf::from_counts(hits, cand_total, ref_total)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: AsRef<str>>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceScore {
    pub index: usize,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

/// Corpus BLEU plus ROUGE averaged over instances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub instances: usize,
    pub bleu: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
    pub per_instance: Vec<InstanceScore>,
}

fn mean(scores: impl Iterator<Item = Prf>, count: usize) -> Prf {
    let sum = scores.fold(Prf::default(), |acc, s| Prf {
        precision: acc.precision + s.precision,
        recall: acc.recall + s.recall,
        f1: acc.f1 + s.f1,
    });
    let k = count as f64;
    Prf {
        precision: sum.precision / k,
        recall: sum.recall / k,
        f1: sum.f1 / k,
    }
}

pub fn evaluate<T: AsRef<str>>(
    candidates: &[Vec<T>],
    references: &[Vec<T>],
    smoothing: bool,
) -> Result<EvalReport> {
    let bleu = bleu(candidates, references, 4, smoothing)?;
    let per_instance: Vec<InstanceScore> = candidates
        .iter()
        .zip(references)
        .enumerate()
        .map(|(index, (c, r))| InstanceScore {
            index,
            rouge1: rouge_n(c, r, 1),
            rouge2: rouge_n(c, r, 2),
            rouge_l: rouge_l(c, r),
        })
        .collect();
    let k = per_instance.len();
    Ok(EvalReport {
        instances: k,
        bleu,
        rouge1: mean(per_instance.iter().map(|s| s.rouge1), k),
        rouge2: mean(per_instance.iter().map(|s| s.rouge2), k),
        rouge_l: mean(per_instance.iter().map(|s| s.rouge_l), k),
        per_instance,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances\t{}", self.instances)?;
        writeln!(f, "BLEU\t{:.4}", self.bleu)?;
        for (name, s) in [("ROUGE-1", self.rouge1), ("ROUGE-2", self.rouge2), ("ROUGE-L", self.rouge_l)] {
            writeln!(f, "{name}\tP {:.4}\tR {:.4}\tF1 {:.4}", s.precision, s.recall, s.f1)?;
        }
        Ok(())
    }
}
