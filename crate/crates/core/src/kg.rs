//! Triple store, entity-centric subgraph extraction, PageRank, corpus
//! statistics and the synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::tokenize;

/// A directed, labeled fact `<subject, predicate, object>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    /// Builds a triple, trimming every field. Fails when a field is blank;
    /// `position` is reported back in the error.
    pub fn parse(
        position: usize,
        subject: &str,
        predicate: &str,
        object: &str,
    ) -> Result<Self> {
        let fields = [("subject", subject), ("predicate", predicate), ("object", object)];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(Error::MalformedTriple {
                    position,
                    reason: format!("empty {name}"),
                });
            }
        }
        Ok(Triple {
            subject: subject.trim().to_string(),
            predicate: predicate.trim().to_string(),
            object: object.trim().to_string(),
        })
    }

    /// Unchecked constructor for labels that are already known to be valid.
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Self {
        Triple {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }

    pub fn touches(&self, entity: &str) -> bool {
        self.subject == entity || self.object == entity
    }

    /// The endpoint opposite to `entity`, if `entity` is one of the endpoints.
    pub fn other_end(&self, entity: &str) -> Option<&str> {
        if self.subject == entity {
            Some(&self.object)
        } else if self.object == entity {
            Some(&self.subject)
        } else {
            None
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}, {}>", self.subject, self.predicate, self.object)
    }
}

/// Removes duplicate triples, keeping first occurrences in order.
pub fn dedup_triples<I: IntoIterator<Item = Triple>>(triples: I) -> Vec<Triple> {
    let mut seen = HashSet::new();
    triples
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// Immutable triple store with an entity → incident-triple index.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: Vec<Triple>,
    entities: Vec<String>,
    index: HashMap<String, Vec<usize>>,
}

impl KnowledgeGraph {
    /// Deduplicates `triples` (first occurrence wins) and indexes every
    /// subject and object. Every triple is revalidated so that graphs built
    /// from hand-constructed triples still reject blank labels.
    pub fn build(triples: Vec<Triple>) -> Result<Self> {
        for (position, t) in triples.iter().enumerate() {
            Triple::parse(position, &t.subject, &t.predicate, &t.object)?;
        }
        let triples: Vec<Triple> = dedup_triples(
            triples
                .into_iter()
                .map(|t| Triple::new(t.subject.trim(), t.predicate.trim(), t.object.trim())),
        );
        let mut entities = Vec::new();
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, t) in triples.iter().enumerate() {
            for e in [&t.subject, &t.object] {
                let slot = index.entry(e.clone()).or_insert_with(|| {
                    entities.push(e.clone());
                    Vec::new()
                });
                if slot.last() != Some(&i) {
                    slot.push(i);
                }
            }
        }
        Ok(KnowledgeGraph {
            triples,
            entities,
            index,
        })
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    /// Entities in first-occurrence order.
    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn contains_entity(&self, entity: &str) -> bool {
        self.index.contains_key(entity)
    }

    /// Indices of the triples incident to `entity`, in either role.
    pub fn incident(&self, entity: &str) -> &[usize] {
        self.index.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Result of [`extract_subgraph`]: the selected triples in graph order, and
/// the topic entities that were skipped because the graph does not know them.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgraph {
    pub triples: Vec<Triple>,
    pub warnings: Vec<String>,
}

/// Collects every triple incident to `main` plus every triple on a path of
/// at most `max_hops` edges between `main` and a topic entity. Paths ignore
/// edge direction and must be simple.
pub fn extract_subgraph(
    kg: &KnowledgeGraph,
    main: &str,
    topics: &[String],
    max_hops: usize,
) -> Result<Subgraph> {
    if !(1..=2).contains(&max_hops) {
        return Err(Error::InvalidArgument(format!(
            "max_hops must be 1 or 2, got {max_hops}"
        )));
    }
    if !kg.contains_entity(main) {
        return Err(Error::UnknownEntity(main.to_string()));
    }

    let mut selected: BTreeSet<usize> = kg.incident(main).iter().copied().collect();
    let mut warnings = Vec::new();

    // neighbor -> triples joining it to main
    let mut main_neighbors: HashMap<&str, Vec<usize>> = HashMap::new();
    for &ti in kg.incident(main) {
        if let Some(other) = kg.triples[ti].other_end(main) {
            main_neighbors.entry(other).or_default().push(ti);
        }
    }

    for topic in topics {
        if topic == main {
            continue;
        }
        if !kg.contains_entity(topic) {
            warnings.push(format!("topic entity `{topic}` not found in knowledge graph"));
            continue;
        }
        if max_hops < 2 {
            // 1-hop paths are already part of main's neighborhood
            continue;
        }
        for &ti in kg.incident(topic) {
            let t = &kg.triples[ti];
            let Some(mid) = t.other_end(topic) else { continue };
            if mid == main || mid == topic {
                continue;
            }
            if let Some(first_legs) = main_neighbors.get(mid) {
                selected.extend(first_legs.iter().copied());
                selected.insert(ti);
            }
        }
    }

    Ok(Subgraph {
        triples: selected.into_iter().map(|i| kg.triples[i].clone()).collect(),
        warnings,
    })
}

/// Power-iteration PageRank over the subject → object edges of `kg`.
/// Dangling entities spread their mass uniformly.
pub fn pagerank(
    kg: &KnowledgeGraph,
    damping: f64,
    tolerance: f64,
    max_iters: usize,
) -> Result<BTreeMap<String, f64>> {
    if kg.is_empty() {
        return Err(Error::EmptyTripleSet);
    }
    let n = kg.entities.len();
    let position: HashMap<&str, usize> = kg
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i))
        .collect();
    let edges: Vec<(usize, usize)> = kg
        .triples
        .iter()
        .map(|t| (position[t.subject.as_str()], position[t.object.as_str()]))
        .collect();
    let mut out_degree = vec![0usize; n];
    for &(s, _) in &edges {
        out_degree[s] += 1;
    }

    let uniform = 1.0 / n as f64;
    let mut rank = vec![uniform; n];
    for _ in 0..max_iters {
        let dangling: f64 = (0..n)
            .filter(|&i| out_degree[i] == 0)
            .map(|i| rank[i])
            .sum();
        let base = (1.0 - damping) * uniform + damping * dangling * uniform;
        let mut next = vec![base; n];
        for &(s, o) in &edges {
            next[o] += damping * rank[s] / out_degree[s] as f64;
        }
        let change: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        rank = next;
        if change < tolerance {
            break;
        }
    }
    let total: f64 = rank.iter().sum();
    Ok(kg
        .entities
        .iter()
        .cloned()
        .zip(rank.into_iter().map(|r| r / total))
        .collect())
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub main_entity: String,
    pub topic_entities: Vec<String>,
    pub triples: Vec<Triple>,
    pub reference: Vec<String>,
}

impl Instance {
    /// Validates the instance invariants and deduplicates the triples.
    pub fn new(
        main_entity: String,
        topic_entities: Vec<String>,
        triples: Vec<Triple>,
        reference: Vec<String>,
    ) -> Result<Self> {
        let triples = dedup_triples(triples);
        if !triples.is_empty() && !triples.iter().any(|t| t.touches(&main_entity)) {
            return Err(Error::InvalidInstance(format!(
                "main entity `{main_entity}` does not occur in any triple"
            )));
        }
        let mut seen = HashSet::new();
        for topic in &topic_entities {
            if topic == &main_entity {
                return Err(Error::InvalidInstance(format!(
                    "topic list contains the main entity `{topic}`"
                )));
            }
            if !seen.insert(topic) {
                return Err(Error::InvalidInstance(format!("duplicate topic entity `{topic}`")));
            }
        }
        Ok(Instance {
            main_entity,
            topic_entities,
            triples,
            reference,
        })
    }

    pub fn text(&self) -> String {
        self.reference.join(" ")
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    main_entity: String,
    topic_entities: Vec<String>,
    triples: Vec<[String; 3]>,
    text: String,
}

impl Instance {
    /// Parses one line of an instance file.
    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let record: InstanceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let triples = record
            .triples
            .iter()
            .enumerate()
            .map(|(i, [s, p, o])| Triple::parse(i, s, p, o))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.to_string())?;
        Instance::new(
            record.main_entity,
            record.topic_entities,
            triples,
            tokenize(&record.text),
        )
        .map_err(|e| e.to_string())
    }

    pub fn to_json_line(&self) -> String {
        let record = InstanceRecord {
            main_entity: self.main_entity.clone(),
            topic_entities: self.topic_entities.clone(),
            triples: self
                .triples
                .iter()
                .map(|t| [t.subject.clone(), t.predicate.clone(), t.object.clone()])
                .collect(),
            text: self.text(),
        };
        serde_json::to_string(&record).expect("instance records always serialize")
    }
}

/// Reads an instance file (one JSON object per line, blank lines ignored).
pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    parse_instances(std::io::BufReader::new(std::fs::File::open(path)?), path)
}

/// Parses instance lines from any reader; `source` names it in errors.
pub fn parse_instances<R: BufRead>(reader: R, source: &Path) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let instance = Instance::from_json_line(&line).map_err(|reason| Error::Parse {
            path: source.to_path_buf(),
            line: i + 1,
            reason,
        })?;
        out.push(instance);
    }
    Ok(out)
}

pub fn write_instances<W: Write>(mut out: W, instances: &[Instance]) -> Result<()> {
    for instance in instances {
        writeln!(out, "{}", instance.to_json_line())?;
    }
    Ok(())
}

/// Reads a tab-separated `subject<TAB>predicate<TAB>object` file.
pub fn read_triple_file(path: &Path) -> Result<Vec<Triple>> {
    let file = std::fs::File::open(path)?;
    let mut triples = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedTriple {
                position: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        triples.push(Triple::parse(i + 1, fields[0], fields[1], fields[2])?);
    }
    Ok(triples)
}

/// Corpus statistics in the layout of a dataset overview table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub instances: usize,
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub entities: usize,
    pub relations: usize,
    pub avg_triples: f64,
    pub avg_words: f64,
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "instances\t{}", self.instances)?;
        writeln!(f, "input_vocab\t{}", self.input_vocab)?;
        writeln!(f, "output_vocab\t{}", self.output_vocab)?;
        writeln!(f, "entities\t{}", self.entities)?;
        writeln!(f, "relations\t{}", self.relations)?;
        writeln!(f, "avg_triples_per_input\t{:.4}", self.avg_triples)?;
        writeln!(f, "avg_words_per_output\t{:.4}", self.avg_words)
    }
}

pub fn dataset_stats(instances: &[Instance]) -> Result<Stats> {
    if instances.is_empty() {
        return Err(Error::InvalidArgument("statistics need at least one instance".into()));
    }
    let mut input_vocab = HashSet::new();
    let mut output_vocab = HashSet::new();
    let mut entities = HashSet::new();
    let mut relations = HashSet::new();
    let mut triple_count = 0usize;
    let mut word_count = 0usize;
    for instance in instances {
        triple_count += instance.triples.len();
        word_count += instance.reference.len();
        output_vocab.extend(instance.reference.iter().cloned());
        for t in &instance.triples {
            entities.insert(t.subject.as_str());
            entities.insert(t.object.as_str());
            relations.insert(t.predicate.as_str());
            for label in [&t.subject, &t.predicate, &t.object] {
                input_vocab.extend(tokenize(label));
            }
        }
    }
    let n = instances.len() as f64;
    Ok(Stats {
        instances: instances.len(),
        input_vocab: input_vocab.len(),
        output_vocab: output_vocab.len(),
        entities: entities.len(),
        relations: relations.len(),
        avg_triples: triple_count as f64 / n,
        avg_words: word_count as f64 / n,
    })
}

/// Sizes for [`synth_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub seed: u64,
    pub instances: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples_per_instance: usize,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "to", "sa", "vel", "dor", "ni", "quo", "bel", "ta", "ru", "fen", "zo",
    "pa", "gil", "mar", "ost", "eli",
];

const RELATION_WORDS: &[&str] = &[
    "born in",
    "member of",
    "genre",
    "located in",
    "spouse",
    "award received",
    "employer",
    "record label",
    "instrument",
    "founded by",
    "capital of",
    "part of",
];

fn synth_entity_labels(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    let mut labels = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    while labels.len() < count {
        let words = if rng.gen_bool(0.5) { 1 } else { 2 };
        let label = (0..words)
            .map(|_| {
                let a = SYLLABLES.choose(rng).unwrap();
                let b = SYLLABLES.choose(rng).unwrap();
                format!("{a}{b}")
            })
            .collect::<Vec<_>>()
            .join(" ");
        if seen.insert(label.clone()) {
            labels.push(label);
        }
    }
    labels
}

fn synth_relation_labels(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| match RELATION_WORDS.get(i) {
            Some(word) => word.to_string(),
            None => format!("relation {i}"),
        })
        .collect()
}

/// Generates a deterministic desk-scale corpus. Every instance has exactly
/// `triples_per_instance` distinct triples, one topic entity joined to the
/// main entity by a 1- or 2-hop path, and a reference text that names the
/// main entity, the path relations and the topic entity.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<Instance>> {
    let SynthSpec {
        seed,
        instances,
        entities,
        relations,
        triples_per_instance,
    } = *spec;
    if instances == 0 || relations == 0 || triples_per_instance == 0 {
        return Err(Error::InvalidArgument("synthetic corpus sizes must be >= 1".into()));
    }
    if entities < 3 {
        return Err(Error::InvalidArgument(
            "synthetic corpus needs at least 3 entities".into(),
        ));
    }
    // distinct non-loop triples incident to a fixed main entity
    let capacity = 2 * (entities - 1) * relations;
    if triples_per_instance > capacity {
        return Err(Error::InvalidArgument(format!(
            "{triples_per_instance} triples per instance exceed the {capacity} distinct triples available"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entity_labels = synth_entity_labels(&mut rng, entities);
    let relation_labels = synth_relation_labels(relations);

    let mut out = Vec::with_capacity(instances);
    for _ in 0..instances {
        let main = rng.gen_range(0..entities);
        let topic = loop {
            let t = rng.gen_range(0..entities);
            if t != main {
                break t;
            }
        };
        let e = |i: usize| entity_labels[i].clone();
        let r = |i: usize| relation_labels[i].clone();
        let oriented = |rng: &mut ChaCha8Rng, a: usize, rel: usize, b: usize| {
            if rng.gen_bool(0.5) {
                Triple::new(e(a), r(rel), e(b))
            } else {
                Triple::new(e(b), r(rel), e(a))
            }
        };

        let mut triples = Vec::new();
        let mut text: Vec<String> = Vec::new();
        let two_hop = triples_per_instance >= 2 && rng.gen_bool(0.5);
        if two_hop {
            let mid = loop {
                let m = rng.gen_range(0..entities);
                if m != main && m != topic {
                    break m;
                }
            };
            let (r1, r2) = (rng.gen_range(0..relations), rng.gen_range(0..relations));
            triples.push(oriented(&mut rng, main, r1, mid));
            triples.push(oriented(&mut rng, mid, r2, topic));
            for part in [e(main), r(r1), e(mid), "and".into(), r(r2), e(topic), ".".into()] {
                text.extend(tokenize(&part));
            }
        } else {
            let r1 = rng.gen_range(0..relations);
            triples.push(oriented(&mut rng, main, r1, topic));
            for part in [e(main), r(r1), e(topic), ".".into()] {
                text.extend(tokenize(&part));
            }
        }

        let mut seen: HashSet<Triple> = triples.iter().cloned().collect();
        while triples.len() < triples_per_instance {
            let other = rng.gen_range(0..entities);
            if other == main {
                continue;
            }
            let rel = rng.gen_range(0..relations);
            let t = oriented(&mut rng, main, rel, other);
            if seen.insert(t.clone()) {
                triples.push(t);
            }
        }
        triples.shuffle(&mut rng);
        out.push(Instance::new(e(main), vec![e(topic)], triples, text)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str, p: &str, o: &str) -> Triple {
        Triple::new(s, p, o)
    }

    #[test]
    fn build_graph_empty() {
        let kg = KnowledgeGraph::build(vec![]).unwrap();
        assert_eq!(kg.len(), 0);
        assert_eq!(kg.entities().len(), 0);
    }

    #[test]
    fn build_graph_dedups() {
        let kg = KnowledgeGraph::build(vec![t("A", "p", "B"), t("A", "p", "B")]).unwrap();
        assert_eq!(kg.len(), 1);
        assert_eq!(kg.entities().len(), 2);
    }

    #[test]
    fn build_graph_indexes_both_roles() {
        let kg = KnowledgeGraph::build(vec![t("A", "p", "B"), t("B", "q", "C")]).unwrap();
        assert_eq!(kg.incident("B"), &[0, 1]);
        assert_eq!(kg.incident("A"), &[0]);
        assert_eq!(kg.incident("C"), &[1]);
    }

    #[test]
    fn build_graph_rejects_blank_field_with_position() {
        let err = KnowledgeGraph::build(vec![t("A", "p", "B"), t("A", "  ", "C")]).unwrap_err();
        match err {
            Error::MalformedTriple { position, .. } => assert_eq!(position, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn extract_two_hop_example() {
        let kg = KnowledgeGraph::build(vec![
            t("M", "r1", "X"),
            t("X", "r2", "T"),
            t("Y", "r3", "T"),
            t("M", "r4", "Z"),
        ])
        .unwrap();
        let sub = extract_subgraph(&kg, "M", &["T".into()], 2).unwrap();
        assert_eq!(
            sub.triples,
            vec![t("M", "r1", "X"), t("X", "r2", "T"), t("M", "r4", "Z")]
        );
        assert!(sub.warnings.is_empty());
    }

    #[test]
    fn extract_direct_edge() {
        let kg = KnowledgeGraph::build(vec![t("M", "r", "T")]).unwrap();
        let sub = extract_subgraph(&kg, "M", &["T".into()], 2).unwrap();
        assert_eq!(sub.triples, vec![t("M", "r", "T")]);
    }

    #[test]
    fn extract_unknown_topic_warns() {
        let kg = KnowledgeGraph::build(vec![t("M", "r", "X")]).unwrap();
        let sub = extract_subgraph(&kg, "M", &["T".into()], 2).unwrap();
        assert_eq!(sub.triples, vec![t("M", "r", "X")]);
        assert_eq!(sub.warnings.len(), 1);
        assert!(sub.warnings[0].contains('T'));
    }

    #[test]
    fn extract_unknown_main_fails() {
        let kg = KnowledgeGraph::build(vec![t("M", "r", "X")]).unwrap();
        let err = extract_subgraph(&kg, "Q", &[], 2).unwrap_err();
        assert!(err.to_string().contains('Q'));
    }

    #[test]
    fn extract_one_hop_ignores_two_hop_paths() {
        let kg = KnowledgeGraph::build(vec![t("M", "r1", "X"), t("X", "r2", "T")]).unwrap();
        let sub = extract_subgraph(&kg, "M", &["T".into()], 1).unwrap();
        assert_eq!(sub.triples, vec![t("M", "r1", "X")]);
    }

    #[test]
    fn pagerank_cycle_is_uniform() {
        let kg = KnowledgeGraph::build(vec![t("A", "p", "B"), t("B", "p", "C"), t("C", "p", "A")])
            .unwrap();
        let pr = pagerank(&kg, 0.85, 1e-10, 200).unwrap();
        for v in pr.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pagerank_pair_is_half() {
        let kg = KnowledgeGraph::build(vec![t("A", "p", "B"), t("B", "p", "A")]).unwrap();
        let pr = pagerank(&kg, 0.85, 1e-10, 200).unwrap();
        assert!((pr["A"] - 0.5).abs() < 1e-12);
        assert!((pr["B"] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pagerank_with_dangling_sums_to_one() {
        let kg = KnowledgeGraph::build(vec![t("A", "p", "B"), t("A", "p", "C")]).unwrap();
        let pr = pagerank(&kg, 0.85, 1e-10, 200).unwrap();
        let total: f64 = pr.values().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(pr["B"] > pr["A"]);
    }

    #[test]
    fn stats_single_instance() {
        let inst = Instance::new(
            "A".into(),
            vec![],
            vec![t("A", "p", "B"), t("A", "q", "C")],
            "a b c d e".split(' ').map(String::from).collect(),
        )
        .unwrap();
        let stats = dataset_stats(&[inst]).unwrap();
        assert_eq!(stats.avg_triples, 2.0);
        assert_eq!(stats.avg_words, 5.0);
        assert_eq!(stats.entities, 3);
        assert_eq!(stats.relations, 2);
    }

    #[test]
    fn stats_average_over_instances() {
        let one = Instance::new("A".into(), vec![], vec![t("A", "p", "B")], vec!["x".into()]).unwrap();
        let three = Instance::new(
            "A".into(),
            vec![],
            vec![t("A", "p", "B"), t("A", "q", "B"), t("C", "p", "A")],
            vec!["x".into()],
        )
        .unwrap();
        assert_eq!(dataset_stats(&[one, three]).unwrap().avg_triples, 2.0);
    }

    #[test]
    fn instance_invariants() {
        assert!(Instance::new("A".into(), vec![], vec![t("B", "p", "C")], vec![]).is_err());
        assert!(Instance::new("A".into(), vec!["A".into()], vec![t("A", "p", "C")], vec![]).is_err());
        assert!(Instance::new(
            "A".into(),
            vec!["C".into(), "C".into()],
            vec![t("A", "p", "C")],
            vec![]
        )
        .is_err());
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = Instance::new(
            "bruno mars".into(),
            vec!["funk".into()],
            vec![t("bruno mars", "genre", "funk")],
            tokenize("bruno mars plays funk ."),
        )
        .unwrap();
        let back = Instance::from_json_line(&inst.to_json_line()).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn synth_is_deterministic_and_seed_sensitive() {
        let spec = SynthSpec {
            seed: 11,
            instances: 16,
            entities: 20,
            relations: 6,
            triples_per_instance: 4,
        };
        let a = synth_corpus(&spec).unwrap();
        let b = synth_corpus(&spec).unwrap();
        let c = synth_corpus(&SynthSpec { seed: 12, ..spec }).unwrap();
        let ser = |v: &[Instance]| {
            let mut buf = Vec::new();
            write_instances(&mut buf, v).unwrap();
            buf
        };
        assert_eq!(ser(&a), ser(&b));
        assert_ne!(ser(&a), ser(&c));
        assert_eq!(a.len(), 16);
        for inst in &a {
            assert_eq!(inst.triples.len(), 4);
            assert!(inst.triples.iter().any(|t| t.touches(&inst.main_entity)));
            let text = inst.text();
            assert!(text.contains(&inst.main_entity));
            assert!(inst.topic_entities.iter().any(|t| text.contains(t.as_str())));
        }
    }
}
