mod common;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use common::*;
use mgcn::encoder::{basic_encode, init_node_embeddings, mgcn_layer, Aggregation, EncoderGraph, LayerParams};
use mgcn::graph::{drop_graphs, to_levi, to_multigraph, validate, EdgeLabel, GraphNode, NodeKind};
use mgcn::kg::{dataset_stats, extract_subgraph, pagerank, synth_corpus, Instance, KnowledgeGraph, SynthSpec, Triple};
use mgcn::metrics::{bleu, rouge_l, rouge_n};
use mgcn::model::{Model, ModelConfig};
use mgcn::numerics::{Axis, EdgeList, ParamStore, Tape, Tensor};
use mgcn::preprocess::{delexicalize, relexicalize, Vocabulary};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn triples_strategy(max: usize, entities: u8, predicates: u8) -> impl Strategy<Value = Vec<Triple>> {
    prop::collection::vec((0..entities, 0..predicates, 0..entities), 1..=max).prop_map(|v| {
        v.into_iter()
            .map(|(s, p, o)| Triple::new(format!("e{s}"), format!("p{p}"), format!("e{o}")))
            .collect()
    })
}

fn distinct<T: Ord + Clone>(items: &[T]) -> usize {
    items.iter().cloned().collect::<BTreeSet<_>>().len()
}

fn non_self_labels() -> Vec<EdgeLabel> {
    EdgeLabel::ALL.into_iter().filter(|&l| l != EdgeLabel::SelfLoop).collect()
}

proptest! {
    #[test]
    fn multigraph_laws(triples in triples_strategy(50, 20, 6)) {
        let mg = to_multigraph(&triples).unwrap();
        prop_assert!(validate(&mg).is_empty(), "{:?}", validate(&mg));

        let unique: Vec<Triple> = triples.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let m = unique.len();
        let entities: BTreeSet<&str> = unique.iter().flat_map(|t| [t.subject.as_str(), t.object.as_str()]).collect();
        let e = entities.len();
        let pairs = distinct(&unique.iter().map(|t| (t.subject.clone(), t.object.clone())).collect::<Vec<_>>());
        let n = e + m + 1;
        prop_assert_eq!(mg.node_count(), n);
        prop_assert_eq!(mg.edges(EdgeLabel::SelfLoop).len(), n);
        prop_assert_eq!(mg.edges(EdgeLabel::Default1).len(), 2 * m);
        prop_assert_eq!(mg.edges(EdgeLabel::Reverse1).len(), 2 * m);
        prop_assert_eq!(mg.edges(EdgeLabel::Default2).len(), pairs);
        prop_assert_eq!(mg.edges(EdgeLabel::Reverse2).len(), pairs);
        prop_assert_eq!(mg.edges(EdgeLabel::Global).len(), n - 1);
        prop_assert!(!mg.edges(EdgeLabel::Default2).is_empty());

        // entities, relations, global, in that order
        let kinds: Vec<NodeKind> = mg.nodes().iter().map(|n| n.kind).collect();
        prop_assert!(kinds[..e].iter().all(|&k| k == NodeKind::Entity));
        prop_assert!(kinds[e..e + m].iter().all(|&k| k == NodeKind::Relation));
        prop_assert_eq!(kinds[n - 1], NodeKind::Global);

        // Levi = default1 restricted to non-global nodes
        let levi = to_levi(&triples).unwrap();
        prop_assert_eq!(&levi.nodes[..], &mg.nodes()[..n - 1]);
        let levi_edges: BTreeSet<_> = levi.edges.iter().copied().collect();
        let d1: BTreeSet<_> = mg.edges(EdgeLabel::Default1).iter().copied().filter(|&(s, t)| s < n - 1 && t < n - 1).collect();
        prop_assert_eq!(levi_edges, d1);

        prop_assert_eq!(to_multigraph(&triples).unwrap(), mg);
    }

    #[test]
    fn dropping_graphs_keeps_the_rest(
        triples in triples_strategy(12, 8, 3),
        removed in subsequence(non_self_labels(), 0..=5),
    ) {
        let mg = to_multigraph(&triples).unwrap();
        let removed: BTreeSet<EdgeLabel> = removed.into_iter().collect();
        let dropped = drop_graphs(&mg, &removed).unwrap();
        prop_assert!(validate(&dropped).is_empty());
        for label in EdgeLabel::ALL {
            if removed.contains(&label) {
                prop_assert!(dropped.edges(label).is_empty());
                prop_assert!(!dropped.is_active(label));
            } else {
                prop_assert_eq!(dropped.edges(label), mg.edges(label));
            }
        }
        let mut with_self = removed.clone();
        with_self.insert(EdgeLabel::SelfLoop);
        prop_assert!(drop_graphs(&mg, &with_self).is_err());
    }

    #[test]
    fn subgraph_is_monotone_in_topics(
        triples in triples_strategy(20, 10, 3),
        main in 0u8..10,
        topics in subsequence((0u8..12).collect::<Vec<_>>(), 0..6),
        extra in 0u8..12,
    ) {
        let kg = KnowledgeGraph::build(triples).unwrap();
        let main = format!("e{main}");
        prop_assume!(kg.contains_entity(&main));
        let topics: Vec<String> = topics.into_iter().map(|t| format!("e{t}")).collect();
        let mut more = topics.clone();
        let extra = format!("e{extra}");
        if !more.contains(&extra) {
            more.push(extra);
        }
        for hops in [1, 2] {
            let base: HashSet<Triple> = extract_subgraph(&kg, &main, &topics, hops).unwrap().triples.into_iter().collect();
            let grown: HashSet<Triple> = extract_subgraph(&kg, &main, &more, hops).unwrap().triples.into_iter().collect();
            prop_assert!(base.is_subset(&grown));
        }
    }

    #[test]
    fn pagerank_is_a_distribution(triples in triples_strategy(30, 15, 3), damping in 0.5f64..0.95) {
        let kg = KnowledgeGraph::build(triples).unwrap();
        let scores = pagerank(&kg, damping, 1e-13, 100_000).unwrap();
        prop_assert_eq!(scores.len(), kg.entities().len());
        prop_assert!(scores.values().all(|&s| s >= 0.0));
        let total: f64 = scores.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{}", total);
    }

    #[test]
    fn stats_ignore_instance_order(seed in 0u64..1000, shuffle in 0u64..1000) {
        let corpus = synth_corpus(&SynthSpec { seed, instances: 12, entities: 20, relations: 5, triples_per_instance: 3 }).unwrap();
        let mut shuffled = corpus.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let a = dataset_stats(&corpus).unwrap();
        let b = dataset_stats(&shuffled).unwrap();
        prop_assert_eq!(a.instances, b.instances);
        prop_assert_eq!(a.input_vocab, b.input_vocab);
        prop_assert_eq!(a.output_vocab, b.output_vocab);
        prop_assert_eq!(a.entities, b.entities);
        prop_assert_eq!(a.relations, b.relations);
        prop_assert!((a.avg_triples - b.avg_triples).abs() < 1e-12);
        prop_assert!((a.avg_words - b.avg_words).abs() < 1e-12);
    }

    #[test]
    fn softmax_and_cross_entropy(
        rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 5), 1..6),
        target in 0usize..5,
    ) {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::from_rows(&rows));
        let s = tape.softmax(x, Axis::Cols).unwrap();
        for r in 0..rows.len() {
            let total: f64 = tape.value(s).row_slice(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        let targets = vec![target; rows.len()];
        let ce = tape.cross_entropy(x, &targets).unwrap();
        prop_assert!(tape.value(ce).data()[0] >= 0.0);
    }

    #[test]
    fn self_adjacency_is_identity(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8)) {
        let n = rows.len();
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let h = tape.constant(Tensor::from_rows(&rows));
        let edges = EdgeList::new(n, (0..n).map(|i| (i, i)).collect());
        for mean in [false, true] {
            let out = tape.sparse_adj_matmul(&edges, h, mean).unwrap();
            prop_assert_eq!(tape.value(out), tape.value(h));
        }
    }

    #[test]
    fn delexicalization_round_trips(seed in 0u64..500) {
        let corpus = synth_corpus(&SynthSpec { seed, instances: 8, entities: 15, relations: 4, triples_per_instance: 3 }).unwrap();
        for instance in &corpus {
            let (delexed, mapping) = delexicalize(instance);
            prop_assert_eq!(delexicalize(instance), (delexed.clone(), mapping.clone()));
            if mentions_are_exact(instance) {
                let (text, warnings) = relexicalize(&delexed.reference, &mapping);
                prop_assert!(warnings.is_empty());
                prop_assert_eq!(text, instance.text());
            }
        }
        let raw: BTreeSet<&String> = corpus.iter().flat_map(|i| &i.reference).collect();
        let delexed: Vec<Instance> = corpus.iter().map(|i| delexicalize(i).0).collect();
        let shrunk: BTreeSet<&String> = delexed.iter().flat_map(|i| &i.reference).collect();
        prop_assert!(shrunk.len() <= raw.len());
    }

    #[test]
    fn metrics_stay_in_range(
        cand in prop::collection::vec(0u8..6, 0..12),
        reference in prop::collection::vec(0u8..6, 1..12),
        smoothing in any::<bool>(),
    ) {
        let c: Vec<String> = cand.iter().map(|t| format!("w{t}")).collect();
        let r: Vec<String> = reference.iter().map(|t| format!("w{t}")).collect();
        let b = bleu(&[c.clone()], &[r.clone()], 4, smoothing).unwrap();
        prop_assert!((0.0..=100.0).contains(&b));
        for prf in [rouge_n(&c, &r, 1), rouge_n(&c, &r, 2), rouge_l(&c, &r)] {
            for v in [prf.precision, prf.recall, prf.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn bleu_ignores_token_names(
        pairs in prop::collection::vec((prop::collection::vec(0u8..5, 1..10), prop::collection::vec(0u8..5, 1..10)), 1..4),
        shift in 1u8..50,
    ) {
        let name = |offset: u8| move |t: &u8| format!("tok{}", t.wrapping_add(offset));
        let cands: Vec<Vec<String>> = pairs.iter().map(|(c, _)| c.iter().map(name(0)).collect()).collect();
        let refs: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.iter().map(name(0)).collect()).collect();
        let cands2: Vec<Vec<String>> = pairs.iter().map(|(c, _)| c.iter().map(name(shift)).collect()).collect();
        let refs2: Vec<Vec<String>> = pairs.iter().map(|(_, r)| r.iter().map(name(shift)).collect()).collect();
        for smoothing in [false, true] {
            prop_assert_eq!(
                bleu(&cands, &refs, 4, smoothing).unwrap(),
                bleu(&cands2, &refs2, 4, smoothing).unwrap()
            );
        }
    }

    #[test]
    fn lcs_is_symmetric(pair in (1usize..10).prop_flat_map(|n| (prop::collection::vec(0u8..4, n), prop::collection::vec(0u8..4, n)))) {
        let x: Vec<String> = pair.0.iter().map(|t| t.to_string()).collect();
        let y: Vec<String> = pair.1.iter().map(|t| t.to_string()).collect();
        prop_assert_eq!(rouge_l(&x, &y).recall, rouge_l(&y, &x).precision);
    }
}

fn encoder_model(aggregation: Aggregation, layers: usize, seed: u64) -> Model {
    let vocab = Vocabulary::from_tokens(toks("e0 e1 e2 e3 e4 e5 e6 e7 p0 p1 p2 ."), 1);
    let config = ModelConfig {
        hidden: 5,
        layers,
        aggregation,
        init_scale: 0.5,
        ..ModelConfig::default()
    };
    Model::new(config, vocab, seed).unwrap()
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn encoder_is_permutation_equivariant(
        triples in triples_strategy(6, 8, 3),
        perm_seed in any::<u64>(),
        aggregation in prop::sample::select(vec![Aggregation::Sum, Aggregation::Avg, Aggregation::Conv]),
    ) {
        let model = encoder_model(aggregation, 2, 4);
        let mg = model.multigraph(&triples).unwrap();
        let perm = random_permutation(mg.node_count(), &mut ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted = mg.permuted(&perm);
        let a = EncoderGraph::from_multigraph(&mg);
        let b = EncoderGraph::from_multigraph(&permuted);
        let ha = model.memory(&a).unwrap();
        let hb = model.memory(&b).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            prop_assert_eq!(ha.row_slice(old), hb.row_slice(new));
        }
        let reference = toks("e0 p1 e2 .");
        let loss = |g: &EncoderGraph| {
            let mut tape = Tape::new(&model.store);
            let l = model.loss(&mut tape, g, &reference).unwrap().0;
            tape.value(l).data()[0]
        };
        prop_assert_eq!(loss(&a).to_bits(), loss(&b).to_bits());
        prop_assert_eq!(model.generate(&a, 3, 6).unwrap(), model.generate(&b, 3, 6).unwrap());
    }

    #[test]
    fn dropped_graphs_contribute_nothing(
        triples in triples_strategy(6, 8, 3),
        removed in subsequence(non_self_labels(), 1..=5),
        aggregation in prop::sample::select(vec![Aggregation::Sum, Aggregation::Avg]),
    ) {
        let model = encoder_model(aggregation, 1, 9);
        let LayerParams::Mgcn(params) = &model.layers()[0] else { unreachable!() };
        let mg = to_multigraph(&triples).unwrap();
        let removed: BTreeSet<EdgeLabel> = removed.into_iter().collect();
        let dropped = drop_graphs(&mg, &removed).unwrap();
        let EncoderGraph::Multi { nodes, graphs } = EncoderGraph::from_multigraph(&dropped) else { unreachable!() };
        let EncoderGraph::Multi { graphs: all, .. } = EncoderGraph::from_multigraph(&mg) else { unreachable!() };

        let mut tape = Tape::new(&model.store);
        let table = tape.param(model.embedding());
        let h0 = init_node_embeddings(&mut tape, &nodes, table, &model.vocab).unwrap();
        let layer = mgcn_layer(&mut tape, &graphs, h0, params, false).unwrap();

        let mut parts = Vec::new();
        for (label, edges) in &all {
            let out = basic_encode(&mut tape, edges, h0, &params.graphs[label.index()], false).unwrap();
            parts.push(if removed.contains(label) {
                tape.constant(Tensor::zeros(mg.node_count(), 5))
            } else {
                out
            });
        }
        let total = tape.add_n(&parts).unwrap();
        let expected = match aggregation {
            Aggregation::Avg => tape.div_scalar(total, (6 - removed.len()) as f64),
            _ => total,
        };
        prop_assert_eq!(tape.value(layer), tape.value(expected));
    }
}

/// With the global graph removed, a node's final representation depends only
/// on its n-hop neighborhood: editing the far end of a chain leaves the
/// near end untouched.
#[test]
fn representations_are_local_without_global_graph() {
    let chain = |last: &str| -> Vec<Triple> {
        (0..6)
            .map(|i| {
                let p = if i == 5 { last.to_string() } else { "p0".to_string() };
                Triple::new(format!("e{i}"), p, format!("e{}", i + 1))
            })
            .collect()
    };
    for aggregation in [Aggregation::Sum, Aggregation::Avg, Aggregation::Conv] {
        for layers in [1, 2] {
            let mut model = encoder_model(aggregation, layers, 12);
            model.config.graphs.remove(&EdgeLabel::Global);
            let rows = |triples: &[Triple]| -> BTreeMap<String, Vec<f64>> {
                let graph = model.prepare(triples).unwrap();
                let h = model.memory(&graph).unwrap();
                graph
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(i, n): (usize, &GraphNode)| (n.display_name(), h.row_slice(i).to_vec()))
                    .collect()
            };
            let before = rows(&chain("p1"));
            let after = rows(&chain("p2"));
            // e0 sees at most `layers` hops; the edited relation sits four
            // entity hops away.
            assert_eq!(before["e0"], after["e0"]);
            assert_eq!(before["e1"], after["e1"]);
            assert_ne!(before["e6"], after["e6"]);

            // The global node only emits edges, so its own state never
            // depends on the graph and restoring it adds no path.
            let full = encoder_model(aggregation, layers, 12);
            let row0 = |t: &[Triple]| full.memory(&full.prepare(t).unwrap()).unwrap().row_slice(0).to_vec();
            assert_eq!(row0(&chain("p1")), row0(&chain("p2")));
        }
    }
}

/// With every encoder weight zeroed a node's state is `Σ_g ReLU(deg_g(j)·b_g)`:
/// it depends only on in-degrees, and with zero biases every row is equal.
#[test]
fn zero_weights_leave_only_degree_dependent_bias() {
    let triples = vec![
        Triple::new("e0", "p0", "e1"),
        Triple::new("e1", "p1", "e2"),
        Triple::new("e0", "p2", "e2"),
    ];
    let mut model = encoder_model(Aggregation::Sum, 1, 21);
    let LayerParams::Mgcn(params) = model.layers()[0].clone() else { unreachable!() };
    for conv in params.graphs {
        model.store.value_mut(conv.weight).fill(0.0);
    }
    let mg = model.multigraph(&triples).unwrap();
    let h = model.memory(&model.prepare(&triples).unwrap()).unwrap();
    for j in 0..mg.node_count() {
        for c in 0..5 {
            let mut want = 0.0;
            for label in EdgeLabel::ALL {
                let deg = mg.edges(label).iter().filter(|&&(_, t)| t == j).count() as f64;
                let b = model.store.value(params.graphs[label.index()].bias).data()[c];
                want += (deg * b).max(0.0);
            }
            assert!((h.get(j, c) - want).abs() < 1e-15, "node {j} channel {c}");
        }
    }
    for conv in params.graphs {
        model.store.value_mut(conv.bias).fill(0.0);
    }
    let h = model.memory(&model.prepare(&triples).unwrap()).unwrap();
    assert!(h.data().iter().all(|&x| x == 0.0));
}
