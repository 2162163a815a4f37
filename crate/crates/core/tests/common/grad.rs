//! Finite-difference checks shared by the gradient tests and the
//! acceptance harness. Each returns the worst relative error seen.

use mgcn::decoder::{decode_step, nll_loss, DecoderParams, DecoderState};
use mgcn::encoder::{mgcn_layer, register_layers, Aggregation, EncoderKind, Init, LayerParams};
use mgcn::graph::{to_multigraph, EdgeLabel};
use mgcn::kg::Triple;
use mgcn::numerics::{grad_check, Axis, EdgeList, ParamId, ParamStore, Tape, Tensor, Var};
use mgcn::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const POINTS: u64 = 10;

pub fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Reduces `out` to a scalar through a fixed random projection, so every
/// output entry contributes a distinct, non-trivial gradient.
pub fn project(tape: &mut Tape, out: Var, probe: &Tensor) -> Result<Var> {
    let p = tape.constant(probe.clone());
    let weighted = tape.mul(out, p)?;
    Ok(tape.sum(weighted))
}

type OpFn = Box<dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<(usize, usize)>,
    pub output: (usize, usize),
    pub op: OpFn,
}

fn case<F>(name: &'static str, inputs: &[(usize, usize)], output: (usize, usize), op: F) -> OpCase
where
    F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + 'static,
{
    OpCase {
        name,
        inputs: inputs.to_vec(),
        output,
        op: Box::new(op),
    }
}

/// Every differentiable tape op, with small fixed shapes.
pub fn op_cases() -> Vec<OpCase> {
    let edges = EdgeList::new(4, vec![(0, 1), (2, 1), (3, 3), (1, 0), (0, 1)]);
    let edges2 = edges.clone();
    vec![
        case("add", &[(3, 4), (3, 4)], (3, 4), |t, v| t.add(v[0], v[1])),
        case("add row broadcast", &[(3, 4), (1, 4)], (3, 4), |t, v| t.add(v[0], v[1])),
        case("mul", &[(3, 4), (3, 4)], (3, 4), |t, v| t.mul(v[0], v[1])),
        case("scale", &[(2, 5)], (2, 5), |t, v| Ok(t.scale(v[0], -1.7))),
        case("div_scalar", &[(2, 5)], (2, 5), |t, v| Ok(t.div_scalar(v[0], 3.0))),
        case("relu", &[(4, 4)], (4, 4), |t, v| Ok(t.relu(v[0]))),
        case("tanh", &[(4, 4)], (4, 4), |t, v| Ok(t.tanh(v[0]))),
        case("sigmoid", &[(4, 4)], (4, 4), |t, v| Ok(t.sigmoid(v[0]))),
        case("add_n", &[(2, 3), (2, 3), (2, 3)], (2, 3), |t, v| t.add_n(v)),
        case("sum", &[(3, 3)], (1, 1), |t, v| Ok(t.sum(v[0]))),
        case("matmul", &[(3, 4), (4, 2)], (3, 2), |t, v| t.matmul(v[0], v[1])),
        case("matmul_nt", &[(3, 4), (5, 4)], (3, 5), |t, v| t.matmul_nt(v[0], v[1])),
        case("attend", &[(2, 5), (5, 3)], (2, 3), |t, v| t.attend(v[0], v[1])),
        case("softmax rows", &[(3, 4)], (3, 4), |t, v| t.softmax(v[0], Axis::Rows)),
        case("softmax cols", &[(3, 4)], (3, 4), |t, v| t.softmax(v[0], Axis::Cols)),
        case("cross_entropy", &[(3, 6)], (1, 1), |t, v| t.cross_entropy(v[0], &[0, 5, 2])),
        case("concat rows", &[(2, 3), (1, 3)], (3, 3), |t, v| t.concat(v, Axis::Rows)),
        case("concat cols", &[(2, 3), (2, 1)], (2, 4), |t, v| t.concat(v, Axis::Cols)),
        case("gather_rows", &[(4, 3)], (5, 3), |t, v| t.gather_rows(v[0], &[3, 0, 3, 1, 1])),
        case("mean_rows", &[(4, 3)], (1, 3), |t, v| t.mean_rows(v[0])),
        case("slice_cols", &[(3, 5)], (3, 2), |t, v| t.slice_cols(v[0], 2, 2)),
        case("sparse_adj_matmul sum", &[(4, 3)], (4, 3), move |t, v| {
            t.sparse_adj_matmul(&edges, v[0], false)
        }),
        case("sparse_adj_matmul mean", &[(4, 3)], (4, 3), move |t, v| {
            t.sparse_adj_matmul(&edges2, v[0], true)
        }),
        case("conv_stack", &[(6, 3), (4, 3), (4, 3), (1, 3)], (4, 3), |t, v| {
            t.conv_stack(v[0], &[1, 4], &[v[1], v[2]], v[3])
        }),
    ]
}

/// Worst relative error of one op over `POINTS` random settings.
pub fn check_op(case: &OpCase) -> f64 {
    let mut worst = 0.0f64;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + point);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = case
            .inputs
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| store.add(format!("p{i}"), random(&mut rng, r, c)).unwrap())
            .collect();
        let probe = random(&mut rng, case.output.0, case.output.1);
        let report = grad_check(
            &mut store,
            |tape| {
                let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
                let out = (case.op)(tape, &vars)?;
                if case.output == (1, 1) {
                    Ok(out)
                } else {
                    project(tape, out, &probe)
                }
            },
            EPS,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}

pub fn four_node_triples() -> Vec<Triple> {
    // two entities, one relation, global node: four nodes in total
    vec![Triple::new("alice", "knows", "bob")]
}

/// Worst relative error of one MGCN layer (inputs and all layer
/// parameters) over `POINTS` random settings.
pub fn check_mgcn_layer(aggregation: Aggregation) -> f64 {
    let mg = to_multigraph(&four_node_triples()).unwrap();
    let n = mg.node_count();
    let graphs: Vec<(EdgeLabel, EdgeList)> = mg
        .active_labels()
        .into_iter()
        .map(|l| (l, EdgeList::new(n, mg.edges(l).to_vec())))
        .collect();
    let d = 3;
    let mut worst = 0.0f64;
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(point);
        let mut store = ParamStore::new();
        let layers = {
            let mut init = Init { rng: &mut rng, scale: 1.0 };
            register_layers(&mut store, EncoderKind::Mgcn, aggregation, 1, d, &mut init).unwrap()
        };
        let LayerParams::Mgcn(params) = &layers[0] else {
            unreachable!()
        };
        let x = store.add("x", random(&mut rng, n, d)).unwrap();
        let probe = random(&mut rng, n, d);
        let report = grad_check(
            &mut store,
            |tape| {
                let h = tape.param(x);
                let out = mgcn_layer(tape, &graphs, h, params, false)?;
                project(tape, out, &probe)
            },
            EPS,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error);
    }
    worst
}

/// Worst relative errors of one decoding step and of the full
/// teacher-forced loss, attending over a 4-row memory.
///
/// Seeds are fixed: some draws leave LSTM gradients near 1e-8, where
/// central differences are dominated by roundoff in the O(1) loss.
pub fn check_decoder() -> (f64, f64) {
    let (n, d, vocab) = (4, 3, 7);
    let (mut step_worst, mut loss_worst) = (0.0f64, 0.0f64);
    for point in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + point);
        let mut store = ParamStore::new();
        let decoder = {
            let mut init = Init { rng: &mut rng, scale: 1.0 };
            let embedding = store.add("embedding", init.matrix(vocab, d)).unwrap();
            DecoderParams::register(&mut store, embedding, d, d, true, &mut init).unwrap()
        };
        let memory = store.add("memory", random(&mut rng, n, d)).unwrap();
        let probe = random(&mut rng, 1, vocab);
        let step = grad_check(
            &mut store,
            |tape| {
                let m = tape.param(memory);
                let state = DecoderState::zeros(d, d).to_vars(tape);
                let out = decode_step(tape, &decoder, &state, 2, m)?;
                project(tape, out.logits, &probe)
            },
            EPS,
        )
        .unwrap();
        let loss = grad_check(
            &mut store,
            |tape| {
                let m = tape.param(memory);
                Ok(nll_loss(tape, &decoder, m, &[4, 5, 6])?.0)
            },
            EPS,
        )
        .unwrap();
        step_worst = step_worst.max(step.max_rel_error);
        loss_worst = loss_worst.max(loss.max_rel_error);
    }
    (step_worst, loss_worst)
}
