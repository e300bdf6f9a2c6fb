//! Finite-difference sweeps over the autodiff primitives and both training
//! objectives. Each `check_*` panics on the first violation.

use super::{fd_check, random_distributions, random_matrix, FdReport, REL_TOL};
use fedppd::distill::student_objective_grad;
use fedppd::model::{self, Batch, ModelSpec, ParamVector, PriorHyper, Role};
use fedppd::rng;
use fedppd::tensor::{Matrix, NodeId, Tape};
use rand::Rng;

type Build = fn(&mut Tape, &[NodeId], &Matrix) -> NodeId;

/// Evaluates `build` on fresh leaves and returns the scalar output.
fn eval(build: Build, inputs: &[Matrix], aux: &Matrix) -> (Tape, Vec<NodeId>, NodeId) {
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &leaves, aux);
    (tape, leaves, out)
}

/// Compares the tape's gradient for every input leaf against central differences.
fn check_primitive(build: Build, inputs: &[Matrix], aux: &Matrix) -> FdReport {
    let (tape, leaves, out) = eval(build, inputs, aux);
    let grads = tape.backward(out).unwrap();
    let analytic: Vec<f64> = leaves
        .iter()
        .flat_map(|&l| grads.get_or_zeros(&tape, l).into_data())
        .collect();
    let flat: Vec<f64> = inputs.iter().flat_map(|m| m.data().to_vec()).collect();
    let f = |x: &[f64]| {
        let mut offset = 0;
        let rebuilt: Vec<Matrix> = inputs
            .iter()
            .map(|m| {
                let n = m.data().len();
                let out = Matrix::new(m.rows(), m.cols(), x[offset..offset + n].to_vec()).unwrap();
                offset += n;
                out
            })
            .collect();
        let (tape, _, out) = eval(build, &rebuilt, aux);
        tape.value(out).get(0, 0)
    };
    fd_check(f, &flat, &analytic)
}

/// Contracts a matrix node with fixed random weights so every entry matters.
fn contract(tape: &mut Tape, x: NodeId, weights: &Matrix) -> NodeId {
    let w = tape.leaf(weights.clone());
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod).unwrap()
}

const PRIMITIVES: [(&str, Build); 10] = [
    ("matmul", |t, l, aux| {
        let y = t.matmul(l[0], l[1]).unwrap();
        contract(t, y, aux)
    }),
    ("add_bias", |t, l, aux| {
        let y = t.add_bias(l[0], l[1]).unwrap();
        contract(t, y, aux)
    }),
    ("add", |t, l, aux| {
        let y = t.add(l[0], l[1]).unwrap();
        contract(t, y, aux)
    }),
    ("mul", |t, l, aux| {
        let y = t.mul(l[0], l[1]).unwrap();
        contract(t, y, aux)
    }),
    ("relu", |t, l, aux| {
        let y = t.relu(l[0]).unwrap();
        contract(t, y, aux)
    }),
    ("softmax", |t, l, aux| {
        let y = t.softmax(l[0]).unwrap();
        contract(t, y, aux)
    }),
    ("log_softmax", |t, l, aux| {
        let y = t.log_softmax(l[0]).unwrap();
        contract(t, y, aux)
    }),
    ("cross_entropy_soft", |t, l, aux| {
        let lp = t.log_softmax(l[0]).unwrap();
        t.cross_entropy_soft(lp, aux).unwrap()
    }),
    ("scale", |t, l, aux| {
        let y = t.scale(l[0], -2.75).unwrap();
        contract(t, y, aux)
    }),
    ("sum", |t, l, _| {
        let sq = t.mul(l[0], l[0]).unwrap();
        t.sum(sq).unwrap()
    }),
];

fn primitive_case(name: &str, seed: u64) -> (Vec<Matrix>, Matrix) {
    let mut rng = rng::from_seed(seed);
    let r = rng.random_range(1..5);
    let c = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    let m = |rng: &mut rng::Rng, r, c| random_matrix(rng, r, c, 1.0);
    match name {
        "matmul" => (vec![m(&mut rng, r, k), m(&mut rng, k, c)], m(&mut rng, r, c)),
        "add_bias" => (vec![m(&mut rng, r, c), m(&mut rng, 1, c)], m(&mut rng, r, c)),
        "add" | "mul" => (vec![m(&mut rng, r, c), m(&mut rng, r, c)], m(&mut rng, r, c)),
        "cross_entropy_soft" => (vec![m(&mut rng, r, c + 1)], random_distributions(&mut rng, r, c + 1)),
        "sum" => (vec![m(&mut rng, r, c)], Matrix::zeros(1, 1)),
        _ => (vec![m(&mut rng, r, c)], m(&mut rng, r, c)),
    }
}

pub fn check_primitives() {
    let mut cases = 0;
    for (name, build) in PRIMITIVES {
        for seed in 0..12 {
            let (inputs, aux) = primitive_case(name, 1000 * cases as u64 + seed);
            let report = check_primitive(build, &inputs, &aux);
            assert!(
                report.worst < REL_TOL,
                "{name} seed {seed}: relative error {:.3e}",
                report.worst
            );
            assert!(report.kinks <= 1, "{name} seed {seed}: {report:?}");
            cases += 1;
        }
    }
    assert!(cases >= 100);
}

/// Dense random parameters; zero biases would park dead units exactly on a kink.
pub fn random_params<R: Rng>(rng: &mut R, spec: &ModelSpec) -> ParamVector {
    let values = random_matrix(rng, 1, spec.num_params(), 0.7).into_data();
    ParamVector::from_values(spec, values).unwrap()
}

pub fn random_spec<R: Rng>(rng: &mut R, role: Role) -> ModelSpec {
    let depth = rng.random_range(1..3);
    let hidden = (0..depth).map(|_| rng.random_range(2..6)).collect();
    ModelSpec::new(rng.random_range(1..5), hidden, rng.random_range(2..5), role).unwrap()
}

pub fn check_teacher_objective() {
    let mut kinks = 0;
    let mut checked = 0;
    for seed in 0..60 {
        let mut rng = rng::from_seed(7_000 + seed);
        let spec = random_spec(&mut rng, Role::Teacher);
        let params = random_params(&mut rng, &spec);
        let m = rng.random_range(1..7);
        let inputs = random_matrix(&mut rng, m, spec.input_dim, 1.0);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..spec.classes)).collect();
        let batch = Batch {
            inputs: &inputs,
            labels: &labels,
        };
        let prior = PriorHyper::new(rng.random_range(0.0..2.0)).unwrap();
        let n = m + rng.random_range(0..20);
        let (value, grad) = model::log_joint_grad(&spec, &params, &batch, prior, n).unwrap();
        let direct = model::log_joint(&spec, &params, &batch, prior, n).unwrap();
        assert!((value - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        let f = |x: &[f64]| {
            let p = ParamVector::from_values(&spec, x.to_vec()).unwrap();
            model::log_joint(&spec, &p, &batch, prior, n).unwrap()
        };
        let report = fd_check(f, params.values(), &grad);
        assert!(report.worst < REL_TOL, "seed {seed}: {report:?}");
        kinks += report.kinks;
        checked += report.checked;
    }
    assert!(kinks * 100 < checked, "{kinks} kinks out of {checked}");
}

pub fn check_student_objective() {
    let mut kinks = 0;
    let mut checked = 0;
    for seed in 0..60 {
        let mut rng = rng::from_seed(9_000 + seed);
        let spec = random_spec(&mut rng, Role::Student);
        let w = random_params(&mut rng, &spec);
        let m = rng.random_range(1..7);
        let inputs = random_matrix(&mut rng, m, spec.input_dim, 1.0);
        let teacher = random_distributions(&mut rng, m, spec.classes);
        let prior = PriorHyper::new(rng.random_range(0.0..2.0)).unwrap();
        let (_, grad) = student_objective_grad(&spec, &w, &teacher, &inputs, prior).unwrap();
        let f = |x: &[f64]| {
            let p = ParamVector::from_values(&spec, x.to_vec()).unwrap();
            let lp = model::forward(&spec, &p, &inputs).unwrap().log_softmax_rows();
            let align: f64 = teacher
                .data()
                .iter()
                .zip(lp.data())
                .map(|(t, l)| t * l)
                .sum::<f64>()
                / m as f64;
            align + prior.log_density(&p)
        };
        let report = fd_check(f, w.values(), &grad);
        assert!(report.worst < REL_TOL, "seed {seed}: {report:?}");
        kinks += report.kinks;
        checked += report.checked;
    }
    assert!(kinks * 100 < checked, "{kinks} kinks out of {checked}");
}
