mod common;

use common::grad::{self, random_params, random_spec};
use common::{fd_check, random_matrix, REL_TOL};
use fedppd::distill::student_objective_grad;
use fedppd::model::{self, Batch, ModelSpec, ParamVector, PriorHyper, Role};
use fedppd::rng;
use fedppd::tensor::{Matrix, Tape};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn every_primitive_matches_central_differences() {
    grad::check_primitives();
}

#[test]
fn teacher_log_joint_gradient_matches_central_differences() {
    grad::check_teacher_objective();
}

#[test]
fn student_objective_gradient_matches_central_differences() {
    grad::check_student_objective();
}

#[test]
fn hand_set_two_class_student_direction() {
    let spec = ModelSpec::new(1, vec![3], 2, Role::Student).unwrap();
    let mut rng = rng::from_seed(3);
    let w = random_params(&mut rng, &spec);
    let inputs = Matrix::from_rows(&[[0.7]]).unwrap();
    let teacher = Matrix::from_rows(&[[0.8, 0.2]]).unwrap();
    let prior = PriorHyper::new(0.1).unwrap();
    let (_, grad) = student_objective_grad(&spec, &w, &teacher, &inputs, prior).unwrap();
    let f = |x: &[f64]| {
        let p = ParamVector::from_values(&spec, x.to_vec()).unwrap();
        student_objective_grad(&spec, &p, &teacher, &inputs, prior).unwrap().0
    };
    let report = fd_check(f, w.values(), &grad);
    assert!(report.worst < REL_TOL, "{report:?}");
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-700.0f64..700.0, 1..8)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in prop::collection::vec(row_strategy(), 1..5)) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
        let s = Matrix::from_rows(&rows).unwrap().softmax_rows();
        for r in s.row_iter() {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn log_softmax_is_log_of_softmax(row in row_strategy()) {
        let z = Matrix::row_vector(row);
        let ls = z.log_softmax_rows();
        let s = z.softmax_rows();
        for (&l, &p) in ls.data().iter().zip(s.data()) {
            prop_assert!(l.is_finite());
            if p >= f64::MIN_POSITIVE {
                prop_assert!((l - p.ln()).abs() <= 1e-9, "{} vs {}", l, p.ln());
            } else {
                prop_assert!(l < f64::MIN_POSITIVE.ln());
            }
        }
    }

    #[test]
    fn cross_entropy_with_self_is_entropy(row in prop::collection::vec(-20.0f64..20.0, 1..8)) {
        let z = Matrix::row_vector(row);
        let p = z.softmax_rows();
        let mut tape = Tape::new();
        let lp = tape.leaf(p.map(f64::ln));
        let ce = tape.cross_entropy_soft(lp, &p).unwrap();
        let entropy: f64 = p.data().iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
        prop_assert!((tape.value(ce).get(0, 0) - entropy).abs() <= 1e-12);
    }

    #[test]
    fn flatten_unflatten_is_identity(seed in any::<u64>()) {
        let mut rng = rng::from_seed(seed);
        let spec = random_spec(&mut rng, Role::Teacher);
        let params = model::init_params(&spec, &mut rng);
        let layers = params.unflatten(&spec).unwrap();
        let back = ParamVector::flatten(&spec, &layers).unwrap();
        prop_assert_eq!(back.values(), params.values());
    }

    #[test]
    fn log_joint_ignores_minibatch_order(seed in any::<u64>()) {
        let mut rng = rng::from_seed(seed);
        let spec = random_spec(&mut rng, Role::Teacher);
        let params = model::init_params(&spec, &mut rng);
        let inputs = random_matrix(&mut rng, 6, spec.input_dim, 1.0);
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..spec.classes)).collect();
        let order = [5, 2, 0, 4, 1, 3];
        let inputs_p = inputs.select_rows(&order);
        let labels_p: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let prior = PriorHyper::new(0.5).unwrap();
        let a = model::log_joint(&spec, &params, &Batch { inputs: &inputs, labels: &labels }, prior, 30).unwrap();
        let b = model::log_joint(&spec, &params, &Batch { inputs: &inputs_p, labels: &labels_p }, prior, 30).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
