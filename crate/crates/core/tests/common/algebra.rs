//! Exact algebraic cases of the two aggregators. Each `check_*` panics on the
//! first mismatch.

use super::random_matrix;
use fedppd::exec::Execution;
use fedppd::federation::{
    aggregate_average, pseudo_label, server_distill, swa_distill, weighted_average, ClientUpdate, SwaConfig,
};
use fedppd::model::{self, ModelSpec, ParamVector, Role};
use fedppd::rng;

pub fn spec() -> ModelSpec {
    ModelSpec::new(3, vec![4], 3, Role::Teacher).unwrap()
}

pub fn random_model(seed: u64) -> ParamVector {
    model::init_params(&spec(), &mut rng::from_seed(seed))
}

pub fn update(id: usize, seed: u64, n: usize) -> ClientUpdate {
    let teacher = random_model(seed);
    ClientUpdate {
        id,
        student: Some(random_model(seed + 1)),
        teacher,
        n,
        map_log_joint: 0.0,
        steps: 0,
        distilled: 0,
    }
}

pub fn check_closed_forms() {
    let s = ModelSpec::new(1, vec![], 2, Role::Teacher).unwrap();
    let k = s.num_params();
    let a = ParamVector::from_values(&s, vec![0.0; k]).unwrap();
    let b = ParamVector::from_values(&s, vec![4.0; k]).unwrap();
    // n = [1, 3] → (1·0 + 3·4) / 4 = 3
    assert!(weighted_average(&[(&a, 1), (&b, 3)]).unwrap().values().iter().all(|&v| v == 3.0));
    // equal weights → plain mean
    assert!(weighted_average(&[(&a, 5), (&b, 5)]).unwrap().values().iter().all(|&v| v == 2.0));
    // K = 1 passthrough, whatever its weight
    let u = update(0, 3, 17);
    let (t, st) = aggregate_average(std::slice::from_ref(&u)).unwrap();
    assert_eq!(t, u.teacher);
    assert_eq!(st, u.student);
}

pub fn check_degenerate_distill() {
    let updates: Vec<ClientUpdate> = (0..4).map(|k| update(k, 10 * k as u64, 20 + k)).collect();
    let (avg, _) = aggregate_average(&updates).unwrap();
    let models: Vec<(&ParamVector, usize)> = updates.iter().map(|u| (&u.teacher, u.n)).collect();
    let swa = SwaConfig {
        epochs: 0,
        lr: 0.1,
        batch_size: 8,
        swa_start: 0,
        swa_every: 1,
    };
    let u = random_matrix(&mut rng::from_seed(1), 12, 3, 1.0);
    let out = server_distill(&spec(), &models, 0, &u, &swa, Execution::Sequential, &mut rng::from_seed(2)).unwrap();
    assert_eq!(out, avg);
}

pub fn check_swa_of_two_snapshots() {
    let s = spec();
    let ensemble = vec![random_model(1), random_model(2), random_model(3)];
    let u = random_matrix(&mut rng::from_seed(4), 20, 3, 1.0);
    let set = pseudo_label(&s, &ensemble, &u, Execution::Sequential).unwrap();
    let init = random_model(5);
    let cfg = |epochs, swa_start| SwaConfig {
        epochs,
        lr: 0.2,
        batch_size: 6,
        swa_start,
        swa_every: 1,
    };
    let run = |c: SwaConfig| swa_distill(&s, &init, &set, &c, &mut rng::from_seed(6)).unwrap();
    // one-snapshot runs on the same stream recover each snapshot on its own
    let first = run(cfg(1, 0));
    let second = run(cfg(2, 1));
    let both = run(cfg(2, 0));
    let mean: Vec<f64> = first.values().iter().zip(second.values()).map(|(a, b)| (a + b) / 2.0).collect();
    assert_eq!(both.values(), mean.as_slice());
    assert_eq!(run(cfg(0, 0)), init);
}
