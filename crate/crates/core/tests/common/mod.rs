#![allow(dead_code)]

pub mod algebra;
pub mod grad;
pub mod oracles;

use fedppd::tensor::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub const REL_TOL: f64 = 1e-4;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_distributions<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let mut m = random_matrix(rng, rows, cols, 1.5);
    for r in 0..rows {
        fedppd::tensor::softmax_in_place(m.row_mut(r));
    }
    m
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates where forward and backward differences disagree, i.e. a
    /// ReLU kink lies within `h` of the point; these carry no information.
    pub kinks: usize,
    pub worst: f64,
}

/// Checks `grad` against central differences of `f` at `x` with `h = 1e-5`.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> FdReport {
    assert_eq!(x.len(), grad.len());
    let h = 1e-5;
    let mut report = FdReport::default();
    let f0 = f(x);
    for (i, &a) in grad.iter().enumerate() {
        let mut p = x.to_vec();
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        let down = f(&p);
        let n = (up - down) / (2.0 * h);
        let (fwd, bwd) = ((up - f0) / h, (f0 - down) / h);
        let scale = a.abs().max(n.abs()).max(1e-6);
        if (fwd - bwd).abs() > 1e-3 * scale.max(1.0) {
            report.kinks += 1;
            continue;
        }
        report.checked += 1;
        report.worst = report.worst.max((a - n).abs() / scale);
    }
    report
}

/// Statistics of SGLD samples on the conjugate Gaussian-mean model
/// `x_i ~ N(θ, 1)`, `θ ~ N(0, 1/λ)`, against the analytic posterior.
#[derive(Debug)]
pub struct ConjugateReport {
    pub post_mean: f64,
    pub post_sd: f64,
    pub sample_mean: f64,
    pub sample_var: f64,
    pub ks: f64,
    pub samples: usize,
}

impl ConjugateReport {
    pub fn mean_error_in_sd(&self) -> f64 {
        (self.sample_mean - self.post_mean).abs() / self.post_sd
    }

    pub fn var_ratio(&self) -> f64 {
        self.sample_var / (self.post_sd * self.post_sd)
    }
}

pub fn conjugate_sgld(seed: u64) -> ConjugateReport {
    use fedppd::sgld::langevin_update;
    use statrs::distribution::{ContinuousCDF, Normal};

    let mut rng = fedppd::rng::from_seed(seed);
    let n = 20;
    let lambda = 1.0;
    let xs: Vec<f64> = (0..n).map(|_| 1.5 + rng.sample::<f64, _>(StandardNormal)).collect();
    let sum: f64 = xs.iter().sum();
    let precision = lambda + n as f64;
    let post_mean = sum / precision;
    let post_sd = precision.recip().sqrt();

    let alpha = 0.01;
    let (burn_in, thin, keep) = (2_000, 10, 5_000);
    let mut theta = [0.0];
    let mut samples = Vec::with_capacity(keep);
    for step in 0..burn_in + thin * keep {
        let grad = [-lambda * theta[0] + (sum - n as f64 * theta[0])];
        langevin_update(&mut theta, &grad, alpha, Some(&mut rng)).unwrap();
        if step >= burn_in && (step - burn_in) % thin == thin - 1 {
            samples.push(theta[0]);
        }
    }
    let m = samples.len() as f64;
    let sample_mean = samples.iter().sum::<f64>() / m;
    let sample_var = samples.iter().map(|s| (s - sample_mean).powi(2)).sum::<f64>() / (m - 1.0);

    let posterior = Normal::new(post_mean, post_sd).unwrap();
    samples.sort_by(f64::total_cmp);
    let ks = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = posterior.cdf(s);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    ConjugateReport {
        post_mean,
        post_sd,
        sample_mean,
        sample_var,
        ks,
        samples: samples.len(),
    }
}

/// Runs the local teacher/student loop (SGLD teacher, online distillation of
/// every post-burn-in sample) on a two-class toy problem and returns the mean
/// `KL(p̄_teacher ‖ p_student)` on held-out perturbed inputs, where `p̄` averages
/// every distilled teacher sample.
pub fn distill_toy_kl(seed: u64, epochs: usize) -> f64 {
    use fedppd::data::gen_synthetic;
    use fedppd::distill::{mean_kl, perturb_inputs, student_step};
    use fedppd::model::{self, Batch, ModelSpec, PriorHyper, Role};
    use fedppd::sgld::sgld_step;
    use rand::seq::SliceRandom;

    let all = gen_synthetic(2, 2, 600, 0.7, seed).unwrap();
    let train = all.subset(&(0..1000).collect::<Vec<_>>());
    let held_out = all.subset(&(1000..1200).collect::<Vec<_>>());
    let teacher = ModelSpec::new(2, vec![16], 2, Role::Teacher).unwrap();
    let student = ModelSpec::new(2, vec![16], 2, Role::Student).unwrap();
    let mut rng = fedppd::rng::from_seed(seed ^ 0x5eed);
    let mut theta = model::init_params(&teacher, &mut rng);
    let mut w = model::init_params(&student, &mut rng);
    let prior = PriorHyper::new(1e-2).unwrap();
    let student_prior = PriorHyper::new(1e-5).unwrap();
    let (batch_size, burn_in, alpha, beta, sigma) = (10, 100, 1e-3, 0.5, 0.05);

    let probe = perturb_inputs(&held_out.features, sigma, &mut rng);
    let mut ppd = Matrix::zeros(probe.rows(), 2);
    let mut distilled = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let xb = train.features.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let batch = Batch { inputs: &xb, labels: &yb };
            theta = sgld_step(&teacher, &theta, &batch, alpha, prior, train.len(), Some(&mut rng))
                .unwrap()
                .0;
            if step >= burn_in {
                let inputs = perturb_inputs(&xb, sigma, &mut rng);
                w = student_step(&student, &w, &teacher, &theta, &inputs, beta, student_prior).unwrap();
                let p = model::predict_proba(&teacher, &theta, &probe).unwrap();
                for (a, v) in ppd.data_mut().iter_mut().zip(p.data()) {
                    *a += v;
                }
                distilled += 1;
            }
            step += 1;
        }
    }
    ppd.data_mut().iter_mut().for_each(|v| *v /= distilled as f64);
    let q = model::predict_proba(&student, &w, &probe).unwrap();
    mean_kl(&ppd, &q)
}

/// `-(1/m) Σ_i Σ_x Σ_j p_i(j|x) log S(j|x)` by direct triple loop.
fn direct_double_sum(teachers: &[Matrix], log_s: &Matrix) -> f64 {
    let mut total = 0.0;
    for t in teachers {
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                total -= t.get(r, c) * log_s.get(r, c);
            }
        }
    }
    total / teachers.len() as f64
}

/// Distillation loss against `m` random teachers, compared with the loss
/// against their averaged targets and with a direct triple sum. Returns the
/// two absolute gaps (relative to `max(|loss|, 1)`) and the slack above the
/// entropy of the averaged target, which must be non-negative.
pub fn distill_linearity(seed: u64, m: usize) -> (f64, f64, f64) {
    use fedppd::distill::distill_loss;
    use fedppd::model::{self, ModelSpec, Role};

    let mut rng = fedppd::rng::from_seed(seed);
    let spec = ModelSpec::new(3, vec![4], 3, Role::Student).unwrap();
    let w = model::init_params(&spec, &mut rng);
    let x = random_matrix(&mut rng, 7, 3, 1.0);
    let teachers: Vec<_> = (0..m).map(|_| random_distributions(&mut rng, 7, 3)).collect();
    let loss = distill_loss(&spec, &w, &teachers, &x).unwrap();

    let log_s = model::forward(&spec, &w, &x).unwrap().log_softmax_rows();
    let mut mean = Matrix::zeros(7, 3);
    for t in &teachers {
        for (a, v) in mean.data_mut().iter_mut().zip(t.data()) {
            *a += v / m as f64;
        }
    }
    let against_mean = distill_loss(&spec, &w, std::slice::from_ref(&mean), &x).unwrap();
    let scale = loss.abs().max(1.0);
    let entropy: f64 = mean.data().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    (
        (loss - against_mean).abs() / scale,
        (loss - direct_double_sum(&teachers, &log_s)).abs() / scale,
        loss - entropy,
    )
}
