//! Online distillation of teacher posterior samples into a student network.
//!
//! Each step perturbs a minibatch of inputs, scores it with the current
//! teacher sample, and moves the student up the gradient of
//! `(1/M)·Σ_x Σ_c p_teacher(c|x)·log p_student(c|x) + log p(w)`.
//! Teacher probabilities are constants; no label is ever read here.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelSpec, ParamVector, PriorHyper};
use crate::tensor::{Matrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Student step size β.
    pub step_size: f64,
    /// Std of the Gaussian input perturbation.
    pub perturb_sigma: f64,
    /// Student prior precision μ.
    pub prior_precision: f64,
    /// Perturb each client's data once per round instead of per step.
    pub fixed_set: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            perturb_sigma: 0.05,
            prior_precision: 1e-5,
            fixed_set: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("distill.step_size must be > 0".into()));
        }
        if !(self.perturb_sigma >= 0.0) {
            return Err(Error::Config("distill.perturb_sigma must be >= 0".into()));
        }
        PriorHyper::new(self.prior_precision)
            .map_err(|e| Error::Config(format!("distill.prior_precision: {e}")))?;
        Ok(())
    }

    pub fn prior(&self) -> PriorHyper {
        PriorHyper {
            precision: self.prior_precision,
        }
    }
}

/// Adds independent `N(0, σ²)` noise to every feature. `σ = 0` returns an
/// exact copy without touching the generator.
pub fn perturb_inputs<R: Rng + ?Sized>(inputs: &Matrix, sigma: f64, rng: &mut R) -> Matrix {
    if sigma == 0.0 {
        return inputs.clone();
    }
    let mut out = inputs.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    out
}

/// Value and gradient (w.r.t. the student) of the per-step student objective.
pub fn student_objective_grad(
    student_spec: &ModelSpec,
    w: &ParamVector,
    teacher_probs: &Matrix,
    inputs: &Matrix,
    prior: PriorHyper,
) -> Result<(f64, Vec<f64>)> {
    if teacher_probs.cols() != student_spec.classes {
        return Err(Error::Dimension {
            op: "student_step",
            lhs: teacher_probs.shape(),
            rhs: (inputs.rows(), student_spec.classes),
        });
    }
    if inputs.rows() == 0 {
        return Err(Error::Argument("empty distillation batch".into()));
    }
    let mut tape = Tape::new();
    let fwd = model::taped_forward(&mut tape, student_spec, w, inputs)?;
    let lp = tape.log_softmax(fwd.logits)?;
    let ce = tape.cross_entropy_soft(lp, teacher_probs)?;
    let align = tape.scale(ce, -1.0 / inputs.rows() as f64)?;
    let total = model::add_prior_term(&mut tape, &fwd.leaves, prior, align)?;
    let grads = tape.backward(total)?;
    Ok((
        tape.value(total).get(0, 0),
        model::collect_gradient(&tape, &grads, &fwd.leaves),
    ))
}

/// One gradient-ascent step of the student towards the teacher sample `theta`
/// on the (already perturbed, unlabeled) `inputs`.
pub fn student_step(
    student_spec: &ModelSpec,
    w: &ParamVector,
    teacher_spec: &ModelSpec,
    theta: &ParamVector,
    inputs: &Matrix,
    step_size: f64,
    prior: PriorHyper,
) -> Result<ParamVector> {
    if teacher_spec.classes != student_spec.classes {
        return Err(Error::Argument(format!(
            "teacher has {} classes, student {}",
            teacher_spec.classes, student_spec.classes
        )));
    }
    let teacher_probs = model::predict_proba(teacher_spec, theta, inputs)?;
    let (_, grad) = student_objective_grad(student_spec, w, &teacher_probs, inputs, prior)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "student gradient".into(),
        });
    }
    let next = w
        .values()
        .iter()
        .zip(&grad)
        .map(|(wi, gi)| wi + step_size * gi)
        .collect();
    Ok(w.with_values(next))
}

/// Batch distillation loss
/// `-(1/m) Σ_i Σ_{x'} Σ_j p(j|x',θ_i)·log S(j|x',w)` over `m` teacher
/// probability matrices evaluated on `unlabeled`.
pub fn distill_loss(
    student_spec: &ModelSpec,
    w: &ParamVector,
    teacher_prob_sets: &[Matrix],
    unlabeled: &Matrix,
) -> Result<f64> {
    if unlabeled.rows() == 0 {
        return Err(Error::Argument("empty distillation set".into()));
    }
    if teacher_prob_sets.is_empty() {
        return Err(Error::Argument("no teacher samples".into()));
    }
    let log_s = model::forward(student_spec, w, unlabeled)?.log_softmax_rows();
    let mut total = 0.0;
    for probs in teacher_prob_sets {
        if probs.shape() != log_s.shape() {
            return Err(Error::Dimension {
                op: "distill_loss",
                lhs: probs.shape(),
                rhs: log_s.shape(),
            });
        }
        total += cross_entropy_sum(probs, &log_s);
    }
    Ok(total / teacher_prob_sets.len() as f64)
}

/// `-Σ t·log p`, skipping zero targets.
pub(crate) fn cross_entropy_sum(targets: &Matrix, log_probs: &Matrix) -> f64 {
    targets
        .data()
        .iter()
        .zip(log_probs.data())
        .filter(|(&t, _)| t != 0.0)
        .map(|(t, l)| -t * l)
        .sum()
}

/// Mean over rows of `KL(p ‖ q)` in nats.
pub fn mean_kl(p: &Matrix, q: &Matrix) -> f64 {
    let mut total = 0.0;
    for (pr, qr) in p.row_iter().zip(q.row_iter()) {
        for (&a, &b) in pr.iter().zip(qr) {
            if a > 0.0 {
                total += a * (a / b).ln();
            }
        }
    }
    total / p.rows() as f64
}
