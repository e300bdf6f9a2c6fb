use rand::seq::SliceRandom;

use super::{ClientMode, GlobalModels};
use crate::data::Dataset;
use crate::distill::{self, DistillConfig};
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector, PriorHyper};
use crate::rng::Rng;
use crate::sgld::{self, MapTracker, SgldConfig};

/// Everything a client needs besides its data and generator.
#[derive(Clone, Debug)]
pub struct LocalContext<'a> {
    pub teacher_spec: &'a ModelSpec,
    pub student_spec: &'a ModelSpec,
    pub teacher_prior: PriorHyper,
    pub sgld: &'a SgldConfig,
    pub distill: &'a DistillConfig,
    pub epochs: usize,
    pub mode: ClientMode,
    pub fedavg_lr: f64,
    pub fedavg_weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub id: usize,
    /// Approximate MAP teacher (fedppd) or the locally trained model (fedavg).
    pub teacher: ParamVector,
    pub student: Option<ParamVector>,
    pub n: usize,
    /// Full-data log-joint of `teacher`.
    pub map_log_joint: f64,
    pub steps: usize,
    /// Steps whose teacher sample was distilled into the student.
    pub distilled: usize,
}

/// Runs `epochs × ⌈n/M⌉` local iterations starting from the broadcast models.
pub fn client_update(
    id: usize,
    data: &Dataset,
    globals: &GlobalModels,
    ctx: &LocalContext<'_>,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    if data.is_empty() {
        return Err(Error::Argument("client has no data".into()).in_client(id));
    }
    let result = match ctx.mode {
        ClientMode::Fedppd => fedppd_update(id, data, globals, ctx, rng),
        ClientMode::Fedavg => fedavg_update(id, data, globals, ctx, rng),
    };
    result.map_err(|e| e.in_client(id))
}

fn fedppd_update(
    id: usize,
    data: &Dataset,
    globals: &GlobalModels,
    ctx: &LocalContext<'_>,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    let n = data.len();
    let batch_size = ctx.sgld.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch_size);
    let eval_every = ctx.sgld.map_eval_every.unwrap_or(steps_per_epoch);
    let full = data.batch();

    let mut theta = globals.teacher.clone();
    theta.check(ctx.teacher_spec)?;
    let mut w = globals
        .student
        .clone()
        .ok_or_else(|| Error::Protocol("fedppd client received no student model".into()))?;
    w.check(ctx.student_spec)?;

    let mut tracker = MapTracker::new();
    tracker.evaluate(ctx.teacher_spec, &theta, &full, ctx.teacher_prior)?;

    let fixed_inputs = (ctx.distill.fixed_set && ctx.epochs > 0)
        .then(|| distill::perturb_inputs(&data.features, ctx.distill.perturb_sigma, rng));

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    let mut distilled = 0;
    for _ in 0..ctx.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let xb = data.features.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch = Batch {
                inputs: &xb,
                labels: &yb,
            };
            let alpha = ctx.sgld.step_size_at(step);
            let (next, _) = sgld::sgld_step(
                ctx.teacher_spec,
                &theta,
                &batch,
                alpha,
                ctx.teacher_prior,
                n,
                Some(&mut *rng),
            )?;
            theta = next;

            if step >= ctx.sgld.burn_in {
                let distill_inputs = match &fixed_inputs {
                    Some(fixed) => fixed.select_rows(chunk),
                    None => distill::perturb_inputs(&xb, ctx.distill.perturb_sigma, rng),
                };
                w = distill::student_step(
                    ctx.student_spec,
                    &w,
                    ctx.teacher_spec,
                    &theta,
                    &distill_inputs,
                    ctx.distill.step_size,
                    ctx.distill.prior(),
                )?;
                distilled += 1;
            }
            step += 1;
            if step % eval_every == 0 {
                tracker.evaluate(ctx.teacher_spec, &theta, &full, ctx.teacher_prior)?;
            }
        }
    }

    let (teacher, map_log_joint) = tracker.into_best().expect("tracker evaluated at least once");
    Ok(ClientUpdate {
        id,
        teacher,
        student: Some(w),
        n,
        map_log_joint,
        steps: step,
        distilled,
    })
}

fn fedavg_update(
    id: usize,
    data: &Dataset,
    globals: &GlobalModels,
    ctx: &LocalContext<'_>,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    let n = data.len();
    let batch_size = ctx.sgld.batch_size.min(n);
    let mut theta = globals.teacher.clone();
    theta.check(ctx.teacher_spec)?;

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..ctx.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let xb = data.features.select_rows(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let batch = Batch {
                inputs: &xb,
                labels: &yb,
            };
            let m = chunk.len() as f64;
            // ∇[(1/M)·Σ log p − (wd/2)‖θ‖²] via the log-joint with N = M
            let prior = PriorHyper {
                precision: ctx.fedavg_weight_decay * m,
            };
            let (_, grad) = model::log_joint_grad(ctx.teacher_spec, &theta, &batch, prior, chunk.len())?;
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    op: "fedavg gradient".into(),
                });
            }
            let next = theta
                .values()
                .iter()
                .zip(&grad)
                .map(|(t, g)| t + ctx.fedavg_lr * g / m)
                .collect();
            theta = theta.with_values(next);
            step += 1;
        }
    }
    let map_log_joint = model::log_joint(ctx.teacher_spec, &theta, &data.batch(), ctx.teacher_prior, n)?;
    Ok(ClientUpdate {
        id,
        teacher: theta,
        student: None,
        n,
        map_log_joint,
        steps: step,
        distilled: 0,
    })
}
