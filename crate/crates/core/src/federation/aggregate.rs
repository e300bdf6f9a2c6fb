//! Server aggregation: dataset-size-weighted averaging, and the distillation
//! scheme (diagonal Gaussian over client models → sampled ensemble →
//! pseudo-labels on the server's unlabeled set → SWA distillation).

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::ClientUpdate;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{self, ModelSpec, ParamVector};
use crate::tensor::{Matrix, Tape};

/// `(1/N)·Σ n_k θ_k`, summed in slice order. Coordinates on which every
/// model agrees are copied through, so averaging identical models is exact.
pub fn weighted_average(models: &[(&ParamVector, usize)]) -> Result<ParamVector> {
    let Some(&(first, _)) = models.first() else {
        return Err(Error::Protocol("cannot aggregate zero models".into()));
    };
    for (k, (m, _)) in models.iter().enumerate() {
        if m.layout() != first.layout() || m.len() != first.len() {
            return Err(Error::Protocol(format!(
                "model {k} has a different parameter layout"
            )));
        }
    }
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Protocol("total sample count is zero".into()));
    }
    let total = total as f64;
    let values = (0..first.len())
        .map(|i| {
            let v0 = first.values()[i];
            if models.iter().all(|(m, _)| m.values()[i] == v0) {
                return v0;
            }
            let mut acc = 0.0;
            for (m, n) in models {
                acc += *n as f64 * m.values()[i];
            }
            acc / total
        })
        .collect();
    Ok(first.with_values(values))
}

/// Averages teachers and (when present) students, in ascending client id.
pub fn aggregate_average(updates: &[ClientUpdate]) -> Result<(ParamVector, Option<ParamVector>)> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.id);
    let teachers: Vec<(&ParamVector, usize)> = sorted.iter().map(|u| (&u.teacher, u.n)).collect();
    let teacher = weighted_average(&teachers).map_err(|e| name_client(e, &sorted, |u| &u.teacher))?;
    let student = if sorted.iter().all(|u| u.student.is_some()) {
        let students: Vec<(&ParamVector, usize)> = sorted
            .iter()
            .map(|u| (u.student.as_ref().expect("checked"), u.n))
            .collect();
        Some(weighted_average(&students)?)
    } else if sorted.iter().any(|u| u.student.is_some()) {
        return Err(Error::Protocol("only some clients sent a student model".into()));
    } else {
        None
    };
    Ok((teacher, student))
}

fn name_client(
    err: Error,
    sorted: &[&ClientUpdate],
    pick: impl Fn(&ClientUpdate) -> &ParamVector,
) -> Error {
    let reference = pick(sorted[0]);
    match sorted.iter().find(|u| pick(u).layout() != reference.layout() || pick(u).len() != reference.len()) {
        Some(u) => Error::Protocol(format!("client {} sent a mismatched parameter layout", u.id)),
        None => err,
    }
}

/// Diagonal Gaussian over parameter vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGaussian {
    pub mean: ParamVector,
    pub std: Vec<f64>,
}

/// Weighted mean and weighted population std per coordinate.
pub fn fit_param_gaussian(models: &[(&ParamVector, usize)]) -> Result<ParamGaussian> {
    let mean = weighted_average(models)?;
    let total: usize = models.iter().map(|(_, n)| n).sum();
    let total = total as f64;
    let std = (0..mean.len())
        .map(|i| {
            let mu = mean.values()[i];
            let var: f64 = models
                .iter()
                .map(|(m, n)| {
                    let d = m.values()[i] - mu;
                    *n as f64 * d * d
                })
                .sum::<f64>()
                / total;
            var.sqrt()
        })
        .collect();
    Ok(ParamGaussian { mean, std })
}

/// `M` draws from `g`, then the mean, then the client models.
pub fn sample_ensemble<R: Rng + ?Sized>(
    g: &ParamGaussian,
    extra: usize,
    clients: &[&ParamVector],
    rng: &mut R,
) -> Vec<ParamVector> {
    let mut out = Vec::with_capacity(extra + 1 + clients.len());
    for _ in 0..extra {
        let values = g
            .mean
            .values()
            .iter()
            .zip(&g.std)
            .map(|(&m, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * z
            })
            .collect();
        out.push(g.mean.with_values(values));
    }
    out.push(g.mean.clone());
    out.extend(clients.iter().map(|&c| c.clone()));
    out
}

/// Unlabeled inputs with ensemble-averaged soft targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabeledSet {
    pub inputs: Matrix,
    pub targets: Matrix,
}

/// Averages the members' softmax outputs on `unlabeled`, in member order.
pub fn pseudo_label(
    spec: &ModelSpec,
    ensemble: &[ParamVector],
    unlabeled: &Matrix,
    exec: Execution,
) -> Result<PseudoLabeledSet> {
    if unlabeled.rows() == 0 {
        return Err(Error::Argument("server unlabeled set is empty".into()));
    }
    if ensemble.is_empty() {
        return Err(Error::Argument("empty ensemble".into()));
    }
    let probs = exec::map(exec, ensemble, |m| model::predict_proba(spec, m, unlabeled));
    let mut acc = Matrix::zeros(unlabeled.rows(), spec.classes);
    for p in probs {
        let p = p?;
        for (a, v) in acc.data_mut().iter_mut().zip(p.data()) {
            *a += v;
        }
    }
    let k = ensemble.len() as f64;
    acc.data_mut().iter_mut().for_each(|v| *v /= k);
    Ok(PseudoLabeledSet {
        inputs: unlabeled.clone(),
        targets: acc,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwaConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Snapshots are taken after epochs `e > swa_start` with
    /// `(e - swa_start) % swa_every == 0` (epochs counted from 1).
    pub swa_start: usize,
    pub swa_every: usize,
}

/// SGD on mean soft-target cross-entropy from `init`, returning the running
/// average of the epoch-end snapshots (or `init` if none were taken).
pub fn swa_distill<R: Rng + ?Sized>(
    spec: &ModelSpec,
    init: &ParamVector,
    set: &PseudoLabeledSet,
    cfg: &SwaConfig,
    rng: &mut R,
) -> Result<ParamVector> {
    swa_distill_with_snapshots(spec, init, set, cfg, rng).map(|(avg, _)| avg)
}

pub(crate) fn swa_distill_with_snapshots<R: Rng + ?Sized>(
    spec: &ModelSpec,
    init: &ParamVector,
    set: &PseudoLabeledSet,
    cfg: &SwaConfig,
    rng: &mut R,
) -> Result<(ParamVector, Vec<ParamVector>)> {
    init.check(spec)?;
    let n = set.inputs.rows();
    if n == 0 && cfg.epochs > 0 {
        return Err(Error::Argument("pseudo-labeled set is empty".into()));
    }
    let batch_size = cfg.batch_size.max(1).min(n.max(1));
    let mut params = init.clone();
    let mut avg: Option<Vec<f64>> = None;
    let mut taken = 0usize;
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let x = set.inputs.select_rows(chunk);
            let t = set.targets.select_rows(chunk);
            let mut tape = Tape::new();
            let fwd = model::taped_forward(&mut tape, spec, &params, &x)?;
            let lp = tape.log_softmax(fwd.logits)?;
            let ce = tape.cross_entropy_soft(lp, &t)?;
            let loss = tape.scale(ce, 1.0 / chunk.len() as f64)?;
            let grads = tape.backward(loss)?;
            let g = model::collect_gradient(&tape, &grads, &fwd.leaves);
            let next = params
                .values()
                .iter()
                .zip(&g)
                .map(|(p, gi)| p - cfg.lr * gi)
                .collect();
            params = params.with_values(next);
        }
        if !params.is_finite() {
            return Err(Error::NonFinite {
                op: "swa distillation".into(),
            });
        }
        if epoch > cfg.swa_start && (epoch - cfg.swa_start) % cfg.swa_every.max(1) == 0 {
            let count = taken as f64;
            avg = Some(match avg {
                None => params.values().to_vec(),
                Some(a) => a
                    .iter()
                    .zip(params.values())
                    .map(|(m, p)| (m * count + p) / (count + 1.0))
                    .collect(),
            });
            taken += 1;
            snapshots.push(params.clone());
        }
    }
    let out = match avg {
        Some(a) => init.with_values(a),
        None => init.clone(),
    };
    Ok((out, snapshots))
}

/// Full distillation aggregation for one model family (teachers or students).
#[allow(clippy::too_many_arguments)]
pub fn server_distill<R: Rng + ?Sized>(
    spec: &ModelSpec,
    models: &[(&ParamVector, usize)],
    extra: usize,
    unlabeled: &Matrix,
    swa: &SwaConfig,
    exec: Execution,
    rng: &mut R,
) -> Result<ParamVector> {
    let g = fit_param_gaussian(models)?;
    if swa.epochs == 0 {
        return Ok(g.mean);
    }
    let clients: Vec<&ParamVector> = models.iter().map(|(m, _)| *m).collect();
    let ensemble = sample_ensemble(&g, extra, &clients, rng);
    let set = pseudo_label(spec, &ensemble, unlabeled, exec)?;
    swa_distill(spec, &g.mean, &set, swa, rng)
}
