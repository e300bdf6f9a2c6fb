//! Stochastic gradient Langevin dynamics and the approximate-MAP tracker.
//!
//! One step is `θ' = θ + (α_v/2)·∇log_joint(θ) + z`, `z ~ N(0, α_v·I)`, with
//! the polynomial schedule `α_v = α·(1 + v/τ)^(−κ)` (κ = 0 keeps it constant).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec, ParamVector, PriorHyper};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldConfig {
    pub step_size: f64,
    pub decay_tau: f64,
    pub decay_kappa: f64,
    /// Local steps per round whose teacher samples are not distilled.
    pub burn_in: usize,
    /// Full-data MAP evaluation interval in steps; `None` means once per epoch.
    pub map_eval_every: Option<usize>,
    pub batch_size: usize,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            step_size: 2e-4,
            decay_tau: 1.0,
            decay_kappa: 0.0,
            burn_in: 50,
            map_eval_every: None,
            batch_size: 50,
        }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "sgld.step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.decay_kappa) {
            return Err(Error::Config("sgld.decay_kappa must lie in [0, 1]".into()));
        }
        if !(self.decay_tau > 0.0) {
            return Err(Error::Config("sgld.decay_tau must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("sgld.batch_size must be >= 1".into()));
        }
        if self.map_eval_every == Some(0) {
            return Err(Error::Config("sgld.map_eval_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn step_size_at(&self, step: usize) -> f64 {
        if self.decay_kappa == 0.0 {
            return self.step_size;
        }
        self.step_size * (1.0 + step as f64 / self.decay_tau).powf(-self.decay_kappa)
    }
}

/// Applies `θ += (α/2)·grad + z` in place. `noise = None` skips `z` entirely
/// and draws nothing from any generator.
pub fn langevin_update<R: Rng + ?Sized>(
    params: &mut [f64],
    grad: &[f64],
    alpha: f64,
    noise: Option<&mut R>,
) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(Error::Argument(format!("step size must be > 0, got {alpha}")));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            op: "sgld gradient".into(),
        });
    }
    let half = 0.5 * alpha;
    match noise {
        Some(rng) => {
            let sd = alpha.sqrt();
            for (p, g) in params.iter_mut().zip(grad) {
                let z: f64 = rng.sample(StandardNormal);
                *p += half * g + sd * z;
            }
        }
        None => {
            for (p, g) in params.iter_mut().zip(grad) {
                *p += half * g;
            }
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            op: "sgld update".into(),
        });
    }
    Ok(())
}

/// One SGLD step on the model posterior; returns the new parameters and the
/// minibatch log-joint at the old ones.
#[allow(clippy::too_many_arguments)]
pub fn sgld_step<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch<'_>,
    alpha: f64,
    prior: PriorHyper,
    full_size: usize,
    noise: Option<&mut R>,
) -> Result<(ParamVector, f64)> {
    let (value, grad) = model::log_joint_grad(spec, params, batch, prior, full_size)?;
    let mut next = params.values().to_vec();
    langevin_update(&mut next, &grad, alpha, noise)?;
    Ok((params.with_values(next), value))
}

/// Tracks the sample with the largest full-data log-joint seen so far.
#[derive(Clone, Debug)]
pub struct MapTracker {
    best_log_joint: f64,
    best_params: Option<ParamVector>,
}

impl Default for MapTracker {
    fn default() -> Self {
        Self {
            best_log_joint: f64::NEG_INFINITY,
            best_params: None,
        }
    }
}

impl MapTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the stored sample iff `log_joint` strictly exceeds the best so
    /// far; ties keep the earlier one. Returns whether it replaced.
    pub fn offer(&mut self, params: &ParamVector, log_joint: f64) -> bool {
        if self.best_params.is_none() || log_joint > self.best_log_joint {
            self.best_log_joint = log_joint;
            self.best_params = Some(params.clone());
            true
        } else {
            false
        }
    }

    /// Evaluates the full-data log-joint (N = M = |data|) and offers the sample.
    pub fn evaluate(
        &mut self,
        spec: &ModelSpec,
        params: &ParamVector,
        data: &Batch<'_>,
        prior: PriorHyper,
    ) -> Result<f64> {
        let value = model::log_joint(spec, params, data, prior, data.labels.len())?;
        self.offer(params, value);
        Ok(value)
    }

    pub fn best_log_joint(&self) -> f64 {
        self.best_log_joint
    }

    pub fn best_params(&self) -> Option<&ParamVector> {
        self.best_params.as_ref()
    }

    pub fn into_best(self) -> Option<(ParamVector, f64)> {
        self.best_params.map(|p| (p, self.best_log_joint))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Role;
    use crate::rng;
    use crate::tensor::Matrix;

    #[test]
    fn one_parameter_hand_arithmetic() {
        // log_joint = -θ²/2  ⇒  grad = -θ
        let mut theta = [1.0];
        let grad = [-theta[0]];
        langevin_update::<rng::Rng>(&mut theta, &grad, 0.1, None).unwrap();
        assert!((theta[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut theta = [1.0];
        assert!(langevin_update::<rng::Rng>(&mut theta, &[1.0], 0.0, None).is_err());
        assert!(matches!(
            langevin_update::<rng::Rng>(&mut theta, &[f64::NAN], 0.1, None),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn injected_noise_has_variance_alpha() {
        let alpha = 0.04;
        let mut r = rng::from_seed(5);
        let n = 100_000;
        let mut params = vec![0.0; n];
        langevin_update(&mut params, &vec![0.0; n], alpha, Some(&mut r)).unwrap();
        let mean = params.iter().sum::<f64>() / n as f64;
        let var = params.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var / alpha - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn step_size_schedule() {
        let cfg = SgldConfig {
            step_size: 0.1,
            decay_tau: 10.0,
            decay_kappa: 0.5,
            ..SgldConfig::default()
        };
        assert_eq!(cfg.step_size_at(0), 0.1);
        assert!((cfg.step_size_at(30) - 0.05).abs() < 1e-15);
        assert_eq!(SgldConfig::default().step_size_at(1000), SgldConfig::default().step_size);
    }

    #[test]
    fn map_tracker_rules() {
        let s = ModelSpec::new(1, vec![], 2, Role::Teacher).unwrap();
        let mk = |v: f64| ParamVector::from_values(&s, vec![v; 4]).unwrap();
        let mut t = MapTracker::new();
        assert!(t.best_params().is_none());
        assert!(t.offer(&mk(0.0), -5.0));
        assert!(t.offer(&mk(1.0), -2.0));
        assert!(!t.offer(&mk(2.0), -3.0));
        assert_eq!(t.best_params().unwrap(), &mk(1.0));
        assert_eq!(t.best_log_joint(), -2.0);
        // ties keep the earlier sample
        assert!(!t.offer(&mk(3.0), -2.0));
        assert_eq!(t.best_params().unwrap(), &mk(1.0));

        let mut first = MapTracker::new();
        first.offer(&mk(7.0), f64::NEG_INFINITY);
        assert_eq!(first.best_params().unwrap(), &mk(7.0));
    }

    #[test]
    fn model_step_without_noise_or_prior_is_sgd() {
        let s = ModelSpec::new(2, vec![3], 2, Role::Teacher).unwrap();
        let mut r = rng::from_seed(2);
        let p = model::init_params(&s, &mut r);
        let x = Matrix::from_rows(&[[0.5, -1.0], [1.5, 0.25]]).unwrap();
        let y = [0, 1];
        let batch = Batch {
            inputs: &x,
            labels: &y,
        };
        let prior = PriorHyper::new(0.0).unwrap();
        let (next, _) = sgld_step::<rng::Rng>(&s, &p, &batch, 0.2, prior, 10, None).unwrap();
        let (_, g) = model::log_joint_grad(&s, &p, &batch, prior, 10).unwrap();
        for ((a, b), gi) in next.values().iter().zip(p.values()).zip(&g) {
            assert_eq!(*a, b + 0.1 * gi);
        }
    }
}
