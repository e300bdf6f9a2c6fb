//! The federated protocol: local client updates, server aggregation, and the
//! round loop.

mod aggregate;
mod client;
mod record;
mod run;

pub use aggregate::{
    aggregate_average, fit_param_gaussian, pseudo_label, sample_ensemble, server_distill,
    swa_distill, weighted_average, ParamGaussian, PseudoLabeledSet, SwaConfig,
};
pub use client::{client_update, ClientUpdate, LocalContext};
pub use record::{ClientRecord, RunRecord, ServerRecord};
pub use run::{evaluate_globals, initial_globals, run_federated, run_rounds, Federation, RoundObserver};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Average,
    Distill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    /// SGLD teacher + online student distillation.
    Fedppd,
    /// Plain SGD on a single point-estimate model.
    Fedavg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub aggregator: Aggregator,
    pub client_mode: ClientMode,
    /// Additional teachers sampled from the server-side Gaussian.
    pub ensemble_samples: usize,
    pub server_epochs: usize,
    pub server_lr: f64,
    pub server_batch_size: usize,
    /// Snapshot averaging starts after this epoch; `None` means ⌈epochs/2⌉.
    pub swa_start: Option<usize>,
    pub swa_every: usize,
    /// Local SGD step size in fedavg mode.
    pub fedavg_lr: f64,
    pub fedavg_weight_decay: f64,
    /// Write global checkpoints every this many rounds (0 = final only).
    pub checkpoint_every: usize,
    pub execution: Execution,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            local_epochs: 10,
            aggregator: Aggregator::Average,
            client_mode: ClientMode::Fedppd,
            ensemble_samples: 10,
            server_epochs: 20,
            server_lr: 0.05,
            server_batch_size: 50,
            swa_start: None,
            swa_every: 1,
            fedavg_lr: 0.05,
            fedavg_weight_decay: 1e-4,
            checkpoint_every: 0,
            execution: Execution::Parallel,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.server_lr > 0.0) || !(self.fedavg_lr > 0.0) {
            return Err(Error::Config("federation learning rates must be > 0".into()));
        }
        if !(self.fedavg_weight_decay >= 0.0) {
            return Err(Error::Config("federation.fedavg_weight_decay must be >= 0".into()));
        }
        if self.server_batch_size == 0 || self.swa_every == 0 {
            return Err(Error::Config(
                "federation.server_batch_size and swa_every must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn swa(&self) -> SwaConfig {
        SwaConfig {
            epochs: self.server_epochs,
            lr: self.server_lr,
            batch_size: self.server_batch_size,
            swa_start: self.swa_start.unwrap_or(self.server_epochs.div_ceil(2)),
            swa_every: self.swa_every,
        }
    }
}

/// Models broadcast by the server at the start of a round.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalModels {
    pub teacher: ParamVector,
    /// Absent in fedavg mode, where only one model travels.
    pub student: Option<ParamVector>,
    pub round: usize,
}

impl GlobalModels {
    pub fn is_finite(&self) -> bool {
        self.teacher.is_finite() && self.student.as_ref().is_none_or(ParamVector::is_finite)
    }
}
