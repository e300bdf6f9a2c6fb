use serde::Serialize;

use super::Aggregator;
use crate::error::{Error, Result};
use crate::json;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClientRecord {
    pub id: usize,
    pub n: usize,
    #[serde(serialize_with = "json::f64_17")]
    pub map_log_joint: f64,
    pub local_epochs: usize,
}

/// Test-set evaluation of the broadcast models after aggregation. Calibration
/// numbers describe the served model: the student when one exists.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServerRecord {
    pub aggregator: Aggregator,
    #[serde(serialize_with = "json::f64_17")]
    pub test_acc_teacher: f64,
    #[serde(serialize_with = "json::opt_f64_17")]
    pub test_acc_student: Option<f64>,
    #[serde(serialize_with = "json::f64_17")]
    pub ece: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub brier: f64,
}

/// One line of `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    /// 1-based round index, counted across active-learning rounds.
    pub round: usize,
    pub per_client: Vec<ClientRecord>,
    pub server: ServerRecord,
    /// Wall-clock time of the round; the only field that is not a function
    /// of config and seed.
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_round: Option<usize>,
}

impl RunRecord {
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// The record with `wall_ms` zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord {
            wall_ms: 0,
            ..self.clone()
        }
    }
}
