use std::time::Instant;

use super::aggregate::{aggregate_average, server_distill};
use super::client::{client_update, ClientUpdate, LocalContext};
use super::record::{ClientRecord, RunRecord, ServerRecord};
use super::{Aggregator, ClientMode, FederationConfig, GlobalModels};
use crate::data::Dataset;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::{self, EvalBatch};
use crate::model::{self, ModelSpec, ParamVector, PriorHyper};
use crate::rng::{self, Purpose};
use crate::sgld::SgldConfig;
use crate::tensor::Matrix;

/// A fully materialized federated experiment.
#[derive(Clone, Debug)]
pub struct Federation {
    pub teacher_spec: ModelSpec,
    pub student_spec: ModelSpec,
    pub teacher_prior: PriorHyper,
    pub sgld: SgldConfig,
    pub distill: DistillConfig,
    pub config: FederationConfig,
    /// Client datasets, indexed by client id.
    pub clients: Vec<Dataset>,
    /// Server-side unlabeled inputs for the distill aggregator.
    pub server_unlabeled: Matrix,
    pub test: Dataset,
    pub seed: u64,
    /// Confidence bins for the per-round ECE.
    pub bins: usize,
}

/// Called after every round with its record and the new broadcast models.
pub type RoundObserver<'a> = dyn FnMut(&RunRecord, &GlobalModels) -> Result<()> + 'a;

impl Federation {
    pub fn validate(&self) -> Result<()> {
        self.teacher_spec.validate()?;
        self.student_spec.validate()?;
        self.sgld.validate()?;
        self.distill.validate()?;
        self.config.validate()?;
        if self.clients.is_empty() {
            return Err(Error::Argument("federation needs at least one client".into()));
        }
        if let Some(k) = self.clients.iter().position(Dataset::is_empty) {
            return Err(Error::Argument(format!("client {k} has no data")));
        }
        if self.config.client_mode == ClientMode::Fedppd && self.config.local_epochs > 0 {
            let smallest = self.clients.iter().map(Dataset::len).min().unwrap_or(0);
            let steps = self.config.local_epochs * smallest.div_ceil(self.sgld.batch_size.min(smallest));
            if self.sgld.burn_in >= steps {
                return Err(Error::Config(format!(
                    "sgld.burn_in ({}) covers all {steps} local steps of the smallest client; \
                     its student would never be distilled",
                    self.sgld.burn_in
                )));
            }
        }
        if self.bins == 0 {
            return Err(Error::Config("eval.bins must be >= 1".into()));
        }
        if self.config.aggregator == Aggregator::Distill
            && self.config.server_epochs > 0
            && self.server_unlabeled.rows() == 0
        {
            return Err(Error::Config(
                "the distill aggregator needs a non-empty server unlabeled set".into(),
            ));
        }
        Ok(())
    }

    fn context(&self) -> LocalContext<'_> {
        LocalContext {
            teacher_spec: &self.teacher_spec,
            student_spec: &self.student_spec,
            teacher_prior: self.teacher_prior,
            sgld: &self.sgld,
            distill: &self.distill,
            epochs: self.config.local_epochs,
            mode: self.config.client_mode,
            fedavg_lr: self.config.fedavg_lr,
            fedavg_weight_decay: self.config.fedavg_weight_decay,
        }
    }

    /// The model that is served to clients: the student (PPD) when present.
    pub fn served<'g>(&'g self, globals: &'g GlobalModels) -> (&'g ModelSpec, &'g ParamVector) {
        match &globals.student {
            Some(w) => (&self.student_spec, w),
            None => (&self.teacher_spec, &globals.teacher),
        }
    }

    pub fn served_proba(&self, globals: &GlobalModels, inputs: &Matrix) -> Result<Matrix> {
        let (spec, params) = self.served(globals);
        model::predict_proba(spec, params, inputs)
    }
}

/// Round-0 broadcast: independent Kaiming draws for teacher and student.
pub fn initial_globals(fed: &Federation) -> GlobalModels {
    let teacher = model::init_params(&fed.teacher_spec, &mut rng::stream(fed.seed, Purpose::Init, 0, 0));
    let student = (fed.config.client_mode == ClientMode::Fedppd)
        .then(|| model::init_params(&fed.student_spec, &mut rng::stream(fed.seed, Purpose::Init, 1, 0)));
    GlobalModels {
        teacher,
        student,
        round: 0,
    }
}

/// Test accuracy of both models plus ECE/Brier of the served one.
pub fn evaluate_globals(fed: &Federation, globals: &GlobalModels) -> Result<ServerRecord> {
    let inputs = &fed.test.features;
    let labels = fed.test.labels.clone();
    let teacher = EvalBatch::new(
        model::predict_proba(&fed.teacher_spec, &globals.teacher, inputs)?,
        labels.clone(),
    )?;
    let student = match &globals.student {
        Some(w) => Some(EvalBatch::new(
            model::predict_proba(&fed.student_spec, w, inputs)?,
            labels,
        )?),
        None => None,
    };
    let served = student.as_ref().unwrap_or(&teacher);
    let (ece, _) = metrics::ece_mce(served, fed.bins);
    Ok(ServerRecord {
        aggregator: fed.config.aggregator,
        test_acc_teacher: metrics::accuracy(&teacher),
        test_acc_student: student.as_ref().map(metrics::accuracy),
        ece,
        brier: metrics::brier(served),
    })
}

fn aggregate(fed: &Federation, round: usize, updates: &[ClientUpdate]) -> Result<GlobalModels> {
    let cfg = &fed.config;
    let (teacher, student) = match cfg.aggregator {
        Aggregator::Average => aggregate_average(updates)?,
        Aggregator::Distill => {
            let swa = cfg.swa();
            let teachers: Vec<(&ParamVector, usize)> = updates.iter().map(|u| (&u.teacher, u.n)).collect();
            let students: Option<Vec<(&ParamVector, usize)>> = updates
                .iter()
                .map(|u| u.student.as_ref().map(|w| (w, u.n)))
                .collect();
            let r = round as u32;
            let (t, s) = exec::join(
                cfg.execution,
                || {
                    server_distill(
                        &fed.teacher_spec,
                        &teachers,
                        cfg.ensemble_samples,
                        &fed.server_unlabeled,
                        &swa,
                        cfg.execution,
                        &mut rng::stream(fed.seed, Purpose::Server, r, 0),
                    )
                },
                || {
                    students
                        .as_ref()
                        .map(|s| {
                            server_distill(
                                &fed.student_spec,
                                s,
                                cfg.ensemble_samples,
                                &fed.server_unlabeled,
                                &swa,
                                cfg.execution,
                                &mut rng::stream(fed.seed, Purpose::Server, r, 1),
                            )
                        })
                        .transpose()
                },
            );
            (t?, s?)
        }
    };
    Ok(GlobalModels {
        teacher,
        student,
        round,
    })
}

/// Runs `rounds` further rounds from `globals`. Round indices continue from
/// `globals.round`, so generator streams never repeat across warm starts.
pub fn run_rounds(
    fed: &Federation,
    globals: GlobalModels,
    rounds: usize,
    active_round: Option<usize>,
    observer: &mut RoundObserver<'_>,
) -> Result<(GlobalModels, Vec<RunRecord>)> {
    fed.validate()?;
    let ctx = fed.context();
    let mut globals = globals;
    let mut records = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let round = globals.round + 1;
        let start = Instant::now();
        let step = || -> Result<(GlobalModels, RunRecord)> {
            let current = &globals;
            let results = exec::map_range(fed.config.execution, fed.clients.len(), |k| {
                let mut r = rng::stream(fed.seed, Purpose::Client, k as u32, round as u32);
                client_update(k, &fed.clients[k], current, &ctx, &mut r)
            });
            let updates = results.into_iter().collect::<Result<Vec<_>>>()?;
            let next = aggregate(fed, round, &updates)?;
            if !next.is_finite() {
                return Err(Error::NonFinite {
                    op: "aggregated broadcast models".into(),
                });
            }
            let server = evaluate_globals(fed, &next)?;
            let record = RunRecord {
                round,
                per_client: updates
                    .iter()
                    .map(|u| ClientRecord {
                        id: u.id,
                        n: u.n,
                        map_log_joint: u.map_log_joint,
                        local_epochs: ctx.epochs,
                    })
                    .collect(),
                server,
                wall_ms: start.elapsed().as_millis() as u64,
                active_round,
            };
            Ok((next, record))
        };
        let (next, record) = step().map_err(|e| e.in_round(round))?;
        observer(&record, &next)?;
        globals = next;
        records.push(record);
    }
    Ok((globals, records))
}

/// `config.rounds` rounds from the initial broadcast.
pub fn run_federated(fed: &Federation) -> Result<(GlobalModels, Vec<RunRecord>)> {
    run_rounds(fed, initial_globals(fed), fed.config.rounds, None, &mut |_, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;
    use crate::model::Role;

    fn tiny(aggregator: Aggregator, mode: ClientMode, clients: usize) -> Federation {
        let ds = gen_synthetic(3, 4, 40, 0.5, 9).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let per = 30;
        let parts: Vec<Dataset> = (0..clients).map(|k| ds.subset(&idx[k * per..(k + 1) * per])).collect();
        Federation {
            teacher_spec: ModelSpec::new(4, vec![8], 3, Role::Teacher).unwrap(),
            student_spec: ModelSpec::new(4, vec![8], 3, Role::Student).unwrap(),
            teacher_prior: PriorHyper { precision: 1e-4 },
            sgld: SgldConfig {
                burn_in: 2,
                batch_size: 10,
                step_size: 1e-3,
                ..SgldConfig::default()
            },
            distill: DistillConfig::default(),
            config: FederationConfig {
                rounds: 2,
                local_epochs: 2,
                aggregator,
                client_mode: mode,
                ensemble_samples: 2,
                server_epochs: 2,
                ..FederationConfig::default()
            },
            clients: parts,
            server_unlabeled: ds.unlabeled(&idx[100..120]),
            test: ds.subset(&idx[90..]),
            seed: 3,
            bins: 10,
        }
    }

    #[test]
    fn zero_rounds_returns_initial_models() {
        let mut fed = tiny(Aggregator::Average, ClientMode::Fedppd, 2);
        fed.config.rounds = 0;
        let (g, recs) = run_federated(&fed).unwrap();
        assert_eq!(g, initial_globals(&fed));
        assert!(recs.is_empty());
    }

    #[test]
    fn single_client_average_passes_through() {
        let fed = tiny(Aggregator::Average, ClientMode::Fedppd, 1);
        let g0 = initial_globals(&fed);
        let mut r = rng::stream(fed.seed, Purpose::Client, 0, 1);
        let u = client_update(0, &fed.clients[0], &g0, &fed.context(), &mut r).unwrap();
        let (g1, recs) = run_rounds(&fed, g0, 1, None, &mut |_, _| Ok(())).unwrap();
        assert_eq!(g1.teacher, u.teacher);
        assert_eq!(g1.student, u.student);
        assert_eq!(recs[0].per_client[0].map_log_joint, u.map_log_joint);
    }

    #[test]
    fn schedules_agree_and_records_are_complete() {
        for (agg, mode) in [
            (Aggregator::Average, ClientMode::Fedppd),
            (Aggregator::Distill, ClientMode::Fedppd),
            (Aggregator::Distill, ClientMode::Fedavg),
        ] {
            let mut fed = tiny(agg, mode, 3);
            let par = run_federated(&fed).unwrap();
            fed.config.execution = exec::Execution::Sequential;
            let seq = run_federated(&fed).unwrap();
            assert_eq!(par.0, seq.0);
            let strip = |rs: &[RunRecord]| rs.iter().map(RunRecord::without_timing).collect::<Vec<_>>();
            assert_eq!(strip(&par.1), strip(&seq.1));
            assert_eq!(par.1.len(), 2);
            assert_eq!(par.1[1].round, 2);
            assert_eq!(par.1[0].per_client.len(), 3);
            assert_eq!(par.0.student.is_some(), mode == ClientMode::Fedppd);
        }
    }

    #[test]
    fn distill_without_samples_or_epochs_matches_average() {
        let mut fed = tiny(Aggregator::Distill, ClientMode::Fedppd, 3);
        fed.config.ensemble_samples = 0;
        fed.config.server_epochs = 0;
        fed.config.rounds = 1;
        let distilled = run_federated(&fed).unwrap().0;
        fed.config.aggregator = Aggregator::Average;
        let averaged = run_federated(&fed).unwrap().0;
        assert_eq!(distilled, averaged);
    }

    #[test]
    fn client_failure_is_reported_with_context() {
        let mut fed = tiny(Aggregator::Average, ClientMode::Fedppd, 2);
        fed.clients[1].features.data_mut()[0] = f64::NAN;
        let err = run_federated(&fed).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("round 1: client 1:"), "{msg}");
        assert_eq!(err.exit_code(), 4);
    }
}
