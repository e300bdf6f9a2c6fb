//! End-to-end pipelines behind the CLI subcommands. Each takes a validated
//! config and an output directory; nothing is written outside that directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::active::{self, ActiveOutcome};
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{self, Dataset, OodStrategy, PartitionPlan, PartitionRequest, Standardizer};
use crate::error::{Error, Result};
use crate::federation::{self, Federation, GlobalModels, RunRecord};
use crate::metrics::{self, EvalBatch, MetricsReport};
use crate::model::{self, ModelSpec, ParamVector, PriorHyper, Role};
use crate::rng::{self, Purpose};

/// Data ready for a federated run.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Standardized training pool that the partition indexes into.
    pub pool: Dataset,
    /// In-distribution test set.
    pub test: Dataset,
    pub ood: Option<Dataset>,
    pub plan: PartitionPlan,
}

/// Loads the raw pool and test split, standardized with pool statistics.
fn load_source(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    match d.source {
        DataSource::Synthetic => {
            let train = data::gen_synthetic_raw(
                d.classes,
                d.dim,
                d.train_per_class,
                d.spread,
                &mut rng::stream(cfg.seed, Purpose::TrainData, 0, 0),
            )?;
            let test = data::gen_synthetic_raw(
                d.classes,
                d.dim,
                d.test_per_class,
                d.spread,
                &mut rng::stream(cfg.seed, Purpose::TestData, 0, 0),
            )?;
            Ok(train.standardize_with_test(test))
        }
        DataSource::Csv => {
            let path = d.path.as_deref().expect("validated");
            let pool = data::read_csv(path)?;
            let (pool, test) = match &d.test_path {
                Some(tp) => (pool, data::read_csv(tp)?),
                None => {
                    let n_test = d.test_size.unwrap_or(pool.len() / 5);
                    if n_test == 0 || n_test >= pool.len() {
                        return Err(Error::Config(format!(
                            "dataset.test_size {n_test} must lie in 1..{}",
                            pool.len()
                        )));
                    }
                    let mut idx: Vec<usize> = (0..pool.len()).collect();
                    idx.shuffle(&mut rng::stream(cfg.seed, Purpose::Partition, 1, 0));
                    let (t, p) = idx.split_at(n_test);
                    (pool.subset(p), pool.subset(t))
                }
            };
            if test.dim() != pool.dim() {
                return Err(Error::Format(format!(
                    "test split has {} features, pool has {}",
                    test.dim(),
                    pool.dim()
                )));
            }
            let classes = pool.classes.max(test.classes);
            let (mut pool, mut test) = pool.standardize_with_test(test);
            pool.classes = classes;
            test.classes = classes;
            Ok((pool, test))
        }
        DataSource::Mnist => {
            let dir = d.mnist_dir.as_deref().expect("validated");
            let mut pool = data::load_idx_unstandardized(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let mut test = data::load_idx_unstandardized(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            let st = Standardizer::fit_global(&pool.features);
            pool.features = st.apply(&pool.features);
            test.features = st.apply(&test.features);
            pool.standardizer = Some(st.clone());
            test.standardizer = Some(st);
            Ok((pool, test))
        }
    }
}

/// Loads data, resolves computed defaults in `cfg`, and partitions the pool.
pub fn prepare(cfg: &mut ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (pool, test) = load_source(cfg)?;
    cfg.resolve(pool.len());
    let d = &cfg.dataset;

    let held_out = match &cfg.eval.ood {
        Some(OodStrategy::HeldOutClasses { classes }) => classes.clone(),
        _ => Vec::new(),
    };
    let mut req = PartitionRequest::new(
        d.partition.clone(),
        vec![d.client_size; d.clients],
        d.server_unlabeled.expect("resolved"),
        rng::derive_seed(cfg.seed, Purpose::Partition),
    );
    req.major_share = d.major_share;
    req.exclude_classes = held_out;
    let plan = data::partition(&pool, &req).map_err(|e| match e {
        Error::Argument(m) => Error::Config(format!("dataset does not fit the partition: {m}")),
        other => other,
    })?;

    let (test, ood) = match &cfg.eval.ood {
        Some(strategy) => {
            let (i, o) = data::make_ood_pair(&test, strategy)
                .map_err(|e| Error::Config(format!("eval.ood: {e}")))?;
            (i, Some(o))
        }
        None => (test, None),
    };
    Ok(Prepared { pool, test, ood, plan })
}

pub fn build_federation(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Federation> {
    let dim = prep.pool.dim();
    let classes = prep.pool.classes;
    let teacher_spec = ModelSpec::new(dim, cfg.model.teacher_hidden.clone(), classes, Role::Teacher)?;
    let student_spec = ModelSpec::new(dim, cfg.model.student_hidden.clone(), classes, Role::Student)?;
    Ok(Federation {
        teacher_spec,
        student_spec,
        teacher_prior: PriorHyper::new(cfg.model.teacher_prior_precision)?,
        sgld: cfg.sgld.clone(),
        distill: cfg.distill.clone(),
        config: cfg.federation.clone(),
        clients: prep.plan.clients.iter().map(|ix| prep.pool.subset(ix)).collect(),
        server_unlabeled: prep.pool.unlabeled(&prep.plan.server_unlabeled),
        test: prep.test.clone(),
        seed: cfg.seed,
        bins: cfg.eval.bins,
    })
}

/// Full evaluation report of one model. OOD resampling uses a fixed stream,
/// so teacher and student are compared on the same subsamples.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    spec: &ModelSpec,
    params: &ParamVector,
    test: &Dataset,
    ood: Option<&Dataset>,
    bins: usize,
    repeats: usize,
    seed: u64,
) -> Result<MetricsReport> {
    let probs = model::predict_proba(spec, params, &test.features)?;
    let ood_result = match ood {
        Some(o) => {
            let ood_probs = model::predict_proba(spec, params, &o.features)?;
            let mut r = rng::stream(seed, Purpose::Ood, 0, 0);
            Some(metrics::ood_eval(&probs, &ood_probs, repeats, &mut r)?)
        }
        None => None,
    };
    let batch = EvalBatch::new(probs, test.labels.clone())?;
    Ok(MetricsReport::compute(&batch, bins, ood_result, repeats))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Which model clients are served: `student` in fedppd mode.
    pub served: &'static str,
    pub teacher: MetricsReport,
    pub student: Option<MetricsReport>,
}

impl RunMetrics {
    pub fn served_report(&self) -> &MetricsReport {
        self.student.as_ref().unwrap_or(&self.teacher)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn evaluate_run(cfg: &ExperimentConfig, fed: &Federation, prep: &Prepared, g: &GlobalModels) -> Result<RunMetrics> {
    let eval = |spec: &ModelSpec, p: &ParamVector| {
        evaluate_model(spec, p, &prep.test, prep.ood.as_ref(), cfg.eval.bins, cfg.eval.ood_repeats, cfg.seed)
    };
    let teacher = eval(&fed.teacher_spec, &g.teacher)?;
    let student = g.student.as_ref().map(|w| eval(&fed.student_spec, w)).transpose()?;
    Ok(RunMetrics {
        served: if student.is_some() { "student" } else { "teacher" },
        teacher,
        student,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Appends records to `records.jsonl` and writes periodic checkpoints.
struct RunWriter {
    dir: PathBuf,
    records: BufWriter<File>,
    path: PathBuf,
    checkpoint_every: usize,
}

impl RunWriter {
    fn create(dir: &Path, checkpoint_every: usize) -> Result<Self> {
        let path = dir.join("records.jsonl");
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            records: BufWriter::new(file),
            path,
            checkpoint_every,
        })
    }

    fn observe(&mut self, fed: &Federation, record: &RunRecord, g: &GlobalModels) -> Result<()> {
        writeln!(self.records, "{}", record.to_json_line()?).map_err(|e| Error::io(&self.path, e))?;
        if self.checkpoint_every > 0 && record.round % self.checkpoint_every == 0 {
            let dir = self.dir.join("checkpoints");
            create_dir(&dir)?;
            write_globals(&dir, &format!("round_{:04}_", record.round), fed, g)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.records.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn write_globals(dir: &Path, prefix: &str, fed: &Federation, g: &GlobalModels) -> Result<()> {
    model::save_checkpoint(&dir.join(format!("{prefix}teacher.json")), &fed.teacher_spec, &g.teacher)?;
    if let Some(w) = &g.student {
        model::save_checkpoint(&dir.join(format!("{prefix}student.json")), &fed.student_spec, w)?;
    }
    Ok(())
}

fn write_resolved(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    write(&out.join("config.resolved.toml"), cfg.to_toml()?)
}

/// Writes `train.csv`, `test.csv`, optional `ood.csv`, `partition.json` and
/// the resolved config.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Prepared> {
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    create_dir(out)?;
    data::write_csv(&prep.pool, &out.join("train.csv"))?;
    data::write_csv(&prep.test, &out.join("test.csv"))?;
    if let Some(o) = &prep.ood {
        data::write_csv(o, &out.join("ood.csv"))?;
    }
    write(&out.join("partition.json"), prep.plan.to_json()?)?;
    write_resolved(out, &cfg)?;
    Ok(prep)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub globals: GlobalModels,
    pub records: Vec<RunRecord>,
    pub metrics: RunMetrics,
}

/// Trains in memory without writing anything.
pub fn train_in_memory(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    let fed = build_federation(&cfg, &prep)?;
    let (globals, records) = federation::run_federated(&fed)?;
    let metrics = evaluate_run(&cfg, &fed, &prep, &globals)?;
    Ok(TrainOutcome {
        globals,
        records,
        metrics,
    })
}

/// Writes the resolved config, `records.jsonl`, checkpoints and
/// `metrics.json`/`metrics.csv` (for the served model).
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    let fed = build_federation(&cfg, &prep)?;
    create_dir(out)?;
    write_resolved(out, &cfg)?;
    write(&out.join("partition.json"), prep.plan.to_json()?)?;
    let mut writer = RunWriter::create(out, cfg.federation.checkpoint_every)?;
    let g0 = federation::initial_globals(&fed);
    let (globals, records) = federation::run_rounds(&fed, g0, cfg.federation.rounds, None, &mut |r, g| {
        writer.observe(&fed, r, g)
    })?;
    writer.finish()?;
    write_globals(out, "", &fed, &globals)?;
    let metrics = evaluate_run(&cfg, &fed, &prep, &globals)?;
    write(&out.join("metrics.json"), metrics.to_json()?)?;
    write(&out.join("metrics.csv"), metrics.served_report().to_csv())?;
    Ok(TrainOutcome {
        globals,
        records,
        metrics,
    })
}

pub fn active_in_memory(cfg: &ExperimentConfig) -> Result<ActiveOutcome> {
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    let fed = build_federation(&cfg, &prep)?;
    active::run_active_loop(&fed, &cfg.active, &mut |_, _| Ok(()))
}

/// Writes the resolved config, `records.jsonl`, `active_curve.csv`, final
/// checkpoints and `metrics.json`.
pub fn active(cfg: &ExperimentConfig, out: &Path) -> Result<ActiveOutcome> {
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    let fed = build_federation(&cfg, &prep)?;
    create_dir(out)?;
    write_resolved(out, &cfg)?;
    write(&out.join("partition.json"), prep.plan.to_json()?)?;
    let mut writer = RunWriter::create(out, cfg.federation.checkpoint_every)?;
    let outcome = active::run_active_loop(&fed, &cfg.active, &mut |r, g| writer.observe(&fed, r, g))?;
    writer.finish()?;
    write(&out.join("active_curve.csv"), active::curve_to_csv(&outcome.curve))?;
    write_globals(out, "", &fed, &outcome.globals)?;
    let metrics = evaluate_run(&cfg, &fed, &prep, &outcome.globals)?;
    write(&out.join("metrics.json"), metrics.to_json()?)?;
    Ok(outcome)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Test,
    /// The union of all client training data.
    Train,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Train => "train",
        }
    }
}

/// Evaluates a checkpoint on a split of the configured dataset and writes
/// `eval_<split>.json`. The checkpoint is loaded before anything is written.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, split: Split, out: &Path) -> Result<MetricsReport> {
    let (spec, params) = model::load_checkpoint(checkpoint)?;
    let mut cfg = cfg.clone();
    let prep = prepare(&mut cfg)?;
    if spec.input_dim != prep.pool.dim() || spec.classes != prep.pool.classes {
        return Err(Error::Format(format!(
            "checkpoint expects {} features and {} classes; dataset has {} and {}",
            spec.input_dim,
            spec.classes,
            prep.pool.dim(),
            prep.pool.classes
        )));
    }
    let report = match split {
        Split::Test => evaluate_model(
            &spec,
            &params,
            &prep.test,
            prep.ood.as_ref(),
            cfg.eval.bins,
            cfg.eval.ood_repeats,
            cfg.seed,
        )?,
        Split::Train => {
            let all: Vec<usize> = prep.plan.clients.concat();
            let train = prep.pool.subset(&all);
            evaluate_model(&spec, &params, &train, None, cfg.eval.bins, cfg.eval.ood_repeats, cfg.seed)?
        }
    };
    create_dir(out)?;
    write(&out.join(format!("eval_{}.json", split.name())), report.to_json()?)?;
    Ok(report)
}
