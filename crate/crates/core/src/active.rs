//! Pool-based federated active learning.
//!
//! Every client splits its data into a labeled pool `L_i` and an unlabeled
//! pool `U_i` whose labels stay hidden until acquisition. Each active round
//! scores `U_i` with the served global model, moves the top `B` inputs (with
//! their oracle labels) into `L_i`, and continues federated training from the
//! current global models.

use std::cmp::Ordering;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::federation::{self, Federation, GlobalModels, RunRecord};
use crate::json;
use crate::metrics::{self, EvalBatch};
use crate::rng::{self, Purpose};

/// `−Σ p log p` in nats, with `0·log 0 = 0`.
pub fn predictive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

/// Indices of the `b` highest scores, ties going to the lower index,
/// returned in ascending index order. `b` beyond the pool takes everything.
pub fn select_batch(scores: &[f64], b: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(b);
    order.sort_unstable();
    order
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Entropy,
    Random,
}

impl Acquisition {
    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Entropy => "entropy",
            Acquisition::Random => "random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveConfig {
    /// Active rounds `A`.
    pub rounds: usize,
    /// Acquisitions per client per active round `B`.
    pub budget: usize,
    pub acquisition: Acquisition,
    /// Initial `|L_i|`; the rest of the client's data starts in `U_i`.
    pub initial_labeled: usize,
    /// Federated rounds run before the first acquisition and after each one.
    pub rounds_per_active: usize,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            budget: 25,
            acquisition: Acquisition::Entropy,
            initial_labeled: 50,
            rounds_per_active: 5,
        }
    }
}

impl ActiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_labeled == 0 {
            return Err(Error::Config("active.initial_labeled must be >= 1".into()));
        }
        Ok(())
    }
}

/// One client's labeled/unlabeled split, as indices into its dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientPools {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    /// Dataset indices acquired in each active round.
    pub history: Vec<Vec<usize>>,
    total: usize,
}

impl ClientPools {
    /// Shuffles `0..n` and puts the first `initial` into the labeled pool.
    pub fn new(n: usize, initial: usize, rng: &mut rng::Rng) -> Result<Self> {
        if initial == 0 || initial > n {
            return Err(Error::Argument(format!(
                "initial labeled size {initial} must lie in 1..={n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let unlabeled = order.split_off(initial);
        Ok(Self {
            labeled: order,
            unlabeled,
            history: Vec::new(),
            total: n,
        })
    }

    /// Moves the entries at `positions` (indices into `unlabeled`) to `labeled`.
    pub fn acquire(&mut self, positions: &[usize]) -> Result<Vec<usize>> {
        let mut taken = vec![false; self.unlabeled.len()];
        for &p in positions {
            if p >= taken.len() || taken[p] {
                return Err(Error::Argument(format!("invalid acquisition position {p}")));
            }
            taken[p] = true;
        }
        let moved: Vec<usize> = positions.iter().map(|&p| self.unlabeled[p]).collect();
        let mut keep = Vec::with_capacity(self.unlabeled.len() - moved.len());
        for (p, &i) in self.unlabeled.iter().enumerate() {
            if !taken[p] {
                keep.push(i);
            }
        }
        self.unlabeled = keep;
        self.labeled.extend_from_slice(&moved);
        self.history.push(moved.clone());
        self.check()?;
        Ok(moved)
    }

    /// Disjointness and conservation of the two pools.
    pub fn check(&self) -> Result<()> {
        if self.labeled.len() + self.unlabeled.len() != self.total {
            return Err(Error::Protocol("active pools lost or gained samples".into()));
        }
        let mut seen = vec![false; self.total];
        for &i in self.labeled.iter().chain(&self.unlabeled) {
            if i >= self.total || seen[i] {
                return Err(Error::Protocol(format!("sample {i} appears in both pools")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub active_round: usize,
    #[serde(serialize_with = "json::f64_17")]
    pub labeled_per_client: f64,
    pub acquisition: Acquisition,
    pub seed: u64,
    #[serde(serialize_with = "json::f64_17")]
    pub test_accuracy: f64,
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("active_round,labeled_per_client,acquisition,seed,test_accuracy\n");
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.active_round,
            p.labeled_per_client,
            p.acquisition.name(),
            p.seed,
            json::fmt17(p.test_accuracy)
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct ActiveOutcome {
    pub curve: Vec<CurvePoint>,
    pub records: Vec<RunRecord>,
    pub globals: GlobalModels,
    pub pools: Vec<ClientPools>,
}

/// Runs the loop on `template`, whose clients hold each client's full data.
pub fn run_active_loop(
    template: &Federation,
    cfg: &ActiveConfig,
    observer: &mut federation::RoundObserver<'_>,
) -> Result<ActiveOutcome> {
    cfg.validate()?;
    let full = &template.clients;
    let mut pools = full
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let mut r = rng::stream(template.seed, Purpose::Active, k as u32, 0);
            ClientPools::new(d.len(), cfg.initial_labeled, &mut r).map_err(|e| e.in_client(k))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut fed = template.clone();
    let mut globals = federation::initial_globals(&fed);
    let mut records = Vec::new();
    let mut curve = Vec::new();

    for a in 0..=cfg.rounds {
        if a > 0 {
            if pools.iter().all(|p| p.unlabeled.is_empty()) {
                break;
            }
            let served = &globals;
            let fed_ref = &fed;
            let picks = exec::map_range(template.config.execution, full.len(), |k| -> Result<Vec<usize>> {
                let pool = &pools[k];
                let b = cfg.budget.min(pool.unlabeled.len());
                match cfg.acquisition {
                    Acquisition::Random => {
                        let mut r = rng::stream(template.seed, Purpose::Active, k as u32, a as u32);
                        let mut pos = index::sample(&mut r, pool.unlabeled.len(), b).into_vec();
                        pos.sort_unstable();
                        Ok(pos)
                    }
                    Acquisition::Entropy => {
                        let inputs = full[k].unlabeled(&pool.unlabeled);
                        let probs = fed_ref.served_proba(served, &inputs)?;
                        let scores: Vec<f64> = probs.row_iter().map(predictive_entropy).collect();
                        Ok(select_batch(&scores, b))
                    }
                }
            });
            for (k, pick) in picks.into_iter().enumerate() {
                let pick = pick.map_err(|e| e.in_client(k))?;
                pools[k].acquire(&pick).map_err(|e| e.in_client(k))?;
            }
        }
        fed.clients = full
            .iter()
            .zip(&pools)
            .map(|(d, p)| d.subset(&p.labeled))
            .collect::<Vec<Dataset>>();
        let (next, recs) = federation::run_rounds(&fed, globals, cfg.rounds_per_active, Some(a), observer)?;
        globals = next;
        records.extend(recs);

        let probs = fed.served_proba(&globals, &fed.test.features)?;
        let acc = metrics::accuracy(&EvalBatch::new(probs, fed.test.labels.clone())?);
        let labeled: usize = pools.iter().map(|p| p.labeled.len()).sum();
        curve.push(CurvePoint {
            active_round: a,
            labeled_per_client: labeled as f64 / pools.len() as f64,
            acquisition: cfg.acquisition,
            seed: template.seed,
            test_accuracy: acc,
        });
    }
    Ok(ActiveOutcome {
        curve,
        records,
        globals,
        pools,
    })
}
