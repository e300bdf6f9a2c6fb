//! Client partitioning.
//!
//! `label_skew(m)`: every client gets `m` major classes, assigned by walking
//! a shuffled class order cyclically so that majors are spread evenly. At
//! least `major_share` (default 0.9) of its samples come from its majors,
//! split as evenly as possible; the rest are drawn class-uniformly. The server
//! unlabeled set is drawn uniformly from whatever remains.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum PartitionMode {
    Iid,
    LabelSkew { major_classes: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionRequest {
    pub mode: PartitionMode,
    pub client_sizes: Vec<usize>,
    pub server_unlabeled: usize,
    /// Carved from the pool before anything else; 0 when the source ships a
    /// separate test split.
    pub test: usize,
    pub exclude_classes: Vec<usize>,
    pub major_share: f64,
    pub seed: u64,
}

impl PartitionRequest {
    pub fn new(mode: PartitionMode, client_sizes: Vec<usize>, server_unlabeled: usize, seed: u64) -> Self {
        Self {
            mode,
            client_sizes,
            server_unlabeled,
            test: 0,
            exclude_classes: Vec::new(),
            major_share: 0.9,
            seed,
        }
    }
}

/// Index lists into the partitioned dataset. All lists are disjoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub clients: Vec<Vec<usize>>,
    /// Client `k`'s major classes (empty for IID).
    pub major_classes: Vec<Vec<usize>>,
    pub server_unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

impl PartitionPlan {
    /// Disjointness, index range, and non-empty clients.
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        let mut seen = vec![false; pool_size];
        let lists = self
            .clients
            .iter()
            .chain(std::iter::once(&self.server_unlabeled))
            .chain(std::iter::once(&self.test));
        for list in lists {
            for &i in list {
                if i >= pool_size {
                    return Err(Error::Argument(format!("index {i} outside pool of {pool_size}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Argument(format!("index {i} assigned twice")));
                }
            }
        }
        if let Some(k) = self.clients.iter().position(Vec::is_empty) {
            return Err(Error::Argument(format!("client {k} received no samples")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("partition plan: {e}")))
    }
}

pub fn partition(ds: &Dataset, req: &PartitionRequest) -> Result<PartitionPlan> {
    if req.client_sizes.is_empty() {
        return Err(Error::Argument("need at least one client".into()));
    }
    if req.client_sizes.contains(&0) {
        return Err(Error::Argument("every client needs at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&req.major_share) {
        return Err(Error::Argument("major_share must lie in [0, 1]".into()));
    }
    if let Some(&c) = req.exclude_classes.iter().find(|&&c| c >= ds.classes) {
        return Err(Error::Argument(format!("excluded class {c} does not exist")));
    }
    let available: Vec<usize> = (0..ds.classes)
        .filter(|c| !req.exclude_classes.contains(c))
        .collect();
    if available.is_empty() {
        return Err(Error::Argument("every class is excluded".into()));
    }
    let mut r = rng::from_seed(req.seed);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        if !req.exclude_classes.contains(&y) {
            pools[y].push(i);
        }
    }
    for p in &mut pools {
        p.shuffle(&mut r);
    }

    let usable: usize = pools.iter().map(Vec::len).sum();
    let demand = req.client_sizes.iter().sum::<usize>() + req.server_unlabeled + req.test;
    if demand > usable {
        return Err(Error::Argument(format!(
            "partition needs {demand} samples but only {usable} are usable (short by {})",
            demand - usable
        )));
    }

    let test = draw_uniform(&mut pools, req.test, &mut r);

    let (clients, majors) = match &req.mode {
        PartitionMode::Iid => {
            let clients = req
                .client_sizes
                .iter()
                .map(|&s| draw_uniform(&mut pools, s, &mut r))
                .collect();
            (clients, vec![Vec::new(); req.client_sizes.len()])
        }
        PartitionMode::LabelSkew { major_classes } => {
            label_skew(&mut pools, &available, *major_classes, req, &mut r)?
        }
    };

    let server_unlabeled = draw_uniform(&mut pools, req.server_unlabeled, &mut r);
    let plan = PartitionPlan {
        clients,
        major_classes: majors,
        server_unlabeled,
        test,
    };
    plan.validate(ds.len())?;
    Ok(plan)
}

/// Draws `count` indices, choosing a non-empty class uniformly for each.
/// Caller guarantees enough samples remain.
fn draw_uniform<R: Rng>(pools: &mut [Vec<usize>], count: usize, r: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let nonempty: Vec<usize> = (0..pools.len()).filter(|&c| !pools[c].is_empty()).collect();
        let Some(&c) = nonempty.get(r.random_range(0..nonempty.len().max(1))) else {
            break;
        };
        out.push(pools[c].pop().expect("non-empty pool"));
    }
    out
}

type Assignment = (Vec<Vec<usize>>, Vec<Vec<usize>>);

fn label_skew<R: Rng>(
    pools: &mut [Vec<usize>],
    available: &[usize],
    m: usize,
    req: &PartitionRequest,
    r: &mut R,
) -> Result<Assignment> {
    if m == 0 || m > available.len() {
        return Err(Error::Argument(format!(
            "label_skew needs 1..={} major classes, got {m}",
            available.len()
        )));
    }
    let mut order = available.to_vec();
    order.shuffle(r);
    let k = req.client_sizes.len();
    let majors: Vec<Vec<usize>> = (0..k)
        .map(|client| (0..m).map(|j| order[(client * m + j) % order.len()]).collect())
        .collect();

    // check major demand per class up front so the error names the shortfall
    let mut need = vec![0usize; pools.len()];
    let mut quotas = Vec::with_capacity(k);
    for (client, &size) in req.client_sizes.iter().enumerate() {
        let major_total = ((size as f64) * req.major_share).ceil() as usize;
        let major_total = major_total.min(size);
        let q: Vec<usize> = (0..m)
            .map(|j| major_total / m + usize::from(j < major_total % m))
            .collect();
        for (&c, &n) in majors[client].iter().zip(&q) {
            need[c] += n;
        }
        quotas.push((q, size - major_total));
    }
    for (c, (&n, pool)) in need.iter().zip(pools.iter()).enumerate() {
        if n > pool.len() {
            return Err(Error::Argument(format!(
                "class {c} is a major class needing {n} samples but has {} (short by {})",
                pool.len(),
                n - pool.len()
            )));
        }
    }

    let mut clients: Vec<Vec<usize>> = Vec::with_capacity(k);
    for (client, (q, _)) in quotas.iter().enumerate() {
        let mut idx = Vec::with_capacity(req.client_sizes[client]);
        for (&c, &n) in majors[client].iter().zip(q) {
            let at = pools[c].len() - n;
            idx.extend(pools[c].drain(at..));
        }
        clients.push(idx);
    }
    for (client, (_, rest)) in quotas.iter().enumerate() {
        let extra = draw_uniform(pools, *rest, r);
        clients[client].extend(extra);
        clients[client].shuffle(r);
    }
    Ok((clients, majors))
}
