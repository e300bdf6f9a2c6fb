//! Accuracy, calibration, and entropy-based detection metrics.
//!
//! Confidence bins are equal-width over `(0, 1]`: bin `b` holds confidences in
//! `(b/B, (b+1)/B]` (a confidence of exactly 0 falls in bin 0). MCE only looks
//! at non-empty bins. Entropies are in nats.

use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::active::predictive_entropy;
use crate::error::{Error, Result};
use crate::json;
use crate::tensor::Matrix;

/// Probability rows with their true labels.
#[derive(Clone, Debug)]
pub struct EvalBatch {
    probs: Matrix,
    labels: Vec<usize>,
}

impl EvalBatch {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::Argument(format!(
                "{} probability rows but {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Argument("empty evaluation batch".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= probs.cols()) {
            return Err(Error::Argument(format!("label {y} out of range")));
        }
        Ok(Self { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn predicted(&self) -> Vec<usize> {
        self.probs.row_iter().map(argmax).collect()
    }

    pub fn confidence(&self) -> Vec<f64> {
        self.probs
            .row_iter()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn correct(&self) -> Vec<bool> {
        self.predicted()
            .into_iter()
            .zip(&self.labels)
            .map(|(p, &y)| p == y)
            .collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.probs.row_iter().map(predictive_entropy).collect()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(batch: &EvalBatch) -> f64 {
    let hits = batch.correct().into_iter().filter(|&c| c).count();
    hits as f64 / batch.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinStats {
    pub count: usize,
    #[serde(serialize_with = "json::f64_17")]
    pub mean_confidence: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub accuracy: f64,
}

/// Bin index of a confidence in `(0, 1]` under `bins` equal-width bins.
pub fn bin_index(confidence: f64, bins: usize) -> usize {
    let b = bins as f64;
    let mut i = ((confidence * b).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    // settle float rounding so membership agrees with the interval comparisons
    while i > 0 && confidence <= i as f64 / b {
        i -= 1;
    }
    while i + 1 < bins && confidence > (i + 1) as f64 / b {
        i += 1;
    }
    i
}

pub fn bin_stats(batch: &EvalBatch, bins: usize) -> Vec<BinStats> {
    let bins = bins.max(1);
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit = vec![0usize; bins];
    for (c, ok) in batch.confidence().into_iter().zip(batch.correct()) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit[b] += usize::from(ok);
    }
    (0..bins)
        .map(|b| BinStats {
            count: count[b],
            mean_confidence: if count[b] > 0 { conf_sum[b] / count[b] as f64 } else { 0.0 },
            accuracy: if count[b] > 0 { hit[b] as f64 / count[b] as f64 } else { 0.0 },
        })
        .collect()
}

/// `(ECE, MCE)` over equal-width confidence bins.
pub fn ece_mce(batch: &EvalBatch, bins: usize) -> (f64, f64) {
    let n = batch.len() as f64;
    let mut ece = 0.0;
    let mut mce: f64 = 0.0;
    for s in bin_stats(batch, bins).iter().filter(|s| s.count > 0) {
        let gap = (s.accuracy - s.mean_confidence).abs();
        ece += (s.count as f64 / n) * gap;
        mce = mce.max(gap);
    }
    (ece, mce)
}

/// Mean over rows of `Σ_c (p_c − 1[c = y])²`.
pub fn brier(batch: &EvalBatch) -> f64 {
    let mut total = 0.0;
    for (row, &y) in batch.probs.row_iter().zip(&batch.labels) {
        total += row
            .iter()
            .enumerate()
            .map(|(c, &p)| {
                let t = if c == y { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum::<f64>();
    }
    total / batch.len() as f64
}

/// Mann–Whitney AUROC: the fraction of (positive, negative) pairs where the
/// positive scores higher, ties counting one half. `O((n+m) log(n+m))` via
/// mid-ranks.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Argument(format!(
            "auroc needs both sets non-empty ({} positive, {} negative)",
            positive.len(),
            negative.len()
        )));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum keeps mid-ranks integral
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i+j+2)/2
        let twice_mid = (i + j + 2) as u64;
        let pos_in_group = all[i..=j].iter().filter(|e| e.1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let n = positive.len() as u64;
    let m = negative.len() as u64;
    // 2U = 2R − n(n+1)
    let twice_u = twice_rank_sum - n * (n + 1);
    Ok(twice_u as f64 / 2.0 / (n * m) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OodResult {
    #[serde(serialize_with = "json::f64_17")]
    pub mean: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub std: f64,
    #[serde(serialize_with = "json::vec_f64_17")]
    pub per_repeat: Vec<f64>,
    pub samples_per_side: usize,
}

/// Entropy-score OOD detection (OOD is the positive class). Each repeat
/// subsamples `min(|in|, |ood|)` rows from both sides without replacement.
/// `std` is the sample standard deviation over repeats (0 for one repeat).
pub fn ood_eval<R: Rng + ?Sized>(
    in_probs: &Matrix,
    ood_probs: &Matrix,
    repeats: usize,
    rng: &mut R,
) -> Result<OodResult> {
    if in_probs.rows() == 0 || ood_probs.rows() == 0 {
        return Err(Error::Argument("ood_eval needs non-empty sets".into()));
    }
    if repeats == 0 {
        return Err(Error::Argument("ood_eval needs at least one repeat".into()));
    }
    let h_in: Vec<f64> = in_probs.row_iter().map(predictive_entropy).collect();
    let h_out: Vec<f64> = ood_probs.row_iter().map(predictive_entropy).collect();
    let k = h_in.len().min(h_out.len());
    let mut per_repeat = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let pick = |h: &[f64], rng: &mut R| -> Vec<f64> {
            let mut idx = index::sample(rng, h.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| h[i]).collect()
        };
        let neg = pick(&h_in, rng);
        let pos = pick(&h_out, rng);
        per_repeat.push(auroc(&pos, &neg)?);
    }
    let (mean, std) = mean_std(&per_repeat);
    Ok(OodResult {
        mean,
        std,
        per_repeat,
        samples_per_side: k,
    })
}

/// AUROC for telling correct from incorrect predictions by low entropy.
/// `None` when every prediction is right or every prediction is wrong.
pub fn correctness_auroc(batch: &EvalBatch) -> Option<f64> {
    let mut correct = Vec::new();
    let mut wrong = Vec::new();
    for (h, ok) in batch.entropies().into_iter().zip(batch.correct()) {
        if ok {
            correct.push(-h);
        } else {
            wrong.push(-h);
        }
    }
    auroc(&correct, &wrong).ok()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Self-describing evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub samples: usize,
    #[serde(serialize_with = "json::f64_17")]
    pub accuracy: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub ece: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub mce: f64,
    #[serde(serialize_with = "json::f64_17")]
    pub brier: f64,
    pub bins: usize,
    pub bin_stats: Vec<BinStats>,
    #[serde(serialize_with = "json::opt_f64_17")]
    pub correctness_auroc: Option<f64>,
    pub ood: Option<OodResult>,
    pub ood_repeats: usize,
}

impl MetricsReport {
    pub fn compute(batch: &EvalBatch, bins: usize, ood: Option<OodResult>, ood_repeats: usize) -> Self {
        let (ece, mce) = ece_mce(batch, bins);
        Self {
            samples: batch.len(),
            accuracy: accuracy(batch),
            ece,
            mce,
            brier: brier(batch),
            bins,
            bin_stats: bin_stats(batch, bins),
            correctness_auroc: correctness_auroc(batch),
            ood,
            ood_repeats,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// `metric,value` rows; undefined values are left empty.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(json::fmt17).unwrap_or_default();
        let mut rows = vec![
            ("samples".to_string(), self.samples.to_string()),
            ("accuracy".into(), json::fmt17(self.accuracy)),
            ("ece".into(), json::fmt17(self.ece)),
            ("mce".into(), json::fmt17(self.mce)),
            ("brier".into(), json::fmt17(self.brier)),
            ("bins".into(), self.bins.to_string()),
            ("correctness_auroc".into(), opt(self.correctness_auroc)),
        ];
        rows.push(("ood_auroc_mean".into(), opt(self.ood.as_ref().map(|o| o.mean))));
        rows.push(("ood_auroc_std".into(), opt(self.ood.as_ref().map(|o| o.std))));
        rows.push(("ood_repeats".into(), self.ood_repeats.to_string()));
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            out.push_str(&format!("{k},{v}\n"));
        }
        out
    }
}
