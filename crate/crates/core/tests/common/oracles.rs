//! Brute-force metric oracles. Each `check_*` panics on the first mismatch.

use super::random_distributions;
use fedppd::metrics::{accuracy, auroc, brier, ece_mce, ood_eval, EvalBatch};
use fedppd::rng;
use fedppd::tensor::Matrix;
use rand::Rng;

pub fn random_batch(seed: u64, rows: usize, classes: usize) -> EvalBatch {
    let mut r = rng::from_seed(seed);
    // sharpen some rows so every confidence bin gets traffic
    let mut probs = random_distributions(&mut r, rows, classes);
    for row in 0..rows {
        if r.random_bool(0.3) {
            let k = r.random_range(0..classes);
            for c in 0..classes {
                probs.row_mut(row)[c] = if c == k { 1.0 } else { 0.0 };
            }
        }
    }
    let labels = (0..rows).map(|_| r.random_range(0..classes)).collect();
    EvalBatch::new(probs, labels).unwrap()
}

/// First index of the row maximum.
pub fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..row.len() {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

/// Bins by scanning every interval `((b-1)/B, b/B]` and comparing directly.
pub fn brute_ece_mce(batch: &EvalBatch, bins: usize) -> (f64, f64) {
    let n = batch.len() as f64;
    let (mut ece, mut mce) = (0.0f64, 0.0f64);
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let mut members = Vec::new();
        for (r, row) in batch.probs().row_iter().enumerate() {
            let conf = row[first_argmax(row)];
            let inside = if b == 0 { conf <= hi } else { conf > lo && conf <= hi };
            if inside {
                members.push((conf, first_argmax(row) == batch.labels()[r]));
            }
        }
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let conf = members.iter().map(|x| x.0).sum::<f64>() / m;
        let acc = members.iter().filter(|x| x.1).count() as f64 / m;
        ece += m / n * (acc - conf).abs();
        mce = mce.max((acc - conf).abs());
    }
    (ece, mce)
}

pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for q in neg {
            wins += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn check_random_batches() {
    for seed in 0..100 {
        let classes = 2 + (seed as usize % 9);
        let batch = random_batch(seed, 20 + seed as usize, classes);

        let direct_acc = batch
            .probs()
            .row_iter()
            .zip(batch.labels())
            .filter(|(row, &y)| first_argmax(row) == y)
            .count() as f64
            / batch.len() as f64;
        assert_eq!(accuracy(&batch), direct_acc, "seed {seed}");

        let (ece, mce) = ece_mce(&batch, 10);
        let (be, bm) = brute_ece_mce(&batch, 10);
        assert!((ece - be).abs() <= 1e-12 && (mce - bm).abs() <= 1e-12, "seed {seed}");
        assert!(mce >= ece && (0.0..=1.0).contains(&ece) && mce <= 1.0);

        let mut direct_brier = 0.0;
        for (row, &y) in batch.probs().row_iter().zip(batch.labels()) {
            for (c, &p) in row.iter().enumerate() {
                let t = f64::from(c == y);
                direct_brier += (p - t).powi(2);
            }
        }
        direct_brier /= batch.len() as f64;
        assert!((brier(&batch) - direct_brier).abs() <= 1e-12, "seed {seed}");

        let h = batch.entropies();
        let half = h.len() / 2;
        assert_eq!(auroc(&h[..half], &h[half..]).unwrap(), brute_auroc(&h[..half], &h[half..]));
        // quantized scores force ties
        let q: Vec<f64> = h.iter().map(|x| (x * 4.0).round()).collect();
        assert_eq!(auroc(&q[..half], &q[half..]).unwrap(), brute_auroc(&q[..half], &q[half..]));
    }
}

pub fn check_closed_forms() {
    for c in [2usize, 3, 10] {
        let probs = Matrix::filled(7, c, 1.0 / c as f64);
        let batch = EvalBatch::new(probs, (0..7).map(|i| i % c).collect()).unwrap();
        assert!((brier(&batch) - (c as f64 - 1.0) / c as f64).abs() <= 1e-15);
    }
    assert_eq!(auroc(&[0.3; 5], &[0.3; 4]).unwrap(), 0.5);
    assert_eq!(auroc(&[0.9, 0.4], &[0.5, 0.1]).unwrap(), 0.75);

    let uniform = Matrix::filled(30, 4, 0.25);
    let r = ood_eval(&uniform, &uniform, 5, &mut rng::from_seed(1)).unwrap();
    assert!(r.per_repeat.iter().all(|&a| a == 0.5));
}
