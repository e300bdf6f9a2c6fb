use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OodStrategy {
    /// The in-distribution test set translated by `offset` (raw feature units).
    ShiftedBlobs { offset: f64 },
    /// Test samples of these classes form the OOD set; training never sees them.
    HeldOutClasses { classes: Vec<usize> },
}

/// Unit direction of the blob shift in raw feature space.
///
/// When the class means do not span every coordinate the shift goes along
/// the first unused axis, orthogonal to all means. Otherwise it points along
/// the all-ones diagonal.
pub fn shift_direction(dim: usize, classes: usize) -> Vec<f64> {
    let used = if dim >= classes { classes } else { dim.min(2) };
    let mut u = vec![0.0; dim];
    if used < dim {
        u[used] = 1.0;
    } else {
        let v = 1.0 / (dim as f64).sqrt();
        u.iter_mut().for_each(|x| *x = v);
    }
    u
}

/// Splits `test` into `(in-distribution, out-of-distribution)` sets.
pub fn make_ood_pair(test: &Dataset, strategy: &OodStrategy) -> Result<(Dataset, Dataset)> {
    match strategy {
        OodStrategy::ShiftedBlobs { offset } => {
            if !offset.is_finite() {
                return Err(Error::Argument("ood offset must be finite".into()));
            }
            let dir = shift_direction(test.dim(), test.classes);
            let ones = vec![1.0; test.dim()];
            let scale = test.standardizer.as_ref().map_or(&ones, |s| &s.std);
            let mut ood = test.clone();
            for r in 0..ood.len() {
                for ((v, u), s) in ood.features.row_mut(r).iter_mut().zip(&dir).zip(scale) {
                    *v += offset * u / s;
                }
            }
            ood.provenance = format!("{} shifted by {offset}", test.provenance);
            Ok((test.clone(), ood))
        }
        OodStrategy::HeldOutClasses { classes } => {
            if classes.is_empty() {
                return Err(Error::Argument("held_out_classes needs at least one class".into()));
            }
            if let Some(c) = classes.iter().find(|&&c| c >= test.classes) {
                return Err(Error::Argument(format!("held-out class {c} does not exist")));
            }
            if (0..test.classes).all(|c| classes.contains(&c)) {
                return Err(Error::Argument("held-out classes cover every class".into()));
            }
            let (out_idx, in_idx): (Vec<usize>, Vec<usize>) =
                (0..test.len()).partition(|&i| classes.contains(&test.labels[i]));
            if out_idx.is_empty() || in_idx.is_empty() {
                return Err(Error::Argument("held-out split leaves an empty side".into()));
            }
            Ok((test.subset(&in_idx), test.subset(&out_idx)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_synthetic;

    #[test]
    fn zero_offset_reproduces_test_set() {
        let ds = gen_synthetic(3, 4, 10, 0.5, 1).unwrap();
        let (a, b) = make_ood_pair(&ds, &OodStrategy::ShiftedBlobs { offset: 0.0 }).unwrap();
        assert_eq!(a.features, b.features);
    }

    #[test]
    fn shift_moves_along_one_axis() {
        let ds = gen_synthetic(3, 4, 10, 0.5, 1).unwrap();
        let (a, b) = make_ood_pair(&ds, &OodStrategy::ShiftedBlobs { offset: 5.0 }).unwrap();
        let sd = &ds.standardizer.as_ref().unwrap().std;
        for r in 0..a.len() {
            assert!((b.features.get(r, 3) - a.features.get(r, 3) - 5.0 / sd[3]).abs() < 1e-12);
            assert_eq!(b.features.get(r, 0), a.features.get(r, 0));
        }
    }

    #[test]
    fn held_out_split() {
        let ds = gen_synthetic(4, 2, 10, 0.5, 1).unwrap();
        let (inn, out) = make_ood_pair(&ds, &OodStrategy::HeldOutClasses { classes: vec![3] }).unwrap();
        assert!(inn.labels.iter().all(|&y| y != 3));
        assert!(out.labels.iter().all(|&y| y == 3));
        assert_eq!(inn.len() + out.len(), ds.len());
        let all = OodStrategy::HeldOutClasses {
            classes: vec![0, 1, 2, 3],
        };
        assert!(make_ood_pair(&ds, &all).is_err());
    }
}
