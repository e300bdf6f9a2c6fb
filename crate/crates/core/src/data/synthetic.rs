use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Distance of every class mean from the origin.
pub const MEAN_SCALE: f64 = 2.0;

/// Class means: scaled basis vectors (a simplex) when `dim >= classes`,
/// otherwise equally spaced points on a circle in the first two coordinates,
/// or on a line when `dim == 1`.
pub fn class_means(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut mu = vec![0.0; dim];
            if dim >= classes {
                mu[c] = MEAN_SCALE;
            } else if dim >= 2 {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                mu[0] = MEAN_SCALE * angle.cos();
                mu[1] = MEAN_SCALE * angle.sin();
            } else {
                let step = 2.0 * MEAN_SCALE / (classes - 1) as f64;
                mu[0] = -MEAN_SCALE + step * c as f64;
            }
            mu
        })
        .collect()
}

fn check_args(classes: usize, dim: usize, per_class: usize, spread: f64) -> Result<()> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::Argument(format!(
            "synthetic data needs classes >= 2, dim >= 1, per_class >= 1 (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::Argument(format!("spread must be >= 0, got {spread}")));
    }
    Ok(())
}

/// Gaussian blobs `N(μ_c, spread²·I)` before standardization. Rows cycle
/// through the classes: row `i` has label `i % classes`.
pub fn gen_synthetic_raw<R: Rng + ?Sized>(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    check_args(classes, dim, per_class, spread)?;
    let means = class_means(classes, dim);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (c, mu) in means.iter().enumerate() {
            for &m in mu {
                let z: f64 = rng.sample(StandardNormal);
                data.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Matrix::new(n, dim, data)?,
        labels,
        classes,
        format!("synthetic(classes={classes},dim={dim},per_class={per_class},spread={spread})"),
    )
}

/// Standardized Gaussian-blob dataset, a pure function of the arguments.
pub fn gen_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut r = rng::from_seed(seed);
    let mut ds = gen_synthetic_raw(classes, dim, per_class, spread, &mut r)?;
    let st = Standardizer::fit(&ds.features);
    ds.features = st.apply(&ds.features);
    ds.standardizer = Some(st);
    Ok(ds)
}
