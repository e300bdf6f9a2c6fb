//! JSON float formatting at 17 significant digits.
//!
//! Used through `#[serde(serialize_with = ...)]` on every float that lands in a
//! checkpoint, run record, or metrics report. 17 significant digits is enough
//! for any `f64` to parse back bit-exactly. Non-finite values become `null`.

use serde::Serializer;
use serde_json::value::RawValue;

pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn f64_17<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if !x.is_finite() {
        return s.serialize_none();
    }
    let raw = RawValue::from_string(fmt17(*x)).map_err(serde::ser::Error::custom)?;
    s.serialize_some(&raw)
}

pub fn opt_f64_17<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => f64_17(v, s),
        None => s.serialize_none(),
    }
}

pub fn vec_f64_17<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&Sig17(*x))?;
    }
    seq.end()
}

/// Newtype that serializes through [`f64_17`].
#[derive(Clone, Copy, Debug)]
pub struct Sig17(pub f64);

impl serde::Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        f64_17(&self.0, s)
    }
}
