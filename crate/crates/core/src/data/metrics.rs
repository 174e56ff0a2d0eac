//! Peak signal-to-noise ratio on the 8-bit scale.

use crate::error::Result;
use crate::numerics::Tensor;

pub const PEAK: f64 = 255.0;

/// Aggregates replace the infinite PSNR of identical images by this value.
pub const PSNR_CAP_DB: f64 = 60.0;

/// `10·log10(255² / MSE)` over all channels jointly. Identical inputs give
/// `f64::INFINITY`, the sentinel for zero error.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(psnr_from_mse(sse / a.len() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn cap(psnr_db: f64) -> f64 {
    psnr_db.min(PSNR_CAP_DB)
}

/// Arithmetic mean with the infinity sentinel capped; `None` when empty.
pub fn capped_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + cap(v), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Serde adapter writing the infinity sentinel as the string `"inf"`.
pub mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
        }
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(x) => super::serialize(x, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            match Option::<Repr>::deserialize(d)? {
                None => Ok(None),
                Some(Repr::Num(v)) => Ok(Some(v)),
                Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
                Some(Repr::Text(t)) => {
                    Err(serde::de::Error::custom(format!("bad PSNR value {t:?}")))
                }
            }
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_infinite() && *x > 0.0 {
                    seq.serialize_element("inf")?;
                } else {
                    seq.serialize_element(x)?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| match r {
                    Repr::Num(v) => Ok(v),
                    Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
                    Repr::Text(t) => Err(serde::de::Error::custom(format!("bad PSNR value {t:?}"))),
                })
                .collect()
        }
    }
}
