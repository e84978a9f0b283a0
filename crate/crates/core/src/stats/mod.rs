//! Inferential statistics: correlation, intraclass correlation, variance
//! homogeneity, independent t-tests, effect sizes and normal curves.

mod dist;
mod effect;
mod icc;
mod levene;
mod pearson;
pub mod special;
mod ttest;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dist::{dist_cdf, dist_quantile, dist_sf, t_two_tailed, DistKind};
pub use effect::{cohen_d, cohen_d_summary, normal_density, normal_density_curve};
pub use icc::{icc, icc_all, AnovaTable, IccConfig, IccDefinition, IccModel, IccUnit, RatingMatrix};
pub use levene::{levene, LeveneCenter};
pub use pearson::pearson;
pub use ttest::{t_test_independent, t_test_summary, GroupSummary, TTest, TTestRule, LEVENE_GATE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid degrees of freedom: {0}")]
    InvalidDf(String),
    #[error("probability {0} outside (0, 1)")]
    InvalidProbability(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("standard deviation must be positive")]
    NonPositiveSd,
}

/// Outcome of one test or estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub method: String,
    #[serde(with = "real")]
    pub estimate: f64,
    #[serde(default, with = "opt_real", skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(default, with = "opt_real", skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(with = "real")]
    pub statistic: f64,
    pub df: Vec<f64>,
    #[serde(with = "real")]
    pub p: f64,
    pub n: Vec<usize>,
}

impl StatResult {
    pub fn ci(&self) -> Option<(f64, f64)> {
        Some((self.ci_low?, self.ci_high?))
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance (n − 1 divisor).
pub(crate) fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub(crate) fn check_finite(name: &str, x: &[f64]) -> Result<(), StatsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::InvalidInput(format!("{name} contains a non-finite value")))
    }
}

/// Serializes non-finite reals as the strings "inf", "-inf" and "nan" so
/// results survive JSON.
pub mod real {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a real: {other:?}"))),
            },
        }
    }
}

pub mod opt_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::real::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct W(#[serde(with = "super::real")] f64);
        Ok(Option::<W>::deserialize(d)?.map(|w| w.0))
    }
}
