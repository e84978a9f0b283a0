//! Student t and F distributions.

use serde::{Deserialize, Serialize};

use super::special::beta_inc;
use super::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistKind {
    StudentT { df: f64 },
    FDist { d1: f64, d2: f64 },
}

impl DistKind {
    fn check(self) -> Result<(), StatsError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self {
            DistKind::StudentT { df } if ok(df) => Ok(()),
            DistKind::FDist { d1, d2 } if ok(d1) && ok(d2) => Ok(()),
            _ => Err(StatsError::InvalidDf(format!("{self:?}"))),
        }
    }
}

fn t_cdf(df: f64, t: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t == f64::INFINITY {
        return 1.0;
    }
    if t == f64::NEG_INFINITY {
        return 0.0;
    }
    let t2 = t * t;
    let x = df / (df + t2);
    let y = t2 / (df + t2);
    let tail = 0.5 * beta_inc(df / 2.0, 0.5, x, y);
    if t <= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn f_cdf(d1: f64, d2: f64, f: f64) -> f64 {
    if f <= 0.0 {
        return 0.0;
    }
    if f == f64::INFINITY {
        return 1.0;
    }
    let denom = d1 * f + d2;
    beta_inc(d1 / 2.0, d2 / 2.0, d1 * f / denom, d2 / denom)
}

fn f_sf(d1: f64, d2: f64, f: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f == f64::INFINITY {
        return 0.0;
    }
    let denom = d1 * f + d2;
    beta_inc(d2 / 2.0, d1 / 2.0, d2 / denom, d1 * f / denom)
}

pub fn dist_cdf(kind: DistKind, x: f64) -> Result<f64, StatsError> {
    kind.check()?;
    Ok(match kind {
        DistKind::StudentT { df } => t_cdf(df, x),
        DistKind::FDist { d1, d2 } => f_cdf(d1, d2, x),
    })
}

/// Upper tail 1 − CDF, computed without cancellation.
pub fn dist_sf(kind: DistKind, x: f64) -> Result<f64, StatsError> {
    kind.check()?;
    Ok(match kind {
        DistKind::StudentT { df } => t_cdf(df, -x),
        DistKind::FDist { d1, d2 } => f_sf(d1, d2, x),
    })
}

/// Two-tailed p for a t statistic.
pub fn t_two_tailed(df: f64, t: f64) -> Result<f64, StatsError> {
    let kind = DistKind::StudentT { df };
    kind.check()?;
    if t.is_infinite() {
        return Ok(0.0);
    }
    let t2 = t * t;
    Ok(beta_inc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2)).min(1.0))
}

/// x with CDF(x) = p, by bisection.
pub fn dist_quantile(kind: DistKind, p: f64) -> Result<f64, StatsError> {
    kind.check()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::InvalidProbability(p));
    }
    let (mut lo, mut hi) = match kind {
        DistKind::StudentT { .. } => (-1.0, 1.0),
        DistKind::FDist { .. } => (0.0, 1.0),
    };
    let upper = p > 0.5;
    // compare in the tail where precision lives
    let below = |x: f64| -> bool {
        if upper {
            dist_sf(kind, x).unwrap() > 1.0 - p
        } else {
            dist_cdf(kind, x).unwrap() < p
        }
    };
    while below(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Ok(f64::INFINITY);
        }
    }
    if matches!(kind, DistKind::StudentT { .. }) {
        while !below(lo) {
            hi = lo;
            lo *= 2.0;
            if lo < -1e300 {
                return Ok(f64::NEG_INFINITY);
            }
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
