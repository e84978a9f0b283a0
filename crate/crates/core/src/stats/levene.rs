use serde::{Deserialize, Serialize};

use super::dist::{dist_sf, DistKind};
use super::{check_finite, mean, StatResult, StatsError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeveneCenter {
    #[default]
    Mean,
    /// Brown–Forsythe variant.
    Median,
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Levene's test for equality of variances across groups.
pub fn levene(groups: &[&[f64]], center: LeveneCenter) -> Result<StatResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InvalidInput("need at least 2 groups".into()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::InvalidInput(format!("group {i} has fewer than 2 values")));
        }
        check_finite("group", g)?;
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = match center {
                LeveneCenter::Mean => mean(g),
                LeveneCenter::Median => median(g),
            };
            g.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    let k = groups.len();
    let total: usize = groups.iter().map(|g| g.len()).sum();
    let zbar_i: Vec<f64> = z.iter().map(|zi| mean(zi)).collect();
    let zbar = z.iter().flatten().sum::<f64>() / total as f64;
    let between: f64 = z
        .iter()
        .zip(&zbar_i)
        .map(|(zi, m)| zi.len() as f64 * (m - zbar).powi(2))
        .sum();
    let within: f64 = z
        .iter()
        .zip(&zbar_i)
        .map(|(zi, m)| zi.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let d1 = (k - 1) as f64;
    let d2 = (total - k) as f64;
    let (w, p) = if within == 0.0 {
        if between == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let w = d2 / d1 * between / within;
        (w, dist_sf(DistKind::FDist { d1, d2 }, w)?)
    };
    Ok(StatResult {
        method: match center {
            LeveneCenter::Mean => "levene_mean".into(),
            LeveneCenter::Median => "levene_median".into(),
        },
        estimate: w,
        ci_low: None,
        ci_high: None,
        statistic: w,
        df: vec![d1, d2],
        p,
        n: groups.iter().map(|g| g.len()).collect(),
    })
}
