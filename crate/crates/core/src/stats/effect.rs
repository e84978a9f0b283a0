use super::ttest::GroupSummary;
use super::{check_finite, StatsError};

/// Cohen's d as (mean(b) − mean(a)) / pooled sd.
pub fn cohen_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::InvalidInput("each group needs at least 2 values".into()));
    }
    check_finite("a", a)?;
    check_finite("b", b)?;
    cohen_d_summary(GroupSummary::of(a), GroupSummary::of(b))
}

pub fn cohen_d_summary(a: GroupSummary, b: GroupSummary) -> Result<f64, StatsError> {
    let (n1, n2) = (a.n as f64, b.n as f64);
    let pooled = (((n1 - 1.0) * a.sd * a.sd + (n2 - 1.0) * b.sd * b.sd) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 {
        if a.mean == b.mean {
            return Ok(0.0);
        }
        return Err(StatsError::DegenerateInput("zero pooled standard deviation".into()));
    }
    Ok((b.mean - a.mean) / pooled)
}

pub fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `n_points` evenly spaced samples of the normal density over mean ± 4 sd.
/// The middle sample sits exactly at the mean.
pub fn normal_density_curve(mean: f64, sd: f64, n_points: usize) -> Result<Vec<(f64, f64)>, StatsError> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(StatsError::NonPositiveSd);
    }
    if n_points < 3 || n_points.is_multiple_of(2) {
        return Err(StatsError::InvalidInput(format!("n_points must be odd and >= 3, got {n_points}")));
    }
    let half = (n_points / 2) as f64;
    let step = 4.0 * sd / half;
    Ok((0..n_points)
        .map(|i| {
            let offset = i as f64 - half;
            let x = if offset == 0.0 { mean } else { mean + offset * step };
            (x, normal_density(x, mean, sd))
        })
        .collect())
}
