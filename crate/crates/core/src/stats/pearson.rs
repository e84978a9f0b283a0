use super::dist::t_two_tailed;
use super::{check_finite, mean, StatResult, StatsError};

/// Pearson r with a two-tailed test on n − 2 degrees of freedom.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<StatResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput(format!(
            "length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InvalidInput(format!("need at least 3 pairs, got {n}")));
    }
    check_finite("x", x)?;
    check_finite("y", y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput("constant vector: r is undefined".into()));
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    // exact linear relations land a few ulps short of ±1
    if 1.0 - r.abs() < 1e-14 {
        r = r.signum();
    }
    let df = (n - 2) as f64;
    let (t, p) = if r.abs() == 1.0 {
        (r.signum() * f64::INFINITY, 0.0)
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        (t, t_two_tailed(df, t)?)
    };
    Ok(StatResult {
        method: "pearson".into(),
        estimate: r,
        ci_low: None,
        ci_high: None,
        statistic: t,
        df: vec![df],
        p,
        n: vec![n],
    })
}
