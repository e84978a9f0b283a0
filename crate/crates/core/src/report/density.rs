use std::fmt::Write;

use super::StoreError;
use crate::scoring::Aggregate;
use crate::stats::normal_density_curve;

pub const DENSITY_POINTS: usize = 201;

/// Normal curve for an aggregate as CSV: a `# mean=..,sd=..,n=..` comment
/// line, then `x,density` rows over mean ± 4 sd.
pub fn density_csv(agg: &Aggregate) -> Result<Vec<u8>, StoreError> {
    if agg.n < 2 || !(agg.variance > 0.0) {
        return Err(StoreError::DegenerateVariance(format!(
            "n={} variance={}",
            agg.n, agg.variance
        )));
    }
    let sd = agg.sd();
    let curve = normal_density_curve(agg.mean, sd, DENSITY_POINTS)
        .map_err(|e| StoreError::DegenerateVariance(e.to_string()))?;
    let mut out = String::new();
    writeln!(out, "# mean={},sd={},n={}", agg.mean, sd, agg.n).unwrap();
    out.push_str("x,density\n");
    for (x, y) in curve {
        writeln!(out, "{x},{y}").unwrap();
    }
    Ok(out.into_bytes())
}
