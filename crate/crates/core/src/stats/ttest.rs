use serde::{Deserialize, Serialize};

use super::dist::{dist_quantile, t_two_tailed, DistKind};
use super::levene::{levene, LeveneCenter};
use super::{check_finite, mean, sample_var, StatResult, StatsError};

/// Levene p below this switches the automatic rule to Welch.
pub const LEVENE_GATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestRule {
    #[default]
    Auto,
    Student,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl GroupSummary {
    pub fn of(x: &[f64]) -> Self {
        Self {
            mean: mean(x),
            sd: sample_var(x).sqrt(),
            n: x.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// estimate = MD, statistic = t, CI on MD.
    pub result: StatResult,
    pub md: f64,
    pub se: f64,
    pub a: GroupSummary,
    pub b: GroupSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levene: Option<StatResult>,
}

impl TTest {
    pub fn is_welch(&self) -> bool {
        self.result.method == "welch_t"
    }
}

/// Independent two-sample t-test of a against b (MD = mean(a) − mean(b)).
pub fn t_test_independent(
    a: &[f64],
    b: &[f64],
    rule: TTestRule,
    alpha: f64,
) -> Result<TTest, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::InvalidInput("each group needs at least 2 values".into()));
    }
    check_finite("a", a)?;
    check_finite("b", b)?;
    let lev = levene(&[a, b], LeveneCenter::Mean)?;
    let chosen = match rule {
        TTestRule::Auto if lev.p < LEVENE_GATE => TTestRule::Welch,
        TTestRule::Auto => TTestRule::Student,
        r => r,
    };
    let mut out = t_test_summary(GroupSummary::of(a), GroupSummary::of(b), chosen, alpha)?;
    out.levene = Some(lev);
    Ok(out)
}

/// The same test from group summaries. The automatic rule needs raw data.
pub fn t_test_summary(
    a: GroupSummary,
    b: GroupSummary,
    rule: TTestRule,
    alpha: f64,
) -> Result<TTest, StatsError> {
    if a.n < 2 || b.n < 2 {
        return Err(StatsError::InvalidInput("each group needs at least 2 values".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidProbability(alpha));
    }
    let (n1, n2) = (a.n as f64, b.n as f64);
    let (v1, v2) = (a.sd * a.sd, b.sd * b.sd);
    let (method, se, df) = match rule {
        TTestRule::Auto => {
            return Err(StatsError::InvalidInput(
                "automatic rule needs raw data for Levene's test".into(),
            ))
        }
        TTestRule::Student => {
            let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
            ("student_t", (pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), n1 + n2 - 2.0)
        }
        TTestRule::Welch => {
            let (q1, q2) = (v1 / n1, v2 / n2);
            let df = (q1 + q2).powi(2) / (q1 * q1 / (n1 - 1.0) + q2 * q2 / (n2 - 1.0));
            ("welch_t", (q1 + q2).sqrt(), df)
        }
    };
    let md = a.mean - b.mean;
    let (t, p, ci, df) = if se == 0.0 {
        if md != 0.0 {
            return Err(StatsError::DegenerateInput(
                "constant groups with different values: zero standard error".into(),
            ));
        }
        // Welch df is 0/0 here; report the pooled df
        (0.0, 1.0, (0.0, 0.0), n1 + n2 - 2.0)
    } else {
        let t = md / se;
        let p = t_two_tailed(df, t)?;
        let crit = dist_quantile(DistKind::StudentT { df }, 1.0 - alpha / 2.0)?;
        (t, p, (md - crit * se, md + crit * se), df)
    };
    Ok(TTest {
        result: StatResult {
            method: method.into(),
            estimate: md,
            ci_low: Some(ci.0),
            ci_high: Some(ci.1),
            statistic: t,
            df: vec![df],
            p,
            n: vec![a.n, b.n],
        },
        md,
        se,
        a,
        b,
        levene: None,
    })
}
