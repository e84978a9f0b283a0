//! Two-way intraclass correlation coefficients.

use serde::{Deserialize, Serialize};

use super::dist::{dist_quantile, dist_sf, DistKind};
use super::{StatResult, StatsError};

/// Subjects (rows) by conditions (columns), complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub subject_ids: Vec<String>,
    pub condition_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl RatingMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        condition_ids: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        if values.len() != subject_ids.len() {
            return Err(StatsError::InvalidInput(format!(
                "{} rows for {} subjects",
                values.len(),
                subject_ids.len()
            )));
        }
        for (row, id) in values.iter().zip(&subject_ids) {
            if row.len() != condition_ids.len() {
                return Err(StatsError::InvalidInput(format!(
                    "subject {id} has {} cells, expected {}",
                    row.len(),
                    condition_ids.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::InvalidInput(format!("subject {id} has a non-finite cell")));
            }
        }
        Ok(Self {
            subject_ids,
            condition_ids,
            values,
        })
    }

    /// Matrix with generated ids.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let k = values.first().map_or(0, Vec::len);
        Self::new(
            (1..=values.len()).map(|i| format!("s{i}")).collect(),
            (1..=k).map(|j| format!("c{j}")).collect(),
            values,
        )
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn k(&self) -> usize {
        self.condition_ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccModel {
    TwoWayRandom,
    TwoWayMixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccDefinition {
    Consistency,
    AbsoluteAgreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IccUnit {
    Single,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IccConfig {
    pub model: IccModel,
    pub definition: IccDefinition,
    pub unit: IccUnit,
    pub alpha: f64,
}

impl Default for IccConfig {
    fn default() -> Self {
        Self {
            model: IccModel::TwoWayMixed,
            definition: IccDefinition::Consistency,
            unit: IccUnit::Average,
            alpha: 0.05,
        }
    }
}

impl IccConfig {
    pub fn with_unit(self, unit: IccUnit) -> Self {
        Self { unit, ..self }
    }

    pub fn method_tag(&self) -> String {
        let model = match self.model {
            IccModel::TwoWayRandom => "random",
            IccModel::TwoWayMixed => "mixed",
        };
        let def = match self.definition {
            IccDefinition::Consistency => "consistency",
            IccDefinition::AbsoluteAgreement => "absolute",
        };
        let unit = match self.unit {
            IccUnit::Single => "single",
            IccUnit::Average => "average",
        };
        format!("icc_{model}_{def}_{unit}")
    }
}

/// Two-way ANOVA mean squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub n: usize,
    pub k: usize,
    pub msr: f64,
    pub msc: f64,
    pub mse: f64,
}

impl AnovaTable {
    pub fn from_matrix(m: &RatingMatrix) -> Result<Self, StatsError> {
        let (n, k) = (m.n(), m.k());
        if n < 2 || k < 2 {
            return Err(StatsError::InvalidInput(format!(
                "need at least 2 subjects and 2 conditions, got {n}×{k}"
            )));
        }
        let nk = (n * k) as f64;
        let grand = m.values.iter().flatten().sum::<f64>() / nk;
        let rows: Vec<f64> = m.values.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
        let cols: Vec<f64> = (0..k)
            .map(|j| m.values.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let ssr = k as f64 * rows.iter().map(|r| (r - grand).powi(2)).sum::<f64>();
        let ssc = n as f64 * cols.iter().map(|c| (c - grand).powi(2)).sum::<f64>();
        let mut sse = 0.0;
        let mut sst = 0.0;
        for (i, row) in m.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                sse += (v - rows[i] - cols[j] + grand).powi(2);
                sst += (v - grand).powi(2);
            }
        }
        if sst == 0.0 {
            return Err(StatsError::DegenerateInput("zero total variance".into()));
        }
        // residuals below rounding noise are exact zeros
        if sse <= sst * 1e-24 {
            sse = 0.0;
        }
        let dfe = ((n - 1) * (k - 1)) as f64;
        Ok(Self {
            n,
            k,
            msr: ssr / (n - 1) as f64,
            msc: ssc / (k - 1) as f64,
            mse: sse / dfe,
        })
    }

    pub fn f(&self) -> f64 {
        if self.mse == 0.0 {
            f64::INFINITY
        } else {
            self.msr / self.mse
        }
    }

    pub fn df(&self) -> (f64, f64) {
        let n1 = (self.n - 1) as f64;
        (n1, n1 * (self.k - 1) as f64)
    }

    pub fn estimate(&self, definition: IccDefinition, unit: IccUnit) -> f64 {
        let (n, k) = (self.n as f64, self.k as f64);
        let AnovaTable { msr, msc, mse, .. } = *self;
        match (definition, unit) {
            (IccDefinition::Consistency, IccUnit::Single) => (msr - mse) / (msr + (k - 1.0) * mse),
            (IccDefinition::Consistency, IccUnit::Average) => (msr - mse) / msr,
            (IccDefinition::AbsoluteAgreement, IccUnit::Single) => {
                (msr - mse) / (msr + (k - 1.0) * mse + (k / n) * (msc - mse))
            }
            (IccDefinition::AbsoluteAgreement, IccUnit::Average) => {
                (msr - mse) / (msr + (msc - mse) / n)
            }
        }
    }
}

fn upper_quantile(d1: f64, d2: f64, alpha: f64) -> Result<f64, StatsError> {
    dist_quantile(DistKind::FDist { d1, d2 }, 1.0 - alpha / 2.0)
}

fn spearman_brown(rho: f64, k: f64) -> f64 {
    k * rho / (1.0 + (k - 1.0) * rho)
}

fn consistency_ci(t: &AnovaTable, unit: IccUnit, alpha: f64) -> Result<(f64, f64), StatsError> {
    let (df1, df2) = t.df();
    let k = t.k as f64;
    let f = t.f();
    let fl = f / upper_quantile(df1, df2, alpha)?;
    let fu = f * upper_quantile(df2, df1, alpha)?;
    Ok(match unit {
        IccUnit::Single => ((fl - 1.0) / (fl + k - 1.0), (fu - 1.0) / (fu + k - 1.0)),
        IccUnit::Average => (1.0 - 1.0 / fl, 1.0 - 1.0 / fu),
    })
}

/// Satterthwaite-approximated interval for agreement.
fn absolute_ci(t: &AnovaTable, unit: IccUnit, alpha: f64) -> Result<Option<(f64, f64)>, StatsError> {
    let (n, k) = (t.n as f64, t.k as f64);
    let AnovaTable { msr, msc, mse, .. } = *t;
    let rho = t.estimate(IccDefinition::AbsoluteAgreement, IccUnit::Single);
    if !(rho < 1.0) {
        return Ok(None);
    }
    let a = k * rho / (n * (1.0 - rho));
    let b = 1.0 + k * rho * (n - 1.0) / (n * (1.0 - rho));
    let v = (a * msc + b * mse).powi(2)
        / ((a * msc).powi(2) / (k - 1.0) + (b * mse).powi(2) / ((n - 1.0) * (k - 1.0)));
    if !(v.is_finite() && v > 0.0) {
        return Ok(None);
    }
    let fs = upper_quantile(n - 1.0, v, alpha)?;
    let low = n * (msr - fs * mse) / (fs * (k * msc + (k * n - k - n) * mse) + n * msr);
    let fs = upper_quantile(v, n - 1.0, alpha)?;
    let high = n * (fs * msr - mse) / (k * msc + (k * n - k - n) * mse + n * fs * msr);
    let (low, high) = match unit {
        IccUnit::Single => (low, high),
        IccUnit::Average => (spearman_brown(low, k), spearman_brown(high, k)),
    };
    // Spearman–Brown has a pole at −1/(k − 1); past it the bounds invert.
    let est = t.estimate(IccDefinition::AbsoluteAgreement, unit);
    if !(low <= est && est <= high) {
        return Ok(None);
    }
    Ok(Some((low, high)))
}

/// One ICC form with its F test and (1 − α) interval.
pub fn icc(matrix: &RatingMatrix, config: &IccConfig) -> Result<StatResult, StatsError> {
    if !(config.alpha > 0.0 && config.alpha <= 0.5) {
        return Err(StatsError::InvalidInput(format!("alpha {} outside (0, 0.5]", config.alpha)));
    }
    let table = AnovaTable::from_matrix(matrix)?;
    from_table(&table, config)
}

fn from_table(table: &AnovaTable, config: &IccConfig) -> Result<StatResult, StatsError> {
    let (df1, df2) = table.df();
    let estimate = table.estimate(config.definition, config.unit);
    let f = table.f();
    let (p, ci) = if table.mse == 0.0 {
        (0.0, Some((estimate, estimate)))
    } else {
        let p = dist_sf(DistKind::FDist { d1: df1, d2: df2 }, f)?;
        let ci = match config.definition {
            IccDefinition::Consistency => Some(consistency_ci(table, config.unit, config.alpha)?),
            IccDefinition::AbsoluteAgreement => absolute_ci(table, config.unit, config.alpha)?,
        };
        (p, ci)
    };
    Ok(StatResult {
        method: config.method_tag(),
        estimate,
        ci_low: ci.map(|c| c.0),
        ci_high: ci.map(|c| c.1),
        statistic: f,
        df: vec![df1, df2],
        p,
        n: vec![table.n, table.k],
    })
}

/// Single and average forms for one model and definition.
pub fn icc_all(matrix: &RatingMatrix, config: &IccConfig) -> Result<(StatResult, StatResult), StatsError> {
    let single = icc(matrix, &config.with_unit(IccUnit::Single))?;
    let average = icc(matrix, &config.with_unit(IccUnit::Average))?;
    Ok((single, average))
}
