//! Paper-shaped tables built from stored analyses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Analysis, StoreError};
use crate::stats::{StatResult, TTest};
use crate::variant::VariantId;

/// Significance threshold used when rendering p-values as `P<a` / `P>a`.
const REPORT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    RetestPearson,
    LlmDistribution,
    Icc,
    Ttest,
    Roleplay,
}

impl TableKind {
    pub const ALL: [TableKind; 5] = [
        TableKind::RetestPearson,
        TableKind::LlmDistribution,
        TableKind::Icc,
        TableKind::Ttest,
        TableKind::Roleplay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::RetestPearson => "retest_pearson",
            TableKind::LlmDistribution => "llm_distribution",
            TableKind::Icc => "icc",
            TableKind::Ttest => "ttest",
            TableKind::Roleplay => "roleplay",
        }
    }

    fn analysis_kind(self) -> &'static str {
        match self {
            TableKind::RetestPearson => "retest",
            TableKind::LlmDistribution => "distribution",
            TableKind::Icc => "icc",
            TableKind::Ttest | TableKind::Roleplay => "role_play",
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TableKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown table kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CellValue {
    Number { value: f64 },
    Interval { low: f64, high: f64 },
    /// A test statistic shown as `name=value`, optionally with its p bound.
    Statistic { name: String, value: f64, p: Option<f64> },
    PValue { p: f64 },
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub value: CellValue,
    pub rendered: String,
    /// Analysis id plus the path of the result or aggregate the value came from.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<ReportCell>,
    pub run_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub kind: TableKind,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub footnote: String,
}

fn p_bound(p: f64) -> String {
    if p < REPORT_ALPHA {
        format!("P<{REPORT_ALPHA}")
    } else {
        format!("P>{REPORT_ALPHA}")
    }
}

fn real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v}")
    }
}

fn fixed(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        real(v)
    }
}

impl CellValue {
    fn render(&self, decimals: usize) -> String {
        match self {
            CellValue::Number { value } => fixed(*value, decimals),
            CellValue::Interval { low, high } => format!("[{}, {}]", fixed(*low, decimals), fixed(*high, decimals)),
            CellValue::Statistic { name, value, p } => match p {
                Some(p) => format!("{name}={}, {}", fixed(*value, decimals), p_bound(*p)),
                None => format!("{name}={}", fixed(*value, decimals)),
            },
            CellValue::PValue { p } => p_bound(*p),
            CellValue::Missing => String::new(),
        }
    }

    /// Full-precision form used in CSV.
    fn exact(&self) -> String {
        match self {
            CellValue::Number { value } => real(*value),
            CellValue::Interval { low, high } => format!("[{}, {}]", real(*low), real(*high)),
            CellValue::Statistic { name, value, p } => match p {
                Some(p) => format!("{name}={}, p={}", real(*value), real(*p)),
                None => format!("{name}={}", real(*value)),
            },
            CellValue::PValue { p } => real(*p),
            CellValue::Missing => String::new(),
        }
    }
}

impl ReportTable {
    /// Header `row,<columns>` then one line per row, values at full
    /// precision.
    pub fn to_csv(&self) -> Result<Vec<u8>, StoreError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend(r.cells.iter().map(|c| c.value.exact()));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| StoreError::Io(e.into_error()))
    }
}

/// Plain-text rendering with the 2- or 4-decimal cell strings.
pub fn render_table(t: &ReportTable) -> String {
    let mut lines = vec![t.title.clone()];
    let mut header = vec![String::new()];
    header.extend(t.columns.iter().cloned());
    lines.push(header.join("\t"));
    for r in &t.rows {
        let mut l = vec![r.label.clone()];
        l.extend(r.cells.iter().map(|c| c.rendered.clone()));
        lines.push(l.join("\t"));
    }
    lines.push(t.footnote.clone());
    lines.join("\n") + "\n"
}

struct Builder<'a> {
    id: &'a str,
    decimals: usize,
}

impl Builder<'_> {
    fn cell(&self, value: CellValue, path: impl fmt::Display) -> ReportCell {
        ReportCell {
            rendered: value.render(self.decimals),
            value,
            source: format!("{}#{path}", self.id),
        }
    }

    fn missing(&self) -> ReportCell {
        ReportCell {
            value: CellValue::Missing,
            rendered: String::new(),
            source: String::new(),
        }
    }

    fn num(&self, v: f64, path: impl fmt::Display) -> ReportCell {
        self.cell(CellValue::Number { value: v }, path)
    }
}

fn union_in_order<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn methods<'a>(results: impl Iterator<Item = &'a StatResult>) -> String {
    union_in_order(results.map(|r| r.method.as_str())).join(", ")
}

/// Scale ids that get a table of their own for `kind`; empty when the kind
/// is always emitted whole.
pub(super) fn split_scales(analysis: &Analysis, kind: TableKind) -> Vec<String> {
    match (kind, analysis) {
        (TableKind::RetestPearson, Analysis::Retest(t)) => union_in_order(t.cells.iter().map(|c| c.scale_id.as_str())),
        (TableKind::LlmDistribution, Analysis::Distribution(t)) => {
            union_in_order(t.cells.iter().map(|c| c.scale_id.as_str()))
        }
        _ => Vec::new(),
    }
}

/// Builds the table, restricted to one scale's cells when `scale` is given.
pub(super) fn build(
    id: &str,
    analysis: &Analysis,
    kind: TableKind,
    scale: Option<&str>,
) -> Result<ReportTable, StoreError> {
    let keep = |s: &str| scale.is_none_or(|f| f == s);
    let wrong = || StoreError::WrongKind {
        id: id.to_string(),
        kind: kind.as_str().to_string(),
        expected: kind.analysis_kind().to_string(),
        actual: analysis.kind().to_string(),
    };
    let b = Builder {
        id,
        decimals: if kind == TableKind::Icc { 4 } else { 2 },
    };
    match (kind, analysis) {
        (TableKind::RetestPearson, Analysis::Retest(t)) => {
            let dims = union_in_order(t.cells.iter().filter(|c| keep(&c.scale_id)).map(|c| c.dimension.as_str()));
            let forms = union_in_order(t.cells.iter().filter(|c| keep(&c.scale_id)).map(|c| c.scale_id.as_str()));
            let mut rows = Vec::new();
            for scale in &forms {
                for variant in VariantId::ALL {
                    let cells: Vec<(usize, &_)> = t
                        .cells
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| &c.scale_id == scale && c.variant == variant)
                        .collect();
                    if cells.is_empty() {
                        continue;
                    }
                    let mut out = Vec::new();
                    let mut run_ids = Vec::new();
                    let mut worst: Option<(usize, f64)> = None;
                    for d in &dims {
                        match cells.iter().find(|(_, c)| &c.dimension == d) {
                            Some((i, c)) => {
                                out.push(b.num(c.result.estimate, format_args!("cells/{i}/result")));
                                run_ids.extend(c.run_ids.iter().cloned());
                                if worst.is_none_or(|(_, p)| c.result.p > p) {
                                    worst = Some((*i, c.result.p));
                                }
                            }
                            None => out.push(b.missing()),
                        }
                    }
                    out.push(match worst {
                        Some((i, p)) => b.cell(CellValue::PValue { p }, format_args!("cells/{i}/result")),
                        None => b.missing(),
                    });
                    rows.push(ReportRow {
                        label: format!("{scale} {}", variant.display_name()),
                        cells: out,
                        run_ids,
                    });
                }
            }
            let mut columns = dims;
            columns.push("P".into());
            Ok(ReportTable {
                title: "Pearson correlation coefficients between waves".into(),
                kind,
                columns,
                rows,
                footnote: format!(
                    "method: {}; two-tailed; P is the largest p in the row",
                    methods(t.cells.iter().map(|c| &c.result))
                ),
            })
        }
        (TableKind::LlmDistribution, Analysis::Distribution(t)) => {
            let dims = union_in_order(t.cells.iter().filter(|c| keep(&c.scale_id)).map(|c| c.dimension.as_str()));
            let mut keys: Vec<(&str, &str, VariantId, Option<&crate::role::RoleId>)> = Vec::new();
            for c in t.cells.iter().filter(|c| keep(&c.scale_id)) {
                let k = (c.respondent.as_str(), c.scale_id.as_str(), c.variant, c.role.as_ref());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
            let mut rows = Vec::new();
            for (resp, scale, variant, role) in keys {
                let mut label = format!("{resp} {scale} {}", variant.display_name());
                if let Some(r) = role {
                    label.push_str(&format!(" {r}"));
                }
                let mut cells = Vec::new();
                let mut run_ids = Vec::new();
                for d in &dims {
                    let found = t.cells.iter().enumerate().find(|(_, c)| {
                        c.respondent == resp
                            && c.scale_id == scale
                            && c.variant == variant
                            && c.role.as_ref() == role
                            && &c.dimension == d
                    });
                    match found {
                        Some((i, c)) => {
                            cells.push(b.num(c.aggregate.mean, format_args!("cells/{i}/aggregate.mean")));
                            cells.push(b.num(c.aggregate.variance, format_args!("cells/{i}/aggregate.variance")));
                            run_ids.extend(c.run_ids.iter().cloned());
                        }
                        None => {
                            cells.push(b.missing());
                            cells.push(b.missing());
                        }
                    }
                }
                rows.push(ReportRow { label, cells, run_ids });
            }
            let columns = dims
                .iter()
                .flat_map(|d| [format!("{d} Mean"), format!("{d} Variance")])
                .collect();
            let ns: Vec<String> = t
                .cells
                .iter()
                .filter(|c| keep(&c.scale_id))
                .map(|c| c.aggregate.n.to_string())
                .collect();
            let n = union_in_order(ns.iter().map(String::as_str));
            Ok(ReportTable {
                title: "Score distribution over independent runs".into(),
                kind,
                columns,
                rows,
                footnote: format!(
                    "variance divisor: {}; runs per cell: {}",
                    match t.divisor {
                        crate::scoring::VarianceDivisor::Sample => "n-1",
                        crate::scoring::VarianceDivisor::Population => "n",
                    },
                    n.join("/")
                ),
            })
        }
        (TableKind::Icc, Analysis::Icc(t)) => {
            let mut rows = Vec::new();
            for (i, r) in t.rows.iter().enumerate() {
                for (unit, label, res) in [("single", "Single Measurement", &r.single), ("average", "Average Measurement", &r.average)] {
                    let path = format!("rows/{i}/{unit}");
                    let cells = vec![
                        b.num(res.estimate, &path),
                        match res.ci() {
                            Some((low, high)) => b.cell(CellValue::Interval { low, high }, &path),
                            None => b.missing(),
                        },
                        b.num(res.statistic, &path),
                        b.cell(CellValue::PValue { p: res.p }, &path),
                    ];
                    rows.push(ReportRow {
                        label: format!("{} {} {label}", r.scale_id, r.dimension),
                        cells,
                        run_ids: r.run_ids.clone(),
                    });
                }
            }
            let columns = ["ICC", "95% CI", "F", "P"].map(String::from).to_vec();
            Ok(ReportTable {
                title: "Intraclass correlation across forms".into(),
                kind,
                columns,
                rows,
                footnote: format!(
                    "method: {}; alpha {}",
                    methods(t.rows.iter().flat_map(|r| [&r.single, &r.average])),
                    t.config.alpha
                ),
            })
        }
        (TableKind::Ttest, Analysis::RolePlay(rp)) => {
            let h = rp.human.as_ref().ok_or_else(wrong)?;
            let mut rows = Vec::new();
            let groups = [("role_tests", &h.role_tests), ("deviation_tests", &h.deviation_tests)];
            for (field, list) in groups {
                for (i, g) in list.iter().enumerate() {
                    let path = format!("human/{field}/{i}");
                    rows.push(ReportRow {
                        label: format!("{} {} {}", g.scale_id, g.variant.display_name(), g.label),
                        cells: ttest_cells(&b, &g.test, &path),
                        run_ids: g.run_ids.clone(),
                    });
                }
            }
            Ok(ReportTable {
                title: "Independent sample t-test, extrovert minus introvert".into(),
                kind,
                columns: ["Levene's Test", "t-test", "MD", "SE", "95%CI", "P"].map(String::from).to_vec(),
                rows,
                footnote: format!(
                    "method: {}; Welch when Levene p < {}",
                    methods(h.role_tests.iter().chain(&h.deviation_tests).map(|g| &g.test.result)),
                    crate::stats::LEVENE_GATE
                ),
            })
        }
        (TableKind::Roleplay, Analysis::RolePlay(rp)) => {
            if rp.models.is_empty() {
                return Err(wrong());
            }
            let mut rows = Vec::new();
            for (i, c) in rp.models.iter().enumerate() {
                let path = format!("models/{i}");
                let cond = c.role.as_ref().map(|r| r.as_str()).unwrap_or("baseline");
                let prefix = format!("{} {} {cond}", c.scale_id, c.variant.display_name());
                let stat = |name: &str, t: &TTest, which: &str| {
                    b.cell(
                        CellValue::Statistic {
                            name: name.into(),
                            value: t.result.statistic,
                            p: Some(t.result.p),
                        },
                        format_args!("{path}/{which}"),
                    )
                };
                rows.push(ReportRow {
                    label: format!("{prefix} {}", c.model_a),
                    cells: vec![
                        b.num(c.a.mean, format_args!("{path}/a.mean")),
                        b.num(c.a.sd, format_args!("{path}/a.sd")),
                        stat("t", &c.student, "student"),
                        stat("T", &c.welch, "welch"),
                        b.num(c.md, format_args!("{path}/md")),
                        b.num(c.d, format_args!("{path}/d")),
                    ],
                    run_ids: c.run_ids.clone(),
                });
                for (label, s, field) in [(&c.model_b, &c.b, "b"), (&"Total".to_string(), &c.total, "total")] {
                    let mut cells = vec![
                        b.num(s.mean, format_args!("{path}/{field}.mean")),
                        b.num(s.sd, format_args!("{path}/{field}.sd")),
                    ];
                    cells.extend((0..4).map(|_| b.missing()));
                    rows.push(ReportRow {
                        label: format!("{prefix} {label}"),
                        cells,
                        run_ids: Vec::new(),
                    });
                }
            }
            Ok(ReportTable {
                title: "Model comparison under role play".into(),
                kind,
                columns: ["M", "SD", "t-Test", "Welch'sT", "MD", "d"].map(String::from).to_vec(),
                rows,
                footnote: "MD and d are second model minus first; d uses the pooled SD".into(),
            })
        }
        _ => Err(wrong()),
    }
}

fn ttest_cells(b: &Builder<'_>, t: &TTest, path: &str) -> Vec<ReportCell> {
    let lev = match &t.levene {
        Some(l) => b.cell(
            CellValue::Statistic {
                name: "F".into(),
                value: l.statistic,
                p: Some(l.p),
            },
            format_args!("{path}/test.levene"),
        ),
        None => b.missing(),
    };
    let r = &t.result;
    vec![
        lev,
        b.cell(
            CellValue::Statistic {
                name: "t".into(),
                value: r.statistic,
                p: None,
            },
            format_args!("{path}/test.result"),
        ),
        b.num(t.md, format_args!("{path}/test.md")),
        b.num(t.se, format_args!("{path}/test.se")),
        match r.ci() {
            Some((low, high)) => b.cell(CellValue::Interval { low, high }, format_args!("{path}/test.result")),
            None => b.missing(),
        },
        b.cell(CellValue::PValue { p: r.p }, format_args!("{path}/test.result")),
    ]
}
