#![allow(dead_code)]

//! Shared helpers for the integration suites: data paths, seeded normal
//! draws and synthetic human answer sheets.

use std::collections::BTreeMap;
use std::path::PathBuf;

use psymetric_core::gateway::{RecordedRow, Wave};
use psymetric_core::scale::{load_scale, OptionKind, Scale};
use psymetric_core::variant::VariantId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn bfi() -> Scale {
    load_scale(data("demo_bfi.toml")).expect("demo_bfi.toml loads")
}

pub fn mbti() -> Scale {
    load_scale(data("demo_mbti.toml")).expect("demo_mbti.toml loads")
}

/// Standard normal draw (Box-Muller).
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// `cols` columns of `n` draws whose sample means are 0, whose sample
/// covariances are exactly 0 and whose sample variances equal `variances`.
pub fn orthogonal_columns(rng: &mut ChaCha8Rng, n: usize, variances: &[f64]) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for &v in variances {
        let mut c: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let m = c.iter().sum::<f64>() / n as f64;
        c.iter_mut().for_each(|x| *x -= m);
        for prev in &cols {
            let dot: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
            let nn: f64 = prev.iter().map(|b| b * b).sum();
            c.iter_mut().zip(prev).for_each(|(a, b)| *a -= dot / nn * b);
        }
        let ss: f64 = c.iter().map(|x| x * x).sum::<f64>() / (n - 1) as f64;
        let k = (v / ss).sqrt();
        c.iter_mut().for_each(|x| *x *= k);
        cols.push(c);
    }
    cols
}

/// Labels for a likert scale so each dimension's keyed sum equals its
/// target, clamped to the attainable range. Items absent from `targets`
/// take the midpoint.
pub fn likert_sheet(scale: &Scale, targets: &BTreeMap<String, i64>) -> Vec<(usize, String)> {
    assert_eq!(scale.kind(), OptionKind::Likert);
    let mut out = Vec::new();
    for dim in &scale.dimensions {
        let items: Vec<_> = scale.items_in(&dim.id).collect();
        let n = items.len() as i64;
        let sum = targets.get(&dim.id).copied().unwrap_or(3 * n).clamp(n, 5 * n);
        let (base, rem) = (sum / n, sum % n);
        for (j, item) in items.iter().enumerate() {
            let keyed = base + i64::from((j as i64) < rem);
            let raw = if item.is_reverse() { 6 - keyed } else { keyed };
            out.push((item.index, scale.option_set.labels[raw as usize - 1].clone()));
        }
    }
    out.sort();
    out
}

/// Labels for a forced-choice scale so each dimension has exactly the
/// target number of pole-keyed answers.
pub fn forced_sheet(scale: &Scale, targets: &BTreeMap<String, usize>) -> Vec<(usize, String)> {
    assert_eq!(scale.kind(), OptionKind::ForcedChoice);
    let mut out = Vec::new();
    for dim in &scale.dimensions {
        let items: Vec<_> = scale.items_in(&dim.id).collect();
        let hits = targets.get(&dim.id).copied().unwrap_or(items.len() / 2).min(items.len());
        for (j, item) in items.iter().enumerate() {
            let key = item.pole_key.clone().expect("forced items carry a pole key");
            let label = if j < hits {
                key
            } else {
                scale.option_set.labels.iter().find(|l| **l != key).unwrap().clone()
            };
            out.push((item.index, label));
        }
    }
    out.sort();
    out
}

pub fn rows(
    participant: &str,
    wave: Wave,
    scale: &Scale,
    variant: VariantId,
    role: &str,
    sheet: &[(usize, String)],
) -> Vec<RecordedRow> {
    sheet
        .iter()
        .map(|(index, label)| RecordedRow {
            participant_id: participant.to_string(),
            wave,
            scale_id: scale.id.clone(),
            variant,
            role: role.to_string(),
            item_index: *index,
            label: label.clone(),
        })
        .collect()
}

/// Trapezoid integral of a density CSV written by the store.
pub fn density_area(text: &str) -> (usize, f64) {
    let pts: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("x,"))
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let area = pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum();
    (pts.len(), area)
}
