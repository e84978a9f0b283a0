//! Acceptance suite. One PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p psymetric-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::DateTime;
use psymetric_core::clock::ManualClock;
use psymetric_core::gateway::{
    Administrator, AnswerRule, AnswerStatus, BatteryRequest, ItemOverride, MemoryLog, RecordedDataset, RecordedRow,
    RefusalInjection, RespondentSpec, RunPolicy, RunRecord, ScriptSpec, ScriptedRespondent, Wave,
};
use psymetric_core::report::{Analysis, Store, TableKind};
use psymetric_core::role::RoleId;
use psymetric_core::scale::{load_scale, Scale};
use psymetric_core::scoring::{aggregate_runs, score_run, RunScore, ScoringPolicy, VarianceDivisor};
use psymetric_core::stats::{
    cohen_d_summary, icc, icc_all, levene, pearson, t_test_independent, t_test_summary, AnovaTable, GroupSummary,
    IccConfig, IccDefinition, IccModel, IccUnit, LeveneCenter, RatingMatrix, TTestRule,
};
use psymetric_core::study::{deviation_kind, deviation_role, run_study, DefaultFactory, DeviationKind, Group, StudyPlan};
use psymetric_core::variant::{render_scale, VariantId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{density_area, normal, orthogonal_columns};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Result<(), String> {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: got {got}, want {want} ± {tol}"))
    }
}

fn main() {
    let criteria: Vec<(&str, u64, fn() -> Check)> = vec![
        ("icc-formula-fidelity", 1, icc_fidelity),
        ("effect-size-fidelity", 1, effect_size_fidelity),
        ("t-statistic-fidelity", 1, t_fidelity),
        ("variant-golden-suite", 1, variant_golden),
        ("statistics-oracle-suite", 60, stats_oracles),
        ("pipeline-recovery", 60, pipeline_recovery),
        ("refusal-invalid-handling", 30, refusal_handling),
        ("retest-protocol", 30, retest_protocol),
        ("role-play-protocol", 10, roleplay_protocol),
        ("end-to-end-battery", 300, end_to_end),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(limit) => {
                Err(format!("{detail}; took {:.2}s, limit {limit}s", elapsed.as_secs_f64()))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {name} ({:.2}s) {detail}", elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2}s) {why}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- ICC

/// Subjects × 4 matrix whose two-way ANOVA has exactly the requested F.
fn matrix_with_f(target: f64, n: usize, k: usize, seed: u64) -> RatingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let am = a.iter().sum::<f64>() / n as f64;
    a.iter_mut().for_each(|x| *x -= am);
    let mut e: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| normal(&mut rng)).collect()).collect();
    let rm: Vec<f64> = e.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let cm: Vec<f64> = (0..k).map(|j| e.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let g = rm.iter().sum::<f64>() / n as f64;
    for (i, row) in e.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v - rm[i] - cm[j] + g;
        }
    }
    let ssa: f64 = a.iter().map(|x| x * x).sum();
    let sse: f64 = e.iter().flatten().map(|x| x * x).sum();
    let mse = sse / ((n - 1) * (k - 1)) as f64;
    let s = (target * mse * (n - 1) as f64 / (k as f64 * ssa)).sqrt();
    let shift = [0.0, 0.4, -0.3, 0.2, 0.1, -0.1];
    let values = (0..n)
        .map(|i| (0..k).map(|j| 40.0 + s * a[i] + shift[j % shift.len()] + e[i][j]).collect())
        .collect();
    RatingMatrix::from_rows(values).unwrap()
}

fn icc_fidelity() -> Check {
    let mut detail = Vec::new();
    for (f, single, average) in [(43.938, 0.915, 0.977), (51.873, 0.927, 0.981)] {
        let m = matrix_with_f(f, 60, 4, f.to_bits());
        let anova = AnovaTable::from_matrix(&m).map_err(|e| e.to_string())?;
        close(anova.f(), f, 1e-9 * f, "constructed F")?;
        let config = IccConfig {
            model: IccModel::TwoWayMixed,
            definition: IccDefinition::Consistency,
            unit: IccUnit::Average,
            alpha: 0.05,
        };
        let (s, a) = icc_all(&m, &config).map_err(|e| e.to_string())?;
        close(s.estimate, single, 0.001, "consistency single")?;
        close(a.estimate, average, 0.001, "consistency average")?;
        close(s.statistic, f, 1e-9 * f, "reported F")?;
        detail.push(format!("F={f}: {:.5}/{:.5}", s.estimate, a.estimate));
    }
    Ok(detail.join(", "))
}

fn effect_size_fidelity() -> Check {
    let gpt = GroupSummary { mean: 23.694, sd: 2.559, n: 100 };
    let deepseek = GroupSummary { mean: 25.776, sd: 1.918, n: 100 };
    let d = cohen_d_summary(gpt, deepseek).map_err(|e| e.to_string())?;
    let t = t_test_summary(deepseek, gpt, TTestRule::Student, 0.05).map_err(|e| e.to_string())?;
    close(d, 0.921, 0.001, "d")?;
    close(t.md, 2.082, 0.001, "MD")?;
    Ok(format!("d={d:.4} MD={:.4}", t.md))
}

/// `n` values with exactly the given sample mean and sd.
fn group(mean: f64, sd: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z = orthogonal_columns(rng, n, &[1.0]).remove(0);
    z.into_iter().map(|v| mean + sd * v).collect()
}

fn t_fidelity() -> Check {
    let n = 15;
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut detail = Vec::new();
    // (MD, SE, t, variances differ)
    let rows = [
        (2.6667, 2.1434, 1.244, true),
        (1.9667, 1.9025, 1.034, false),
        (2.3000, 1.8310, 1.256, false),
        (2.4000, 1.8256, 1.315, false),
    ];
    for (md, se, want, hetero) in rows {
        let (intro, extro) = if hetero {
            // s1 = 3 s2 with s1^2/n + s2^2/n = SE^2
            let s2 = (se * se * n as f64 / 10.0).sqrt();
            (group(30.0, s2, n, &mut rng), group(30.0 + md, 3.0 * s2, n, &mut rng))
        } else {
            let sd = se / (2.0 / n as f64).sqrt();
            let pattern = group(0.0, sd, n, &mut rng);
            (
                pattern.iter().map(|v| 30.0 + v).collect::<Vec<_>>(),
                pattern.iter().map(|v| 30.0 + md + v).collect(),
            )
        };
        let t = t_test_independent(&extro, &intro, TTestRule::Auto, 0.05).map_err(|e| e.to_string())?;
        ensure!(t.is_welch() == hetero, "MD {md}: welch={} expected {hetero}", t.is_welch());
        close(t.md, md, 1e-9, "MD")?;
        close(t.se, se, 1e-9, "SE")?;
        close(t.result.statistic, want, 0.001, "t")?;
        detail.push(format!("{:.4}", t.result.statistic));
    }
    Ok(format!("t = {}", detail.join(", ")))
}

// ---------------------------------------------------------------- variants

fn variant_golden() -> Check {
    let likert = load_scale(common::fixture("golden_likert.toml")).map_err(|e| e.to_string())?;
    let forced = load_scale(common::fixture("golden_forced.toml")).map_err(|e| e.to_string())?;
    let stem = |scale: &Scale, v: VariantId, i: usize| -> Result<(String, Vec<String>), String> {
        let r = render_scale(scale, v).map_err(|e| e.to_string())?;
        let item = r.items.iter().find(|it| it.source_index == i).ok_or(format!("item {i}"))?;
        Ok((item.stem.clone(), item.anchors.clone()))
    };
    let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let cases: Vec<(&Scale, VariantId, usize, &str, Vec<String>)> = vec![
        (
            &likert,
            VariantId::V1,
            1,
            "If there is a person who is talkative and sociable, how similar do you think you are to that person?",
            words(&["Very Dissimilar", "Somewhat Dissimilar", "Neutral", "Somewhat Similar", "Very Similar"]),
        ),
        (
            &likert,
            VariantId::V2,
            1,
            "If I describe you as 'you are talkative and sociable,' do you think it is accurate?",
            words(&["Very Inaccurate", "Somewhat Inaccurate", "Neutral", "Somewhat Accurate", "Very Accurate"]),
        ),
        (
            &likert,
            VariantId::V3,
            1,
            "I _ am a talkative and sociable person.",
            words(&["Never", "Rarely", "Occasionally", "Often", "Always"]),
        ),
        (
            &likert,
            VariantId::V3,
            2,
            "I _ take the lead and act like a leader.",
            words(&["Never", "Rarely", "Occasionally", "Often", "Always"]),
        ),
        (
            &likert,
            VariantId::V3,
            3,
            "I _ am a person who lacks imagination.",
            words(&["Never", "Rarely", "Occasionally", "Often", "Always"]),
        ),
        (
            &forced,
            VariantId::V1,
            1,
            "There are two people. When A plans to go somewhere, they plan ahead before setting off; when B plans to go somewhere, they go first and then adapt as needed. Which person do you resemble more?",
            words(&["More similar to A", "More similar to B"]),
        ),
        (
            &forced,
            VariantId::V1,
            45,
            "There are two people. A is more inclined to prefer words like \"determined\"; B is more inclined to prefer words like \"enthusiastic.\" Which person do you resemble more?",
            words(&["More similar to A", "More similar to B"]),
        ),
        (
            &forced,
            VariantId::V2,
            1,
            "There are two descriptions about you: one is \u{201c}When you plan to go somewhere, you plan ahead before setting off\u{201d}; the other is \u{201c}When you plan to go somewhere, you go first and then adapt as needed.\u{201d} Which description is more accurate?",
            words(&["A is more accurate", "B is more accurate"]),
        ),
    ];
    let n = cases.len();
    for (scale, v, i, want, anchors) in cases {
        let (got, got_anchors) = stem(scale, v, i)?;
        ensure!(got.as_bytes() == want.as_bytes(), "{} {v} item {i}:\n got  {got:?}\n want {want:?}", scale.id);
        ensure!(got_anchors == anchors, "{} {v} item {i} anchors {got_anchors:?}", scale.id);
    }
    Ok(format!("{n} renderings byte-identical"))
}

// ---------------------------------------------------------------- oracles

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    (1..=order)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (order as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=order {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

struct Quadrature {
    rule: Vec<(f64, f64)>,
    panels: usize,
}

impl Quadrature {
    fn new() -> Self {
        Self { rule: gauss_legendre(20), panels: 48 }
    }

    /// ∫_a^∞ f(x) dx through x = a + u / (1 - u).
    fn tail(&self, a: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = 1.0 / self.panels as f64;
        let mut total = 0.0;
        for p in 0..self.panels {
            let (lo, hi) = (p as f64 * h, (p + 1) as f64 * h);
            for &(x, w) in &self.rule {
                let u = 0.5 * (hi - lo) * x + 0.5 * (hi + lo);
                let jac = 1.0 / ((1.0 - u) * (1.0 - u));
                total += 0.5 * (hi - lo) * w * f(a + u / (1.0 - u)) * jac;
            }
        }
        total
    }

    /// Two-tailed Student t p-value by integrating the unnormalized density.
    fn t_p(&self, t: f64, df: f64) -> f64 {
        let g = |x: f64| (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        self.tail(t.abs(), g) / self.tail(0.0, g)
    }
}

struct Oracle {
    msr: f64,
    msc: f64,
    mse: f64,
}

fn brute_anova(m: &[Vec<f64>]) -> Oracle {
    let n = m.len();
    let k = m[0].len();
    let grand = m.iter().flatten().sum::<f64>() / (n * k) as f64;
    let row: Vec<f64> = m.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let col: Vec<f64> = (0..k).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut ssr = 0.0;
    let mut ssc = 0.0;
    let mut sse = 0.0;
    for i in 0..n {
        for j in 0..k {
            ssr += (row[i] - grand).powi(2);
            ssc += (col[j] - grand).powi(2);
            sse += (m[i][j] - row[i] - col[j] + grand).powi(2);
        }
    }
    Oracle {
        msr: ssr / (n - 1) as f64,
        msc: ssc / (k - 1) as f64,
        mse: sse / ((n - 1) * (k - 1)) as f64,
    }
}

fn stats_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_icc: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(3..40);
        let k = rng.gen_range(2..8);
        let spread = rng.gen_range(0.0..3.0);
        let values: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let subject = spread * normal(&mut rng);
                (0..k).map(|j| subject + 0.3 * j as f64 + normal(&mut rng)).collect()
            })
            .collect();
        let o = brute_anova(&values);
        let (nf, kf) = (n as f64, k as f64);
        let expected = [
            (IccDefinition::Consistency, IccUnit::Single, (o.msr - o.mse) / (o.msr + (kf - 1.0) * o.mse)),
            (IccDefinition::Consistency, IccUnit::Average, (o.msr - o.mse) / o.msr),
            (
                IccDefinition::AbsoluteAgreement,
                IccUnit::Single,
                (o.msr - o.mse) / (o.msr + (kf - 1.0) * o.mse + kf * (o.msc - o.mse) / nf),
            ),
            (
                IccDefinition::AbsoluteAgreement,
                IccUnit::Average,
                (o.msr - o.mse) / (o.msr + (o.msc - o.mse) / nf),
            ),
        ];
        let m = RatingMatrix::from_rows(values).unwrap();
        for model in [IccModel::TwoWayRandom, IccModel::TwoWayMixed] {
            for (definition, unit, want) in expected {
                let got = icc(&m, &IccConfig { model, definition, unit, alpha: 0.05 }).map_err(|e| e.to_string())?;
                let err = (got.estimate - want).abs();
                worst_icc = worst_icc.max(err);
                ensure!(err <= 1e-9, "{model:?} {definition:?} {unit:?}: {} vs {want}", got.estimate);
            }
        }
    }

    let q = Quadrature::new();
    let mut worst_p: f64 = 0.0;
    let mut check = |what: &str, got: f64, want: f64| -> Result<(), String> {
        let err = (got - want).abs();
        worst_p = worst_p.max(err);
        ensure!(err <= 1e-6, "{what}: p {got} vs oracle {want}");
        Ok(())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4048);
    for _ in 0..1000 {
        let n1 = rng.gen_range(5..50);
        let n2 = rng.gen_range(5..50);
        let rho = rng.gen_range(-0.9..0.9);
        let shift = rng.gen_range(-1.0..1.0);
        let scale = rng.gen_range(0.3..3.0);
        let a: Vec<f64> = (0..n1).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..n2).map(|_| shift + scale * normal(&mut rng)).collect();
        let y: Vec<f64> = a.iter().map(|x| rho * x + (1.0 - rho * rho).sqrt() * normal(&mut rng)).collect();

        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };

        // Pearson
        let (ma, my) = (mean(&a), mean(&y));
        let sxy: f64 = a.iter().zip(&y).map(|(p, q)| (p - ma) * (q - my)).sum();
        let sxx: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
        let syy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        let r = sxy / (sxx * syy).sqrt();
        let df = (n1 - 2) as f64;
        let got = pearson(&a, &y).map_err(|e| e.to_string())?;
        check("pearson", got.p, q.t_p(r * (df / (1.0 - r * r)).sqrt(), df))?;

        // Student and Welch
        let (va, vb) = (var(&a), var(&b));
        let (f1, f2) = (n1 as f64, n2 as f64);
        let pooled = ((f1 - 1.0) * va + (f2 - 1.0) * vb) / (f1 + f2 - 2.0);
        let t_student = (mean(&a) - mean(&b)) / (pooled * (1.0 / f1 + 1.0 / f2)).sqrt();
        let got = t_test_independent(&a, &b, TTestRule::Student, 0.05).map_err(|e| e.to_string())?;
        check("student", got.result.p, q.t_p(t_student, f1 + f2 - 2.0))?;

        let (qa, qb) = (va / f1, vb / f2);
        let t_welch = (mean(&a) - mean(&b)) / (qa + qb).sqrt();
        let df_welch = (qa + qb).powi(2) / (qa * qa / (f1 - 1.0) + qb * qb / (f2 - 1.0));
        let got = t_test_independent(&a, &b, TTestRule::Welch, 0.05).map_err(|e| e.to_string())?;
        check("welch", got.result.p, q.t_p(t_welch, df_welch))?;

        // Levene: one-way ANOVA on absolute deviations. With two groups
        // F(1, N-2) is the square of t on N-2 df.
        let za: Vec<f64> = a.iter().map(|x| (x - mean(&a)).abs()).collect();
        let zb: Vec<f64> = b.iter().map(|x| (x - mean(&b)).abs()).collect();
        let zall: Vec<f64> = za.iter().chain(&zb).copied().collect();
        let zbar = mean(&zall);
        let between = f1 * (mean(&za) - zbar).powi(2) + f2 * (mean(&zb) - zbar).powi(2);
        let within: f64 = za.iter().map(|z| (z - mean(&za)).powi(2)).sum::<f64>()
            + zb.iter().map(|z| (z - mean(&zb)).powi(2)).sum::<f64>();
        let dfw = f1 + f2 - 2.0;
        let w = between / (within / dfw);
        let got = levene(&[&a, &b], LeveneCenter::Mean).map_err(|e| e.to_string())?;
        check("levene", got.p, q.t_p(w.sqrt(), dfw))?;
    }
    Ok(format!("max ICC error {worst_icc:.2e}, max p error {worst_p:.2e}"))
}

// ---------------------------------------------------------------- pipeline

fn manual_admin(policy: RunPolicy) -> Administrator {
    let clock = Arc::new(ManualClock::new(DateTime::from_timestamp(1_720_000_000, 0).unwrap()));
    Administrator::new(policy).with_clock(clock)
}

fn score_all(records: &[RunRecord], scale: &Scale) -> Vec<RunScore> {
    records
        .iter()
        .map(|r| score_run(r, scale, &ScoringPolicy::default()).unwrap())
        .collect()
}

fn pipeline_recovery() -> Check {
    let scale = common::bfi();
    let rendered = vec![render_scale(&scale, VariantId::Original).unwrap()];
    let weights = vec![0.10, 0.20, 0.30, 0.25, 0.15];
    let script = ScriptSpec {
        answer: AnswerRule::Categorical { weights: weights.clone() },
        ..ScriptSpec::default()
    };
    let spec = RespondentSpec::scripted("categorical", script.clone(), 700);
    let battery = |admin: &Administrator| {
        admin
            .administer_battery(
                &rendered,
                &ScriptedRespondent::new("categorical", script.clone()),
                &BatteryRequest::for_spec("recovery", &spec, 100),
            )
            .unwrap()
    };
    let records = battery(&manual_admin(RunPolicy::default()));
    let scores = score_all(&records, &scale);

    let mean_v: f64 = weights.iter().enumerate().map(|(i, w)| w * (i + 1) as f64).sum();
    let var_v: f64 = weights.iter().enumerate().map(|(i, w)| w * ((i + 1) as f64 - mean_v).powi(2)).sum();
    let mut worst: f64 = 0.0;
    for dim in &scale.dimensions {
        let items: Vec<_> = scale.items_in(&dim.id).collect();
        let expected: f64 = items.iter().map(|i| if i.is_reverse() { 6.0 - mean_v } else { mean_v }).sum();
        let se = (items.len() as f64 * var_v / 100.0).sqrt();
        let agg = aggregate_runs(&scores, &dim.id, VarianceDivisor::Sample).map_err(|e| e.to_string())?;
        ensure!(agg.n == 100, "{}: {} runs", dim.id, agg.n);
        let z = (agg.mean - expected) / se;
        worst = worst.max(z.abs());
        ensure!(z.abs() <= 3.0, "{}: mean {} expected {expected} ({z:.2} SE)", dim.id, agg.mean);
    }

    let fixed = ScriptSpec {
        answer: AnswerRule::Fixed { label: "4".into() },
        ..ScriptSpec::default()
    };
    let fixed_runs = manual_admin(RunPolicy::default())
        .administer_battery(
            &rendered,
            &ScriptedRespondent::new("fixed", fixed.clone()),
            &BatteryRequest::for_spec("fixed", &RespondentSpec::scripted("fixed", fixed, 1), 100),
        )
        .unwrap();
    let fixed_scores = score_all(&fixed_runs, &scale);
    for dim in &scale.dimensions {
        let agg = aggregate_runs(&fixed_scores, &dim.id, VarianceDivisor::Sample).unwrap();
        ensure!(agg.variance == 0.0, "{} variance {}", dim.id, agg.variance);
    }

    let first = serde_json::to_vec(&records).unwrap();
    let again = serde_json::to_vec(&battery(&manual_admin(RunPolicy::default()))).unwrap();
    let serial = serde_json::to_vec(&battery(&manual_admin(RunPolicy { parallelism: 1, ..RunPolicy::default() }))).unwrap();
    ensure!(first == again && first == serial, "seeded replay differs");

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut stored = Vec::new();
    for d in &dirs {
        let store = Store::open(d.path()).unwrap();
        store.persist_battery("recovery", &records, &scores, std::slice::from_ref(&spec)).unwrap();
        let e = store.manifest().unwrap().batteries["recovery"].clone();
        stored.push((
            std::fs::read(d.path().join(&e.runs_file)).unwrap(),
            std::fs::read(d.path().join(&e.scores_file)).unwrap(),
        ));
    }
    ensure!(stored[0] == stored[1], "persisted files differ between replays");
    Ok(format!("max |z| {worst:.2}, fixed variance 0, replay identical ({} bytes)", first.len()))
}

fn refusal_handling() -> Check {
    let scale = common::mbti();
    let rendered = vec![render_scale(&scale, VariantId::Original).unwrap()];
    let n_items = scale.items.len();
    let c_items: Vec<usize> = (3..=83).step_by(10).collect();
    let mut overrides: Vec<ItemOverride> = c_items
        .iter()
        .map(|&index| ItemOverride { index, outputs: vec!["C".into()] })
        .collect();
    overrides.push(ItemOverride { index: 5, outputs: vec!["C".into(), "A".into()] });
    overrides.push(ItemOverride { index: 7, outputs: vec!["I'm sorry, I can't answer that.".into(), "B".into()] });
    let script = ScriptSpec {
        answer: AnswerRule::Cycle,
        overrides,
        refusal: Some(RefusalInjection {
            period: Some(10),
            rate: None,
            attempts: None,
            text: "As an AI, I don't have personal preferences.".into(),
        }),
        ..ScriptSpec::default()
    };
    let policy = RunPolicy { max_retries: 2, validity_threshold: 0.8, ..RunPolicy::default() };
    let max_attempts = policy.max_retries + 1;
    let log = Arc::new(MemoryLog::default());
    let admin = manual_admin(policy.clone()).with_log(log.clone());
    let spec = RespondentSpec::scripted("refuser", script.clone(), 3);
    let n_runs = 100;
    let records = admin
        .administer_battery(&rendered, &ScriptedRespondent::new("refuser", script), &BatteryRequest::for_spec("refusals", &spec, n_runs))
        .map_err(|e| e.to_string())?;

    // independent model of the injection plan
    let mut expected_invalid = 0;
    let mut expected_log = 0usize;
    let (mut refusals, mut invalid_labels) = (0, 0);
    for (k, run) in records.iter().enumerate() {
        let mut answered = 0;
        for item in 1..=n_items {
            let (status, attempts) = if c_items.contains(&item) {
                (AnswerStatus::InvalidOption, max_attempts)
            } else if item == 5 || item == 7 {
                (AnswerStatus::Answered, 2)
            } else if (item + k) % 10 == 0 {
                (AnswerStatus::Refusal, max_attempts)
            } else {
                (AnswerStatus::Answered, 1)
            };
            let got = run.response(item).ok_or(format!("run {k} item {item} missing"))?;
            ensure!(
                got.status == status && got.attempts == attempts,
                "run {k} item {item}: {:?}/{} expected {status:?}/{attempts}",
                got.status,
                got.attempts
            );
            expected_log += attempts as usize;
            match status {
                AnswerStatus::Answered => answered += 1,
                AnswerStatus::Refusal => refusals += 1,
                _ => invalid_labels += 1,
            }
        }
        let valid = answered as f64 / n_items as f64 >= 0.8;
        ensure!(run.valid == valid, "run {k} valid={} expected {valid}", run.valid);
        expected_invalid += usize::from(!valid);
        let c = run.counts();
        ensure!(c.total() == n_items, "run {k} counts {} items", c.total());
    }
    let got_refusals: usize = records.iter().map(|r| r.counts().refusal).sum();
    let got_invalid: usize = records.iter().map(|r| r.counts().invalid_option).sum();
    let got_unparseable: usize = records.iter().map(|r| r.counts().unparseable).sum();
    ensure!(got_refusals == refusals, "refusals {got_refusals} vs {refusals}");
    ensure!(got_invalid == invalid_labels, "invalid labels {got_invalid} vs {invalid_labels}");
    ensure!(got_unparseable == 0, "{got_unparseable} unparseable");
    ensure!(log.entries().len() == expected_log, "log lines {} vs {expected_log}", log.entries().len());
    let invalid_runs = records.iter().filter(|r| !r.valid).count();
    ensure!(invalid_runs == expected_invalid, "invalid runs {invalid_runs} vs {expected_invalid}");
    // an invalid run never contributes a score
    for (run, score) in records.iter().zip(score_all(&records, &scale)) {
        ensure!(run.valid || !score.valid, "{} scored although invalid", run.run_id);
    }
    ensure!(expected_invalid > 0 && expected_invalid < n_runs, "injection plan should invalidate some runs");
    Ok(format!(
        "{refusals} refusals, {invalid_labels} out-of-set labels, {expected_log} exchanges, {invalid_runs}/{n_runs} runs invalidated"
    ))
}

// ---------------------------------------------------------------- protocols

/// Writes a plan and its dataset, runs it against a fresh store.
fn run_plan(dir: &Path, plan_toml: &str, rows: &[RecordedRow]) -> Result<(Store, psymetric_core::study::StudyOutcome), String> {
    if !rows.is_empty() {
        RecordedDataset::write_csv(rows, dir.join("humans.csv")).map_err(|e| e.to_string())?;
    }
    let plan = StudyPlan::from_toml(plan_toml).map_err(|e| e.to_string())?;
    let store = Store::open(dir.join("store")).map_err(|e| e.to_string())?;
    let outcome = run_study(&plan, dir, &store, &DefaultFactory).map_err(|e| e.to_string())?;
    Ok((store, outcome))
}

fn toml_path(p: &Path) -> String {
    p.display().to_string().replace('\\', "/")
}

fn retest_rows(scale: &Scale, n: usize, seed: u64, identical: bool) -> Vec<RecordedRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_dim = BTreeMap::new();
    for d in &scale.dimensions {
        per_dim.insert(d.id.clone(), orthogonal_columns(&mut rng, n, &[9.0, 1.0, 1.0]));
    }
    let mut rows = Vec::new();
    for s in 0..n {
        let id = format!("h{s:02}");
        for (w, wave) in [Wave::T1, Wave::T2].into_iter().enumerate() {
            let noise_col = if identical { 1 } else { 1 + w };
            let targets: BTreeMap<String, i64> = per_dim
                .iter()
                .map(|(d, cols)| (d.clone(), (36.0 + cols[0][s] + cols[noise_col][s]).round() as i64))
                .collect();
            rows.extend(common::rows(&id, wave, scale, VariantId::Original, "", &common::likert_sheet(scale, &targets)));
        }
    }
    rows
}

fn retest_protocol() -> Check {
    let scale = common::bfi();
    let mut detail = Vec::new();
    for (identical, label) in [(false, "noisy"), (true, "identical")] {
        let dir = tempfile::tempdir().unwrap();
        let plan = format!(
            "id = \"retest-{label}\"\nstudy = \"retest\"\n[[scales]]\npath = \"{}\"\nvariants = [\"original\"]\n[human]\ndataset = \"humans.csv\"\n",
            toml_path(&common::data("demo_bfi.toml"))
        );
        let (store, outcome) = run_plan(dir.path(), &plan, &retest_rows(&scale, 60, 90, identical))?;
        let Analysis::Retest(t) = store.load_analysis(&outcome.analysis_ids[0]).map_err(|e| e.to_string())? else {
            return Err("expected a retest analysis".into());
        };
        ensure!(t.cells.len() == 5, "{} cells", t.cells.len());
        let mut rs = Vec::new();
        for c in &t.cells {
            ensure!(c.n_subjects == 60, "{} subjects", c.n_subjects);
            let r = c.result.estimate;
            if identical {
                ensure!(r == 1.0, "{}: r = {r} on identical waves", c.dimension);
            } else {
                close(r, 0.9, 0.05, &format!("{} r", c.dimension))?;
            }
            rs.push(format!("{}={r:.3}", c.dimension));
        }
        detail.push(format!("{label}: {}", rs.join(" ")));
    }
    Ok(detail.join("; "))
}

fn roleplay_protocol() -> Check {
    let expected = |g: Group, r: &RoleId| match (g, r) {
        (Group::Introvert, RoleId::LinDaiyu) | (Group::Extrovert, RoleId::SunWukong) => Some(DeviationKind::MinAmplitude),
        (Group::Introvert, RoleId::VeryExtroverted) | (Group::Extrovert, RoleId::VeryIntroverted) => {
            Some(DeviationKind::MaxAmplitude)
        }
        _ => None,
    };
    let mut cells = 0;
    for g in [Group::Introvert, Group::Extrovert] {
        for r in RoleId::BUILT_IN.iter() {
            let got = deviation_kind(g, r);
            ensure!(got == expected(g, r), "{g:?} × {r}: {got:?}");
            if let Some(kind) = got {
                ensure!(deviation_role(g, kind).as_ref() == Some(r), "inverse mapping for {g:?} {kind:?}");
            }
            cells += 1;
        }
        for kind in DeviationKind::ALL {
            ensure!(deviation_role(g, kind).is_some(), "{g:?} {kind:?} unmapped");
        }
    }
    for r in RoleId::BUILT_IN.iter() {
        ensure!(deviation_kind(Group::ExcludedTie, r).is_none(), "tie group mapped for {r}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut welch, mut student) = (0, 0);
    for i in 0..400 {
        let n1 = 10 + i % 25;
        let n2 = 10 + (i * 7) % 25;
        let ratio = 1.0 + (i % 40) as f64 / 10.0;
        let a: Vec<f64> = (0..n1).map(|_| 30.0 + normal(&mut rng)).collect();
        let b: Vec<f64> = (0..n2).map(|_| 31.0 + ratio * normal(&mut rng)).collect();
        let lev = levene(&[&a, &b], LeveneCenter::Mean).unwrap();
        let t = t_test_independent(&a, &b, TTestRule::Auto, 0.05).unwrap();
        ensure!(t.is_welch() == (lev.p < 0.05), "case {i}: levene p {} welch {}", lev.p, t.is_welch());
        let pinned = t_test_independent(&a, &b, if t.is_welch() { TTestRule::Welch } else { TTestRule::Student }, 0.05).unwrap();
        ensure!(pinned.result == t.result, "case {i}: auto result differs from pinned rule");
        if t.is_welch() {
            welch += 1;
        } else {
            student += 1;
        }
    }
    ensure!(welch > 50 && student > 50, "grid should exercise both rules: {welch}/{student}");
    Ok(format!("{cells} grid cells; Welch {welch}, Student {student} of 400 group pairs"))
}

// ---------------------------------------------------------------- end to end

fn human_crossvariant_rows(bfi: &Scale, n: usize) -> Vec<RecordedRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rows = Vec::new();
    for s in 0..n {
        let traits: BTreeMap<String, f64> = bfi.dimensions.iter().map(|d| (d.id.clone(), 4.0 * normal(&mut rng))).collect();
        for v in VariantId::for_kind(bfi.kind()) {
            let targets = traits
                .iter()
                .map(|(d, t)| (d.clone(), (36.0 + t + normal(&mut rng)).round() as i64))
                .collect();
            rows.extend(common::rows(&format!("p{s:02}"), Wave::T1, bfi, v, "", &common::likert_sheet(bfi, &targets)));
        }
    }
    rows
}

fn human_roleplay_rows(bfi: &Scale, mbti: &Scale, n: usize) -> Vec<RecordedRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rows = Vec::new();
    for s in 0..n {
        let id = format!("q{s:02}");
        let extro = s % 2 == 0;
        let pole = BTreeMap::from([("EI".to_string(), if extro { 15 } else { 6 })]);
        rows.extend(common::rows(&id, Wave::T1, mbti, VariantId::Original, "", &common::forced_sheet(mbti, &pole)));
        let base = if extro { 44.0 } else { 28.0 };
        let conditions: [(&str, f64); 5] = [
            ("", 0.0),
            ("lin_daiyu", -8.0),
            ("sun_wukong", 8.0),
            ("very_introverted", -14.0),
            ("very_extroverted", 14.0),
        ];
        for v in VariantId::for_kind(bfi.kind()) {
            for (role, shift) in conditions {
                let spread = if extro { 4.0 } else { 1.5 };
                let e = (base + shift + spread * normal(&mut rng)).round() as i64;
                let targets = BTreeMap::from([("E".to_string(), e)]);
                rows.extend(common::rows(&id, Wave::T1, bfi, v, role, &common::likert_sheet(bfi, &targets)));
            }
        }
    }
    rows
}

fn end_to_end() -> Check {
    let bfi = common::bfi();
    let mbti = common::mbti();
    let scales = format!(
        "[[scales]]\npath = \"{}\"\n[[scales]]\npath = \"{}\"\n",
        toml_path(&common::data("demo_bfi.toml")),
        toml_path(&common::data("demo_mbti.toml"))
    );

    // four scripted respondents, every form of both scales, 100 runs each
    let dir = tempfile::tempdir().unwrap();
    let mut plan = format!("id = \"e2e\"\nstudy = \"retest\"\nn_runs = 100\nbase_seed = 5\n{scales}");
    let weights = [[0.05, 0.15, 0.3, 0.3, 0.2], [0.3, 0.3, 0.2, 0.1, 0.1], [0.1, 0.5, 0.3, 0.1, 0.0], [0.2, 0.2, 0.2, 0.2, 0.2]];
    for (i, w) in weights.iter().enumerate() {
        let spec = RespondentSpec::scripted(
            format!("model-{i}"),
            ScriptSpec {
                answer: AnswerRule::Categorical { weights: w.to_vec() },
                ..ScriptSpec::default()
            },
            100 * i as u64,
        );
        std::fs::write(dir.path().join(format!("m{i}.toml")), spec.to_toml()).unwrap();
        plan.push_str(&format!("[[respondents]]\npath = \"m{i}.toml\"\n"));
    }
    let (store, outcome) = run_plan(dir.path(), &plan, &[])?;
    let runs: usize = outcome
        .battery_ids
        .iter()
        .map(|b| store.load_runs(b).map(|r| r.len()).unwrap_or(0))
        .sum();
    ensure!(runs == 4 * 7 * 100, "{runs} runs stored");
    let tables = store.emit_tables(&outcome.analysis_ids[0], TableKind::LlmDistribution).map_err(|e| e.to_string())?;
    let bfi_cols: Vec<String> = bfi.dimensions.iter().flat_map(|d| [format!("{} Mean", d.id), format!("{} Variance", d.id)]).collect();
    let mbti_cols: Vec<String> = mbti.dimensions.iter().flat_map(|d| [format!("{} Mean", d.id), format!("{} Variance", d.id)]).collect();
    ensure!(tables.len() == 2, "{} distribution tables", tables.len());
    ensure!(tables[0].0.columns == bfi_cols, "BFI columns {:?}", tables[0].0.columns);
    ensure!(tables[0].0.rows.len() == 16, "BFI rows {}", tables[0].0.rows.len());
    ensure!(tables[1].0.columns == mbti_cols, "MBTI columns {:?}", tables[1].0.columns);
    ensure!(tables[1].0.rows.len() == 12, "MBTI rows {}", tables[1].0.rows.len());
    ensure!(outcome.notes.is_empty(), "notes: {:?}", outcome.notes);
    ensure!(outcome.density_series.len() == 4 * (4 * 5 + 3 * 4), "{} density series", outcome.density_series.len());
    let mut worst: f64 = 0.0;
    for p in &outcome.density_series {
        let (points, area) = density_area(&std::fs::read_to_string(p).unwrap());
        ensure!(points == 201, "{}: {points} points", p.display());
        worst = worst.max((area - 1.0).abs());
    }
    ensure!(worst <= 1e-3, "density area off by {worst}");

    // humans across forms
    let dir = tempfile::tempdir().unwrap();
    let plan = format!(
        "id = \"e2e-cv\"\nstudy = \"cross_variant\"\n[[scales]]\npath = \"{}\"\n[human]\ndataset = \"humans.csv\"\n",
        toml_path(&common::data("demo_bfi.toml"))
    );
    let (store, outcome) = run_plan(dir.path(), &plan, &human_crossvariant_rows(&bfi, 60))?;
    let (icc_table, _) = store.emit_table(&outcome.analysis_ids[0], TableKind::Icc).map_err(|e| e.to_string())?;
    ensure!(icc_table.columns == ["ICC", "95% CI", "F", "P"], "ICC columns {:?}", icc_table.columns);
    ensure!(icc_table.rows.len() == 10, "ICC rows {}", icc_table.rows.len());
    ensure!(
        icc_table.rows[0].label.ends_with("Single Measurement") && icc_table.rows[1].label.ends_with("Average Measurement"),
        "ICC row labels {} / {}",
        icc_table.rows[0].label,
        icc_table.rows[1].label
    );

    // humans in role play
    let dir = tempfile::tempdir().unwrap();
    let plan = format!(
        "id = \"e2e-rp\"\nstudy = \"role_play\"\n\
         roles = [\"lin_daiyu\", \"sun_wukong\", \"very_introverted\", \"very_extroverted\"]\n\
         focal = [{{ scale_id = \"demo-bfi\", dimension = \"E\" }}]\n\
         [[scales]]\npath = \"{}\"\n[[scales]]\npath = \"{}\"\nvariants = [\"original\"]\n\
         [human]\ndataset = \"humans.csv\"\ngrouping = {{ scale_id = \"demo-mbti\", dimension = \"EI\" }}\n",
        toml_path(&common::data("demo_bfi.toml")),
        toml_path(&common::data("demo_mbti.toml"))
    );
    let (store, outcome) = run_plan(dir.path(), &plan, &human_roleplay_rows(&bfi, &mbti, 30))?;
    let (t_table, _) = store.emit_table(&outcome.analysis_ids[0], TableKind::Ttest).map_err(|e| e.to_string())?;
    ensure!(
        t_table.columns == ["Levene's Test", "t-test", "MD", "SE", "95%CI", "P"],
        "t-test columns {:?}",
        t_table.columns
    );
    ensure!(!t_table.rows.is_empty(), "no t-test rows");
    Ok(format!(
        "{runs} runs, {} density curves (max area error {worst:.1e}), {} ICC rows, {} t-test rows",
        4 * 32,
        icc_table.rows.len(),
        t_table.rows.len()
    ))
}
