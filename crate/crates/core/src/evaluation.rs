//! Test metrics, aggregation over seeded repetitions, and plot-ready
//! exports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FatigueRecord, SNCurve};
use crate::model::{ModelError, TrainedModel};

/// Guards the R² and MRE denominators.
pub const METRIC_EPS: f64 = 1e-12;

/// Dense points added to each exported curve between its smallest and
/// largest observed stress amplitude.
pub const DEFAULT_DENSE_POINTS: usize = 50;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numeric error at index {index}: {detail}")]
    Numeric { index: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

fn check_lengths(y_true: &[f64], y_pred: &[f64], min: usize) -> Result<(), EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::Argument(format!(
            "length mismatch: {} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < min {
        return Err(EvalError::Argument(format!("need at least {min} values, got {}", y_true.len())));
    }
    Ok(())
}

/// Coefficient of determination with `METRIC_EPS` added to the total sum of
/// squares.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred, 2)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p) * (y - p)).sum();
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    Ok(1.0 - ss_res / (ss_tot + METRIC_EPS))
}

/// Mean absolute error in log₁₀ cycles.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true, y_pred, 1)?;
    Ok(y_true.iter().zip(y_pred).map(|(y, p)| (y - p).abs()).sum::<f64>() / y_true.len() as f64)
}

/// Mean relative error in raw cycles: both inputs are log₁₀ values and are
/// exponentiated first.
pub fn mre(y_true_log: &[f64], y_pred_log: &[f64]) -> Result<f64, EvalError> {
    check_lengths(y_true_log, y_pred_log, 1)?;
    let mut total = 0.0;
    for (i, (y, p)) in y_true_log.iter().zip(y_pred_log).enumerate() {
        let (cy, cp) = (10f64.powf(*y), 10f64.powf(*p));
        if !cy.is_finite() || !cp.is_finite() {
            return Err(EvalError::Numeric {
                index: i,
                detail: format!("10^{y} or 10^{p} overflows"),
            });
        }
        total += (cy - cp).abs() / (cy.abs() + METRIC_EPS);
    }
    Ok(total / y_true_log.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub r2: f64,
    pub mae: f64,
    pub mre: f64,
}

impl MetricSet {
    pub fn compute(y_true: &[f64], y_pred: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            r2: r_squared(y_true, y_pred)?,
            mae: mae(y_true, y_pred)?,
            mre: mre(y_true, y_pred)?,
        })
    }

    fn to_array(self) -> [f64; 3] {
        [self.r2, self.mae, self.mre]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self {
            r2: a[0],
            mae: a[1],
            mre: a[2],
        }
    }
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Stress amplitudes at which a test curve is evaluated: its observed
/// values (with targets) merged with an evenly spaced dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGrid {
    pub curve_id: u32,
    pub material: FatigueRecord,
    pub sigma_a: Vec<f64>,
    pub true_log_n: Vec<Option<f64>>,
}

pub fn curve_grid(curve: &SNCurve, dense_points: usize) -> CurveGrid {
    let mut points: Vec<(f64, Option<f64>)> = curve.records.iter().map(|r| (r.sigma_a, Some(r.log_n))).collect();
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if dense_points >= 2 && hi > lo {
        for i in 0..dense_points {
            let s = lo + (hi - lo) * i as f64 / (dense_points - 1) as f64;
            if !points.iter().any(|p| p.0 == s) {
                points.push((s, None));
            }
        }
    }
    // Stable sort keeps observed duplicates in file order.
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    CurveGrid {
        curve_id: curve.curve_id,
        material: curve.material().clone(),
        sigma_a: points.iter().map(|p| p.0).collect(),
        true_log_n: points.iter().map(|p| p.1).collect(),
    }
}

/// The held-out records and the curve grids derived from them.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub records: Vec<FatigueRecord>,
    pub grids: Vec<CurveGrid>,
}

impl EvalSet {
    pub fn new(test_curves: &[&SNCurve], dense_points: usize) -> Self {
        Self {
            records: test_curves.iter().flat_map(|c| c.records.iter().cloned()).collect(),
            grids: test_curves.iter().map(|c| curve_grid(c, dense_points)).collect(),
        }
    }

    pub fn targets(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.log_n).collect()
    }
}

/// One model's predictions on an `EvalSet`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPredictions {
    /// Aligned with `EvalSet::records`.
    pub test: Vec<f64>,
    /// Aligned with `EvalSet::grids` and each grid's points.
    pub curves: Vec<Vec<f64>>,
}

pub fn predict_eval_set(model: &TrainedModel, set: &EvalSet) -> Result<SeedPredictions, EvalError> {
    let test = model.predict_records(&set.records)?;
    let mut curves = Vec::with_capacity(set.grids.len());
    for g in &set.grids {
        let series = model.predict_curve(&g.material, &g.sigma_a)?;
        if series.len() != g.sigma_a.len() {
            return Err(EvalError::Argument(format!("curve {}: grid points outside the feature domain", g.curve_id)));
        }
        curves.push(series.into_iter().map(|(_, y)| y).collect());
    }
    Ok(SeedPredictions { test, curves })
}

/// Result of one repetition.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub result: Result<SeedPredictions, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub metrics: Option<MetricSet>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub curve_id: u32,
    pub sigma_a: Vec<f64>,
    pub true_log_n: Vec<Option<f64>>,
    /// `per_seed[s][i]` over completed repetitions.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub curve_id: u32,
    pub sigma_a: f64,
    pub true_log_n: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: String,
    pub seeds: Vec<SeedRow>,
    pub completed: usize,
    pub failed: usize,
    pub mean: MetricSet,
    pub std: MetricSet,
    pub curves: Vec<CurveSeries>,
    pub scatter: Vec<ScatterPoint>,
    /// Fraction of test points whose target lies inside mean ± 2σ.
    pub coverage: f64,
    /// Resolved configuration the run was produced with.
    pub config: String,
}

impl RunReport {
    pub fn any_failed(&self) -> bool {
        self.failed > 0
    }
}

fn pointwise_mean_std(rows: &[&Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|i| mean_std(&rows.iter().map(|r| r[i]).collect::<Vec<_>>()))
        .unzip()
}

/// Per-seed metrics, their mean and population σ, and pointwise prediction
/// statistics. Failed repetitions are listed but left out of every
/// statistic; at least one must have completed.
pub fn aggregate(variant: &str, config: &str, set: &EvalSet, outcomes: &[SeedOutcome]) -> Result<RunReport, EvalError> {
    if outcomes.is_empty() {
        return Err(EvalError::Argument("no repetitions to aggregate".into()));
    }
    let targets = set.targets();
    let mut seeds = Vec::with_capacity(outcomes.len());
    let mut done: Vec<&SeedPredictions> = Vec::new();
    let mut metrics = Vec::new();
    for o in outcomes {
        let row = match &o.result {
            Ok(preds) => match MetricSet::compute(&targets, &preds.test) {
                Ok(m) => {
                    done.push(preds);
                    metrics.push(m);
                    SeedRow {
                        seed: o.seed,
                        metrics: Some(m),
                        error: None,
                    }
                }
                Err(e) => SeedRow {
                    seed: o.seed,
                    metrics: None,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => SeedRow {
                seed: o.seed,
                metrics: None,
                error: Some(e.clone()),
            },
        };
        seeds.push(row);
    }
    if done.is_empty() {
        return Err(EvalError::Argument("every repetition failed".into()));
    }

    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for k in 0..3 {
        let column: Vec<f64> = metrics.iter().map(|m| m.to_array()[k]).collect();
        (mean[k], std[k]) = mean_std(&column);
    }

    let curves = set
        .grids
        .iter()
        .enumerate()
        .map(|(c, g)| {
            let rows: Vec<&Vec<f64>> = done.iter().map(|p| &p.curves[c]).collect();
            let (mean, std) = pointwise_mean_std(&rows, g.sigma_a.len());
            CurveSeries {
                curve_id: g.curve_id,
                sigma_a: g.sigma_a.clone(),
                true_log_n: g.true_log_n.clone(),
                per_seed: rows.into_iter().cloned().collect(),
                mean,
                std,
            }
        })
        .collect();

    let rows: Vec<&Vec<f64>> = done.iter().map(|p| &p.test).collect();
    let (pm, ps) = pointwise_mean_std(&rows, targets.len());
    let scatter: Vec<ScatterPoint> = set
        .records
        .iter()
        .zip(pm.into_iter().zip(ps))
        .map(|(r, (mean, std))| ScatterPoint {
            curve_id: r.curve_id,
            sigma_a: r.sigma_a,
            true_log_n: r.log_n,
            mean,
            std,
        })
        .collect();
    let inside = scatter
        .iter()
        .filter(|p| (p.true_log_n - p.mean).abs() <= 2.0 * p.std)
        .count();
    let coverage = if scatter.is_empty() { 0.0 } else { inside as f64 / scatter.len() as f64 };

    Ok(RunReport {
        variant: variant.to_string(),
        completed: done.len(),
        failed: outcomes.len() - done.len(),
        seeds,
        mean: MetricSet::from_array(mean),
        std: MetricSet::from_array(std),
        curves,
        scatter,
        coverage,
        config: config.to_string(),
    })
}

pub const METRICS_HEADER: &str = "seed,status,r2,mae,mre";
pub const CURVE_HEADER: &str = "sigma_a,mean_logN,lo,hi,true_logN";
pub const SCATTER_HEADER: &str = "true,pred_mean,pred_lo,pred_hi";

/// Shortest round-trip formatting, so identical values give identical bytes.
fn num(v: f64) -> String {
    format!("{v}")
}

pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::new();
    writeln!(out, "{METRICS_HEADER}").unwrap();
    for row in &report.seeds {
        match row.metrics {
            Some(m) => writeln!(out, "{},ok,{},{},{}", row.seed, num(m.r2), num(m.mae), num(m.mre)),
            None => writeln!(out, "{},failed,,,", row.seed),
        }
        .unwrap();
    }
    for (label, m) in [("mean", report.mean), ("std", report.std)] {
        writeln!(out, "{label},aggregate,{},{},{}", num(m.r2), num(m.mae), num(m.mre)).unwrap();
    }
    out
}

pub fn curve_csv(series: &CurveSeries) -> String {
    let mut out = String::new();
    writeln!(out, "{CURVE_HEADER}").unwrap();
    for i in 0..series.sigma_a.len() {
        let (m, s) = (series.mean[i], series.std[i]);
        let truth = series.true_log_n[i].map(num).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", num(series.sigma_a[i]), num(m), num(m - 2.0 * s), num(m + 2.0 * s), truth).unwrap();
    }
    out
}

pub fn scatter_csv(points: &[ScatterPoint]) -> String {
    let mut out = String::new();
    writeln!(out, "{SCATTER_HEADER}").unwrap();
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            num(p.true_log_n),
            num(p.mean),
            num(p.mean - 2.0 * p.std),
            num(p.mean + 2.0 * p.std)
        )
        .unwrap();
    }
    out
}

/// Writes `metrics.csv`, one `curve_<id>.csv` per test curve,
/// `scatter.csv`, and `summary.json` into `out_dir`.
pub fn export_report(report: &RunReport, out_dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), metrics_csv(report))?;
    for c in &report.curves {
        fs::write(out_dir.join(format!("curve_{}.csv", c.curve_id)), curve_csv(c))?;
    }
    fs::write(out_dir.join("scatter.csv"), scatter_csv(&report.scatter))?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

pub fn load_summary(path: &Path) -> Result<RunReport, EvalError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Plain-text table of `mean ± σ` per metric, one row per report.
pub fn comparison_table(reports: &[RunReport]) -> String {
    let width = reports.iter().map(|r| r.variant.len()).max().unwrap_or(0).max("variant".len());
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:>19}  {:>19}  {:>19}  {:>5}", "variant", "R2", "MAE", "MRE", "seeds").unwrap();
    for r in reports {
        let cell = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
        writeln!(
            out,
            "{:<width$}  {:>19}  {:>19}  {:>19}  {:>5}",
            r.variant,
            cell(r.mean.r2, r.std.r2),
            cell(r.mean.mae, r.std.mae),
            cell(r.mean.mre, r.std.mre),
            r.completed
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn worked_example() {
        let y = [1.0, 2.0, 3.0];
        let p = [1.1, 1.9, 3.2];
        assert!(close(r_squared(&y, &p).unwrap(), 0.97, 1e-12));
        assert!(close(mae(&y, &p).unwrap(), 0.4 / 3.0, 1e-12));
        // Per-element |1 - 10^(p - y)|, evaluated independently.
        let per = [10f64.powf(0.1) - 1.0, 1.0 - 10f64.powf(-0.1), 10f64.powf(0.2) - 1.0];
        assert!(close(per[0], 0.258925, 1e-6) && close(per[1], 0.205672, 1e-6) && close(per[2], 0.584893, 1e-6));
        let m = mre(&y, &p).unwrap();
        assert!(close(m, per.iter().sum::<f64>() / 3.0, 1e-12));
        assert!(close(m, 0.349830, 1e-6));
    }

    #[test]
    fn simple_cases() {
        assert_eq!(r_squared(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap(), 1.0);
        let y = [1.0, 2.0, 6.0];
        assert!(close(r_squared(&y, &[3.0; 3]).unwrap(), 0.0, 1e-12));
        assert_eq!(mae(&[5.0], &[4.0]).unwrap(), 1.0);
        // 9 / (1 + 1e-12)
        assert!(close(mre(&[0.0], &[1.0]).unwrap(), 9.0, 1e-10));
        assert_eq!(mre(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(r_squared(&[1.0], &[1.0]), Err(EvalError::Argument(_))));
        assert!(matches!(mae(&[1.0, 2.0], &[1.0]), Err(EvalError::Argument(_))));
        assert!(matches!(mae(&[], &[]), Err(EvalError::Argument(_))));
        assert!(matches!(mre(&[1.0, 400.0], &[1.0, 1.0]), Err(EvalError::Numeric { index: 1, .. })));
    }

    #[test]
    fn two_point_population_std() {
        let (m, s) = mean_std(&[0.9, 1.1]);
        assert!(close(m, 1.0, 1e-15) && close(s, 0.1, 1e-12));
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    fn oracle_r2(y: &[f64], p: &[f64]) -> f64 {
        let mut mean = 0.0;
        for v in y {
            mean += v;
        }
        mean /= y.len() as f64;
        let (mut res, mut tot) = (0.0, 0.0);
        for i in 0..y.len() {
            res += (y[i] - p[i]).powi(2);
            tot += (y[i] - mean).powi(2);
        }
        1.0 - res / (tot + 1e-12)
    }

    fn oracle_mre(y: &[f64], p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let a = 10f64.powf(y[i]);
            acc += (a - 10f64.powf(p[i])).abs() / (a + 1e-12);
        }
        acc / y.len() as f64
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| (prop::collection::vec(3.0..9.0f64, n), prop::collection::vec(-1.0..1.0f64, n)))
            .prop_map(|(y, d)| {
                let p = y.iter().zip(&d).map(|(a, b)| a + b).collect();
                (y, p)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn metrics_match_scalar_oracles((y, p) in pairs()) {
            let mut mae_oracle = 0.0;
            for i in 0..y.len() {
                mae_oracle += (y[i] - p[i]).abs();
            }
            mae_oracle /= y.len() as f64;
            prop_assert!(close(r_squared(&y, &p).unwrap(), oracle_r2(&y, &p), 1e-12));
            prop_assert!(close(mae(&y, &p).unwrap(), mae_oracle, 1e-12));
            prop_assert!(close(mre(&y, &p).unwrap(), oracle_mre(&y, &p), 1e-12));
        }

        #[test]
        fn mre_depends_only_on_differences((y, p) in pairs(), shift in 0.0..3.0f64) {
            let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let direct: f64 = y.iter().zip(&p).map(|(a, b)| (1.0 - 10f64.powf(b - a)).abs()).sum::<f64>() / y.len() as f64;
            prop_assert!(close(mre(&ys, &ps).unwrap(), direct, 1e-9));
            prop_assert!(close(mre(&y, &p).unwrap(), direct, 1e-9));
        }

        #[test]
        fn r2_is_shift_invariant((y, p) in pairs(), shift in -5.0..5.0f64) {
            let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let ps: Vec<f64> = p.iter().map(|v| v + shift).collect();
            let a = r_squared(&y, &p).unwrap();
            let b = r_squared(&ys, &ps).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    fn toy_set() -> EvalSet {
        let rec = |s: f64, y: f64| FatigueRecord {
            curve_id: 4,
            uts: 500.0,
            tys: 400.0,
            fatigue_strength: 150.0,
            temper: "T6".into(),
            stress_ratio_r: -1.0,
            sigma_a: s,
            log_n: y,
        };
        let curve = SNCurve {
            curve_id: 4,
            records: vec![rec(200.0, 6.0), rec(250.0, 5.0), rec(300.0, 4.5)],
        };
        EvalSet::new(&[&curve], 5)
    }

    #[test]
    fn curve_grid_merges_observed_and_dense() {
        let set = toy_set();
        let g = &set.grids[0];
        // 200 and 300 coincide with dense endpoints, 250 with the midpoint.
        assert_eq!(g.sigma_a, vec![200.0, 225.0, 250.0, 275.0, 300.0]);
        assert_eq!(g.true_log_n, vec![Some(6.0), None, Some(5.0), None, Some(4.5)]);
    }

    fn outcome(seed: u64, offset: f64) -> SeedOutcome {
        SeedOutcome {
            seed,
            result: Ok(SeedPredictions {
                test: vec![6.0 + offset, 5.0 + offset, 4.5 + offset],
                curves: vec![vec![1.0 + offset; 5]],
            }),
        }
    }

    #[test]
    fn single_seed_has_zero_spread() {
        let set = toy_set();
        let r = aggregate("full", "", &set, &[outcome(1, 0.1)]).unwrap();
        assert_eq!(r.std, MetricSet::default());
        assert!(r.curves[0].std.iter().all(|s| *s == 0.0));
        assert!(close(r.mean.mae, 0.1, 1e-12));
        let csv = curve_csv(&r.curves[0]);
        let line: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(line[1], line[2]);
        assert_eq!(line[2], line[3]);
        assert_eq!(r.coverage, 0.0);
    }

    #[test]
    fn aggregate_skips_failed_repetitions() {
        let set = toy_set();
        let outcomes = vec![
            outcome(1, 0.1),
            SeedOutcome {
                seed: 2,
                result: Err("NaN".into()),
            },
            outcome(3, -0.1),
        ];
        let r = aggregate("full", "", &set, &outcomes).unwrap();
        assert_eq!((r.completed, r.failed), (2, 1));
        assert!(r.any_failed());
        assert!(close(r.mean.mae, 0.1, 1e-12));
        assert!(close(r.scatter[0].mean, 6.0, 1e-12));
        assert!(close(r.scatter[0].std, 0.1, 1e-12));
        assert_eq!(r.coverage, 1.0);
        let csv = metrics_csv(&r);
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert!(csv.contains("\n2,failed,,,\n"));
        let all_failed = [SeedOutcome {
            seed: 1,
            result: Err("x".into()),
        }];
        assert!(aggregate("full", "", &set, &all_failed).is_err());
    }

    #[test]
    fn exported_files_parse_with_documented_headers() {
        let set = toy_set();
        let r = aggregate("full", "seed = 1\n", &set, &[outcome(1, 0.1), outcome(2, 0.2)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_report(&r, dir.path()).unwrap();
        for (file, header, rows) in [
            ("metrics.csv", METRICS_HEADER, 4),
            ("curve_4.csv", CURVE_HEADER, 5),
            ("scatter.csv", SCATTER_HEADER, 3),
        ] {
            let mut rdr = csv::Reader::from_path(dir.path().join(file)).unwrap();
            assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>().join(","), header);
            assert_eq!(rdr.records().map(|r| r.unwrap()).count(), rows, "{file}");
        }
        assert_eq!(load_summary(&dir.path().join("summary.json")).unwrap(), r);
        let table = comparison_table(&[r]);
        assert!(table.lines().nth(1).unwrap().starts_with("full"));
    }
}
