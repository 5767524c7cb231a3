//! Trunk and branch feature construction.
//!
//! Trunk input is `[σ_a, σ_a³, Stüssi, Weibull, PM]` where the last three
//! are log-ratios sharing the shifted denominator `σ_a − FS + 100`.
//! Logarithms are base 10 unless [`LogBase::Natural`] is selected, matching
//! the base-10 `logN` target.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FatigueRecord, RawRow, Vocabulary};

/// Positive constant added to `σ_a − FS` in every log-ratio denominator.
pub const DENOMINATOR_SHIFT: f64 = 100.0;

/// Number of continuous branch inputs: UTS, TYS, fatigue strength, R.
pub const BRANCH_CONTINUOUS: usize = 4;
/// Number of trunk inputs.
pub const TRUNK_FEATURES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("{feature} undefined: requires {condition}")]
    Domain { feature: &'static str, condition: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Ten,
    Natural,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Ten => x.log10(),
            LogBase::Natural => x.ln(),
        }
    }
}

fn shifted_denominator(feature: &'static str, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    let den = sigma_a - fatigue_strength + DENOMINATOR_SHIFT;
    if den > 0.0 {
        Ok(den)
    } else {
        Err(FeatureError::Domain {
            feature,
            condition: format!("sigma_a - FS + 100 > 0, got {sigma_a} - {fatigue_strength} + 100 = {den}"),
        })
    }
}

fn positive_numerator(feature: &'static str, what: &str, value: f64) -> Result<f64, FeatureError> {
    if value > 0.0 {
        Ok(value)
    } else {
        Err(FeatureError::Domain {
            feature,
            condition: format!("{what} > 0, got {value}"),
        })
    }
}

pub fn stussi_feature_in(base: LogBase, uts: f64, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    let num = positive_numerator("Stussi", "UTS - sigma_a", uts - sigma_a)?;
    let den = shifted_denominator("Stussi", sigma_a, fatigue_strength)?;
    Ok(base.log(num / den))
}

pub fn weibull_feature_in(base: LogBase, uts: f64, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    let num = positive_numerator("Weibull", "UTS - FS", uts - fatigue_strength)?;
    let den = shifted_denominator("Weibull", sigma_a, fatigue_strength)?;
    Ok(base.log(num / den))
}

pub fn pm_feature_in(base: LogBase, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    let num = positive_numerator("PM", "FS", fatigue_strength)?;
    let den = shifted_denominator("PM", sigma_a, fatigue_strength)?;
    Ok(base.log(num / den))
}

/// `log10((UTS − σ_a) / (σ_a − FS + 100))`.
pub fn stussi_feature(uts: f64, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    stussi_feature_in(LogBase::Ten, uts, sigma_a, fatigue_strength)
}

/// `log10((UTS − FS) / (σ_a − FS + 100))`.
pub fn weibull_feature(uts: f64, sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    weibull_feature_in(LogBase::Ten, uts, sigma_a, fatigue_strength)
}

/// `log10(FS / (σ_a − FS + 100))`.
pub fn pm_feature(sigma_a: f64, fatigue_strength: f64) -> Result<f64, FeatureError> {
    pm_feature_in(LogBase::Ten, sigma_a, fatigue_strength)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrunkFeatures {
    pub sigma_a: f64,
    pub sigma_a_cubed: f64,
    pub stussi: f64,
    pub weibull: f64,
    pub pm: f64,
}

impl TrunkFeatures {
    pub fn to_array(&self) -> [f64; TRUNK_FEATURES] {
        [self.sigma_a, self.sigma_a_cubed, self.stussi, self.weibull, self.pm]
    }

    /// The derived file columns `sigma_a3, Stussi, Weibull, PM`.
    pub fn derived_columns(&self) -> [f64; 4] {
        [self.sigma_a_cubed, self.stussi, self.weibull, self.pm]
    }
}

/// Trunk features at stress amplitude `sigma_a` for given material constants.
pub fn trunk_features_at(base: LogBase, uts: f64, fatigue_strength: f64, sigma_a: f64) -> Result<TrunkFeatures, FeatureError> {
    Ok(TrunkFeatures {
        sigma_a,
        sigma_a_cubed: sigma_a.powi(3),
        stussi: stussi_feature_in(base, uts, sigma_a, fatigue_strength)?,
        weibull: weibull_feature_in(base, uts, sigma_a, fatigue_strength)?,
        pm: pm_feature_in(base, sigma_a, fatigue_strength)?,
    })
}

pub fn make_trunk_features(record: &FatigueRecord, base: LogBase) -> Result<TrunkFeatures, FeatureError> {
    trunk_features_at(base, record.uts, record.fatigue_strength, record.sigma_a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchFeatures {
    pub uts: f64,
    pub tys: f64,
    pub fatigue_strength: f64,
    pub temper_id: usize,
    pub stress_ratio_r: f64,
}

impl BranchFeatures {
    pub fn continuous(&self) -> [f64; BRANCH_CONTINUOUS] {
        [self.uts, self.tys, self.fatigue_strength, self.stress_ratio_r]
    }
}

pub fn make_branch_features(record: &FatigueRecord, vocab: &Vocabulary) -> BranchFeatures {
    BranchFeatures {
        uts: record.uts,
        tys: record.tys,
        fatigue_strength: record.fatigue_strength,
        temper_id: vocab.id(&record.temper),
        stress_ratio_r: record.stress_ratio_r,
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    /// Fits on equal-length rows. A zero-variance column gets `std = 1`.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, FeatureError> {
        let first = rows
            .first()
            .ok_or_else(|| FeatureError::Argument("cannot fit a standardizer on an empty set".into()))?;
        let width = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(FeatureError::Argument("ragged feature rows".into()));
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(z, (m, s))| z * s + m)
            .collect()
    }
}

/// Training-set statistics for the continuous branch and trunk inputs.
/// The categorical temper id is never standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub branch: ColumnStats,
    pub trunk: ColumnStats,
}

/// Fits on the training records only.
pub fn fit_standardizer<'a, I>(train_records: I, base: LogBase) -> Result<Standardizer, FeatureError>
where
    I: IntoIterator<Item = &'a FatigueRecord>,
{
    let mut branch = Vec::new();
    let mut trunk = Vec::new();
    for rec in train_records {
        branch.push([rec.uts, rec.tys, rec.fatigue_strength, rec.stress_ratio_r]);
        trunk.push(make_trunk_features(rec, base)?.to_array());
    }
    Ok(Standardizer {
        branch: ColumnStats::fit(&branch)?,
        trunk: ColumnStats::fit(&trunk)?,
    })
}

/// A branch/trunk pair after standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedInput {
    pub temper_id: usize,
    pub branch: [f64; BRANCH_CONTINUOUS],
    pub trunk: [f64; TRUNK_FEATURES],
}

pub fn apply_standardizer(std: &Standardizer, branch: &BranchFeatures, trunk: &TrunkFeatures) -> StandardizedInput {
    let b = std.branch.apply(&branch.continuous());
    let t = std.trunk.apply(&trunk.to_array());
    StandardizedInput {
        temper_id: branch.temper_id,
        branch: [b[0], b[1], b[2], b[3]],
        trunk: [t[0], t[1], t[2], t[3], t[4]],
    }
}

/// Model-ready inputs and targets for a list of records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodedSet {
    pub curve_ids: Vec<u32>,
    pub inputs: Vec<StandardizedInput>,
    pub targets: Vec<f64>,
}

impl EncodedSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> EncodedSet {
        EncodedSet {
            curve_ids: indices.iter().map(|&i| self.curve_ids[i]).collect(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

pub fn encode_records<'a, I>(records: I, vocab: &Vocabulary, std: &Standardizer, base: LogBase) -> Result<EncodedSet, FeatureError>
where
    I: IntoIterator<Item = &'a FatigueRecord>,
{
    let mut set = EncodedSet::default();
    for rec in records {
        let trunk = make_trunk_features(rec, base)?;
        let branch = make_branch_features(rec, vocab);
        set.curve_ids.push(rec.curve_id);
        set.inputs.push(apply_standardizer(std, &branch, &trunk));
        set.targets.push(rec.log_n);
    }
    Ok(set)
}

/// Tolerance for comparing file-provided derived columns with recomputed ones.
pub const CHECK_FEATURES_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMismatch {
    pub line: usize,
    pub column: &'static str,
    pub file_value: f64,
    pub computed: f64,
}

/// Compares every populated derived column against recomputed values.
/// Differences are relative to the computed magnitude when it exceeds 1.
pub fn check_file_features(rows: &[RawRow], base: LogBase, tol: f64) -> Result<Vec<FeatureMismatch>, FeatureError> {
    const NAMES: [&str; 4] = ["sigma_a3", "Stussi", "Weibull", "PM"];
    let mut out = Vec::new();
    for row in rows {
        let computed = make_trunk_features(&row.record, base)?.derived_columns();
        for k in 0..4 {
            if let Some(file_value) = row.file_features[k] {
                let diff = (file_value - computed[k]).abs();
                if diff > tol * computed[k].abs().max(1.0) {
                    out.push(FeatureMismatch {
                        line: row.line,
                        column: NAMES[k],
                        file_value,
                        computed: computed[k],
                    });
                }
            }
        }
    }
    Ok(out)
}
