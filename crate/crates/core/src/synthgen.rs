//! Synthetic S-N curves following Basquin's law,
//! `log₁₀N = a − b·log₁₀σ_a`, written in the dataset schema.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::dataset::{FatigueRecord, SNCurve};
use crate::features::DENOMINATOR_SHIFT;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("curve {curve_id}: {message}")]
    Config { curve_id: u32, message: String },
    #[error("argument error: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCurveSpec {
    pub curve_id: u32,
    /// log₁₀ cycles at σ_a = 1 MPa.
    pub basquin_intercept: f64,
    pub basquin_slope: f64,
    pub uts: f64,
    pub tys: f64,
    pub fatigue_strength: f64,
    pub temper: String,
    pub stress_ratio_r: f64,
    pub n_points: usize,
    /// `[σ_lo, σ_hi]` in MPa.
    pub sigma_range: (f64, f64),
    /// Standard deviation of the Gaussian noise added to log₁₀N.
    pub noise_std: f64,
}

impl SynthCurveSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |message: String| {
            Err(SynthError::Config {
                curve_id: self.curve_id,
                message,
            })
        };
        let (lo, hi) = self.sigma_range;
        let finite = [
            self.basquin_intercept,
            self.basquin_slope,
            self.uts,
            self.tys,
            self.fatigue_strength,
            self.stress_ratio_r,
            lo,
            hi,
            self.noise_std,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("all parameters must be finite".into());
        }
        if !(self.basquin_slope > 0.0) {
            return fail(format!("Basquin slope must be > 0, got {}", self.basquin_slope));
        }
        if !(self.tys > 0.0 && self.fatigue_strength > 0.0) {
            return fail("TYS and fatigue strength must be > 0".into());
        }
        if !(self.fatigue_strength < lo && lo <= hi && hi < self.uts) {
            return fail(format!(
                "need FS ({}) < sigma_lo ({lo}) <= sigma_hi ({hi}) < UTS ({})",
                self.fatigue_strength, self.uts
            ));
        }
        if lo - self.fatigue_strength + DENOMINATOR_SHIFT <= 0.0 {
            return fail("sigma_lo leaves a non-positive feature denominator".into());
        }
        if self.n_points == 0 {
            return fail("n_points must be >= 1".into());
        }
        if self.noise_std < 0.0 {
            return fail(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        Ok(())
    }

    /// Stress amplitudes evenly spaced in log between the range ends.
    pub fn sigma_points(&self) -> Vec<f64> {
        let (lo, hi) = self.sigma_range;
        if self.n_points == 1 {
            return vec![lo];
        }
        let (llo, lhi) = (lo.log10(), hi.log10());
        (0..self.n_points)
            .map(|i| {
                if i == self.n_points - 1 {
                    hi
                } else {
                    10f64.powf(llo + (lhi - llo) * i as f64 / (self.n_points - 1) as f64)
                }
            })
            .collect()
    }

    pub fn basquin_log_n(&self, sigma_a: f64) -> f64 {
        self.basquin_intercept - self.basquin_slope * sigma_a.log10()
    }
}

/// Noise is drawn in curve order, then point order, from one seeded stream.
pub fn generate(specs: &[SynthCurveSpec], seed: u64) -> Result<Vec<SNCurve>, SynthError> {
    for s in specs {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(specs
        .iter()
        .map(|s| SNCurve {
            curve_id: s.curve_id,
            records: s
                .sigma_points()
                .into_iter()
                .map(|sigma_a| FatigueRecord {
                    curve_id: s.curve_id,
                    uts: s.uts,
                    tys: s.tys,
                    fatigue_strength: s.fatigue_strength,
                    temper: s.temper.clone(),
                    stress_ratio_r: s.stress_ratio_r,
                    sigma_a,
                    log_n: s.basquin_log_n(sigma_a) + s.noise_std * unit.sample(&mut rng),
                })
                .collect(),
        })
        .collect())
}

pub const FIXTURE_CURVES: usize = 54;
pub const FIXTURE_NOISE_STD: f64 = 0.15;

/// Temper tokens with the Basquin slope and the shift of log₁₀ life at
/// the fatigue strength that each one carries in the fixture.
pub const FIXTURE_TEMPERS: [(&str, f64, f64); 7] = [
    ("T6", 3.5, 1.2),
    ("T651", 2.5, -0.6),
    ("T73", 4.5, 1.8),
    ("T7351", 3.0, -1.8),
    ("T4", 5.0, 0.0),
    ("T3", 2.0, 0.6),
    ("T851", 4.0, -1.2),
];

const FIXTURE_RATIOS: [f64; 3] = [-1.0, 0.1, 0.5];
/// log₁₀ life at σ_a = FS before temper and stress-ratio shifts.
const FIXTURE_BASE_LIFE: f64 = 7.6;
/// Shortest life a fixture curve reaches.
const FIXTURE_MIN_LIFE: f64 = 4.6;

/// Curve parameters for the default fixture. Slope and life level follow
/// from the temper and the stress ratio, so held-out curves are
/// predictable from their material description. FS is drawn independently
/// of UTS.
pub fn fixture_specs(n_curves: usize, noise_std: f64, seed: u64) -> Result<Vec<SynthCurveSpec>, SynthError> {
    if n_curves == 0 {
        return Err(SynthError::Argument("need at least one curve".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(n_curves);
    for i in 0..n_curves {
        let (temper, slope, shift) = FIXTURE_TEMPERS[i % FIXTURE_TEMPERS.len()];
        let uts: f64 = rng.gen_range(300.0..600.0);
        let tys = uts * rng.gen_range(0.75..0.95);
        let fs: f64 = rng.gen_range(80.0..(0.55 * uts).min(250.0));
        let r = FIXTURE_RATIOS[rng.gen_range(0..FIXTURE_RATIOS.len())];
        let life_at_fs = FIXTURE_BASE_LIFE + shift + 0.3 * r;
        let lo = fs * rng.gen_range(1.05..1.2);
        let hi = (0.85 * uts).min(fs * 10f64.powf((life_at_fs - FIXTURE_MIN_LIFE) / slope));
        let n_points = rng.gen_range(3..=6);
        specs.push(SynthCurveSpec {
            curve_id: i as u32 + 1,
            basquin_intercept: life_at_fs + slope * fs.log10(),
            basquin_slope: slope,
            uts,
            tys,
            fatigue_strength: fs,
            temper: temper.to_string(),
            stress_ratio_r: r,
            n_points,
            sigma_range: (lo, hi),
            noise_std,
        });
    }
    Ok(specs)
}

pub fn synthesize(n_curves: usize, noise_std: f64, seed: u64) -> Result<Vec<SNCurve>, SynthError> {
    generate(&fixture_specs(n_curves, noise_std, seed)?, seed)
}

/// 54 curves, 7 tempers, noise σ = 0.15 log₁₀ cycles.
pub fn default_fixture(seed: u64) -> Vec<SNCurve> {
    synthesize(FIXTURE_CURVES, FIXTURE_NOISE_STD, seed).expect("fixture parameters are valid by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_dataset, split_curves, write_dataset};
    use crate::features::{make_trunk_features, LogBase};
    use std::collections::BTreeSet;

    fn spec() -> SynthCurveSpec {
        SynthCurveSpec {
            curve_id: 1,
            basquin_intercept: 12.0,
            basquin_slope: 3.0,
            uts: 500.0,
            tys: 420.0,
            fatigue_strength: 90.0,
            temper: "T6".into(),
            stress_ratio_r: -1.0,
            n_points: 3,
            sigma_range: (100.0, 400.0),
            noise_std: 0.0,
        }
    }

    #[test]
    fn basquin_closed_form() {
        let curves = generate(&[spec()], 0).unwrap();
        let r = &curves[0].records;
        assert_eq!(r[0].sigma_a, 100.0);
        assert_eq!(r[0].log_n, 6.0);
        assert_eq!(r[2].sigma_a, 400.0);
        assert!((r[1].sigma_a - 200.0).abs() < 1e-9);
    }

    #[test]
    fn precondition_errors_name_the_curve() {
        let bad = [
            SynthCurveSpec { sigma_range: (100.0, 500.0), ..spec() },
            SynthCurveSpec { sigma_range: (80.0, 400.0), ..spec() },
            SynthCurveSpec { sigma_range: (300.0, 200.0), ..spec() },
            SynthCurveSpec { basquin_slope: 0.0, ..spec() },
            SynthCurveSpec { noise_std: -0.1, ..spec() },
            SynthCurveSpec { n_points: 0, ..spec() },
        ];
        for s in bad {
            let s = SynthCurveSpec { curve_id: 17, ..s };
            match generate(&[spec(), s], 0) {
                Err(SynthError::Config { curve_id: 17, .. }) => {}
                other => panic!("expected config error for curve 17, got {other:?}"),
            }
        }
    }

    #[test]
    fn seeded_output_is_bit_identical() {
        let write = |curves: &[SNCurve]| {
            let mut buf = Vec::new();
            write_dataset(&mut buf, curves, None).unwrap();
            buf
        };
        assert_eq!(write(&default_fixture(3)), write(&default_fixture(3)));
        assert_ne!(write(&default_fixture(3)), write(&default_fixture(4)));
        let quiet = synthesize(10, 0.0, 8).unwrap();
        assert_eq!(write(&quiet), write(&synthesize(10, 0.0, 8).unwrap()));
    }

    #[test]
    fn fixture_shape() {
        let curves = default_fixture(1);
        assert_eq!(curves.len(), 54);
        let tempers: BTreeSet<&str> = curves.iter().map(|c| c.material().temper.as_str()).collect();
        assert_eq!(tempers.len(), 7);
        for c in &curves {
            assert!((3..=6).contains(&c.records.len()));
            let m = c.material();
            assert!((300.0..600.0).contains(&m.uts));
            assert!((80.0..=250.0).contains(&m.fatigue_strength));
        }
        let split = split_curves(&curves, 7, 2).unwrap();
        assert_eq!((split.train_curve_ids.len(), split.test_curve_ids.len()), (47, 7));
    }

    #[test]
    fn fixture_round_trips_through_the_loader() {
        let curves = default_fixture(1);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &curves, None).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), curves);
    }

    #[test]
    fn every_record_is_in_the_feature_domain() {
        for seed in 0..20 {
            for c in synthesize(54, FIXTURE_NOISE_STD, seed).unwrap() {
                for r in &c.records {
                    assert!(r.sigma_a < r.uts && r.sigma_a > r.fatigue_strength);
                    let f = make_trunk_features(r, LogBase::Ten).unwrap();
                    assert!(f.to_array().iter().all(|v| v.is_finite()));
                }
            }
        }
        for seed in 0..20 {
            for s in fixture_specs(54, 0.0, seed).unwrap() {
                for sigma in s.sigma_points() {
                    let life = s.basquin_log_n(sigma);
                    assert!((FIXTURE_MIN_LIFE - 1e-9..9.6).contains(&life), "logN {life} out of range");
                }
            }
        }
    }

    /// Ordinary least squares on `(log₁₀σ_a, logN)`.
    fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        (my - slope * mx, slope)
    }

    #[test]
    fn noiseless_curves_recover_basquin_parameters() {
        let specs = fixture_specs(54, 0.0, 5).unwrap();
        let curves = generate(&specs, 5).unwrap();
        for (s, c) in specs.iter().zip(&curves) {
            let xs: Vec<f64> = c.records.iter().map(|r| r.sigma_a.log10()).collect();
            let ys: Vec<f64> = c.records.iter().map(|r| r.log_n).collect();
            let (a, neg_b) = fit_line(&xs, &ys);
            assert!((a - s.basquin_intercept).abs() < 1e-9, "curve {}", s.curve_id);
            assert!((-neg_b - s.basquin_slope).abs() < 1e-9, "curve {}", s.curve_id);
            assert!((2.0..=5.0).contains(&s.basquin_slope));
        }
    }
}
