//! S-N fatigue dataset ingestion, validation, categorical vocabulary and
//! curve-level train/test splitting.
//!
//! Input files use the header
//! `curve_id,UTS,TYS,FatigueStrength,Temper,R,sigma_a,sigma_a3,Stussi,Weibull,PM,logN`.
//! The four derived columns (`sigma_a3`, `Stussi`, `Weibull`, `PM`) may be
//! empty; when present they are kept aside for comparison only and never
//! fed to the model.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COLUMNS: [&str; 12] = [
    "curve_id",
    "UTS",
    "TYS",
    "FatigueStrength",
    "Temper",
    "R",
    "sigma_a",
    "sigma_a3",
    "Stussi",
    "Weibull",
    "PM",
    "logN",
];

/// Columns recomputed from the others; optional in input files.
pub const DERIVED_COLUMNS: [&str; 4] = ["sigma_a3", "Stussi", "Weibull", "PM"];

/// Typical high-cycle range of `logN`; values outside are warned about.
pub const TYPICAL_LOG_N: (f64, f64) = (4.0, 10.0);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("parse error on line {line}, column `{column}`: cannot read {value:?} as a number")]
    Parse { line: usize, column: String, value: String },
    #[error("validation error on line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("split manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

/// One fatigue test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FatigueRecord {
    pub curve_id: u32,
    pub uts: f64,
    pub tys: f64,
    pub fatigue_strength: f64,
    pub temper: String,
    /// Stored exactly as given in the file.
    pub stress_ratio_r: f64,
    pub sigma_a: f64,
    /// log₁₀ of cycles to failure.
    pub log_n: f64,
}

impl FatigueRecord {
    fn validate(&self, line: usize) -> Result<(), DatasetError> {
        let positive = [
            ("UTS", self.uts),
            ("TYS", self.tys),
            ("FatigueStrength", self.fatigue_strength),
            ("sigma_a", self.sigma_a),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DatasetError::Validation {
                    line,
                    message: format!("{name} must be positive and finite, got {v}"),
                });
            }
        }
        if self.sigma_a >= self.uts {
            return Err(DatasetError::Validation {
                line,
                message: format!("sigma_a ({}) must be below UTS ({})", self.sigma_a, self.uts),
            });
        }
        if !self.stress_ratio_r.is_finite() || !self.log_n.is_finite() {
            return Err(DatasetError::Validation {
                line,
                message: "R and logN must be finite".into(),
            });
        }
        if self.log_n < TYPICAL_LOG_N.0 || self.log_n > TYPICAL_LOG_N.1 {
            warn!("line {line}: logN = {} outside the typical high-cycle range", self.log_n);
        }
        Ok(())
    }

    fn same_material(&self, other: &FatigueRecord) -> Option<&'static str> {
        if self.uts != other.uts {
            Some("UTS")
        } else if self.tys != other.tys {
            Some("TYS")
        } else if self.fatigue_strength != other.fatigue_strength {
            Some("FatigueStrength")
        } else if self.temper != other.temper {
            Some("Temper")
        } else if self.stress_ratio_r != other.stress_ratio_r {
            Some("R")
        } else {
            None
        }
    }
}

/// Records of one S-N curve, which share all material columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SNCurve {
    pub curve_id: u32,
    pub records: Vec<FatigueRecord>,
}

impl SNCurve {
    /// The first record; every record carries the same material constants.
    pub fn material(&self) -> &FatigueRecord {
        &self.records[0]
    }
}

/// A parsed row with its file line and any precomputed feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub line: usize,
    pub record: FatigueRecord,
    /// `sigma_a3, Stussi, Weibull, PM` as found in the file.
    pub file_features: [Option<f64>; 4],
}

fn parse_number(line: usize, column: &str, raw: &str) -> Result<f64, DatasetError> {
    raw.trim().parse::<f64>().map_err(|_| DatasetError::Parse {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

/// Parses and validates every row, without grouping.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<RawRow>, DatasetError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = [0usize; 12];
    for (slot, name) in cols.iter_mut().zip(COLUMNS) {
        *slot = *index.get(name).ok_or_else(|| DatasetError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for (i, result) in csv.records().enumerate() {
        let line = i + 2;
        let row = result?;
        let field = |c: usize| row.get(cols[c]).unwrap_or("");
        let num = |c: usize| parse_number(line, COLUMNS[c], field(c));
        let curve_id = field(0).trim().parse::<u32>().map_err(|_| DatasetError::Parse {
            line,
            column: COLUMNS[0].to_string(),
            value: field(0).to_string(),
        })?;
        let record = FatigueRecord {
            curve_id,
            uts: num(1)?,
            tys: num(2)?,
            fatigue_strength: num(3)?,
            temper: field(4).trim().to_string(),
            stress_ratio_r: num(5)?,
            sigma_a: num(6)?,
            log_n: num(11)?,
        };
        record.validate(line)?;
        let mut file_features = [None; 4];
        for (k, c) in (7..11).enumerate() {
            if !field(c).trim().is_empty() {
                file_features[k] = Some(num(c)?);
            }
        }
        rows.push(RawRow {
            line,
            record,
            file_features,
        });
    }
    Ok(rows)
}

/// Groups rows by `curve_id`, curves ordered by first appearance and
/// records in file order. Material columns must agree within a curve.
pub fn group_rows(rows: &[RawRow]) -> Result<Vec<SNCurve>, DatasetError> {
    let mut order: HashMap<u32, usize> = HashMap::new();
    let mut curves: Vec<SNCurve> = Vec::new();
    for row in rows {
        let rec = &row.record;
        match order.get(&rec.curve_id) {
            Some(&idx) => {
                if let Some(field) = curves[idx].material().same_material(rec) {
                    return Err(DatasetError::Validation {
                        line: row.line,
                        message: format!("{field} differs from earlier records of curve {}", rec.curve_id),
                    });
                }
                curves[idx].records.push(rec.clone());
            }
            None => {
                order.insert(rec.curve_id, curves.len());
                curves.push(SNCurve {
                    curve_id: rec.curve_id,
                    records: vec![rec.clone()],
                });
            }
        }
    }
    Ok(curves)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<SNCurve>, DatasetError> {
    group_rows(&read_rows(reader)?)
}

/// Loads a CSV dataset from disk.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SNCurve>, DatasetError> {
    read_dataset(File::open(path)?)
}

pub fn load_rows(path: impl AsRef<Path>) -> Result<Vec<RawRow>, DatasetError> {
    read_rows(File::open(path)?)
}

/// Writes curves in the dataset schema. `derived` supplies the four
/// derived columns per record in flat curve order; when `None` they are
/// left empty.
pub fn write_dataset<W: Write>(writer: W, curves: &[SNCurve], derived: Option<&[[f64; 4]]>) -> Result<(), DatasetError> {
    let n_records: usize = curves.iter().map(|c| c.records.len()).sum();
    if let Some(d) = derived {
        if d.len() != n_records {
            return Err(DatasetError::Argument(format!(
                "{} derived rows for {} records",
                d.len(),
                n_records
            )));
        }
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(COLUMNS)?;
    for (i, rec) in curves.iter().flat_map(|c| &c.records).enumerate() {
        let derived_cells: [String; 4] = match derived {
            Some(d) => d[i].map(|v| v.to_string()),
            None => Default::default(),
        };
        csv.write_record([
            rec.curve_id.to_string(),
            rec.uts.to_string(),
            rec.tys.to_string(),
            rec.fatigue_strength.to_string(),
            rec.temper.clone(),
            rec.stress_ratio_r.to_string(),
            rec.sigma_a.to_string(),
            derived_cells[0].clone(),
            derived_cells[1].clone(),
            derived_cells[2].clone(),
            derived_cells[3].clone(),
            rec.log_n.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, curves: &[SNCurve], derived: Option<&[[f64; 4]]>) -> Result<(), DatasetError> {
    write_dataset(File::create(path)?, curves, derived)
}

/// Token to dense id map for one categorical column. Id 0 is reserved
/// for tokens not seen at build time.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        Self::build(tokens)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub const UNKNOWN: usize = 0;

    /// Assigns ids from 1 in first-appearance order.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self::default();
        for t in tokens {
            let t = t.as_ref();
            if !vocab.ids.contains_key(t) {
                vocab.tokens.push(t.to_string());
                vocab.ids.insert(t.to_string(), vocab.tokens.len());
            }
        }
        vocab
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(Self::UNKNOWN)
    }

    /// Table size including the unknown slot.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Known tokens in id order (id = position + 1).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

pub type TemperVocabulary = Vocabulary;

/// Temper vocabulary over every record of `curves`.
pub fn build_temper_vocabulary(curves: &[SNCurve]) -> TemperVocabulary {
    Vocabulary::build(curves.iter().flat_map(|c| c.records.iter().map(|r| r.temper.as_str())))
}

/// Curve-level partition; records of a curve never straddle the split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurveSplit {
    pub train_curve_ids: BTreeSet<u32>,
    pub test_curve_ids: BTreeSet<u32>,
    /// `None` when the test curves were chosen explicitly.
    pub seed: Option<u64>,
}

impl CurveSplit {
    pub fn is_test(&self, curve_id: u32) -> bool {
        self.test_curve_ids.contains(&curve_id)
    }

    pub fn train_curves<'a>(&self, curves: &'a [SNCurve]) -> Vec<&'a SNCurve> {
        curves.iter().filter(|c| self.train_curve_ids.contains(&c.curve_id)).collect()
    }

    pub fn test_curves<'a>(&self, curves: &'a [SNCurve]) -> Vec<&'a SNCurve> {
        curves.iter().filter(|c| self.test_curve_ids.contains(&c.curve_id)).collect()
    }

    /// Checks that the split partitions exactly the curves in `curves`.
    pub fn validate_against(&self, curves: &[SNCurve]) -> Result<(), DatasetError> {
        let all: BTreeSet<u32> = curves.iter().map(|c| c.curve_id).collect();
        if !self.train_curve_ids.is_disjoint(&self.test_curve_ids) {
            return Err(DatasetError::Argument("train and test curve ids overlap".into()));
        }
        let union: BTreeSet<u32> = self.train_curve_ids.union(&self.test_curve_ids).copied().collect();
        if union != all {
            return Err(DatasetError::Argument(
                "split curve ids do not match the dataset's curves".into(),
            ));
        }
        if self.train_curve_ids.is_empty() || self.test_curve_ids.is_empty() {
            return Err(DatasetError::Argument("train and test sets must both be non-empty".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Picks `n_test_curves` test curves uniformly at random under `seed`.
pub fn split_curves(curves: &[SNCurve], n_test_curves: usize, seed: u64) -> Result<CurveSplit, DatasetError> {
    if n_test_curves == 0 || n_test_curves >= curves.len() {
        return Err(DatasetError::Argument(format!(
            "n_test_curves must be in 1..{}, got {}",
            curves.len(),
            n_test_curves
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, curves.len(), n_test_curves);
    let test_curve_ids: BTreeSet<u32> = picked.iter().map(|i| curves[i].curve_id).collect();
    let train_curve_ids = curves
        .iter()
        .map(|c| c.curve_id)
        .filter(|id| !test_curve_ids.contains(id))
        .collect();
    Ok(CurveSplit {
        train_curve_ids,
        test_curve_ids,
        seed: Some(seed),
    })
}

/// Uses the given curve ids as the test set.
pub fn split_explicit(curves: &[SNCurve], test_ids: &[u32]) -> Result<CurveSplit, DatasetError> {
    let all: BTreeSet<u32> = curves.iter().map(|c| c.curve_id).collect();
    let test_curve_ids: BTreeSet<u32> = test_ids.iter().copied().collect();
    if let Some(missing) = test_curve_ids.iter().find(|id| !all.contains(id)) {
        return Err(DatasetError::Argument(format!("test curve {missing} not in dataset")));
    }
    let split = CurveSplit {
        train_curve_ids: all.difference(&test_curve_ids).copied().collect(),
        test_curve_ids,
        seed: None,
    };
    split.validate_against(curves)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "curve_id,UTS,TYS,FatigueStrength,Temper,R,sigma_a,sigma_a3,Stussi,Weibull,PM,logN\n";

    fn parse(body: &str) -> Result<Vec<SNCurve>, DatasetError> {
        read_dataset(format!("{HEADER}{body}").as_bytes())
    }

    fn curve(id: u32, temper: &str, n: usize) -> SNCurve {
        SNCurve {
            curve_id: id,
            records: (0..n)
                .map(|i| FatigueRecord {
                    curve_id: id,
                    uts: 480.5 + id as f64,
                    tys: 410.25,
                    fatigue_strength: 150.0 + 0.1 * id as f64,
                    temper: temper.into(),
                    stress_ratio_r: -1.0,
                    sigma_a: 200.0 + 10.0 * i as f64 + 1.0 / 3.0,
                    log_n: 7.0 - 0.123456789 * i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn single_row_loads_as_one_curve() {
        let curves = parse("1,470,400,150,T6,0.1,200,,,,,6.5\n").unwrap();
        assert_eq!(curves.len(), 1);
        assert_eq!(curves[0].records.len(), 1);
        assert_eq!(curves[0].records[0].temper, "T6");
    }

    #[test]
    fn records_group_by_curve_in_file_order() {
        let curves = parse(
            "3,470,400,150,T6,0.1,200,,,,,6.5\n1,500,420,180,T851,-1,250,,,,,5.5\n3,470,400,150,T6,0.1,220,,,,,6.0\n",
        )
        .unwrap();
        assert_eq!(curves.iter().map(|c| c.curve_id).collect::<Vec<_>>(), vec![3, 1]);
        assert_eq!(curves[0].records[1].sigma_a, 220.0);
    }

    #[test]
    fn file_feature_columns_are_ignored() {
        let with = parse("1,470,400,150,T6,0.1,200,8e6,99,99,99,6.5\n").unwrap();
        let without = parse("1,470,400,150,T6,0.1,200,,,,,6.5\n").unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn sigma_above_uts_is_rejected_with_line() {
        let err = parse("1,470,400,150,T6,0.1,200,,,,,6.5\n1,470,400,150,T6,0.1,500,,,,,6.5\n").unwrap_err();
        match err {
            DatasetError::Validation { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_column_and_bad_number_are_reported() {
        let err = read_dataset("curve_id,UTS\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn(c) if c == "TYS"));
        let err = parse("1,470,abc,150,T6,0.1,200,,,,,6.5\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, ref column, .. } if column == "TYS"));
    }

    #[test]
    fn inconsistent_material_within_curve_is_rejected() {
        let err = parse("1,470,400,150,T6,0.1,200,,,,,6.5\n1,470,400,150,T851,0.1,210,,,,,6.4\n").unwrap_err();
        assert!(err.to_string().contains("Temper"));
    }

    #[test]
    fn vocabulary_examples() {
        let v = Vocabulary::build(["T851", "T6", "T851"]);
        assert_eq!((v.id("T851"), v.id("T6"), v.size()), (1, 2, 3));
        let empty = build_temper_vocabulary(&[]);
        assert_eq!(empty.size(), 1);
        let v = Vocabulary::build(["T6"]);
        assert_eq!(v.id("T4"), Vocabulary::UNKNOWN);
        let again: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn split_counts_and_errors() {
        let curves: Vec<SNCurve> = (1..=54).map(|i| curve(i, "T6", 2)).collect();
        let s = split_curves(&curves, 7, 2).unwrap();
        assert_eq!((s.train_curve_ids.len(), s.test_curve_ids.len()), (47, 7));
        s.validate_against(&curves).unwrap();
        assert!(split_curves(&curves, 54, 2).is_err());
        assert!(split_curves(&curves, 0, 2).is_err());

        let two = vec![curve(1, "T6", 1), curve(2, "T6", 1)];
        assert_eq!(split_curves(&two, 1, 9).unwrap(), split_curves(&two, 1, 9).unwrap());

        let explicit = split_explicit(&curves, &[4, 6, 15]).unwrap();
        assert_eq!(explicit.test_curve_ids.len(), 3);
        assert!(split_explicit(&curves, &[99]).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let curves: Vec<SNCurve> = (1..=5).map(|i| curve(i, "T6", 1)).collect();
        let s = split_curves(&curves, 2, 11).unwrap();
        assert_eq!(CurveSplit::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let curves = vec![curve(1, "T851", 3), curve(7, "O", 2)];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &curves, None).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), curves);
    }

    proptest! {
        #[test]
        fn split_never_separates_a_curve(seed in 0u64..u64::MAX, n_curves in 2usize..30, k in 1usize..29) {
            prop_assume!(k < n_curves);
            let curves: Vec<SNCurve> = (0..n_curves as u32).map(|i| curve(i, "T6", 1 + (i as usize % 3))).collect();
            let s = split_curves(&curves, k, seed).unwrap();
            prop_assert_eq!(s.test_curve_ids.len(), k);
            for c in &curves {
                let in_test = s.is_test(c.curve_id);
                for r in &c.records {
                    prop_assert_eq!(s.is_test(r.curve_id), in_test);
                }
                prop_assert!(s.train_curve_ids.contains(&c.curve_id) != in_test);
            }
        }

        #[test]
        fn numeric_fields_round_trip(uts in 100.0f64..900.0, frac in 0.01f64..0.99, log_n in 3.0f64..11.0, r in -2.0f64..1.0) {
            let rec = FatigueRecord {
                curve_id: 3,
                uts,
                tys: uts * 0.9,
                fatigue_strength: uts * frac * 0.5,
                temper: "T6".into(),
                stress_ratio_r: r,
                sigma_a: uts * frac,
                log_n,
            };
            let curves = vec![SNCurve { curve_id: 3, records: vec![rec] }];
            let mut buf = Vec::new();
            write_dataset(&mut buf, &curves, None).unwrap();
            prop_assert_eq!(read_dataset(buf.as_slice()).unwrap(), curves);
        }
    }
}
