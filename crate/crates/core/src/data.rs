//! Tabular ingestion: CSV plus a JSON column schema in, normalized dataset,
//! normalization parameters, input box and monotonicity spec out. Also the
//! seeded train/test fold construction.

use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{parse_document, Direction, InputBox, MonotoneFeature, MonotoneSpec, OutputKind};
use crate::trainer::LabeledDataset;
use crate::{Error, Result};

/// Cell contents treated as missing.
const MISSING: [&str; 4] = ["", "?", "NA", "nan"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub monotone: Option<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Regression,
    Classification,
}

impl Task {
    pub fn output_kind(self) -> OutputKind {
        match self {
            Task::Regression => OutputKind::Regression,
            Task::Classification => OutputKind::BinaryLogit,
        }
    }
}

/// Column schema document. CSV columns not listed are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub task: Task,
    /// Name of the target column; must agree with the column of kind `target`
    /// when both are given.
    #[serde(default)]
    pub target: Option<String>,
    pub columns: Vec<ColumnSchema>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = parse_document(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Schema::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn target_name(&self) -> Result<&str> {
        let targets: Vec<&ColumnSchema> = self.columns.iter().filter(|c| c.kind == ColumnKind::Target).collect();
        match (targets.as_slice(), &self.target) {
            ([c], Some(t)) if &c.name != t => Err(Error::Validation(format!(
                "target `{t}` does not match target column `{}`",
                c.name
            ))),
            ([c], _) => Ok(&c.name),
            ([], Some(t)) => Ok(t),
            ([], None) => Err(Error::Validation("schema has no target column".into())),
            _ => Err(Error::Validation("schema has more than one target column".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.target_name()?;
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Validation(format!("column `{}` listed twice", c.name)));
            }
            if c.monotone.is_some() && c.kind != ColumnKind::Numeric {
                return Err(Error::Validation(format!(
                    "column `{}`: only numeric columns can be monotone",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetTransform {
    Identity,
    /// `normalized = (raw - mean) / scale`.
    Standardize { mean: f64, scale: f64 },
}

impl TargetTransform {
    pub fn normalize(&self, raw: f64) -> f64 {
        match *self {
            TargetTransform::Identity => raw,
            TargetTransform::Standardize { mean, scale } => (raw - mean) / scale,
        }
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        match *self {
            TargetTransform::Identity => value,
            TargetTransform::Standardize { mean, scale } => value * scale + mean,
        }
    }
}

/// Observed range of one raw numeric feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub numeric: Vec<FeatureRange>,
    pub target: TargetTransform,
}

/// Denormalizes a prediction back to the original target scale.
pub fn denormalize_prediction(value: f64, params: &NormalizationParams) -> f64 {
    params.target.denormalize(value)
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub data: LabeledDataset,
    pub params: NormalizationParams,
    pub input_box: InputBox,
    /// One name per model input: numeric columns in schema order, then one
    /// `column=value` per category.
    pub feature_names: Vec<String>,
    /// Every monotone column of the schema, in its declared direction.
    pub spec: Option<MonotoneSpec>,
    pub task: Task,
    pub dropped_rows: usize,
}

impl LoadedDataset {
    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown feature `{name}`")))
    }

    /// Spec restricted to the named features, keeping their schema directions.
    pub fn spec_for(&self, names: &[impl AsRef<str>]) -> Result<MonotoneSpec> {
        let entries = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                let index = self.feature_index(n)?;
                let direction = self
                    .spec
                    .as_ref()
                    .and_then(|s| s.direction(index))
                    .ok_or_else(|| Error::InvalidInput(format!("feature `{n}` is not declared monotone")))?;
                Ok(MonotoneFeature { index, direction })
            })
            .collect::<Result<Vec<_>>>()?;
        MonotoneSpec::new(entries)
    }
}

pub fn load_csv_path(path: impl AsRef<Path>, schema: &Schema) -> Result<LoadedDataset> {
    load_csv(std::fs::File::open(path)?, schema)
}

/// Reads a CSV with header. Numeric features are min-max scaled to [0, 1]
/// using the range over the kept rows (constant columns map to 0);
/// categorical columns become one-hot blocks, categories sorted, appended
/// after the numeric features. Regression targets are standardized;
/// classification targets must be 0 or 1. Rows with a missing value in any
/// schema column are dropped.
pub fn load_csv(source: impl Read, schema: &Schema) -> Result<LoadedDataset> {
    schema.validate()?;
    let target_name = schema.target_name()?.to_string();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{name}` is missing from the CSV header")))
    };
    let target_col = position(&target_name)?;
    let numeric: Vec<(&ColumnSchema, usize)> = schema
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Numeric)
        .map(|c| Ok((c, position(&c.name)?)))
        .collect::<Result<_>>()?;
    let categorical: Vec<(&ColumnSchema, usize)> = schema
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Categorical)
        .map(|c| Ok((c, position(&c.name)?)))
        .collect::<Result<_>>()?;

    let mut raw_numeric: Vec<Vec<f64>> = Vec::new();
    let mut raw_categorical: Vec<Vec<String>> = Vec::new();
    let mut raw_targets = Vec::new();
    let mut dropped = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 2;
        let cell = |col: usize| record.get(col).unwrap_or("");
        let used = numeric
            .iter()
            .chain(&categorical)
            .map(|&(_, c)| c)
            .chain(std::iter::once(target_col));
        if used.into_iter().any(|c| MISSING.contains(&cell(c))) {
            dropped += 1;
            continue;
        }
        let parse = |col: usize, name: &str| -> Result<f64> {
            let text = cell(col);
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Cell {
                    row,
                    column: name.to_string(),
                    message: format!("`{text}` is not a finite number"),
                })
        };
        raw_numeric.push(numeric.iter().map(|&(c, col)| parse(col, &c.name)).collect::<Result<_>>()?);
        raw_categorical.push(categorical.iter().map(|&(_, col)| cell(col).to_string()).collect());
        let y = parse(target_col, &target_name)?;
        if schema.task == Task::Classification && y != 0.0 && y != 1.0 {
            return Err(Error::Cell {
                row,
                column: target_name.clone(),
                message: format!("classification target must be 0 or 1, got {y}"),
            });
        }
        raw_targets.push(y);
    }
    if raw_targets.is_empty() {
        return Err(Error::Data("no complete rows".into()));
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }

    let ranges: Vec<FeatureRange> = numeric
        .iter()
        .enumerate()
        .map(|(j, (c, _))| {
            let (min, max) = raw_numeric
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r[j]), b.max(r[j])));
            FeatureRange {
                name: c.name.clone(),
                min,
                max,
            }
        })
        .collect();
    let categories: Vec<Vec<String>> = (0..categorical.len())
        .map(|j| {
            raw_categorical
                .iter()
                .map(|r| r[j].clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    let mut feature_names: Vec<String> = numeric.iter().map(|(c, _)| c.name.clone()).collect();
    let mut category_slot: Vec<HashMap<&str, usize>> = Vec::new();
    for ((c, _), cats) in categorical.iter().zip(&categories) {
        let mut slots = HashMap::new();
        for v in cats {
            slots.insert(v.as_str(), feature_names.len());
            feature_names.push(format!("{}={v}", c.name));
        }
        category_slot.push(slots);
    }
    let d = feature_names.len();
    if d == 0 {
        return Err(Error::Validation("schema has no feature columns".into()));
    }

    let inputs: Vec<Vec<f64>> = raw_numeric
        .iter()
        .zip(&raw_categorical)
        .map(|(nums, cats)| {
            let mut x = vec![0.0; d];
            for (j, (&v, r)) in nums.iter().zip(&ranges).enumerate() {
                x[j] = if r.max > r.min { ((v - r.min) / (r.max - r.min)).clamp(0.0, 1.0) } else { 0.0 };
            }
            for (j, v) in cats.iter().enumerate() {
                x[category_slot[j][v.as_str()]] = 1.0;
            }
            x
        })
        .collect();
    let target = match schema.task {
        Task::Classification => TargetTransform::Identity,
        Task::Regression => {
            let n = raw_targets.len() as f64;
            let mean = raw_targets.iter().sum::<f64>() / n;
            let var = raw_targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
            let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
            TargetTransform::Standardize { mean, scale }
        }
    };
    let targets = raw_targets.iter().map(|&y| target.normalize(y)).collect();

    let monotone: Vec<MonotoneFeature> = numeric
        .iter()
        .enumerate()
        .filter_map(|(j, (c, _))| c.monotone.map(|direction| MonotoneFeature { index: j, direction }))
        .collect();
    let spec = if monotone.is_empty() {
        None
    } else {
        Some(MonotoneSpec::new(monotone)?)
    };
    Ok(LoadedDataset {
        data: LabeledDataset::new(inputs, targets)?,
        params: NormalizationParams { numeric: ranges, target },
        input_box: InputBox::unit(d),
        feature_names,
        spec,
        task: schema.task,
        dropped_rows: dropped,
    })
}

/// Index sets of one train/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `n_folds` independent splits of `0..n`. Fold `k` shuffles with a generator
/// seeded by `seed + k`, then takes the first `floor(train_fraction * n)`
/// indices as the training set.
pub fn make_folds(n: usize, n_folds: usize, train_fraction: f64, seed: u64) -> Result<Vec<Fold>> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    if n_folds == 0 {
        return Err(Error::Validation("at least one fold is required".into()));
    }
    let n_train = (train_fraction * n as f64).floor() as usize;
    Ok((0..n_folds as u64)
        .map(|k| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(k)));
            let test = idx.split_off(n_train);
            Fold { train: idx, test }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(cols: &[(&str, ColumnKind, Option<Direction>)]) -> Schema {
        Schema {
            task: Task::Regression,
            target: None,
            columns: cols
                .iter()
                .map(|&(n, kind, monotone)| ColumnSchema {
                    name: n.into(),
                    kind,
                    monotone,
                })
                .collect(),
        }
    }

    #[test]
    fn min_max_endpoints() {
        let s = schema(&[("a", ColumnKind::Numeric, None), ("y", ColumnKind::Target, None)]);
        let d = load_csv("a,y\n10,1\n30,2\n".as_bytes(), &s).unwrap();
        assert_eq!(d.data.inputs(), &[vec![0.0], vec![1.0]]);
        assert_eq!(d.params.numeric[0], FeatureRange { name: "a".into(), min: 10.0, max: 30.0 });
        assert_eq!(d.input_box, InputBox::unit(1));
    }

    #[test]
    fn one_hot_columns_are_appended_sorted() {
        let s = schema(&[
            ("c", ColumnKind::Categorical, None),
            ("a", ColumnKind::Numeric, None),
            ("y", ColumnKind::Target, None),
        ]);
        let d = load_csv("c,a,y\nred,1,0\nblue,2,1\ngreen,3,2\nred,4,3\n".as_bytes(), &s).unwrap();
        assert_eq!(d.feature_names, vec!["a", "c=blue", "c=green", "c=red"]);
        assert_eq!(d.data.inputs()[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.data.inputs()[1], vec![1.0 / 3.0, 1.0, 0.0, 0.0]);
        for x in d.data.inputs() {
            assert_eq!(x[1..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn missing_rows_are_dropped_and_bad_cells_reported() {
        let s = schema(&[("a", ColumnKind::Numeric, None), ("y", ColumnKind::Target, None)]);
        let d = load_csv("a,y,extra\n1,1,x\n?,2,x\n3,,x\n5,4,\n".as_bytes(), &s).unwrap();
        assert_eq!(d.dropped_rows, 2);
        assert_eq!(d.data.len(), 2);
        let err = load_csv("a,y\n1,1\nabc,2\n".as_bytes(), &s).unwrap_err();
        match err {
            Error::Cell { row, column, .. } => assert_eq!((row, column.as_str()), (3, "a")),
            e => panic!("unexpected {e}"),
        }
        assert!(load_csv("b,y\n1,1\n".as_bytes(), &s).is_err());
    }

    #[test]
    fn regression_target_round_trips() {
        let s = schema(&[("a", ColumnKind::Numeric, None), ("y", ColumnKind::Target, None)]);
        let d = load_csv("a,y\n0,10\n1,20\n2,30\n".as_bytes(), &s).unwrap();
        let t = d.params.target;
        for (&z, raw) in d.data.targets().iter().zip([10.0, 20.0, 30.0]) {
            assert!((t.denormalize(z) - raw).abs() < 1e-12);
        }
        assert!(d.data.targets()[1].abs() < 1e-15);
    }

    #[test]
    fn classification_targets_must_be_binary() {
        let mut s = schema(&[("a", ColumnKind::Numeric, None), ("y", ColumnKind::Target, None)]);
        s.task = Task::Classification;
        let d = load_csv("a,y\n0,0\n1,1\n".as_bytes(), &s).unwrap();
        assert_eq!(d.params.target, TargetTransform::Identity);
        assert_eq!(d.data.targets(), &[0.0, 1.0]);
        assert!(load_csv("a,y\n0,2\n".as_bytes(), &s).is_err());
    }

    #[test]
    fn schema_rules() {
        let bad = r#"{"columns": [{"name": "c", "kind": "categorical", "monotone": "increasing"}, {"name": "y", "kind": "target"}]}"#;
        assert!(Schema::from_json(bad).is_err());
        let two = r#"{"columns": [{"name": "a", "kind": "target"}, {"name": "y", "kind": "target"}]}"#;
        assert!(Schema::from_json(two).is_err());
        let mismatch = r#"{"target": "z", "columns": [{"name": "a", "kind": "numeric"}, {"name": "y", "kind": "target"}]}"#;
        assert!(Schema::from_json(mismatch).is_err());
        let typo = r#"{"columns": [{"name": "a", "kind": "numerc"}, {"name": "y", "kind": "target"}]}"#;
        match Schema::from_json(typo).unwrap_err() {
            Error::Parse { path, .. } => assert_eq!(path, "columns[0].kind"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn monotone_directions_become_the_spec() {
        let s = schema(&[
            ("w", ColumnKind::Numeric, Some(Direction::Decreasing)),
            ("a", ColumnKind::Numeric, None),
            ("h", ColumnKind::Numeric, Some(Direction::Increasing)),
            ("y", ColumnKind::Target, None),
        ]);
        let d = load_csv("w,a,h,y\n1,2,3,4\n2,3,4,5\n".as_bytes(), &s).unwrap();
        let spec = d.spec.clone().unwrap();
        assert_eq!(spec.direction(0), Some(Direction::Decreasing));
        assert_eq!(spec.direction(2), Some(Direction::Increasing));
        assert_eq!(d.spec_for(&["w"]).unwrap().indices(), vec![0]);
        assert!(d.spec_for(&["a"]).is_err());
    }

    #[test]
    fn fold_sizes_and_determinism() {
        let f = make_folds(10, 1, 0.8, 5).unwrap();
        assert_eq!((f[0].train.len(), f[0].test.len()), (8, 2));
        assert_eq!(make_folds(10, 1, 0.8, 5).unwrap(), f);
        let f = make_folds(392, 3, 0.8, 0).unwrap();
        for fold in &f {
            assert_eq!((fold.train.len(), fold.test.len()), (313, 79));
            let all: BTreeSet<usize> = fold.train.iter().chain(&fold.test).copied().collect();
            assert_eq!(all.len(), 392);
        }
        assert_ne!(f[0], f[1]);
        assert!(make_folds(10, 1, 1.0, 0).is_err());
        assert!(make_folds(10, 1, 0.0, 0).is_err());
    }

    #[test]
    fn identity_and_affine_inverse() {
        assert_eq!(TargetTransform::Identity.denormalize(0.3), 0.3);
        let p = NormalizationParams {
            numeric: vec![],
            target: TargetTransform::Standardize { mean: 20.0, scale: 5.0 },
        };
        assert_eq!(denormalize_prediction(0.0, &p), 20.0);
    }
}
