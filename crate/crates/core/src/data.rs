//! Datasets: synthetic Gaussian generation, CSV ingestion, imbalance
//! subsampling and mini-batch iteration.
//!
//! The minority class is always `+`. The imbalance ratio is
//! `β = n_- / n_+`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CsvError, Error, Result};
use crate::losses::Class;
use crate::ndmath::{Matrix, Rng};

/// Per-feature affine map fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store 1.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = x.shape();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n.max(1) as f64).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} features, data has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let d = x.cols();
        let data = x
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        Matrix::new(x.rows(), d, data)
    }
}

/// How the two raw label strings of a CSV file map onto classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub positive_label: String,
    pub negative_label: String,
    pub feature_columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<Class>,
    n_plus: usize,
    n_minus: usize,
    standardizer: Option<Standardizer>,
    schema: Option<CsvSchema>,
}

impl Dataset {
    /// Both classes must be present and every feature finite.
    pub fn new(features: Matrix, labels: Vec<Class>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let n_plus = labels.iter().filter(|l| l.is_pos()).count();
        let n_minus = labels.len() - n_plus;
        if n_plus == 0 || n_minus == 0 {
            return Err(Error::Input(format!(
                "dataset needs both classes, got n_- = {n_minus}, n_+ = {n_plus}"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_plus,
            n_minus,
            standardizer: None,
            schema: None,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_plus(&self) -> usize {
        self.n_plus
    }

    pub fn n_minus(&self) -> usize {
        self.n_minus
    }

    /// Imbalance ratio `n_- / n_+`.
    pub fn beta(&self) -> f64 {
        self.n_minus as f64 / self.n_plus as f64
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardizer.as_ref()
    }

    pub fn schema(&self) -> Option<&CsvSchema> {
        self.schema.as_ref()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let mut ds = Dataset::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )?;
        ds.standardizer = self.standardizer.clone();
        ds.schema = self.schema.clone();
        Ok(ds)
    }

    /// Fits a standardizer on this set, applies it, and keeps it for reuse.
    pub fn standardize(mut self) -> Result<Self> {
        let s = Standardizer::fit(&self.features);
        self.features = s.apply(&self.features)?;
        self.standardizer = Some(s);
        Ok(self)
    }

    /// Applies an already-fitted standardizer (e.g. the training set's).
    pub fn standardize_with(mut self, s: &Standardizer) -> Result<Self> {
        self.features = s.apply(&self.features)?;
        self.standardizer = Some(s.clone());
        Ok(self)
    }

    fn pos_neg_indices(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| self.labels[i].is_pos())
    }
}

/// Class-conditional Gaussians with isotropic covariance: `-` centred at the
/// origin, `+` at distance `separation` along the all-ones direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    /// Distance between the class means; smaller means more overlap.
    pub separation: f64,
    #[serde(default = "one")]
    pub std_minus: f64,
    #[serde(default = "one")]
    pub std_plus: f64,
    pub n_majority: usize,
    pub beta_target: f64,
    /// Test samples per class (balanced test set).
    #[serde(default = "default_n_test")]
    pub n_test_per_class: usize,
    /// When false the test set keeps the training imbalance instead.
    #[serde(default = "yes")]
    pub balanced_test: bool,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_n_test() -> usize {
    1000
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("synthetic data needs d >= 1".into()));
        }
        for (name, s) in [("std_minus", self.std_minus), ("std_plus", self.std_plus)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!(
                    "degenerate covariance: {name} = {s} (must be > 0)"
                )));
            }
        }
        if !self.separation.is_finite() {
            return Err(Error::Config("separation must be finite".into()));
        }
        if !(self.beta_target >= 1.0 && self.beta_target.is_finite()) {
            return Err(Error::Config(format!(
                "beta_target must be >= 1, got {}",
                self.beta_target
            )));
        }
        if minority_count(self.n_majority, self.beta_target) < 1 {
            return Err(Error::Config(format!(
                "n_majority {} / beta {} leaves no minority samples",
                self.n_majority, self.beta_target
            )));
        }
        if self.n_test_per_class == 0 {
            return Err(Error::Config("n_test_per_class must be >= 1".into()));
        }
        Ok(())
    }

    fn sample(&self, class: Class, n: usize, rng: &mut Rng) -> Vec<f64> {
        let (shift, std) = match class {
            Class::Neg => (0.0, self.std_minus),
            Class::Pos => (self.separation / (self.d as f64).sqrt(), self.std_plus),
        };
        (0..n * self.d)
            .map(|_| shift + std * rng.normal())
            .collect()
    }

    fn build(&self, n_neg: usize, n_pos: usize, rng: &mut Rng) -> Result<Dataset> {
        let mut data = self.sample(Class::Neg, n_neg, rng);
        data.extend(self.sample(Class::Pos, n_pos, rng));
        let labels = std::iter::repeat_n(Class::Neg, n_neg)
            .chain(std::iter::repeat_n(Class::Pos, n_pos))
            .collect();
        Dataset::new(Matrix::new(n_neg + n_pos, self.d, data)?, labels)
    }
}

fn minority_count(n_majority: usize, beta: f64) -> usize {
    (n_majority as f64 / beta).round() as usize
}

/// Draws a balanced pool, subsamples its minority class to `beta_target` for
/// training, and draws a separate test set (balanced unless configured
/// otherwise).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let mut train_rng = root.substream(1);
    let mut test_rng = root.substream(2);
    let mut subsample_rng = root.substream(3);

    let pool = spec.build(spec.n_majority, spec.n_majority, &mut train_rng)?;
    let train = subsample_to_beta(&pool, spec.beta_target, &mut subsample_rng)?;
    let n_test_pos = if spec.balanced_test {
        spec.n_test_per_class
    } else {
        minority_count(spec.n_test_per_class, spec.beta_target).max(1)
    };
    let test = spec.build(spec.n_test_per_class, n_test_pos, &mut test_rng)?;
    Ok((train, test))
}

/// Randomly drops minority samples until `n_+ = round(n_- / beta)`. The
/// majority class and the relative order of kept rows are untouched.
pub fn subsample_to_beta(ds: &Dataset, beta: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::Input(format!(
            "target beta must be >= 1, got {beta}"
        )));
    }
    let target = minority_count(ds.n_minus, beta);
    if target < 1 {
        return Err(Error::Input(format!(
            "beta {beta} unachievable: {} majority samples leave no minority sample",
            ds.n_minus
        )));
    }
    if target > ds.n_plus {
        return Err(Error::Input(format!(
            "beta {beta} unachievable: needs {target} minority samples, only {} available",
            ds.n_plus
        )));
    }
    if target == ds.n_plus {
        return Ok(ds.clone());
    }
    let (mut pos, neg) = ds.pos_neg_indices();
    // Partial Fisher-Yates: the first `target` slots become a uniform subset.
    for i in 0..target {
        let j = i + rng.below(pos.len() - i);
        pos.swap(i, j);
    }
    let mut keep: Vec<usize> = neg;
    keep.extend_from_slice(&pos[..target]);
    keep.sort_unstable();
    ds.select(&keep)
}

/// Stratified split into `(train, test)`; `test_fraction` of each class goes
/// to the test side (at least one sample per class on each side).
pub fn train_test_split(
    ds: &Dataset,
    test_fraction: f64,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Input(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let (mut pos, mut neg) = ds.pos_neg_indices();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for idx in [&mut pos, &mut neg] {
        if idx.len() < 2 {
            return Err(Error::Input(
                "each class needs at least two samples to split".into(),
            ));
        }
        rng.shuffle(idx);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.select(&train)?, ds.select(&test)?))
}

/// Raw CSV contents before label mapping and standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub feature_columns: Vec<String>,
    pub features: Matrix,
    pub raw_labels: Vec<String>,
    pub label_column: String,
}

/// Parses a headed, comma-separated UTF-8 table. Every non-label column must
/// be numeric with `.` as decimal separator.
pub fn read_csv_table<R: Read>(reader: R, label_column: &str) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CsvError::Malformed(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(CsvError::Empty.into());
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| CsvError::MissingLabelColumn(label_column.to_string()))?;
    let feature_columns: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CsvError::Malformed(e.to_string()))?;
        let row = row + 1;
        if rec.len() != headers.len() {
            return Err(CsvError::Malformed(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                headers.len()
            ))
            .into());
        }
        for (i, field) in rec.iter().enumerate() {
            let column = || headers.get(i).unwrap_or_default().to_string();
            if field.is_empty() {
                return Err(CsvError::MissingValue {
                    row,
                    column: column(),
                }
                .into());
            }
            if i == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CsvError::NotNumeric {
                    row,
                    column: column(),
                    value: field.to_string(),
                })?;
            data.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(CsvError::Empty.into());
    }
    let features = Matrix::new(raw_labels.len(), feature_columns.len(), data)?;
    Ok(CsvTable {
        feature_columns,
        features,
        raw_labels,
        label_column: label_column.to_string(),
    })
}

impl CsvTable {
    /// Chooses the rarer label as `+`. On a tie the label sorting last is `+`.
    pub fn infer_schema(&self) -> Result<CsvSchema> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for l in &self.raw_labels {
            *counts.entry(l.as_str()).or_default() += 1;
        }
        match counts.len() {
            0 => Err(CsvError::Empty.into()),
            1 => Err(CsvError::SingleClass(self.raw_labels[0].clone()).into()),
            2 => {
                let mut it = counts.into_iter();
                let (first, n_first) = it.next().expect("two entries");
                let (second, n_second) = it.next().expect("two entries");
                let (pos, neg) = if n_first < n_second {
                    (first, second)
                } else {
                    (second, first)
                };
                Ok(CsvSchema {
                    label_column: self.label_column.clone(),
                    positive_label: pos.to_string(),
                    negative_label: neg.to_string(),
                    feature_columns: self.feature_columns.clone(),
                })
            }
            n => Err(CsvError::TooManyClasses(n).into()),
        }
    }

    pub fn into_dataset(self, schema: &CsvSchema) -> Result<Dataset> {
        if schema.feature_columns != self.feature_columns {
            return Err(Error::Input(format!(
                "feature columns {:?} do not match schema {:?}",
                self.feature_columns, schema.feature_columns
            )));
        }
        let labels = self
            .raw_labels
            .iter()
            .enumerate()
            .map(|(row, l)| {
                if *l == schema.positive_label {
                    Ok(Class::Pos)
                } else if *l == schema.negative_label {
                    Ok(Class::Neg)
                } else {
                    Err(Error::from(CsvError::UnknownLabel {
                        row: row + 1,
                        label: l.clone(),
                    }))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ds = Dataset::new(self.features, labels)?;
        ds.schema = Some(schema.clone());
        Ok(ds)
    }
}

/// Loads a training CSV: the minority label becomes `+` and features are
/// standardized with this file's statistics, which are kept on the dataset.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    load_csv_unstandardized(path, label_column)?.standardize()
}

/// Like [`load_csv`] but leaves features as read, e.g. to subsample before
/// fitting the standardizer.
pub fn load_csv_unstandardized(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_csv_table(file, label_column)?;
    let schema = table.infer_schema()?;
    table.into_dataset(&schema)
}

pub fn load_csv_from_reader<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let table = read_csv_table(reader, label_column)?;
    let schema = table.infer_schema()?;
    table.into_dataset(&schema)?.standardize()
}

/// Loads an evaluation CSV with the training set's label mapping and
/// standardization statistics.
pub fn load_csv_like(path: impl AsRef<Path>, train: &Dataset) -> Result<Dataset> {
    match (train.schema(), train.standardizer()) {
        (Some(schema), Some(st)) => load_csv_with(path, schema, st),
        _ => Err(Error::Input(
            "reference dataset was not loaded from CSV".into(),
        )),
    }
}

/// Loads a CSV with a stored label mapping and standardizer, as saved with a
/// trained model.
pub fn load_csv_with(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    standardizer: &Standardizer,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let table = read_csv_table(file, &schema.label_column)?;
    table.into_dataset(schema)?.standardize_with(standardizer)
}

/// Where a train/test pair comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv {
        train: std::path::PathBuf,
        test: std::path::PathBuf,
        label_column: String,
        /// Seed for minority subsampling when a target β is requested.
        #[serde(default)]
        subsample_seed: u64,
    },
}

impl DataSource {
    /// Train and test sets. `beta` overrides the synthetic target or
    /// subsamples the CSV training set; the test set is never subsampled.
    pub fn load(&self, beta: Option<f64>) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Synthetic(spec) => {
                let mut spec = spec.clone();
                if let Some(b) = beta {
                    spec.beta_target = b;
                }
                generate_synthetic(&spec)
            }
            DataSource::Csv {
                train,
                test,
                label_column,
                subsample_seed,
            } => {
                let mut ds = load_csv_unstandardized(train, label_column)?;
                if let Some(b) = beta {
                    ds = subsample_to_beta(&ds, b, &mut Rng::new(*subsample_seed))?;
                }
                let ds = ds.standardize()?;
                let test = load_csv_like(test, &ds)?;
                Ok((ds, test))
            }
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            DataSource::Synthetic(spec) => spec.seed = seed,
            DataSource::Csv { subsample_seed, .. } => *subsample_seed = seed,
        }
        self
    }
}

/// Writes a dataset as CSV with columns `x0..x{d-1},label` (`label` is 1 for
/// `+`, 0 for `-`).
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(e.to_string()))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    w.write_record(&header)
        .map_err(|e| Error::Input(e.to_string()))?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.features().row(r).iter().map(|v| v.to_string()).collect();
        rec.push(if ds.labels()[r].is_pos() { "1" } else { "0" }.into());
        w.write_record(&rec)
            .map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shuffled mini-batch index lists for one epoch; the last batch may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
