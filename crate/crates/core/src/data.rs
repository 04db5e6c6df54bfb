//! Tabular datasets: CSV ingestion, z-score normalisation, minority-class
//! down-sampling, stratified folds and a synthetic Gaussian-blob generator.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Feature matrix with dense integer labels and class metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: DenseMatrix,
    /// Dense class ids into `class_names`.
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Class held out of training and treated as out-of-distribution.
    pub ood_class: Option<usize>,
    pub minority_class: Option<usize>,
    /// Statistics used if the features were normalised.
    pub norm: Option<NormStats>,
}

impl TabularDataset {
    pub fn new(
        features: DenseMatrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Data(format!("label id {bad} has no class name")));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
            ood_class: None,
            minority_class: None,
            norm: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    pub fn is_ood_row(&self, row: usize) -> bool {
        Some(self.labels[row]) == self.ood_class
    }

    pub fn id_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| !self.is_ood_row(r)).collect()
    }

    pub fn ood_rows(&self) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.is_ood_row(r)).collect()
    }

    /// Dataset class ids of the in-distribution classes, ascending. The
    /// position in this list is the class index used by the models.
    pub fn id_classes(&self) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&c| Some(c) != self.ood_class)
            .collect()
    }

    /// Model class index of a dataset class, `None` for the OOD class.
    pub fn id_index(&self, class: usize) -> Option<usize> {
        if Some(class) == self.ood_class {
            return None;
        }
        Some(match self.ood_class {
            Some(o) if class > o => class - 1,
            _ => class,
        })
    }

    pub fn id_class_names(&self) -> Vec<String> {
        self.id_classes()
            .into_iter()
            .map(|c| self.class_names[c].clone())
            .collect()
    }

    /// Row subset keeping class metadata.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            ood_class: self.ood_class,
            minority_class: self.minority_class,
            norm: self.norm.clone(),
        }
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&y| y == class).count()
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    #[serde(default)]
    pub ood_class: Option<String>,
    #[serde(default)]
    pub minority_class: Option<String>,
}

impl CsvSchema {
    pub fn new(label_column: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            ood_class: None,
            minority_class: None,
        }
    }
}

/// JSON sidecar describing a CSV dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// CSV path, relative to the manifest's directory unless absolute.
    pub data: PathBuf,
    #[serde(flatten)]
    pub schema: CsvSchema,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(file)?)
    }

    /// The CSV path resolved against the manifest location.
    pub fn data_path(&self, manifest_path: &Path) -> PathBuf {
        if self.data.is_absolute() {
            self.data.clone()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&self.data)
        }
    }
}

/// Class names sorted numerically when every name is an integer, lexically otherwise.
fn sorted_class_names(names: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().collect();
    if v.iter().all(|n| n.parse::<i64>().is_ok()) {
        v.sort_by_key(|n| n.parse::<i64>().unwrap());
    }
    v
}

/// Reads a headered CSV. Every column other than the label column is a
/// numeric feature; row order is preserved.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<TabularDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let label_col = headers
        .iter()
        .position(|h| h.trim() == schema.label_column)
        .ok_or_else(|| Error::Data(format!("label column `{}` not found", schema.label_column)))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_col)
        .map(|(_, h)| h.trim().to_owned())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {}: {} fields, header has {}",
                row + 1,
                record.len(),
                headers.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            if col == label_col {
                raw_labels.push(field.trim().to_owned());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column `{}`: `{field}` is not a number",
                    row + 1,
                    &headers[col]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "row {}, column `{}`: non-finite value",
                    row + 1,
                    &headers[col]
                )));
            }
            values.push(v);
        }
    }

    let class_names = sorted_class_names(raw_labels.iter().cloned().collect());
    let labels = raw_labels
        .iter()
        .map(|l| class_names.iter().position(|c| c == l).expect("collected name"))
        .collect();
    let features = DenseMatrix::from_vec(raw_labels.len(), feature_names.len(), values)?;
    let mut ds = TabularDataset::new(features, labels, feature_names, class_names)?;
    let lookup = |name: &Option<String>, role: &str| -> Result<Option<usize>> {
        name.as_ref()
            .map(|n| {
                ds.class_id(n)
                    .ok_or_else(|| Error::Data(format!("{role} class `{n}` does not occur in the data")))
            })
            .transpose()
    };
    let ood = lookup(&schema.ood_class, "OOD")?;
    let minority = lookup(&schema.minority_class, "minority")?;
    if ood.is_some() && ood == minority {
        return Err(Error::Data("OOD and minority class must differ".into()));
    }
    ds.ood_class = ood;
    ds.minority_class = minority;
    Ok(ds)
}

/// Writes the dataset as CSV with the label in the last column.
pub fn save_csv(ds: &TabularDataset, path: &Path, label_column: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, file, label_column)
}

pub fn write_csv<W: std::io::Write>(ds: &TabularDataset, writer: W, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    for r in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(ds.class_names[ds.labels[r]].clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Constant columns store 1 so they map to zero.
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(features: &DenseMatrix, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("normalisation needs at least one row"));
        }
        let p = features.cols();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; p];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::contract(format!(
                "normaliser fitted on {} columns, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Fits z-score statistics on `train_rows` and applies them to every row.
pub fn zscore_fit_apply(ds: &TabularDataset, train_rows: &[usize]) -> Result<(TabularDataset, NormStats)> {
    let stats = NormStats::fit(&ds.features, train_rows)?;
    let mut out = ds.clone();
    out.features = stats.apply(&ds.features)?;
    out.norm = Some(stats.clone());
    Ok((out, stats))
}

/// Number of minority rows kept at ratio `mdsr`.
pub fn mdsr_keep_count(mdsr: f64, n_minority: usize) -> usize {
    // The epsilon absorbs representation error such as 0.1 * 1000 = 100.00000000000001
    // or 0.29 * 100 = 28.999999999999996.
    (mdsr * n_minority as f64 + 1e-9).floor() as usize
}

/// Keeps a uniformly random `⌊mdsr · n⌋` subset of the minority class rows;
/// every other row is untouched and row order is preserved.
pub fn apply_mdsr(ds: &TabularDataset, mdsr: f64, seed: u64) -> Result<TabularDataset> {
    let minority = ds
        .minority_class
        .ok_or_else(|| Error::InvalidConfig("MDSR needs a designated minority class".into()))?;
    if !(mdsr > 0.0 && mdsr <= 1.0) {
        return Err(Error::InvalidConfig(format!("MDSR must lie in (0, 1], got {mdsr}")));
    }
    let minority_rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| ds.labels[r] == minority).collect();
    let keep = mdsr_keep_count(mdsr, minority_rows.len());
    if keep < 2 {
        return Err(Error::Data(format!(
            "MDSR {mdsr} leaves {keep} rows of minority class `{}`",
            ds.class_names[minority]
        )));
    }
    if keep == minority_rows.len() {
        return Ok(ds.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = vec![false; ds.n_rows()];
    for i in sample(&mut rng, minority_rows.len(), keep) {
        kept[minority_rows[i]] = true;
    }
    let rows: Vec<usize> = (0..ds.n_rows())
        .filter(|&r| ds.labels[r] != minority || kept[r])
        .collect();
    Ok(ds.select_rows(&rows))
}

/// Synthetic benchmark: `k_id` isotropic unit-variance Gaussian classes plus
/// one OOD cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub k_id: usize,
    pub n_per_class: usize,
    pub dim: usize,
    /// Pairwise distance between ID centres.
    pub separation: f64,
    /// Distance from the OOD centre to every ID centre.
    pub ood_offset: f64,
    /// Optional per-ID-class fraction of `n_per_class` to generate.
    pub imbalance: Option<Vec<f64>>,
    /// ID class index (0-based) to mark as the minority class.
    pub minority: Option<usize>,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(k_id: usize, n_per_class: usize, dim: usize, separation: f64, ood_offset: f64, seed: u64) -> Self {
        Self {
            k_id,
            n_per_class,
            dim,
            separation,
            ood_offset,
            imbalance: None,
            minority: None,
            seed,
        }
    }
}

/// Generates blobs with class names `"0"` (OOD) and `"1"..="k_id"`.
///
/// ID centres sit on scaled coordinate axes so all pairs are exactly
/// `separation` apart; the OOD centre lies off their affine hull at distance
/// `ood_offset` from each of them.
pub fn make_blobs(spec: &BlobSpec) -> Result<TabularDataset> {
    let k = spec.k_id;
    if k < 2 {
        return Err(Error::InvalidConfig("make_blobs needs at least 2 ID classes".into()));
    }
    if !(spec.separation > 0.0) {
        return Err(Error::InvalidConfig("separation must be positive".into()));
    }
    if !(spec.ood_offset > 0.0) {
        return Err(Error::InvalidConfig("ood_offset must be positive".into()));
    }
    if spec.dim < k + 1 {
        return Err(Error::InvalidConfig(format!(
            "dim {} too small for {k} ID centres plus an OOD centre",
            spec.dim
        )));
    }
    let scale = spec.separation / std::f64::consts::SQRT_2;
    // Distance from the centroid of the ID centres to each centre.
    let radius_sq = scale * scale * (k - 1) as f64 / k as f64;
    if spec.ood_offset * spec.ood_offset < radius_sq {
        return Err(Error::InvalidConfig(format!(
            "ood_offset {} is below the ID circumradius {:.3}",
            spec.ood_offset,
            radius_sq.sqrt()
        )));
    }
    let counts: Vec<usize> = match &spec.imbalance {
        Some(fr) => {
            if fr.len() != k {
                return Err(Error::InvalidConfig(format!("{} imbalance fractions for {k} classes", fr.len())));
            }
            if fr.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
                return Err(Error::InvalidConfig("imbalance fractions must lie in [0, 1]".into()));
            }
            fr.iter().map(|&f| mdsr_keep_count(f, spec.n_per_class)).collect()
        }
        None => vec![spec.n_per_class; k],
    };
    if let Some(m) = spec.minority {
        if m >= k {
            return Err(Error::InvalidConfig(format!("minority index {m} out of range")));
        }
    }

    let mut centres = vec![vec![0.0; spec.dim]; k + 1];
    for (i, c) in centres.iter_mut().take(k).enumerate() {
        c[i] = scale;
    }
    let lift = (spec.ood_offset * spec.ood_offset - radius_sq).sqrt();
    for c in centres[k].iter_mut().take(k) {
        *c = scale / k as f64;
    }
    centres[k][k] = lift;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Vec::new();
    let mut labels = Vec::new();
    // Dataset class 0 is OOD, ID class i is dataset class i + 1.
    let plan = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| (i + 1, &centres[i], n))
        .chain(std::iter::once((0, &centres[k], spec.n_per_class)));
    for (class, centre, n) in plan {
        for _ in 0..n {
            for &c in centre.iter() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values.push(c + noise);
            }
            labels.push(class);
        }
    }
    let features = DenseMatrix::from_vec(labels.len(), spec.dim, values)?;
    let feature_names = (0..spec.dim).map(|j| format!("x{j}")).collect();
    let class_names = (0..=k).map(|c| c.to_string()).collect();
    let mut ds = TabularDataset::new(features, labels, feature_names, class_names)?;
    ds.ood_class = Some(0);
    ds.minority_class = spec.minority.map(|m| m + 1);
    Ok(ds)
}

/// Fold assignment of the in-distribution rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: usize,
    /// Validation fold of every dataset row; `None` for OOD rows.
    pub fold_of: Vec<Option<usize>>,
    pub ood_rows: Vec<usize>,
    pub mdsr: Option<f64>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&r| self.fold_of[r] == Some(fold))
            .collect()
    }

    /// ID rows outside `fold`. OOD rows never appear here.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&r| matches!(self.fold_of[r], Some(f) if f != fold))
            .collect()
    }
}

/// Stratified folds: each ID class is shuffled and dealt round-robin, the
/// dealing position carrying over between classes so fold sizes stay even.
pub fn stratified_folds(ds: &TabularDataset, folds: usize, seed: u64) -> Result<SplitPlan> {
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![None; ds.n_rows()];
    let mut next = 0;
    for class in ds.id_classes() {
        let mut rows: Vec<usize> = (0..ds.n_rows()).filter(|&r| ds.labels[r] == class).collect();
        if rows.len() < folds {
            return Err(Error::Data(format!(
                "class `{}` has {} rows, fewer than {folds} folds",
                ds.class_names[class],
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for r in rows {
            fold_of[r] = Some(next % folds);
            next += 1;
        }
    }
    Ok(SplitPlan {
        folds,
        fold_of,
        ood_rows: ds.ood_rows(),
        mdsr: None,
        seed,
    })
}
