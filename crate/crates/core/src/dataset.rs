//! On-disk bundle loading and class groupings.
//!
//! A bundle directory holds four files described by `manifest.json`:
//! a headerless little-endian `f32` feature matrix (row-major), the
//! per-image evaluation records, the class table, and optionally a
//! directory of pre-pooling feature maps used for heatmaps.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassIndex = u32;

pub const MANIFEST_VERSION: u32 = 1;

/// Dense row-major matrix of per-image feature activations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_features: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds a matrix, rejecting wrong lengths and non-finite values.
    pub fn new(n_rows: usize, n_features: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_rows * n_features {
            return Err(Error::InvalidDimensions(format!(
                "{} values for a {n_rows}x{n_features} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDimensions(format!(
                "non-finite value at row {}, feature {}",
                pos / n_features.max(1),
                pos % n_features.max(1)
            )));
        }
        Ok(Self {
            n_rows,
            n_features,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f32 {
        self.data[row * self.n_features + feature]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.n_features..(row + 1) * self.n_features]
    }

    /// Values of one feature over the given rows, in row order.
    pub fn gather(&self, feature: usize, rows: &[usize]) -> Vec<f32> {
        rows.iter().map(|&r| self.value(r, feature)).collect()
    }

    pub fn column(&self, feature: usize) -> Vec<f32> {
        (0..self.n_rows).map(|r| self.value(r, feature)).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn check_feature(&self, feature: usize) -> Result<()> {
        if feature < self.n_features {
            Ok(())
        } else {
            Err(Error::InvalidFeature {
                index: feature,
                n_features: self.n_features,
            })
        }
    }
}

/// Evaluation outcome for one image. `failure()` is derived, never stored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub true_label: ClassIndex,
    pub predicted_label: ClassIndex,
}

impl EvalRecord {
    #[inline]
    pub fn failure(&self) -> bool {
        self.predicted_label != self.true_label
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingKind {
    Label,
    Prediction,
}

impl GroupingKind {
    pub const ALL: [GroupingKind; 2] = [GroupingKind::Label, GroupingKind::Prediction];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupingKind::Label => "label",
            GroupingKind::Prediction => "prediction",
        }
    }

    fn selects(self, record: &EvalRecord, class: ClassIndex) -> bool {
        match self {
            GroupingKind::Label => record.true_label == class,
            GroupingKind::Prediction => record.predicted_label == class,
        }
    }
}

impl fmt::Display for GroupingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "label" => Ok(GroupingKind::Label),
            "prediction" => Ok(GroupingKind::Prediction),
            other => Err(format!("unknown grouping '{other}' (expected label|prediction)")),
        }
    }
}

/// The rows of one class grouping, strictly increasing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grouping {
    pub kind: GroupingKind,
    pub class_index: ClassIndex,
    pub rows: Vec<usize>,
}

impl Grouping {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n_images: usize,
    pub n_features: usize,
    pub features_file: String,
    pub records_file: String,
    pub classes_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_maps_dir: Option<String>,
}

impl Manifest {
    pub fn standard(n_images: usize, n_features: usize) -> Self {
        Self {
            version: MANIFEST_VERSION,
            n_images,
            n_features,
            features_file: "features.bin".into(),
            records_file: "records.csv".into(),
            classes_file: "classes.csv".into(),
            feature_maps_dir: None,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ClassRow {
    class_index: ClassIndex,
    class_name: String,
}

/// Feature matrix, evaluation records and class table. Immutable once built.
#[derive(Clone, Debug)]
pub struct DatasetBundle {
    features: FeatureMatrix,
    records: Vec<EvalRecord>,
    classes: BTreeMap<ClassIndex, String>,
    failures: Vec<bool>,
    feature_maps_dir: Option<PathBuf>,
}

impl DatasetBundle {
    pub fn new(
        features: FeatureMatrix,
        records: Vec<EvalRecord>,
        classes: BTreeMap<ClassIndex, String>,
    ) -> Result<Self> {
        if records.len() != features.n_rows() {
            return Err(Error::InvalidDimensions(format!(
                "{} records for {} feature rows",
                records.len(),
                features.n_rows()
            )));
        }
        for r in &records {
            for class in [r.true_label, r.predicted_label] {
                if !classes.contains_key(&class) {
                    return Err(Error::UnknownClass(class));
                }
            }
        }
        let failures = records.iter().map(EvalRecord::failure).collect();
        Ok(Self {
            features,
            records,
            classes,
            failures,
            feature_maps_dir: None,
        })
    }

    pub fn with_feature_maps_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.feature_maps_dir = dir;
        self
    }

    pub fn n_images(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn classes(&self) -> &BTreeMap<ClassIndex, String> {
        &self.classes
    }

    pub fn class_name(&self, class: ClassIndex) -> Option<&str> {
        self.classes.get(&class).map(String::as_str)
    }

    /// Per-row failure flags (`predicted_label != true_label`).
    pub fn failures(&self) -> &[bool] {
        &self.failures
    }

    pub fn feature_maps_dir(&self) -> Option<&Path> {
        self.feature_maps_dir.as_deref()
    }

    /// Rows whose label (or prediction) equals `class`. May be empty.
    pub fn group(&self, kind: GroupingKind, class: ClassIndex) -> Result<Grouping> {
        if !self.classes.contains_key(&class) {
            return Err(Error::UnknownClass(class));
        }
        let rows = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| kind.selects(r, class))
            .map(|(i, _)| i)
            .collect();
        Ok(Grouping {
            kind,
            class_index: class,
            rows,
        })
    }

    /// One grouping per class in the class table, in class order.
    pub fn groupings(&self, kind: GroupingKind) -> Vec<Grouping> {
        let mut by_class: BTreeMap<ClassIndex, Vec<usize>> = self.classes.keys().map(|&c| (c, Vec::new())).collect();
        for (i, r) in self.records.iter().enumerate() {
            let class = match kind {
                GroupingKind::Label => r.true_label,
                GroupingKind::Prediction => r.predicted_label,
            };
            by_class.get_mut(&class).expect("validated class").push(i);
        }
        by_class
            .into_iter()
            .map(|(class_index, rows)| Grouping {
                kind,
                class_index,
                rows,
            })
            .collect()
    }

    /// Writes the bundle as a directory with a standard manifest.
    pub fn write_dir(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest::standard(self.n_images(), self.n_features());

        let mut bytes = Vec::with_capacity(self.features.as_slice().len() * 4);
        for v in self.features.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&manifest.features_file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

        let path = dir.join(&manifest.records_file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join(&manifest.classes_file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        for (&class_index, name) in &self.classes {
            w.serialize(ClassRow {
                class_index,
                class_name: name.clone(),
            })
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record() as usize).unwrap_or(0);
    Error::Record {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// Loads and validates a bundle from its manifest.
pub fn load_bundle(manifest_path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!("unsupported version {}", manifest.version),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let classes = read_classes(&base.join(&manifest.classes_file))?;
    let features = read_features(
        &base.join(&manifest.features_file),
        manifest.n_images,
        manifest.n_features,
    )?;
    let records_path = base.join(&manifest.records_file);
    let records = read_records(&records_path, &classes)?;
    if records.len() != manifest.n_images {
        return Err(Error::RecordCount {
            path: records_path,
            expected: manifest.n_images,
            actual: records.len(),
        });
    }
    let fmaps = manifest.feature_maps_dir.as_ref().map(|d| base.join(d));
    Ok(DatasetBundle::new(features, records, classes)?.with_feature_maps_dir(fmaps))
}

fn read_features(path: &Path, n_images: usize, n_features: usize) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (n_images as u64) * (n_features as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            path: path.to_path_buf(),
            row: pos / n_features,
            feature: pos % n_features,
        });
    }
    FeatureMatrix::new(n_images, n_features, data)
}

fn read_classes(path: &Path) -> Result<BTreeMap<ClassIndex, String>> {
    let mut reader = open_csv(path, &["class_index", "class_name"])?;
    let mut classes = BTreeMap::new();
    for (row, rec) in reader.deserialize::<ClassRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Record {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        if classes.insert(rec.class_index, rec.class_name).is_some() {
            return Err(Error::Record {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate class index {}", rec.class_index),
            });
        }
    }
    Ok(classes)
}

fn read_records(path: &Path, classes: &BTreeMap<ClassIndex, String>) -> Result<Vec<EvalRecord>> {
    let mut reader = open_csv(path, &["image_id", "true_label", "predicted_label"])?;
    let mut records = Vec::new();
    for (row, rec) in reader.deserialize::<EvalRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Record {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        for class in [rec.true_label, rec.predicted_label] {
            if !classes.contains_key(&class) {
                return Err(Error::UnknownClassInFile {
                    path: path.to_path_buf(),
                    row,
                    class,
                });
            }
        }
        records.push(rec);
    }
    Ok(records)
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let found = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Record {
            path: path.to_path_buf(),
            row: 0,
            message: format!("expected header `{}`", header.join(",")),
        });
    }
    Ok(reader)
}
