//! Labelled feature datasets and their CSV file format.
//!
//! File layout: a header `structure_index,sample_id,class,labelled,feat_0,…`
//! followed by one row per sample. Floats are written with 17 significant
//! digits so that reading a file back reproduces every value exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index: 0 is healthy, k ≥ 1 is damage class `dk`.
pub type Label = usize;

pub const HEALTHY: Label = 0;

pub fn class_name(label: Label) -> String {
    if label == HEALTHY {
        "healthy".to_string()
    } else {
        format!("d{label}")
    }
}

pub fn parse_class(name: &str) -> Result<Label> {
    if name == "healthy" {
        return Ok(HEALTHY);
    }
    name.strip_prefix('d')
        .and_then(|k| k.parse::<Label>().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| Error::Data(format!("unknown class name `{name}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Frequency,
    Frf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub structure_index: usize,
    pub kind: FeatureKind,
    /// Sensor id for FRF features; `None` for natural frequencies.
    pub sensor: Option<usize>,
}

impl DatasetMeta {
    /// Channel tag used in file names: `freq` or `sensorN`.
    pub fn channel(&self) -> String {
        match self.sensor {
            Some(s) => format!("sensor{s}"),
            None => "freq".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<Label>,
    pub labelled: Vec<bool>,
    pub meta: DatasetMeta,
}

impl DomainDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<Label>,
        labelled: Vec<bool>,
        meta: DatasetMeta,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || labelled.len() != n {
            return Err(Error::Dimension(format!(
                "{n} rows, {} labels, {} mask entries",
                labels.len(),
                labelled.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "structure {} has non-finite features",
                meta.structure_index
            )));
        }
        Ok(Self {
            features,
            labels,
            labelled,
            meta,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row indices of samples whose healthy label is known.
    pub fn labelled_healthy(&self) -> Vec<usize> {
        (0..self.n_samples())
            .filter(|&i| self.labelled[i] && self.labels[i] == HEALTHY)
            .collect()
    }

    /// Stacks single-class datasets of one structure into one dataset.
    pub fn stack(parts: &[DomainDataset]) -> Result<DomainDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("nothing to stack".into()))?;
        let dim = first.dim();
        if parts.iter().any(|p| p.dim() != dim || p.meta != first.meta) {
            return Err(Error::Dimension(
                "stacked datasets must share dimension and metadata".into(),
            ));
        }
        let n: usize = parts.iter().map(|p| p.n_samples()).sum();
        let mut features = DMatrix::zeros(n, dim);
        let mut labels = Vec::with_capacity(n);
        let mut labelled = Vec::with_capacity(n);
        let mut row = 0;
        for p in parts {
            features.rows_mut(row, p.n_samples()).copy_from(&p.features);
            row += p.n_samples();
            labels.extend_from_slice(&p.labels);
            labelled.extend_from_slice(&p.labelled);
        }
        DomainDataset::new(features, labels, labelled, first.meta.clone())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("structure_index,sample_id,class,labelled");
        for j in 0..self.dim() {
            let _ = write!(out, ",feat_{j}");
        }
        out.push('\n');
        for i in 0..self.n_samples() {
            let _ = write!(
                out,
                "{},{},{},{}",
                self.meta.structure_index,
                i,
                class_name(self.labels[i]),
                u8::from(self.labelled[i])
            );
            for j in 0..self.dim() {
                let _ = write!(out, ",{:.16e}", self.features[(i, j)]);
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, kind: FeatureKind, sensor: Option<usize>) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Data("empty dataset file".into()))?;
        let columns: Vec<&str> = header.split(',').collect();
        if columns.len() < 5 || columns[..4] != ["structure_index", "sample_id", "class", "labelled"] {
            return Err(Error::Data(format!("unexpected header `{header}`")));
        }
        let dim = columns.len() - 4;
        for (j, c) in columns[4..].iter().enumerate() {
            if *c != format!("feat_{j}") {
                return Err(Error::Data(format!("unexpected feature column `{c}`")));
            }
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut labelled = Vec::new();
        let mut structure = None;
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let bad = |what: &str| Error::Data(format!("line {}: {what}", lineno + 2));
            if fields.len() != columns.len() {
                return Err(bad("wrong number of fields"));
            }
            let s: usize = fields[0].parse().map_err(|_| bad("bad structure index"))?;
            if *structure.get_or_insert(s) != s {
                return Err(bad("mixed structure indices"));
            }
            labels.push(parse_class(fields[2])?);
            labelled.push(match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("labelled must be 0 or 1")),
            });
            for f in &fields[4..] {
                values.push(f.parse::<f64>().map_err(|_| bad("bad float"))?);
            }
        }
        let n = labels.len();
        let meta = DatasetMeta {
            structure_index: structure.ok_or_else(|| Error::Data("no samples".into()))?,
            kind,
            sensor,
        };
        DomainDataset::new(DMatrix::from_row_slice(n, dim, &values), labels, labelled, meta)
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so an
/// interrupted run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
