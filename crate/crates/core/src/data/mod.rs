//! Labeled image sets, the synthetic pattern generator and Netpbm I/O.

mod pnm;
mod synthetic;

use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub use pnm::{decode as decode_pnm, encode as encode_pnm, read_pgm, read_pnm, read_ppm, write_pgm, write_ppm, PnmKind};
pub use synthetic::{generate_synthetic, pattern_mask, SyntheticConfig, MAX_CLASSES};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a binary Netpbm file (bad magic)")]
    BadMagic,
    #[error("unsupported Netpbm variant {0}")]
    Unsupported(String),
    #[error("maxval {0} is not 255")]
    MaxVal(usize),
    #[error("truncated image data")]
    Truncated,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("cannot encode a tensor of shape {0:?}")]
    Shape(Vec<usize>),
    #[error("{0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Images `[c, h, w]` with values in `[0, 1]`, one label and id each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Tensor>,
    labels: Vec<usize>,
    ids: Vec<String>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        let ids = (0..images.len()).map(|i| format!("{i:06}")).collect();
        Self::with_ids(images, labels, ids, num_classes)
    }

    pub fn with_ids(images: Vec<Tensor>, labels: Vec<usize>, ids: Vec<String>, num_classes: usize) -> Result<Self, DataError> {
        if images.len() != labels.len() || images.len() != ids.len() {
            return Err(DataError::Dataset(format!(
                "{} images, {} labels, {} ids",
                images.len(),
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Dataset(format!("label {bad} >= {num_classes} classes")));
        }
        Ok(Self {
            images,
            labels,
            ids,
            num_classes,
        })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Every `stride`-th sample starting at `start`.
    pub fn subset(&self, start: usize, stride: usize) -> Self {
        let idx: Vec<usize> = (start..self.len()).step_by(stride.max(1)).collect();
        Self {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Writes `<dir>/<class_id>/<sample_id>.pgm` (or `.ppm`), scaling `[0, 1]`
/// to `[0, 255]`. An id of the form `class/sample` keeps its sample part.
pub fn save_dataset(ds: &LabeledDataset, dir: impl AsRef<Path>) -> Result<(), DataError> {
    let dir = dir.as_ref();
    for (i, (img, &label)) in ds.images().iter().zip(ds.labels()).enumerate() {
        let class_dir = dir.join(label.to_string());
        std::fs::create_dir_all(&class_dir)?;
        let id = &ds.ids()[i];
        let stem = id.rsplit('/').next().unwrap_or(id);
        let scaled = img.map(|v| v * 255.0);
        let ext = if img.shape()[0] == 3 { "ppm" } else { "pgm" };
        std::fs::write(class_dir.join(format!("{stem}.{ext}")), encode_pnm(&scaled)?)?;
    }
    Ok(())
}

/// Reads the `<class_id>/<sample_id>.pgm` layout, sorted by class then
/// sample id, scaling pixels to `[0, 1]`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<LabeledDataset, DataError> {
    let dir = dir.as_ref();
    let mut classes: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let Some(class) = name.to_str().and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        classes.push((class, entry.path()));
    }
    classes.sort();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (class, path) in &classes {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")))
            .collect();
        files.sort();
        for f in files {
            let img = read_pnm(&f)?.map(|v| v / 255.0);
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            ids.push(format!("{class}/{stem}"));
            images.push(img);
            labels.push(*class);
        }
    }
    if images.is_empty() {
        return Err(DataError::Dataset(format!("no images under {}", dir.display())));
    }
    let num_classes = classes.iter().map(|(c, _)| c + 1).max().unwrap_or(0);
    LabeledDataset::with_ids(images, labels, ids, num_classes)
}
