//! Procedural pattern-classification data: each class is a fixed binary
//! pattern placed at a jittered position on a black canvas.

use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

use super::{DataError, LabeledDataset};

pub const MAX_CLASSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Square canvas side in pixels.
    pub canvas: usize,
    /// Square pattern side in pixels.
    pub pattern: usize,
    /// Maximum displacement from the centred placement along each axis.
    pub jitter: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            samples_per_class: 100,
            canvas: 16,
            pattern: 6,
            jitter: 3,
            seed: 0,
        }
    }
}

/// Pixel mask of pattern `class` on a `p x p` tile, row-major.
pub fn pattern_mask(class: usize, p: usize) -> Vec<bool> {
    let m = p / 2;
    let mut mask = vec![false; p * p];
    for y in 0..p {
        for x in 0..p {
            mask[y * p + x] = match class {
                0 => y == m,
                1 => x == m,
                2 => x == y,
                3 => x + y == p - 1,
                4 => x == m || y == m,
                5 => x == y || x + y == p - 1,
                6 => x == 0 || y == 0 || x == p - 1 || y == p - 1,
                7 => (x / 2 + y / 2) % 2 == 0,
                8 => x == 0 || y == p - 1,
                9 => y == 0 || x == m,
                10 => y == 0 || y == p - 1,
                11 => x == 0 || x == p - 1,
                12 => x + y < p,
                13 => y % 2 == 0 && x <= m,
                14 => (x == 0 || x == p - 1) && (y == 0 || y == p - 1),
                15 => x >= m && y >= m,
                _ => false,
            };
        }
    }
    mask
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), DataError> {
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(DataError::Config(format!(
                "num_classes must be in 1..={MAX_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.pattern < 3 {
            return Err(DataError::Config("pattern must be at least 3 pixels".into()));
        }
        if self.pattern + 2 * self.jitter > self.canvas {
            return Err(DataError::Config(format!(
                "pattern {} with jitter {} does not fit a {} canvas",
                self.pattern, self.jitter, self.canvas
            )));
        }
        Ok(())
    }
}

/// Deterministic dataset: sample `s` of class `c` uses its own seed stream,
/// so the output is a pure function of the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<LabeledDataset, DataError> {
    cfg.validate()?;
    let (n, p) = (cfg.canvas, cfg.pattern);
    let centre = (n - p) / 2;
    let lo = centre.saturating_sub(cfg.jitter) as i64;
    let hi = (centre + cfg.jitter).min(n - p) as i64;
    let mut images = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    let mut ids = Vec::with_capacity(images.capacity());
    for class in 0..cfg.num_classes {
        let mask = pattern_mask(class, p);
        for s in 0..cfg.samples_per_class {
            let mut rng = SplitMix64::new(derive_seed(cfg.seed, (class * 1_000_003 + s) as u64));
            let top = rng.range_inclusive(lo, hi) as usize;
            let left = rng.range_inclusive(lo, hi) as usize;
            let mut img = Tensor::zeros(&[1, n, n]);
            let data = img.data_mut();
            for y in 0..p {
                for x in 0..p {
                    if mask[y * p + x] {
                        data[(top + y) * n + left + x] = 1.0;
                    }
                }
            }
            images.push(img);
            labels.push(class);
            ids.push(format!("{class}/{s:05}"));
        }
    }
    LabeledDataset::with_ids(images, labels, ids, cfg.num_classes)
}
