//! Synthetic multi-class image-like datasets, usable in memory or written
//! through the IDX pipeline. Each class is a fixed sparse intensity pattern;
//! samples add per-pixel Gaussian noise and quantize to bytes, mirroring how
//! real image data flows through the loader.

use std::path::Path;
use std::sync::Arc;

use crate::problems::idx;
use crate::problems::logistic::ClassificationData;
use crate::rng::CounterRng;
use crate::Result;

/// Raw byte-level dataset.
pub struct RawDataset {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub features: usize,
}

fn class_pattern(features: usize, class: usize, seed: u64) -> Vec<f64> {
    let mut center = vec![0.0; features];
    let mut rng = CounterRng::from_key(&[seed, 0xb10b, class as u64]);
    let active = (features / 8).max(4);
    for _ in 0..active {
        center[rng.gen_range(features)] = 0.85;
    }
    center
}

/// Generate `count` samples with labels cycling over the classes.
pub fn generate_raw(
    classes: usize,
    features: usize,
    count: usize,
    noise: f64,
    seed: u64,
) -> RawDataset {
    assert!(classes >= 2 && features >= 4 && count >= classes);
    let patterns: Vec<Vec<f64>> = (0..classes)
        .map(|c| class_pattern(features, c, seed))
        .collect();
    let mut pixels = Vec::with_capacity(count * features);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let c = i % classes;
        let mut rng = CounterRng::from_key(&[seed, 0x5a3, i as u64]);
        for &center in &patterns[c] {
            let v = (center + noise * rng.next_normal()).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
        labels.push(c as u8);
    }
    RawDataset {
        pixels,
        labels,
        features,
    }
}

impl RawDataset {
    /// Scale to `[0, 1]` features, matching the IDX loader.
    pub fn to_classification(&self) -> Result<Arc<ClassificationData>> {
        let feats: Vec<f64> = self.pixels.iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Arc::new(ClassificationData::new(
            feats,
            self.labels.clone(),
            self.features,
        )?))
    }

    /// Write as an IDX image/label pair. Square feature counts are written
    /// as square images; anything else as `features x 1`.
    pub fn write_idx(&self, images: &Path, labels: &Path, gzip: bool) -> Result<()> {
        let side = (self.features as f64).sqrt().round() as usize;
        let (rows, cols) = if side * side == self.features {
            (side, side)
        } else {
            (self.features, 1)
        };
        idx::write_images(images, &self.pixels, rows, cols, gzip)?;
        idx::write_labels(labels, &self.labels, gzip)
    }
}

/// Train/test pair with disjoint sample streams.
pub fn generate_split(
    classes: usize,
    features: usize,
    train: usize,
    test: usize,
    noise: f64,
    seed: u64,
) -> (RawDataset, RawDataset) {
    let both = generate_raw(classes, features, train + test, noise, seed);
    let train_ds = RawDataset {
        pixels: both.pixels[..train * features].to_vec(),
        labels: both.labels[..train].to_vec(),
        features,
    };
    let test_ds = RawDataset {
        pixels: both.pixels[train * features..].to_vec(),
        labels: both.labels[train..].to_vec(),
        features,
    };
    (train_ds, test_ds)
}
