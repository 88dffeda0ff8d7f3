use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geodata::Raster;
use crate::tensor::{Shape, Tensor};
use crate::unet::UNetConfig;

pub const NUM_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["irrigated", "unirrigated", "uncultivated"];

/// One training tile: features `(1, c, h, w)` and per-pixel label codes
/// (0 unlabeled, 1..=3 a class).
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    features: Tensor,
    labels: Vec<u8>,
    counts: [u64; NUM_CLASSES],
}

impl Sample {
    pub fn new(features: Tensor, labels: Vec<u8>) -> Result<Self> {
        let s = features.shape();
        if s.n != 1 {
            return Err(Error::shape("sample", format!("features must hold one tile, got {s}")));
        }
        if labels.len() != s.plane() {
            return Err(Error::shape(
                "sample",
                format!("{} labels for a {}x{} tile", labels.len(), s.h, s.w),
            ));
        }
        let mut counts = [0u64; NUM_CLASSES];
        for &code in &labels {
            match code {
                0 => {}
                1..=3 => counts[code as usize - 1] += 1,
                _ => return Err(Error::Invalid(format!("label code {code} out of range"))),
            }
        }
        Ok(Sample {
            features,
            labels,
            counts,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Labeled-pixel counts per class.
    pub fn counts(&self) -> [u64; NUM_CLASSES] {
        self.counts
    }

    /// Class index (0-based) with the most labeled pixels, ties to the lower
    /// index; `None` for a tile without labels.
    pub fn dominant_class(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for k in 0..NUM_CLASSES {
            if self.counts[k] > 0 && best.is_none_or(|b| self.counts[k] > self.counts[b]) {
                best = Some(k);
            }
        }
        best
    }
}

/// Sample tiles of a uniform shape. Subsets share the underlying tiles.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    tiles: Arc<[Sample]>,
    index: Vec<usize>,
    shape: Shape,
}

impl TrainingSet {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let shape = samples
            .first()
            .map(|s| s.features.shape())
            .ok_or_else(|| Error::Invalid("training set has no tiles".into()))?;
        if let Some(bad) = samples.iter().find(|s| s.features.shape() != shape) {
            return Err(Error::shape(
                "training_set",
                format!("tiles differ in shape: {shape} vs {}", bad.features.shape()),
            ));
        }
        Ok(TrainingSet {
            index: (0..samples.len()).collect(),
            tiles: samples.into(),
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Shape of one tile's features, `(1, c, h, w)`.
    pub fn tile_shape(&self) -> Shape {
        self.shape
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.tiles[self.index[i]]
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> + '_ {
        self.index.iter().map(move |&i| &self.tiles[i])
    }

    /// The tiles at positions `indices` of this set.
    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            tiles: Arc::clone(&self.tiles),
            index: indices.iter().map(|&i| self.index[i]).collect(),
            shape: self.shape,
        }
    }

    /// Labeled-pixel totals per class.
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut total = [0u64; NUM_CLASSES];
        for s in self.samples() {
            for (t, c) in total.iter_mut().zip(s.counts) {
                *t += c;
            }
        }
        total
    }

    pub fn check_compatible(&self, config: &UNetConfig) -> Result<()> {
        config.check_input(self.shape)
    }

    /// Stacks the tiles at `indices` into one batch: features, labels and the
    /// per-class labeled-pixel counts of the batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<u8>, [u64; NUM_CLASSES])> {
        let s = self.shape;
        let mut data = Vec::with_capacity(indices.len() * s.len());
        let mut labels = Vec::with_capacity(indices.len() * s.plane());
        let mut counts = [0u64; NUM_CLASSES];
        for &i in indices {
            let tile = self.get(i);
            data.extend_from_slice(tile.features.data());
            labels.extend_from_slice(&tile.labels);
            for (t, c) in counts.iter_mut().zip(tile.counts) {
                *t += c;
            }
        }
        let x = Tensor::from_vec(Shape::new(indices.len(), s.c, s.h, s.w), data)?;
        Ok((x, labels, counts))
    }
}

fn offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=len - size).step_by(stride).collect();
    if v.last() != Some(&(len - size)) {
        v.push(len - size);
    }
    v
}

/// Cuts co-registered features and labels into `size × size` tiles every
/// `stride` pixels (plus a final tile flush with each edge), keeping tiles
/// with at least `min_labeled` labeled pixels.
pub fn extract_patches(
    features: &Raster<f32>,
    labels: &Raster<u8>,
    size: usize,
    stride: usize,
    min_labeled: usize,
) -> Result<TrainingSet> {
    features.grid().check_same(labels.grid(), "features vs labels")?;
    let (h, w, c) = (features.height(), features.width(), features.channels());
    if size == 0 || stride == 0 || size > h || size > w {
        return Err(Error::Invalid(format!(
            "cannot cut {size}x{size} tiles every {stride} px from a {h}x{w} raster"
        )));
    }
    let mut samples = Vec::new();
    for r0 in offsets(h, size, stride) {
        for c0 in offsets(w, size, stride) {
            let lab = labels.crop(r0, c0, size, size)?.into_data();
            if lab.iter().filter(|&&v| v != 0).count() < min_labeled.max(1) {
                continue;
            }
            let feat = features.crop(r0, c0, size, size)?.into_data();
            samples.push(Sample::new(Tensor::from_vec(Shape::new(1, c, size, size), feat)?, lab)?);
        }
    }
    TrainingSet::new(samples)
}
