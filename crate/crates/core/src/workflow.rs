//! The whole pipeline on a synthetic world: generate, composite, split,
//! train an ensemble, predict with overlap tiles, reduce and score.

use serde::{Deserialize, Serialize};

use crate::compositing::{build_stack, season_start, CompositeStack, STACK_CHANNELS};
use crate::error::{Error, Result};
use crate::evaluation::{
    binary_confusion, class_metrics, confusion, iqr_histograms, overall_accuracy, ClassMetrics, ConfusionMatrix,
    IqrHistogram, CLASS_NAMES,
};
use crate::geodata::{grid_split, rasterize, split_labels, Raster, SplitRule, Tile, VectorLayer};
use crate::inference::{overlap_tile_predict, quantize_probs, EnsembleRaster};
use crate::synthgen::{gen_scenes, gen_world, SynthConfig, SynthWorld};
use crate::training::{extract_patches, train_ensemble, LossRecord, TrainConfig, NUM_CLASSES};
use crate::unet::{UNet, UNetConfig};

/// Network shape; input channels and classes are fixed by the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub base_filters: usize,
    pub depth: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            base_filters: 8,
            depth: 2,
        }
    }
}

impl ModelShape {
    pub fn config(&self, weight_decay: f64, seed: u64) -> UNetConfig {
        UNetConfig {
            in_channels: STACK_CHANNELS,
            num_classes: NUM_CLASSES,
            base_filters: self.base_filters,
            depth: self.depth,
            weight_decay,
            seed,
        }
    }
}

/// Tiling of the extent into train/test cells and of rasters into patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Split cell side in pixels.
    pub cell_px: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub patch: usize,
    pub patch_stride: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            cell_px: 64,
            train_fraction: 0.75,
            seed: 0,
            patch: 32,
            patch_stride: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub tile: usize,
    /// 0 picks the network's minimum overlap.
    pub overlap: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { tile: 128, overlap: 0 }
    }
}

/// Everything one run needs; also the on-disk run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub year: i32,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub predict: PredictConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            year: 2015,
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            model: ModelShape::default(),
            train: TrainConfig {
                total_steps: 2000,
                batch_size: 8,
                ensemble_size: 3,
                log_every: 50,
                ..TrainConfig::default()
            },
            predict: PredictConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copies the master seed into every stage.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.split.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// Train/test label layers and their rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitLabels {
    pub train_tiles: Vec<Tile>,
    pub test_tiles: Vec<Tile>,
    pub train: VectorLayer,
    pub test: VectorLayer,
    pub train_raster: Raster<u8>,
    pub test_raster: Raster<u8>,
}

pub fn split_world(world: &SynthWorld, cfg: &SplitConfig) -> Result<SplitLabels> {
    let cell = cfg.cell_px as f64 * world.grid.pixel_size;
    let (train_tiles, test_tiles) = grid_split(
        world.grid.bounds(),
        cell,
        SplitRule::Fraction(cfg.train_fraction),
        cfg.seed,
    )?;
    let (train, test) = split_labels(&world.labels, &train_tiles, &test_tiles);
    Ok(SplitLabels {
        train_raster: rasterize(&train, &world.grid)?,
        test_raster: rasterize(&test, &world.grid)?,
        train_tiles,
        test_tiles,
        train,
        test,
    })
}

/// Quantized class probabilities of one model over a whole stack.
pub fn predict_member(model: &UNet, stack: &CompositeStack, cfg: &PredictConfig) -> Result<Raster<u8>> {
    let overlap = match cfg.overlap {
        0 => model.config().min_overlap(),
        o => o,
    };
    let probs = overlap_tile_predict(model, &stack.to_tensor(), cfg.tile, overlap)?;
    quantize_probs(&probs, stack.grid())
}

/// Scores of the reduced ensemble on held-out labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub confusion: ConfusionMatrix,
    pub binary: ConfusionMatrix,
    pub irrigated: ClassMetrics,
    pub overall_accuracy: f64,
    pub binary_overall_accuracy: f64,
    pub histograms: Vec<IqrHistogram>,
}

impl Scores {
    /// Mean predicted-class IQR over irrigated-predicted pixels, split into
    /// (correct, misclassified).
    pub fn irrigated_iqr_means(&self) -> (Option<f64>, Option<f64>) {
        let h = &self.histograms[0];
        (h.mean_correct(), h.mean_incorrect())
    }
}

pub fn score(ensemble: &EnsembleRaster, labels: &Raster<u8>) -> Result<Scores> {
    let confusion = confusion(&ensemble.classes, labels, &CLASS_NAMES)?;
    let binary = binary_confusion(&ensemble.classes, labels)?;
    Ok(Scores {
        irrigated: class_metrics(&confusion, 0),
        overall_accuracy: overall_accuracy(&confusion)?,
        binary_overall_accuracy: overall_accuracy(&binary)?,
        histograms: iqr_histograms(ensemble, labels)?,
        confusion,
        binary,
    })
}

pub struct RunOutput {
    pub world: SynthWorld,
    pub stack: CompositeStack,
    pub split: SplitLabels,
    pub models: Vec<UNet>,
    pub losses: Vec<Vec<LossRecord>>,
    pub members: Vec<Raster<u8>>,
    pub ensemble: EnsembleRaster,
    pub scores: Scores,
}

/// Runs every stage in memory.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let world = gen_world(&cfg.synth)?;
    let scenes = gen_scenes(&world, &cfg.synth, cfg.year)?;
    let stack = build_stack(&scenes, season_start(cfg.year)?)?;
    let split = split_world(&world, &cfg.split)?;
    let set = extract_patches(
        &stack.features,
        &split.train_raster,
        cfg.split.patch,
        cfg.split.patch_stride,
        1,
    )?;
    log::info!("{} training patches, class pixels {:?}", set.len(), set.class_counts());
    let mc = cfg.model.config(cfg.train.weight_decay, cfg.seed);
    let trained = train_ensemble(&set, &mc, &cfg.train, false)?;
    let (models, losses): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let members = models
        .iter()
        .map(|m| predict_member(m, &stack, &cfg.predict))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = EnsembleRaster::reduce(&members)?;
    if split.test_raster.data().iter().all(|&v| v == 0) {
        return Err(Error::Invalid("held-out tiles contain no labels".into()));
    }
    let scores = score(&ensemble, &split.test_raster)?;
    Ok(RunOutput {
        world,
        stack,
        split,
        models,
        losses,
        members,
        ensemble,
        scores,
    })
}
