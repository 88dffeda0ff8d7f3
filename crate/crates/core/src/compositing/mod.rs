//! Temporal-mean compositing of dated six-band scenes into the 36-channel
//! feature stack.

use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{read_sidecar, write_sidecar, Raster, RasterGrid};
use crate::tensor::{Shape, Tensor};

pub const NUM_BANDS: usize = 6;
pub const NUM_WINDOWS: usize = 6;
pub const WINDOW_DAYS: u64 = 32;
pub const STACK_CHANNELS: usize = NUM_BANDS * NUM_WINDOWS;
pub const BAND_NAMES: [&str; NUM_BANDS] = ["blue", "green", "red", "nir", "swir1", "swir2"];

/// Nodata sentinel written into scene files for pixels without a measurement.
pub const SCENE_NODATA: f32 = -9999.0;

/// A half-open span of days `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date < self.end
    }

    /// Last day inside the window.
    pub fn last_day(&self) -> NaiveDate {
        self.end.pred_opt().expect("window end after start")
    }
}

/// Six consecutive 32-day windows from `year_start`, 192 days in all.
pub fn window_partition(year_start: NaiveDate) -> [Window; NUM_WINDOWS] {
    std::array::from_fn(|k| {
        let start = year_start + Days::new(WINDOW_DAYS * k as u64);
        Window {
            start,
            end: start + Days::new(WINDOW_DAYS),
        }
    })
}

/// May 1 of `year`.
pub fn season_start(year: i32) -> Result<NaiveDate> {
    NaiveDate::from_ymd_opt(year, 5, 1).ok_or_else(|| Error::Invalid(format!("no May 1 in year {year}")))
}

/// One acquisition: six bands and a per-pixel validity mask shared by all bands.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObservation {
    pub date: NaiveDate,
    pub bands: Raster<f32>,
    pub valid: Vec<bool>,
}

impl SceneObservation {
    pub fn new(date: NaiveDate, bands: Raster<f32>, valid: Vec<bool>) -> Result<Self> {
        if bands.channels() != NUM_BANDS {
            return Err(Error::shape(
                "scene",
                format!("expected {NUM_BANDS} bands, got {}", bands.channels()),
            ));
        }
        if valid.len() != bands.grid().len() {
            return Err(Error::shape(
                "scene",
                format!("mask has {} pixels, bands have {}", valid.len(), bands.grid().len()),
            ));
        }
        Ok(SceneObservation { date, bands, valid })
    }

    /// Scene file form: invalid pixels carry the nodata value in every band.
    pub fn to_raster(&self) -> Raster<f32> {
        let mut r = self.bands.clone();
        let nodata = SCENE_NODATA;
        let n = self.valid.len();
        for c in 0..NUM_BANDS {
            for (v, &ok) in r.data_mut()[c * n..(c + 1) * n].iter_mut().zip(&self.valid) {
                if !ok {
                    *v = nodata;
                }
            }
        }
        Raster::from_vec(r.grid().with_nodata(nodata as f64), NUM_BANDS, r.into_data()).expect("same size")
    }

    /// Reads the mask back: a pixel is valid unless any band holds the
    /// raster's nodata value or is not finite.
    pub fn from_raster(date: NaiveDate, raster: Raster<f32>) -> Result<Self> {
        let nodata = raster.grid().nodata as f32;
        let n = raster.grid().len();
        let mut valid = vec![true; n];
        for c in 0..raster.channels().min(NUM_BANDS) {
            for (ok, &v) in valid.iter_mut().zip(raster.band(c)) {
                if v == nodata || !v.is_finite() {
                    *ok = false;
                }
            }
        }
        SceneObservation::new(date, raster, valid)
    }

    /// `scene_YYYY-MM-DD.ras` inside `dir`.
    pub fn file_name(&self) -> String {
        format!("scene_{}.ras", self.date.format("%Y-%m-%d"))
    }

    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(self.file_name());
        self.to_raster().save(&path)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let date = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("scene_"))
            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::Parse {
                path: path.into(),
                detail: "scene file name must be scene_YYYY-MM-DD.ras".into(),
            })?;
        SceneObservation::from_raster(date, Raster::load(path)?)
    }
}

/// Scene files (`scene_*.ras`) of a directory, sorted by name.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<SceneObservation>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scene_") && n.ends_with(".ras"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| SceneObservation::load(p)).collect()
}

/// Total order used for accumulation: date, then band bits, then mask.
fn scene_order(a: &SceneObservation, b: &SceneObservation) -> std::cmp::Ordering {
    a.date
        .cmp(&b.date)
        .then_with(|| {
            let bits = |s: &SceneObservation| s.bands.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bits(a).cmp(&bits(b))
        })
        .then_with(|| a.valid.cmp(&b.valid))
}

/// Per-band mean over the valid observations dated inside `window`, plus the
/// number of contributing observations per pixel. Pixels without any get 0.
pub fn temporal_mean(observations: &[SceneObservation], window: &Window) -> Result<(Raster<f32>, Raster<i32>)> {
    let grid = observations
        .first()
        .map(|o| *o.bands.grid())
        .ok_or_else(|| Error::Invalid("no observations".into()))?;
    for o in observations {
        grid.check_same(o.bands.grid(), "scene georeference")?;
    }
    let mut inside: Vec<&SceneObservation> = observations.iter().filter(|o| window.contains(o.date)).collect();
    inside.sort_by(|a, b| scene_order(a, b));

    let n = grid.len();
    let mut sums = vec![0.0f64; NUM_BANDS * n];
    let mut counts = vec![0i32; n];
    for o in &inside {
        for (i, _) in o.valid.iter().enumerate().filter(|(_, &ok)| ok) {
            counts[i] += 1;
            for c in 0..NUM_BANDS {
                sums[c * n + i] += o.bands.data()[c * n + i] as f64;
            }
        }
    }
    let mean = sums
        .iter()
        .enumerate()
        .map(|(j, &s)| match counts[j % n] {
            0 => 0.0,
            k => (s / k as f64) as f32,
        })
        .collect();
    let grid = grid.with_nodata(0.0);
    Ok((
        Raster::from_vec(grid, NUM_BANDS, mean)?,
        Raster::from_vec(grid, 1, counts)?,
    ))
}

/// The 36-channel feature raster, window-major then band, with the number
/// of valid observations per window and pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositeStack {
    pub features: Raster<f32>,
    pub counts: Raster<i32>,
    pub year_start: NaiveDate,
    pub windows: [Window; NUM_WINDOWS],
    /// One line per window that received no scenes.
    pub warnings: Vec<String>,
}

/// Stack file metadata, stored in the raster's sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackMeta {
    pub year_start: NaiveDate,
    pub windows: Vec<Window>,
    pub band_names: Vec<String>,
    pub channel_order: String,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

pub fn build_stack(scenes: &[SceneObservation], year_start: NaiveDate) -> Result<CompositeStack> {
    if scenes.is_empty() {
        return Err(Error::Invalid("no scenes to composite".into()));
    }
    let windows = window_partition(year_start);
    if !scenes.iter().any(|s| windows.iter().any(|w| w.contains(s.date))) {
        return Err(Error::Invalid(format!(
            "no scene falls in the {} days from {year_start}",
            WINDOW_DAYS * NUM_WINDOWS as u64
        )));
    }
    let grid = *scenes[0].bands.grid();
    let n = grid.len();
    let mut features = Vec::with_capacity(STACK_CHANNELS * n);
    let mut counts = Vec::with_capacity(NUM_WINDOWS * n);
    let mut warnings = Vec::new();
    for (k, w) in windows.iter().enumerate() {
        let (mean, count) = temporal_mean(scenes, w)?;
        if !scenes.iter().any(|s| w.contains(s.date)) {
            let msg = format!(
                "window {k} ({} to {}) has no scenes; filled with 0",
                w.start,
                w.last_day()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        features.extend_from_slice(mean.data());
        counts.extend_from_slice(count.data());
    }
    let grid = grid.with_nodata(0.0);
    Ok(CompositeStack {
        features: Raster::from_vec(grid, STACK_CHANNELS, features)?,
        counts: Raster::from_vec(grid, NUM_WINDOWS, counts)?,
        year_start,
        windows,
        warnings,
    })
}

impl CompositeStack {
    pub fn grid(&self) -> &RasterGrid {
        self.features.grid()
    }

    pub fn meta(&self, manifest_hash: Option<String>) -> StackMeta {
        StackMeta {
            year_start: self.year_start,
            windows: self.windows.to_vec(),
            band_names: BAND_NAMES.iter().map(|s| s.to_string()).collect(),
            channel_order: "window-major, then band".into(),
            warnings: self.warnings.clone(),
            manifest_hash,
        }
    }

    /// Features as a `(1, 36, h, w)` tensor.
    pub fn to_tensor(&self) -> Tensor {
        features_tensor(&self.features)
    }

    /// Writes the feature raster at `path`, its metadata sidecar and the
    /// count raster at `<path>.counts`.
    pub fn save(&self, path: &Path, manifest_hash: Option<String>) -> Result<()> {
        self.features.save(path)?;
        self.counts.save(&counts_path(path))?;
        write_sidecar(path, &serde_json::to_value(self.meta(manifest_hash))?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let features = Raster::<f32>::load(path)?;
        if features.channels() != STACK_CHANNELS {
            return Err(Error::Parse {
                path: path.into(),
                detail: format!("stack has {} channels, expected {STACK_CHANNELS}", features.channels()),
            });
        }
        let counts = Raster::<i32>::load(&counts_path(path))?;
        features.grid().check_same(counts.grid(), "stack counts")?;
        let meta: StackMeta = serde_json::from_value(read_sidecar(path)?)?;
        let windows = window_partition(meta.year_start);
        Ok(CompositeStack {
            features,
            counts,
            year_start: meta.year_start,
            windows,
            warnings: meta.warnings,
        })
    }
}

fn counts_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".counts");
    s.into()
}

/// Any multi-channel raster as a `(1, c, h, w)` tensor.
pub fn features_tensor(r: &Raster<f32>) -> Tensor {
    Tensor::from_vec(Shape::new(1, r.channels(), r.height(), r.width()), r.data().to_vec())
        .expect("raster and tensor sizes agree")
}

/// Day of season (0-based) or `None` outside the 192 days.
pub fn season_day(year_start: NaiveDate, date: NaiveDate) -> Option<u64> {
    let d = (date - year_start).num_days();
    (0..(WINDOW_DAYS * NUM_WINDOWS as u64) as i64)
        .contains(&d)
        .then_some(d as u64)
}
