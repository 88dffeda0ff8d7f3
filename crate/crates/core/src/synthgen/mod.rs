//! Synthetic worlds and multi-date scenes: irrigated rectangles and
//! center pivots, dryland fields, uncultivated patches, a road grid,
//! rectangular counties, clouds and scan-line gaps.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compositing::{season_start, SceneObservation, NUM_BANDS, NUM_WINDOWS, WINDOW_DAYS};
use crate::error::{Error, Result};
use crate::geodata::{
    burn, county_area, rasterize, CensusRow, Coord, Feature, Geometry, Polygon, Raster, RasterGrid, Ring, VectorLayer,
    IRRIGATED, UNCULTIVATED, UNIRRIGATED,
};

/// Mean reflectance per window and band.
pub type Trajectory = [[f32; NUM_BANDS]; NUM_WINDOWS];

/// Reflectance of a pixel with greenness `g` in `[0, 1]`: bright NIR, dark
/// red and SWIR as `g` grows.
pub fn reflectance(g: f32) -> [f32; NUM_BANDS] {
    [
        0.08 - 0.04 * g,
        0.10 - 0.02 * g,
        0.14 - 0.10 * g,
        0.22 + 0.28 * g,
        0.28 - 0.14 * g,
        0.20 - 0.12 * g,
    ]
}

pub fn trajectory(greenness: [f32; NUM_WINDOWS]) -> Trajectory {
    greenness.map(reflectance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub seed: u64,
    pub irrigated_rects: usize,
    pub irrigated_pivots: usize,
    pub dryland_fields: usize,
    pub uncultivated_patches: usize,
    /// Field side (or pivot diameter) range in pixels.
    pub field_min: usize,
    pub field_max: usize,
    /// Clear pixels kept around every field and road.
    pub gap: usize,
    /// Roads run along every `road_spacing`-th row and column; 0 for none.
    pub road_spacing: usize,
    pub counties_x: usize,
    pub counties_y: usize,
    pub scenes: usize,
    /// Target fraction of each scene under cloud.
    pub cloud_fraction: f64,
    /// Fraction of pixels lost to scan-line stripes in affected (odd) scenes.
    pub scanline_fraction: f64,
    /// Standard deviation of per-observation Gaussian noise.
    pub noise: f64,
    pub cloud_reflectance: f32,
    /// Irrigated, unirrigated and uncultivated trajectories.
    pub trajectories: [Trajectory; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 256,
            height: 256,
            pixel_size: 30.0,
            seed: 0,
            irrigated_rects: 12,
            irrigated_pivots: 12,
            dryland_fields: 24,
            uncultivated_patches: 12,
            field_min: 10,
            field_max: 24,
            gap: 2,
            road_spacing: 64,
            counties_x: 2,
            counties_y: 2,
            scenes: 12,
            cloud_fraction: 0.1,
            scanline_fraction: 0.2,
            noise: 0.03,
            cloud_reflectance: 0.6,
            trajectories: [
                trajectory([0.3, 0.8, 1.0, 1.0, 0.7, 0.3]),
                trajectory([0.5, 0.6, 0.2, 0.1, 0.1, 0.1]),
                trajectory([0.25, 0.3, 0.3, 0.25, 0.2, 0.15]),
            ],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("extent {}x{} is empty", self.width, self.height));
        }
        if !(self.pixel_size > 0.0) {
            return bad(format!("pixel size {} must be positive", self.pixel_size));
        }
        for (name, f) in [
            ("cloud_fraction", self.cloud_fraction),
            ("scanline_fraction", self.scanline_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} {f} outside [0, 1]"));
            }
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if self.field_min < 3 || self.field_max < self.field_min {
            return bad(format!(
                "field size range {}..={} is invalid",
                self.field_min, self.field_max
            ));
        }
        if self.counties_x == 0 || self.counties_y == 0 {
            return bad("at least one county is required".into());
        }
        if self.scenes == 0 {
            return bad("at least one scene per season is required".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RasterGrid> {
        RasterGrid::new(
            self.width,
            self.height,
            0.0,
            self.height as f64 * self.pixel_size,
            self.pixel_size,
        )
    }

    pub fn field_count(&self) -> usize {
        self.irrigated_rects + self.irrigated_pivots + self.dryland_fields + self.uncultivated_patches
    }
}

/// Generated geometry plus the full per-pixel class map used for rendering
/// (unlabeled background counts as uncultivated).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub grid: RasterGrid,
    pub labels: VectorLayer,
    pub roads: VectorLayer,
    pub counties: VectorLayer,
    pub classes: Raster<u8>,
}

const PIVOT_VERTICES: usize = 32;
const PLACEMENT_TRIES: usize = 10_000;

// pixel-space box: (row0, col0, rows, cols)
type PixBox = (usize, usize, usize, usize);

fn boxes_clear(a: PixBox, b: PixBox, gap: usize) -> bool {
    a.0 + a.2 + gap <= b.0 || b.0 + b.2 + gap <= a.0 || a.1 + a.3 + gap <= b.1 || b.1 + b.3 + gap <= a.1
}

fn clear_of_roads(b: PixBox, spacing: usize, gap: usize) -> bool {
    if spacing == 0 {
        return true;
    }
    // a road on line k·spacing occupies pixel rows (or columns) k·spacing - 1 and k·spacing
    let clear = |start: usize, len: usize| {
        let lo = start.saturating_sub(gap + 1);
        let hi = start + len + gap;
        (lo..=hi).all(|v| v % spacing != 0)
    };
    clear(b.0, b.2) && clear(b.1, b.3)
}

fn to_world(grid: &RasterGrid, row: f64, col: f64) -> Coord {
    [
        grid.origin_x + col * grid.pixel_size,
        grid.origin_y - row * grid.pixel_size,
    ]
}

fn rect_polygon(grid: &RasterGrid, b: PixBox) -> Result<Polygon> {
    let [x0, y1] = to_world(grid, b.0 as f64, b.1 as f64);
    let [x1, y0] = to_world(grid, (b.0 + b.2) as f64, (b.1 + b.3) as f64);
    Polygon::new(vec![Ring::rect(x0, y0, x1, y1)?])
}

fn pivot_polygon(grid: &RasterGrid, b: PixBox) -> Result<Polygon> {
    let r = b.2 as f64 / 2.0;
    let (cr, cc) = (b.0 as f64 + r, b.1 as f64 + r);
    let pts = (0..PIVOT_VERTICES)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / PIVOT_VERTICES as f64;
            to_world(grid, cr - r * t.sin(), cc + r * t.cos())
        })
        .collect();
    Polygon::new(vec![Ring::closed(pts)?])
}

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Pivot,
}

/// Places every field without overlap. Errors when the extent cannot hold
/// the requested fields.
pub fn gen_world(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let grid = config.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let plan = [
        (IRRIGATED, Shape::Rect, config.irrigated_rects),
        (IRRIGATED, Shape::Pivot, config.irrigated_pivots),
        (UNIRRIGATED, Shape::Rect, config.dryland_fields),
        (UNCULTIVATED, Shape::Rect, config.uncultivated_patches),
    ];
    let mut placed: Vec<PixBox> = Vec::with_capacity(config.field_count());
    let mut labels = VectorLayer::default();
    for (class, shape, count) in plan {
        for _ in 0..count {
            let b = place(config, shape, &placed, &mut rng).ok_or_else(|| {
                Error::Invalid(format!(
                    "a {}x{} extent cannot hold {} fields of {}..={} px",
                    config.width,
                    config.height,
                    config.field_count(),
                    config.field_min,
                    config.field_max
                ))
            })?;
            placed.push(b);
            let poly = match shape {
                Shape::Rect => rect_polygon(&grid, b)?,
                Shape::Pivot => pivot_polygon(&grid, b)?,
            };
            labels.push(
                Feature::new(Geometry::Polygon(poly))
                    .with("class", class)
                    .with("shape", if matches!(shape, Shape::Pivot) { "pivot" } else { "rect" }),
            );
        }
    }

    let mut roads = VectorLayer::default();
    if config.road_spacing > 0 {
        let (w, h) = (config.width as f64, config.height as f64);
        for k in (config.road_spacing..config.height).step_by(config.road_spacing) {
            let line = vec![to_world(&grid, k as f64, 0.0), to_world(&grid, k as f64, w)];
            roads.push(Feature::new(Geometry::LineString(line)).with("kind", "road"));
        }
        for k in (config.road_spacing..config.width).step_by(config.road_spacing) {
            let line = vec![to_world(&grid, 0.0, k as f64), to_world(&grid, h, k as f64)];
            roads.push(Feature::new(Geometry::LineString(line)).with("kind", "road"));
        }
    }

    let mut counties = VectorLayer::default();
    for cy in 0..config.counties_y {
        for cx in 0..config.counties_x {
            let (r0, r1) = (
                cy * config.height / config.counties_y,
                (cy + 1) * config.height / config.counties_y,
            );
            let (c0, c1) = (
                cx * config.width / config.counties_x,
                (cx + 1) * config.width / config.counties_x,
            );
            let poly = rect_polygon(&grid, (r0, c0, r1 - r0, c1 - c0))?;
            counties.push(Feature::new(Geometry::Polygon(poly)).with("county", format!("county_{cy}_{cx}")));
        }
    }

    let classes = burn(&labels, &grid, UNCULTIVATED, |_, f| {
        f.class()
            .ok_or_else(|| Error::Invalid("generated field without class".into()))
    })?;
    Ok(SynthWorld {
        grid,
        labels,
        roads,
        counties,
        classes,
    })
}

fn place(config: &SynthConfig, shape: Shape, placed: &[PixBox], rng: &mut ChaCha8Rng) -> Option<PixBox> {
    for _ in 0..PLACEMENT_TRIES {
        let rows = rng.random_range(config.field_min..=config.field_max);
        let cols = match shape {
            Shape::Pivot => rows,
            Shape::Rect => rng.random_range(config.field_min..=config.field_max),
        };
        if rows + 2 * config.gap > config.height || cols + 2 * config.gap > config.width {
            return None;
        }
        let r0 = rng.random_range(config.gap..=config.height - rows - config.gap);
        let c0 = rng.random_range(config.gap..=config.width - cols - config.gap);
        let b = (r0, c0, rows, cols);
        if clear_of_roads(b, config.road_spacing, config.gap) && placed.iter().all(|&p| boxes_clear(p, b, config.gap)) {
            return Some(b);
        }
    }
    None
}

impl SynthWorld {
    /// Label raster: 0 outside the labeled polygons.
    pub fn label_raster(&self) -> Result<Raster<u8>> {
        rasterize(&self.labels, &self.grid)
    }

    /// Census-style rows of labeled irrigated acres per county.
    pub fn truth_census(&self, year: i32) -> Result<Vec<CensusRow>> {
        let acres = county_area(&self.label_raster()?, &self.counties)?;
        Ok(acres
            .into_iter()
            .map(|(county, acres)| CensusRow { county, year, acres })
            .collect())
    }
}

/// Acquisition dates: `n` evenly spaced days across the six windows.
pub fn acquisition_dates(year: i32, n: usize) -> Result<Vec<NaiveDate>> {
    let start = season_start(year)?;
    let season = WINDOW_DAYS * NUM_WINDOWS as u64;
    Ok((0..n as u64)
        .map(|k| start + Days::new((2 * k + 1) * season / (2 * n as u64)))
        .collect())
}

fn scene_rng(seed: u64, year: i32, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + ((year as u32 as u64) << 16) + k as u64);
    rng
}

/// Renders one season of scenes. Clouds overwrite reflectance but stay
/// valid; every odd scene loses a `scanline_fraction` of its pixels to
/// diagonal nodata stripes.
pub fn gen_scenes(world: &SynthWorld, config: &SynthConfig, year: i32) -> Result<Vec<SceneObservation>> {
    config.validate()?;
    let start = season_start(year)?;
    acquisition_dates(year, config.scenes)?
        .into_iter()
        .enumerate()
        .map(|(k, date)| {
            let window = ((date - start).num_days() as u64 / WINDOW_DAYS) as usize;
            render_scene(
                world,
                config,
                date,
                window,
                &mut scene_rng(config.seed, year, k),
                k % 2 == 1,
            )
        })
        .collect()
}

fn render_scene(
    world: &SynthWorld,
    config: &SynthConfig,
    date: NaiveDate,
    window: usize,
    rng: &mut ChaCha8Rng,
    striped: bool,
) -> Result<SceneObservation> {
    let grid = world.grid;
    let n = grid.len();
    let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Invalid(e.to_string()))?;
    let noise = |rng: &mut ChaCha8Rng| {
        if config.noise > 0.0 {
            normal.sample(rng) as f32
        } else {
            0.0
        }
    };

    let cloud = cloud_mask(&grid, config.cloud_fraction, rng);
    let mut data = vec![0f32; NUM_BANDS * n];
    for (i, &class) in world.classes.band(0).iter().enumerate() {
        let mean = &config.trajectories[class as usize - 1][window];
        for b in 0..NUM_BANDS {
            let base = if cloud[i] { config.cloud_reflectance } else { mean[b] };
            data[b * n + i] = base + noise(rng);
        }
    }

    let mut valid = vec![true; n];
    if striped && config.scanline_fraction > 0.0 {
        const PERIOD: f64 = 16.0;
        let phase: f64 = rng.random();
        for r in 0..grid.height {
            for c in 0..grid.width {
                let t = ((r as f64 + 0.25 * c as f64) / PERIOD + phase).fract();
                if t < config.scanline_fraction {
                    valid[r * grid.width + c] = false;
                }
            }
        }
    }
    SceneObservation::new(date, Raster::from_vec(grid, NUM_BANDS, data)?, valid)
}

/// Circular blobs added until at least `fraction` of the pixels are covered.
fn cloud_mask(grid: &RasterGrid, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let (w, h) = (grid.width, grid.height);
    let mut mask = vec![false; w * h];
    let target = (fraction * (w * h) as f64).ceil() as usize;
    let mut covered = 0;
    let max_r = (w.min(h) as f64 / 8.0).max(2.0);
    while covered < target {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let r = rng.random_range(1.0..max_r);
        let (r0, r1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h));
        let (c0, c1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w));
        for row in r0..r1 {
            for col in c0..c1 {
                let (dy, dx) = (row as f64 + 0.5 - cy, col as f64 + 0.5 - cx);
                let m = &mut mask[row * w + col];
                if !*m && dy * dy + dx * dx <= r * r {
                    *m = true;
                    covered += 1;
                }
            }
        }
    }
    mask
}
