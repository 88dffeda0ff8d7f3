//! The train/test tile grid and label splitting along it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vector::{Coord, Feature, Geometry, Polygon, Ring, VectorLayer};
use crate::error::{Error, Result};

/// Default tile edge in map units (768 pixels of 30 m).
pub const TILE_SIZE_M: f64 = 23_040.0;

/// `[min_x, min_y, max_x, max_y]`.
pub type Extent = [f64; 4];

/// One square cell of the split grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Tile {
    /// Half-open containment: `[min_x, max_x) × (min_y, max_y]`, so every
    /// point of the grid belongs to exactly one tile.
    pub fn contains(&self, p: Coord) -> bool {
        p[0] >= self.min_x && p[0] < self.max_x && p[1] > self.min_y && p[1] <= self.max_y
    }

    fn overlaps(&self, b: [f64; 4]) -> bool {
        b[0] < self.max_x && b[2] > self.min_x && b[1] < self.max_y && b[3] > self.min_y
    }
}

/// How many tiles go to training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `round(fraction · n)` training tiles, halves rounded up.
    Fraction(f64),
    /// Exact counts, which must add up to the number of tiles.
    Counts { train: usize, test: usize },
}

impl SplitRule {
    /// The 582 / 194 split of a 776-tile grid.
    pub const REFERENCE_COUNTS: SplitRule = SplitRule::Counts { train: 582, test: 194 };

    pub fn train_count(&self, n: usize) -> Result<usize> {
        match *self {
            SplitRule::Fraction(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Invalid(format!("train fraction {f} outside [0, 1]")));
                }
                Ok(((f * n as f64 + 0.5).floor() as usize).min(n))
            }
            SplitRule::Counts { train, test } => {
                if train + test != n {
                    return Err(Error::Invalid(format!(
                        "split counts {train} + {test} do not match {n} tiles"
                    )));
                }
                Ok(train)
            }
        }
    }
}

/// Square tiles of `tile_size` covering `extent` from its top-left corner,
/// in row-major order.
pub fn tile_grid(extent: Extent, tile_size: f64) -> Result<Vec<Tile>> {
    let [min_x, min_y, max_x, max_y] = extent;
    if !(tile_size > 0.0) || !(max_x > min_x && max_y > min_y) {
        return Err(Error::Invalid(format!(
            "cannot tile extent {extent:?} with size {tile_size}"
        )));
    }
    let cols = ((max_x - min_x) / tile_size).ceil() as usize;
    let rows = ((max_y - min_y) / tile_size).ceil() as usize;
    let mut tiles = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let x0 = min_x + col as f64 * tile_size;
            let y1 = max_y - row as f64 * tile_size;
            tiles.push(Tile {
                row,
                col,
                min_x: x0,
                min_y: y1 - tile_size,
                max_x: x0 + tile_size,
                max_y: y1,
            });
        }
    }
    Ok(tiles)
}

/// Tiles the extent and assigns tiles to training or testing at random.
/// Both lists come back in row-major order.
pub fn grid_split(extent: Extent, tile_size: f64, rule: SplitRule, seed: u64) -> Result<(Vec<Tile>, Vec<Tile>)> {
    let tiles = tile_grid(extent, tile_size)?;
    let n_train = rule.train_count(tiles.len())?;
    let mut order: Vec<usize> = (0..tiles.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; tiles.len()];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    let (train, test): (Vec<_>, Vec<_>) = tiles.into_iter().zip(is_train).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(t, _)| t).collect(),
        test.into_iter().map(|(t, _)| t).collect(),
    ))
}

/// Sutherland-Hodgman clip of a closed ring against one tile. Returns the
/// clipped vertex loop (closed) or `None` if fewer than three vertices remain.
fn clip_ring(ring: &Ring, tile: &Tile) -> Option<Ring> {
    let mut pts: Vec<Coord> = ring.points()[..ring.points().len() - 1].to_vec();
    // each boundary: inside test and intersection with the boundary line
    let bounds: [(usize, f64, bool); 4] = [
        (0, tile.min_x, true),
        (0, tile.max_x, false),
        (1, tile.min_y, true),
        (1, tile.max_y, false),
    ];
    for (axis, v, keep_above) in bounds {
        if pts.is_empty() {
            return None;
        }
        let inside = |p: &Coord| if keep_above { p[axis] >= v } else { p[axis] <= v };
        let cut = |a: &Coord, b: &Coord| -> Coord {
            let t = (v - a[axis]) / (b[axis] - a[axis]);
            let mut p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            p[axis] = v;
            p
        };
        let mut out = Vec::with_capacity(pts.len() + 4);
        for i in 0..pts.len() {
            let cur = &pts[i];
            let prev = &pts[(i + pts.len() - 1) % pts.len()];
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(*cur),
                (true, false) => out.push(cut(prev, cur)),
                (false, true) => {
                    out.push(cut(prev, cur));
                    out.push(*cur);
                }
                (false, false) => {}
            }
        }
        out.dedup();
        pts = out;
    }
    Ring::closed(pts).ok()
}

fn clip_polygon(poly: &Polygon, tile: &Tile) -> Option<Polygon> {
    let outline = clip_ring(poly.outline(), tile)?;
    let mut rings = vec![outline];
    rings.extend(poly.rings[1..].iter().filter_map(|r| clip_ring(r, tile)));
    Polygon::new(rings).ok()
}

/// Splits label polygons between the two tile sets. Each polygon goes to
/// the set whose tile holds its outline centroid (polygons outside every
/// tile are dropped); any part reaching into the other set's tiles is
/// clipped away, so the two halves never label the same pixel.
pub fn split_labels(layer: &VectorLayer, train: &[Tile], test: &[Tile]) -> (VectorLayer, VectorLayer) {
    let mut out = (VectorLayer::default(), VectorLayer::default());
    for f in &layer.features {
        for poly in f.geometry.polygons() {
            let c = poly.outline().centroid();
            let (own, other, dest) = if train.iter().any(|t| t.contains(c)) {
                (train, test, &mut out.0)
            } else if test.iter().any(|t| t.contains(c)) {
                (test, train, &mut out.1)
            } else {
                continue;
            };
            let b = poly.bbox();
            let geometry = if other.iter().any(|t| t.overlaps(b)) {
                let parts: Vec<Polygon> = own
                    .iter()
                    .filter(|t| t.overlaps(b))
                    .filter_map(|t| clip_polygon(poly, t))
                    .collect();
                match parts.len() {
                    0 => continue,
                    1 => Geometry::Polygon(parts.into_iter().next().expect("one part")),
                    _ => Geometry::MultiPolygon(parts),
                }
            } else {
                Geometry::Polygon(poly.clone())
            };
            dest.push(Feature {
                geometry,
                properties: f.properties.clone(),
            });
        }
    }
    out
}
