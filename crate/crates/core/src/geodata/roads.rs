use super::raster::Raster;
use super::vector::{Coord, VectorLayer};
use super::{IRRIGATED, UNIRRIGATED};
use crate::error::{Error, Result};

/// Default road buffer: one 30 m pixel.
pub const ROAD_BUFFER_M: f64 = 30.0;

fn segment_distance_sq(p: Coord, a: Coord, b: Coord) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    ex * ex + ey * ey
}

/// Reassigns irrigated pixels whose centers lie within `buffer_m` of a road
/// polyline (distance ≤ buffer) to unirrigated.
pub fn road_mask(classes: &Raster<u8>, roads: &VectorLayer, buffer_m: f64) -> Result<Raster<u8>> {
    if !(buffer_m >= 0.0) {
        return Err(Error::Invalid(format!("road buffer must be >= 0, got {buffer_m}")));
    }
    let grid = *classes.grid();
    let ps = grid.pixel_size;
    let mut out = classes.clone();
    let r2 = buffer_m * buffer_m;
    for f in &roads.features {
        for line in f.geometry.lines() {
            for seg in line.windows(2) {
                let (a, b) = (seg[0], seg[1]);
                let (x0, x1) = (a[0].min(b[0]) - buffer_m, a[0].max(b[0]) + buffer_m);
                let (y0, y1) = (a[1].min(b[1]) - buffer_m, a[1].max(b[1]) + buffer_m);
                let col_lo = ((x0 - grid.origin_x) / ps - 1.0).floor().max(0.0) as usize;
                let col_hi = (((x1 - grid.origin_x) / ps + 1.0).ceil().max(0.0) as usize).min(grid.width);
                let row_lo = ((grid.origin_y - y1) / ps - 1.0).floor().max(0.0) as usize;
                let row_hi = (((grid.origin_y - y0) / ps + 1.0).ceil().max(0.0) as usize).min(grid.height);
                for row in row_lo..row_hi {
                    for col in col_lo..col_hi {
                        if out.get(0, row, col) == IRRIGATED && segment_distance_sq(grid.center(row, col), a, b) <= r2 {
                            out.set(0, row, col, UNIRRIGATED);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
