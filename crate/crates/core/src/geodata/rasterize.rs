use super::raster::{Raster, RasterGrid, RasterValue};
use super::vector::{Coord, Feature, Polygon, VectorLayer};
use crate::error::{Error, Result};

/// x where edge `a → b` crosses the horizontal line at `y`, if it does.
/// An edge counts when exactly one endpoint lies strictly above `y`.
#[inline]
fn crossing(a: Coord, b: Coord, y: f64) -> Option<f64> {
    ((a[1] > y) != (b[1] > y)).then(|| a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
}

/// Even-odd point-in-polygon over all rings: inside when an odd number of
/// edge crossings lie strictly right of the point.
pub fn point_in_polygon(p: Coord, poly: &Polygon) -> bool {
    let mut inside = false;
    for ring in &poly.rings {
        for (a, b) in ring.edges() {
            if let Some(x) = crossing(a, b, p[1]) {
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Calls `hit(row, col)` for every pixel of `grid` whose center lies inside
/// `poly`. Row by row, crossings are computed once and swept left to right,
/// giving the same answer as [`point_in_polygon`] at each center.
pub fn scan_polygon(poly: &Polygon, grid: &RasterGrid, mut hit: impl FnMut(usize, usize)) {
    let [min_x, min_y, max_x, max_y] = poly.bbox();
    let ps = grid.pixel_size;
    // candidate rows and columns by center coordinate, widened by one for rounding
    let row_lo = ((grid.origin_y - max_y) / ps - 1.5).floor().max(0.0) as usize;
    let row_hi = (((grid.origin_y - min_y) / ps + 0.5).ceil().max(0.0) as usize).min(grid.height);
    let col_lo = ((min_x - grid.origin_x) / ps - 1.5).floor().max(0.0) as usize;
    let col_hi = (((max_x - grid.origin_x) / ps + 0.5).ceil().max(0.0) as usize).min(grid.width);
    let mut xs = Vec::new();
    for row in row_lo..row_hi {
        let y = grid.center(row, 0)[1];
        xs.clear();
        for ring in &poly.rings {
            xs.extend(ring.edges().filter_map(|(a, b)| crossing(a, b, y)));
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_unstable_by(f64::total_cmp);
        let mut p = 0;
        for col in col_lo..col_hi {
            let x = grid.center(row, col)[0];
            while p < xs.len() && xs[p] <= x {
                p += 1;
            }
            if (xs.len() - p) % 2 == 1 {
                hit(row, col);
            }
        }
    }
}

/// Burns each polygon feature into a one-channel raster with the value
/// `value(index, feature)`, later features overwriting earlier ones.
pub fn burn<T: RasterValue>(
    layer: &VectorLayer,
    grid: &RasterGrid,
    background: T,
    mut value: impl FnMut(usize, &Feature) -> Result<T>,
) -> Result<Raster<T>> {
    let mut out = Raster::filled(*grid, 1, background);
    let width = grid.width;
    for (i, f) in layer.features.iter().enumerate() {
        let polys = f.geometry.polygons();
        if polys.is_empty() {
            return Err(Error::Invalid(format!("feature {i} is not a polygon")));
        }
        let v = value(i, f)?;
        let band = out.band_mut(0);
        for poly in polys {
            scan_polygon(poly, grid, |r, c| band[r * width + c] = v);
        }
    }
    Ok(out)
}

/// Label raster: codes 1..=3 from each feature's `class`, 0 elsewhere.
pub fn rasterize(layer: &VectorLayer, grid: &RasterGrid) -> Result<Raster<u8>> {
    burn(layer, grid, 0u8, |i, f| {
        f.class()
            .ok_or_else(|| Error::Invalid(format!("feature {i} has no valid `class` property")))
    })
}
