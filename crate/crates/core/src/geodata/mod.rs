//! Rasters, vector layers, label rasterization, the train/test tile grid,
//! road masking and county acreage.

mod raster;
mod rasterize;
mod roads;
mod split;
mod vector;


pub use raster::{Raster, RasterGrid, RasterValue, RASTER_MAGIC, RASTER_VERSION};
pub use rasterize::{burn, point_in_polygon, rasterize, scan_polygon};
pub use roads::{road_mask, ROAD_BUFFER_M};
pub use split::{grid_split, split_labels, tile_grid, Extent, SplitRule, Tile, TILE_SIZE_M};
pub use vector::{Coord, Feature, Geometry, Polygon, Ring, VectorLayer};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNLABELED: u8 = 0;
pub const IRRIGATED: u8 = 1;
pub const UNIRRIGATED: u8 = 2;
pub const UNCULTIVATED: u8 = 3;

pub const SQ_METERS_PER_ACRE: f64 = 4_046.856_422_4;

/// Irrigated acres per county. Every county in the layer gets an entry;
/// pixels are assigned to the last county polygon containing their center.
pub fn county_area(classes: &Raster<u8>, counties: &VectorLayer) -> Result<BTreeMap<String, f64>> {
    let grid = classes.grid();
    let mut names = Vec::with_capacity(counties.len());
    for (i, f) in counties.features.iter().enumerate() {
        names.push(
            f.county()
                .ok_or_else(|| Error::Invalid(format!("county feature {i} has no `county` property")))?,
        );
    }
    let owner = burn(counties, grid, -1i32, |i, _| Ok(i as i32))?;
    let mut pixels: BTreeMap<&str, u64> = names.iter().map(|n| (n.as_str(), 0)).collect();
    for (&o, &c) in owner.band(0).iter().zip(classes.band(0)) {
        if o >= 0 && c == IRRIGATED {
            *pixels.get_mut(names[o as usize].as_str()).expect("county registered") += 1;
        }
    }
    let px_acres = grid.pixel_size * grid.pixel_size / SQ_METERS_PER_ACRE;
    Ok(pixels
        .into_iter()
        .map(|(name, n)| (name.to_string(), n as f64 * px_acres))
        .collect())
}

/// One row of a census table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub county: String,
    pub year: i32,
    pub acres: f64,
}

pub fn read_census(path: &Path) -> Result<Vec<CensusRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        detail: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.into(),
                detail: e.to_string(),
            })
        })
        .collect()
}

pub fn write_census(path: &Path, rows: &[CensusRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `<file>.json` next to a raster: free-form metadata.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_sidecar(path: &Path, meta: &serde_json::Value) -> Result<()> {
    let p = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(&p, text + "\n").map_err(|e| Error::io(p, e))
}

pub fn read_sidecar(path: &Path) -> Result<serde_json::Value> {
    let p = sidecar_path(path);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: p,
        detail: e.to_string(),
    })
}
