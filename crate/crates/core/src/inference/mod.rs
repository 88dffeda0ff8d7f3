//! Overlap-tile inference, 8-bit probability quantization and the ensemble
//! reductions: per-class median, inter-quartile range and final class.

use crate::error::{Error, Result};
use crate::geodata::{Raster, IRRIGATED};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::unet::UNet;

/// Predicts class probabilities for an image of any size by running the
/// model on `tile × tile` windows that overlap by `overlap` pixels on every
/// side and keeping only each window's interior.
///
/// Windows sit on a lattice anchored at `(-overlap, -overlap)` with stride
/// `tile - 2·overlap`; input beyond the image is zero. With `overlap` at
/// least [`crate::unet::UNetConfig::min_overlap`], every kept pixel sees
/// exactly the input whole-image inference would, so the mosaic equals
/// whole-image inference at all pixels `overlap` or more from the border.
/// An image that fits in a single tile is predicted directly.
pub fn overlap_tile_predict<T: Scalar>(
    model: &UNet<T>,
    input: &Tensor<T>,
    tile: usize,
    overlap: usize,
) -> Result<Tensor<T>> {
    let cfg = model.config();
    let s = input.shape();
    if s.n != 1 {
        return Err(Error::shape(
            "overlap_tile_predict",
            format!("expected one image, got {s}"),
        ));
    }
    if s.c != cfg.in_channels {
        return Err(Error::shape(
            "overlap_tile_predict",
            format!("image has {} channels, model expects {}", s.c, cfg.in_channels),
        ));
    }
    let m = cfg.tile_multiple();
    let required = cfg.min_overlap();
    if overlap < required {
        return Err(Error::OverlapTooSmall {
            given: overlap,
            required,
        });
    }
    if tile == 0 || !tile.is_multiple_of(m) {
        return Err(Error::Invalid(format!(
            "tile size {tile} must be a positive multiple of {m}"
        )));
    }
    if !overlap.is_multiple_of(m) {
        return Err(Error::Invalid(format!("overlap {overlap} must be a multiple of {m}")));
    }
    if tile <= 2 * overlap {
        return Err(Error::Invalid(format!(
            "tile size {tile} leaves no interior with overlap {overlap}"
        )));
    }
    let (h, w) = (s.h, s.w);
    if h <= tile && w <= tile && h % m == 0 && w % m == 0 {
        return model.predict(input);
    }

    let k = cfg.num_classes;
    let step = tile - 2 * overlap;
    let mut out = Tensor::zeros(Shape::new(1, k, h, w));
    let mut window = Tensor::zeros(Shape::new(1, s.c, tile, tile));
    for y0 in (0..h).step_by(step) {
        for x0 in (0..w).step_by(step) {
            // window origin in image coordinates is (y0 - overlap, x0 - overlap)
            window.data_mut().fill(T::ZERO);
            let ys = y0.saturating_sub(overlap);
            let ye = (y0 + step + overlap).min(h);
            let xs = x0.saturating_sub(overlap);
            let xe = (x0 + step + overlap).min(w);
            for c in 0..s.c {
                let src = input.plane(0, c);
                let dst = window.plane_mut(0, c);
                for y in ys..ye {
                    let ty = y + overlap - y0;
                    let tx = xs + overlap - x0;
                    dst[ty * tile + tx..ty * tile + tx + (xe - xs)].copy_from_slice(&src[y * w + xs..y * w + xe]);
                }
            }
            let probs = model.predict(&window)?;
            let (ke, kx) = ((y0 + step).min(h), (x0 + step).min(w));
            for c in 0..k {
                let src = probs.plane(0, c);
                let dst = out.plane_mut(0, c);
                for y in y0..ke {
                    let ty = y + overlap - y0;
                    dst[y * w + x0..y * w + kx]
                        .copy_from_slice(&src[ty * tile + overlap..ty * tile + overlap + (kx - x0)]);
                }
            }
        }
    }
    Ok(out)
}

/// `round(255·p)` with halves rounded up; `p` is clamped to `[0, 1]` and NaN maps to 0.
pub fn quantize(p: f64) -> u8 {
    let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
    (255.0 * p + 0.5).floor() as u8
}

pub fn dequantize(q: u8) -> f64 {
    q as f64 / 255.0
}

/// Quantizes a `(1, k, h, w)` probability tensor into a `k`-channel raster.
pub fn quantize_probs<T: Scalar>(probs: &Tensor<T>, grid: &crate::geodata::RasterGrid) -> Result<Raster<u8>> {
    let s = probs.shape();
    if s.n != 1 || s.h != grid.height || s.w != grid.width {
        return Err(Error::shape(
            "quantize_probs",
            format!("probabilities {s} do not fit a {}x{} grid", grid.height, grid.width),
        ));
    }
    Raster::from_vec(
        grid.with_nodata(0.0),
        s.c,
        probs.data().iter().map(|p| quantize(p.to_f64())).collect(),
    )
}

fn check_members(models: &[Raster<u8>]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::Invalid("ensemble has no members".into()))?;
    for (i, m) in models.iter().enumerate().skip(1) {
        first.grid().check_same(m.grid(), &format!("ensemble member {i}"))?;
        if m.channels() != first.channels() {
            return Err(Error::GridMismatch(format!(
                "ensemble member {i} has {} classes, member 0 has {}",
                m.channels(),
                first.channels()
            )));
        }
    }
    Ok(())
}

/// Applies `stat` to the sorted member values of every pixel and class.
fn reduce(models: &[Raster<u8>], stat: impl Fn(&[u8]) -> u8) -> Result<Raster<u8>> {
    check_members(models)?;
    let first = &models[0];
    let mut vals = vec![0u8; models.len()];
    let data = (0..first.data().len())
        .map(|j| {
            for (v, m) in vals.iter_mut().zip(models) {
                *v = m.data()[j];
            }
            vals.sort_unstable();
            stat(&vals)
        })
        .collect();
    Raster::from_vec(*first.grid(), first.channels(), data)
}

/// Median of sorted values; for an even count, the floor of the mean of the two middle values.
pub fn median_sorted(v: &[u8]) -> u8 {
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        ((v[k / 2 - 1] as u16 + v[k / 2] as u16) / 2) as u8
    }
}

/// Nearest-rank quartile spread of sorted values: `v(⌈3k/4⌉) − v(⌈k/4⌉)`, 1-based.
pub fn iqr_sorted(v: &[u8]) -> u8 {
    let k = v.len();
    let q1 = k.div_ceil(4);
    let q3 = (3 * k).div_ceil(4);
    v[q3 - 1] - v[q1 - 1]
}

pub fn ensemble_median(models: &[Raster<u8>]) -> Result<Raster<u8>> {
    reduce(models, median_sorted)
}

/// Per-class IQR; needs at least four members.
pub fn ensemble_iqr(models: &[Raster<u8>]) -> Result<Raster<u8>> {
    if models.len() < 4 {
        return Err(Error::Invalid(format!(
            "IQR needs at least 4 ensemble members, got {}",
            models.len()
        )));
    }
    reduce(models, iqr_sorted)
}

/// Class code (1-based) of the largest value per pixel, ties to the lowest class.
pub fn classify(median: &Raster<u8>) -> Raster<u8> {
    let k = median.channels();
    let n = median.grid().len();
    let data = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if median.data()[c * n + i] > median.data()[best * n + i] {
                    best = c;
                }
            }
            best as u8 + 1
        })
        .collect();
    Raster::from_vec(median.grid().with_nodata(0.0), 1, data).expect("one value per pixel")
}

/// Irrigated → 1, everything else → 0.
pub fn binarize(classes: &Raster<u8>) -> Raster<u8> {
    classes.map(|c| u8::from(c == IRRIGATED))
}

/// Per-pixel reductions of an ensemble of quantized probability rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleRaster {
    pub median: Raster<u8>,
    pub iqr: Raster<u8>,
    pub classes: Raster<u8>,
}

impl EnsembleRaster {
    /// Median, IQR and class. Ensembles of fewer than four members are
    /// accepted; their nearest-rank IQR degenerates to the range (or 0 for
    /// a single member).
    pub fn reduce(models: &[Raster<u8>]) -> Result<Self> {
        let median = ensemble_median(models)?;
        if models.len() < 4 {
            log::warn!("IQR over {} members is the full range of member values", models.len());
        }
        let iqr = reduce(models, iqr_sorted)?;
        let classes = classify(&median);
        Ok(EnsembleRaster { median, iqr, classes })
    }

    /// IQR of the predicted class at each pixel.
    pub fn predicted_iqr(&self) -> Vec<u8> {
        let n = self.classes.grid().len();
        self.classes
            .data()
            .iter()
            .enumerate()
            .map(|(i, &c)| self.iqr.data()[(c as usize - 1) * n + i])
            .collect()
    }
}

#[cfg(test)]
mod tests;
