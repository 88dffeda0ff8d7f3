//! North-up rasters and the `RAS1` container.
//!
//! Layout, all little-endian: magic `RAS1`, version `u16`, dtype code `u8`
//! (0 = u8, 1 = i32, 2 = f32), channels `u16`, height `u32`, width `u32`,
//! nodata `f64`, origin x `f64`, origin y `f64`, pixel size `f64`, then the
//! payload channel-major and row-major within a channel.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{write_all, LeReader};
use crate::error::{Error, Result};

pub const RASTER_MAGIC: [u8; 4] = *b"RAS1";
pub const RASTER_VERSION: u16 = 1;

/// Pixel grid of a raster. The origin is the outer corner of the top-left
/// pixel; rows run south, columns east.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RasterGrid {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub nodata: f64,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::Invalid(format!("pixel size must be positive, got {pixel_size}")));
        }
        Ok(RasterGrid {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
            nodata: 0.0,
        })
    }

    pub fn with_nodata(mut self, nodata: f64) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Map coordinates of the center of pixel `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        ]
    }

    /// `[min_x, min_y, max_x, max_y]` of the covered area.
    pub fn bounds(&self) -> [f64; 4] {
        [
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        ]
    }

    /// Same size, origin and pixel size (nodata is not compared).
    pub fn same_geometry(&self, other: &RasterGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.origin_x == other.origin_x
            && self.origin_y == other.origin_y
            && self.pixel_size == other.pixel_size
    }

    pub fn check_same(&self, other: &RasterGrid, what: &str) -> Result<()> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} at ({}, {}) step {} vs {}x{} at ({}, {}) step {}",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.pixel_size,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.pixel_size
            )))
        }
    }

    /// The sub-grid of `height × width` pixels starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> RasterGrid {
        RasterGrid {
            width,
            height,
            origin_x: self.origin_x + col as f64 * self.pixel_size,
            origin_y: self.origin_y - row as f64 * self.pixel_size,
            ..*self
        }
    }
}

/// Element types a `RAS1` file can hold.
pub trait RasterValue: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    const CODE: u8;
    const NAME: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
}

macro_rules! raster_value {
    ($t:ty, $code:expr, $name:expr) => {
        impl RasterValue for $t {
            const CODE: u8 = $code;
            const NAME: &'static str = $name;
            const SIZE: usize = std::mem::size_of::<$t>();
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$t>::from_le_bytes(bytes.try_into().expect("element width"))
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

raster_value!(u8, 0, "u8");
raster_value!(i32, 1, "i32");
raster_value!(f32, 2, "f32");

/// A multi-channel raster on a [`RasterGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T: RasterValue> {
    grid: RasterGrid,
    channels: usize,
    data: Vec<T>,
}

impl<T: RasterValue> Raster<T> {
    pub fn filled(grid: RasterGrid, channels: usize, value: T) -> Self {
        Raster {
            grid,
            channels,
            data: vec![value; channels * grid.len()],
        }
    }

    pub fn from_vec(grid: RasterGrid, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * grid.len() {
            return Err(Error::shape(
                "raster",
                format!(
                    "{} values for {channels} channels of {}x{}",
                    data.len(),
                    grid.height,
                    grid.width
                ),
            ));
        }
        Ok(Raster { grid, channels, data })
    }

    pub fn grid(&self) -> &RasterGrid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn band(&self, c: usize) -> &[T] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn band_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.grid.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> T {
        self.data[(c * self.grid.height + row) * self.grid.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: T) {
        let (h, w) = (self.grid.height, self.grid.width);
        self.data[(c * h + row) * w + col] = v;
    }

    pub fn map<U: RasterValue>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            grid: self.grid,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// A `height × width` window starting at `(row, col)`, all channels.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.grid.height || col + width > self.grid.width {
            return Err(Error::shape(
                "raster_crop",
                format!(
                    "window {height}x{width} at ({row}, {col}) exceeds {}x{}",
                    self.grid.height, self.grid.width
                ),
            ));
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            let band = self.band(c);
            for y in row..row + height {
                data.extend_from_slice(&band[y * self.grid.width + col..y * self.grid.width + col + width]);
            }
        }
        Ok(Raster {
            grid: self.grid.window(row, col, height, width),
            channels: self.channels,
            data,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let g = &self.grid;
        let channels = u16::try_from(self.channels)
            .map_err(|_| Error::Invalid(format!("{} channels exceed u16", self.channels)))?;
        let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Invalid(format!("raster dimension {v} exceeds u32")));
        let mut head = Vec::with_capacity(64);
        head.extend_from_slice(&RASTER_MAGIC);
        head.extend_from_slice(&RASTER_VERSION.to_le_bytes());
        head.push(T::CODE);
        head.extend_from_slice(&channels.to_le_bytes());
        head.extend_from_slice(&dim(g.height)?.to_le_bytes());
        head.extend_from_slice(&dim(g.width)?.to_le_bytes());
        for v in [g.nodata, g.origin_x, g.origin_y, g.pixel_size] {
            head.extend_from_slice(&v.to_le_bytes());
        }
        write_all(w, &head)?;
        let mut payload = Vec::with_capacity(T::SIZE * self.data.len());
        for &v in &self.data {
            v.write_le(&mut payload);
        }
        write_all(w, &payload)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "raster file");
        let magic = r.bytes::<4>("magic")?;
        if magic != RASTER_MAGIC {
            return Err(Error::BadMagic {
                expected: RASTER_MAGIC,
                found: magic,
            });
        }
        let version = r.u16("version")?;
        if version != RASTER_VERSION {
            return Err(Error::Version {
                found: version,
                supported: RASTER_VERSION,
            });
        }
        let code = r.u8("dtype")?;
        if code != T::CODE {
            return Err(Error::Invalid(format!(
                "raster holds dtype code {code}, expected {} ({})",
                T::CODE,
                T::NAME
            )));
        }
        let channels = r.u16("header")? as usize;
        let height = r.u32("header")? as usize;
        let width = r.u32("header")? as usize;
        let nodata = r.f64("header")?;
        let origin_x = r.f64("header")?;
        let origin_y = r.f64("header")?;
        let pixel_size = r.f64("header")?;
        let grid = RasterGrid::new(width, height, origin_x, origin_y, pixel_size)?.with_nodata(nodata);
        let count = channels
            .checked_mul(grid.len())
            .ok_or_else(|| Error::Invalid("raster dimensions overflow".into()))?;
        let mut bytes = vec![0u8; count * T::SIZE];
        r.fill(&mut bytes, "payload")?;
        if r.peek_eof()?.is_some() {
            return Err(Error::Invalid("trailing bytes after raster payload".into()));
        }
        let data = bytes.chunks_exact(T::SIZE).map(T::read_le).collect();
        Ok(Raster { grid, channels, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Raster::read_from(BufReader::new(file))
    }
}
