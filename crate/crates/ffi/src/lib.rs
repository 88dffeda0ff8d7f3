//! C ABI over the irrmap toolkit.
//!
//! Every fallible function returns an [`IrrmapStatus`]; on failure the
//! message is kept per thread and read with [`irrmap_last_error`]. Handles
//! are opaque and released with their `_free` function. Arrays are
//! channel-major (`c, row, col`) and owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use irrmap::compositing::CompositeStack;
use irrmap::evaluation::{class_metrics, confusion, overall_accuracy, ConfusionMatrix};
use irrmap::geodata::{Raster, RasterGrid};
use irrmap::inference::{overlap_tile_predict, quantize_probs, EnsembleRaster};
use irrmap::tensor::{Shape, Tensor};
use irrmap::unet::UNet;
use irrmap::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IrrmapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    GridMismatch = 6,
    OverlapTooSmall = 7,
    ConfigMismatch = 8,
    Numeric = 9,
    Panic = 10,
}

impl From<&Error> for IrrmapStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => IrrmapStatus::ShapeMismatch,
            Error::Io { .. } => IrrmapStatus::Io,
            Error::BadMagic { .. }
            | Error::Version { .. }
            | Error::Truncated(_)
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::Csv(_) => IrrmapStatus::Format,
            Error::GridMismatch(_) => IrrmapStatus::GridMismatch,
            Error::OverlapTooSmall { .. } => IrrmapStatus::OverlapTooSmall,
            Error::ConfigMismatch { .. } => IrrmapStatus::ConfigMismatch,
            Error::NonFinite { .. } | Error::UntrackedBatchNorm => IrrmapStatus::Numeric,
            _ => IrrmapStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IrrmapStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IrrmapStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            IrrmapStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            IrrmapStatus::from(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IrrmapStatus::Panic
        }
    }
}

fn nonnull<T>(p: *const T, what: &'static str) -> Result<*const T, Fail> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    let s = CStr::from_ptr(nonnull(p, "path")?);
    Ok(PathBuf::from(
        s.to_str().map_err(|_| Error::Invalid("path is not UTF-8".into()))?,
    ))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn irrmap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn irrmap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A trained network.
pub struct IrrmapModel {
    inner: UNet,
}

/// Model dimensions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IrrmapModelInfo {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_filters: usize,
    pub depth: usize,
    /// Tile sizes and overlaps must be multiples of this.
    pub tile_multiple: usize,
    pub min_overlap: usize,
}

/// Loads a model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irrmap_model_load(path: *const c_char, out: *mut *mut IrrmapModel) -> IrrmapStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let inner = UNet::load_any(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(IrrmapModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`irrmap_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn irrmap_model_free(model: *mut IrrmapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn irrmap_model_info(model: *const IrrmapModel, out: *mut IrrmapModelInfo) -> IrrmapStatus {
    guard(|| {
        let m = &*nonnull(model, "model")?;
        nonnull(out, "out")?;
        let c = m.inner.config();
        *out = IrrmapModelInfo {
            in_channels: c.in_channels,
            num_classes: c.num_classes,
            base_filters: c.base_filters,
            depth: c.depth,
            tile_multiple: c.tile_multiple(),
            min_overlap: c.min_overlap(),
        };
        Ok(())
    })
}

/// Class probabilities for one image of `channels × height × width`
/// features, written to `probs` (`num_classes × height × width`). An
/// `overlap` of 0 uses the model's minimum.
///
/// # Safety
/// `features` and `probs` must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn irrmap_predict(
    model: *const IrrmapModel,
    features: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    tile: usize,
    overlap: usize,
    probs: *mut f32,
) -> IrrmapStatus {
    guard(|| {
        let m = &*nonnull(model, "model")?;
        let feats = nonnull(features, "features")?;
        nonnull(probs, "probs")?;
        let shape = Shape::new(1, channels, height, width);
        let x = Tensor::from_vec(shape, std::slice::from_raw_parts(feats, shape.len()).to_vec())?;
        let overlap = if overlap == 0 {
            m.inner.config().min_overlap()
        } else {
            overlap
        };
        let p = overlap_tile_predict(&m.inner, &x, tile, overlap)?;
        ptr::copy_nonoverlapping(p.data().as_ptr(), probs, p.data().len());
        Ok(())
    })
}

/// A composite feature stack read from disk.
pub struct IrrmapStack {
    inner: CompositeStack,
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn irrmap_stack_load(path: *const c_char, out: *mut *mut IrrmapStack) -> IrrmapStatus {
    guard(|| {
        nonnull(out, "out")?;
        *out = ptr::null_mut();
        let inner = CompositeStack::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(IrrmapStack { inner }));
        Ok(())
    })
}

/// # Safety
/// `stack` must come from [`irrmap_stack_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn irrmap_stack_free(stack: *mut IrrmapStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Channels, height and width of a stack.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn irrmap_stack_dims(
    stack: *const IrrmapStack,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> IrrmapStatus {
    guard(|| {
        let s = &*nonnull(stack, "stack")?;
        for p in [channels, height, width] {
            nonnull(p, "dimension")?;
        }
        *channels = s.inner.features.channels();
        *height = s.inner.features.height();
        *width = s.inner.features.width();
        Ok(())
    })
}

/// Quantized (0-255) class probabilities of `model` over a whole stack,
/// `num_classes × height × width` bytes.
///
/// # Safety
/// `out` must hold `num_classes × height × width` bytes.
#[no_mangle]
pub unsafe extern "C" fn irrmap_predict_stack(
    model: *const IrrmapModel,
    stack: *const IrrmapStack,
    tile: usize,
    overlap: usize,
    out: *mut u8,
) -> IrrmapStatus {
    guard(|| {
        let m = &*nonnull(model, "model")?;
        let s = &*nonnull(stack, "stack")?;
        nonnull(out, "out")?;
        let overlap = if overlap == 0 {
            m.inner.config().min_overlap()
        } else {
            overlap
        };
        let p = overlap_tile_predict(&m.inner, &s.inner.to_tensor(), tile, overlap)?;
        let q = quantize_probs(&p, s.inner.grid())?;
        ptr::copy_nonoverlapping(q.data().as_ptr(), out, q.data().len());
        Ok(())
    })
}

fn plain_grid(height: usize, width: usize) -> Result<RasterGrid, Error> {
    RasterGrid::new(width, height, 0.0, height as f64, 1.0)
}

/// Per-class median and IQR over `count` member arrays of
/// `classes × height × width` quantized probabilities, plus the 1-based
/// class of the largest median per pixel (`height × width`).
///
/// # Safety
/// `members` must point to `count` arrays of the stated size; outputs must
/// have room for their results.
#[no_mangle]
pub unsafe extern "C" fn irrmap_ensemble_reduce(
    members: *const *const u8,
    count: usize,
    classes: usize,
    height: usize,
    width: usize,
    median: *mut u8,
    iqr: *mut u8,
    class_out: *mut u8,
) -> IrrmapStatus {
    guard(|| {
        let list = nonnull(members, "members")?;
        for p in [median, iqr, class_out] {
            nonnull(p, "output")?;
        }
        let grid = plain_grid(height, width)?;
        let n = classes * height * width;
        let rasters = std::slice::from_raw_parts(list, count)
            .iter()
            .map(|&m| {
                let m = nonnull(m, "member")?;
                Ok(Raster::from_vec(
                    grid,
                    classes,
                    std::slice::from_raw_parts(m, n).to_vec(),
                )?)
            })
            .collect::<Result<Vec<_>, Fail>>()?;
        let e = EnsembleRaster::reduce(&rasters)?;
        ptr::copy_nonoverlapping(e.median.data().as_ptr(), median, n);
        ptr::copy_nonoverlapping(e.iqr.data().as_ptr(), iqr, n);
        ptr::copy_nonoverlapping(e.classes.data().as_ptr(), class_out, height * width);
        Ok(())
    })
}

/// Precision, recall and f1 of one class plus overall accuracy.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct IrrmapMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub overall_accuracy: f64,
}

/// `classes × classes` confusion counts (rows actual, columns predicted)
/// over the `n` pixels whose label is non-zero. Codes run 1..=classes.
///
/// # Safety
/// `predicted` and `labels` must hold `n` bytes; `counts` room for
/// `classes²` values.
#[no_mangle]
pub unsafe extern "C" fn irrmap_confusion(
    predicted: *const u8,
    labels: *const u8,
    n: usize,
    classes: usize,
    counts: *mut u64,
) -> IrrmapStatus {
    guard(|| {
        let (p, l) = (nonnull(predicted, "predicted")?, nonnull(labels, "labels")?);
        nonnull(counts, "counts")?;
        if classes == 0 {
            return Err(Error::Invalid("need at least one class".into()).into());
        }
        let grid = plain_grid(1, n)?;
        let names: Vec<String> = (1..=classes).map(|c| c.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let pr = Raster::from_vec(grid, 1, std::slice::from_raw_parts(p, n).to_vec())?;
        let lr = Raster::from_vec(grid, 1, std::slice::from_raw_parts(l, n).to_vec())?;
        let m = confusion(&pr, &lr, &names)?;
        let flat: Vec<u64> = m.rows().concat();
        ptr::copy_nonoverlapping(flat.as_ptr(), counts, flat.len());
        Ok(())
    })
}

/// Metrics of class `class` (0-based) from a `classes × classes` count
/// matrix.
///
/// # Safety
/// `counts` must hold `classes²` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn irrmap_class_metrics(
    counts: *const u64,
    classes: usize,
    class: usize,
    out: *mut IrrmapMetrics,
) -> IrrmapStatus {
    guard(|| {
        let c = nonnull(counts, "counts")?;
        nonnull(out, "out")?;
        if class >= classes {
            return Err(Error::Invalid(format!("class {class} out of range for {classes} classes")).into());
        }
        let flat = std::slice::from_raw_parts(c, classes * classes);
        let names: Vec<String> = (1..=classes).map(|c| c.to_string()).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let rows: Vec<Vec<u64>> = flat.chunks(classes).map(|r| r.to_vec()).collect();
        let m = ConfusionMatrix::from_rows(&names, &rows)?;
        let cm = class_metrics(&m, class);
        *out = IrrmapMetrics {
            precision: cm.precision,
            recall: cm.recall,
            f1: cm.f1,
            overall_accuracy: overall_accuracy(&m)?,
        };
        Ok(())
    })
}
