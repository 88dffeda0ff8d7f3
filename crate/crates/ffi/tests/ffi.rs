use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use irrmap::compositing::{build_stack, season_start};
use irrmap::inference::{overlap_tile_predict, quantize_probs, EnsembleRaster};
use irrmap::synthgen::{gen_scenes, gen_world, SynthConfig};
use irrmap::unet::{save_params, UNet, UNetConfig};
use irrmap_ffi::*;

fn last_error() -> String {
    let p = irrmap_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn saved_model(dir: &Path) -> (PathBuf, UNet) {
    let cfg = UNetConfig {
        in_channels: 36,
        num_classes: 3,
        base_filters: 2,
        depth: 1,
        weight_decay: 0.001,
        seed: 5,
    };
    let mut m: UNet = UNet::build(&cfg).unwrap();
    m.assume_tracked();
    let p = dir.join("m.unp");
    save_params(&m, &p).unwrap();
    let loaded = UNet::load_any(&p).unwrap();
    (p, loaded)
}

fn load(p: &Path) -> *mut IrrmapModel {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { irrmap_model_load(cstr(p).as_ptr(), &mut h) }, IrrmapStatus::Ok);
    h
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(irrmap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_map_to_codes_and_messages() {
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/x.unp").unwrap();
    assert_eq!(unsafe { irrmap_model_load(missing.as_ptr(), &mut h) }, IrrmapStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/x.unp"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.unp");
    std::fs::write(&junk, b"not a model file").unwrap();
    assert_eq!(
        unsafe { irrmap_model_load(cstr(&junk).as_ptr(), &mut h) },
        IrrmapStatus::Format
    );
    assert!(last_error().contains("magic"));

    assert_eq!(
        unsafe { irrmap_model_load(ptr::null(), &mut h) },
        IrrmapStatus::NullPointer
    );
    assert!(last_error().contains("null"));
    let mut info = IrrmapModelInfo::default();
    assert_eq!(
        unsafe { irrmap_model_info(ptr::null(), &mut info) },
        IrrmapStatus::NullPointer
    );

    // a success clears the message
    let counts = [1u64, 0, 0, 1];
    let mut m = IrrmapMetrics::default();
    assert_eq!(
        unsafe { irrmap_class_metrics(counts.as_ptr(), 2, 0, &mut m) },
        IrrmapStatus::Ok
    );
    assert!(irrmap_last_error().is_null());
    assert_eq!(
        unsafe { irrmap_class_metrics(counts.as_ptr(), 2, 2, &mut m) },
        IrrmapStatus::InvalidArgument
    );
    unsafe { irrmap_model_free(ptr::null_mut()) };
}

#[test]
fn prediction_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(dir.path());
    let h = load(&path);
    let mut info = IrrmapModelInfo::default();
    assert_eq!(unsafe { irrmap_model_info(h, &mut info) }, IrrmapStatus::Ok);
    assert_eq!((info.in_channels, info.num_classes, info.depth), (36, 3, 1));
    assert_eq!(
        (info.tile_multiple, info.min_overlap),
        (2, model.config().min_overlap())
    );

    let (hh, ww) = (40, 52);
    let feats: Vec<f32> = (0..36 * hh * ww).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    let mut probs = vec![0f32; 3 * hh * ww];
    let st = unsafe { irrmap_predict(h, feats.as_ptr(), 36, hh, ww, 32, 0, probs.as_mut_ptr()) };
    assert_eq!(st, IrrmapStatus::Ok, "{}", last_error());
    let x = irrmap::tensor::Tensor::from_vec(irrmap::tensor::Shape::new(1, 36, hh, ww), feats.clone()).unwrap();
    let want = overlap_tile_predict(&model, &x, 32, info.min_overlap).unwrap();
    assert_eq!(probs, want.data());

    let st = unsafe { irrmap_predict(h, feats.as_ptr(), 36, hh, ww, 32, 2, probs.as_mut_ptr()) };
    assert_eq!(st, IrrmapStatus::OverlapTooSmall);
    let st = unsafe { irrmap_predict(h, feats.as_ptr(), 12, hh, ww, 32, 0, probs.as_mut_ptr()) };
    assert_eq!(st, IrrmapStatus::ShapeMismatch);
    unsafe { irrmap_model_free(h) };
}

#[test]
fn stack_prediction_is_quantized() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = saved_model(dir.path());
    let cfg = SynthConfig {
        width: 48,
        height: 40,
        irrigated_rects: 1,
        irrigated_pivots: 1,
        dryland_fields: 1,
        uncultivated_patches: 0,
        road_spacing: 0,
        ..SynthConfig::default()
    };
    let world = gen_world(&cfg).unwrap();
    let stack = build_stack(&gen_scenes(&world, &cfg, 2012).unwrap(), season_start(2012).unwrap()).unwrap();
    let sp = dir.path().join("stack.ras");
    stack.save(&sp, None).unwrap();

    let mut sh = ptr::null_mut();
    assert_eq!(
        unsafe { irrmap_stack_load(cstr(&sp).as_ptr(), &mut sh) },
        IrrmapStatus::Ok
    );
    let (mut c, mut hh, mut ww) = (0, 0, 0);
    assert_eq!(
        unsafe { irrmap_stack_dims(sh, &mut c, &mut hh, &mut ww) },
        IrrmapStatus::Ok
    );
    assert_eq!((c, hh, ww), (36, 40, 48));
    let mh = load(&path);
    let mut out = vec![0u8; 3 * hh * ww];
    assert_eq!(
        unsafe { irrmap_predict_stack(mh, sh, 32, 0, out.as_mut_ptr()) },
        IrrmapStatus::Ok
    );
    let p = overlap_tile_predict(&model, &stack.to_tensor(), 32, model.config().min_overlap()).unwrap();
    assert_eq!(out, quantize_probs(&p, stack.grid()).unwrap().data());
    unsafe {
        irrmap_model_free(mh);
        irrmap_stack_free(sh);
    }
}

#[test]
fn ensemble_reduce_matches_the_library() {
    let (k, hh, ww, n) = (3, 2, 3, 5);
    let members: Vec<Vec<u8>> = (0..n)
        .map(|m| (0..k * hh * ww).map(|i| ((i * 37 + m * 91) % 256) as u8).collect())
        .collect();
    let ptrs: Vec<*const u8> = members.iter().map(|m| m.as_ptr()).collect();
    let (mut med, mut iqr, mut cls) = (vec![0u8; k * hh * ww], vec![0u8; k * hh * ww], vec![0u8; hh * ww]);
    let st = unsafe {
        irrmap_ensemble_reduce(
            ptrs.as_ptr(),
            n,
            k,
            hh,
            ww,
            med.as_mut_ptr(),
            iqr.as_mut_ptr(),
            cls.as_mut_ptr(),
        )
    };
    assert_eq!(st, IrrmapStatus::Ok);
    let grid = irrmap::geodata::RasterGrid::new(ww, hh, 0.0, hh as f64, 1.0).unwrap();
    let rasters: Vec<_> = members
        .iter()
        .map(|m| irrmap::geodata::Raster::from_vec(grid, k, m.clone()).unwrap())
        .collect();
    let e = EnsembleRaster::reduce(&rasters).unwrap();
    assert_eq!(
        (med.as_slice(), iqr.as_slice(), cls.as_slice()),
        (e.median.data(), e.iqr.data(), e.classes.data())
    );
    let st = unsafe {
        irrmap_ensemble_reduce(
            ptrs.as_ptr(),
            0,
            k,
            hh,
            ww,
            med.as_mut_ptr(),
            iqr.as_mut_ptr(),
            cls.as_mut_ptr(),
        )
    };
    assert_eq!(st, IrrmapStatus::InvalidArgument);
}

#[test]
fn confusion_and_metrics() {
    let pred = [1u8, 1, 2, 3, 3, 2];
    let labels = [1u8, 0, 2, 2, 3, 1];
    let mut counts = [0u64; 9];
    let st = unsafe { irrmap_confusion(pred.as_ptr(), labels.as_ptr(), 6, 3, counts.as_mut_ptr()) };
    assert_eq!(st, IrrmapStatus::Ok);
    assert_eq!(counts, [1, 1, 0, 0, 1, 1, 0, 0, 1]);
    let mut m = IrrmapMetrics::default();
    assert_eq!(
        unsafe { irrmap_class_metrics(counts.as_ptr(), 3, 0, &mut m) },
        IrrmapStatus::Ok
    );
    assert_eq!((m.precision, m.recall, m.overall_accuracy), (1.0, 0.5, 0.6));
    let bad = [4u8; 6];
    let st = unsafe { irrmap_confusion(bad.as_ptr(), labels.as_ptr(), 6, 3, counts.as_mut_ptr()) };
    assert_eq!(st, IrrmapStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/irrmap.h")).unwrap();
    for f in [
        "irrmap_last_error",
        "irrmap_version",
        "irrmap_model_load",
        "irrmap_model_free",
        "irrmap_model_info",
        "irrmap_predict",
        "irrmap_stack_load",
        "irrmap_stack_dims",
        "irrmap_stack_free",
        "irrmap_predict_stack",
        "irrmap_ensemble_reduce",
        "irrmap_confusion",
        "irrmap_class_metrics",
        "typedef struct IrrmapModel IrrmapModel",
        "IRRMAP_STATUS_OVERLAP_TOO_SMALL = 7",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}

/// Builds a C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libirrmap_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    let first: Vec<f64> = text
        .lines()
        .next()
        .unwrap()
        .split(' ')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((first[0] - 0.8525).abs() < 1e-4 && (first[1] - 0.8608).abs() < 1e-4);
    assert!((first[3] - 0.9675).abs() < 1e-4);
    assert_eq!(text.lines().nth(1).unwrap(), env!("CARGO_PKG_VERSION"));
}
