use super::*;
use crate::geodata::RasterGrid;
use crate::unet::UNetConfig;
use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(depth: usize) -> UNet {
    let cfg = UNetConfig {
        in_channels: 3,
        num_classes: 3,
        base_filters: 2,
        depth,
        weight_decay: 0.001,
        seed: 17,
    };
    let mut m = UNet::build(&cfg).unwrap();
    m.assume_tracked();
    m
}

fn image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = Shape::new(1, c, h, w);
    Tensor::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn interior_equal(a: &Tensor, b: &Tensor, margin: usize) -> usize {
    let s = a.shape();
    let mut checked = 0;
    for c in 0..s.c {
        for y in margin..s.h - margin {
            for x in margin..s.w - margin {
                assert_eq!(
                    a.at(0, c, y, x).to_bits(),
                    b.at(0, c, y, x).to_bits(),
                    "class {c} pixel ({y}, {x})"
                );
                checked += 1;
            }
        }
    }
    checked
}

#[test]
fn mosaic_equals_whole_image_inference() {
    let model = small_model(2);
    let overlap = model.config().min_overlap();
    let img = image(1, 3, 96, 80);
    let whole = model.predict(&img).unwrap();
    let tiled = overlap_tile_predict(&model, &img, 64, overlap).unwrap();
    assert!(interior_equal(&tiled, &whole, overlap) > 0);
}

#[test]
fn mosaic_handles_ragged_edges_and_larger_overlap() {
    let model = small_model(1);
    let img = image(2, 3, 50, 38);
    let tiled = overlap_tile_predict(&model, &img, 48, 12).unwrap();
    assert_eq!(tiled.shape(), Shape::new(1, 3, 50, 38));
    let whole = model.predict(&img).unwrap();
    interior_equal(&tiled, &whole, 12);
    for y in 0..50 {
        for x in 0..38 {
            let sum: f32 = (0..3).map(|c| tiled.at(0, c, y, x)).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn small_image_is_predicted_directly() {
    let model = small_model(2);
    let img = image(3, 3, 32, 24);
    let overlap = model.config().min_overlap();
    let tiled = overlap_tile_predict(&model, &img, 64, overlap).unwrap();
    assert_eq!(tiled, model.predict(&img).unwrap());
}

#[test]
fn insufficient_overlap_is_rejected() {
    let model = small_model(2);
    let img = image(4, 3, 16, 16);
    let required = model.config().min_overlap();
    match overlap_tile_predict(&model, &img, 64, required - 4) {
        Err(Error::OverlapTooSmall { given, required: r }) => assert_eq!((given, r), (required - 4, required)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(overlap_tile_predict(&model, &img, 62, required).is_err());
    assert!(overlap_tile_predict(&model, &img, 48, required).is_err());
    assert!(overlap_tile_predict(&model, &img, 128, required + 2).is_err());
    assert!(overlap_tile_predict(&model, &image(4, 2, 16, 16), 64, required).is_err());
}

#[test]
fn quantize_fixed_points() {
    assert_eq!(quantize(0.0), 0);
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(-3.0), 0);
    assert_eq!(quantize(7.0), 255);
    assert_eq!(quantize(f64::NAN), 0);
    // 254.5 / 255 rounds up
    assert_eq!(quantize(254.5 / 255.0), 255);
    for q in 0..=255u8 {
        assert_eq!(quantize(dequantize(q)), q);
    }
}

fn raster(k: usize, w: usize, h: usize, data: Vec<u8>) -> Raster<u8> {
    Raster::from_vec(RasterGrid::new(w, h, 0.0, 0.0, 30.0).unwrap(), k, data).unwrap()
}

fn members(values: &[u8]) -> Vec<Raster<u8>> {
    values.iter().map(|&v| raster(1, 1, 1, vec![v])).collect()
}

#[test]
fn median_rules() {
    let single = raster(3, 2, 1, vec![1, 2, 3, 4, 5, 6]);
    assert_eq!(ensemble_median(std::slice::from_ref(&single)).unwrap(), single);
    assert_eq!(ensemble_median(&members(&[10, 20, 30, 40])).unwrap().data(), &[25]);
    assert_eq!(ensemble_median(&members(&[40, 10, 30])).unwrap().data(), &[30]);
    assert_eq!(ensemble_median(&members(&[254, 255])).unwrap().data(), &[254]);
    assert!(ensemble_median(&[]).is_err());
}

#[test]
fn iqr_rules() {
    assert_eq!(ensemble_iqr(&members(&[0, 0, 255, 255])).unwrap().data(), &[255]);
    assert_eq!(ensemble_iqr(&members(&[7; 10])).unwrap().data(), &[0]);
    let spread: Vec<u8> = (0..10).map(|i| (i * 255 / 9) as u8).collect();
    // v(8) - v(3) of 0, 28, 56, ..., 255
    assert_eq!(ensemble_iqr(&members(&spread)).unwrap().data(), &[198 - 56]);
    assert!(ensemble_iqr(&members(&[1, 2, 3])).is_err());
}

#[test]
fn members_must_share_a_grid() {
    let a = raster(1, 2, 2, vec![0; 4]);
    let b = raster(1, 2, 1, vec![0; 2]);
    let c = raster(2, 2, 2, vec![0; 8]);
    assert!(matches!(ensemble_median(&[a.clone(), b]), Err(Error::GridMismatch(_))));
    assert!(matches!(ensemble_median(&[a, c]), Err(Error::GridMismatch(_))));
}

/// Order statistics by an independent route: counting sort over 0..=255.
fn counting_oracle(values: &[u8]) -> (u8, u8) {
    let mut hist = [0usize; 256];
    for &v in values {
        hist[v as usize] += 1;
    }
    let nth = |rank: usize| -> u16 {
        let mut seen = 0;
        for (v, &c) in hist.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return v as u16;
            }
        }
        unreachable!()
    };
    let k = values.len();
    let median = if k % 2 == 1 {
        nth(k / 2 + 1)
    } else {
        (nth(k / 2) + nth(k / 2 + 1)) / 2
    };
    let iqr = nth((3 * k).div_ceil(4)) - nth(k.div_ceil(4));
    (median as u8, iqr as u8)
}

#[test]
fn ten_member_reductions_match_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h, k) = (40, 25, 3);
    let models: Vec<Raster<u8>> = (0..10)
        .map(|_| raster(k, w, h, (0..k * w * h).map(|_| rng.random()).collect()))
        .collect();
    let med = ensemble_median(&models).unwrap();
    let iqr = ensemble_iqr(&models).unwrap();
    for j in 0..k * w * h {
        let vals: Vec<u8> = models.iter().map(|m| m.data()[j]).collect();
        assert_eq!((med.data()[j], iqr.data()[j]), counting_oracle(&vals));
    }
}

#[test]
fn classify_rules() {
    let m = raster(3, 3, 1, vec![200, 85, 10, 30, 85, 10, 25, 85, 10]);
    assert_eq!(classify(&m).data(), &[1, 1, 1]);
    let m = raster(3, 2, 1, vec![1, 3, 2, 9, 9, 3]);
    assert_eq!(classify(&m).data(), &[3, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 500;
    let r = raster(3, n, 1, (0..3 * n).map(|_| rng.random_range(0..8)).collect());
    let c = classify(&r);
    for i in 0..n {
        let v = [r.data()[i], r.data()[n + i], r.data()[2 * n + i]];
        let max = *v.iter().max().unwrap();
        let want = v.iter().position(|&x| x == max).unwrap() as u8 + 1;
        assert_eq!(c.data()[i], want);
    }
}

#[test]
fn binarize_codes() {
    let r = raster(1, 4, 1, vec![1, 2, 3, 0]);
    assert_eq!(binarize(&r).data(), &[1, 0, 0, 0]);
}

#[test]
fn reduce_collects_everything() {
    let models: Vec<Raster<u8>> = [[200u8, 30, 25], [180, 60, 15], [220, 20, 15]]
        .iter()
        .map(|v| raster(3, 1, 1, v.to_vec()))
        .collect();
    let e = EnsembleRaster::reduce(&models).unwrap();
    assert_eq!(e.median.data(), &[200, 30, 15]);
    assert_eq!(e.iqr.data(), &[40, 40, 10]);
    assert_eq!(e.classes.data(), &[1]);
    assert_eq!(e.predicted_iqr(), vec![40]);
}

proptest! {
    #[test]
    fn reductions_ignore_member_order(vals in proptest::collection::vec(0u8..=255, 4..12), seed in 0u64..100) {
        use rand::seq::SliceRandom;
        let mut shuffled = vals.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ensemble_median(&members(&vals)).unwrap(), ensemble_median(&members(&shuffled)).unwrap());
        prop_assert_eq!(ensemble_iqr(&members(&vals)).unwrap(), ensemble_iqr(&members(&shuffled)).unwrap());
    }

    #[test]
    fn raising_one_member_never_lowers_median(vals in proptest::collection::vec(0u8..=255, 1..12), i in 0usize..12, bump in 0u8..=255) {
        let i = i % vals.len();
        let mut up = vals.clone();
        up[i] = up[i].saturating_add(bump);
        let a = ensemble_median(&members(&vals)).unwrap().data()[0];
        let b = ensemble_median(&members(&up)).unwrap().data()[0];
        prop_assert!(b >= a);
    }

    #[test]
    fn classify_ignores_common_offsets(v in proptest::array::uniform3(0u8..200), add in 0u8..56) {
        let a = classify(&raster(3, 1, 1, v.to_vec()));
        let b = classify(&raster(3, 1, 1, v.iter().map(|x| x + add).collect()));
        prop_assert_eq!(a, b);
    }
}
