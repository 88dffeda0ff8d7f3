use super::*;
use crate::geodata::RasterGrid;
use proptest::prelude::{prop_assert, proptest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn raster(k: usize, w: usize, h: usize, data: Vec<u8>) -> Raster<u8> {
    Raster::from_vec(RasterGrid::new(w, h, 0.0, 0.0, 30.0).unwrap(), k, data).unwrap()
}

fn table() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(
        &CLASS_NAMES,
        &[
            vec![1_788_615, 184_405, 104_779],
            vec![114_903, 104_929_537, 1_212_801],
            vec![194_506, 5_334_847, 105_872_279],
        ],
    )
    .unwrap()
}

#[test]
fn three_class_table_metrics() {
    let m = table();
    let irr = class_metrics(&m, 0);
    assert!((irr.precision - 0.85).abs() < 0.005, "{irr:?}");
    assert!((irr.recall - 0.86).abs() < 0.005, "{irr:?}");
    assert!((irr.f1 - 0.856).abs() < 0.001, "{irr:?}");
    assert!((class_metrics(&m, 1).recall - 0.99).abs() < 0.005);
    assert!((class_metrics(&m, 2).recall - 0.95).abs() < 0.005);
    let oa = overall_accuracy(&m).unwrap();
    assert!((oa - 0.9675).abs() < 5e-4, "{oa}");
    // hand arithmetic on the raw counts
    let tp = 1_788_615f64;
    assert_eq!(irr.precision, tp / (tp + 114_903.0 + 194_506.0));
    assert_eq!(irr.recall, tp / (tp + 184_405.0 + 104_779.0));
}

#[test]
fn f1_matches_count_form() {
    let m = table();
    let irr = class_metrics(&m, 0);
    let (tp, fp, fn_) = (1_788_615f64, 309_409f64, 289_184f64);
    assert!((irr.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-12);
}

#[test]
fn empty_classes_score_zero() {
    let m = ConfusionMatrix::from_rows(&BINARY_NAMES, &[vec![0, 0], vec![0, 5]]).unwrap();
    assert_eq!(
        class_metrics(&m, 0),
        ClassMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0
        }
    );
    assert_eq!(overall_accuracy(&m).unwrap(), 1.0);
    assert!(overall_accuracy(&ConfusionMatrix::zeros(&BINARY_NAMES)).is_err());
    assert!(ConfusionMatrix::from_rows(&BINARY_NAMES, &[vec![1, 2]]).is_err());
}

#[test]
fn confusion_counts_only_labeled_pixels() {
    let pred = raster(1, 6, 1, vec![1, 1, 2, 3, 3, 2]);
    let labels = raster(1, 6, 1, vec![1, 0, 2, 2, 3, 1]);
    let m = confusion(&pred, &labels, &CLASS_NAMES).unwrap();
    assert_eq!(m.rows(), vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]);
    assert_eq!(m.total(), 5);
    let b = binary_confusion(&pred, &labels).unwrap();
    assert_eq!(b.rows(), vec![vec![1, 1], vec![0, 3]]);
    assert!(confusion(&raster(1, 6, 1, vec![0; 6]), &labels, &CLASS_NAMES).is_err());
    assert!(matches!(
        confusion(&raster(1, 5, 1, vec![1; 5]), &labels, &CLASS_NAMES),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn binary_confusion_accepts_zero_one_products() {
    let product = raster(1, 4, 1, vec![1, 0, 0, 1]);
    let labels = raster(1, 4, 1, vec![1, 3, 1, 2]);
    let b = binary_confusion(&product, &labels).unwrap();
    assert_eq!(b.rows(), vec![vec![1, 1], vec![1, 1]]);
}

#[test]
fn products_share_labeled_pixels_and_report_gaps() {
    let labels: BTreeMap<i32, Raster<u8>> = [
        (2001, raster(1, 4, 1, vec![1, 1, 2, 0])),
        (2002, raster(1, 4, 1, vec![1, 3, 3, 1])),
    ]
    .into();
    let mut products = BTreeMap::new();
    products.insert(
        "ours".to_string(),
        BTreeMap::from([
            (2001, raster(1, 4, 1, vec![1, 1, 2, 1])),
            (2002, raster(1, 4, 1, vec![1, 2, 3, 1])),
        ]),
    );
    products.insert(
        "other".to_string(),
        BTreeMap::from([(2002, raster(1, 4, 1, vec![0, 1, 0, 1]))]),
    );
    let reports = compare_products(&products, &labels).unwrap();
    let ours = reports.iter().find(|r| r.product == "ours").unwrap();
    assert_eq!(ours.pixels, 7);
    assert_eq!(ours.f1, 1.0);
    assert_eq!(ours.overall_accuracy, 1.0);
    let other = reports.iter().find(|r| r.product == "other").unwrap();
    assert_eq!(other.missing_years, vec![2001]);
    assert_eq!(other.years, vec![2002]);
    assert_eq!(other.pixels, 4);
    assert_eq!((other.precision, other.recall), (0.5, 0.5));
}

fn areas(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

#[test]
fn regression_recovers_planted_line() {
    let x = areas(&[("a", 10.0), ("b", 250.0), ("c", 4000.0), ("d", 77.5)]);
    let y: BTreeMap<String, f64> = x.iter().map(|(k, v)| (k.clone(), 2.0 * v + 5.0)).collect();
    let r = regress_areas(&x, &y).unwrap();
    assert!((r.slope - 2.0).abs() < 1e-9 && (r.intercept - 5.0).abs() < 1e-9);
    assert!((r.r_squared - 1.0).abs() < 1e-9);
    assert_eq!(r.n, 4);
    let same = regress_areas(&x, &x).unwrap();
    assert_eq!(same.slope, 1.0);
    assert!((same.r_squared - 1.0).abs() < 1e-9);
}

#[test]
fn regression_matches_textbook_example() {
    // x = 1..5, y = 2, 4, 5, 4, 5: slope 0.6, intercept 2.2, r² 0.6
    let x = areas(&[("1", 1.0), ("2", 2.0), ("3", 3.0), ("4", 4.0), ("5", 5.0)]);
    let y = areas(&[("1", 2.0), ("2", 4.0), ("3", 5.0), ("4", 4.0), ("5", 5.0)]);
    let r = regress_areas(&x, &y).unwrap();
    assert!((r.slope - 0.6).abs() < 1e-12);
    assert!((r.intercept - 2.2).abs() < 1e-12);
    assert!((r.r_squared - 0.6).abs() < 1e-12);
}

#[test]
fn regression_rejects_degenerate_input() {
    let x = areas(&[("a", 1.0), ("b", 1.0)]);
    let y = areas(&[("a", 1.0), ("b", 2.0)]);
    assert!(regress_areas(&x, &y).is_err());
    assert!(regress_areas(&areas(&[("a", 1.0)]), &areas(&[("a", 1.0)])).is_err());
    assert!(regress_areas(&areas(&[("a", 1.0), ("b", 2.0)]), &areas(&[("a", 1.0), ("c", 2.0)])).is_err());
}

#[test]
fn join_flags_one_sided_counties() {
    let rows = join_areas(&areas(&[("a", 1.0), ("b", 2.0)]), &areas(&[("b", 3.0), ("c", 4.0)]));
    let flags: Vec<(&str, bool)> = rows.iter().map(|r| (r.county.as_str(), r.flagged)).collect();
    assert_eq!(flags, vec![("a", true), ("b", false), ("c", true)]);
    assert_eq!(rows[2].predicted, None);
}

#[test]
fn histograms_split_by_correctness() {
    let grid = RasterGrid::new(4, 1, 0.0, 0.0, 30.0).unwrap();
    let classes = Raster::from_vec(grid, 1, vec![1, 1, 2, 3]).unwrap();
    let iqr = Raster::from_vec(grid, 3, vec![10, 20, 0, 0, 0, 0, 7, 0, 0, 0, 0, 255]).unwrap();
    let median = Raster::filled(grid, 3, 0);
    let e = EnsembleRaster { median, iqr, classes };
    let labels = raster(1, 4, 1, vec![1, 2, 2, 0]);
    let h = iqr_histograms(&e, &labels).unwrap();
    assert_eq!(h.len(), 3);
    assert_eq!(h[0].correct[10], 1);
    assert_eq!(h[0].incorrect[20], 1);
    assert_eq!(h[1].correct[7], 1);
    assert_eq!(h[2].mass(), 0);
    let total: u64 = h.iter().map(|x| x.mass()).sum();
    assert_eq!(total, 3);
    assert_eq!(h[0].mean_correct(), Some(10.0));
    assert_eq!(h[2].mean_incorrect(), None);
}

#[test]
fn histogram_csv_is_cumulative() {
    let mut h = IqrHistogram {
        class: 0,
        correct: [0; 256],
        incorrect: [0; 256],
    };
    h.correct[0] = 3;
    h.correct[255] = 1;
    let mut buf = Vec::new();
    write_histogram_csv(&mut buf, &[h], &CLASS_NAMES).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 257);
    assert_eq!(lines[1], "irrigated,0,3,0,0.750000,0.000000");
    assert_eq!(lines[256], "irrigated,255,1,0,1.000000,0.000000");
}

fn linear_years(first: i32, n: i32, per_year: f64) -> BTreeMap<i32, BTreeMap<String, f64>> {
    (0..n)
        .map(|i| (first + i, areas(&[("x", per_year * (i + 1) as f64), ("flat", 42.0)])))
        .collect()
}

#[test]
fn change_over_linear_growth() {
    let d = change_analysis(&linear_years(2000, 20, 10.0), 5, &BTreeSet::new()).unwrap();
    assert!((d["x"] - 150.0).abs() < 1e-9);
    assert_eq!(d["flat"], 0.0);
}

#[test]
fn change_skips_excluded_years() {
    let mut years = linear_years(2000, 10, 10.0);
    // a wild value in an excluded year has no effect
    years.get_mut(&2002).unwrap().insert("x".into(), 1e9);
    let d = change_analysis(&years, 5, &BTreeSet::from([2002])).unwrap();
    // first block 10, 20, 40, 50 -> 30; second 60..100 -> 80
    assert!((d["x"] - 50.0).abs() < 1e-9);
    assert!(change_analysis(&years, 5, &BTreeSet::from([2000, 2001, 2002, 2003, 2004])).is_err());
    assert!(change_analysis(&linear_years(2000, 9, 1.0), 5, &BTreeSet::new()).is_err());
    assert!(change_analysis(&years, 0, &BTreeSet::new()).is_err());
}

#[test]
fn csv_writers_produce_headers() {
    let mut buf = Vec::new();
    write_confusion_csv(&mut buf, &table()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("actual,irrigated,unirrigated,uncultivated,precision,recall,f1\n"));
    assert!(text.contains("irrigated,1788615,184405,104779,"));

    let mut buf = Vec::new();
    let r = RegressionSummary {
        slope: 1.0,
        intercept: 0.0,
        r_squared: 1.0,
        n: 3,
    };
    write_regression_csv(&mut buf, &[("2010".into(), r)]).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("label,slope,intercept,r_squared,n\n2010,"));
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(counts in proptest::collection::vec(0u64..1000, 9)) {
        let rows: Vec<Vec<u64>> = counts.chunks(3).map(|c| c.to_vec()).collect();
        let m = ConfusionMatrix::from_rows(&CLASS_NAMES, &rows).unwrap();
        for c in 0..3 {
            let cm = class_metrics(&m, c);
            for v in [cm.precision, cm.recall, cm.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(cm.f1 <= cm.precision.max(cm.recall) + 1e-12);
            prop_assert!(cm.f1 >= cm.precision.min(cm.recall) - 1e-12);
        }
        if m.total() > 0 {
            let oa = overall_accuracy(&m).unwrap();
            prop_assert!((0.0..=1.0).contains(&oa));
        }
    }

    #[test]
    fn confusion_total_equals_labeled_pixels(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 64;
        let pred = raster(1, n, 1, (0..n).map(|_| rng.random_range(1..=3)).collect());
        let labels = raster(1, n, 1, (0..n).map(|_| rng.random_range(0..=3)).collect());
        let m = confusion(&pred, &labels, &CLASS_NAMES).unwrap();
        let labeled = labels.data().iter().filter(|&&v| v != 0).count() as u64;
        prop_assert!(m.total() == labeled);
        prop_assert!(binary_confusion(&pred, &labels).unwrap().total() == labeled);
    }
}
