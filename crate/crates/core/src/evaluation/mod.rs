//! Accuracy metrics, product comparison, county-area regression, IQR
//! histograms and multi-year change analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geodata::{Raster, IRRIGATED, UNLABELED};
use crate::inference::{binarize, EnsembleRaster};
pub use crate::training::CLASS_NAMES;

/// Square count matrix, rows actual and columns predicted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    names: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(names: &[&str]) -> Self {
        ConfusionMatrix {
            names: names.iter().map(|s| s.to_string()).collect(),
            counts: vec![0; names.len() * names.len()],
        }
    }

    pub fn from_rows(names: &[&str], rows: &[Vec<u64>]) -> Result<Self> {
        let k = names.len();
        if rows.len() != k || rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion", format!("expected a {k}x{k} matrix")));
        }
        Ok(ConfusionMatrix {
            names: names.iter().map(|s| s.to_string()).collect(),
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes() + predicted]
    }

    pub fn add(&mut self, actual: usize, predicted: usize, n: u64) {
        let k = self.classes();
        self.counts[actual * k + predicted] += n;
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Invalid(
                "cannot merge confusion matrices over different classes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes()).map(|r| r.to_vec()).collect()
    }
}

pub const BINARY_NAMES: [&str; 2] = ["irrigated", "non-irrigated"];

/// Counts over labeled pixels of `predicted` (codes 1..=k) against `labels`
/// (0 unlabeled, 1..=k classes).
pub fn confusion(predicted: &Raster<u8>, labels: &Raster<u8>, names: &[&str]) -> Result<ConfusionMatrix> {
    predicted.grid().check_same(labels.grid(), "prediction vs labels")?;
    let k = names.len();
    let mut m = ConfusionMatrix::zeros(names);
    for (&p, &a) in predicted.band(0).iter().zip(labels.band(0)) {
        if a == UNLABELED {
            continue;
        }
        if a as usize > k || p == 0 || p as usize > k {
            return Err(Error::Invalid(format!(
                "class code out of range for {k} classes: label {a}, predicted {p}"
            )));
        }
        m.add(a as usize - 1, p as usize - 1, 1);
    }
    Ok(m)
}

/// Irrigated vs everything else. `predicted` is binarized first, so both
/// class rasters and 0/1 products are accepted.
pub fn binary_confusion(predicted: &Raster<u8>, labels: &Raster<u8>) -> Result<ConfusionMatrix> {
    predicted.grid().check_same(labels.grid(), "prediction vs labels")?;
    let pred = binarize(predicted);
    let mut m = ConfusionMatrix::zeros(&BINARY_NAMES);
    for (&p, &a) in pred.band(0).iter().zip(labels.band(0)) {
        if a == UNLABELED {
            continue;
        }
        let actual = usize::from(a != IRRIGATED);
        let predicted = usize::from(p != 1);
        m.add(actual, predicted, 1);
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and f1 of one class; any 0/0 is reported as 0.
pub fn class_metrics(m: &ConfusionMatrix, class: usize) -> ClassMetrics {
    let k = m.classes();
    let tp = m.get(class, class);
    let predicted: u64 = (0..k).map(|a| m.get(a, class)).sum();
    let actual: u64 = (0..k).map(|p| m.get(class, p)).sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics { precision, recall, f1 }
}

pub fn overall_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    match m.total() {
        0 => Err(Error::Invalid("overall accuracy of an empty confusion matrix".into())),
        n => Ok(m.trace() as f64 / n as f64),
    }
}

/// Irrigated-class scores of one product aggregated over years.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProductReport {
    pub product: String,
    pub years: Vec<i32>,
    /// Years with labels but no raster from this product.
    pub missing_years: Vec<i32>,
    pub pixels: u64,
    pub overall_accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Aggregates binary confusion counts across the labeled years of each
/// product. Every product is scored on each year's full labeled-pixel set.
pub fn compare_products(
    products: &BTreeMap<String, BTreeMap<i32, Raster<u8>>>,
    labels: &BTreeMap<i32, Raster<u8>>,
) -> Result<Vec<ProductReport>> {
    let mut out = Vec::with_capacity(products.len());
    for (name, rasters) in products {
        let mut total = ConfusionMatrix::zeros(&BINARY_NAMES);
        let (mut years, mut missing) = (Vec::new(), Vec::new());
        for (&year, lab) in labels {
            match rasters.get(&year) {
                Some(r) => {
                    total.merge(&binary_confusion(r, lab)?)?;
                    years.push(year);
                }
                None => missing.push(year),
            }
        }
        for year in &missing {
            log::warn!("product {name} has no raster for {year}");
        }
        let metrics = class_metrics(&total, 0);
        out.push(ProductReport {
            product: name.clone(),
            years,
            missing_years: missing,
            pixels: total.total(),
            overall_accuracy: overall_accuracy(&total).unwrap_or(0.0),
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope·x + intercept` over the counties
/// present in both maps.
pub fn regress_areas(x: &BTreeMap<String, f64>, y: &BTreeMap<String, f64>) -> Result<RegressionSummary> {
    let pairs: Vec<(f64, f64)> = x.iter().filter_map(|(k, &xv)| y.get(k).map(|&yv| (xv, yv))).collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Invalid(format!(
            "regression needs at least 2 shared counties, got {n}"
        )));
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("regression x values have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = pairs
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).max(0.0)
    };
    Ok(RegressionSummary {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// One county of a two-source area comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AreaRow {
    pub county: String,
    pub predicted: Option<f64>,
    pub reference: Option<f64>,
    /// Set when either source lacks the county.
    pub flagged: bool,
}

/// Outer join of two county maps; rows missing on one side are flagged.
pub fn join_areas(predicted: &BTreeMap<String, f64>, reference: &BTreeMap<String, f64>) -> Vec<AreaRow> {
    let keys: BTreeSet<&String> = predicted.keys().chain(reference.keys()).collect();
    keys.into_iter()
        .map(|k| {
            let (p, r) = (predicted.get(k).copied(), reference.get(k).copied());
            AreaRow {
                county: k.clone(),
                predicted: p,
                reference: r,
                flagged: p.is_none() || r.is_none(),
            }
        })
        .collect()
}

/// IQR histograms (bins 0..=255) of one predicted class, split by whether
/// the prediction matched the label.
#[derive(Clone, Debug, PartialEq)]
pub struct IqrHistogram {
    pub class: usize,
    pub correct: [u64; 256],
    pub incorrect: [u64; 256],
}

impl IqrHistogram {
    pub fn mass(&self) -> u64 {
        self.correct.iter().chain(&self.incorrect).sum()
    }

    fn mean(h: &[u64; 256]) -> Option<f64> {
        let n: u64 = h.iter().sum();
        (n > 0).then(|| h.iter().enumerate().map(|(b, &c)| b as f64 * c as f64).sum::<f64>() / n as f64)
    }

    pub fn mean_correct(&self) -> Option<f64> {
        IqrHistogram::mean(&self.correct)
    }

    pub fn mean_incorrect(&self) -> Option<f64> {
        IqrHistogram::mean(&self.incorrect)
    }
}

/// For every labeled pixel, bins the IQR of its predicted class under that
/// class's correct or incorrect histogram.
pub fn iqr_histograms(ensemble: &EnsembleRaster, labels: &Raster<u8>) -> Result<Vec<IqrHistogram>> {
    ensemble
        .classes
        .grid()
        .check_same(labels.grid(), "ensemble vs labels")?;
    let k = ensemble.median.channels();
    let mut hists: Vec<IqrHistogram> = (0..k)
        .map(|class| IqrHistogram {
            class,
            correct: [0; 256],
            incorrect: [0; 256],
        })
        .collect();
    let iqr = ensemble.predicted_iqr();
    for ((&p, &a), &q) in ensemble.classes.band(0).iter().zip(labels.band(0)).zip(&iqr) {
        if a == UNLABELED {
            continue;
        }
        let h = &mut hists[p as usize - 1];
        if a == p {
            h.correct[q as usize] += 1;
        } else {
            h.incorrect[q as usize] += 1;
        }
    }
    Ok(hists)
}

/// Per-county change in mean area between the first and the last
/// `period`-year block. Blocks start at the earliest year; years past the
/// last whole block are ignored and `exclude`d years are left out of their
/// block's mean.
pub fn change_analysis(
    yearly: &BTreeMap<i32, BTreeMap<String, f64>>,
    period: usize,
    exclude: &BTreeSet<i32>,
) -> Result<BTreeMap<String, f64>> {
    if period == 0 {
        return Err(Error::Invalid("period must be at least one year".into()));
    }
    let (Some(&first), Some(&last)) = (yearly.keys().next(), yearly.keys().next_back()) else {
        return Err(Error::Invalid("no yearly areas".into()));
    };
    let blocks = (last - first + 1) as usize / period;
    if blocks < 2 {
        return Err(Error::Invalid(format!(
            "years {first}..={last} span fewer than two {period}-year periods"
        )));
    }
    let block_years = |b: usize| {
        let start = first + (b * period) as i32;
        (start..start + period as i32).filter(|y| !exclude.contains(y) && yearly.contains_key(y))
    };
    let block_mean = |b: usize, county: &str| -> Result<f64> {
        let vals: Vec<f64> = block_years(b).filter_map(|y| yearly[&y].get(county).copied()).collect();
        if vals.is_empty() {
            let start = first + (b * period) as i32;
            return Err(Error::Invalid(format!(
                "no usable years in block {start}..{} for county {county}",
                start + period as i32 - 1
            )));
        }
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let counties: BTreeSet<&String> = yearly.values().flat_map(|m| m.keys()).collect();
    counties
        .into_iter()
        .map(|c| Ok((c.clone(), block_mean(blocks - 1, c)? - block_mean(0, c)?)))
        .collect()
}

pub fn write_product_csv<W: Write>(w: W, reports: &[ProductReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "product",
        "years",
        "missing_years",
        "pixels",
        "oa",
        "precision",
        "recall",
        "f1",
    ])?;
    let join = |ys: &[i32]| ys.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(" ");
    for r in reports {
        out.write_record([
            r.product.clone(),
            join(&r.years),
            join(&r.missing_years),
            r.pixels.to_string(),
            format!("{:.6}", r.overall_accuracy),
            format!("{:.6}", r.precision),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.f1),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<product report>", e))
}

/// Confusion matrix with per-class precision, recall and f1 appended.
pub fn write_confusion_csv<W: Write>(w: W, m: &ConfusionMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut head = vec!["actual".to_string()];
    head.extend(m.names().iter().cloned());
    head.extend(["precision", "recall", "f1"].map(String::from));
    out.write_record(&head)?;
    for (i, row) in m.rows().iter().enumerate() {
        let cm = class_metrics(m, i);
        let mut rec = vec![m.names()[i].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        rec.extend([cm.precision, cm.recall, cm.f1].map(|v| format!("{v:.6}")));
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::io("<confusion>", e))
}

/// Long format `class,bin,correct,incorrect,cum_correct,cum_incorrect` with
/// cumulative fractions.
pub fn write_histogram_csv<W: Write>(w: W, hists: &[IqrHistogram], names: &[&str]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["class", "bin", "correct", "incorrect", "cum_correct", "cum_incorrect"])?;
    for h in hists {
        let (nc, ni) = (h.correct.iter().sum::<u64>(), h.incorrect.iter().sum::<u64>());
        let (mut cc, mut ci) = (0u64, 0u64);
        let name = names
            .get(h.class)
            .map(|s| s.to_string())
            .unwrap_or_else(|| h.class.to_string());
        for b in 0..256 {
            cc += h.correct[b];
            ci += h.incorrect[b];
            out.write_record([
                name.clone(),
                b.to_string(),
                h.correct[b].to_string(),
                h.incorrect[b].to_string(),
                format!("{:.6}", ratio(cc, nc)),
                format!("{:.6}", ratio(ci, ni)),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<histogram>", e))
}

#[derive(Serialize)]
struct RegressionRow<'a> {
    label: &'a str,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    n: usize,
}

pub fn write_regression_csv<W: Write>(w: W, rows: &[(String, RegressionSummary)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (label, r) in rows {
        out.serialize(RegressionRow {
            label,
            slope: r.slope,
            intercept: r.intercept,
            r_squared: r.r_squared,
            n: r.n,
        })?;
    }
    out.flush().map_err(|e| Error::io("<regression>", e))
}

pub fn write_area_csv<W: Write>(w: W, rows: &[AreaRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<areas>", e))
}

pub fn write_change_csv<W: Write>(w: W, deltas: &BTreeMap<String, f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["county", "delta_acres"])?;
    for (c, d) in deltas {
        out.write_record([c.clone(), format!("{d:.6}")])?;
    }
    out.flush().map_err(|e| Error::io("<change>", e))
}

#[cfg(test)]
mod tests;
