//! Confusion-matrix metrics for label maps: pixel accuracy, mean accuracy,
//! per-class IoU and F-1, and a cross-granularity consistency diagnostic.

use std::fmt::Write as _;

use crate::error::{Error, Result};


/// `K×K` counts, rows are ground truth, columns prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum()
    }

    /// Count every pixel of `pred` against `gt`.
    pub fn accumulate(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Data(format!(
                "prediction has {} pixels, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        let k = self.k;
        if let Some(&v) = pred.iter().chain(gt).find(|&&v| v as usize >= k) {
            return Err(Error::Data(format!("label {v} out of range for {k} classes")));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Data(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn compute(&self, options: &MetricOptions) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Usage("no pixels scored".into()));
        }
        let k = self.k;
        let diag: Vec<u64> = (0..k).map(|c| self.get(c, c)).collect();
        let rows: Vec<u64> = (0..k).map(|c| self.row_sum(c)).collect();
        let cols: Vec<u64> = (0..k).map(|c| self.col_sum(c)).collect();
        let ratio = |n: u64, d: u64| (d > 0).then(|| n as f64 / d as f64);
        let accuracy: Vec<Option<f64>> = (0..k).map(|c| ratio(diag[c], rows[c])).collect();
        let iou: Vec<Option<f64>> = (0..k)
            .map(|c| ratio(diag[c], rows[c] + cols[c] - diag[c]))
            .collect();
        let f1: Vec<Option<f64>> = (0..k)
            .map(|c| ratio(2 * diag[c], rows[c] + cols[c]))
            .collect();
        let present: Vec<bool> = rows.iter().map(|&r| r > 0).collect();
        let mean = |vals: &[Option<f64>], skip_bg: bool| -> f64 {
            let picked: Vec<f64> = (0..k)
                .filter(|&c| present[c] && !(skip_bg && c == 0))
                .filter_map(|c| vals[c])
                .collect();
            if picked.is_empty() {
                0.0
            } else {
                picked.iter().sum::<f64>() / picked.len() as f64
            }
        };
        Ok(Metrics {
            pixel_accuracy: diag.iter().sum::<u64>() as f64 / total as f64,
            mean_accuracy: mean(&accuracy, false),
            mean_iou: mean(&iou, !options.background_in_miou),
            mean_f1: mean(&f1, options.f1_foreground_only),
            accuracy,
            iou,
            f1,
            present,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricOptions {
    /// Count the background class (label 0) in mean IoU.
    pub background_in_miou: bool,
    /// Average F-1 over foreground classes only.
    pub f1_foreground_only: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            background_in_miou: true,
            f1_foreground_only: true,
        }
    }
}

/// Per-class entries are `None` when the class never occurs in either map.
/// Means average over classes present in the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
    pub mean_f1: f64,
    pub accuracy: Vec<Option<f64>>,
    pub iou: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    pub present: Vec<bool>,
}

impl Metrics {
    /// `metric<TAB>class<TAB>value` lines; summary metrics use class `all`.
    pub fn to_lines(&self, labels: &[String]) -> String {
        let mut out = String::new();
        for (name, v) in [
            ("pixel_acc", self.pixel_accuracy),
            ("mean_acc", self.mean_accuracy),
            ("mean_iou", self.mean_iou),
            ("mean_f1", self.mean_f1),
        ] {
            writeln!(out, "{name}\tall\t{v:.6}").expect("string write");
        }
        for (name, vals) in [("acc", &self.accuracy), ("iou", &self.iou), ("f1", &self.f1)] {
            for (c, v) in vals.iter().enumerate() {
                let label = labels.get(c).map_or_else(|| c.to_string(), Clone::clone);
                match v {
                    Some(v) => writeln!(out, "{name}\t{label}\t{v:.6}"),
                    None => writeln!(out, "{name}\t{label}\tnan"),
                }
                .expect("string write");
            }
        }
        out
    }

    /// Human-readable table, percentages.
    pub fn to_table(&self, labels: &[String]) -> String {
        let width = labels.iter().map(String::len).max().unwrap_or(5).max(5);
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = String::new();
        writeln!(out, "{:width$}  {:>7}  {:>7}  {:>7}", "class", "acc", "iou", "f1").expect("string write");
        for c in 0..self.iou.len() {
            let label = labels.get(c).map_or_else(|| c.to_string(), Clone::clone);
            writeln!(
                out,
                "{label:width$}  {:>7}  {:>7}  {:>7}",
                pct(self.accuracy[c]),
                pct(self.iou[c]),
                pct(self.f1[c])
            )
            .expect("string write");
        }
        writeln!(
            out,
            "pixel acc {:.2}  mean acc {:.2}  mean IoU {:.2}  mean F-1 {:.2}",
            100.0 * self.pixel_accuracy,
            100.0 * self.mean_accuracy,
            100.0 * self.mean_iou,
            100.0 * self.mean_f1
        )
        .expect("string write");
        out
    }
}

/// Fraction of pixels where `mapping[fine_pred]` equals `coarse_pred`.
pub fn hierarchy_consistency(fine_pred: &[u8], coarse_pred: &[u8], mapping: &[usize]) -> Result<f64> {
    if fine_pred.len() != coarse_pred.len() || fine_pred.is_empty() {
        return Err(Error::Data(format!(
            "consistency needs equal nonempty maps, got {} and {} pixels",
            fine_pred.len(),
            coarse_pred.len()
        )));
    }
    let mut agree = 0u64;
    for (&f, &c) in fine_pred.iter().zip(coarse_pred) {
        let m = *mapping
            .get(f as usize)
            .ok_or_else(|| Error::Data(format!("label {f} outside the mapping")))?;
        agree += u64::from(m == c as usize);
    }
    Ok(agree as f64 / fine_pred.len() as f64)
}
