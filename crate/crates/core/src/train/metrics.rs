use std::fmt::Write as _;
use std::path::Path;

use super::predict;
use crate::data::{load_sample, Sample, SampleRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::imgproc::Image;
use crate::nn::{Checkpoint, ModelKind};

pub const METRIC_CSV_HEADER: &str = "dataset,image_id,method,dice,accuracy,sensitivity,specificity,threshold";
pub const SUMMARY_CSV_HEADER: &str = "method,metric,n,min,q1,median,q3,max,mean";
/// Written in place of a metric whose denominator is zero.
pub const NA: &str = "NA";

/// Pixel counts of a binary prediction against a binary label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    /// Counts over pixels with `fov > 0.5`; masks are read as `> 0.5`.
    pub fn count(pred: &Image, label: &Image, fov: &Image) -> Result<Self> {
        if !pred.same_dims(label) || !pred.same_dims(fov) {
            return Err(Error::invalid("confusion", "prediction, label and fov sizes differ"));
        }
        let mut c = Confusion::default();
        for ((&p, &l), &f) in pred.plane(0).iter().zip(label.plane(0)).zip(fov.plane(0)) {
            if f <= 0.5 {
                continue;
            }
            match (p > 0.5, l > 0.5) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn dice(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    /// Undefined when the label has no vessel pixels.
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Undefined when the label has no background pixels.
    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub image_id: String,
    pub method: ModelKind,
    pub dice: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub threshold: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |v| format!("{v:.6}"))
}

impl MetricRow {
    pub fn from_confusion(dataset: &str, image_id: &str, method: ModelKind, c: &Confusion, threshold: f64) -> Self {
        MetricRow {
            dataset: dataset.into(),
            image_id: image_id.into(),
            method,
            dice: c.dice(),
            accuracy: c.accuracy(),
            sensitivity: c.sensitivity(),
            specificity: c.specificity(),
            threshold,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.6}",
            self.dataset,
            self.image_id,
            self.method.method_name(),
            cell(self.dice),
            cell(self.accuracy),
            cell(self.sensitivity),
            cell(self.specificity),
            self.threshold
        )
    }

    /// `(name, value)` for each metric column.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("dice", self.dice),
            ("accuracy", self.accuracy),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
        ]
    }
}

/// Scores every model on one sample, in model order.
pub fn evaluate_sample(dataset: &str, sample: &Sample, models: &[&Checkpoint]) -> Result<Vec<MetricRow>> {
    models
        .iter()
        .map(|m| {
            let p = predict(m, &sample.image)?;
            let c = Confusion::count(&p.mask, &sample.label, &sample.fov)?;
            Ok(MetricRow::from_confusion(dataset, &sample.id, m.kind, &c, p.threshold as f64))
        })
        .collect()
}

/// Loads and scores every record: one row per (image, model), images in
/// manifest order.
pub fn evaluate(records: &[SampleRecord], models: &[&Checkpoint]) -> Result<Vec<MetricRow>> {
    if models.is_empty() {
        return Err(Error::invalid("evaluate", "no models to evaluate"));
    }
    let rows = exec::map_indexed(records.len(), |i| {
        let r = &records[i];
        evaluate_sample(&r.dataset, &load_sample(r)?, models)
    });
    Ok(rows.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRIC_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

/// Box-plot statistics of one metric for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: ModelKind,
    pub metric: &'static str,
    /// Defined values only; `NA` rows are skipped.
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Linearly interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Median of unsorted values; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile(&v, 0.5))
}

/// Per method (in first-seen order) and metric.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<ModelKind> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut out = Vec::new();
    for m in methods {
        for k in 0..4 {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m)
                .filter_map(|r| r.metrics()[k].1)
                .collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            out.push(SummaryRow {
                method: m,
                metric: rows[0].metrics()[k].0,
                n: v.len(),
                min: v[0],
                q1: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
                mean: v.iter().sum::<f64>() / v.len() as f64,
            });
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{SUMMARY_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.method.method_name(),
            r.metric,
            r.n,
            r.min,
            r.q1,
            r.median,
            r.q3,
            r.max,
            r.mean
        );
    }
    s
}
