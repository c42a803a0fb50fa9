//! Pixel-wise segmentation scores with road as the positive class.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ContingencyTable {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Table with the roles of result and truth exchanged.
    pub fn transposed(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

pub fn contingency(result: &BinaryMask, truth: &BinaryMask) -> Result<ContingencyTable> {
    if result.dims() != truth.dims() {
        return Err(Error::DimensionMismatch(format!(
            "result {:?} vs truth {:?}",
            result.dims(),
            truth.dims()
        )));
    }
    let mut t = ContingencyTable::default();
    for (&r, &g) in result.data().iter().zip(truth.data()) {
        match (r, g) {
            (true, true) => t.tp += 1,
            (false, false) => t.tn += 1,
            (true, false) => t.fp += 1,
            (false, true) => t.fn_ += 1,
        }
    }
    Ok(t)
}

/// Quality, accuracy, sensitivity and specificity; `None` where the
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSet {
    pub quality: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl MetricSet {
    pub fn values(&self) -> [Option<f64>; 4] {
        [self.quality, self.accuracy, self.sensitivity, self.specificity]
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(t: &ContingencyTable) -> MetricSet {
    MetricSet {
        quality: ratio(t.tp, t.tp + t.fp + t.fn_),
        accuracy: ratio(t.tp + t.tn, t.total()),
        sensitivity: ratio(t.tp, t.tp + t.fn_),
        specificity: ratio(t.tn, t.fp + t.tn),
    }
}

/// Sample mean and population standard deviation of one measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    /// Frames that contributed (undefined values are skipped).
    pub count: usize,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub quality: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub specificity: Option<MeanStd>,
}

fn mean_std(values: impl Iterator<Item = Option<f64>>) -> Option<MeanStd> {
    let v: Vec<f64> = values.flatten().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(MeanStd {
        mean,
        std: var.sqrt(),
        count: v.len(),
    })
}

pub fn aggregate(per_frame: &[MetricSet]) -> Result<Aggregate> {
    if per_frame.is_empty() {
        return Err(Error::Data("no frames to aggregate".into()));
    }
    Ok(Aggregate {
        quality: mean_std(per_frame.iter().map(|m| m.quality)),
        accuracy: mean_std(per_frame.iter().map(|m| m.accuracy)),
        sensitivity: mean_std(per_frame.iter().map(|m| m.sensitivity)),
        specificity: mean_std(per_frame.iter().map(|m| m.specificity)),
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

fn summary_cell(v: Option<MeanStd>) -> String {
    v.map_or_else(|| "NA".to_string(), |m| m.to_string())
}

/// CSV with one row per frame and a closing `mean±std` summary row.
pub fn report_csv(frames: &[(usize, ContingencyTable)]) -> Result<String> {
    let mut s = String::from("frame_index,tp,tn,fp,fn,g,acc,tpr,spc\n");
    let mut all = Vec::with_capacity(frames.len());
    for (idx, t) in frames {
        let m = metrics(t);
        s.push_str(&format!(
            "{idx},{},{},{},{},{},{},{},{}\n",
            t.tp,
            t.tn,
            t.fp,
            t.fn_,
            cell(m.quality),
            cell(m.accuracy),
            cell(m.sensitivity),
            cell(m.specificity)
        ));
        all.push(m);
    }
    let a = aggregate(&all)?;
    s.push_str(&format!(
        "summary,,,,,{},{},{},{}\n",
        summary_cell(a.quality),
        summary_cell(a.accuracy),
        summary_cell(a.sensitivity),
        summary_cell(a.specificity)
    ));
    Ok(s)
}
