//! Telemetry series, chronological splits and non-overlapping windows.

use std::ops::Range;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Contiguous, ordered, disjoint index ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Valid => self.valid.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let ordered = self.train.start <= self.train.end
            && self.train.end <= self.valid.start
            && self.valid.start <= self.valid.end
            && self.valid.end <= self.test.start
            && self.test.start <= self.test.end
            && self.test.end <= len;
        if ordered {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "split ranges {self:?} are not ordered train->valid->test within {len} samples"
            )))
        }
    }
}

/// Uniformly sampled inputs `u_k` (W) and measurements `y_k` (K).
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryDataset {
    pub dt: f64,
    pub inputs: Array2<f64>,
    pub measurements: Array2<f64>,
    pub split: Option<SplitRanges>,
}

impl TelemetryDataset {
    pub fn new(dt: f64, inputs: Array2<f64>, measurements: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        if inputs.dim() != measurements.dim() {
            return Err(Error::Config(format!(
                "inputs {:?} and measurements {:?} differ in shape",
                inputs.dim(),
                measurements.dim()
            )));
        }
        Ok(TelemetryDataset {
            dt,
            inputs,
            measurements,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.measurements.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_count(&self) -> usize {
        self.measurements.ncols()
    }

    pub fn with_split(mut self, split: SplitRanges) -> Result<Self> {
        split.validate(self.len())?;
        self.split = Some(split);
        Ok(self)
    }

    pub fn range(&self, split: Split) -> Result<Range<usize>> {
        self.split
            .as_ref()
            .map(|s| s.get(split))
            .ok_or_else(|| Error::Config("dataset has no split annotations".into()))
    }

    /// Per-node standard deviation of the training measurements, floored.
    pub fn train_scales(&self, floor: f64) -> Result<Vec<f64>> {
        let range = self.range(Split::Train)?;
        let rows = self.measurements.slice(s![range, ..]);
        if rows.nrows() < 2 {
            return Err(Error::Config(
                "training split needs at least 2 samples".into(),
            ));
        }
        Ok(rows
            .columns()
            .into_iter()
            .map(|c| c.std(1.0).max(floor))
            .collect())
    }
}

/// Splits `fractions = (train, valid, test)` chronologically. Every split
/// must hold at least `window_len` samples.
pub fn split_ranges(
    len: usize,
    fractions: (f64, f64, f64),
    window_len: usize,
) -> Result<SplitRanges> {
    let (ft, fv, fs) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fs > 0.0) || ft + fv + fs > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to at most 1"
        )));
    }
    let count = |f: f64| (f * len as f64).round() as usize;
    let train = count(ft);
    let valid = count(fv);
    let test = count(fs).min(len.saturating_sub(train + valid));
    for (name, n) in [("train", train), ("valid", valid), ("test", test)] {
        if n < window_len.max(1) {
            return Err(Error::Config(format!(
                "{name} split has {n} samples, shorter than the window length {window_len}"
            )));
        }
    }
    Ok(SplitRanges {
        train: 0..train,
        valid: train..train + valid,
        test: train + valid..train + valid + test,
    })
}

pub fn split_dataset(
    dataset: TelemetryDataset,
    fractions: (f64, f64, f64),
    window_len: usize,
) -> Result<TelemetryDataset> {
    let ranges = split_ranges(dataset.len(), fractions, window_len)?;
    dataset.with_split(ranges)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// Dataset index of the first sample.
    pub start: usize,
    /// Measured state at `start`.
    pub initial: Vec<f64>,
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
    /// Samples per window, `T_b`.
    pub window_len: usize,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn total_samples(&self) -> usize {
        self.windows.len() * self.window_len
    }
}

/// `floor(len / window_len)` consecutive windows over `split`; the tail is
/// dropped.
pub fn make_windows(
    dataset: &TelemetryDataset,
    split: Split,
    window_len: usize,
) -> Result<WindowBatch> {
    let range = dataset.range(split)?;
    windows_over(dataset, range, window_len)
}

pub(crate) fn windows_over(
    dataset: &TelemetryDataset,
    range: Range<usize>,
    window_len: usize,
) -> Result<WindowBatch> {
    if window_len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    if range.len() < window_len {
        return Err(Error::Config(format!(
            "range {range:?} is shorter than the window length {window_len}"
        )));
    }
    let count = range.len() / window_len;
    let windows = (0..count)
        .map(|w| {
            let start = range.start + w * window_len;
            let rows = start..start + window_len;
            Window {
                start,
                initial: dataset.measurements.row(start).to_vec(),
                inputs: dataset.inputs.slice(s![rows.clone(), ..]).to_owned(),
                targets: dataset.measurements.slice(s![rows, ..]).to_owned(),
            }
        })
        .collect();
    Ok(WindowBatch {
        windows,
        window_len,
    })
}
