use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Pipeline, RunResult};
use crate::error::{Error, Result};
use crate::signal::TimeSeries;

/// A window whose derived facts contain the alert predicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowHit {
    pub start: usize,
    pub result: RunResult,
}

/// Window starts `0, stride, 2·stride, …` that fit entirely inside `n` samples.
pub fn window_starts(n: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || window > n {
        return Vec::new();
    }
    (0..=(n - window) / stride).map(|i| i * stride).collect()
}

/// Runs the pipeline on every window and returns those that derive
/// `alert_head`, in order of start index. Windows are processed in parallel;
/// the first failing window (by start) aborts the scan.
pub fn detect_anomalies(
    x: &TimeSeries,
    pipeline: &Pipeline,
    window: usize,
    stride: usize,
    alert_head: &str,
) -> Result<Vec<WindowHit>> {
    if window < 2 || stride == 0 || window > x.len() {
        return Err(Error::Argument(format!(
            "window must satisfy 2 ≤ window ≤ {} and stride ≥ 1 (got window {window}, stride {stride})",
            x.len()
        )));
    }
    let results: Vec<Result<Option<WindowHit>>> = window_starts(x.len(), window, stride)
        .into_par_iter()
        .map(|start| {
            let result = pipeline.run(&x.slice(start, window)?)?;
            Ok(result
                .derived
                .contains_name(alert_head)
                .then_some(WindowHit { start, result }))
        })
        .collect();
    results.into_iter().filter_map(Result::transpose).collect()
}
