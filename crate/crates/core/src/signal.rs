//! Uniformly sampled signals: validation, preconditioning and autocorrelation.
//!
//! Signals load from CSV (`t,value` header, uniform spacing) or from a JSON
//! record `{dt, samples, label}`.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of CSV time stamps.
pub const SPACING_RTOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    dt: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

#[derive(Deserialize)]
struct RawSeries {
    dt: f64,
    samples: Vec<f64>,
    #[serde(default)]
    label: Option<String>,
}

impl<'de> Deserialize<'de> for TimeSeries {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSeries::deserialize(d)?;
        TimeSeries::with_label(raw.samples, raw.dt, raw.label).map_err(serde::de::Error::custom)
    }
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, dt: f64) -> Result<Self> {
        Self::with_label(samples, dt, None)
    }

    pub fn with_label(samples: Vec<f64>, dt: f64, label: Option<String>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a signal needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("sampling step must be positive, got {dt}")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("sample {i} is not finite ({})", samples[i])));
        }
        Ok(TimeSeries { samples, dt, label })
    }

    /// Samples `f(n·dt)` for `n = 0..n`.
    pub fn from_fn(n: usize, dt: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new((0..n).map(|i| f(i as f64 * dt)).collect(), dt)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Contiguous sub-series `[start, start + len)`; keeps the step and label.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.len())
            .ok_or_else(|| Error::Argument(format!("slice {start}+{len} exceeds length {}", self.len())))?;
        Self::with_label(self.samples[start..end].to_vec(), self.dt, self.label.clone())
    }

    fn map_samples(&self, samples: Vec<f64>) -> Self {
        TimeSeries {
            samples,
            dt: self.dt,
            label: self.label.clone(),
        }
    }

    pub fn from_json_reader(r: impl Read) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    /// Reads a `t,value` CSV. Time stamps must be uniformly spaced.
    pub fn from_csv_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
            return Err(Error::InvalidInput(format!(
                "expected CSV header `t,value`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut t = Vec::new();
        let mut samples = Vec::new();
        for (row, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
            let (ti, vi) = rec.map_err(|e| Error::InvalidInput(format!("row {}: {e}", row + 2)))?;
            t.push(ti);
            samples.push(vi);
        }
        if t.len() < 2 {
            return Err(Error::InvalidInput("CSV signal needs at least 2 rows".into()));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        for (i, w) in t.windows(2).enumerate() {
            let step = w[1] - w[0];
            if matches!((step - dt).abs().partial_cmp(&(SPACING_RTOL * dt.abs())), None | Some(Ordering::Greater)) {
                return Err(Error::InvalidInput(format!(
                    "non-uniform time spacing at row {}: step {step} vs mean step {dt}",
                    i + 3
                )));
            }
        }
        Self::new(samples, dt)
    }

    /// Loads by extension: `.json` as a record, anything else as CSV.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut ts = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_reader(file)?,
            _ => Self::from_csv_reader(file)?,
        };
        if ts.label.is_none() {
            ts.label = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
        }
        Ok(ts)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    Hann,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub window: Window,
    /// Subtract the sample mean.
    pub detrend: bool,
    pub zero_pad_to: Option<usize>,
}

/// Hann weights `0.5(1 - cos(2πn/(N-1)))`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// Detrend, then window, then zero-pad.
pub fn preprocess(x: &TimeSeries, cfg: &PreprocessConfig) -> Result<TimeSeries> {
    let n = x.len();
    if let Some(pad) = cfg.zero_pad_to {
        if pad < n {
            return Err(Error::Argument(format!(
                "zero_pad_to ({pad}) is shorter than the signal ({n})"
            )));
        }
    }
    let mut out = x.samples.clone();
    if cfg.detrend {
        let mean = out.iter().sum::<f64>() / n as f64;
        out.iter_mut().for_each(|v| *v -= mean);
    }
    if cfg.window == Window::Hann {
        for (v, w) in out.iter_mut().zip(hann(n)) {
            *v *= w;
        }
    }
    if let Some(pad) = cfg.zero_pad_to {
        out.resize(pad, 0.0);
    }
    Ok(x.map_samples(out))
}

/// Unbiased autocorrelation `C(l) = 1/(N-l) Σ x[n]x[n+l]` for `l = 0..=max_lag`.
///
/// No mean is removed here.
pub fn autocorrelation(x: &TimeSeries, max_lag: usize) -> Result<TimeSeries> {
    let n = x.len();
    if max_lag == 0 || max_lag >= n {
        return Err(Error::Argument(format!(
            "max_lag must lie in 1..{n}, got {max_lag}"
        )));
    }
    let s = &x.samples;
    let c = (0..=max_lag)
        .map(|lag| {
            let acc: f64 = s[..n - lag].iter().zip(&s[lag..]).map(|(a, b)| a * b).sum();
            acc / (n - lag) as f64
        })
        .collect();
    Ok(x.map_samples(c))
}
