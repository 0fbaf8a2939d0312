//! Dataset loading, chronological splits, sliding windows, per-window
//! standardization and synthetic data.
//!
//! CSV layout: UTF-8, comma separated, one header row. An optional leading
//! `date` column is kept verbatim as timestamps; every other column is a
//! variate parsed as a decimal float. Missing or malformed cells are errors.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to lookback standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MultivariateSeries {
    /// `T_total×N`, one row per timestep.
    pub values: Tensor,
    pub variate_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
}

impl MultivariateSeries {
    pub fn new(values: Tensor, variate_names: Vec<String>, timestamps: Option<Vec<String>>) -> Result<Self> {
        if values.ndim() != 2 || values.cols() == 0 {
            return Err(Error::Data(format!("series needs a T×N matrix with N >= 1, got {:?}", values.shape())));
        }
        if variate_names.len() != values.cols() {
            return Err(Error::Data("one name per variate is required".into()));
        }
        if timestamps.as_ref().is_some_and(|t| t.len() != values.rows()) {
            return Err(Error::Data("one timestamp per row is required".into()));
        }
        values.check_finite("series values")?;
        Ok(Self {
            values,
            variate_names,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_variates(&self) -> usize {
        self.values.cols()
    }

    /// Rows `[start, end)` as a `(end−start)×N` matrix.
    pub fn rows(&self, start: usize, end: usize) -> Tensor {
        let n = self.n_variates();
        Tensor::matrix(end - start, n, self.values.data()[start * n..end * n].to_vec())
            .expect("row range within the series")
    }

    /// Serializes in the loader's CSV format, floats in shortest round-trip
    /// form.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if self.timestamps.is_some() {
            out.push_str("date,");
        }
        out.push_str(&self.variate_names.join(","));
        out.push('\n');
        for r in 0..self.len() {
            if let Some(ts) = &self.timestamps {
                out.push_str(&ts[r]);
                out.push(',');
            }
            let row: Vec<String> = self.values.row(r).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Loads a CSV file. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: &Path) -> Result<MultivariateSeries> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<MultivariateSeries> {
    let load_err = |row: usize, column: usize, message: String| Error::Load {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| load_err(1, 0, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(load_err(1, 0, "empty file".into()));
    }
    let has_date = header[0].eq_ignore_ascii_case("date");
    let first_value = usize::from(has_date);
    let names: Vec<String> = header.iter().skip(first_value).map(str::to_string).collect();
    if names.is_empty() {
        return Err(load_err(1, 0, "no variate columns".into()));
    }

    let mut values = Vec::new();
    let mut stamps = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            load_err(line, 0, e.to_string())
        })?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(load_err(
                line,
                record.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        if has_date {
            stamps.push(record[0].to_string());
        }
        for (c, cell) in record.iter().enumerate().skip(first_value) {
            let v: f64 = cell
                .parse()
                .map_err(|_| load_err(line, c + 1, format!("cannot parse {cell:?} as a number")))?;
            if !v.is_finite() {
                return Err(load_err(line, c + 1, format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(load_err(2, 0, "no data rows".into()));
    }
    let n = names.len();
    MultivariateSeries::new(
        Tensor::matrix(rows, n, values)?,
        names,
        has_date.then_some(stamps),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// A lookback/target pair. `norm_stats` is set once the window has been
/// standardized.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `T×N` lookback.
    pub x: Tensor,
    /// `S×N` target.
    pub y: Tensor,
    pub norm_stats: Option<Vec<NormStats>>,
}

impl Window {
    pub fn new(x: Tensor, y: Tensor) -> Self {
        Self {
            x,
            y,
            norm_stats: None,
        }
    }

    /// Normalizes `x` and `y` with the lookback mean and (floored) standard
    /// deviation of each variate.
    pub fn standardize(&self) -> Window {
        let (t, n) = (self.x.rows(), self.x.cols());
        let stats: Vec<NormStats> = (0..n)
            .map(|c| {
                let col = self.x.column(c);
                let mean = col.iter().sum::<f64>() / t as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
                NormStats {
                    mean,
                    std: var.sqrt().max(STD_FLOOR),
                }
            })
            .collect();
        let apply = |m: &Tensor| {
            Tensor::from_fn(m.shape(), |i| {
                let s = stats[i % n];
                (m.data()[i] - s.mean) / s.std
            })
        };
        Window {
            x: apply(&self.x),
            y: apply(&self.y),
            norm_stats: Some(stats),
        }
    }

    /// Undoes [`Window::standardize`]; a raw window is returned unchanged.
    pub fn destandardize(&self) -> Window {
        let Some(stats) = &self.norm_stats else {
            return self.clone();
        };
        let n = stats.len();
        let apply = |m: &Tensor| Tensor::from_fn(m.shape(), |i| m.data()[i] * stats[i % n].std + stats[i % n].mean);
        Window::new(apply(&self.x), apply(&self.y))
    }
}

/// Start offsets of the windows in a segment of `n` rows.
pub fn sliding_windows(n: usize, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::contract("stride must be >= 1"));
    }
    if n < lookback + horizon {
        return Err(Error::contract(format!(
            "segment of {n} rows is shorter than lookback + horizon = {}",
            lookback + horizon
        )));
    }
    Ok((0..=n - lookback - horizon).step_by(stride).collect())
}

/// Window count for stride 1 (`n − T − S + 1`), or 0 when too short.
pub fn window_count(n: usize, lookback: usize, horizon: usize) -> usize {
    (n + 1).saturating_sub(lookback + horizon)
}

/// A contiguous row range `[start, end)` of a series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn window_count(&self, lookback: usize, horizon: usize) -> usize {
        window_count(self.len(), lookback, horizon)
    }

    /// Window `i` (stride 1), raw.
    pub fn window(&self, series: &MultivariateSeries, i: usize, lookback: usize, horizon: usize) -> Window {
        let s = self.start + i;
        Window::new(
            series.rows(s, s + lookback),
            series.rows(s + lookback, s + lookback + horizon),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    Ratio { train: f64, val: f64, test: f64 },
    /// 12/4/4 months of 30 days, the ETT benchmark convention.
    EttMonths,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Ratio {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Segment,
    pub val: Segment,
    pub test: Segment,
}

impl Splits {
    pub fn iter(&self) -> [(&'static str, Segment); 3] {
        [("train", self.train), ("val", self.val), ("test", self.test)]
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y/%m/%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Sampling steps per day, inferred from the first two timestamps.
pub fn steps_per_day(series: &MultivariateSeries) -> Result<usize> {
    let ts = series
        .timestamps
        .as_ref()
        .filter(|t| t.len() >= 2)
        .ok_or_else(|| Error::Data("month-based split needs a date column".into()))?;
    let (a, b) = (parse_timestamp(&ts[0]), parse_timestamp(&ts[1]));
    let (Some(a), Some(b)) = (a, b) else {
        return Err(Error::Data(format!("cannot parse timestamps {:?} / {:?}", ts[0], ts[1])));
    };
    let secs = (b - a).num_seconds();
    if secs <= 0 || 86_400 % secs != 0 {
        return Err(Error::Data(format!("sampling interval of {secs}s does not divide a day")));
    }
    Ok((86_400 / secs) as usize)
}

/// Chronological split. Validation and test segments are extended backwards
/// by `lookback` rows so their first target row directly follows the
/// previous split.
pub fn split(series: &MultivariateSeries, spec: &SplitSpec, lookback: usize) -> Result<Splits> {
    let n = series.len();
    let (train_end, val_end, test_end) = match *spec {
        SplitSpec::Ratio { train, val, test } => {
            if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || ((train + val + test) - 1.0).abs() > 1e-9 {
                return Err(Error::config(format!(
                    "split ratios must be in [0,1] and sum to 1, got {train}/{val}/{test}"
                )));
            }
            let n_train = (n as f64 * train) as usize;
            let n_test = (n as f64 * test) as usize;
            let n_val = n - n_train - n_test;
            (n_train, n_train + n_val, n)
        }
        SplitSpec::EttMonths => {
            let month = 30 * steps_per_day(series)?;
            let ends = (12 * month, 16 * month, 20 * month);
            if ends.2 > n {
                return Err(Error::Data(format!(
                    "month-based split needs {} rows, series has {n}",
                    ends.2
                )));
            }
            ends
        }
    };
    let splits = Splits {
        train: Segment { start: 0, end: train_end },
        val: Segment {
            start: train_end.saturating_sub(lookback),
            end: val_end,
        },
        test: Segment {
            start: val_end.saturating_sub(lookback),
            end: test_end,
        },
    };
    let own = [
        ("train", train_end),
        ("val", val_end.saturating_sub(train_end)),
        ("test", test_end.saturating_sub(val_end)),
    ];
    for (name, rows) in own {
        if rows == 0 || train_end <= lookback {
            return Err(Error::Data(format!(
                "{name} split has {rows} rows; too short for lookback {lookback}"
            )));
        }
    }
    Ok(splits)
}

/// One sinusoidal component of a synthetic variate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Period in timesteps.
    pub period: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_variates: usize,
    pub length: usize,
    /// Tones per variate; empty means [`SynthSpec::default_tones`].
    pub tones: Vec<Vec<Tone>>,
    pub noise_sigma: f64,
    /// Linear trend added to every variate, per timestep.
    pub trend: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_variates: 4,
            length: 4000,
            tones: vec![],
            noise_sigma: 0.1,
            trend: 0.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    /// Two tones per variate with variate-specific periods `24 + 6n` and
    /// `7 + 2n`, amplitudes 1 and 0.5.
    pub fn default_tones(n_variates: usize) -> Vec<Vec<Tone>> {
        (0..n_variates)
            .map(|n| {
                vec![
                    Tone {
                        period: 24.0 + 6.0 * n as f64,
                        amplitude: 1.0,
                    },
                    Tone {
                        period: 7.0 + 2.0 * n as f64,
                        amplitude: 0.5,
                    },
                ]
            })
            .collect()
    }
}

/// Seeded sum-of-sinusoids series with Gaussian noise and an optional trend.
/// Phases come from one stream and noise from another, so `noise_sigma = 0`
/// yields exactly the clean signal of the same seed.
pub fn synth_generate(spec: &SynthSpec) -> Result<MultivariateSeries> {
    if spec.n_variates == 0 || spec.length == 0 {
        return Err(Error::config("synthetic series needs n_variates >= 1 and length >= 1"));
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(Error::config("noise_sigma must be >= 0"));
    }
    let tones = if spec.tones.is_empty() {
        SynthSpec::default_tones(spec.n_variates)
    } else {
        spec.tones.clone()
    };
    if tones.len() != spec.n_variates || tones.iter().flatten().any(|t| !(t.period > 0.0)) {
        return Err(Error::config("one tone list with positive periods per variate is required"));
    }
    let mut phase_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: Vec<Vec<f64>> = tones
        .iter()
        .map(|ts| ts.iter().map(|_| phase_rng.random_range(0.0..std::f64::consts::TAU)).collect())
        .collect();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EE_D0F4_015E);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::config(e.to_string()))?;

    let n = spec.n_variates;
    let mut values = Vec::with_capacity(spec.length * n);
    for t in 0..spec.length {
        for v in 0..n {
            let clean: f64 = tones[v]
                .iter()
                .zip(&phases[v])
                .map(|(tone, ph)| tone.amplitude * (std::f64::consts::TAU * t as f64 / tone.period + ph).sin())
                .sum::<f64>()
                + spec.trend * t as f64;
            let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
            values.push(clean + eps);
        }
    }
    let start = NaiveDate::from_ymd_opt(2016, 7, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start date");
    let stamps = (0..spec.length)
        .map(|t| (start + Duration::hours(t as i64)).format("%Y-%m-%d %H:%M:%S").to_string())
        .collect();
    MultivariateSeries::new(
        Tensor::matrix(spec.length, n, values)?,
        (0..n).map(|v| format!("v{v}")).collect(),
        Some(stamps),
    )
}
