//! The results table: one row per (dataset, backbone, augmentation,
//! prediction length, seed) cell plus rows averaged over prediction lengths.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str = "dataset,backbone,aug,S,P,K,seed,mse,mae,train_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub backbone: String,
    pub aug: String,
    /// `None` marks a row averaged over prediction lengths.
    pub horizon: Option<usize>,
    pub patch_len: Option<usize>,
    pub top_k: Option<usize>,
    /// `None` marks a row averaged over seeds.
    pub seed: Option<u64>,
    pub mse: f64,
    pub mae: f64,
    pub train_seconds: f64,
}

fn or_dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

impl ResultRow {
    fn fields(&self) -> Vec<String> {
        vec![
            self.dataset.clone(),
            self.backbone.clone(),
            self.aug.clone(),
            self.horizon.map_or_else(|| "avg".to_string(), |s| s.to_string()),
            or_dash(self.patch_len),
            or_dash(self.top_k),
            self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            format!("{:.6}", self.mse),
            format!("{:.6}", self.mae),
            format!("{:.3}", self.train_seconds),
        ]
    }

    fn group_key(&self) -> (&str, &str, &str, Option<usize>, Option<usize>) {
        (&self.dataset, &self.backbone, &self.aug, self.patch_len, self.top_k)
    }
}

fn mean_row(rows: &[&ResultRow], horizon: Option<usize>, seed: Option<u64>) -> ResultRow {
    let k = rows.len() as f64;
    ResultRow {
        horizon,
        seed,
        mse: rows.iter().map(|r| r.mse).sum::<f64>() / k,
        mae: rows.iter().map(|r| r.mae).sum::<f64>() / k,
        train_seconds: rows.iter().map(|r| r.train_seconds).sum::<f64>() / k,
        ..rows[0].clone()
    }
}

/// Appends, for every configuration and seed, the average over prediction
/// lengths (`S = avg`), then the average over all cells of a configuration
/// (`S = avg`, `seed = mean`). Input rows keep their order.
pub fn average_rows(cells: &[ResultRow]) -> Vec<ResultRow> {
    let mut out = cells.to_vec();
    let mut keys: Vec<_> = vec![];
    for r in cells {
        if !keys.contains(&r.group_key()) {
            keys.push(r.group_key());
        }
    }
    for key in keys {
        let group: Vec<&ResultRow> = cells.iter().filter(|r| r.group_key() == key).collect();
        let mut seeds: Vec<Option<u64>> = vec![];
        for r in &group {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        for seed in &seeds {
            let rows: Vec<&ResultRow> = group.iter().copied().filter(|r| r.seed == *seed).collect();
            out.push(mean_row(&rows, None, *seed));
        }
        if seeds.len() > 1 {
            out.push(mean_row(&group, None, None));
        }
    }
    out
}

/// Renders rows under the fixed header.
pub fn format_results(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(RESULTS_HEADER.split(','))
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r.fields()).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    fs::write(path, format_results(rows)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: usize, seed: u64, mse: f64) -> ResultRow {
        ResultRow {
            dataset: "ETTh1".into(),
            backbone: "attention".into(),
            aug: "cvp".into(),
            horizon: Some(s),
            patch_len: Some(16),
            top_k: None,
            seed: Some(seed),
            mse,
            mae: mse / 2.0,
            train_seconds: 0.0,
        }
    }

    #[test]
    fn averaging_over_prediction_lengths() {
        let rows = average_rows(&[row(96, 1, 0.2), row(192, 1, 0.4)]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].horizon, None);
        assert!((rows[2].mse - 0.3).abs() < 1e-15);
        let text = format_results(&rows).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines[1], "ETTh1,attention,cvp,96,16,-,1,0.200000,0.100000,0.000");
        assert_eq!(lines[3], "ETTh1,attention,cvp,avg,16,-,1,0.300000,0.150000,0.000");
    }

    #[test]
    fn averaging_over_seeds() {
        let rows = average_rows(&[row(96, 1, 0.2), row(96, 2, 0.4), row(192, 1, 0.6), row(192, 2, 0.8)]);
        assert_eq!(rows.len(), 7);
        assert_eq!((rows[4].seed, rows[5].seed, rows[6].seed), (Some(1), Some(2), None));
        assert!((rows[4].mse - 0.4).abs() < 1e-15);
        assert!((rows[6].mse - 0.5).abs() < 1e-15);
    }
}
