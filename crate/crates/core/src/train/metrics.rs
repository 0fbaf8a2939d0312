//! Error metrics, windowed evaluation and Pearson correlation matrices.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Window;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_pair(op: &'static str, pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op,
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.is_empty() {
        return Err(Error::contract(format!("{op} of empty tensors")));
    }
    Ok(())
}

/// Mean squared difference over all entries.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_pair("mse", pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean absolute difference over all entries.
pub fn mae(pred: &Tensor, target: &Tensor) -> Result<f64> {
    check_pair("mae", pred, target)?;
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    /// MSE at each forecast step, averaged over windows and variates.
    pub per_horizon: Vec<f64>,
    pub window_count: usize,
    pub wall_seconds: f64,
}

/// Windows per prediction call during evaluation.
pub const EVAL_BATCH: usize = 64;

struct WindowErrors {
    squared: Vec<f64>,
    absolute: f64,
}

fn window_errors(pred: &Tensor, w: &Window) -> Result<WindowErrors> {
    let (s, n) = (w.y.rows(), w.y.cols());
    if pred.shape() != [n, s] {
        return Err(Error::Shape {
            op: "evaluate",
            lhs: pred.shape().to_vec(),
            rhs: vec![n, s],
        });
    }
    let mut squared = vec![0.0; s];
    let mut absolute = 0.0;
    for v in 0..n {
        for (h, sq) in squared.iter_mut().enumerate() {
            let d = pred.at(v, h) - w.y.at(h, v);
            *sq += d * d;
            absolute += d.abs();
        }
    }
    Ok(WindowErrors { squared, absolute })
}

/// Scores a predictor over `windows`. `predict` receives a chunk of
/// windows together with the index of its first window and must return one
/// `N×S` forecast per window. Chunks run in parallel; the reduction runs in
/// window order, so the report does not depend on scheduling.
pub fn evaluate_with<F>(windows: &[Window], predict: F) -> Result<EvalReport>
where
    F: Fn(&[Window], usize) -> Result<Vec<Tensor>> + Sync,
{
    let started = Instant::now();
    let first = windows
        .first()
        .ok_or_else(|| Error::contract("evaluation needs at least one window"))?;
    let (s, n) = (first.y.rows(), first.y.cols());
    let chunks: Vec<Vec<WindowErrors>> = windows
        .par_chunks(EVAL_BATCH)
        .enumerate()
        .map(|(c, chunk)| {
            let preds = predict(chunk, c * EVAL_BATCH)?;
            if preds.len() != chunk.len() {
                return Err(Error::contract(format!(
                    "predictor returned {} forecasts for {} windows",
                    preds.len(),
                    chunk.len()
                )));
            }
            preds.iter().zip(chunk).map(|(p, w)| window_errors(p, w)).collect()
        })
        .collect::<Result<_>>()?;
    let mut squared = vec![0.0; s];
    let mut absolute = 0.0;
    for e in chunks.iter().flatten() {
        for (acc, v) in squared.iter_mut().zip(&e.squared) {
            *acc += v;
        }
        absolute += e.absolute;
    }
    let count = windows.len();
    let total = (count * n * s) as f64;
    Ok(EvalReport {
        mse: squared.iter().sum::<f64>() / total,
        mae: absolute / total,
        per_horizon: squared.iter().map(|v| v / (count * n) as f64).collect(),
        window_count: count,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Pearson correlation between every pair of rows. Constant rows correlate
/// 0 with everything, themselves included, and are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    /// Square matrix over the input rows.
    pub matrix: Tensor,
    pub constant: Vec<bool>,
}

pub fn pearson_matrix(rows: &[&[f64]]) -> Result<Correlation> {
    let len = rows.first().map_or(0, |r| r.len());
    if len < 2 {
        return Err(Error::contract("correlation needs series of length >= 2"));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != len) {
        return Err(Error::contract(format!(
            "correlation over series of lengths {len} and {}",
            bad.len()
        )));
    }
    let mut constant = Vec::with_capacity(rows.len());
    let centered: Vec<(Vec<f64>, f64)> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / len as f64;
            let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let magnitude = r.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (len as f64).sqrt();
            constant.push(norm <= magnitude * 1e-12);
            (c, norm)
        })
        .collect();
    let k = rows.len();
    let matrix = Tensor::from_fn(&[k, k], |idx| {
        let (i, j) = (idx / k, idx % k);
        if constant[i] || constant[j] {
            return 0.0;
        }
        if i == j {
            return 1.0;
        }
        let (a, na) = &centered[i];
        let (b, nb) = &centered[j];
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    });
    Ok(Correlation { matrix, constant })
}

/// Correlation over the `N` columns of a `T×N` window followed by `tokens`,
/// each of which must have length `T`.
pub fn correlation_matrix(x: &Tensor, tokens: &[&[f64]]) -> Result<Correlation> {
    let columns: Vec<Vec<f64>> = (0..x.cols()).map(|c| x.column(c)).collect();
    let mut rows: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    if let Some(bad) = tokens.iter().find(|t| t.len() != x.rows()) {
        return Err(Error::contract(format!(
            "token of length {} cannot be correlated with a length-{} series",
            bad.len(),
            x.rows()
        )));
    }
    rows.extend_from_slice(tokens);
    pearson_matrix(&rows)
}
