//! Command runners: train, eval, augmentation preview, sweeps and synthetic
//! data. Every output except the run log is a pure function of the config.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use super::results::{average_rows, write_results, ResultRow};
use super::{ExperimentConfig, SweepAxis};
use crate::augment::{self, AugmentationConfig, Strategy};
use crate::data::{self, MultivariateSeries, SynthSpec, Window};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::ModelConfig;
use crate::spectral;
use crate::train::{self, correlation_matrix, pearson_matrix, segment_windows, EvalReport};

/// Timestamped progress log. Wall-clock data lives only here.
pub struct RunLog {
    file: Option<File>,
    started: Instant,
    echo: bool,
}

impl RunLog {
    /// Appends to `path`, creating it if needed. With `echo`, lines are also
    /// written to stderr.
    pub fn open(path: &Path, echo: bool) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file: Some(file),
            started: Instant::now(),
            echo,
        })
    }

    /// A log that only echoes, or drops everything.
    pub fn stderr(echo: bool) -> Self {
        Self {
            file: None,
            started: Instant::now(),
            echo,
        }
    }

    pub fn line(&mut self, msg: impl AsRef<str>) {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let stamp = DateTime::<Utc>::from_timestamp(now.as_secs() as i64, now.subsec_nanos())
            .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
            .unwrap_or_default();
        let text = format!(
            "{stamp} +{:.3}s {}",
            self.started.elapsed().as_secs_f64(),
            msg.as_ref()
        );
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{text}");
        }
        if self.echo {
            eprintln!("{text}");
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_string<I, R>(header: &[String], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(vec![]);
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn numbers(values: &[f64]) -> Vec<String> {
    values.iter().map(f64::to_string).collect()
}

fn aug_columns(aug: &AugmentationConfig) -> (Option<usize>, Option<usize>) {
    let p = matches!(aug.strategy, Strategy::Cvp | Strategy::Compound).then_some(aug.patch_len);
    let k = matches!(aug.strategy, Strategy::Ff | Strategy::Compound).then_some(aug.top_k);
    (p, k)
}

fn cell_name(horizon: usize, seed: u64) -> String {
    format!("S{horizon}_seed{seed}")
}

fn result_row(cfg: &ExperimentConfig, model: &ModelConfig, seed: u64, report: &EvalReport, seconds: f64) -> ResultRow {
    let (patch_len, top_k) = aug_columns(&model.augmentation);
    ResultRow {
        dataset: cfg.dataset.name.clone(),
        backbone: model.backbone.to_string(),
        aug: model.augmentation.strategy.to_string(),
        horizon: Some(model.horizon),
        patch_len,
        top_k,
        seed: Some(seed),
        mse: report.mse,
        mae: report.mae,
        train_seconds: seconds,
    }
}

struct SplitWindows {
    train: Vec<Window>,
    val: Vec<Window>,
    test: Vec<Window>,
}

fn split_windows(cfg: &ExperimentConfig, series: &MultivariateSeries, horizon: usize) -> Result<SplitWindows> {
    let t = cfg.model.lookback;
    let splits = data::split(series, &cfg.dataset.split, t)?;
    let w = SplitWindows {
        train: segment_windows(series, splits.train, t, horizon),
        val: segment_windows(series, splits.val, t, horizon),
        test: segment_windows(series, splits.test, t, horizon),
    };
    for (name, set) in [("train", &w.train), ("val", &w.val), ("test", &w.test)] {
        if set.is_empty() {
            return Err(Error::Data(format!(
                "{name} split yields no windows for lookback {t} and prediction length {horizon}"
            )));
        }
    }
    Ok(w)
}

/// Files written by [`run_train`].
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub rows: Vec<ResultRow>,
    pub results: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub histories: Vec<PathBuf>,
}

/// Trains one model per (prediction length, seed) cell, writing a
/// checkpoint and an epoch history per cell and `results.csv` with test
/// metrics.
pub fn run_train(cfg: &ExperimentConfig, log: &mut RunLog) -> Result<TrainRun> {
    let out = &cfg.output_dir;
    create_dir(out)?;
    let series = cfg.load_dataset()?;
    log.line(format!(
        "dataset {}: {} rows x {} variates",
        cfg.dataset.name,
        series.len(),
        series.n_variates()
    ));
    let mut cells = vec![];
    let mut checkpoints = vec![];
    let mut histories = vec![];
    for &horizon in &cfg.pred_lens {
        let windows = split_windows(cfg, &series, horizon)?;
        let model = cfg.model_config(horizon);
        for &seed in &cfg.seeds {
            let name = cell_name(horizon, seed);
            log.line(format!(
                "train {name}: {} train / {} val / {} test windows",
                windows.train.len(),
                windows.val.len(),
                windows.test.len()
            ));
            let outcome = train::train_model_with(&windows.train, &windows.val, &model, &cfg.train_config(seed), &mut |r| {
                log.line(format!(
                    "{name} epoch {}: train_mse {:.6} val_mse {:.6} ({:.3}s)",
                    r.epoch, r.train_mse, r.val_mse, r.seconds
                ))
            })?;
            let report = train::evaluate(&outcome.params, &windows.test, &model, seed)?;
            let seconds: f64 = outcome.history.iter().map(|r| r.seconds).sum();
            log.line(format!(
                "{name}: best epoch {} test mse {:.6} mae {:.6} ({seconds:.3}s)",
                outcome.best_epoch, report.mse, report.mae
            ));

            let ck_path = out.join(format!("checkpoint_{name}.json"));
            Checkpoint::new(model.clone(), series.n_variates(), seed, outcome.params).save(&ck_path)?;
            checkpoints.push(ck_path);

            let hist_path = out.join(format!("history_{name}.csv"));
            let header: Vec<String> = ["epoch", "train_mse", "val_mse", "seconds"].map(String::from).to_vec();
            let rows = outcome.history.iter().map(|r| {
                let secs = if cfg.record_wall_time { r.seconds } else { 0.0 };
                vec![
                    r.epoch.to_string(),
                    r.train_mse.to_string(),
                    r.val_mse.to_string(),
                    format!("{secs:.3}"),
                ]
            });
            write_text(&hist_path, &csv_string(&header, rows)?)?;
            histories.push(hist_path);

            let recorded = if cfg.record_wall_time { seconds } else { 0.0 };
            cells.push(result_row(cfg, &model, seed, &report, recorded));
        }
    }
    let rows = average_rows(&cells);
    let results = out.join("results.csv");
    write_results(&results, &rows)?;
    log.line(format!("wrote {}", results.display()));
    Ok(TrainRun {
        rows,
        results,
        checkpoints,
        histories,
    })
}

fn describe(c: &ModelConfig, n: usize) -> String {
    format!(
        "T={} S={} N={n} D={} d_ff={} L={} heads={} backbone={} aug={}",
        c.lookback,
        c.horizon,
        c.d_model,
        c.d_ff,
        c.layers,
        c.heads,
        c.backbone,
        c.augmentation.strategy
    )
}

/// Evaluates saved checkpoints on the test split and writes
/// `eval_results.csv`. Each checkpoint must match the experiment's model,
/// augmentation and dataset width.
pub fn run_eval(cfg: &ExperimentConfig, checkpoints: &[PathBuf], log: &mut RunLog) -> Result<Vec<ResultRow>> {
    if checkpoints.is_empty() {
        return Err(Error::config("eval needs at least one checkpoint"));
    }
    create_dir(&cfg.output_dir)?;
    let series = cfg.load_dataset()?;
    let n = series.n_variates();
    let mut cells = vec![];
    for path in checkpoints {
        let ck = Checkpoint::load(path)?;
        let expected = cfg.model_config(ck.config.horizon);
        if ck.config != expected || ck.n_variates != n || !cfg.pred_lens.contains(&ck.config.horizon) {
            return Err(Error::config(format!(
                "checkpoint {} does not match the config: checkpoint {} vs config {} with S in {:?}",
                path.display(),
                describe(&ck.config, ck.n_variates),
                describe(&expected, n),
                cfg.pred_lens
            )));
        }
        let windows = split_windows(cfg, &series, ck.config.horizon)?;
        let report = train::evaluate(&ck.params, &windows.test, &ck.config, ck.seed)?;
        log.line(format!(
            "eval {}: mse {:.6} mae {:.6} over {} windows ({:.3}s)",
            path.display(),
            report.mse,
            report.mae,
            report.window_count,
            report.wall_seconds
        ));
        cells.push(result_row(cfg, &ck.config, ck.seed, &report, 0.0));
    }
    let rows = average_rows(&cells);
    write_results(&cfg.output_dir.join("eval_results.csv"), &rows)?;
    Ok(rows)
}

/// Files written by [`run_augment_preview`].
#[derive(Clone, Debug, Default)]
pub struct PreviewFiles {
    pub original: PathBuf,
    pub tokens: Vec<PathBuf>,
    pub augmented: Vec<PathBuf>,
    pub correlation: Vec<PathBuf>,
}

/// Writes the raw lookback window starting at row `index`, its augmented
/// tokens (one CSV per token group, one token per row), series-shaped
/// groups re-laid out like the original, and a correlation matrix per
/// group.
pub fn run_augment_preview(cfg: &ExperimentConfig, index: usize, out: &Path) -> Result<PreviewFiles> {
    let series = cfg.load_dataset()?;
    let t = cfg.model.lookback;
    if index + t > series.len() {
        return Err(Error::config(format!(
            "window index {index} out of range: {} rows with lookback {t} allow 0..={}",
            series.len(),
            series.len().saturating_sub(t)
        )));
    }
    create_dir(out)?;
    let x = series.rows(index, index + t);
    let names = &series.variate_names;
    let tokens = augment::augment(&x, &cfg.augmentation)?;
    let mut files = PreviewFiles {
        original: out.join("original.csv"),
        ..Default::default()
    };
    write_text(&files.original, &csv_string(names, (0..t).map(|r| numbers(x.row(r))))?)?;

    for group in &tokens.groups {
        let tag = group.tag.as_str();
        let j = group.token_length();
        let header: Vec<String> = (0..j).map(|c| format!("c{c}")).collect();
        let path = out.join(format!("tokens_{tag}.csv"));
        write_text(&path, &csv_string(&header, (0..group.len()).map(|m| numbers(group.token(m))))?)?;
        files.tokens.push(path);

        let rows: Vec<&[f64]> = (0..group.len()).map(|m| group.token(m)).collect();
        let (labels, corr) = if j == t {
            if group.len() == x.cols() {
                let as_series = group.tokens.transpose()?;
                let path = out.join(format!("augmented_{tag}.csv"));
                write_text(&path, &csv_string(names, (0..t).map(|r| numbers(as_series.row(r))))?)?;
                files.augmented.push(path);
            }
            let mut labels = names.clone();
            labels.extend((0..group.len()).map(|m| match names.get(m) {
                Some(name) if group.len() == names.len() => format!("{tag}_{name}"),
                _ => format!("{tag}_{m}"),
            }));
            (labels, correlation_matrix(&x, &rows)?)
        } else {
            let labels = (0..group.len()).map(|m| format!("{tag}_{m}")).collect();
            (labels, pearson_matrix(&rows)?)
        };
        let mut header = vec![String::new()];
        header.extend(labels.iter().cloned());
        let k = labels.len();
        let body = (0..k).map(|i| {
            let mut row = vec![labels[i].clone()];
            row.extend(numbers(corr.matrix.row(i)));
            row
        });
        let path = out.join(format!("correlation_{tag}.csv"));
        write_text(&path, &csv_string(&header, body)?)?;
        files.correlation.push(path);
    }
    Ok(files)
}

/// One cell of a hyperparameter sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// `P`, `K`, or `K_max` for the unfiltered reference.
    pub axis: String,
    pub value: usize,
    /// Augmented token count per window.
    pub tokens: usize,
    pub horizon: usize,
    pub seed: u64,
    pub report: std::result::Result<EvalReport, String>,
}

pub const SWEEP_HEADER: &str = "axis,value,M,S,seed,mse,mae,status";

/// Trains and evaluates every sweep cell on `threads` worker threads and
/// writes `sweep.csv` in long format. The `K` axis also gets a reference
/// cell at the full one-sided bin count. Failed cells are recorded with
/// their error and do not stop the sweep.
pub fn run_bench(cfg: &ExperimentConfig, threads: usize, log: &mut RunLog) -> Result<Vec<SweepRow>> {
    if cfg.sweep.is_empty() {
        return Err(Error::config("sweep: bench needs at least one sweep axis"));
    }
    create_dir(&cfg.output_dir)?;
    let series = cfg.load_dataset()?;
    let t = cfg.model.lookback;
    let n = series.n_variates();
    let mut cells: Vec<(String, SweepAxis, usize, usize, u64)> = vec![];
    for sweep in &cfg.sweep {
        let mut values: Vec<(String, usize)> = sweep.values.iter().map(|&v| (sweep.axis.to_string(), v)).collect();
        if sweep.axis == SweepAxis::K {
            values.push(("K_max".to_string(), spectral::bin_count(t)));
        }
        for (label, value) in values {
            for &horizon in &cfg.pred_lens {
                for &seed in &cfg.seeds {
                    cells.push((label.clone(), sweep.axis, value, horizon, seed));
                }
            }
        }
    }
    let mut windows = vec![];
    for &horizon in &cfg.pred_lens {
        windows.push((horizon, split_windows(cfg, &series, horizon)?));
    }
    log.line(format!("sweep: {} cells on {threads} threads", cells.len()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|(label, axis, value, horizon, seed)| {
                let model = cfg.sweep_model_config(*axis, *value, *horizon);
                let w = &windows.iter().find(|(h, _)| h == horizon).expect("windows per horizon").1;
                let report = model.validate().and_then(|_| {
                    let outcome = train::train_model(&w.train, &w.val, &model, &cfg.train_config(*seed))?;
                    train::evaluate(&outcome.params, &w.test, &model, *seed)
                });
                SweepRow {
                    axis: label.clone(),
                    value: *value,
                    tokens: match axis {
                        SweepAxis::P => t / value.max(&1),
                        SweepAxis::K => n,
                    },
                    horizon: *horizon,
                    seed: *seed,
                    report: report.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    for r in &rows {
        match &r.report {
            Ok(rep) => log.line(format!(
                "cell {}={} S={} seed={}: mse {:.6} mae {:.6}",
                r.axis, r.value, r.horizon, r.seed, rep.mse, rep.mae
            )),
            Err(e) => log.line(format!("cell {}={} S={} seed={} failed: {e}", r.axis, r.value, r.horizon, r.seed)),
        }
    }
    let header: Vec<String> = SWEEP_HEADER.split(',').map(String::from).collect();
    let body = rows.iter().map(|r| {
        let (mse, mae, status) = match &r.report {
            Ok(rep) => (format!("{:.6}", rep.mse), format!("{:.6}", rep.mae), "ok".to_string()),
            Err(e) => (String::new(), String::new(), format!("failed: {e}")),
        };
        vec![
            r.axis.clone(),
            r.value.to_string(),
            r.tokens.to_string(),
            r.horizon.to_string(),
            r.seed.to_string(),
            mse,
            mae,
            status,
        ]
    });
    write_text(&cfg.output_dir.join("sweep.csv"), &csv_string(&header, body)?)?;
    Ok(rows)
}

/// Generates a synthetic dataset and writes it as CSV.
pub fn run_synth(spec: &SynthSpec, path: &Path) -> Result<MultivariateSeries> {
    let series = data::synth_generate(spec)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    series.write_csv(path)?;
    Ok(series)
}
