//! Scores and plot-ready exports: R², RMSE, per-PFT / per-layer breakdowns,
//! latitudinal error distributions and prediction maps.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};
use crate::model::Predictions;
use crate::ood::csv_err;
use crate::pipeline::{SampleRecord, Task};
use crate::sim::params::TROPICS_LAT;

/// Signed-error quantiles reported per band.
pub const QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];
pub const HIST_BINS: usize = 20;

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Coefficient of determination, 1 − SS_res/SS_tot about the truth mean.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.len() < 2 {
        return Err(Error::Range(format!("R² needs at least 2 samples, got {}", truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedR2);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.is_empty() {
        return Err(Error::Range("RMSE of zero samples".into()));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    mse(pred, truth).map(f64::sqrt)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Ground truth in the layout of [`Predictions`].
pub fn truth_of(recs: &[&SampleRecord]) -> Predictions {
    Predictions {
        values: Task::ALL
            .iter()
            .map(|&t| recs.iter().map(|r| r.targets.get(t).to_vec()).collect())
            .collect(),
    }
}

fn column(rows: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| r.get(dim).copied().ok_or_else(|| Error::Contract(format!("component {dim} out of range"))))
        .collect()
}

fn check_task(pred: &Predictions, truth: &Predictions, task: Task) -> Result<()> {
    if pred.values.len() != Task::ALL.len() || truth.values.len() != Task::ALL.len() {
        return Err(Error::Contract("predictions must cover every task".into()));
    }
    if pred.n_samples() != truth.n_samples() {
        return Err(Error::Dimension(format!(
            "{} predicted samples for {} truth samples",
            pred.n_samples(),
            truth.n_samples()
        )));
    }
    let width = |p: &Predictions| p.task(task).first().map_or(0, Vec::len);
    if width(pred) != width(truth) {
        return Err(Error::Dimension(format!("{} widths differ", task.name())));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimScore {
    pub index: usize,
    /// `None` when the truth is constant along this component.
    pub r2: Option<f64>,
    pub rmse: f64,
}

/// Scores computed independently per PFT index or soil layer.
pub fn per_dimension_scores(pred: &Predictions, truth: &Predictions, task: Task) -> Result<Vec<DimScore>> {
    if task.is_flux() {
        return Err(Error::Contract(format!("{} is a scalar task", task.name())));
    }
    check_task(pred, truth, task)?;
    let width = truth.task(task).first().map_or(0, Vec::len);
    (0..width)
        .map(|d| {
            let p = column(pred.task(task), d)?;
            let t = column(truth.task(task), d)?;
            let r2 = match r2(&p, &t) {
                Ok(v) => Some(v),
                Err(Error::UndefinedR2) => None,
                Err(e) => return Err(e),
            };
            Ok(DimScore {
                index: d,
                r2,
                rmse: rmse(&p, &t)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: Task,
    /// Mean of the per-component R² values that are defined.
    pub r2: f64,
    /// Over all samples and components.
    pub rmse: f64,
}

pub fn task_score(pred: &Predictions, truth: &Predictions, task: Task) -> Result<TaskScore> {
    check_task(pred, truth, task)?;
    let (r2v, rmse_v) = if task.is_flux() {
        let p = column(pred.task(task), 0)?;
        let t = column(truth.task(task), 0)?;
        (r2(&p, &t)?, rmse(&p, &t)?)
    } else {
        let dims = per_dimension_scores(pred, truth, task)?;
        let defined: Vec<f64> = dims.iter().filter_map(|d| d.r2).collect();
        if defined.is_empty() {
            return Err(Error::UndefinedR2);
        }
        let overall = dims.iter().map(|d| d.rmse * d.rmse).sum::<f64>() / dims.len() as f64;
        (defined.iter().sum::<f64>() / defined.len() as f64, overall.sqrt())
    };
    Ok(TaskScore {
        task,
        r2: r2v,
        rmse: rmse_v,
    })
}

pub fn task_scores(pred: &Predictions, truth: &Predictions) -> Result<Vec<TaskScore>> {
    Task::ALL.iter().map(|&t| task_score(pred, truth, t)).collect()
}

/// Mean R² over the six state tasks.
pub fn mean_state_r2(scores: &[TaskScore]) -> f64 {
    let v: Vec<f64> = scores.iter().filter(|s| Task::STATE.contains(&s.task)).map(|s| s.r2).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Tropics,
    Extratropics,
}

impl Band {
    pub const ALL: [Band; 2] = [Band::Tropics, Band::Extratropics];

    /// Tropics is |lat| < 23°; every cell falls in exactly one band.
    pub fn of(lat: f64) -> Band {
        if lat.abs() < TROPICS_LAT {
            Band::Tropics
        } else {
            Band::Extratropics
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Tropics => "tropics",
            Band::Extratropics => "extratropics",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandErrors {
    pub band: Band,
    pub task: Task,
    pub n_cells: usize,
    pub rmse: f64,
    pub mean: f64,
    /// Signed-error values at [`QUANTILES`].
    pub quantiles: Vec<f64>,
    pub hist_edges: Vec<f64>,
    pub hist_counts: Vec<usize>,
}

/// Linear-interpolated quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Histogram over `[min, max]` of `values` with `bins` equal bins; a
/// degenerate range collapses to one bin holding every value.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || hi <= lo {
        let v = if values.is_empty() { 0.0 } else { lo };
        return (vec![v, v], vec![values.len()]);
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    (edges, counts)
}

/// Signed errors (pred − truth, all components) of the cells in `band`.
pub fn latitudinal_errors(
    pred: &Predictions,
    truth: &Predictions,
    lats: &[f64],
    task: Task,
    band: Band,
) -> Result<BandErrors> {
    check_task(pred, truth, task)?;
    if lats.len() != truth.n_samples() {
        return Err(Error::Dimension(format!("{} latitudes for {} samples", lats.len(), truth.n_samples())));
    }
    let mut errs = Vec::new();
    let mut n_cells = 0;
    for ((p, t), &lat) in pred.task(task).iter().zip(truth.task(task)).zip(lats) {
        if Band::of(lat) == band {
            n_cells += 1;
            errs.extend(p.iter().zip(t).map(|(a, b)| a - b));
        }
    }
    if errs.is_empty() {
        return Err(Error::Range(format!("no cells in the {} band", band.name())));
    }
    let mut sorted = errs.clone();
    sorted.sort_by(f64::total_cmp);
    let (hist_edges, hist_counts) = histogram(&errs, HIST_BINS);
    Ok(BandErrors {
        band,
        task,
        n_cells,
        rmse: (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt(),
        mean: errs.iter().sum::<f64>() / errs.len() as f64,
        quantiles: QUANTILES.iter().map(|&q| quantile_sorted(&sorted, q)).collect(),
        hist_edges,
        hist_counts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub predicted: f64,
    pub truth: f64,
    pub difference: f64,
}

/// One row per sample for component `dim` of `task`, physical units.
pub fn export_maps(recs: &[&SampleRecord], pred: &Predictions, task: Task, dim: usize) -> Result<Vec<u8>> {
    let truth = truth_of(recs);
    check_task(pred, &truth, task)?;
    let width = truth.task(task).first().map_or(0, Vec::len);
    if dim >= width {
        return Err(Error::Range(format!("{} has {width} components, asked for {dim}", task.name())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for ((r, p), t) in recs.iter().zip(pred.task(task)).zip(truth.task(task)) {
        w.serialize(MapRow {
            id: r.id,
            lat: r.lat,
            lon: r.lon,
            predicted: p[dim],
            truth: t[dim],
            difference: p[dim] - t[dim],
        })
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

pub fn read_maps(bytes: &[u8]) -> Result<Vec<MapRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimRow {
    pub task: Task,
    pub index: usize,
    pub r2: Option<f64>,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_seeds: usize,
    pub n_samples: usize,
    pub tasks: Vec<TaskSummary>,
    /// From the first run.
    pub per_dimension: Vec<DimRow>,
    pub bands: Vec<BandErrors>,
    pub restart_capable: bool,
}

/// One evaluated run: physical predictions over `recs`.
pub struct EvalRun<'a> {
    pub recs: &'a [&'a SampleRecord],
    pub pred: &'a Predictions,
}

impl EvalReport {
    /// Aggregates runs that differ only in training seed.
    pub fn build(runs: &[EvalRun<'_>], restart_capable: bool) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Contract("report over zero runs".into()))?;
        let truth = truth_of(first.recs);
        let mut scores = Vec::with_capacity(runs.len());
        for run in runs {
            scores.push(task_scores(run.pred, &truth_of(run.recs))?);
        }
        let tasks = Task::ALL
            .iter()
            .enumerate()
            .map(|(i, &task)| {
                let (r2_mean, r2_std) = mean_std(&scores.iter().map(|s| s[i].r2).collect::<Vec<_>>());
                let (rmse_mean, rmse_std) = mean_std(&scores.iter().map(|s| s[i].rmse).collect::<Vec<_>>());
                TaskSummary {
                    task,
                    r2_mean,
                    r2_std,
                    rmse_mean,
                    rmse_std,
                }
            })
            .collect();
        let mut per_dimension = Vec::new();
        for &task in Task::ALL.iter().filter(|t| !t.is_flux()) {
            for d in per_dimension_scores(first.pred, &truth, task)? {
                per_dimension.push(DimRow {
                    task,
                    index: d.index,
                    r2: d.r2,
                    rmse: d.rmse,
                });
            }
        }
        let lats: Vec<f64> = first.recs.iter().map(|r| r.lat).collect();
        let mut bands = Vec::new();
        for band in Band::ALL {
            for &task in &Task::ALL {
                match latitudinal_errors(first.pred, &truth, &lats, task, band) {
                    Ok(b) => bands.push(b),
                    Err(Error::Range(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(Self {
            n_seeds: runs.len(),
            n_samples: truth.n_samples(),
            tasks,
            per_dimension,
            bands,
            restart_capable,
        })
    }

    pub fn tasks_csv(&self) -> Result<Vec<u8>> {
        to_csv(&self.tasks)
    }

    pub fn per_dimension_csv(&self) -> Result<Vec<u8>> {
        to_csv(&self.per_dimension)
    }

    /// band, task, n_cells, rmse, mean, then one column per quantile.
    pub fn latitudinal_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["band".to_string(), "task".into(), "n_cells".into(), "rmse".into(), "mean".into()];
        header.extend(QUANTILES.iter().map(|q| format!("q{:02}", (q * 100.0).round() as usize)));
        w.write_record(&header).map_err(csv_err)?;
        for b in &self.bands {
            let mut row = vec![
                b.band.name().to_string(),
                b.task.name().to_string(),
                b.n_cells.to_string(),
                b.rmse.to_string(),
                b.mean.to_string(),
            ];
            row.extend(b.quantiles.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Contract(e.to_string()))
    }

    /// band, task, bin_lo, bin_hi, count.
    pub fn histogram_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["band", "task", "bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
        for b in &self.bands {
            for (i, c) in b.hist_counts.iter().enumerate() {
                w.write_record([
                    b.band.name().to_string(),
                    b.task.name().to_string(),
                    b.hist_edges[i].to_string(),
                    b.hist_edges[i + 1].to_string(),
                    c.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.into_inner().map_err(|e| Error::Contract(e.to_string()))
    }

    /// Writes `report.json`, `tasks.csv`, `per_dimension.csv`,
    /// `latitudinal.csv` and `latitudinal_hist.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_atomic(&dir.join("tasks.csv"), &self.tasks_csv()?)?;
        write_atomic(&dir.join("per_dimension.csv"), &self.per_dimension_csv()?)?;
        write_atomic(&dir.join("latitudinal.csv"), &self.latitudinal_csv()?)?;
        write_atomic(&dir.join("latitudinal_hist.csv"), &self.histogram_csv()?)
    }
}

fn to_csv<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}
