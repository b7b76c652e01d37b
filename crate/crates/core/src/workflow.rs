//! End-to-end steps shared by the CLI and the acceptance harness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::Predictions;
use crate::ood::OodCheck;
use crate::pipeline::{Dataset, Provenance, SampleRecord, Task};
use crate::restart::{RestartCell, RestartFile};
use crate::sim::dynamics::median_rel_distance;
use crate::sim::{analytic_equilibrium, export_samples, restart_run, years_to_band, PoolKind, World};
use crate::train::SurrogateModel;

/// Relative band around equilibrium that counts as spun up.
pub const SPINUP_BAND: f64 = 0.005;
/// Cap on the cold-start search.
pub const MAX_SPINUP_YEARS: usize = 6000;
pub const RESTART_YEARS: usize = 100;

/// Exports, cleans, splits and normalizes the samples of `world`.
pub fn build_dataset(world: &World, seed: u64, window_years: usize, batch_size: usize) -> Result<Dataset> {
    let recs = export_samples(world, window_years)?;
    let provenance = Provenance {
        world_seed: world.seed,
        n_lat: world.grid.n_lat,
        n_lon: world.grid.n_lon,
        resolution_deg: world.grid.resolution_deg,
        window_years,
    };
    Dataset::build(recs, seed, batch_size, provenance)
}

/// Input window of a model, in years.
pub fn window_years(model: &SurrogateModel) -> usize {
    model.dims.n_months / 12
}

/// Restart contents for every sample from physical predictions.
pub fn restart_from_predictions(recs: &[&SampleRecord], pred: &Predictions, n_pft: usize) -> Result<RestartFile> {
    if pred.n_samples() != recs.len() {
        return Err(Error::Dimension(format!("{} predictions for {} cells", pred.n_samples(), recs.len())));
    }
    let down = |task: Task, i: usize| -> Vec<f32> { pred.task(task)[i].iter().map(|&v| v as f32).collect() };
    let cells = recs
        .iter()
        .enumerate()
        .map(|(i, r)| RestartCell {
            id: r.id,
            deadcrootc: down(Task::Deadcrootc, i),
            deadstemc: down(Task::Deadstemc, i),
            tlai: down(Task::Tlai, i),
            cwdc: down(Task::Cwdc, i),
            soil3c: down(Task::Soil3c, i),
            soil4c: down(Task::Soil4c, i),
        })
        .collect();
    Ok(RestartFile { n_pft, cells })
}

/// Predicted equilibria of every land cell of `world`, plus OOD checks when
/// the model carries statistics.
pub struct Prediction {
    pub records: Vec<SampleRecord>,
    pub predictions: Predictions,
    pub restart: RestartFile,
    pub ood: Vec<OodCheck>,
}

pub fn predict_world(model: &SurrogateModel, world: &World) -> Result<Prediction> {
    let window = window_years(model);
    if world.years < window {
        return Err(Error::Config(format!(
            "world has {} forcing years, the model needs a {window}-year window",
            world.years
        )));
    }
    let records = export_samples(world, window)?;
    let refs: Vec<&SampleRecord> = records.iter().collect();
    let predictions = model.predict(&refs)?;
    let restart = restart_from_predictions(&refs, &predictions, model.dims.n_pft)?;
    let ood = if model.ood.is_some() { model.check_ood(&refs)? } else { Vec::new() };
    Ok(Prediction {
        records,
        predictions,
        restart,
        ood,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlowPoolError {
    pub pool: PoolKind,
    pub median_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartCheck {
    /// Cold-start years until each slow soil pool is within the band; `None`
    /// if not reached within the search cap.
    pub cold_start_years: Vec<(PoolKind, Option<usize>)>,
    pub window_years: usize,
    /// Slowest cold-start ÷ input window.
    pub speedup: f64,
    pub slow_errors: Vec<SlowPoolError>,
    pub drift: crate::sim::DriftReport,
    pub n_cells: usize,
    pub n_flagged: usize,
    pub restart_capable: bool,
}

impl RestartCheck {
    pub fn max_slow_error(&self) -> f64 {
        self.slow_errors.iter().map(|e| e.median_rel_error).fold(0.0, f64::max)
    }

    /// Per-pool drift CSV followed by summary rows.
    pub fn to_csv(&self) -> String {
        let mut s = self.drift.to_csv();
        s.push_str("\nmetric,value\n");
        for (pool, years) in &self.cold_start_years {
            let y = years.map_or("none".to_string(), |y| y.to_string());
            s.push_str(&format!("cold_start_years_{},{y}\n", pool.name()));
        }
        s.push_str(&format!("window_years,{}\n", self.window_years));
        s.push_str(&format!("speedup,{:.3}\n", self.speedup));
        for e in &self.slow_errors {
            s.push_str(&format!("median_rel_error_{},{:.6e}\n", e.pool.name(), e.median_rel_error));
        }
        s.push_str(&format!("flagged_cells,{}\n", self.n_flagged));
        s.push_str(&format!("restart_capable,{}\n", self.restart_capable));
        s
    }
}

pub struct RestartCheckOptions {
    pub ood_strict: bool,
    pub restart_years: usize,
}

impl Default for RestartCheckOptions {
    fn default() -> Self {
        Self {
            ood_strict: false,
            restart_years: RESTART_YEARS,
        }
    }
}

/// Predicts equilibria, writes the restart file (atomically, to
/// `restart_path` when given), validates it against the world, runs the
/// restart integration and measures the effective speedup.
pub fn restart_check(
    model: &SurrogateModel,
    world: &World,
    restart_path: Option<&Path>,
    opts: &RestartCheckOptions,
) -> Result<RestartCheck> {
    let pred = predict_world(model, world)?;
    let flagged: Vec<&OodCheck> = pred.ood.iter().filter(|c| c.flag).collect();
    if opts.ood_strict && !flagged.is_empty() {
        let ids: Vec<String> = flagged.iter().take(5).map(|c| c.id.to_string()).collect();
        return Err(Error::OutOfDistribution(format!(
            "{} of {} cells flagged (first: {})",
            flagged.len(),
            pred.ood.len(),
            ids.join(", ")
        )));
    }
    let bytes = pred.restart.encode()?;
    let decoded = RestartFile::decode(&bytes).map_err(Error::RestartValidation)?;
    let states = decoded.to_states(world)?;
    if let Some(path) = restart_path {
        write_atomic(path, &bytes)?;
    }
    let eq = analytic_equilibrium(world)?;
    let slow_errors = PoolKind::SLOW
        .iter()
        .map(|&pool| SlowPoolError {
            pool,
            median_rel_error: median_rel_distance(&states, &eq, pool),
        })
        .collect();
    let (_, drift) = restart_run(&states, world, opts.restart_years)?;
    let cold_start_years = years_to_band(world, &[PoolKind::Soil3c, PoolKind::Soil4c], SPINUP_BAND, MAX_SPINUP_YEARS)?;
    let slowest = cold_start_years
        .iter()
        .map(|(_, y)| y.unwrap_or(MAX_SPINUP_YEARS))
        .max()
        .unwrap_or(0);
    let window = window_years(model);
    let restart_capable = states.iter().all(|s| s.is_nonnegative())
        && Task::STATE.iter().all(|&t| pred.predictions.task(t).iter().flatten().all(|&v| v > 0.0));
    Ok(RestartCheck {
        cold_start_years,
        window_years: window,
        speedup: slowest as f64 / window as f64,
        slow_errors,
        drift,
        n_cells: pred.records.len(),
        n_flagged: flagged.len(),
        restart_capable,
    })
}
