//! Toy land-carbon simulator: synthetic climate, linear carbon pools with
//! closed-form equilibria, spin-up and restart runs.
//!
//! Slow pools (soil3c, soil4c) turn over at 0.004/yr, so a cold start needs
//! about ln(200)/0.004 ≈ 1324 years to come within 0.5% of equilibrium.

pub mod dynamics;
pub mod export;
pub mod forcing;
pub mod grid;
mod io;
pub mod params;

pub use dynamics::{
    analytic_equilibrium, restart_run, restart_run_with, spinup, spinup_cell, step_fluxes, years_to_band, CellModel,
    DriftReport, EquilibriumState, FluxParams, Fluxes, ForcingMode, NutrientMode, PoolDrift, PoolKind, PoolState,
    RestartOptions, RunOptions,
};
pub use export::{export_samples, raw_sources};
pub use forcing::{ForcingPoint, ForcingSeries};
pub use grid::{GridKind, GridSpec};
pub use io::{load_world, save_world};
pub use params::{CellParams, DEFAULT_N_PFT, N_LAYERS};

use crate::error::{Error, Result};
use crate::pipeline::{aggregate_monthly, kdtree_map};
use forcing::{forcing_coords, forcing_point, N_VARS, PRECIPITATION, TEMPERATURE};

/// A generated synthetic world: grid, land-cell parameters and the forcing
/// points those cells draw their climate from.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub seed: u64,
    /// Length of the forcing record; longer runs cycle it.
    pub years: usize,
    pub grid: GridSpec,
    /// Land cells in ascending grid id.
    pub cells: Vec<CellParams>,
    /// Forcing points used by at least one cell, in ascending forcing-grid index.
    pub forcing_points: Vec<ForcingPoint>,
    /// Forcing-grid index of each entry of `forcing_points`.
    pub forcing_grid_index: Vec<usize>,
    /// Monthly mean forcing per forcing point, `12·years` months.
    pub monthly: Vec<Vec<[f64; N_VARS]>>,
}

impl World {
    pub fn n_pft(&self) -> usize {
        self.cells.first().map_or(0, |c| c.n_pft())
    }

    /// The 6-hourly forcing series driving land cell `cell`.
    pub fn forcing_series(&self, cell: usize) -> ForcingSeries {
        self.forcing_points[self.cells[cell].forcing_point].series(self.years)
    }
}

/// Monthly means of a 6-hourly series on the 30-day-month calendar.
pub fn monthly_forcing(series: &ForcingSeries) -> Result<Vec<[f64; N_VARS]>> {
    let per_var: Vec<Vec<f64>> = (0..N_VARS)
        .map(|v| aggregate_monthly(&series.calendar_variable(v)))
        .collect::<Result<_>>()?;
    Ok((0..per_var[0].len())
        .map(|m| std::array::from_fn(|v| per_var[v][m]))
        .collect())
}

/// Builds a world; identical arguments give identical worlds.
pub fn generate_world(seed: u64, grid: &GridSpec, years: usize, n_pft: usize) -> Result<World> {
    if years == 0 {
        return Err(Error::Config("years must be at least 1".into()));
    }
    if n_pft == 0 {
        return Err(Error::Config("at least one PFT is required".into()));
    }
    let land = grid.land_cells();
    if land.is_empty() {
        return Err(Error::Config("land mask is empty".into()));
    }

    let coords = forcing_coords(grid);
    let cell_coords: Vec<(f64, f64)> = land.iter().map(|&c| grid.cell_latlon(c)).collect();
    let nearest = kdtree_map(&cell_coords, &coords);
    let mut used = nearest.clone();
    used.sort_unstable();
    used.dedup();

    let mut forcing_points = Vec::with_capacity(used.len());
    let mut monthly = Vec::with_capacity(used.len());
    for &f in &used {
        let p = forcing_point(seed, grid, f, coords[f].0, coords[f].1);
        monthly.push(monthly_forcing(&p.series(years))?);
        forcing_points.push(p);
    }

    let cells = land
        .iter()
        .zip(&nearest)
        .map(|(&id, f)| {
            let mut c = params::draw_cell(seed, grid, id, n_pft);
            c.forcing_point = used.binary_search(f).expect("mapped point is in the used set");
            let m = &monthly[c.forcing_point];
            let t = m.iter().map(|x| x[TEMPERATURE]).sum::<f64>() / m.len() as f64;
            let p = m.iter().map(|x| x[PRECIPITATION]).sum::<f64>() / m.len() as f64;
            params::finish_with_climate(seed, grid, &mut c, t, p);
            c
        })
        .collect();

    log::info!(
        "generated world: seed {seed}, {}x{} grid, {} land cells, {} forcing points, {years} yr",
        grid.n_lat,
        grid.n_lon,
        land.len(),
        used.len()
    );
    Ok(World {
        seed,
        years,
        grid: grid.clone(),
        cells,
        forcing_points,
        forcing_grid_index: used,
        monthly,
    })
}
