use super::dynamics::{spinup, step_fluxes, FluxParams, PoolKind};
use super::params::{A_CROOT, A_LEAF, A_STEM};
use super::{analytic_equilibrium, World, N_LAYERS};
use crate::error::{Error, Result};
use crate::pipeline::fuse::{fuse, ColumnRow, GridcellRow, PftRow, RawSources};
use crate::pipeline::SampleRecord;

/// Writes the simulator state out as raw land-model-style tables: states at
/// the end of `window_years` of cold-start spin-up, analytic equilibria as
/// targets, and long-run mean fluxes.
pub fn raw_sources(world: &World, window_years: usize) -> Result<RawSources> {
    if window_years == 0 || window_years > world.years {
        return Err(Error::Range(format!(
            "window of {window_years} yr does not fit the {}-yr simulated span",
            world.years
        )));
    }
    let states = spinup(world, window_years, None)?;
    let equilibria = analytic_equilibrium(world)?;
    let n_pft = world.n_pft();

    let mut gridcells = Vec::with_capacity(world.cells.len());
    for c in &world.cells {
        let monthly = &world.monthly[c.forcing_point];
        let params = FluxParams {
            alpha: c.alpha,
            nutrient_p: c.nutrient_p,
            ar_frac: c.ar_frac,
        };
        let (mut gpp, mut ar) = (0.0, 0.0);
        for f in monthly {
            let fl = step_fluxes(f, params);
            gpp += fl.gpp;
            ar += fl.ar;
        }
        gpp /= monthly.len() as f64;
        ar /= monthly.len() as f64;
        let mut static_feats = vec![c.lat, c.lon, c.land_frac, c.sand, c.nutrient_p, c.alpha];
        static_feats.extend_from_slice(&c.cover);
        gridcells.push(GridcellRow {
            id: c.id,
            lat: c.lat,
            lon: c.lon,
            static_feats,
            valid_layers: N_LAYERS,
            gpp,
            ar,
            npp: gpp - ar,
        });
    }

    let pfts = (0..n_pft)
        .flat_map(|j| {
            world.cells.iter().enumerate().map(move |(g, c)| (j, g, c))
        })
        .map(|(j, g, c)| {
            let s = &states[g];
            let e = &equilibria[g];
            PftRow {
                gridcell: g,
                code: c.pft_codes[j],
                traits: [c.sla[j], c.alloc[j][A_LEAF], c.alloc[j][A_STEM], c.alloc[j][A_CROOT], c.k_dead_ref[j]],
                state: [s.deadcrootc[j], s.deadstemc[j], s.tlai[j]],
                target: [e.deadcrootc[j], e.deadstemc[j], e.tlai[j]],
            }
        })
        .collect();

    let layer_pools = [PoolKind::Cwdc, PoolKind::Soil3c, PoolKind::Soil4c];
    let columns = (0..N_LAYERS)
        .flat_map(|l| (0..world.cells.len()).map(move |g| (l, g)))
        .map(|(l, g)| ColumnRow {
            gridcell: g,
            layer: l,
            state: layer_pools.map(|p| states[g].get(p)[l]),
            target: layer_pools.map(|p| equilibria[g].get(p)[l]),
        })
        .collect();

    Ok(RawSources {
        n_pft,
        window_years,
        gridcells,
        pfts,
        columns,
        forcing_points: world.forcing_points.clone(),
    })
}

/// Per-cell training records for a `window_years` input window.
pub fn export_samples(world: &World, window_years: usize) -> Result<Vec<SampleRecord>> {
    fuse(&raw_sources(world, window_years)?)
}
