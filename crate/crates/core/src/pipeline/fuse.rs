//! Multi-source integration: flat grid-cell, PFT and soil-column tables plus
//! a forcing point set are joined into per-cell [`SampleRecord`]s.

use super::kdtree::kdtree_map;
use super::mapping::InvertedMapping;
use super::record::{SampleRecord, Targets, N_LAYER_FEATS, N_PFT_STATE, N_TRAITS};
use crate::error::{Error, Result};
use crate::sim::forcing::{ForcingPoint, N_VARS};
use crate::sim::{monthly_forcing, N_LAYERS};

#[derive(Clone, Debug, PartialEq)]
pub struct GridcellRow {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub static_feats: Vec<f64>,
    pub valid_layers: usize,
    pub gpp: f64,
    pub ar: f64,
    pub npp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PftRow {
    /// Row index into the grid-cell table.
    pub gridcell: usize,
    pub code: i32,
    pub traits: [f64; N_TRAITS],
    pub state: [f64; N_PFT_STATE],
    pub target: [f64; N_PFT_STATE],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnRow {
    pub gridcell: usize,
    pub layer: usize,
    pub state: [f64; N_LAYER_FEATS],
    pub target: [f64; N_LAYER_FEATS],
}

/// Simulator output in the layout a land model writes it: one table per
/// entity level, PFT and column tables ordered entity-major rather than by
/// grid cell, and forcing on its own point set.
#[derive(Clone, Debug)]
pub struct RawSources {
    pub n_pft: usize,
    pub window_years: usize,
    pub gridcells: Vec<GridcellRow>,
    pub pfts: Vec<PftRow>,
    pub columns: Vec<ColumnRow>,
    pub forcing_points: Vec<ForcingPoint>,
}

/// Joins the raw tables into one record per grid cell.
pub fn fuse(raw: &RawSources) -> Result<Vec<SampleRecord>> {
    let n = raw.gridcells.len();
    let pft_owner: Vec<usize> = raw.pfts.iter().map(|r| r.gridcell).collect();
    let col_owner: Vec<usize> = raw.columns.iter().map(|r| r.gridcell).collect();
    let mapping = InvertedMapping::build(n, &pft_owner, &col_owner)?;
    if raw.forcing_points.is_empty() {
        return Err(Error::Contract("no forcing points".into()));
    }
    let model_pts: Vec<(f64, f64)> = raw.gridcells.iter().map(|g| (g.lat, g.lon)).collect();
    let forcing_pts: Vec<(f64, f64)> = raw.forcing_points.iter().map(|p| (p.lat, p.lon)).collect();
    let nearest = kdtree_map(&model_pts, &forcing_pts);

    let mut out = Vec::with_capacity(n);
    for (g, cell) in raw.gridcells.iter().enumerate() {
        let pfts = &mapping.pfts[g];
        let cols = &mapping.columns[g];
        if pfts.len() != raw.n_pft {
            return Err(Error::Contract(format!("grid cell {} has {} PFT rows, expected {}", cell.id, pfts.len(), raw.n_pft)));
        }
        if cols.len() != N_LAYERS {
            return Err(Error::Contract(format!("grid cell {} has {} soil layers, expected {N_LAYERS}", cell.id, cols.len())));
        }
        let mut pft_traits = Vec::with_capacity(raw.n_pft * N_TRAITS);
        let mut pft_state = Vec::with_capacity(raw.n_pft * N_PFT_STATE);
        let mut pft_target = vec![Vec::with_capacity(raw.n_pft); N_PFT_STATE];
        let mut pft_codes = Vec::with_capacity(raw.n_pft);
        for &r in pfts {
            let row = &raw.pfts[r];
            pft_traits.extend_from_slice(&row.traits);
            pft_state.extend_from_slice(&row.state);
            pft_codes.push(row.code);
            for (t, &v) in pft_target.iter_mut().zip(&row.target) {
                t.push(v);
            }
        }
        let mut layered = vec![0.0; N_LAYERS * N_LAYER_FEATS];
        let mut layer_target = vec![vec![0.0; N_LAYERS]; N_LAYER_FEATS];
        for &r in cols {
            let row = &raw.columns[r];
            if row.layer >= N_LAYERS {
                return Err(Error::Contract(format!("grid cell {} reports layer {}", cell.id, row.layer)));
            }
            layered[row.layer * N_LAYER_FEATS..(row.layer + 1) * N_LAYER_FEATS].copy_from_slice(&row.state);
            for (t, &v) in layer_target.iter_mut().zip(&row.target) {
                t[row.layer] = v;
            }
        }

        let series = raw.forcing_points[nearest[g]].series(raw.window_years);
        let monthly = monthly_forcing(&series)?;
        let mut forcing = Vec::with_capacity(monthly.len() * N_VARS);
        for m in &monthly {
            forcing.extend_from_slice(m);
        }

        let [deadcrootc, deadstemc, tlai]: [Vec<f64>; 3] = pft_target.try_into().expect("three PFT targets");
        let [cwdc, soil3c, soil4c]: [Vec<f64>; 3] = layer_target.try_into().expect("three layer targets");
        out.push(SampleRecord {
            id: cell.id,
            lat: cell.lat,
            lon: cell.lon,
            forcing,
            static_feats: cell.static_feats.clone(),
            pft_traits,
            pft_state,
            layered,
            pft_codes,
            valid_layers: cell.valid_layers,
            targets: Targets {
                deadcrootc,
                deadstemc,
                tlai,
                cwdc,
                soil3c,
                soil4c,
                gpp: cell.gpp,
                ar: cell.ar,
                npp: cell.npp,
            },
        });
    }
    Ok(out)
}
