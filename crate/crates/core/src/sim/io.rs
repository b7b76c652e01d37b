//! World directory: `world.json` (grid, cell and forcing-point parameters)
//! plus `forcing_monthly.pht`, an f64 blob of shape [points, months, 5].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forcing::{ForcingPoint, N_VARS};
use super::{CellParams, GridSpec, World};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, read_to_vec, write_atomic, write_json};
use crate::tensor::{read_blob_from, write_blob_to, AnyTensor, Tensor};

const FORMAT: &str = "phase-world";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "world.json";
pub const FORCING_BLOB: &str = "forcing_monthly.pht";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    years: usize,
    grid: GridSpec,
    forcing_grid_index: Vec<usize>,
    forcing_points: Vec<ForcingPoint>,
    cells: Vec<CellParams>,
}

pub fn save_world(world: &World, dir: &Path) -> Result<()> {
    let months = 12 * world.years;
    let mut data = Vec::with_capacity(world.monthly.len() * months * N_VARS);
    for m in &world.monthly {
        for step in m {
            data.extend_from_slice(step);
        }
    }
    let t = Tensor::new(vec![world.monthly.len(), months, N_VARS], data)?;
    let mut buf = Vec::new();
    write_blob_to(&mut buf, &t);
    write_atomic(&dir.join(FORCING_BLOB), &buf)?;
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            format: FORMAT.into(),
            version: VERSION,
            seed: world.seed,
            years: world.years,
            grid: world.grid.clone(),
            forcing_grid_index: world.forcing_grid_index.clone(),
            forcing_points: world.forcing_points.clone(),
            cells: world.cells.clone(),
        },
    )
}

pub fn load_world(dir: &Path) -> Result<World> {
    let mpath = dir.join(MANIFEST);
    let m: Manifest = read_json(&mpath)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::format(&mpath, format!("unsupported world format {} v{}", m.format, m.version)));
    }
    let bpath = dir.join(FORCING_BLOB);
    let bytes = read_to_vec(&bpath)?;
    let (blob, used) = read_blob_from(&bytes).map_err(|e| Error::format(&bpath, e))?;
    let t = match blob {
        AnyTensor::F64(t) if used == bytes.len() => t,
        _ => return Err(Error::format(&bpath, "expected a single f64 blob")),
    };
    let months = 12 * m.years;
    if t.shape() != [m.forcing_points.len(), months, N_VARS] {
        return Err(Error::format(&bpath, format!("forcing blob has shape {:?}", t.shape())));
    }
    if m.cells.iter().any(|c| c.forcing_point >= m.forcing_points.len()) {
        return Err(Error::format(&mpath, "cell refers to a missing forcing point"));
    }
    let monthly = t
        .data()
        .chunks_exact(months * N_VARS)
        .map(|p| p.chunks_exact(N_VARS).map(|s| std::array::from_fn(|v| s[v])).collect())
        .collect();
    Ok(World {
        seed: m.seed,
        years: m.years,
        grid: m.grid,
        cells: m.cells,
        forcing_points: m.forcing_points,
        forcing_grid_index: m.forcing_grid_index,
        monthly,
    })
}
