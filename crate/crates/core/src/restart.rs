//! Simplified restart file.
//!
//! Little-endian layout:
//!
//! ```text
//! "PHRS"  u32 version  u32 n_pft  u32 n_layers  u64 n_cells
//! per cell: u64 id, then f32 deadcrootc[n_pft] deadstemc[n_pft] tlai[n_pft]
//!           cwdc[n_layers] soil3c[n_layers] soil4c[n_layers]
//! ```
//!
//! Leaf and fine-root carbon are not stored: the simulator rebuilds leaf
//! carbon from LAI and fine roots from the leaf allocation ratio.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil::{read_to_vec, write_atomic};
use crate::sim::params::{A_FROOT, A_LEAF};
use crate::sim::{PoolState, World, N_LAYERS};

const MAGIC: &[u8; 4] = b"PHRS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct RestartCell {
    pub id: u64,
    pub deadcrootc: Vec<f32>,
    pub deadstemc: Vec<f32>,
    pub tlai: Vec<f32>,
    pub cwdc: Vec<f32>,
    pub soil3c: Vec<f32>,
    pub soil4c: Vec<f32>,
}

impl RestartCell {
    fn vectors(&self) -> [&Vec<f32>; 6] {
        [&self.deadcrootc, &self.deadstemc, &self.tlai, &self.cwdc, &self.soil3c, &self.soil4c]
    }

    pub fn from_state(id: u64, s: &PoolState) -> Self {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Self {
            id,
            deadcrootc: f(&s.deadcrootc),
            deadstemc: f(&s.deadstemc),
            tlai: f(&s.tlai),
            cwdc: f(&s.cwdc),
            soil3c: f(&s.soil3c),
            soil4c: f(&s.soil4c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartFile {
    pub n_pft: usize,
    pub cells: Vec<RestartCell>,
}

impl RestartFile {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.n_pft as u32).to_le_bytes());
        out.extend_from_slice(&(N_LAYERS as u32).to_le_bytes());
        out.extend_from_slice(&(self.cells.len() as u64).to_le_bytes());
        for c in &self.cells {
            let lens = [self.n_pft, self.n_pft, self.n_pft, N_LAYERS, N_LAYERS, N_LAYERS];
            if c.vectors().iter().zip(lens).any(|(v, n)| v.len() != n) {
                return Err(Error::Dimension(format!("restart cell {} has wrongly sized pools", c.id)));
            }
            out.extend_from_slice(&c.id.to_le_bytes());
            for v in c.vectors() {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a restart file (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported restart version {version}"));
        }
        let n_pft = r.u32()? as usize;
        let n_layers = r.u32()? as usize;
        if n_layers != N_LAYERS {
            return Err(format!("restart file has {n_layers} soil layers, expected {N_LAYERS}"));
        }
        let n_cells = r.u64()? as usize;
        let per_cell = 8 + 4 * (3 * n_pft + 3 * N_LAYERS);
        if bytes.len() - r.at != n_cells.saturating_mul(per_cell) {
            return Err(format!("restart body is {} bytes, expected {} cells of {per_cell}", bytes.len() - r.at, n_cells));
        }
        let mut cells = Vec::with_capacity(n_cells);
        for _ in 0..n_cells {
            let id = r.u64()?;
            let mut vec = |n: usize| (0..n).map(|_| r.f32()).collect::<std::result::Result<Vec<_>, _>>();
            cells.push(RestartCell {
                id,
                deadcrootc: vec(n_pft)?,
                deadstemc: vec(n_pft)?,
                tlai: vec(n_pft)?,
                cwdc: vec(N_LAYERS)?,
                soil3c: vec(N_LAYERS)?,
                soil4c: vec(N_LAYERS)?,
            });
        }
        Ok(Self { n_pft, cells })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = read_to_vec(path)?;
        Self::decode(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Validates the file against `world` and expands it into full pool
    /// states in world cell order. Every world cell must be present once;
    /// every value finite and non-negative.
    pub fn to_states(&self, world: &World) -> Result<Vec<PoolState>> {
        if self.n_pft != world.n_pft() {
            return Err(Error::RestartValidation(format!("file has {} PFTs, world has {}", self.n_pft, world.n_pft())));
        }
        let mut by_id: HashMap<u64, &RestartCell> = HashMap::with_capacity(self.cells.len());
        for c in &self.cells {
            if by_id.insert(c.id, c).is_some() {
                return Err(Error::RestartValidation(format!("cell {} appears twice", c.id)));
            }
            if c.vectors().iter().any(|v| v.iter().any(|x| !(x.is_finite() && *x >= 0.0))) {
                return Err(Error::RestartValidation(format!("cell {} has a negative or non-finite pool", c.id)));
            }
        }
        if let Some(extra) = self.cells.iter().find(|c| !world.cells.iter().any(|w| w.id == c.id)) {
            return Err(Error::RestartValidation(format!("cell {} is not a land cell of this world", extra.id)));
        }
        world
            .cells
            .iter()
            .map(|cell| {
                let c = by_id.get(&cell.id).ok_or(Error::MissingCell(cell.id))?;
                let up = |v: &[f32]| -> Vec<f64> { v.iter().map(|&x| x as f64).collect() };
                let tlai = up(&c.tlai);
                let leaf_c: Vec<f64> = tlai.iter().zip(&cell.sla).map(|(t, s)| t / s).collect();
                let froot_c = leaf_c
                    .iter()
                    .zip(&cell.alloc)
                    .map(|(l, a)| l * a[A_FROOT] / a[A_LEAF])
                    .collect();
                Ok(PoolState {
                    leaf_c,
                    froot_c,
                    deadcrootc: up(&c.deadcrootc),
                    deadstemc: up(&c.deadstemc),
                    tlai,
                    cwdc: up(&c.cwdc),
                    soil3c: up(&c.soil3c),
                    soil4c: up(&c.soil4c),
                })
            })
            .collect()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("restart file is truncated")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
