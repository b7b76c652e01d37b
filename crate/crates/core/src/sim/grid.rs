use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Land is only placed equatorward of this latitude.
pub const MAX_LAND_LAT: f64 = 80.0;
/// Share of eligible cells that become land.
const LAND_SHARE: f64 = 0.65;

/// Named presets used by the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Coarse,
    Fine,
}

impl GridKind {
    pub fn dims(self) -> (usize, usize, f64) {
        match self {
            GridKind::Coarse => (24, 48, 1.0),
            GridKind::Fine => (48, 96, 0.5),
        }
    }
}

impl std::str::FromStr for GridKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(GridKind::Coarse),
            "fine" => Ok(GridKind::Fine),
            other => Err(Error::Config(format!("unknown grid '{other}' (expected coarse or fine)"))),
        }
    }
}

/// Regular global lat/lon grid with a land mask, cells numbered row-major
/// from the south-west corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_lat: usize,
    pub n_lon: usize,
    /// Row centers, degrees north.
    pub lat: Vec<f64>,
    /// Column centers, degrees east in [-180, 180).
    pub lon: Vec<f64>,
    /// Nominal resolution label; also sets the strength of sub-grid variability.
    pub resolution_deg: f64,
    pub land_mask: Vec<bool>,
}

impl GridSpec {
    pub fn preset(kind: GridKind, seed: u64) -> Self {
        let (n_lat, n_lon, res) = kind.dims();
        Self::global(seed, n_lat, n_lon, res)
    }

    /// Global grid whose land mask comes from the seed's continent field.
    /// Grids of any size built from one seed describe the same planet; a
    /// grid too small to hit land gets its most land-like cell.
    pub fn global(seed: u64, n_lat: usize, n_lon: usize, resolution_deg: f64) -> Self {
        let (lat, lon) = centers(n_lat, n_lon);
        let field = SmoothField::new(seed, "land");
        let threshold = land_threshold(&field);
        let mut mask = Vec::with_capacity(n_lat * n_lon);
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &la) in lat.iter().enumerate() {
            for (j, &lo) in lon.iter().enumerate() {
                let eligible = la.abs() < MAX_LAND_LAT;
                let v = field.value(la, lo);
                if eligible && v > best.0 {
                    best = (v, i * n_lon + j);
                }
                mask.push(eligible && v >= threshold);
            }
        }
        if !mask.iter().any(|&m| m) {
            mask[best.1] = true;
        }
        Self {
            n_lat,
            n_lon,
            lat,
            lon,
            resolution_deg,
            land_mask: mask,
        }
    }

    /// Global grid with an explicit mask.
    pub fn with_mask(n_lat: usize, n_lon: usize, resolution_deg: f64, land_mask: Vec<bool>) -> Result<Self> {
        if land_mask.len() != n_lat * n_lon {
            return Err(Error::Config(format!(
                "land mask has {} entries for a {n_lat}x{n_lon} grid",
                land_mask.len()
            )));
        }
        let (lat, lon) = centers(n_lat, n_lon);
        Ok(Self {
            n_lat,
            n_lon,
            lat,
            lon,
            resolution_deg,
            land_mask,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.n_lat * self.n_lon
    }

    /// Linear ids of land cells in ascending order.
    pub fn land_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.land_mask[c]).collect()
    }

    pub fn land_fraction(&self) -> f64 {
        self.land_cells().len() as f64 / self.n_cells() as f64
    }

    pub fn cell_latlon(&self, id: usize) -> (f64, f64) {
        (self.lat[id / self.n_lon], self.lon[id % self.n_lon])
    }

    pub fn dlat(&self) -> f64 {
        180.0 / self.n_lat as f64
    }

    pub fn dlon(&self) -> f64 {
        360.0 / self.n_lon as f64
    }

    /// Multiplier on sub-grid noise: finer grids resolve more local variability.
    pub fn noise_scale(&self) -> f64 {
        (1.0 / self.resolution_deg).clamp(0.5, 4.0)
    }

    /// Key separating noise streams of different grids.
    pub fn key(&self) -> u64 {
        (self.n_lat as u64) << 32 | self.n_lon as u64
    }
}

fn centers(n_lat: usize, n_lon: usize) -> (Vec<f64>, Vec<f64>) {
    let dlat = 180.0 / n_lat as f64;
    let dlon = 360.0 / n_lon as f64;
    let lat = (0..n_lat).map(|i| -90.0 + (i as f64 + 0.5) * dlat).collect();
    let lon = (0..n_lon).map(|j| -180.0 + (j as f64 + 0.5) * dlon).collect();
    (lat, lon)
}

/// Field quantile on a fixed reference grid, so every resolution shares one coastline.
fn land_threshold(field: &SmoothField) -> f64 {
    let (lat, lon) = centers(24, 48);
    let mut vals: Vec<f64> = lat
        .iter()
        .filter(|la| la.abs() < MAX_LAND_LAT)
        .flat_map(|&la| lon.iter().map(move |&lo| (la, lo)))
        .map(|(la, lo)| field.value(la, lo))
        .collect();
    vals.sort_by(f64::total_cmp);
    vals[((1.0 - LAND_SHARE) * vals.len() as f64) as usize]
}

/// Smooth random field on the sphere: a few low-order trigonometric modes,
/// roughly unit variance. Periodic in longitude.
#[derive(Clone, Debug)]
pub struct SmoothField {
    modes: Vec<[f64; 5]>,
}

impl SmoothField {
    const MODES: usize = 8;

    pub fn new(seed: u64, name: &str) -> Self {
        let mut r = rng::keyed(seed, rng::name_hash(name), 0);
        let modes = (0..Self::MODES)
            .map(|_| {
                let amp: f64 = r.sample(StandardNormal);
                let m = r.random_range(0..=3) as f64;
                let n = r.random_range(1..=3) as f64;
                let phi = r.random_range(0.0..std::f64::consts::TAU);
                let psi = r.random_range(0.0..std::f64::consts::TAU);
                [amp * 2.0 / (Self::MODES as f64).sqrt(), m, n, phi, psi]
            })
            .collect();
        Self { modes }
    }

    pub fn value(&self, lat: f64, lon: f64) -> f64 {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        self.modes
            .iter()
            .map(|&[a, m, n, phi, psi]| a * (m * lo + phi).cos() * (n * la + psi).cos())
            .sum()
    }
}
