//! Synthetic 6-hourly climate forcing on a regular point grid.
//!
//! Each forcing point carries a handful of climatology parameters; the full
//! series is regenerated on demand from a point-keyed stream, so nothing
//! larger than monthly means is ever stored.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, SmoothField};
use crate::rng;

pub const STEPS_PER_DAY: usize = 4;
pub const DAYS_PER_YEAR: usize = 365;
pub const STEPS_PER_YEAR: usize = STEPS_PER_DAY * DAYS_PER_YEAR;
pub const DAYS_PER_MONTH: usize = 30;
pub const STEPS_PER_MONTH: usize = STEPS_PER_DAY * DAYS_PER_MONTH;
pub const MONTHS_PER_YEAR: usize = 12;
/// Steps per year that fall inside the twelve 30-day months.
pub const CALENDAR_STEPS: usize = STEPS_PER_MONTH * MONTHS_PER_YEAR;

pub const N_VARS: usize = 5;
pub const RADIATION: usize = 0;
pub const PRECIPITATION: usize = 1;
pub const PRESSURE: usize = 2;
pub const HUMIDITY: usize = 3;
pub const TEMPERATURE: usize = 4;

pub const VAR_NAMES: [&str; N_VARS] = ["radiation", "precipitation", "pressure", "humidity", "temperature"];
pub const VAR_UNITS: [&str; N_VARS] = ["W/m2", "mm/day", "Pa", "kg/kg", "K"];
/// Declared physical bounds; generated values are clamped into them.
pub const VAR_BOUNDS: [(f64, f64); N_VARS] = [
    (0.0, 1400.0),
    (0.0, 500.0),
    (50_000.0, 110_000.0),
    (0.0, 0.05),
    (180.0, 340.0),
];

/// Offset of the forcing grid from the model grid, in cells.
const OFFSET_LAT: f64 = 0.3;
const OFFSET_LON: f64 = 0.2;

const DIURNAL_RADIATION: [f64; STEPS_PER_DAY] = [0.0, 1.7, 1.9, 0.4];
const DIURNAL_TEMPERATURE: [f64; STEPS_PER_DAY] = [-3.0, 0.5, 3.5, -1.0];

/// Climatology of one forcing point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingPoint {
    pub lat: f64,
    pub lon: f64,
    pub t_mean: f64,
    pub t_amp: f64,
    pub p_mean: f64,
    pub p_seas: f64,
    pub r_mean: f64,
    pub r_amp: f64,
    pub pressure: f64,
    pub rel_humidity: f64,
    /// Seed of the point's weather stream.
    pub stream: u64,
}

/// 6-hourly values for one point, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSeries {
    pub years: usize,
    pub steps: Vec<[f64; N_VARS]>,
}

impl ForcingSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn variable(&self, v: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s[v]).collect()
    }

    /// One variable restricted to the 30-day-month calendar: the first
    /// `CALENDAR_STEPS` of every year, dropping the trailing five days.
    pub fn calendar_variable(&self, v: usize) -> Vec<f64> {
        self.steps
            .chunks(STEPS_PER_YEAR)
            .flat_map(|year| year[..CALENDAR_STEPS].iter().map(move |s| s[v]))
            .collect()
    }
}

/// Coordinates of the forcing grid paired with `grid`: same spacing, shifted
/// by a fraction of a cell so no model cell is equidistant from two points.
pub fn forcing_coords(grid: &GridSpec) -> Vec<(f64, f64)> {
    let (dlat, dlon) = (grid.dlat(), grid.dlon());
    let mut pts = Vec::with_capacity(grid.n_cells());
    for &la in &grid.lat {
        for &lo in &grid.lon {
            let mut lon = lo + OFFSET_LON * dlon;
            if lon >= 180.0 {
                lon -= 360.0;
            }
            pts.push(((la + OFFSET_LAT * dlat).min(90.0), lon));
        }
    }
    pts
}

/// Climatology at a forcing point. Smooth fields fix the large-scale
/// pattern; a point-keyed perturbation, stronger on finer grids, adds
/// local variability.
pub fn forcing_point(seed: u64, grid: &GridSpec, index: usize, lat: f64, lon: f64) -> ForcingPoint {
    let ns = grid.noise_scale();
    let mut r = rng::keyed(seed, rng::name_hash("forcing-point") ^ grid.key(), index as u64);
    let mut z = || -> f64 { r.sample(StandardNormal) };
    let ft = SmoothField::new(seed, "temperature").value(lat, lon);
    let fp = SmoothField::new(seed, "precipitation").value(lat, lon);
    let fs = SmoothField::new(seed, "precip-season").value(lat, lon);
    let fe = SmoothField::new(seed, "elevation").value(lat, lon);
    let fh = SmoothField::new(seed, "humidity").value(lat, lon);
    let a = (lat.abs() / 80.0).min(1.0);

    let t_mean = 304.0 - 40.0 * a.powf(1.6) + 3.5 * ft + 1.5 * ns * z();
    let wet = (-(lat / 12.0).powi(2)).exp() + 0.5 * (-((lat.abs() - 50.0) / 12.0).powi(2)).exp() + 0.15;
    let p_mean = (0.3 + 4.5 * wet * (0.45 * fp).exp()) * (0.2 * ns * z()).exp();
    let elevation = 700.0 * (fe + 0.6).max(0.0);
    ForcingPoint {
        lat,
        lon,
        t_mean,
        t_amp: 1.0 + 13.0 * a,
        p_mean,
        p_seas: 0.6 * fs.tanh(),
        r_mean: (80.0 + 160.0 * lat.to_radians().cos() * (1.0 - 0.15 * fp.tanh())) * (0.05 * ns * z()).exp(),
        r_amp: 0.1 + 0.7 * a,
        pressure: 101_325.0 * (-elevation / 8400.0).exp(),
        rel_humidity: 0.35 + 0.5 / (1.0 + (-(fp + 0.5 * fh)).exp()),
        stream: rng::keyed(seed, rng::name_hash("weather") ^ grid.key(), index as u64).random(),
    }
}

fn saturation_humidity(t: f64, pressure: f64) -> f64 {
    let es = 611.2 * (17.67 * (t - 273.15) / (t - 29.65)).exp();
    0.622 * es / pressure
}

impl ForcingPoint {
    /// Regenerates the 6-hourly series for `years` years (365-day calendar).
    pub fn series(&self, years: usize) -> ForcingSeries {
        let mut r = rng::seeded(self.stream);
        let hemi = if self.lat >= 0.0 { 1.0 } else { -1.0 };
        let mut steps = Vec::with_capacity(years * STEPS_PER_YEAR);
        for _year in 0..years {
            let year_t: f64 = 0.8 * r.sample::<f64, _>(StandardNormal);
            let year_p: f64 = 0.15 * r.sample::<f64, _>(StandardNormal);
            let mut block_t = 0.0;
            let mut block_p = 0.0;
            let mut block_r = 0.0;
            for day in 0..DAYS_PER_YEAR {
                if day % DAYS_PER_MONTH == 0 {
                    block_t = r.sample::<f64, _>(StandardNormal);
                    block_p = 0.35 * r.sample::<f64, _>(StandardNormal);
                    block_r = 0.06 * r.sample::<f64, _>(StandardNormal);
                }
                let theta = std::f64::consts::TAU * (day as f64 + 0.5) / DAYS_PER_YEAR as f64;
                let season = -theta.cos() * hemi;
                let rh = (self.rel_humidity + 0.1 * season * self.p_seas).clamp(0.05, 0.98);
                for q in 0..STEPS_PER_DAY {
                    let zt: f64 = r.sample(StandardNormal);
                    let zp: f64 = r.sample(StandardNormal);
                    let zr: f64 = r.sample(StandardNormal);
                    let zs: f64 = r.sample(StandardNormal);
                    let temp = self.t_mean + self.t_amp * season + year_t + block_t + DIURNAL_TEMPERATURE[q] + 1.5 * zt;
                    let precip = self.p_mean * (1.0 + self.p_seas * season) * (year_p + block_p + 0.6 * zp - 0.18).exp();
                    let rad = self.r_mean * (1.0 + self.r_amp * season) * (block_r).exp() * DIURNAL_RADIATION[q] * (1.0 + 0.1 * zr);
                    let pres = self.pressure + 200.0 * season + 150.0 * zs;
                    let hum = rh * saturation_humidity(temp, pres);
                    let mut v = [rad, precip, pres, hum, temp];
                    for (x, &(lo, hi)) in v.iter_mut().zip(VAR_BOUNDS.iter()) {
                        *x = x.clamp(lo, hi);
                    }
                    steps.push(v);
                }
            }
        }
        ForcingSeries { years, steps }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::grid::GridKind;

    #[test]
    fn series_length_and_bounds() {
        let g = GridSpec::preset(GridKind::Coarse, 0);
        let p = forcing_point(0, &g, 5, 10.0, 20.0);
        let s = p.series(2);
        assert_eq!(s.len(), 2 * 1460);
        for step in &s.steps {
            for v in 0..N_VARS {
                let (lo, hi) = VAR_BOUNDS[v];
                assert!(step[v] >= lo && step[v] <= hi, "{} = {}", VAR_NAMES[v], step[v]);
            }
        }
        assert_eq!(s.calendar_variable(TEMPERATURE).len(), 2 * 1440);
        assert_eq!(s, p.series(2));
    }

    #[test]
    fn forcing_grid_is_offset() {
        let g = GridSpec::global(0, 4, 8, 1.0);
        let pts = forcing_coords(&g);
        assert_eq!(pts.len(), 32);
        assert!(pts.iter().all(|&(la, lo)| (-90.0..=90.0).contains(&la) && (-180.0..180.0).contains(&lo)));
        assert!((pts[0].0 - (g.lat[0] + 0.3 * 45.0)).abs() < 1e-12);
    }
}
