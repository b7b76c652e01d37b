use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, SmoothField};
use crate::rng;

pub const N_LAYERS: usize = 9;
/// Soil node depths (m), ELM-style exponential spacing.
pub const LAYER_DEPTHS: [f64; N_LAYERS] = [0.007, 0.028, 0.062, 0.119, 0.212, 0.366, 0.620, 1.038, 1.728];

/// Leaf and fine-root turnover (1/yr).
pub const K_FAST: f64 = 0.1;
/// soil3c / soil4c turnover (1/yr).
pub const K_SLOW: f64 = 0.004;
/// Coarse woody debris turnover at the reference climate (1/yr).
pub const K_CWD_REF: f64 = 0.03;
/// Coarse roots decay slower than stems by this factor.
pub const CROOT_K_RATIO: f64 = 0.7;
/// GPP at unit response, α = p = 1 (gC/m²/month).
pub const GPP_MAX: f64 = 300.0;
/// After a cold start, nutrient-limited cells begin at `NUTRIENT_FLOOR` and
/// relax towards their own factor with this e-folding time (yr).
pub const NUTRIENT_TIMESCALE: f64 = 400.0;
pub const NUTRIENT_FLOOR: f64 = 0.4;
/// Nutrient limitation exists only equatorward of this latitude.
pub const TROPICS_LAT: f64 = 23.0;
pub const DEFAULT_N_PFT: usize = 5;

/// Allocation slots, in order.
pub const N_ALLOC: usize = 6;
pub const A_LEAF: usize = 0;
pub const A_FROOT: usize = 1;
pub const A_STEM: usize = 2;
pub const A_CROOT: usize = 3;
pub const A_CWD: usize = 4;
pub const A_SOIL: usize = 5;

/// Valid PFT codes lie in `0..MAX_PFT_CODE`.
pub const MAX_PFT_CODE: i32 = 25;
const PFT_CODES: [i32; 24] = [1, 4, 10, 13, 15, 2, 3, 5, 6, 7, 8, 9, 11, 12, 14, 16, 17, 18, 19, 20, 21, 22, 23, 24];

// needleleaf tree, broadleaf tree, shrub, C3 grass, C4 grass
const BASE_ALLOC: [[f64; N_ALLOC]; 5] = [
    [0.15, 0.10, 0.25, 0.10, 0.15, 0.25],
    [0.18, 0.10, 0.22, 0.10, 0.15, 0.25],
    [0.20, 0.15, 0.14, 0.08, 0.10, 0.33],
    [0.28, 0.25, 0.06, 0.05, 0.06, 0.30],
    [0.30, 0.20, 0.07, 0.04, 0.06, 0.33],
];
const BASE_SLA: [f64; 5] = [0.004, 0.008, 0.006, 0.012, 0.010];
const BASE_K_DEAD: [f64; 5] = [0.020, 0.030, 0.040, 0.050, 0.035];
const TRAIT_SPREAD: f64 = 0.15;

/// Everything the simulator needs to know about one land cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    /// Linear grid id.
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub land_frac: f64,
    pub sand: f64,
    /// Nutrient limitation factor in (0, 1]; below 1 only in the tropics.
    pub nutrient_p: f64,
    /// GPP scale.
    pub alpha: f64,
    /// Autotrophic respiration fraction r in (0, 1).
    pub ar_frac: f64,
    /// e-folding depth (m) of litter input to the soil column.
    pub soil_tau: f64,
    /// Turnover multiplier from the cell's mean climate.
    pub climate_factor: f64,
    pub cover: Vec<f64>,
    pub pft_codes: Vec<i32>,
    pub sla: Vec<f64>,
    pub k_dead_ref: Vec<f64>,
    pub alloc: Vec<[f64; N_ALLOC]>,
    pub profile_soil: [f64; N_LAYERS],
    pub profile_cwd: [f64; N_LAYERS],
    /// Index into the world's forcing points.
    pub forcing_point: usize,
}

impl CellParams {
    pub fn n_pft(&self) -> usize {
        self.cover.len()
    }

    pub fn k_deadstem(&self, j: usize) -> f64 {
        self.k_dead_ref[j] * self.climate_factor
    }

    pub fn k_deadcroot(&self, j: usize) -> f64 {
        CROOT_K_RATIO * self.k_dead_ref[j] * self.climate_factor
    }

    pub fn k_cwd(&self) -> f64 {
        K_CWD_REF * self.climate_factor
    }

    /// Share of NPP entering soil4c rather than soil3c.
    pub fn soil4_share(&self) -> f64 {
        0.25 + 0.3 * self.sand
    }

    pub fn is_tropical(&self) -> bool {
        self.lat.abs() < TROPICS_LAT
    }

    /// Effective nutrient factor `t` years after a cold start.
    pub fn nutrient_at(&self, years: f64) -> f64 {
        nutrient_at(self.nutrient_p, years)
    }
}

/// Effective nutrient factor `years` after a cold start for asymptotic factor `p`.
pub fn nutrient_at(p: f64, years: f64) -> f64 {
    if p >= 1.0 {
        return 1.0;
    }
    let start = NUTRIENT_FLOOR.min(p);
    p - (p - start) * (-years / NUTRIENT_TIMESCALE).exp()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Climate-independent parameters of cell `id`. `climate_factor` and
/// `ar_frac` are placeholders until [`finish_with_climate`] runs.
pub fn draw_cell(seed: u64, grid: &GridSpec, id: usize, n_pft: usize) -> CellParams {
    let (lat, lon) = grid.cell_latlon(id);
    let ns = grid.noise_scale();
    let mut r = rng::keyed(seed, rng::name_hash("cell") ^ grid.key(), id as u64);
    let mut traits = rng::keyed(seed, rng::name_hash("traits"), id as u64);
    let field = |name: &str| SmoothField::new(seed, name).value(lat, lon);
    let mut z = || -> f64 { r.sample(StandardNormal) };

    let alpha = ((0.2 * field("alpha") + 0.1 * ns * z()).exp()).clamp(0.6, 1.4);
    let sand = (0.05 + 0.9 * sigmoid(field("sand") + 0.4 * ns * z())).clamp(0.05, 0.95);
    let soil_tau = 0.15 + 0.6 * sigmoid(field("soil-depth") + 0.5 * ns * z());
    let land_frac = 0.4 + 0.6 * sigmoid(1.5 + field("land-frac"));
    let p_noise = z();
    let nutrient_p = if lat.abs() < TROPICS_LAT {
        (0.68 + 0.12 * field("nutrient") + 0.12 * ns * p_noise).clamp(0.4, 0.98)
    } else {
        1.0
    };
    let logits: Vec<f64> = (0..n_pft)
        .map(|j| 0.8 * field(&format!("cover-{j}")) + 0.4 * ns * z())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let cover = e.iter().map(|v| v / total).collect();

    let mut spread = || 1.0 + TRAIT_SPREAD * traits.random_range(-1.0..1.0);
    let mut sla = Vec::with_capacity(n_pft);
    let mut k_dead_ref = Vec::with_capacity(n_pft);
    let mut alloc = Vec::with_capacity(n_pft);
    for j in 0..n_pft {
        let b = j % BASE_ALLOC.len();
        sla.push(BASE_SLA[b] * spread());
        k_dead_ref.push(BASE_K_DEAD[b] * spread());
        let mut a = BASE_ALLOC[b];
        for v in a.iter_mut() {
            *v *= spread();
        }
        let s: f64 = a.iter().sum();
        a.iter_mut().for_each(|v| *v /= s);
        alloc.push(a);
    }

    CellParams {
        id: id as u64,
        lat,
        lon,
        land_frac,
        sand,
        nutrient_p,
        alpha,
        ar_frac: 0.4,
        soil_tau,
        climate_factor: 1.0,
        cover,
        pft_codes: (0..n_pft).map(|j| PFT_CODES[j % PFT_CODES.len()]).collect(),
        sla,
        k_dead_ref,
        alloc,
        profile_soil: depth_profile(soil_tau, 0.12),
        profile_cwd: depth_profile(0.4 * soil_tau, 0.05),
        forcing_point: 0,
    }
}

/// Sets the climate-dependent parameters from the cell's mean monthly
/// temperature (K) and precipitation (mm/day).
pub fn finish_with_climate(seed: u64, grid: &GridSpec, cell: &mut CellParams, t_mean: f64, p_mean: f64) {
    let mut r = rng::keyed(seed, rng::name_hash("respiration") ^ grid.key(), cell.id);
    let z: f64 = r.sample(StandardNormal);
    let q10 = 2f64.powf((t_mean - 285.0) / 10.0);
    let moisture = 0.35 + 0.65 * p_mean / (p_mean + 1.5);
    cell.climate_factor = (q10 * moisture).clamp(0.2, 3.0);
    cell.ar_frac = (0.25 + 0.35 * sigmoid((t_mean - 288.0) / 7.0) + 0.03 * z).clamp(0.15, 0.7);
}

/// Normalized exponential depth weights with a floor, so every layer holds carbon.
pub fn depth_profile(tau: f64, floor: f64) -> [f64; N_LAYERS] {
    let mut w = [0.0; N_LAYERS];
    for (l, v) in w.iter_mut().enumerate() {
        *v = (-LAYER_DEPTHS[l] / tau).exp() + floor;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::grid::GridKind;

    #[test]
    fn allocation_and_profiles_sum_to_one() {
        let g = GridSpec::preset(GridKind::Coarse, 1);
        for id in g.land_cells().into_iter().take(50) {
            let c = draw_cell(1, &g, id, 5);
            for a in &c.alloc {
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(a.iter().all(|&v| v > 0.0));
            }
            assert!((c.cover.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((c.profile_soil.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((c.profile_cwd.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(c.nutrient_p > 0.0 && c.nutrient_p <= 1.0);
            assert_eq!(c.nutrient_p < 1.0, c.is_tropical());
        }
    }

    #[test]
    fn nutrient_ramp_limits() {
        let g = GridSpec::preset(GridKind::Coarse, 1);
        let mut c = draw_cell(1, &g, g.land_cells()[0], 5);
        c.nutrient_p = 0.9;
        assert_eq!(c.nutrient_at(0.0), NUTRIENT_FLOOR);
        assert!((c.nutrient_at(1e6) - 0.9).abs() < 1e-12);
        assert!(c.nutrient_at(20.0) < 0.43);
        c.nutrient_p = 1.0;
        assert_eq!(c.nutrient_at(0.0), 1.0);
    }

    #[test]
    fn slow_turnover_meets_spinup_scale() {
        assert!((200f64).ln() / K_SLOW >= 1200.0);
    }
}
