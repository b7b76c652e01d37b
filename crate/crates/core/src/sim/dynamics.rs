//! Linear pool dynamics: dC/dt = a·NPP(t) − k·C, forward Euler, monthly steps.

use serde::{Deserialize, Serialize};

use super::forcing::{N_VARS, PRECIPITATION, RADIATION, TEMPERATURE};
use super::params::*;
use super::World;
use crate::error::{Error, Result};

/// Step length in years.
pub const DT: f64 = 1.0 / 12.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fluxes {
    pub gpp: f64,
    pub ar: f64,
    pub npp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxParams {
    pub alpha: f64,
    pub nutrient_p: f64,
    pub ar_frac: f64,
}

/// Smooth positive productivity response in (0, 1).
pub fn response(f: &[f64; N_VARS]) -> f64 {
    let t = f[TEMPERATURE];
    let p = f[PRECIPITATION];
    let r = f[RADIATION];
    (-((t - 297.0) / 18.0).powi(2)).exp() * p / (p + 1.5) * r / (r + 120.0)
}

/// Monthly GPP, AR and NPP (gC/m²/month) for one month of mean forcing.
pub fn step_fluxes(forcing_month: &[f64; N_VARS], params: FluxParams) -> Fluxes {
    let gpp = params.alpha * params.nutrient_p * GPP_MAX * response(forcing_month);
    // Subtract whichever part is at least half of gpp: the difference is then
    // exact and npp + ar reproduces gpp bit for bit.
    let (ar, npp) = if params.ar_frac >= 0.5 {
        let ar = params.ar_frac * gpp;
        (ar, gpp - ar)
    } else {
        let npp = (1.0 - params.ar_frac) * gpp;
        (gpp - npp, npp)
    };
    Fluxes { gpp, ar, npp }
}

/// One Euler step before clamping.
pub fn euler_step(c: f64, u: f64, k: f64, dt: f64) -> f64 {
    c + (u - k * c) * dt
}

pub fn check_stability(k: f64, dt: f64) -> Result<()> {
    if !(k.is_finite() && k >= 0.0) || k * dt >= 2.0 {
        return Err(Error::Config(format!("unstable step: k*dt = {} (must be < 2)", k * dt)));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    LeafC,
    FrootC,
    Deadcrootc,
    Deadstemc,
    Tlai,
    Cwdc,
    Soil3c,
    Soil4c,
}

impl PoolKind {
    pub const ALL: [PoolKind; 8] = [
        PoolKind::LeafC,
        PoolKind::FrootC,
        PoolKind::Deadcrootc,
        PoolKind::Deadstemc,
        PoolKind::Tlai,
        PoolKind::Cwdc,
        PoolKind::Soil3c,
        PoolKind::Soil4c,
    ];
    pub const SLOW: [PoolKind; 5] = [
        PoolKind::Deadcrootc,
        PoolKind::Deadstemc,
        PoolKind::Cwdc,
        PoolKind::Soil3c,
        PoolKind::Soil4c,
    ];
    pub const FAST: [PoolKind; 2] = [PoolKind::LeafC, PoolKind::FrootC];

    pub fn name(self) -> &'static str {
        match self {
            PoolKind::LeafC => "leafc",
            PoolKind::FrootC => "frootc",
            PoolKind::Deadcrootc => "deadcrootc",
            PoolKind::Deadstemc => "deadstemc",
            PoolKind::Tlai => "tlai",
            PoolKind::Cwdc => "cwdc",
            PoolKind::Soil3c => "soil3c",
            PoolKind::Soil4c => "soil4c",
        }
    }

    pub fn is_slow(self) -> bool {
        Self::SLOW.contains(&self)
    }
}

/// Carbon pools of one cell (gC/m²), plus LAI (m²/m²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub leaf_c: Vec<f64>,
    pub froot_c: Vec<f64>,
    pub deadcrootc: Vec<f64>,
    pub deadstemc: Vec<f64>,
    pub tlai: Vec<f64>,
    pub cwdc: Vec<f64>,
    pub soil3c: Vec<f64>,
    pub soil4c: Vec<f64>,
}

pub type EquilibriumState = PoolState;

impl PoolState {
    pub fn zeros(n_pft: usize) -> Self {
        Self {
            leaf_c: vec![0.0; n_pft],
            froot_c: vec![0.0; n_pft],
            deadcrootc: vec![0.0; n_pft],
            deadstemc: vec![0.0; n_pft],
            tlai: vec![0.0; n_pft],
            cwdc: vec![0.0; N_LAYERS],
            soil3c: vec![0.0; N_LAYERS],
            soil4c: vec![0.0; N_LAYERS],
        }
    }

    pub fn get(&self, kind: PoolKind) -> &[f64] {
        match kind {
            PoolKind::LeafC => &self.leaf_c,
            PoolKind::FrootC => &self.froot_c,
            PoolKind::Deadcrootc => &self.deadcrootc,
            PoolKind::Deadstemc => &self.deadstemc,
            PoolKind::Tlai => &self.tlai,
            PoolKind::Cwdc => &self.cwdc,
            PoolKind::Soil3c => &self.soil3c,
            PoolKind::Soil4c => &self.soil4c,
        }
    }

    pub fn get_mut(&mut self, kind: PoolKind) -> &mut Vec<f64> {
        match kind {
            PoolKind::LeafC => &mut self.leaf_c,
            PoolKind::FrootC => &mut self.froot_c,
            PoolKind::Deadcrootc => &mut self.deadcrootc,
            PoolKind::Deadstemc => &mut self.deadstemc,
            PoolKind::Tlai => &mut self.tlai,
            PoolKind::Cwdc => &mut self.cwdc,
            PoolKind::Soil3c => &mut self.soil3c,
            PoolKind::Soil4c => &mut self.soil4c,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        PoolKind::ALL
            .iter()
            .all(|&k| self.get(k).iter().all(|&v| v >= 0.0 && v.is_finite()))
    }

    /// Largest relative difference to `reference` over all entries.
    pub fn max_rel_diff(&self, reference: &PoolState) -> f64 {
        PoolKind::ALL
            .iter()
            .flat_map(|&k| self.get(k).iter().zip(reference.get(k)))
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
            .fold(0.0, f64::max)
    }
}

/// Seasonal forcing replays the stored monthly cycle; mean forcing holds
/// every month at the cycle mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcingMode {
    Seasonal,
    Mean,
}

/// Cold start applies the nutrient ramp measured from the start of the run;
/// asymptotic uses the fully developed limitation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NutrientMode {
    ColdStart,
    Asymptotic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    pub forcing: ForcingMode,
    pub nutrient: NutrientMode,
}

impl RunOptions {
    pub const COLD_START: RunOptions = RunOptions {
        forcing: ForcingMode::Seasonal,
        nutrient: NutrientMode::ColdStart,
    };
    pub const RESTART: RunOptions = RunOptions {
        forcing: ForcingMode::Seasonal,
        nutrient: NutrientMode::Asymptotic,
    };
}

/// Flattened linear system of one cell. Pool order: leaf, froot, deadstem,
/// deadcroot (per PFT), then cwd, soil3, soil4 (per layer).
#[derive(Clone, Debug)]
pub struct CellModel {
    n_pft: usize,
    share: Vec<f64>,
    k: Vec<f64>,
    /// NPP (gC/m²/yr) per month of the forcing cycle at p = 1.
    npp_unit: Vec<f64>,
    npp_unit_mean: f64,
    nutrient_p: f64,
    sla: Vec<f64>,
}

impl CellModel {
    pub fn new(cell: &CellParams, monthly: &[[f64; N_VARS]]) -> Result<Self> {
        if monthly.is_empty() {
            return Err(Error::Config("empty forcing cycle".into()));
        }
        let n = cell.n_pft();
        let mut share = Vec::with_capacity(4 * n + 3 * N_LAYERS);
        let mut k = Vec::with_capacity(share.capacity());
        for (slot, rate) in [(A_LEAF, None), (A_FROOT, None), (A_STEM, Some(false)), (A_CROOT, Some(true))] {
            for j in 0..n {
                share.push(cell.cover[j] * cell.alloc[j][slot]);
                k.push(match rate {
                    None => K_FAST,
                    Some(false) => cell.k_deadstem(j),
                    Some(true) => cell.k_deadcroot(j),
                });
            }
        }
        let to_cwd: f64 = (0..n).map(|j| cell.cover[j] * cell.alloc[j][A_CWD]).sum();
        let to_soil: f64 = (0..n).map(|j| cell.cover[j] * cell.alloc[j][A_SOIL]).sum();
        let phi4 = cell.soil4_share();
        for l in 0..N_LAYERS {
            share.push(to_cwd * cell.profile_cwd[l]);
            k.push(cell.k_cwd());
        }
        for l in 0..N_LAYERS {
            share.push(to_soil * (1.0 - phi4) * cell.profile_soil[l]);
            k.push(K_SLOW);
        }
        for l in 0..N_LAYERS {
            share.push(to_soil * phi4 * cell.profile_soil[l]);
            k.push(K_SLOW);
        }
        for &ki in &k {
            check_stability(ki, DT)?;
        }
        let unit = FluxParams {
            alpha: cell.alpha,
            nutrient_p: 1.0,
            ar_frac: cell.ar_frac,
        };
        let npp_unit: Vec<f64> = monthly.iter().map(|f| 12.0 * step_fluxes(f, unit).npp).collect();
        let npp_unit_mean = npp_unit.iter().sum::<f64>() / npp_unit.len() as f64;
        Ok(Self {
            n_pft: n,
            share,
            k,
            npp_unit,
            npp_unit_mean,
            nutrient_p: cell.nutrient_p,
            sla: cell.sla.clone(),
        })
    }

    pub fn n_pools(&self) -> usize {
        self.k.len()
    }

    pub fn cycle_months(&self) -> usize {
        self.npp_unit.len()
    }

    /// NPP (gC/m²/yr) during absolute month `m` of a run.
    pub fn npp_rate(&self, m: usize, opts: RunOptions) -> f64 {
        let unit = match opts.forcing {
            ForcingMode::Seasonal => self.npp_unit[m % self.npp_unit.len()],
            ForcingMode::Mean => self.npp_unit_mean,
        };
        let p = match opts.nutrient {
            NutrientMode::Asymptotic => self.nutrient_p,
            NutrientMode::ColdStart => nutrient_at(self.nutrient_p, m as f64 / 12.0),
        };
        unit * p
    }

    pub fn step(&self, c: &mut [f64], npp: f64) {
        for ((ci, &a), &k) in c.iter_mut().zip(&self.share).zip(&self.k) {
            *ci = euler_step(*ci, a * npp, k, DT).max(0.0);
        }
    }

    /// Integrates months `start..start + months`, calling `observe(m, c)`
    /// after each step with the index of the month just completed.
    pub fn run(&self, c: &mut [f64], start: usize, months: usize, opts: RunOptions, mut observe: impl FnMut(usize, &[f64])) {
        for m in start..start + months {
            let npp = self.npp_rate(m, opts);
            self.step(c, npp);
            observe(m, c);
        }
    }

    /// Cycle-mean equilibrium a·ū/k with the asymptotic nutrient factor. For
    /// a linear pool under periodic forcing this is exactly the mean of the
    /// periodic orbit.
    pub fn equilibrium_flat(&self) -> Vec<f64> {
        let u = self.npp_unit_mean * self.nutrient_p;
        self.share.iter().zip(&self.k).map(|(a, k)| a * u / k).collect()
    }

    pub fn equilibrium(&self) -> PoolState {
        self.to_state(&self.equilibrium_flat())
    }

    pub fn to_state(&self, c: &[f64]) -> PoolState {
        let n = self.n_pft;
        let take = |o: usize, len: usize| c[o..o + len].to_vec();
        let leaf_c = take(0, n);
        let tlai = leaf_c.iter().zip(&self.sla).map(|(l, s)| l * s).collect();
        PoolState {
            froot_c: take(n, n),
            deadstemc: take(2 * n, n),
            deadcrootc: take(3 * n, n),
            cwdc: take(4 * n, N_LAYERS),
            soil3c: take(4 * n + N_LAYERS, N_LAYERS),
            soil4c: take(4 * n + 2 * N_LAYERS, N_LAYERS),
            leaf_c,
            tlai,
        }
    }

    /// Flat pools from a state; leaf carbon comes from `leaf_c` (tlai is derived).
    pub fn from_state(&self, s: &PoolState) -> Result<Vec<f64>> {
        let n = self.n_pft;
        let mut c = Vec::with_capacity(self.n_pools());
        for (v, len) in [
            (&s.leaf_c, n),
            (&s.froot_c, n),
            (&s.deadstemc, n),
            (&s.deadcrootc, n),
            (&s.cwdc, N_LAYERS),
            (&s.soil3c, N_LAYERS),
            (&s.soil4c, N_LAYERS),
        ] {
            if v.len() != len {
                return Err(Error::Dimension(format!("pool vector of length {} where {len} expected", v.len())));
            }
            c.extend_from_slice(v);
        }
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Range("initial pools must be finite and non-negative".into()));
        }
        Ok(c)
    }

    /// Years needed for a pool started at zero under mean forcing to get within
    /// `band` of its equilibrium: ln(1/band)/k in continuous time.
    pub fn analytic_years_to_band(k: f64, band: f64) -> f64 {
        (1.0 / band).ln() / k
    }
}

impl World {
    pub fn cell_model(&self, cell: usize) -> Result<CellModel> {
        let c = &self.cells[cell];
        CellModel::new(c, &self.monthly[c.forcing_point])
    }
}

fn check_years(years: usize) -> Result<()> {
    if years == 0 {
        return Err(Error::Config("years must be at least 1".into()));
    }
    Ok(())
}

/// Monthly trajectory of one cell from `initial`, including the initial
/// state; length `12·years + 1`. The nutrient ramp starts with the run.
pub fn spinup_cell(world: &World, cell: usize, years: usize, initial: &PoolState) -> Result<Vec<PoolState>> {
    check_years(years)?;
    let model = world.cell_model(cell)?;
    let mut c = model.from_state(initial)?;
    let mut traj = Vec::with_capacity(12 * years + 1);
    traj.push(model.to_state(&c));
    model.run(&mut c, 0, 12 * years, RunOptions::COLD_START, |_, c| traj.push(model.to_state(c)));
    Ok(traj)
}

/// States of every cell after `years` of spin-up from `initial` (zeros by default).
pub fn spinup(world: &World, years: usize, initial: Option<&[PoolState]>) -> Result<Vec<PoolState>> {
    check_years(years)?;
    let n = world.cells.len();
    if let Some(init) = initial {
        if init.len() != n {
            return Err(Error::Dimension(format!("{} initial states for {n} cells", init.len())));
        }
    }
    (0..n)
        .map(|i| {
            let model = world.cell_model(i)?;
            let mut c = match initial {
                Some(init) => model.from_state(&init[i])?,
                None => vec![0.0; model.n_pools()],
            };
            model.run(&mut c, 0, 12 * years, RunOptions::COLD_START, |_, _| {});
            Ok(model.to_state(&c))
        })
        .collect()
}

/// Mean state over the final `window_years` of a run of `years` from `initial`.
pub fn final_window_mean(model: &CellModel, initial: &[f64], years: usize, window_years: usize, opts: RunOptions) -> PoolState {
    let months = 12 * years;
    let from = months - 12 * window_years.min(years);
    let mut c = initial.to_vec();
    let mut acc = vec![0.0; c.len()];
    model.run(&mut c, 0, months, opts, |m, c| {
        if m >= from {
            acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
        }
    });
    let n = (months - from) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    model.to_state(&acc)
}

pub fn analytic_equilibrium(world: &World) -> Result<Vec<EquilibriumState>> {
    (0..world.cells.len())
        .map(|i| Ok(world.cell_model(i)?.equilibrium()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestartOptions {
    pub years: usize,
    pub forcing: ForcingMode,
}

impl Default for RestartOptions {
    fn default() -> Self {
        Self {
            years: 100,
            forcing: ForcingMode::Seasonal,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDrift {
    pub pool: PoolKind,
    /// Median per-entry relative distance to equilibrium of the initial state.
    pub dist_before: f64,
    /// Same, for the mean over the final window.
    pub dist_after: f64,
    /// Relative change of the global total between the last two windows.
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub years: usize,
    pub window_years: usize,
    pub pools: Vec<PoolDrift>,
}

impl DriftReport {
    pub fn get(&self, pool: PoolKind) -> &PoolDrift {
        self.pools.iter().find(|d| d.pool == pool).expect("all pools reported")
    }

    pub fn max_slow_drift(&self) -> f64 {
        PoolKind::SLOW.iter().map(|&p| self.get(p).drift).fold(0.0, f64::max)
    }

    pub fn max_fast_dist_after(&self) -> f64 {
        PoolKind::FAST.iter().map(|&p| self.get(p).dist_after).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("pool,dist_before,dist_after,drift\n");
        for d in &self.pools {
            s.push_str(&format!("{},{:.6e},{:.6e},{:.6e}\n", d.pool.name(), d.dist_before, d.dist_after, d.drift));
        }
        s
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median per-entry relative distance of `states` to `reference` for one pool.
pub fn median_rel_distance(states: &[PoolState], reference: &[PoolState], pool: PoolKind) -> f64 {
    median(
        states
            .iter()
            .zip(reference)
            .flat_map(|(s, r)| s.get(pool).iter().zip(r.get(pool)))
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
            .collect(),
    )
}

pub fn restart_run(initial: &[PoolState], world: &World, years: usize) -> Result<(Vec<PoolState>, DriftReport)> {
    restart_run_with(
        initial,
        world,
        RestartOptions {
            years,
            ..Default::default()
        },
    )
}

/// Integrates every cell from `initial` with the developed nutrient
/// limitation and reports distance to equilibrium before and after.
/// Returns the terminal states.
pub fn restart_run_with(initial: &[PoolState], world: &World, opts: RestartOptions) -> Result<(Vec<PoolState>, DriftReport)> {
    check_years(opts.years)?;
    if initial.len() != world.cells.len() {
        return Err(Error::Dimension(format!(
            "{} initial states for {} cells",
            initial.len(),
            world.cells.len()
        )));
    }
    let window = if opts.years >= 2 * world.years {
        world.years
    } else {
        (opts.years / 2).max(1)
    };
    let months = 12 * opts.years;
    let last_from = months - 12 * window;
    let prev_from = last_from.saturating_sub(12 * window);
    let run_opts = RunOptions {
        forcing: opts.forcing,
        nutrient: NutrientMode::Asymptotic,
    };

    let mut finals = Vec::with_capacity(initial.len());
    let mut last_means = Vec::with_capacity(initial.len());
    let mut prev_means = Vec::with_capacity(initial.len());
    let mut equilibria = Vec::with_capacity(initial.len());
    for (i, init) in initial.iter().enumerate() {
        let model = world.cell_model(i)?;
        let mut c = model.from_state(init)?;
        let mut last = vec![0.0; c.len()];
        let mut prev = vec![0.0; c.len()];
        model.run(&mut c, 0, months, run_opts, |m, c| {
            let acc = if m >= last_from {
                &mut last
            } else if m >= prev_from {
                &mut prev
            } else {
                return;
            };
            acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
        });
        let n_last = (months - last_from) as f64;
        let n_prev = (last_from - prev_from).max(1) as f64;
        last.iter_mut().for_each(|a| *a /= n_last);
        prev.iter_mut().for_each(|a| *a /= n_prev);
        finals.push(model.to_state(&c));
        last_means.push(model.to_state(&last));
        prev_means.push(if last_from > prev_from {
            model.to_state(&prev)
        } else {
            init.clone()
        });
        equilibria.push(model.equilibrium());
    }

    let mut initial_full = Vec::with_capacity(initial.len());
    for (i, s) in initial.iter().enumerate() {
        let model = world.cell_model(i)?;
        initial_full.push(model.to_state(&model.from_state(s)?));
    }
    let total = |states: &[PoolState], pool: PoolKind| -> f64 { states.iter().map(|s| s.get(pool).iter().sum::<f64>()).sum() };
    let pools = PoolKind::ALL
        .iter()
        .map(|&pool| {
            let t_last = total(&last_means, pool);
            let t_prev = total(&prev_means, pool);
            PoolDrift {
                pool,
                dist_before: median_rel_distance(&initial_full, &equilibria, pool),
                dist_after: median_rel_distance(&last_means, &equilibria, pool),
                drift: (t_last - t_prev).abs() / t_prev.abs().max(1e-12),
            }
        })
        .collect();
    Ok((
        finals,
        DriftReport {
            years: opts.years,
            window_years: window,
            pools,
        },
    ))
}

/// First simulated year at which the annual-mean global total of each pool,
/// spun up from zero, is within `band` (relative) of its equilibrium total.
pub fn years_to_band(world: &World, pools: &[PoolKind], band: f64, max_years: usize) -> Result<Vec<(PoolKind, Option<usize>)>> {
    let models: Vec<CellModel> = (0..world.cells.len()).map(|i| world.cell_model(i)).collect::<Result<_>>()?;
    let eq_total = |pool: PoolKind| -> f64 { models.iter().map(|m| m.equilibrium().get(pool).iter().sum::<f64>()).sum() };
    let targets: Vec<f64> = pools.iter().map(|&p| eq_total(p)).collect();
    let mut states: Vec<Vec<f64>> = models.iter().map(|m| vec![0.0; m.n_pools()]).collect();
    let mut found: Vec<Option<usize>> = vec![None; pools.len()];
    for year in 1..=max_years {
        let mut sums = vec![0.0; pools.len()];
        for (model, c) in models.iter().zip(states.iter_mut()) {
            let mut acc = vec![0.0; c.len()];
            model.run(c, 12 * (year - 1), 12, RunOptions::COLD_START, |_, c| {
                acc.iter_mut().zip(c).for_each(|(a, v)| *a += v / 12.0);
            });
            let s = model.to_state(&acc);
            for (k, &p) in pools.iter().enumerate() {
                sums[k] += s.get(p).iter().sum::<f64>();
            }
        }
        for k in 0..pools.len() {
            if found[k].is_none() && (sums[k] - targets[k]).abs() <= band * targets[k] {
                found[k] = Some(year);
            }
        }
        if found.iter().all(Option::is_some) {
            break;
        }
    }
    Ok(pools.iter().cloned().zip(found).collect())
}
