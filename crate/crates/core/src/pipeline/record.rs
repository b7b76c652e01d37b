use serde::{Deserialize, Serialize};

use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;

pub const N_TRAITS: usize = 5;
pub const N_PFT_STATE: usize = 3;
pub const N_LAYER_FEATS: usize = 3;
/// Static columns before the per-PFT cover fractions.
pub const N_STATIC_BASE: usize = 6;
/// Column of the nutrient factor among static features.
pub const STATIC_NUTRIENT: usize = 4;

pub const TRAIT_NAMES: [&str; N_TRAITS] = ["sla", "f_leaf", "f_stem", "f_croot", "k_dead_ref"];
pub const PFT_STATE_NAMES: [&str; N_PFT_STATE] = ["deadcrootc", "deadstemc", "tlai"];
pub const LAYER_FEAT_NAMES: [&str; N_LAYER_FEATS] = ["cwdc", "soil3c", "soil4c"];
const STATIC_BASE_NAMES: [&str; N_STATIC_BASE] = ["lat", "lon", "land_frac", "sand", "nutrient", "alpha"];

pub fn n_static(n_pft: usize) -> usize {
    N_STATIC_BASE + n_pft
}

pub fn static_names(n_pft: usize) -> Vec<String> {
    STATIC_BASE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_pft).map(|j| format!("cover_{j}")))
        .collect()
}

/// Prediction tasks, in head order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Deadcrootc,
    Deadstemc,
    Tlai,
    Cwdc,
    Soil3c,
    Soil4c,
    Gpp,
    Ar,
    Npp,
}

impl Task {
    pub const ALL: [Task; 9] = [
        Task::Deadcrootc,
        Task::Deadstemc,
        Task::Tlai,
        Task::Cwdc,
        Task::Soil3c,
        Task::Soil4c,
        Task::Gpp,
        Task::Ar,
        Task::Npp,
    ];
    /// The six state targets.
    pub const STATE: [Task; 6] = [
        Task::Deadcrootc,
        Task::Deadstemc,
        Task::Tlai,
        Task::Cwdc,
        Task::Soil3c,
        Task::Soil4c,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Deadcrootc => "deadcrootc",
            Task::Deadstemc => "deadstemc",
            Task::Tlai => "tlai",
            Task::Cwdc => "cwdc",
            Task::Soil3c => "soil3c",
            Task::Soil4c => "soil4c",
            Task::Gpp => "gpp",
            Task::Ar => "ar",
            Task::Npp => "npp",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn dim(self, n_pft: usize) -> usize {
        match self {
            Task::Deadcrootc | Task::Deadstemc | Task::Tlai => n_pft,
            Task::Cwdc | Task::Soil3c | Task::Soil4c => N_LAYERS,
            Task::Gpp | Task::Ar | Task::Npp => 1,
        }
    }

    pub fn is_layered(self) -> bool {
        matches!(self, Task::Cwdc | Task::Soil3c | Task::Soil4c)
    }

    pub fn is_flux(self) -> bool {
        matches!(self, Task::Gpp | Task::Ar | Task::Npp)
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

/// Total width of all targets laid end to end in task order.
pub fn target_width(n_pft: usize) -> usize {
    Task::ALL.iter().map(|t| t.dim(n_pft)).sum()
}

/// Equilibrium targets of one cell. Fluxes are long-run monthly means (gC/m²/month).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub deadcrootc: Vec<f64>,
    pub deadstemc: Vec<f64>,
    pub tlai: Vec<f64>,
    pub cwdc: Vec<f64>,
    pub soil3c: Vec<f64>,
    pub soil4c: Vec<f64>,
    pub gpp: f64,
    pub ar: f64,
    pub npp: f64,
}

impl Targets {
    pub fn get(&self, task: Task) -> &[f64] {
        match task {
            Task::Deadcrootc => &self.deadcrootc,
            Task::Deadstemc => &self.deadstemc,
            Task::Tlai => &self.tlai,
            Task::Cwdc => &self.cwdc,
            Task::Soil3c => &self.soil3c,
            Task::Soil4c => &self.soil4c,
            Task::Gpp => std::slice::from_ref(&self.gpp),
            Task::Ar => std::slice::from_ref(&self.ar),
            Task::Npp => std::slice::from_ref(&self.npp),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        Task::ALL.iter().flat_map(|&t| self.get(t).iter().copied()).collect()
    }

    pub fn unflatten(flat: &[f64], n_pft: usize) -> Self {
        let mut o = 0;
        let mut take = |t: Task| {
            let d = t.dim(n_pft);
            let v = flat[o..o + d].to_vec();
            o += d;
            v
        };
        let deadcrootc = take(Task::Deadcrootc);
        let deadstemc = take(Task::Deadstemc);
        let tlai = take(Task::Tlai);
        let cwdc = take(Task::Cwdc);
        let soil3c = take(Task::Soil3c);
        let soil4c = take(Task::Soil4c);
        let gpp = take(Task::Gpp)[0];
        let ar = take(Task::Ar)[0];
        let npp = take(Task::Npp)[0];
        Self {
            deadcrootc,
            deadstemc,
            tlai,
            cwdc,
            soil3c,
            soil4c,
            gpp,
            ar,
            npp,
        }
    }
}

/// One grid cell's inputs in physical units, grouped by modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    /// Monthly forcing, `[n_months × 5]` row-major.
    pub forcing: Vec<f64>,
    pub static_feats: Vec<f64>,
    /// `[n_pft × N_TRAITS]`.
    pub pft_traits: Vec<f64>,
    /// `[n_pft × N_PFT_STATE]`, end of the input window.
    pub pft_state: Vec<f64>,
    /// `[N_LAYERS × N_LAYER_FEATS]`, end of the input window.
    pub layered: Vec<f64>,
    pub pft_codes: Vec<i32>,
    pub valid_layers: usize,
    pub targets: Targets,
}

impl SampleRecord {
    pub fn n_pft(&self) -> usize {
        self.pft_codes.len()
    }

    pub fn n_months(&self) -> usize {
        self.forcing.len() / N_VARS
    }

    pub fn is_tropical(&self) -> bool {
        self.lat.abs() < crate::sim::params::TROPICS_LAT
    }
}
