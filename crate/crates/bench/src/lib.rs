//! Shared fixtures for the criterion benchmarks in `benches/`.

use phase_core::model::{prepare, Architecture, FeatureSelection, InputBatch, InputDims, Params, Prepared};
use phase_core::train::loss::total_loss;
use phase_core::workflow::build_dataset;
use phase_core::{Dataset, Graph, GridKind, GridSpec, Real, World};

pub const SEED: u64 = 7;

/// The default coarse world with `years` of forcing.
pub fn coarse_world(years: usize) -> World {
    phase_core::sim::generate_world(SEED, &GridSpec::preset(GridKind::Coarse, SEED), years, 5).expect("coarse world")
}

pub fn coarse_dataset(years: usize, window_years: usize) -> Dataset {
    build_dataset(&coarse_world(years), SEED, window_years, 32).expect("coarse dataset")
}

/// One desk-size network and a fixed training batch.
pub struct StepFixture<T: Real> {
    pub arch: Architecture,
    pub params: Params<T>,
    pub batch: InputBatch<T>,
}

impl<T: Real> StepFixture<T> {
    pub fn new(ds: &Dataset, batch_size: usize) -> Self {
        let cfg = phase_core::Config::desk();
        let sel = FeatureSelection::new(ds.n_pft(), &[]).expect("feature selection");
        let dims = InputDims {
            n_months: ds.manifest.n_months,
            n_static: sel.static_keep.len(),
            n_pft: ds.n_pft(),
        };
        let prepared: Vec<Prepared> = ds
            .train()
            .iter()
            .take(batch_size)
            .map(|r| prepare(r, &ds.manifest.norm, &sel))
            .collect();
        let refs: Vec<&Prepared> = prepared.iter().collect();
        let arch = Architecture::new(cfg.model, phase_core::Variant::Full, dims);
        Self {
            params: Params::<f64>::init(&arch.specs(), SEED).cast(),
            batch: InputBatch::new(&refs, &arch.dims).expect("batch"),
            arch,
        }
    }

    /// Forward pass and loss; with `grad`, also the backward pass.
    pub fn loss(&self, grad: bool) -> f64 {
        let g = Graph::new();
        let b = self.params.bind(&g, grad);
        let fw = self.arch.forward(&b, &g, &self.batch).expect("forward");
        let targets: Vec<_> = self.batch.targets.iter().map(|t| g.constant(t.clone())).collect();
        let loss = total_loss(&fw, &targets, None, &[1.0; 9], 1.0).expect("loss").total;
        if grad {
            g.backward(loss).expect("backward");
        }
        loss.item().as_f64()
    }
}
