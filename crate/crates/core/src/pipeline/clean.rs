use serde::{Deserialize, Serialize};

use super::record::{SampleRecord, Task, N_LAYER_FEATS};
use crate::sim::params::MAX_PFT_CODE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub kept: usize,
    pub bad_pft_code: usize,
    pub below_valid_layers: usize,
}

fn bad_code(r: &SampleRecord) -> bool {
    r.pft_codes.iter().any(|&c| !(0..MAX_PFT_CODE).contains(&c))
}

/// Any carbon reported under the deepest valid layer, in inputs or targets.
fn carbon_below_valid(r: &SampleRecord) -> bool {
    let v = r.valid_layers;
    let inputs = r.layered.iter().skip(v * N_LAYER_FEATS).any(|&x| x != 0.0);
    let targets = Task::ALL
        .iter()
        .filter(|t| t.is_layered())
        .any(|&t| r.targets.get(t).iter().skip(v).any(|&x| x != 0.0));
    inputs || targets
}

/// Drops non-physical records: invalid PFT codes, or carbon below the deepest valid layer.
pub fn clean(samples: Vec<SampleRecord>) -> (Vec<SampleRecord>, CleanReport) {
    let mut report = CleanReport::default();
    let kept: Vec<SampleRecord> = samples
        .into_iter()
        .filter(|r| {
            if bad_code(r) {
                report.bad_pft_code += 1;
                false
            } else if carbon_below_valid(r) {
                report.below_valid_layers += 1;
                false
            } else {
                true
            }
        })
        .collect();
    report.kept = kept.len();
    log::info!(
        "clean: kept {}, dropped {} with invalid PFT codes and {} with carbon below the valid soil depth",
        report.kept,
        report.bad_pft_code,
        report.below_valid_layers
    );
    (kept, report)
}
