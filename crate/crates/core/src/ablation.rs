//! Variant comparison: every variant trained per seed and scored on the
//! held-out split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_state_r2, mean_std, task_scores, truth_of, TaskScore};
use crate::model::{Config, Variant};
use crate::ood::csv_err;
use crate::pipeline::{Dataset, Task};
use crate::train::{train, SurrogateModel};

pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub model: SurrogateModel,
    /// Held-out scores, all tasks.
    pub scores: Vec<TaskScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    /// Per state task, mean over seeds.
    pub r2: Vec<f64>,
    pub r2_std: Vec<f64>,
    /// Mean over state tasks of the seed-mean R².
    pub mean_r2: f64,
}

pub struct AblationSuite {
    pub runs: Vec<AblationRun>,
}

/// Held-out scores of a trained model on the dataset's test split.
pub fn score_test(model: &SurrogateModel, ds: &Dataset) -> Result<Vec<TaskScore>> {
    let test = ds.test();
    let pred = model.predict(&test)?;
    task_scores(&pred, &truth_of(&test))
}

/// Trains each variant once per seed with `cfg` (its seed replaced).
pub fn run_ablation_suite(cfg: &Config, ds: &Dataset, seeds: &[u64], variants: &[Variant]) -> Result<AblationSuite> {
    if seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config("ablation needs at least one seed and one variant".into()));
    }
    let mut runs = Vec::with_capacity(seeds.len() * variants.len());
    for &variant in variants {
        for &seed in seeds {
            let mut c = cfg.clone();
            c.train.seed = seed;
            let model = train(&c, variant, ds)?;
            let scores = score_test(&model, ds)?;
            log::info!("{variant} seed {seed}: mean state R² {:.4}", mean_state_r2(&scores));
            runs.push(AblationRun {
                variant,
                seed,
                model,
                scores,
            });
        }
    }
    Ok(AblationSuite { runs })
}

impl AblationSuite {
    pub fn variants(&self) -> Vec<Variant> {
        let mut v: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !v.contains(&r.variant) {
                v.push(r.variant);
            }
        }
        v
    }

    pub fn runs_of(&self, variant: Variant) -> impl Iterator<Item = &AblationRun> {
        self.runs.iter().filter(move |r| r.variant == variant)
    }

    pub fn summary(&self, variant: Variant) -> Option<VariantSummary> {
        let runs: Vec<&AblationRun> = self.runs_of(variant).collect();
        if runs.is_empty() {
            return None;
        }
        let mut r2 = Vec::new();
        let mut r2_std = Vec::new();
        for task in Task::STATE {
            let vals: Vec<f64> = runs
                .iter()
                .map(|r| r.scores.iter().find(|s| s.task == task).map_or(f64::NAN, |s| s.r2))
                .collect();
            let (m, s) = mean_std(&vals);
            r2.push(m);
            r2_std.push(s);
        }
        let mean_r2 = r2.iter().sum::<f64>() / r2.len() as f64;
        Some(VariantSummary {
            variant,
            r2,
            r2_std,
            mean_r2,
        })
    }

    /// One row per state task, one column per variant, seed-mean R².
    pub fn table_csv(&self) -> Result<Vec<u8>> {
        self.table(false)
    }

    /// Same layout, each variant's R² minus the full model's.
    pub fn deltas_csv(&self) -> Result<Vec<u8>> {
        self.table(true)
    }

    fn table(&self, deltas: bool) -> Result<Vec<u8>> {
        let variants = self.variants();
        let sums: Vec<VariantSummary> = variants.iter().filter_map(|&v| self.summary(v)).collect();
        let full = if deltas {
            Some(
                self.summary(Variant::Full)
                    .ok_or_else(|| Error::Contract("deltas need the full model".into()))?,
            )
        } else {
            None
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["task".to_string()];
        header.extend(variants.iter().map(|v| v.name().to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (i, task) in Task::STATE.iter().enumerate() {
            let mut row = vec![task.name().to_string()];
            for s in &sums {
                let base = full.as_ref().map_or(0.0, |f| f.r2[i]);
                row.push(format!("{:.4}", s.r2[i] - base));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Contract(e.to_string()))
    }
}
