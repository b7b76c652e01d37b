use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::total_loss;
use super::surrogate::SurrogateModel;
use crate::error::{Error, Result};
use crate::model::{Architecture, Config, FeatureSelection, InputBatch, InputDims, Params, Precision, Prepared, TrainConfig, Variant};
use crate::pipeline::{Dataset, SampleRecord, Task};
use crate::rng;
use crate::tensor::{Graph, Real};

/// One row of the loss log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch's steps.
    pub train: f64,
    pub val: f64,
    /// Mean (npp − gpp + ar)² on the validation set, normalized units.
    pub phys_residual: f64,
}

pub fn history_csv(history: &[EpochLog]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in history {
        w.serialize(row).map_err(crate::ood::csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

/// Loss summary of a fixed set of samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEval {
    pub total: f64,
    pub phys: f64,
}

struct Run<'a> {
    arch: &'a Architecture,
    weights: Vec<f64>,
    lambda: f64,
    pinn: bool,
}

impl Run<'_> {
    fn batch_loss<T: Real>(&self, params: &Params<T>, samples: &[&Prepared]) -> Result<(f64, f64)> {
        let batch = InputBatch::<T>::new(samples, &self.arch.dims)?;
        let g = Graph::<T>::lenient();
        let bound = params.bind(&g, false);
        let fw = self.arch.forward(&bound, &g, &batch)?;
        let targets: Vec<_> = batch.targets.iter().map(|t| g.constant(t.clone())).collect();
        let initial: Vec<_> = batch.initial.iter().map(|t| g.constant(t.clone())).collect();
        let parts = total_loss(&fw, &targets, self.pinn.then_some(initial.as_slice()), &self.weights, self.lambda)?;
        Ok((parts.total.item().as_f64(), parts.phys.item().as_f64()))
    }

    fn evaluate<T: Real>(&self, params: &Params<T>, samples: &[Prepared], batch_size: usize) -> Result<LossEval> {
        let mut total = 0.0;
        let mut phys = 0.0;
        for chunk in samples.chunks(batch_size) {
            let refs: Vec<&Prepared> = chunk.iter().collect();
            let (t, p) = self.batch_loss(params, &refs)?;
            total += t * chunk.len() as f64;
            phys += p * chunk.len() as f64;
        }
        let n = samples.len().max(1) as f64;
        Ok(LossEval {
            total: total / n,
            phys: phys / n,
        })
    }

    /// One optimizer step on `samples`; returns the loss before the step.
    fn step<T: Real>(&self, params: &mut Params<T>, adam: &mut Adam<T>, samples: &[&Prepared], epoch: usize) -> Result<f64> {
        let batch = InputBatch::<T>::new(samples, &self.arch.dims)?;
        let g = Graph::<T>::lenient();
        let bound = params.bind(&g, true);
        let fw = self.arch.forward(&bound, &g, &batch)?;
        let targets: Vec<_> = batch.targets.iter().map(|t| g.constant(t.clone())).collect();
        let initial: Vec<_> = batch.initial.iter().map(|t| g.constant(t.clone())).collect();
        let parts = total_loss(&fw, &targets, self.pinn.then_some(initial.as_slice()), &self.weights, self.lambda)?;
        let loss = parts.total.item().as_f64();
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let grads = g.backward(parts.total)?;
        if params.iter().any(|(name, _)| grads.get(bound.p(name)).is_some_and(|gr| gr.iter().any(|v| !v.is_finite()))) {
            return Err(Error::Divergence { epoch });
        }
        adam.step(params, &bound, &grads)?;
        Ok(loss)
    }
}

/// Loss of each sample set under `model`, in normalized units.
pub fn evaluate_loss(model: &SurrogateModel, samples: &[Prepared]) -> Result<LossEval> {
    let arch = model.architecture();
    let run = run_for(&arch, &model.config.train, model.variant);
    match model.config.train.precision {
        Precision::F32 => run.evaluate(&model.params.cast::<f32>(), samples, model.config.train.batch_size),
        Precision::F64 => run.evaluate(&model.params, samples, model.config.train.batch_size),
    }
}

fn run_for<'a>(arch: &'a Architecture, cfg: &TrainConfig, variant: Variant) -> Run<'a> {
    Run {
        arch,
        weights: Task::ALL.iter().map(|&t| cfg.weight(t)).collect(),
        lambda: variant.lambda(cfg),
        pinn: variant == Variant::BaselinePinn,
    }
}

/// Seeded hold-out of `val_fraction` of `samples` for early stopping.
fn split_validation(mut samples: Vec<Prepared>, cfg: &TrainConfig, stream: &str) -> (Vec<Prepared>, Vec<Prepared>) {
    let n = samples.len();
    let mut n_val = (n as f64 * cfg.val_fraction).round() as usize;
    if n_val >= n {
        n_val = n - 1;
    }
    samples.shuffle(&mut rng::keyed(cfg.seed, rng::name_hash(stream), 0));
    let val = samples.split_off(n - n_val);
    (samples, val)
}

fn fit<T: Real>(
    arch: &Architecture,
    cfg: &TrainConfig,
    variant: Variant,
    mut params: Params<T>,
    train: &[Prepared],
    val: &[Prepared],
) -> Result<(Params<T>, Vec<EpochLog>)> {
    let run = run_for(arch, cfg, variant);
    let mut adam = Adam::new(&params, cfg.learning_rate);
    let mut best: Option<(f64, Params<T>)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng::keyed(cfg.seed, rng::name_hash("epoch"), epoch as u64));
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Prepared> = chunk.iter().map(|&i| &train[i]).collect();
            sum += run.step(&mut params, &mut adam, &refs, epoch)? * refs.len() as f64;
        }
        let held = if val.is_empty() { train } else { val };
        let ev = run.evaluate(&params, held, cfg.batch_size)?;
        if !ev.total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochLog {
            epoch,
            train: sum / train.len() as f64,
            val: ev.total,
            phys_residual: ev.phys,
        });
        log::debug!("epoch {epoch}: train {:.5} val {:.5}", sum / train.len() as f64, ev.total);
        if best.as_ref().is_none_or(|(b, _)| ev.total < *b) {
            best = Some((ev.total, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best) = best.expect("at least one epoch ran");
    Ok((best, history))
}

fn train_typed<T: Real>(cfg: &Config, variant: Variant, ds: &Dataset) -> Result<SurrogateModel> {
    let n_pft = ds.n_pft();
    let features = FeatureSelection::new(n_pft, &cfg.model.drop_static)?;
    let dims = InputDims {
        n_months: ds.manifest.n_months,
        n_static: features.static_keep.len(),
        n_pft,
    };
    let arch = Architecture::new(cfg.model.clone(), variant, dims);
    let train_recs = ds.train();
    if train_recs.len() < 2 {
        return Err(Error::Config("training needs at least two samples".into()));
    }
    let norm = ds.manifest.norm.clone();
    let prepared: Vec<Prepared> = train_recs.iter().map(|r| crate::model::prepare(r, &norm, &features)).collect();
    let (train, val) = split_validation(prepared, &cfg.train, "validation");
    let params = Params::<T>::init(&arch.specs(), cfg.train.seed);
    log::info!(
        "training {variant}: {} parameters, {} train / {} validation samples",
        params.count(),
        train.len(),
        val.len()
    );
    let (best, history) = fit(&arch, &cfg.train, variant, params, &train, &val)?;
    let mut model = SurrogateModel {
        config: cfg.clone(),
        variant,
        dims,
        features,
        norm,
        params: best.cast(),
        ood: None,
        history,
    };
    model.fit_ood(&train_recs)?;
    Ok(model)
}

/// Trains `variant` on the dataset's training split.
pub fn train(cfg: &Config, variant: Variant, ds: &Dataset) -> Result<SurrogateModel> {
    cfg.validate()?;
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, variant, ds),
        Precision::F64 => train_typed::<f64>(cfg, variant, ds),
    }
}

/// Seeded subsample of `fraction` of the records, at least two.
pub fn subsample<'a>(recs: &[&'a SampleRecord], fraction: f64, seed: u64) -> Result<Vec<&'a SampleRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Range(format!("fine-tune fraction {fraction} is outside (0, 1]")));
    }
    let n = ((recs.len() as f64 * fraction).round() as usize).clamp(2.min(recs.len()), recs.len());
    let mut idx: Vec<usize> = (0..recs.len()).collect();
    idx.shuffle(&mut rng::keyed(seed, rng::name_hash("fine-tune"), 0));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| recs[i]).collect())
}

fn fine_tune_typed<T: Real>(model: &SurrogateModel, recs: &[&SampleRecord], cfg: &TrainConfig) -> Result<SurrogateModel> {
    let prepared = model.prepare(recs)?;
    let (train, val) = split_validation(prepared, cfg, "fine-tune-validation");
    let arch = model.architecture();
    let (best, history) = fit(&arch, cfg, model.variant, model.params.cast::<T>(), &train, &val)?;
    let mut out = model.clone();
    out.params = best.cast();
    out.history = history;
    out.config.train = cfg.clone();
    out.config.train.precision = model.config.train.precision;
    out.fit_ood(recs)?;
    Ok(out)
}

/// Continues training on a seeded `fraction` of the fine dataset's training
/// split, keeping the model's normalization.
pub fn fine_tune(model: &SurrogateModel, fine: &Dataset, fraction: f64, cfg: &TrainConfig) -> Result<SurrogateModel> {
    let recs = subsample(&fine.train(), fraction, cfg.seed)?;
    if recs.len() < 2 {
        return Err(Error::Config("fine-tuning needs at least two samples".into()));
    }
    log::info!("fine-tuning on {} of {} fine samples", recs.len(), fine.train().len());
    match model.config.train.precision {
        Precision::F32 => fine_tune_typed::<f32>(model, &recs, cfg),
        Precision::F64 => fine_tune_typed::<f64>(model, &recs, cfg),
    }
}
