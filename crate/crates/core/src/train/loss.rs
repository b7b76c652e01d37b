use crate::error::{Error, Result};
use crate::model::Forward;
use crate::pipeline::Task;
use crate::tensor::{Real, Var};

fn same_shape<T: Real>(a: Var<'_, T>, b: Var<'_, T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error over samples and components.
pub fn task_loss<'g, T: Real>(pred: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(pred, target, "task loss")?;
    Ok(pred.sub(target).square().mean())
}

/// Mean over samples of (npp − (gpp − ar))².
pub fn phys_loss<'g, T: Real>(npp: Var<'g, T>, gpp: Var<'g, T>, ar: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape(npp, gpp, "physics loss")?;
    same_shape(npp, ar, "physics loss")?;
    Ok(npp.sub(gpp.sub(ar)).square().mean())
}

/// Data term plus the delta-state term MSE(initial + delta, target), equally weighted.
pub fn pinn_delta_loss<'g, T: Real>(
    pred_final: Var<'g, T>,
    pred_delta: Var<'g, T>,
    initial: Var<'g, T>,
    target: Var<'g, T>,
) -> Result<Var<'g, T>> {
    same_shape(pred_delta, initial, "delta loss")?;
    Ok(task_loss(pred_final, target)?.add(task_loss(initial.add(pred_delta), target)?))
}

pub struct LossParts<'g, T: Real> {
    pub total: Var<'g, T>,
    /// Per task in [`Task::ALL`] order (before weighting).
    pub tasks: Vec<Var<'g, T>>,
    pub phys: Var<'g, T>,
}

/// Σ w_j·L_j + λ·L_phys. When `initial` is given (delta-state baseline),
/// state tasks use [`pinn_delta_loss`] with the forward pass's deltas.
pub fn total_loss<'g, T: Real>(
    fw: &Forward<'g, T>,
    targets: &[Var<'g, T>],
    initial: Option<&[Var<'g, T>]>,
    weights: &[f64],
    lambda: f64,
) -> Result<LossParts<'g, T>> {
    if targets.len() != Task::ALL.len() || weights.len() != Task::ALL.len() {
        return Err(Error::Contract("one target and one weight per task are required".into()));
    }
    let mut tasks = Vec::with_capacity(targets.len());
    for (i, &task) in Task::ALL.iter().enumerate() {
        let pred = fw.bundle.get(task.name())?;
        let l = match (initial, Task::STATE.iter().position(|&t| t == task)) {
            (Some(init), Some(s)) => {
                let delta = *fw
                    .deltas
                    .get(s)
                    .ok_or_else(|| Error::Contract("delta-state loss needs delta heads".into()))?;
                let start = *init.get(s).ok_or_else(|| Error::Contract("missing initial state".into()))?;
                pinn_delta_loss(pred, delta, start, targets[i])?
            }
            _ => task_loss(pred, targets[i])?,
        };
        tasks.push(l);
    }
    let phys = phys_loss(
        fw.bundle.get(Task::Npp.name())?,
        fw.bundle.get(Task::Gpp.name())?,
        fw.bundle.get(Task::Ar.name())?,
    )?;
    let mut total = phys.scale(lambda);
    for (l, &w) in tasks.iter().zip(weights) {
        if w != 0.0 {
            total = total.add(l.scale(w));
        }
    }
    Ok(LossParts { total, tasks, phys })
}
