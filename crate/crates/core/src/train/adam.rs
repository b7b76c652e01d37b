use crate::error::{Error, Result};
use crate::model::{Bound, Params};
use crate::tensor::{Gradients, Real};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter, in name order.
pub struct Adam<T> {
    lr: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &Params<T>, lr: f64) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        Self { lr, t: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut Params<T>, bound: &Bound<'_, T>, grads: &Gradients<T>) -> Result<()> {
        self.t += 1;
        let c1 = T::from_f64(1.0 / (1.0 - BETA1.powi(self.t)));
        let c2 = T::from_f64(1.0 / (1.0 - BETA2.powi(self.t)));
        let (b1, b2) = (T::from_f64(BETA1), T::from_f64(BETA2));
        let (lr, eps) = (T::from_f64(self.lr), T::from_f64(EPS));
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let g = grads
                .get(bound.p(name))
                .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *x -= lr * (*mi * c1) / ((*vi * c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
