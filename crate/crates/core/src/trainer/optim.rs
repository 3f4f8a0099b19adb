use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    LinearDecay,
    WarmupThenLinearDecay,
}

/// Learning rate at 0-based `step` of `total`.
pub fn lr_at(schedule: Schedule, lr0: f64, warmup: usize, total: usize, step: usize) -> f64 {
    let (s, t, w) = (step as f64, total as f64, warmup as f64);
    match schedule {
        Schedule::LinearDecay => lr0 * (1.0 - s / t),
        Schedule::WarmupThenLinearDecay if step < warmup => lr0 * s / w,
        Schedule::WarmupThenLinearDecay => lr0 * (1.0 - (s - w) / (t - w)),
    }
}

/// Scales all gradients by `max_norm / norm` when their global L2 norm
/// exceeds `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| {
            let v = v.as_f64();
            v * v
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let c = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v = *v * c;
            }
        }
    }
    norm
}

/// Adam moments for a list of parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. `l2 * param` is added to each
    /// gradient first. Non-finite gradients leave everything untouched and
    /// return an error.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Vec<T>], lr: f64, l2: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch { op: "adam", lhs: vec![params.len()], rhs: vec![grads.len()] });
        }
        if grads.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (T::from_f64(ADAM_BETA1), T::from_f64(ADAM_BETA2));
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        let step = T::from_f64(lr / c1);
        let inv_c2 = T::from_f64(1.0 / c2);
        let eps = T::from_f64(ADAM_EPS);
        let decay = T::from_f64(l2);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            if p.len() != grads[i].len() {
                return Err(Error::ShapeMismatch { op: "adam", lhs: p.shape().to_vec(), rhs: vec![grads[i].len()] });
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j] + decay * *w;
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                *w = *w - step * m[j] / ((v[j] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
