use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Grads, Mat, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Cosine annealing from `lr0` at step 0 to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, lr0: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(lr0);
    }
    let progress = step as f64 / total_steps as f64;
    Ok((0.5 * lr0 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0))
}

/// Adam with L2 weight decay folded into the gradient. Parameters are rounded to `f32`
/// after every update so checkpoints store them exactly.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Adam {
            cfg,
            m: vec![None; n_params],
            v: vec![None; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (id, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let p = params.value_mut(id);
            let m = self.m[id].get_or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v[id].get_or_insert_with(|| Mat::zeros(g.dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g + weight_decay * *p;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *p = f64::from((*p - update) as f32);
            });
        }
    }
}
