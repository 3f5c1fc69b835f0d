use crate::error::{Error, Result};
use crate::numerics::Scalar;
use crate::params::ParamSet;

/// Adam with decoupled weight decay, over the trainable partition only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(lr: f64, beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "invalid optimizer settings lr={lr} betas=({beta1}, {beta2}) weight_decay={weight_decay}"
            )));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor that holds a gradient.
    pub fn step<S: Scalar>(&mut self, params: &ParamSet<S>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (name, t) in params.trainable() {
            let Some(g) = t.grad() else { continue };
            let slot = match self.moments.iter().position(|(n, _, _)| n == name) {
                Some(i) => i,
                None => {
                    self.moments.push((name.to_string(), vec![0.0; g.len()], vec![0.0; g.len()]));
                    self.moments.len() - 1
                }
            };
            let (_, m, v) = &mut self.moments[slot];
            let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);
            t.update_data(|d| {
                for i in 0..d.len() {
                    let gi = g[i].to_f64c();
                    m[i] = b1 * m[i] + (1.0 - b1) * gi;
                    v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    let p = d[i].to_f64c();
                    d[i] = S::of(p - lr * (mh / (vh.sqrt() + eps) + wd * p));
                }
            });
        }
    }
}
