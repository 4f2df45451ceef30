use super::TrainConfig;
use crate::error::{Error, Result};
use crate::gnn::{GnnModel, Mat, Param};

/// Adam with decoupled weight decay. After each step parameters are rounded
/// to f32 so the model stays exactly serializable.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig, model: &GnnModel) -> Self {
        let zeros: Vec<Mat> = model
            .params
            .iter()
            .map(|p| Mat::zeros(p.value.rows(), p.value.cols()))
            .collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Param], grads: &[Mat]) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                *x -= self.lr * (update + self.weight_decay * *x);
            }
            p.value.round_to_f32();
            if !p.value.is_finite() {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        Ok(())
    }
}
