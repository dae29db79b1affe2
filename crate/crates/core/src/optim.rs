//! SGD with momentum, L2 weight decay and a step learning-rate schedule.

use crate::error::{Error, Result};
use crate::layers::Param;

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate is divided by this every `lr_drop_every` epochs.
    pub lr_drop_factor: f64,
    pub lr_drop_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_drop_factor: 10.0,
            lr_drop_every: 100,
            epochs: 350,
            batch_size: 128,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        // zero is allowed so that a run can be frozen
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.lr_drop_factor > 1.0 && self.lr_drop_factor.is_finite()) {
            return bad("lr_drop_factor must exceed 1");
        }
        if self.lr_drop_every == 0 || self.epochs == 0 {
            return bad("lr_drop_every and epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 for batch statistics");
        }
        Ok(())
    }
}

/// `lr0 / factor^floor(epoch / every)` for a 0-based epoch.
pub fn lr_at_epoch(epoch: usize, cfg: &SgdConfig) -> f64 {
    let drops = (epoch / cfg.lr_drop_every) as i32;
    cfg.lr0 / cfg.lr_drop_factor.powi(drops)
}

/// One update: `g += wd·θ` (decayed params only), `v = μv + g`, `θ −= lr·v`.
pub fn sgd_step(param: &mut Param, cfg: &SgdConfig, lr: f64) -> Result<()> {
    if !param.grad.all_finite() {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    if param.grad.shape() != param.value.shape() {
        return Err(Error::dim("sgd_step", param.grad.shape(), param.value.shape()));
    }
    let wd = if param.decay { cfg.weight_decay } else { 0.0 };
    let value = param.value.data_mut();
    for ((theta, v), &g) in value.iter_mut().zip(param.velocity.data_mut()).zip(param.grad.data()) {
        let g = g + wd * *theta;
        *v = cfg.momentum * *v + g;
        *theta -= lr * *v;
    }
    Ok(())
}
