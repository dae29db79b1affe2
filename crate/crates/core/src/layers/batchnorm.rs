use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `N×C×H×W` inputs.
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased estimate into the running variance.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0), false),
            beta: Param::new(Tensor::zeros(&[channels]), false),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    fn dims(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let [n, c, h, w] = x.dims4("batchnorm")?;
        if c != self.channels() {
            return Err(Error::dim("batchnorm channels", x.shape(), &[self.channels()]));
        }
        Ok((n, c, h * w))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, hw) = self.dims(x)?;
        let count = n * hw;
        let (mean, var) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::Config(format!(
                        "batchnorm in train mode needs at least 2 values per channel, got {count}"
                    )));
                }
                let (mean, var) = channel_stats(x, n, c, hw);
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..c {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (1.0 - self.momentum) * *rm + self.momentum * mean[ch];
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (1.0 - self.momentum) * *rv + self.momentum * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.data().to_vec(), self.running_var.data().to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
        let mut x_hat = Vec::with_capacity(x.len());
        let mut out = Vec::with_capacity(x.len());
        for (i, plane) in x.data().chunks_exact(hw).enumerate() {
            let ch = i % c;
            let (m, inv, g, b) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let start = x_hat.len();
            x_hat.extend(plane.iter().map(|v| (v - m) * inv));
            out.extend(x_hat[start..].iter().map(|xh| g * xh + b));
        }
        let x_hat = Tensor::new(x.shape().to_vec(), x_hat)?;
        let out = Tensor::new(x.shape().to_vec(), out)?;
        self.cache = Some(BnCache { x_hat, inv_std, mode });
        Ok(out)
    }

    /// Eval-mode forward that touches neither the cache nor the running stats.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, hw) = self.dims(x)?;
        let mut out = x.clone();
        let inv: Vec<f64> = self
            .running_var
            .data()
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        for (i, plane) in out.data_mut().chunks_exact_mut(hw).enumerate() {
            let ch = i % c;
            let (g, b, m) = (
                self.gamma.value.data()[ch],
                self.beta.value.data()[ch],
                self.running_mean.data()[ch],
            );
            for v in plane {
                *v = g * ((*v - m) * inv[ch]) + b;
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("batchnorm backward called before forward".into()))?;
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::dim("batchnorm backward", grad_out.shape(), cache.x_hat.shape()));
        }
        let (n, c, hw) = self.dims(grad_out)?;
        let count = (n * hw) as f64;
        let mut d_gamma = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        let planes = || {
            grad_out
                .data()
                .chunks_exact(hw)
                .zip(cache.x_hat.data().chunks_exact(hw))
                .enumerate()
        };
        for (i, (g_plane, xh_plane)) in planes() {
            let ch = i % c;
            let (mut db, mut dg) = (d_beta[ch], d_gamma[ch]);
            for (&g, &xh) in g_plane.iter().zip(xh_plane) {
                db += g;
                dg += g * xh;
            }
            d_beta[ch] = db;
            d_gamma[ch] = dg;
        }
        let gamma = self.gamma.value.data();
        let mut dx = Vec::with_capacity(grad_out.len());
        for (i, (g_plane, xh_plane)) in planes() {
            let ch = i % c;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let k = scale / count;
                    let (db, dg) = (d_beta[ch], d_gamma[ch]);
                    dx.extend(
                        g_plane
                            .iter()
                            .zip(xh_plane)
                            .map(|(&g, &xh)| k * (count * g - db - xh * dg)),
                    );
                }
                Mode::Eval => dx.extend(g_plane.iter().map(|&g| scale * g)),
            }
        }
        let dx = Tensor::new(grad_out.shape().to_vec(), dx)?;
        self.gamma.grad = Tensor::new(vec![c], d_gamma)?;
        self.beta.grad = Tensor::new(vec![c], d_beta)?;
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Per-channel mean and biased variance, two-pass, fixed summation order.
fn channel_stats(x: &Tensor, n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    for s in 0..n {
        for (ch, m) in mean.iter_mut().enumerate() {
            let off = (s * c + ch) * hw;
            *m += x.data()[off..off + hw].iter().sum::<f64>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut var = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * hw;
            var[ch] += x.data()[off..off + hw]
                .iter()
                .map(|v| (v - mean[ch]) * (v - mean[ch]))
                .sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_grad, check_param_grad};
    use crate::rng::SeededRng;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let mut bn = BatchNorm::new(2);
        let x = SeededRng::new(1).uniform_tensor(&[2, 2, 3, 3], -2.0, 2.0);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
            assert!((a - b).abs() < 1e-4);
        }
        assert_eq!(bn.infer(&x).unwrap(), y);
    }

    #[test]
    fn train_output_is_standardized_per_channel() {
        let mut bn = BatchNorm::new(3);
        let x = SeededRng::new(2).uniform_tensor(&[4, 3, 5, 5], -3.0, 7.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let (mean, var) = channel_stats(&y, 4, 3, 25);
        for ch in 0..3 {
            assert!(mean[ch].abs() < 1e-10);
            assert!((var[ch] - 1.0).abs() < 1e-3, "var {}", var[ch]);
        }
    }

    #[test]
    fn running_stats_follow_momentum_rule() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        // batch mean 2.5, unbiased var 5/3
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn constant_input_does_not_divide_by_zero() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor::full(&[2, 1, 2, 2], 3.0);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.all_finite());
        assert!(bn.running_var.data()[0] > 0.0);
    }

    #[test]
    fn single_value_per_channel_is_rejected_in_train_mode() {
        let mut bn = BatchNorm::new(1);
        assert!(bn.forward(&Tensor::zeros(&[1, 1, 1, 1]), Mode::Train).is_err());
    }

    #[test]
    fn train_mode_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = SeededRng::new(20 + seed);
            let mut bn = BatchNorm::new(2);
            bn.gamma.value = rng.uniform_tensor(&[2], 0.5, 1.5);
            bn.beta.value = rng.uniform_tensor(&[2], -0.5, 0.5);
            let x = rng.uniform_tensor(&[3, 2, 2, 3], -1.0, 1.0);
            let probe = rng.uniform_tensor(x.shape(), -1.0, 1.0);
            let fresh = bn.clone();
            bn.forward(&x, Mode::Train).unwrap();
            let dx = bn.backward(&probe).unwrap();

            let f_x = |x: &Tensor| fresh.clone().forward(x, Mode::Train).unwrap();
            check_input_grad(&x, &probe, f_x, &dx, 1e-6).unwrap();
            let f_g = |g: &Tensor| {
                let mut b = fresh.clone();
                b.gamma.value = g.clone();
                b.forward(&x, Mode::Train).unwrap()
            };
            check_param_grad(&fresh.gamma.value, &probe, f_g, &bn.gamma.grad, 1e-6).unwrap();
            let f_b = |v: &Tensor| {
                let mut b = fresh.clone();
                b.beta.value = v.clone();
                b.forward(&x, Mode::Train).unwrap()
            };
            check_param_grad(&fresh.beta.value, &probe, f_b, &bn.beta.grad, 1e-6).unwrap();
        }
    }
}
