use super::Param;
use crate::error::{Error, Result};
use crate::rng::{fill_random, Init, SeededRng};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Affine map `x[N×D] · w[D×K] + b[K]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weights: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let [_, k] = weights.dims2("linear")?;
        if bias.shape() != [k] {
            return Err(Error::dim("linear bias", bias.shape(), &[k]));
        }
        Ok(Self {
            weights: Param::new(weights, true),
            bias: Param::new(bias, false),
            input: None,
        })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Config("linear layer dimensions must be positive".into()));
        }
        let w = fill_random(&[inputs, outputs], Init::KaimingUniform { fan_in: inputs }, rng);
        Self::new(w, Tensor::zeros(&[outputs]))
    }

    pub fn inputs(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let [n, d] = x.dims2("linear")?;
        if d != self.inputs() {
            return Err(Error::dim("linear", x.shape(), self.weights.value.shape()));
        }
        let k = self.outputs();
        let mut out = Tensor::zeros(&[n, k]);
        gemm_nn(x.data(), self.weights.value.data(), out.data_mut(), n, d, k);
        for row in out.data_mut().chunks_exact_mut(k) {
            for (v, b) in row.iter_mut().zip(self.bias.value.data()) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let out = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Usage("linear backward called before forward".into()))?;
        let (n, d, k) = (x.dim0(), self.inputs(), self.outputs());
        if grad_out.shape() != [n, k] {
            return Err(Error::dim("linear backward", grad_out.shape(), &[n, k]));
        }
        let mut gw = Tensor::zeros(&[d, k]);
        gemm_tn(x.data(), grad_out.data(), gw.data_mut(), n, d, k);
        let mut gb = Tensor::zeros(&[k]);
        for row in grad_out.data().chunks_exact(k) {
            for (acc, g) in gb.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut gx = Tensor::zeros(&[n, d]);
        gemm_nt(grad_out.data(), self.weights.value.data(), gx.data_mut(), n, k, d);
        self.weights.grad = gw;
        self.bias.grad = gb;
        Ok(gx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_grad, check_param_grad};

    #[test]
    fn identity_weights_pass_input() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let lin = Linear::new(eye, Tensor::zeros(&[3])).unwrap();
        let x = SeededRng::new(1).uniform_tensor(&[2, 3], -1.0, 1.0);
        assert_eq!(lin.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_input_broadcasts_bias() {
        let b = Tensor::new(vec![2], vec![0.5, -1.0]).unwrap();
        let lin = Linear::new(Tensor::full(&[4, 2], 3.0), b).unwrap();
        let y = lin.infer(&Tensor::zeros(&[3, 4])).unwrap();
        assert_eq!(y.data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let lin = Linear::init(4, 2, &mut SeededRng::new(1)).unwrap();
        assert!(matches!(
            lin.infer(&Tensor::zeros(&[1, 3])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(2);
        let mut lin = Linear::new(
            rng.uniform_tensor(&[5, 3], -1.0, 1.0),
            rng.uniform_tensor(&[3], -1.0, 1.0),
        )
        .unwrap();
        let x = rng.uniform_tensor(&[4, 5], -1.0, 1.0);
        let probe = rng.uniform_tensor(&[4, 3], -1.0, 1.0);
        let fresh = lin.clone();
        lin.forward(&x).unwrap();
        let gx = lin.backward(&probe).unwrap();
        check_input_grad(&x, &probe, |x| fresh.infer(x).unwrap(), &gx, 1e-6).unwrap();
        let f_w = |w: &Tensor| {
            let mut l = fresh.clone();
            l.weights.value = w.clone();
            l.infer(&x).unwrap()
        };
        check_param_grad(&fresh.weights.value, &probe, f_w, &lin.weights.grad, 1e-6).unwrap();
        let f_b = |b: &Tensor| {
            let mut l = fresh.clone();
            l.bias.value = b.clone();
            l.infer(&x).unwrap()
        };
        check_param_grad(&fresh.bias.value, &probe, f_b, &lin.bias.grad, 1e-6).unwrap();
    }
}
