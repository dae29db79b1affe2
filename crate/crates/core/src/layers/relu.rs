use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `max(0, x)`; the returned mask marks strictly positive inputs.
pub fn relu_forward(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    (x.map(|v| if v > 0.0 { v } else { 0.0 }), mask)
}

/// Passes the gradient where the input was positive; zero at and below 0.
pub fn relu_backward(grad_out: &Tensor, mask: &[bool]) -> Result<Tensor> {
    if grad_out.len() != mask.len() {
        return Err(Error::dim("relu_backward", grad_out.shape(), &[mask.len()]));
    }
    let mut g = grad_out.clone();
    for (v, &on) in g.data_mut().iter_mut().zip(mask) {
        *v = if on { *v } else { 0.0 };
    }
    Ok(g)
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let (y, mask) = relu_forward(x);
        self.mask = Some(mask);
        y
    }

    /// [`Relu::forward`] reusing the input buffer.
    pub fn forward_owned(&mut self, mut x: Tensor) -> Tensor {
        let mut mask = Vec::with_capacity(x.len());
        for v in x.data_mut() {
            let on = *v > 0.0;
            mask.push(on);
            *v = if on { *v } else { 0.0 };
        }
        self.mask = Some(mask);
        x
    }

    /// [`Relu::backward`] reusing the gradient buffer.
    pub fn backward_owned(&mut self, mut grad_out: Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("relu backward called before forward".into()))?;
        if grad_out.len() != mask.len() {
            return Err(Error::dim("relu_backward", grad_out.shape(), &[mask.len()]));
        }
        for (v, &on) in grad_out.data_mut().iter_mut().zip(mask) {
            *v = if on { *v } else { 0.0 };
        }
        Ok(grad_out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::Usage("relu backward called before forward".into()))?;
        relu_backward(grad_out, mask)
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}
