//! Inner ensemble average of convolutions.
//!
//! An IEA layer holds `m` convolutions with identical hyper-parameters and
//! independently drawn weights. Its output is the element-wise mean of the
//! member outputs. Since all members see the same input, the im2col lowering
//! is computed once and shared.

use super::conv::{bias_planes, conv_from_cache, conv_grads_from_cache, conv_sample_into, ConvCache, ConvParams};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct IeaParams {
    members: Vec<ConvParams>,
}

impl IeaParams {
    pub fn new(members: Vec<ConvParams>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("IEA layer needs at least one member".into()))?;
        if let Some(i) = members.iter().position(|p| !p.same_hyperparams(first)) {
            return Err(Error::Config(format!(
                "IEA member {i} differs from member 0 in shape, stride or padding"
            )));
        }
        Ok(Self { members })
    }

    /// `m` members, each initialized with its own draws from `rng`.
    pub fn init(
        m: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        let members = (0..m)
            .map(|_| ConvParams::init(in_channels, out_channels, kernel, stride, padding, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members)
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[ConvParams] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [ConvParams] {
        &mut self.members
    }

    pub fn out_channels(&self) -> usize {
        self.members[0].out_channels()
    }

    pub fn in_channels(&self) -> usize {
        self.members[0].in_channels()
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(ConvParams::param_count).sum()
    }
}

#[derive(Clone, Debug)]
pub struct IeaCache {
    shared: ConvCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IeaGrads {
    pub input: Option<Tensor>,
    /// `(weights, bias)` gradient per member, in member order.
    pub members: Vec<(Tensor, Tensor)>,
}

/// `(1/m)·Σᵢ conv(x, memberᵢ)`, summed in member order.
pub fn iea_forward(x: &Tensor, p: &IeaParams) -> Result<(Tensor, IeaCache)> {
    let geom = p.members[0].geometry(x.shape())?;
    let shared = ConvCache::lower(x, geom);
    let (first, rest) = p.members.split_first().expect("nonempty");
    let mut acc = conv_from_cache(&shared, first);
    if !rest.is_empty() {
        // Per-sample scratch keeps the extra member outputs in cache.
        let biases: Vec<Vec<f64>> = rest
            .iter()
            .map(|member| bias_planes(member, 1, shared.geom.positions()))
            .collect();
        let inv_m = 1.0 / p.m() as f64;
        let mut tmp = vec![0.0; acc.row_len()];
        for s in 0..shared.batch() {
            let dst = acc.slab_mut(s);
            for (member, bias) in rest.iter().zip(&biases) {
                tmp.copy_from_slice(bias);
                conv_sample_into(&shared, member, s, &mut tmp);
                for (a, t) in dst.iter_mut().zip(&tmp) {
                    *a += t;
                }
            }
            for v in dst.iter_mut() {
                *v *= inv_m;
            }
        }
    }
    Ok((acc, IeaCache { shared }))
}

pub fn iea_backward(grad_out: &Tensor, cache: &IeaCache, p: &IeaParams) -> Result<IeaGrads> {
    iea_backward_impl(grad_out, cache, p, true)
}

fn iea_backward_impl(grad_out: &Tensor, cache: &IeaCache, p: &IeaParams, want_input: bool) -> Result<IeaGrads> {
    let m = p.m() as f64;
    // dividing by 1 is exact, so m = 1 can skip the copy
    let scaled;
    let grad = if p.m() == 1 {
        grad_out
    } else {
        scaled = grad_out.map(|g| g / m);
        &scaled
    };
    let mut input: Option<Tensor> = None;
    let mut members = Vec::with_capacity(p.m());
    for member in &p.members {
        let g = conv_grads_from_cache(grad, &cache.shared, member, want_input)?;
        if let Some(gx) = g.input {
            match input.as_mut() {
                Some(acc) => acc.add_assign(&gx)?,
                None => input = Some(gx),
            }
        }
        members.push((g.weights, g.bias));
    }
    Ok(IeaGrads { input, members })
}

/// Stateful IEA layer. With `m = 1` it is exactly a plain convolution.
#[derive(Clone, Debug)]
pub struct IeaLayer {
    pub params: IeaParams,
    /// When false, backward skips the input gradient (first layer of a model).
    pub input_grad: bool,
    cache: Option<IeaCache>,
}

impl IeaLayer {
    pub fn new(params: IeaParams) -> Self {
        Self {
            params,
            input_grad: true,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, cache) = iea_forward(x, &self.params)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass that leaves the backward cache untouched.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        iea_forward(x, &self.params).map(|(out, _)| out)
    }

    /// Stores member gradients; returns the input gradient when enabled.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Option<Tensor>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("IEA backward called before forward".into()))?;
        let grads = iea_backward_impl(grad_out, cache, &self.params, self.input_grad)?;
        for (member, (gw, gb)) in self.params.members.iter_mut().zip(grads.members) {
            member.weights.grad = gw;
            member.bias.grad = gb;
        }
        Ok(grads.input)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
