use super::Param;
use crate::error::{Error, Result};
use crate::im2col::{col2im_add, im2col_into, ConvGeometry};
use crate::rng::{fill_random, Init, SeededRng};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Weights `[Cout, Cin, kh, kw]`, bias `[Cout]`, stride and zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weights: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [cout, _, _, _] = weights.dims4("ConvParams")?;
        if bias.shape() != [cout] {
            return Err(Error::dim("ConvParams bias", bias.shape(), &[cout]));
        }
        if stride == 0 {
            return Err(Error::Config("conv stride must be positive".into()));
        }
        Ok(Self {
            weights: Param::new(weights, true),
            bias: Param::new(bias, false),
            stride,
            padding,
        })
    }

    /// Kaiming-uniform weights with `fan_in = Cin·k·k`, zero bias.
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(Error::Config("conv channels and kernel size must be positive".into()));
        }
        let shape = [out_channels, in_channels, kernel, kernel];
        let fan_in = in_channels * kernel * kernel;
        let w = fill_random(&shape, Init::KaimingUniform { fan_in }, rng);
        Self::new(w, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn out_channels(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.value.shape();
        (s[2], s[3])
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// True when both convolutions have the same shapes, stride and padding.
    pub fn same_hyperparams(&self, other: &ConvParams) -> bool {
        self.weights.value.shape() == other.weights.value.shape()
            && self.stride == other.stride
            && self.padding == other.padding
    }

    pub(crate) fn geometry(&self, input_shape: &[usize]) -> Result<ConvGeometry> {
        let [_, c, h, w] = match *input_shape {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::dim("conv", input_shape, &[0, 0, 0, 0])),
        };
        if c != self.in_channels() {
            return Err(Error::dim("conv channels", input_shape, self.weights.value.shape()));
        }
        ConvGeometry::new((c, h, w), self.kernel(), self.stride, self.padding)
    }
}

/// Lowered input of a convolution: one column matrix per sample. Members of
/// an IEA layer share a single cache since they see the same input.
#[derive(Clone, Debug)]
pub struct ConvCache {
    pub(crate) input_shape: Vec<usize>,
    pub(crate) geom: ConvGeometry,
    pub(crate) cols: Vec<f64>,
}

impl ConvCache {
    pub(crate) fn lower(x: &Tensor, geom: ConvGeometry) -> Self {
        let n = x.dim0();
        let per = geom.patch_len() * geom.positions();
        let mut cols = vec![0.0; n * per];
        for (s, chunk) in cols.chunks_exact_mut(per).enumerate() {
            im2col_into(x.slab(s), &geom, chunk);
        }
        Self {
            input_shape: x.shape().to_vec(),
            geom,
            cols,
        }
    }

    pub(crate) fn batch(&self) -> usize {
        self.input_shape[0]
    }

    fn sample_cols(&self, s: usize) -> &[f64] {
        let per = self.geom.patch_len() * self.geom.positions();
        &self.cols[s * per..(s + 1) * per]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Adds sample `s` of the convolution to `dst`, which must hold the bias
/// broadcast over positions (see [`bias_planes`]).
pub(crate) fn conv_sample_into(cache: &ConvCache, p: &ConvParams, s: usize, dst: &mut [f64]) {
    let (cout, k, np) = (p.out_channels(), cache.geom.patch_len(), cache.geom.positions());
    gemm_nn(p.weights.value.data(), cache.sample_cols(s), dst, cout, k, np);
}

/// `n` copies of the bias, each value repeated over `positions`.
pub(crate) fn bias_planes(p: &ConvParams, n: usize, positions: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * p.out_channels() * positions);
    for _ in 0..n {
        for &b in p.bias.value.data() {
            out.extend(std::iter::repeat(b).take(positions));
        }
    }
    out
}

pub(crate) fn conv_from_cache(cache: &ConvCache, p: &ConvParams) -> Tensor {
    let g = &cache.geom;
    let n = cache.batch();
    let shape = vec![n, p.out_channels(), g.out_h(), g.out_w()];
    let mut out = Tensor::new(shape, bias_planes(p, n, g.positions())).expect("sized to shape");
    for s in 0..n {
        conv_sample_into(cache, p, s, out.slab_mut(s));
    }
    out
}

pub(crate) fn conv_grads_from_cache(
    grad_out: &Tensor,
    cache: &ConvCache,
    p: &ConvParams,
    want_input: bool,
) -> Result<ConvGrads> {
    let g = &cache.geom;
    let (cout, k, np) = (p.out_channels(), g.patch_len(), g.positions());
    let n = cache.batch();
    let expected = [n, cout, g.out_h(), g.out_w()];
    if grad_out.shape() != expected {
        return Err(Error::dim("conv_backward", grad_out.shape(), &expected));
    }
    let w = p.weights.value.data();
    let mut gw = Tensor::zeros(p.weights.value.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let mut gx = want_input.then(|| Tensor::zeros(&cache.input_shape));
    let mut gcols = vec![0.0; if want_input { k * np } else { 0 }];
    for s in 0..n {
        let go = grad_out.slab(s);
        for (acc, row) in gb.data_mut().iter_mut().zip(go.chunks_exact(np)) {
            *acc += row.iter().sum::<f64>();
        }
        gemm_nt(go, cache.sample_cols(s), gw.data_mut(), cout, np, k);
        if let Some(gx) = gx.as_mut() {
            gcols.fill(0.0);
            gemm_tn(w, go, &mut gcols, cout, k, np);
            col2im_add(&gcols, g, gx.slab_mut(s));
        }
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: gb,
    })
}

/// Cross-correlation of `x: N×Cin×H×W` with `p`, returning `N×Cout×Ho×Wo`
/// and the cache needed by [`conv_backward`].
pub fn conv_forward(x: &Tensor, p: &ConvParams) -> Result<(Tensor, ConvCache)> {
    let geom = p.geometry(x.shape())?;
    let cache = ConvCache::lower(x, geom);
    let out = conv_from_cache(&cache, p);
    Ok((out, cache))
}

pub fn conv_backward(grad_out: &Tensor, cache: &ConvCache, p: &ConvParams) -> Result<ConvGrads> {
    conv_grads_from_cache(grad_out, cache, p, true)
}

/// A plain convolution layer (one CNL).
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub params: ConvParams,
    cache: Option<ConvCache>,
}

impl Conv2d {
    pub fn new(params: ConvParams) -> Self {
        Self { params, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (out, cache) = conv_forward(x, &self.params)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Stores parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("conv backward called before forward".into()))?;
        let grads = conv_backward(grad_out, cache, &self.params)?;
        self.params.weights.grad = grads.weights;
        self.params.bias.grad = grads.bias;
        Ok(grads.input.expect("input gradient requested"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_input_grad, check_param_grad};

    /// Direct 5-nested-loop convolution, independent of im2col.
    pub(crate) fn conv_oracle(x: &Tensor, p: &ConvParams) -> Tensor {
        let [n, cin, h, w] = x.dims4("oracle").unwrap();
        let [cout, _, kh, kw] = p.weights.value.dims4("oracle").unwrap();
        let (s, pad) = (p.stride, p.padding as isize);
        let ho = (h + 2 * p.padding - kh) / s + 1;
        let wo = (w + 2 * p.padding - kw) / s + 1;
        let wt = p.weights.value.data();
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for b in 0..n {
            for o in 0..cout {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = p.bias.value.data()[o];
                        for c in 0..cin {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let y = (i * s + u) as isize - pad;
                                    let xx = (j * s + v) as isize - pad;
                                    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                        continue;
                                    }
                                    acc += wt[((o * cin + c) * kh + u) * kw + v]
                                        * x.data()[((b * cin + c) * h + y as usize) * w + xx as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * cout + o) * ho + i) * wo + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_conv(rng: &mut SeededRng, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> ConvParams {
        let w = rng.uniform_tensor(&[cout, cin, k, k], -1.0, 1.0);
        let b = rng.uniform_tensor(&[cout], -1.0, 1.0);
        ConvParams::new(w, b, s, p).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let p = ConvParams::new(Tensor::full(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, 0).unwrap();
        let x = SeededRng::new(1).uniform_tensor(&[2, 1, 3, 3], -1.0, 1.0);
        let (y, cache) = conv_forward(&x, &p).unwrap();
        assert_eq!(y, x);
        let g = SeededRng::new(2).uniform_tensor(y.shape(), -1.0, 1.0);
        let grads = conv_backward(&g, &cache, &p).unwrap();
        assert_eq!(grads.input.unwrap(), g);
    }

    #[test]
    fn zero_weights_give_constant_bias_map() {
        let p = ConvParams::new(
            Tensor::zeros(&[2, 1, 3, 3]),
            Tensor::new(vec![2], vec![0.5, -1.5]).unwrap(),
            1,
            1,
        )
        .unwrap();
        let x = SeededRng::new(3).uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let (y, _) = conv_forward(&x, &p).unwrap();
        assert!(y.slab(0)[..16].iter().all(|&v| v == 0.5));
        assert!(y.slab(0)[16..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = SeededRng::new(4);
        let p = random_conv(&mut rng, 1, 2, 3, 1, 1);
        let x = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let (y, _) = conv_forward(&x, &p).unwrap();
        let want = conv_oracle(&x, &p);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let mut rng = SeededRng::new(5);
        let p = random_conv(&mut rng, 2, 3, 3, 1, 1);
        let x = rng.uniform_tensor(&[2, 2, 5, 5], -1.0, 1.0);
        let (y, cache) = conv_forward(&x, &p).unwrap();
        let grads = conv_backward(&Tensor::zeros(y.shape()), &cache, &p).unwrap();
        assert_eq!(grads.input.unwrap().max_abs(), 0.0);
        assert_eq!(grads.weights.max_abs(), 0.0);
        assert_eq!(grads.bias.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(6);
        let p = random_conv(&mut rng, 2, 3, 3, 2, 1);
        let x = rng.uniform_tensor(&[2, 2, 5, 5], -1.0, 1.0);
        let probe = rng.uniform_tensor(&[2, 3, 3, 3], -1.0, 1.0);
        let (_, cache) = conv_forward(&x, &p).unwrap();
        let grads = conv_backward(&probe, &cache, &p).unwrap();

        let f_x = |x: &Tensor| conv_forward(x, &p).unwrap().0;
        check_input_grad(&x, &probe, f_x, grads.input.as_ref().unwrap(), 1e-6).unwrap();

        let f_w = |w: &Tensor| {
            let mut q = p.clone();
            q.weights.value = w.clone();
            conv_forward(&x, &q).unwrap().0
        };
        check_param_grad(&p.weights.value, &probe, f_w, &grads.weights, 1e-6).unwrap();

        let f_b = |b: &Tensor| {
            let mut q = p.clone();
            q.bias.value = b.clone();
            conv_forward(&x, &q).unwrap().0
        };
        check_param_grad(&p.bias.value, &probe, f_b, &grads.bias, 1e-6).unwrap();
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut rng = SeededRng::new(7);
        let p = random_conv(&mut rng, 2, 3, 3, 1, 1);
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(conv_forward(&x, &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn layer_backward_without_forward_is_usage_error() {
        let mut rng = SeededRng::new(8);
        let mut layer = Conv2d::new(random_conv(&mut rng, 1, 1, 3, 1, 1));
        let err = layer.backward(&Tensor::zeros(&[1, 1, 4, 4])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
