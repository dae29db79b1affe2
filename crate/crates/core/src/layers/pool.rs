//! Max pooling and (adaptive) average pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Flat input index of the winning element of each output cell.
#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Non-overlapping-by-default max pooling over `N×C×H×W`.
///
/// Output extent is `floor((H − window) / stride) + 1`; trailing rows and
/// columns that do not fill a window are dropped. Ties resolve to the first
/// element in row-major scan order.
pub fn maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<(Tensor, MaxPoolCache)> {
    let [n, c, h, w] = x.dims4("maxpool")?;
    if window == 0 || stride == 0 {
        return Err(Error::Config("pool window and stride must be positive".into()));
    }
    if window > h || window > w {
        return Err(Error::Config(format!(
            "pool window {window} is larger than the {h}×{w} input"
        )));
    }
    let (ho, wo) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    let src = x.data();
    for (plane, (dst, arg)) in out
        .data_mut()
        .chunks_exact_mut(ho * wo)
        .zip(argmax.chunks_exact_mut(ho * wo))
        .enumerate()
    {
        let base = plane * h * w;
        let sp = &src[base..base + h * w];
        if window == 2 && stride == 2 {
            for i in 0..ho {
                let (r0, r1) = (2 * i * w, (2 * i + 1) * w);
                for j in 0..wo {
                    let cand = [r0 + 2 * j, r0 + 2 * j + 1, r1 + 2 * j, r1 + 2 * j + 1];
                    let mut best = cand[0];
                    for &c in &cand[1..] {
                        if sp[c] > sp[best] {
                            best = c;
                        }
                    }
                    dst[i * wo + j] = sp[best];
                    arg[i * wo + j] = base + best;
                }
            }
            continue;
        }
        for i in 0..ho {
            for j in 0..wo {
                let mut best = (i * stride) * w + j * stride;
                let mut best_v = sp[best];
                for u in 0..window {
                    let row = (i * stride + u) * w + j * stride;
                    for (v, &val) in sp[row..row + window].iter().enumerate() {
                        if val > best_v {
                            best = row + v;
                            best_v = val;
                        }
                    }
                }
                dst[i * wo + j] = best_v;
                arg[i * wo + j] = base + best;
            }
        }
    }
    Ok((
        out,
        MaxPoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward(grad_out: &Tensor, cache: &MaxPoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::dim("maxpool_backward", grad_out.shape(), &[cache.argmax.len()]));
    }
    let mut dx = Tensor::zeros(&cache.input_shape);
    for (&g, &idx) in grad_out.data().iter().zip(&cache.argmax) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct MaxPool {
    pub window: usize,
    pub stride: usize,
    cache: Option<MaxPoolCache>,
}

impl MaxPool {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window,
            stride,
            cache: None,
        }
    }

    pub fn out_extent(&self, extent: usize) -> Option<usize> {
        (extent >= self.window).then(|| (extent - self.window) / self.stride + 1)
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, cache) = maxpool_forward(x, self.window, self.stride)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        maxpool_forward(x, self.window, self.stride).map(|(y, _)| y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Usage("maxpool backward called before forward".into()))?;
        maxpool_backward(grad_out, cache)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Bin `[start, end)` of output cell `i` when pooling `extent` into `cells`.
fn bin(i: usize, extent: usize, cells: usize) -> (usize, usize) {
    let start = i * extent / cells;
    let end = ((i + 1) * extent).div_ceil(cells);
    (start, end)
}

/// Averages `N×C×H×W` into `N×(C·g·g)`, cell `(p,q)` of channel `c` at
/// column `(c·g + p)·g + q`. Bins follow the usual adaptive-pooling rule
/// and may overlap when `g` does not divide the extent. `g = 1` is global
/// average pooling.
pub fn adaptive_avgpool_forward(x: &Tensor, grid: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("avgpool")?;
    if grid == 0 || grid > h || grid > w {
        return Err(Error::Config(format!(
            "average-pool grid {grid} does not fit a {h}×{w} map"
        )));
    }
    let mut out = Tensor::zeros(&[n, c * grid * grid]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        for p in 0..grid {
            let (r0, r1) = bin(p, h, grid);
            for q in 0..grid {
                let (c0, c1) = bin(q, w, grid);
                let mut acc = 0.0;
                for r in r0..r1 {
                    acc += src[r * w + c0..r * w + c1].iter().sum::<f64>();
                }
                out.data_mut()[(plane * grid + p) * grid + q] = acc / ((r1 - r0) * (c1 - c0)) as f64;
            }
        }
    }
    Ok(out)
}

pub fn adaptive_avgpool_backward(grad_out: &Tensor, input_shape: &[usize], grid: usize) -> Result<Tensor> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::dim("avgpool_backward", input_shape, &[0, 0, 0, 0])),
    };
    if grad_out.shape() != [n, c * grid * grid] {
        return Err(Error::dim("avgpool_backward", grad_out.shape(), &[n, c * grid * grid]));
    }
    let mut dx = Tensor::zeros(input_shape);
    for plane in 0..n * c {
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for p in 0..grid {
            let (r0, r1) = bin(p, h, grid);
            for q in 0..grid {
                let (c0, c1) = bin(q, w, grid);
                let g = grad_out.data()[(plane * grid + p) * grid + q] / ((r1 - r0) * (c1 - c0)) as f64;
                for r in r0..r1 {
                    for v in &mut dst[r * w + c0..r * w + c1] {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Spatial mean per channel: `N×C×H×W → N×C`.
pub fn global_avgpool(x: &Tensor) -> Result<Tensor> {
    adaptive_avgpool_forward(x, 1)
}

/// Spreads `grad / (H·W)` over each spatial map.
pub fn global_avgpool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    adaptive_avgpool_backward(grad_out, input_shape, 1)
}

/// Average pooling head that flattens to `N×(C·g·g)`.
#[derive(Clone, Debug)]
pub struct AvgPool {
    pub grid: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool {
    pub fn new(grid: usize) -> Self {
        Self {
            grid,
            input_shape: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let y = adaptive_avgpool_forward(x, self.grid)?;
        self.input_shape = Some(x.shape().to_vec());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let shape = self
            .input_shape
            .as_ref()
            .ok_or_else(|| Error::Usage("avgpool backward called before forward".into()))?;
        adaptive_avgpool_backward(grad_out, shape, self.grid)
    }

    pub fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_input_grad;
    use crate::rng::SeededRng;

    fn t4(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![1, 1, h, w], v.to_vec()).unwrap()
    }

    #[test]
    fn max_of_single_window() {
        let (y, _) = maxpool_forward(&t4(2, 2, &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn ties_route_gradient_to_first_element() {
        let x = Tensor::full(&[1, 1, 4, 4], 2.0);
        let (y, cache) = maxpool_forward(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
        let dx = maxpool_backward(&Tensor::full(y.shape(), 1.0), &cache).unwrap();
        let hot: Vec<usize> = (0..16).filter(|&i| dx.data()[i] == 1.0).collect();
        assert_eq!(hot, vec![0, 2, 8, 10]);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn matches_window_scan_oracle() {
        let mut rng = SeededRng::new(1);
        let x = rng.uniform_tensor(&[2, 3, 4, 4], -1.0, 1.0);
        let (y, _) = maxpool_forward(&x, 2, 2).unwrap();
        for plane in 0..6 {
            for i in 0..2 {
                for j in 0..2 {
                    let window = [
                        (2 * i, 2 * j),
                        (2 * i, 2 * j + 1),
                        (2 * i + 1, 2 * j),
                        (2 * i + 1, 2 * j + 1),
                    ];
                    let want = window
                        .iter()
                        .map(|&(r, c)| x.data()[plane * 16 + r * 4 + c])
                        .fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(y.data()[plane * 4 + i * 2 + j], want);
                }
            }
        }
    }

    #[test]
    fn odd_extent_truncates() {
        let x = SeededRng::new(2).uniform_tensor(&[1, 2, 7, 5], -1.0, 1.0);
        let (y, _) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 2]);
    }

    #[test]
    fn window_larger_than_input_is_rejected() {
        assert!(maxpool_forward(&Tensor::zeros(&[1, 1, 1, 3]), 2, 2).is_err());
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        // distinct values keep every window away from a tie
        let x = rng.uniform_tensor(&[2, 2, 4, 6], -1.0, 1.0);
        let (y, cache) = maxpool_forward(&x, 2, 2).unwrap();
        let probe = rng.uniform_tensor(y.shape(), -1.0, 1.0);
        let dx = maxpool_backward(&probe, &cache).unwrap();
        check_input_grad(&x, &probe, |x| maxpool_forward(x, 2, 2).unwrap().0, &dx, 1e-6).unwrap();
    }

    #[test]
    fn global_average() {
        assert_eq!(global_avgpool(&t4(2, 2, &[1.0, 3.0, 5.0, 7.0])).unwrap().data(), &[4.0]);
        let c = Tensor::full(&[2, 3, 3, 3], 2.5);
        assert!(global_avgpool(&c).unwrap().data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn grid_two_on_odd_map_uses_overlapping_bins() {
        // 3×3 map split into bins rows {0,1},{1,2} and the same for columns
        let x = t4(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let y = adaptive_avgpool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0, 6.0, 7.0]);
    }

    #[test]
    fn avgpool_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(4);
        for &(grid, h, w) in &[(1, 3, 3), (2, 4, 4), (2, 3, 5), (3, 7, 7)] {
            let x = rng.uniform_tensor(&[2, 2, h, w], -1.0, 1.0);
            let y = adaptive_avgpool_forward(&x, grid).unwrap();
            let probe = rng.uniform_tensor(y.shape(), -1.0, 1.0);
            let dx = adaptive_avgpool_backward(&probe, x.shape(), grid).unwrap();
            check_input_grad(&x, &probe, |x| adaptive_avgpool_forward(x, grid).unwrap(), &dx, 1e-6).unwrap();
        }
    }
}
