//! Lowering of 2-D convolution to matrix products.
//!
//! Column layout: row index `c·kh·kw + u·kw + v`, column index `i·Wo + j`,
//! matching the `[Cout, Cin, kh, kw]` weight layout so that
//! `weights[Cout × (Cin·kh·kw)] · cols` is the convolution output.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        (kernel_h, kernel_w): (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let g = Self {
            channels,
            height,
            width,
            kernel_h,
            kernel_w,
            stride,
            padding,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "kernel, stride and channels must be positive: {self:?}"
            )));
        }
        for (extent, k, axis) in [
            (self.height, self.kernel_h, "height"),
            (self.width, self.kernel_w, "width"),
        ] {
            let span = extent + 2 * self.padding;
            if span < k || (span - k) % self.stride != 0 {
                return Err(Error::Config(format!(
                    "non-integral output {axis}: ({extent} + 2·{} − {k}) / {} must be a whole number ≥ 0",
                    self.padding, self.stride
                )));
            }
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the column matrix: `C·kh·kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    /// Columns of the column matrix: `Ho·Wo`.
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Calls `f(row, col, src)` for every in-bounds tap; `src` indexes the
    /// `C×H×W` input. Out-of-bounds taps are the zero padding and are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = (self.out_h(), self.out_w());
        let p = self.padding as isize;
        for c in 0..self.channels {
            for u in 0..self.kernel_h {
                for v in 0..self.kernel_w {
                    let row = (c * self.kernel_h + u) * self.kernel_w + v;
                    for i in 0..ho {
                        let y = (i * self.stride + u) as isize - p;
                        if y < 0 || y >= self.height as isize {
                            continue;
                        }
                        let base = (c * self.height + y as usize) * self.width;
                        for j in 0..wo {
                            let x = (j * self.stride + v) as isize - p;
                            if x < 0 || x >= self.width as isize {
                                continue;
                            }
                            f(row, i * wo + j, base + x as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Writes the column matrix of one `C×H×W` input into `cols` (overwritten).
pub(crate) fn im2col_into(input: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    debug_assert_eq!(input.len(), g.input_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.positions());
    let (ho, wo, s, p) = (g.out_h(), g.out_w(), g.stride, g.padding);
    let mut rows = cols.chunks_exact_mut(ho * wo);
    for c in 0..g.channels {
        for u in 0..g.kernel_h {
            for v in 0..g.kernel_w {
                let dst = rows.next().expect("patch_len rows");
                let (j_lo, j_hi) = valid_range(wo, g.width, s, p, v);
                for (i, out) in dst.chunks_exact_mut(wo).enumerate() {
                    let y = (i * s + u) as isize - p as isize;
                    if y < 0 || y >= g.height as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &input[(c * g.height + y as usize) * g.width..][..g.width];
                    out[..j_lo].fill(0.0);
                    out[j_hi..].fill(0.0);
                    if s == 1 {
                        let x0 = j_lo + v - p;
                        out[j_lo..j_hi].copy_from_slice(&src[x0..x0 + (j_hi - j_lo)]);
                    } else {
                        for j in j_lo..j_hi {
                            out[j] = src[j * s + v - p];
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `j` whose tap `j·s + v − p` lands inside `0..width`.
fn valid_range(wo: usize, width: usize, s: usize, p: usize, v: usize) -> (usize, usize) {
    let lo = if p > v { (p - v).div_ceil(s) } else { 0 };
    let hi = if width + p > v { (width + p - v).div_ceil(s) } else { 0 };
    let (lo, hi) = (lo.min(wo), hi.min(wo));
    (lo, hi.max(lo))
}

/// Scatter-adds a column matrix back onto a `C×H×W` buffer.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    debug_assert_eq!(out.len(), g.input_len());
    let n = g.positions();
    g.for_each_tap(|row, col, dst| out[dst] += cols[row * n + col]);
}

/// `input: C×H×W` → `(C·kh·kw) × (Ho·Wo)`.
pub fn im2col(input: &Tensor, kernel: (usize, usize), stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry_of(input, kernel, stride, padding)?;
    let mut cols = Tensor::zeros(&[g.patch_len(), g.positions()]);
    im2col_into(input.data(), &g, cols.data_mut());
    Ok(cols)
}

/// Adjoint of [`im2col`]: maps a column matrix back to `C×H×W`, summing
/// overlapping contributions.
pub fn col2im(
    cols: &Tensor,
    (channels, height, width): (usize, usize, usize),
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry::new((channels, height, width), kernel, stride, padding)?;
    if cols.shape() != [g.patch_len(), g.positions()] {
        return Err(Error::dim("col2im", cols.shape(), &[g.patch_len(), g.positions()]));
    }
    let mut out = Tensor::zeros(&[channels, height, width]);
    col2im_add(cols.data(), &g, out.data_mut());
    Ok(out)
}

fn geometry_of(input: &Tensor, kernel: (usize, usize), stride: usize, padding: usize) -> Result<ConvGeometry> {
    match *input.shape() {
        [c, h, w] => ConvGeometry::new((c, h, w), kernel, stride, padding),
        _ => Err(Error::dim("im2col", input.shape(), &[0, 0, 0])),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn one_by_one_kernel_flattens() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cols = im2col(&x, (1, 1), 1, 0).unwrap();
        assert_eq!(cols.shape(), &[1, 4]);
        assert_eq!(cols.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn full_kernel_gives_single_column() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let cols = im2col(&x, (3, 3), 1, 0).unwrap();
        assert_eq!(cols.shape(), &[9, 1]);
        assert!(cols.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_by_two_patches_enumerated_by_hand() {
        // x = [[1,2,3],[4,5,6],[7,8,9]]
        let x = Tensor::new(vec![1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let cols = im2col(&x, (2, 2), 1, 0).unwrap();
        // column j is the patch at output position j, flattened row-major
        let patches = [
            [1.0, 2.0, 4.0, 5.0],
            [2.0, 3.0, 5.0, 6.0],
            [4.0, 5.0, 7.0, 8.0],
            [5.0, 6.0, 8.0, 9.0],
        ];
        let t = cols.transpose2().unwrap();
        for (j, patch) in patches.iter().enumerate() {
            assert_eq!(t.slab(j), patch);
        }
    }

    #[test]
    fn padding_inserts_zeros() {
        let x = Tensor::full(&[1, 2, 2], 1.0);
        let cols = im2col(&x, (3, 3), 1, 1).unwrap();
        assert_eq!(cols.shape(), &[9, 4]);
        // top-left output sees the four real pixels in the lower-right of its window
        let first: Vec<f64> = (0..9).map(|r| cols.data()[r * 4]).collect();
        assert_eq!(first, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn non_integral_output_is_rejected() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let err = im2col(&x, (3, 3), 2, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = SeededRng::new(11);
        for &(c, h, w, k, s, p) in &[(1, 4, 4, 3, 1, 1), (2, 5, 5, 3, 2, 0), (3, 6, 4, 2, 2, 1)] {
            let x = rng.uniform_tensor(&[c, h, w], -1.0, 1.0);
            let cols = im2col(&x, (k, k), s, p).unwrap();
            let y = rng.uniform_tensor(cols.shape(), -1.0, 1.0);
            let lhs = cols.dot(&y).unwrap();
            let rhs = x.dot(&col2im(&y, (c, h, w), (k, k), s, p).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }
}
