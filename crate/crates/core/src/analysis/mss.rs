//! Feature-map similarity. `λ = (1 − ρ)/2` from the Pearson correlation of
//! two maps (0 for identical patterns, 1 for inverted ones), and the
//! mean-similarity score `mss = (2/n) Σ_{i<j} λ(i, j)` over a layer's `n` maps.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const MSS_HEADER: &str = "layer,n,mss_score";

/// `n` feature maps of one sample, each `h×w`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl FeatureBank {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if n * h * w != data.len() || h * w == 0 {
            return Err(Error::dim("FeatureBank", &[n, h, w], &[data.len()]));
        }
        Ok(Self { h, w, data })
    }

    /// Splits a `C×H×W` (or `1×C×H×W`) tensor into its channels.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = match *t.shape() {
            [c, h, w] | [1, c, h, w] => (c, h, w),
            _ => return Err(Error::dim("FeatureBank", t.shape(), &[0, 0, 0])),
        };
        Self::new(c, h, w, t.data().to_vec())
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.h * self.w)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, i: usize) -> &[f64] {
        let s = self.h * self.w;
        &self.data[i * s..(i + 1) * s]
    }

    /// Reorders maps so that map `i` becomes `self.map(order[i])`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&i| self.map(i).iter().copied()).collect();
        Self {
            h: self.h,
            w: self.w,
            data,
        }
    }
}

fn centered(x: &[f64]) -> (Vec<f64>, f64) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss = c.iter().map(|v| v * v).sum::<f64>();
    (c, ss)
}

fn lambda_centered(a: &[f64], ssa: f64, b: &[f64], ssb: f64, raw_equal: bool) -> f64 {
    if raw_equal {
        return 0.0;
    }
    match (ssa == 0.0, ssb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.5,
        (false, false) => {
            let cov: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let rho = (cov / (ssa.sqrt() * ssb.sqrt())).clamp(-1.0, 1.0);
            (1.0 - rho) / 2.0
        }
    }
}

/// `λ` for two equally sized maps.
///
/// Constant maps have no correlation; two constant maps score 0 when equal
/// and 1 otherwise, and a constant against a varying map scores 0.5.
pub fn lambda_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("lambda_score", &[a.len()], &[b.len()]));
    }
    let (ca, ssa) = centered(a);
    let (cb, ssb) = centered(b);
    Ok(lambda_centered(&ca, ssa, &cb, ssb, a == b))
}

/// Mean-similarity score of a bank of at least two maps.
pub fn mss_score(bank: &FeatureBank) -> Result<f64> {
    let n = bank.len();
    if n < 2 {
        return Err(Error::Config(format!("mss needs at least two feature maps, got {n}")));
    }
    let prepared: Vec<(Vec<f64>, f64)> = (0..n).map(|i| centered(bank.map(i))).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (a, ssa) = &prepared[i];
            let (b, ssb) = &prepared[j];
            total += lambda_centered(a, *ssa, b, *ssb, bank.map(i) == bank.map(j));
        }
    }
    Ok(2.0 * total / n as f64)
}

/// Eval-mode post-ReLU maps of block `layer`, one bank per sample of `batch`.
pub fn extract_features(model: &Model, layer: usize, batch: &Tensor) -> Result<Vec<FeatureBank>> {
    if batch.dim0() == 0 {
        return Err(Error::Config("need at least one probe sample".into()));
    }
    let acts = model.block_activations(batch, layer)?;
    let s = acts.shape().to_vec();
    (0..s[0])
        .map(|i| FeatureBank::new(s[1], s[2], s[3], acts.slab(i).to_vec()))
        .collect()
}

/// Mean per-sample mss of block `layer` over a batch of inputs.
pub fn layer_mss(model: &Model, layer: usize, images: &Tensor) -> Result<f64> {
    let banks = extract_features(model, layer, images)?;
    let mut total = 0.0;
    for bank in &banks {
        total += mss_score(bank)?;
    }
    Ok(total / banks.len() as f64)
}

/// CSV text for `(layer, n, mss)` rows.
pub fn mss_csv(rows: &[(usize, usize, f64)]) -> String {
    let mut s = format!("{MSS_HEADER}\n");
    for (layer, n, score) in rows {
        writeln!(s, "{layer},{n},{score:.17e}").unwrap();
    }
    s
}
