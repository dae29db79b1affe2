//! N-layer CNN assembled from a declarative [`ModelConfig`].
//!
//! Layout: `depth × [conv-or-IEA → batchnorm → relu → maxpool 2×2]`, then
//! an average-pool head and a linear classifier. A layer with `m = 1` is a
//! plain convolution; `m ≥ 2` is an inner ensemble average of `m` convs.

use std::fmt::Write as _;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::layers::{softmax, AvgPool, BatchNorm, IeaLayer, IeaParams, Linear, MaxPool, Mode, Param, Relu};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const POOL_WINDOW: usize = 2;
pub const POOL_STRIDE: usize = 2;
/// Default channel widths for depths 1, 2 and 3.
pub const DEFAULT_CHANNELS: [usize; 3] = [32, 64, 128];
/// Stream index for the classifier's initialization draws.
const HEAD_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Number of inner ensemble members; 1 is a plain convolution.
    pub m: usize,
}

impl LayerSpec {
    pub fn new(out_channels: usize, m: usize) -> Self {
        Self {
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// `(channels, height, width)` of one input sample.
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
    /// Side of the average-pool output grid; 1 is global average pooling.
    pub head_grid: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// `depth` layers with the default widths (32, 64, 128, then doubling),
    /// the same `m` everywhere, on 1×28×28 inputs with 10 classes.
    pub fn standard(depth: usize, m: usize, seed: u64) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let width = DEFAULT_CHANNELS
                    .get(i)
                    .copied()
                    .unwrap_or_else(|| DEFAULT_CHANNELS[2] << (i - 2));
                LayerSpec::new(width, m)
            })
            .collect();
        Self {
            input: (1, 28, 28),
            layers,
            num_classes: 10,
            head_grid: 2,
            seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Same architecture with every layer's `m` replaced.
    pub fn with_m(&self, m: usize) -> Self {
        let mut cfg = self.clone();
        for l in &mut cfg.layers {
            l.m = m;
        }
        cfg
    }

    /// Checks the config and returns the `(C, H, W)` shape after each block.
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (c0, mut h, mut w) = self.input;
        if c0 == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!("input shape {:?} must be positive", self.input)));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.head_grid == 0 {
            return Err(Error::Config("head_grid must be at least 1".into()));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.m == 0 {
                return Err(Error::Config(format!("layer {i}: m must be at least 1, got 0")));
            }
            if l.out_channels == 0 || l.kernel == 0 || l.stride == 0 {
                return Err(Error::Config(format!(
                    "layer {i}: channels, kernel and stride must be positive"
                )));
            }
            let conv_out = |x: usize| -> Result<usize> {
                let span = x + 2 * l.padding;
                if span < l.kernel || (span - l.kernel) % l.stride != 0 {
                    return Err(Error::Config(format!(
                        "layer {i}: kernel {} stride {} padding {} does not tile extent {x}",
                        l.kernel, l.stride, l.padding
                    )));
                }
                Ok((span - l.kernel) / l.stride + 1)
            };
            let (ch, cw) = (conv_out(h)?, conv_out(w)?);
            if ch < POOL_WINDOW || cw < POOL_WINDOW {
                return Err(Error::Config(format!(
                    "spatial dims exhausted: layer {i} sees a {ch}×{cw} map, too small to pool"
                )));
            }
            h = (ch - POOL_WINDOW) / POOL_STRIDE + 1;
            w = (cw - POOL_WINDOW) / POOL_STRIDE + 1;
            shapes.push((l.out_channels, h, w));
        }
        if h < self.head_grid || w < self.head_grid {
            return Err(Error::Config(format!(
                "final {h}×{w} map is smaller than the {g}×{g} head grid",
                g = self.head_grid
            )));
        }
        Ok(shapes)
    }

    /// `key=value` lines; parsed back by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        let join = |f: fn(&LayerSpec) -> usize| {
            self.layers
                .iter()
                .map(|l| f(l).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let (c, h, w) = self.input;
        writeln!(s, "input={c}x{h}x{w}").unwrap();
        writeln!(s, "channels={}", join(|l| l.out_channels)).unwrap();
        writeln!(s, "m={}", join(|l| l.m)).unwrap();
        writeln!(s, "kernel={}", join(|l| l.kernel)).unwrap();
        writeln!(s, "stride={}", join(|l| l.stride)).unwrap();
        writeln!(s, "padding={}", join(|l| l.padding)).unwrap();
        writeln!(s, "num_classes={}", self.num_classes).unwrap();
        writeln!(s, "head_grid={}", self.head_grid).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("missing model config key {k:?}")))
        };
        let num = |k: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("{k}: {v:?} is not a non-negative integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> { get(k)?.split(',').map(|v| num(k, v.trim())).collect() };
        let dims: Vec<usize> = get("input")?
            .split('x')
            .map(|v| num("input", v))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims[..] else {
            return Err(Error::Config("input must look like CxHxW".into()));
        };
        let channels = list("channels")?;
        let depth = channels.len();
        let per_layer = |k: &str| -> Result<Vec<usize>> {
            let v = list(k)?;
            match v.len() {
                1 => Ok(vec![v[0]; depth]),
                n if n == depth => Ok(v),
                n => Err(Error::Config(format!("{k} has {n} entries for {depth} layers"))),
            }
        };
        let (ms, ks, ss, ps) = (
            per_layer("m")?,
            per_layer("kernel")?,
            per_layer("stride")?,
            per_layer("padding")?,
        );
        let layers = (0..depth)
            .map(|i| LayerSpec {
                out_channels: channels[i],
                kernel: ks[i],
                stride: ss[i],
                padding: ps[i],
                m: ms[i],
            })
            .collect();
        let seed = get("seed")?
            .parse::<u64>()
            .map_err(|_| Error::Config("seed must be an unsigned integer".into()))?;
        Ok(Self {
            input: (c, h, w),
            layers,
            num_classes: num("num_classes", get("num_classes")?)?,
            head_grid: num("head_grid", get("head_grid")?)?,
            seed,
        })
    }
}

/// One `conv-or-IEA → BN → ReLU → maxpool` stage.
#[derive(Clone, Debug)]
pub struct Block {
    pub conv: IeaLayer,
    pub bn: BatchNorm,
    relu: Relu,
    pool: MaxPool,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub blocks: Vec<Block>,
    head_pool: AvgPool,
    pub head: Linear,
    mode: Mode,
    /// Input standardization the model was trained with, if any.
    pub normalization: Option<Normalization>,
}

/// Builds the model with parameters drawn deterministically from `cfg.seed`.
///
/// Layer `l` draws from stream `l` of the seed, members in order, so member
/// 0 of every layer is the same across models that differ only in `m`.
pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    let shapes = cfg.block_shapes()?;
    let mut blocks = Vec::with_capacity(cfg.depth());
    let mut in_ch = cfg.input.0;
    for (i, l) in cfg.layers.iter().enumerate() {
        let mut rng = SeededRng::substream(cfg.seed, i as u64);
        let params = IeaParams::init(l.m, in_ch, l.out_channels, l.kernel, l.stride, l.padding, &mut rng)?;
        let mut conv = IeaLayer::new(params);
        conv.input_grad = i > 0;
        blocks.push(Block {
            conv,
            bn: BatchNorm::new(l.out_channels),
            relu: Relu::default(),
            pool: MaxPool::new(POOL_WINDOW, POOL_STRIDE),
        });
        in_ch = l.out_channels;
    }
    let features = shapes.last().expect("depth ≥ 1").0 * cfg.head_grid * cfg.head_grid;
    let mut rng = SeededRng::substream(cfg.seed, HEAD_STREAM);
    let head = Linear::init(features, cfg.num_classes, &mut rng)?;
    Ok(Model {
        config: cfg.clone(),
        blocks,
        head_pool: AvgPool::new(cfg.head_grid),
        head,
        mode: Mode::Train,
        normalization: None,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = self.config.input;
        match *x.shape() {
            [_, xc, xh, xw] if (xc, xh, xw) == (c, h, w) => Ok(()),
            _ => Err(Error::dim("model input", x.shape(), &[0, c, h, w])),
        }
    }

    /// Forward pass that caches intermediates for [`Model::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.conv.forward(&h)?;
            h = b.bn.forward(&h, mode)?;
            h = b.relu.forward_owned(h);
            h = b.pool.forward(&h)?;
        }
        h = self.head_pool.forward(&h)?;
        self.head.forward(&h)
    }

    /// Backpropagates `grad_logits`, leaving gradients in every [`Param`].
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<()> {
        let mut g = self.head.backward(grad_logits)?;
        g = self.head_pool.backward(&g)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.pool.backward(&g)?;
            g = b.relu.backward_owned(g)?;
            g = b.bn.backward(&g)?;
            match b.conv.backward(&g)? {
                Some(gx) => g = gx,
                None => break,
            }
        }
        Ok(())
    }

    /// Eval-mode forward through the first `upto + 1` blocks, stopping after
    /// the ReLU of block `upto`. No caches or running statistics change.
    pub fn block_activations(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        if upto >= self.blocks.len() {
            return Err(Error::OutOfRange {
                what: "layer index",
                value: upto,
                bound: self.blocks.len(),
            });
        }
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.conv.infer(&h)?;
            h = b.bn.infer(&h)?;
            h = h.map(|v| v.max(0.0));
            if i == upto {
                return Ok(h);
            }
            h = b.pool.infer(&h)?;
        }
        unreachable!("upto < depth")
    }

    /// Eval-mode logits without touching any cache.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.blocks.len() - 1;
        let h = self.block_activations(x, last)?;
        let h = self.blocks[last].pool.infer(&h)?;
        let h = crate::layers::adaptive_avgpool_forward(&h, self.config.head_grid)?;
        self.head.infer(&h)
    }

    /// Eval-mode class probabilities, computed in chunks of `chunk` samples.
    pub fn predict_proba(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.dim0();
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(n * self.config.num_classes);
        let idx: Vec<usize> = (0..n).collect();
        for part in idx.chunks(chunk) {
            let logits = self.infer(&x.gather(part))?;
            out.extend_from_slice(softmax(&logits)?.data());
        }
        Tensor::new(vec![n, self.config.num_classes], out)
    }

    /// Drops all forward caches (they can be large).
    pub fn clear_caches(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_cache();
            b.bn.clear_cache();
            b.relu.clear_cache();
            b.pool.clear_cache();
        }
        self.head_pool.clear_cache();
        self.head.clear_cache();
    }

    /// Every trainable parameter in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            for member in b.conv.params.members_mut() {
                out.push(&mut member.weights);
                out.push(&mut member.bias);
            }
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    /// Named persistent tensors (parameters and BN running stats) in
    /// checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (j, member) in b.conv.params.members().iter().enumerate() {
                out.push((format!("layer{i}.member{j}.weight"), &member.weights.value));
                out.push((format!("layer{i}.member{j}.bias"), &member.bias.value));
            }
            out.push((format!("layer{i}.bn.gamma"), &b.bn.gamma.value));
            out.push((format!("layer{i}.bn.beta"), &b.bn.beta.value));
            out.push((format!("layer{i}.bn.running_mean"), &b.bn.running_mean));
            out.push((format!("layer{i}.bn.running_var"), &b.bn.running_var));
        }
        out.push(("head.weight".into(), &self.head.weights.value));
        out.push(("head.bias".into(), &self.head.bias.value));
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (j, member) in b.conv.params.members_mut().iter_mut().enumerate() {
                out.push((format!("layer{i}.member{j}.weight"), &mut member.weights.value));
                out.push((format!("layer{i}.member{j}.bias"), &mut member.bias.value));
            }
            out.push((format!("layer{i}.bn.gamma"), &mut b.bn.gamma.value));
            out.push((format!("layer{i}.bn.beta"), &mut b.bn.beta.value));
            out.push((format!("layer{i}.bn.running_mean"), &mut b.bn.running_mean));
            out.push((format!("layer{i}.bn.running_var"), &mut b.bn.running_var));
        }
        out.push(("head.weight".into(), &mut self.head.weights.value));
        out.push(("head.bias".into(), &mut self.head.bias.value));
        out
    }

    /// Trainable scalars in the convolution (or IEA) layers only.
    pub fn conv_param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.conv.params.param_count()).sum()
    }
}

/// Total trainable scalars: conv/IEA weights and biases, BN gamma and beta,
/// and the linear head.
pub fn param_count(model: &Model) -> usize {
    let bn: usize = model.blocks.iter().map(|b| b.bn.param_count()).sum();
    model.conv_param_count() + bn + model.head.param_count()
}
