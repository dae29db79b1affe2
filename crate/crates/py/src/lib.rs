//! Python bindings: `import iea`.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use iea_core::analysis::{self, ensemble_predict, export_feature_maps, extract_features, layer_mss, FeatureBank};
use iea_core::checkpoint::{load_checkpoint, save_checkpoint};
use iea_core::data::{self, Dataset, Split};
use iea_core::model::LayerSpec;
use iea_core::optim::lr_at_epoch;
use iea_core::{build_model, param_count, train as core_train, Error, Model, ModelConfig, SgdConfig, Tensor};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for iea_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    let n = rows.len();
    Tensor::new(vec![n, cols], rows.into_iter().flatten().collect()).py()
}

/// SGD hyperparameters.
#[pyclass(name = "SgdConfig", module = "iea", skip_from_py_object)]
#[derive(Clone)]
struct PySgdConfig {
    #[pyo3(get, set)]
    lr0: f64,
    #[pyo3(get, set)]
    momentum: f64,
    #[pyo3(get, set)]
    weight_decay: f64,
    #[pyo3(get, set)]
    lr_drop_factor: f64,
    #[pyo3(get, set)]
    lr_drop_every: usize,
    #[pyo3(get, set)]
    epochs: usize,
    #[pyo3(get, set)]
    batch_size: usize,
}

impl PySgdConfig {
    fn inner(&self) -> PyResult<SgdConfig> {
        let cfg = SgdConfig {
            lr0: self.lr0,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_drop_factor: self.lr_drop_factor,
            lr_drop_every: self.lr_drop_every,
            epochs: self.epochs,
            batch_size: self.batch_size,
        };
        cfg.validate().py()?;
        Ok(cfg)
    }
}

#[pymethods]
impl PySgdConfig {
    #[new]
    #[pyo3(signature = (lr0=0.1, momentum=0.9, weight_decay=5e-4, lr_drop_factor=10.0, lr_drop_every=100, epochs=350, batch_size=128))]
    fn new(
        lr0: f64,
        momentum: f64,
        weight_decay: f64,
        lr_drop_factor: f64,
        lr_drop_every: usize,
        epochs: usize,
        batch_size: usize,
    ) -> PyResult<Self> {
        let cfg = Self {
            lr0,
            momentum,
            weight_decay,
            lr_drop_factor,
            lr_drop_every,
            epochs,
            batch_size,
        };
        cfg.inner()?;
        Ok(cfg)
    }

    /// Learning rate for a 0-based epoch.
    fn lr_at_epoch(&self, epoch: usize) -> PyResult<f64> {
        Ok(lr_at_epoch(epoch, &self.inner()?))
    }

    fn __repr__(&self) -> String {
        format!(
            "SgdConfig(lr0={}, momentum={}, weight_decay={}, lr_drop_factor={}, lr_drop_every={}, epochs={}, batch_size={})",
            self.lr0, self.momentum, self.weight_decay, self.lr_drop_factor, self.lr_drop_every, self.epochs, self.batch_size
        )
    }
}

/// Architecture and initialization seed.
#[pyclass(name = "ModelConfig", module = "iea", skip_from_py_object)]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    /// `channels` defaults to 32, 64, 128, then doubling.
    #[new]
    #[pyo3(signature = (depth=1, m=1, seed=0, channels=None, input=(1, 28, 28), num_classes=10, head_grid=2))]
    fn new(
        depth: usize,
        m: usize,
        seed: u64,
        channels: Option<Vec<usize>>,
        input: (usize, usize, usize),
        num_classes: usize,
        head_grid: usize,
    ) -> PyResult<Self> {
        let mut cfg = ModelConfig::standard(depth, m, seed);
        if let Some(ch) = channels {
            if ch.len() != depth {
                return Err(PyValueError::new_err(format!(
                    "expected {depth} channel widths, got {}",
                    ch.len()
                )));
            }
            cfg.layers = ch.into_iter().map(|c| LayerSpec::new(c, m)).collect();
        }
        cfg.input = input;
        cfg.num_classes = num_classes;
        cfg.head_grid = head_grid;
        cfg.block_shapes().py()?;
        Ok(Self { inner: cfg })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ModelConfig::from_text(text).py()?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn with_m(&self, m: usize) -> PyResult<Self> {
        let inner = self.inner.with_m(m);
        inner.block_shapes().py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn m(&self) -> Vec<usize> {
        self.inner.layers.iter().map(|l| l.m).collect()
    }

    #[getter]
    fn channels(&self) -> Vec<usize> {
        self.inner.layers.iter().map(|l| l.out_channels).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn input(&self) -> (usize, usize, usize) {
        self.inner.input
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn head_grid(&self) -> usize {
        self.inner.head_grid
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelConfig(depth={}, m={:?}, seed={}, channels={:?}, input={:?}, num_classes={}, head_grid={})",
            self.depth(),
            self.m(),
            self.seed(),
            self.channels(),
            self.input(),
            self.num_classes(),
            self.head_grid()
        )
    }
}

/// Images as an `(N, C, H, W)` array with integer labels.
#[pyclass(name = "Dataset", module = "iea", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

fn wrap_pair((a, b): (Dataset, Dataset)) -> (PyDataset, PyDataset) {
    (PyDataset { inner: a }, PyDataset { inner: b })
}

#[pymethods]
impl PyDataset {
    /// `images` is flat row-major data of the given `shape`.
    #[new]
    #[pyo3(signature = (images, shape, labels, num_classes, test=false))]
    fn new(
        images: Vec<f64>,
        shape: (usize, usize, usize, usize),
        labels: Vec<usize>,
        num_classes: usize,
        test: bool,
    ) -> PyResult<Self> {
        let (n, c, h, w) = shape;
        let t = Tensor::new(vec![n, c, h, w], images).py()?;
        let split = if test { Split::Test } else { Split::Train };
        Ok(Self {
            inner: Dataset::new(t, labels, num_classes).py()?.with_split(split),
        })
    }

    /// Noisy one-lit-cell 28×28 images, one cell per class.
    #[staticmethod]
    fn synth_blobs(n: usize, num_classes: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: data::synth_blobs(n, num_classes, seed).py()?,
        })
    }

    /// `(train, test)` from a directory of MNIST IDX files, optionally gzipped.
    #[staticmethod]
    fn load_mnist_dir(path: &str) -> PyResult<(Self, Self)> {
        Ok(wrap_pair(data::load_mnist_dir(path).py()?))
    }

    #[staticmethod]
    fn parse_idx(images: &str, labels: &str) -> PyResult<Self> {
        Ok(Self {
            inner: data::parse_idx(images, labels).py()?,
        })
    }

    /// The first `train` rows of an amat file, then the next `test` rows.
    #[staticmethod]
    #[pyo3(signature = (path, train, test, transpose=false))]
    fn parse_amat(path: &str, train: usize, test: usize, transpose: bool) -> PyResult<(Self, Self)> {
        Ok(wrap_pair(data::parse_amat(path, (train, test), transpose).py()?))
    }

    fn take(&self, n: usize) -> Self {
        Self {
            inner: self.inner.take(n),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.images.shape().to_vec()
    }

    #[getter]
    fn images(&self) -> Vec<f64> {
        self.inner.images.data().to_vec()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn split(&self) -> &'static str {
        match self.inner.split {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// `(mean, std)` once standardized.
    #[getter]
    fn normalization(&self) -> Option<(f64, f64)> {
        self.inner.normalization.map(|n| (n.mean, n.std))
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(shape={:?}, num_classes={}, split={})",
            self.shape(),
            self.num_classes(),
            self.split()
        )
    }
}

/// IEA convolutional classifier.
#[pyclass(name = "Model", module = "iea")]
struct PyModel {
    inner: Model,
}

impl PyModel {
    fn prepared(&self, data: &PyDataset) -> PyResult<Dataset> {
        match (self.inner.normalization, data.inner.normalization) {
            (Some(n), None) => n.apply_dataset(&data.inner).py(),
            _ => Ok(data.inner.clone()),
        }
    }
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: &PyModelConfig) -> PyResult<Self> {
        Ok(Self {
            inner: build_model(&config.inner).py()?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).py()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig {
            inner: self.inner.config().clone(),
        }
    }

    fn param_count(&self) -> usize {
        param_count(&self.inner)
    }

    fn conv_param_count(&self) -> usize {
        self.inner.conv_param_count()
    }

    /// Input `(mean, std)` stored with the model, if any.
    #[getter]
    fn normalization(&self) -> Option<(f64, f64)> {
        self.inner.normalization.map(|n| (n.mean, n.std))
    }

    /// Trains in place and returns one dict per epoch. Standardized inputs
    /// also set the model's stored normalization.
    #[pyo3(signature = (train, test, sgd, shuffle_seed=None))]
    fn fit<'py>(
        &mut self,
        py: Python<'py>,
        train: &PyDataset,
        test: &PyDataset,
        sgd: &PySgdConfig,
        shuffle_seed: Option<u64>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = sgd.inner()?;
        let seed = shuffle_seed.unwrap_or(self.inner.config().seed);
        let metrics = core_train::train(&mut self.inner, &train.inner, &test.inner, &cfg, seed).py()?;
        self.inner.normalization = train.inner.normalization;
        metrics
            .records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("lr", r.lr)?;
                d.set_item("train_loss", r.train_loss)?;
                d.set_item("train_error_pct", r.train_error_pct)?;
                d.set_item("test_error_pct", r.test_error_pct)?;
                d.set_item("wall_seconds", r.wall_seconds)?;
                Ok(d)
            })
            .collect()
    }

    /// Eval-mode class probabilities, one row per sample.
    fn predict_proba(&self, data: &PyDataset) -> PyResult<Vec<Vec<f64>>> {
        let data = self.prepared(data)?;
        Ok(rows(&core_train::predict_proba(&self.inner, &data).py()?))
    }

    /// Eval-mode classification error in percent.
    fn evaluate(&self, data: &PyDataset) -> PyResult<f64> {
        core_train::evaluate(&self.inner, &self.prepared(data)?).py()
    }

    /// Post-ReLU maps of `layer` for one sample: `(maps, height, width)`.
    fn feature_maps(&self, layer: usize, data: &PyDataset, index: usize) -> PyResult<(Vec<Vec<f64>>, usize, usize)> {
        let bank = self.bank(layer, data, index)?;
        Ok(((0..bank.len()).map(|i| bank.map(i).to_vec()).collect(), bank.h, bank.w))
    }

    /// Mean per-sample mss of `layer` over the first `count` samples.
    fn layer_mss(&self, layer: usize, data: &PyDataset, count: usize) -> PyResult<f64> {
        let data = self.prepared(data)?.take(count);
        layer_mss(&self.inner, layer, &data.images).py()
    }

    /// Writes one PGM per channel of `layer` for one sample.
    fn export_feature_maps(&self, layer: usize, data: &PyDataset, index: usize, dir: &str) -> PyResult<Vec<String>> {
        let bank = self.bank(layer, data, index)?;
        let paths = export_feature_maps(&bank, layer, dir).py()?;
        Ok(paths.into_iter().map(|p| p.display().to_string()).collect())
    }
}

impl PyModel {
    fn bank(&self, layer: usize, data: &PyDataset, index: usize) -> PyResult<FeatureBank> {
        let data = self.prepared(data)?;
        if index >= data.len() {
            return Err(PyValueError::new_err(format!(
                "sample index {index} out of range for {} samples",
                data.len()
            )));
        }
        let x = data.subset(&[index]).images;
        Ok(extract_features(&self.inner, layer, &x).py()?.remove(0))
    }
}

/// Standardizes both splits with the training mean and std.
#[pyfunction]
fn standardize(train: &PyDataset, test: &PyDataset) -> PyResult<(PyDataset, PyDataset)> {
    Ok(wrap_pair(data::standardize(&train.inner, &test.inner).py()?))
}

/// Feature-map dissimilarity in [0, 1].
#[pyfunction]
fn lambda_score(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    analysis::lambda_score(&a, &b).py()
}

/// Mean pairwise dissimilarity of a bank of equally sized maps.
#[pyfunction]
fn mss_score(maps: Vec<Vec<f64>>, height: usize, width: usize) -> PyResult<f64> {
    let n = maps.len();
    if maps.iter().any(|m| m.len() != height * width) {
        return Err(PyValueError::new_err(format!(
            "every map must hold {height}×{width} values"
        )));
    }
    let bank = FeatureBank::new(n, height, width, maps.into_iter().flatten().collect()).py()?;
    analysis::mss_score(&bank).py()
}

/// Averages member probability rows; returns `(proba, predicted)`.
#[pyfunction]
fn ensemble(members: Vec<Vec<Vec<f64>>>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let tensors = members.into_iter().map(from_rows).collect::<PyResult<Vec<_>>>()?;
    let pred = ensemble_predict(&tensors).py()?;
    Ok((rows(&pred.proba), pred.predicted))
}

#[pymodule]
fn iea(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySgdConfig>()?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_score, m)?)?;
    m.add_function(wrap_pyfunction!(mss_score, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble, m)?)?;
    Ok(())
}
