//! Mini-batch training loop and evaluation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::data::{epoch_batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::{softmax_cross_entropy, Mode};
use crate::model::Model;
use crate::optim::{lr_at_epoch, sgd_step, SgdConfig};
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_error_pct,test_error_pct,wall_seconds";
/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch.
    pub train_loss: f64,
    /// Error on the mini-batches as they were trained (train-mode BN).
    pub train_error_pct: f64,
    pub test_error_pct: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub fn final_test_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_error_pct)
    }

    /// CSV text. Without `wall`, the last column is dropped, which makes the
    /// output a pure function of the seeds.
    pub fn to_csv(&self, wall: bool) -> String {
        let mut s = String::new();
        let header = if wall {
            METRICS_HEADER
        } else {
            METRICS_HEADER.trim_end_matches(",wall_seconds")
        };
        writeln!(s, "{header}").unwrap();
        for r in &self.records {
            write!(
                s,
                "{},{:e},{:.17e},{:.17e},{:.17e}",
                r.epoch, r.lr, r.train_loss, r.train_error_pct, r.test_error_pct
            )
            .unwrap();
            if wall {
                write!(s, ",{:.3}", r.wall_seconds).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(true)).map_err(|e| Error::io(path, e))
    }
}

fn error_pct(predicted: &[usize], labels: &[usize]) -> f64 {
    let wrong = predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
    100.0 * wrong as f64 / labels.len() as f64
}

/// Eval-mode class probabilities for every sample of `data`.
pub fn predict_proba(model: &Model, data: &Dataset) -> Result<Tensor> {
    model.predict_proba(&data.images, EVAL_CHUNK)
}

/// Eval-mode classification error in percent.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let proba = predict_proba(model, data)?;
    Ok(error_pct(&proba.argmax_rows(), &data.labels))
}

/// Trains `model` in place, evaluating on `test` after every epoch.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &SgdConfig,
    shuffle_seed: u64,
) -> Result<RunMetrics> {
    train_with(model, train, test, cfg, shuffle_seed, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    model: &mut Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &SgdConfig,
    shuffle_seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunMetrics> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Config("training needs at least two samples".into()));
    }
    let mut metrics = RunMetrics::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(epoch, cfg);
        model.set_mode(Mode::Train);
        let (mut loss_sum, mut wrong, mut batches) = (0.0, 0usize, 0usize);
        for idx in epoch_batches(train.len(), cfg.batch_size, shuffle_seed, epoch) {
            let (x, y) = train.batch(&idx);
            let logits = model.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                model.clear_caches();
                return Err(Error::Diverged { epoch, loss });
            }
            wrong += logits.argmax_rows().iter().zip(&y).filter(|(p, l)| p != l).count();
            loss_sum += loss;
            batches += 1;
            model.backward(&grad)?;
            for p in model.params_mut() {
                sgd_step(p, cfg, lr)?;
            }
        }
        model.clear_caches();
        model.set_mode(Mode::Eval);
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            train_error_pct: 100.0 * wrong as f64 / train.len() as f64,
            test_error_pct: evaluate(model, test)?,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        metrics.records.push(record);
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs_shaped;
    use crate::model::{build_model, ModelConfig};

    fn tiny() -> (ModelConfig, Dataset, Dataset, SgdConfig) {
        let mut cfg = ModelConfig::standard(1, 2, 3);
        cfg.input = (1, 6, 6);
        cfg.layers[0].out_channels = 4;
        cfg.num_classes = 3;
        cfg.head_grid = 3;
        let data = synth_blobs_shaped(60, 3, (6, 6), 1).unwrap();
        let (train, test) = data.split_at(45).unwrap();
        let sgd = SgdConfig {
            lr0: 0.1,
            epochs: 8,
            batch_size: 16,
            lr_drop_every: 5,
            ..SgdConfig::default()
        };
        (cfg, train, test, sgd)
    }

    #[test]
    fn learns_separable_blobs() {
        let (cfg, train_ds, test_ds, sgd) = tiny();
        let mut model = build_model(&cfg).unwrap();
        let before = evaluate(&model, &test_ds).unwrap();
        let metrics = train(&mut model, &train_ds, &test_ds, &sgd, 0).unwrap();
        assert_eq!(metrics.records.len(), 8);
        let last = metrics.records.last().unwrap();
        assert!(last.train_loss < metrics.records[0].train_loss);
        assert!(last.test_error_pct <= before);
        assert!(last.test_error_pct < 20.0, "{metrics:?}");
        assert_eq!(last.lr, 0.01);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let (cfg, train_ds, test_ds, mut sgd) = tiny();
        sgd.lr0 = 0.0;
        sgd.epochs = 2;
        let mut model = build_model(&cfg).unwrap();
        let before: Vec<Tensor> = model.params_mut().into_iter().map(|p| p.value.clone()).collect();
        train(&mut model, &train_ds, &test_ds, &sgd, 0).unwrap();
        let after: Vec<Tensor> = model.params_mut().into_iter().map(|p| p.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn overfits_ten_samples() {
        let (mut cfg, _, _, _) = tiny();
        cfg.num_classes = 2;
        let data = synth_blobs_shaped(10, 2, (6, 6), 5).unwrap();
        let sgd = SgdConfig {
            lr0: 0.05,
            epochs: 200,
            batch_size: 10,
            ..SgdConfig::default()
        };
        let mut model = build_model(&cfg).unwrap();
        let mut hit = None;
        train_with(&mut model, &data, &data, &sgd, 0, |r| {
            if hit.is_none() && r.test_error_pct == 0.0 {
                hit = Some(r.epoch);
            }
        })
        .unwrap();
        assert!(hit.is_some());
        assert_eq!(evaluate(&model, &data).unwrap(), 0.0);
    }

    #[test]
    fn csv_layout() {
        let (cfg, train_ds, test_ds, mut sgd) = tiny();
        sgd.epochs = 2;
        let mut model = build_model(&cfg).unwrap();
        let csv = train(&mut model, &train_ds, &test_ds, &sgd, 0).unwrap().to_csv(true);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 6));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (cfg, train_ds, test_ds, mut sgd) = tiny();
        sgd.lr0 = 1e200;
        sgd.momentum = 0.0;
        let mut model = build_model(&cfg).unwrap();
        let err = train(&mut model, &train_ds, &test_ds, &sgd, 0).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. } | Error::NonFinite(_)), "{err}");
    }
}
