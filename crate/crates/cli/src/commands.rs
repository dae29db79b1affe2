use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use iea_core::analysis::{ensemble_predict, export_feature_maps, extract_features, mss_csv, mss_score};
use iea_core::checkpoint::{load_checkpoint, save_checkpoint};
use iea_core::data::{load_mnist_dir, parse_amat, standardize, synth_blobs, Dataset, Split};
use iea_core::train::{evaluate, predict_proba, train_with, RunMetrics};
use iea_core::{build_model, Model, ModelConfig};
use rayon::prelude::*;

use crate::error::CliError;
use crate::spec::{DataFormat, RunSpec};

pub const THREADS_ENV: &str = "IEA_THREADS";
pub const SWEEP_HEADER: &str = "m,mean_error,std_error";
pub const RUNS_HEADER: &str = "m,seed,test_error_pct";

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

/// Creates the output directory and writes `runspec.txt`.
pub fn prepare_out(spec: &RunSpec, force: bool) -> Result<(), CliError> {
    let out = &spec.out;
    let io = |e| CliError::Io(out.clone(), e);
    if out.exists() {
        let nonempty = fs::read_dir(out).map_err(io)?.next().is_some();
        if nonempty && !force {
            return Err(CliError::Spec(format!(
                "out: {} is not empty (use --force to write into it)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(io)?;
    write(&out.join("runspec.txt"), &spec.to_text())
}

/// Raw (unstandardized) train and test splits.
fn load_data(spec: &RunSpec) -> Result<(Dataset, Dataset), CliError> {
    let (train, test) = match spec.format {
        DataFormat::Idx => load_mnist_dir(spec.data.as_ref().unwrap())?,
        DataFormat::Amat => parse_amat(spec.data.as_ref().unwrap(), spec.amat_split, spec.transpose)?,
        DataFormat::Synth => {
            let all = synth_blobs(spec.synth_train + spec.synth_test, spec.synth_classes, spec.data_seed)?;
            let (train, test) = all.split_at(spec.synth_train)?;
            (train, test.with_split(Split::Test))
        }
    };
    let limit = |ds: Dataset, l: Option<usize>| match l {
        Some(n) => ds.take(n),
        None => ds,
    };
    Ok((limit(train, spec.limit_train), limit(test, spec.limit_test)))
}

fn model_config(spec: &RunSpec, m: usize, seed: u64, data: &Dataset) -> ModelConfig {
    let mut cfg = ModelConfig::standard(spec.depth, m, seed);
    if let Some(ch) = &spec.channels {
        for (layer, &c) in cfg.layers.iter_mut().zip(ch) {
            layer.out_channels = c;
        }
    }
    cfg.input = data.sample_shape();
    cfg.num_classes = data.num_classes;
    cfg.head_grid = spec.head_grid;
    cfg
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Spec(format!("{THREADS_ENV}: expected a positive integer, got {v:?}")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Spec(format!("{THREADS_ENV}: {e}")))
}

struct Trained {
    m: usize,
    seed: u64,
    metrics: RunMetrics,
}

/// Trains one model per `(m, seed)`, in parallel, saving each under `stem`.
fn train_all(
    spec: &RunSpec,
    jobs: &[(usize, u64)],
    stem: impl Fn(usize, u64) -> String + Sync,
) -> Result<Vec<Trained>, CliError> {
    let (train_raw, test_raw) = load_data(spec)?;
    let (train_ds, test_ds) = standardize(&train_raw, &test_raw)?;
    for &(m, seed) in jobs {
        // reject a bad architecture before any training starts
        build_model(&model_config(spec, m, seed, &train_ds))?;
    }
    let pool = thread_pool()?;
    let results: Vec<Result<Trained, CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, seed)| {
                let mut model = build_model(&model_config(spec, m, seed, &train_ds))?;
                model.normalization = train_ds.normalization;
                let metrics = train_with(&mut model, &train_ds, &test_ds, &spec.sgd, seed, |r| {
                    eprintln!(
                        "m={m} seed={seed} epoch {}: loss {:.4}, train {:.2}%, test {:.2}%",
                        r.epoch, r.train_loss, r.train_error_pct, r.test_error_pct
                    );
                })?;
                let name = stem(m, seed);
                save_checkpoint(&model, spec.out.join(format!("{name}.ckpt")))?;
                metrics.write_csv(spec.out.join(format!("metrics_{name}.csv")))?;
                Ok(Trained { m, seed, metrics })
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn train(spec: &RunSpec) -> Result<(), CliError> {
    let jobs: Vec<(usize, u64)> = spec.seeds.iter().map(|&s| (spec.m, s)).collect();
    let runs = train_all(spec, &jobs, |_, seed| format!("seed{seed}"))?;
    let mut csv = String::from("seed,train_error_pct,test_error_pct\n");
    for r in &runs {
        let last = r.metrics.records.last().unwrap();
        writeln!(
            csv,
            "{},{:.17e},{:.17e}",
            r.seed, last.train_error_pct, last.test_error_pct
        )
        .unwrap();
        println!(
            "seed {}: train error {:.2}%, test error {:.2}%",
            r.seed, last.train_error_pct, last.test_error_pct
        );
    }
    write(&spec.out.join("summary.csv"), &csv)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sweep_m(spec: &RunSpec) -> Result<(), CliError> {
    if spec.seeds.len() < 2 {
        return Err(CliError::Spec(
            "seeds: sweep-m needs at least two seeds for a std".into(),
        ));
    }
    let mut ms = spec.m_list.clone();
    ms.sort_unstable();
    ms.dedup();
    if ms.len() < spec.m_list.len() {
        eprintln!("warning: duplicate values in m_list ignored; sweeping m = {ms:?}");
    }
    let jobs: Vec<(usize, u64)> = ms
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs = train_all(spec, &jobs, |m, seed| format!("m{m}_seed{seed}"))?;
    let mut per_run = format!("{RUNS_HEADER}\n");
    let mut sweep = format!("{SWEEP_HEADER}\n");
    for &m in &ms {
        let errs: Vec<f64> = runs
            .iter()
            .filter(|r| r.m == m)
            .map(|r| {
                let e = r.metrics.final_test_error().unwrap();
                writeln!(per_run, "{m},{},{e:.17e}", r.seed).unwrap();
                e
            })
            .collect();
        let (mean, std) = mean_std(&errs);
        writeln!(sweep, "{m},{mean:.17e},{std:.17e}").unwrap();
        println!("m={m}: test error {mean:.2} ± {std:.2}% over {} seeds", errs.len());
    }
    write(&spec.out.join("runs.csv"), &per_run)?;
    write(&spec.out.join("sweep.csv"), &sweep)
}

/// Loads every checkpoint and the test split standardized for each model.
fn load_models(spec: &RunSpec) -> Result<(Vec<Model>, Dataset), CliError> {
    if spec.checkpoints.is_empty() {
        return Err(CliError::Spec(
            "checkpoints: at least one --checkpoint is required".into(),
        ));
    }
    let (_, test) = load_data(spec)?;
    let models = spec
        .checkpoints
        .iter()
        .map(load_checkpoint)
        .collect::<iea_core::Result<Vec<_>>>()?;
    for (path, model) in spec.checkpoints.iter().zip(&models) {
        let cfg = model.config();
        if cfg.num_classes != test.num_classes || cfg.input != test.sample_shape() {
            return Err(CliError::Incompatible(format!(
                "{} expects {:?} inputs with {} classes, data has {:?} with {}",
                path.display(),
                cfg.input,
                cfg.num_classes,
                test.sample_shape(),
                test.num_classes
            )));
        }
    }
    Ok((models, test))
}

fn prepared(model: &Model, raw: &Dataset) -> Result<Dataset, CliError> {
    match model.normalization {
        Some(n) => Ok(n.apply_dataset(raw)?),
        None => Ok(raw.clone()),
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn eval(spec: &RunSpec) -> Result<(), CliError> {
    let (models, test) = load_models(spec)?;
    let mut csv = String::from("checkpoint,test_error_pct\n");
    for (path, model) in spec.checkpoints.iter().zip(&models) {
        let err = evaluate(model, &prepared(model, &test)?)?;
        writeln!(csv, "{},{err:.17e}", display(path)).unwrap();
        println!("{}: test error {err:.2}%", display(path));
    }
    write(&spec.out.join("eval.csv"), &csv)
}

pub fn ensemble(spec: &RunSpec) -> Result<(), CliError> {
    if spec.checkpoints.len() < 2 {
        return Err(CliError::Spec("checkpoints: an ensemble needs at least two".into()));
    }
    let (models, test) = load_models(spec)?;
    let classes = models[0].config().num_classes;
    if let Some(m) = models.iter().find(|m| m.config().num_classes != classes) {
        return Err(CliError::Incompatible(format!(
            "class counts differ ({classes} and {})",
            m.config().num_classes
        )));
    }
    let mut csv = String::from("model,test_error_pct\n");
    let mut probs = Vec::with_capacity(models.len());
    let mut member_sum = 0.0;
    for (path, model) in spec.checkpoints.iter().zip(&models) {
        let data = prepared(model, &test)?;
        let p = predict_proba(model, &data)?;
        let wrong = p.argmax_rows().iter().zip(&test.labels).filter(|(a, b)| a != b).count();
        let err = 100.0 * wrong as f64 / test.len() as f64;
        member_sum += err;
        writeln!(csv, "{},{err:.17e}", display(path)).unwrap();
        println!("{}: test error {err:.2}%", display(path));
        probs.push(p);
    }
    let ens = ensemble_predict(&probs)?.error_pct(&test.labels)?;
    let mean = member_sum / models.len() as f64;
    writeln!(csv, "ensemble,{ens:.17e}").unwrap();
    println!("mean member error {mean:.2}%, ensemble error {ens:.2}%");
    write(&spec.out.join("ensemble.csv"), &csv)
}

pub fn analyze(spec: &RunSpec) -> Result<(), CliError> {
    if spec.checkpoints.len() != 1 {
        return Err(CliError::Spec("checkpoints: analyze takes exactly one".into()));
    }
    let (models, test) = load_models(spec)?;
    let model = &models[0];
    if spec.probe_index >= test.len() {
        return Err(CliError::Spec(format!(
            "probe_index: {} is out of range for {} test samples",
            spec.probe_index,
            test.len()
        )));
    }
    let probe = prepared(model, &test.subset(&[spec.probe_index]))?;
    let bank = extract_features(model, spec.layer, &probe.images)?.remove(0);
    let files: Vec<PathBuf> = export_feature_maps(&bank, spec.layer, &spec.out)?;
    let score = mss_score(&bank)?;
    write(&spec.out.join("mss.csv"), &mss_csv(&[(spec.layer, bank.len(), score)]))?;
    println!(
        "layer {}: {} feature maps exported, mss score {score:.4}",
        spec.layer,
        files.len()
    );
    Ok(())
}
