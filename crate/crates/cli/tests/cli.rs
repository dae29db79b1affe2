use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_iea");

fn iea(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("run iea")
}

fn iea_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(BIN).args(args).env(key, value).output().expect("run iea")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "iea failed: {}", stderr(&o));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic training run; returns the output directory.
fn train_synth(root: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = root.join(name);
    let mut args = vec!["train", "--out", s(&out), "--format", "synth"];
    for (flag, value) in [("--channels", "4"), ("--epochs", "3"), ("--batch-size", "20")] {
        if !extra.contains(&flag) {
            args.extend([flag, value]);
        }
    }
    args.extend_from_slice(extra);
    ok(iea(&args));
    out
}

fn without_wall(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').unwrap().0)
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn train_overfits_synthetic_blobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(iea(&[
        "train",
        "--out",
        s(&out),
        "--format",
        "synth",
        "--depth",
        "1",
        "--m",
        "3",
        "--epochs",
        "20",
        "--batch-size",
        "20",
        "--channels",
        "8",
    ]));
    for f in ["runspec.txt", "seed0.ckpt", "metrics_seed0.csv", "summary.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics = fs::read_to_string(out.join("metrics_seed0.csv")).unwrap();
    let last = metrics.lines().last().unwrap();
    let train_err: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(train_err, 0.0, "{metrics}");
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_synth(dir.path(), "a", &["--m", "2", "--seeds", "3"]);
    let b = train_synth(dir.path(), "b", &["--m", "2", "--seeds", "3"]);
    let csv = |d: &Path| without_wall(&fs::read_to_string(d.join("metrics_seed3.csv")).unwrap());
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(
        fs::read(a.join("seed3.ckpt")).unwrap(),
        fs::read(b.join("seed3.ckpt")).unwrap()
    );

    // runspec.txt alone reproduces the run
    let c = dir.path().join("c");
    ok(iea(&["train", "--config", s(&a.join("runspec.txt")), "--out", s(&c)]));
    assert_eq!(csv(&a), csv(&c));
    assert_eq!(
        fs::read(a.join("seed3.ckpt")).unwrap(),
        fs::read(c.join("seed3.ckpt")).unwrap()
    );
}

#[test]
fn seeds_train_in_parallel_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    let run = |out: &Path, threads: &str| {
        let args = [
            "train",
            "--out",
            s(out),
            "--format",
            "synth",
            "--channels",
            "4",
            "--epochs",
            "2",
            "--batch-size",
            "20",
            "--seeds",
            "0,1",
        ];
        ok(iea_env(&args, "IEA_THREADS", threads));
    };
    run(&one, "1");
    run(&two, "2");
    for seed in ["seed0.ckpt", "seed1.ckpt"] {
        assert_eq!(fs::read(one.join(seed)).unwrap(), fs::read(two.join(seed)).unwrap());
    }
    let bad = iea_env(
        &["train", "--out", s(&dir.path().join("x")), "--format", "synth"],
        "IEA_THREADS",
        "0",
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn invalid_m_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = iea(&[
        "train",
        "--out",
        s(&dir.path().join("r")),
        "--format",
        "synth",
        "--m",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("m:"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_and_missing_data_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "format=synth\nlearning_rate=0.1\n").unwrap();
    let o = iea(&["train", "--out", s(&dir.path().join("r")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));
    let o = iea(&["train", "--out", s(&dir.path().join("r2")), "--format", "idx"]);
    assert_eq!(o.status.code(), Some(2));
    let o = iea(&[
        "train",
        "--out",
        s(&dir.path().join("r3")),
        "--format",
        "idx",
        "--data",
        s(&dir.path().join("nope")),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn output_directory_must_be_empty_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_synth(dir.path(), "r", &["--epochs", "1"]);
    let o = iea(&["train", "--out", s(&out), "--format", "synth", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(2));
    ok(iea(&[
        "train",
        "--out",
        s(&out),
        "--format",
        "synth",
        "--epochs",
        "1",
        "--channels",
        "4",
        "--force",
    ]));
}

#[test]
fn sweep_deduplicates_m_and_needs_two_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = ok(iea(&[
        "sweep-m",
        "--out",
        s(&out),
        "--format",
        "synth",
        "--channels",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "20",
        "--m-list",
        "1,1",
        "--seeds",
        "0,1",
    ]));
    assert!(stderr(&o).contains("warning: duplicate"));
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines[0], "m,mean_error,std_error");
    assert_eq!(lines.len(), 2);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    let errs: Vec<f64> = runs
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    let cols: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    let mean = (errs[0] + errs[1]) / 2.0;
    assert!((cols[1] - mean).abs() < 1e-12);
    assert!((cols[2] - (errs[0] - errs[1]).abs() / 2f64.sqrt()).abs() < 1e-12);
    assert!(out.join("m1_seed1.ckpt").exists());

    let o = iea(&[
        "sweep-m",
        "--out",
        s(&dir.path().join("one")),
        "--format",
        "synth",
        "--m-list",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ensemble_of_identical_members_matches_the_member() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_synth(dir.path(), "r", &[]);
    let ck = run.join("seed0.ckpt");
    let out = dir.path().join("ens");
    ok(iea(&[
        "ensemble",
        "--out",
        s(&out),
        "--format",
        "synth",
        "--checkpoint",
        s(&ck),
        "--checkpoint",
        s(&ck),
        "--checkpoint",
        s(&ck),
    ]));
    let csv = fs::read_to_string(out.join("ensemble.csv")).unwrap();
    let errs: Vec<&str> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(errs.len(), 4);
    assert!(errs.iter().all(|e| *e == errs[0]), "{csv}");

    let one = iea(&[
        "ensemble",
        "--out",
        s(&dir.path().join("e1")),
        "--format",
        "synth",
        "--checkpoint",
        s(&ck),
    ]);
    assert_eq!(one.status.code(), Some(2));
}

#[test]
fn ensemble_rejects_mismatched_classes() {
    let dir = tempfile::tempdir().unwrap();
    let four = train_synth(dir.path(), "four", &["--epochs", "1"]).join("seed0.ckpt");
    let three = train_synth(dir.path(), "three", &["--epochs", "1", "--synth-classes", "3"]).join("seed0.ckpt");
    let o = iea(&[
        "ensemble",
        "--out",
        s(&dir.path().join("e")),
        "--format",
        "synth",
        "--checkpoint",
        s(&four),
        "--checkpoint",
        s(&three),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("incompatible checkpoints"), "{}", stderr(&o));
}

#[test]
fn eval_reports_the_training_test_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = train_synth(dir.path(), "r", &[]);
    let out = dir.path().join("eval");
    ok(iea(&[
        "eval",
        "--out",
        s(&out),
        "--format",
        "synth",
        "--checkpoint",
        s(&run.join("seed0.ckpt")),
    ]));
    let eval = fs::read_to_string(out.join("eval.csv")).unwrap();
    let metrics = fs::read_to_string(run.join("metrics_seed0.csv")).unwrap();
    let want = metrics.lines().last().unwrap().split(',').nth(4).unwrap();
    assert_eq!(eval.lines().nth(1).unwrap().rsplit(',').next().unwrap(), want);
}

#[test]
fn analyze_exports_maps_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    let ck = train_synth(dir.path(), "r", &[]).join("seed0.ckpt");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["analyze", "--out", s(&out), "--format", "synth", "--checkpoint", s(&ck)];
        args.extend_from_slice(extra);
        (iea(&args), out)
    };
    let (o, a) = run("a", &["--probe-index", "5"]);
    ok(o);
    let pgms: Vec<_> = (0..4).map(|c| a.join(format!("layer0_ch{c}.pgm"))).collect();
    assert!(pgms.iter().all(|p| p.exists()));
    assert!(fs::read(&pgms[0]).unwrap().starts_with(b"P5\n28 28\n255\n"));
    let mss = fs::read_to_string(a.join("mss.csv")).unwrap();
    assert_eq!(mss.lines().count(), 2);
    assert!(mss.lines().nth(1).unwrap().starts_with("0,4,"));

    let (o, b) = run("b", &["--probe-index", "5"]);
    ok(o);
    for name in ["mss.csv", "layer0_ch3.pgm"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }

    let (o, _) = run("c", &["--layer", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("layer index"), "{}", stderr(&o));
    let (o, _) = run("d", &["--probe-index", "100000"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trains_on_bundled_mnist_subset() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mnist");
    ok(iea(&[
        "train",
        "--out",
        s(&out),
        "--data",
        s(&data),
        "--limit-train",
        "200",
        "--limit-test",
        "100",
        "--epochs",
        "1",
        "--channels",
        "4",
    ]));
    let metrics = fs::read_to_string(out.join("metrics_seed0.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}
