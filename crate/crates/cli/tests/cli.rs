use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sinkcpd::eval::Scorer;
use sinkcpd::experiment::errors_vs_window;
use sinkcpd::io::{load_model, read_labels, read_scores_csv, read_sequence_csv};
use sinkcpd::metric::Standardizer;
use sinkcpd::ot::{GroundMetric, SolverConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sinkcpd"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small GMM stream: 7 segments of 40 samples in 6 dimensions.
fn small_gmm(dir: &Path) -> PathBuf {
    let out = dir.join("gmm");
    run(&[
        "generate",
        "--dataset",
        "gmm",
        "--seed",
        "7",
        "--changes",
        "6",
        "--segment-len",
        "40",
        "--dim",
        "6",
        "--out",
        s(&out),
    ]);
    out
}

#[test]
fn generate_writes_the_full_gmm_stream() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    run(&[
        "generate",
        "--dataset",
        "gmm",
        "--seed",
        "7",
        "--changes",
        "25",
        "--out",
        s(&out),
    ]);
    let x = read_sequence_csv(&out.join("data.csv")).unwrap();
    assert_eq!(x.dim(), (2600, 100));
    let labels = read_labels(&out.join("labels.txt")).unwrap();
    assert_eq!(labels.len(), 25);
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_gmm(&dir.path().join("a"));
    let b = small_gmm(&dir.path().join("b"));
    for f in ["data.csv", "labels.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn unknown_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["generate", "--dataset", "bogus", "--out", s(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains("--help"), "{err}");
}

#[test]
fn zero_iterations_give_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let model = dir.path().join("m.json");
    run(&[
        "train",
        "--data",
        s(&g.join("data.csv")),
        "--labels",
        s(&g.join("labels.txt")),
        "--preset",
        "gmm",
        "--iters",
        "0",
        "--out",
        s(&model),
    ]);
    let m = load_model(&model).unwrap();
    assert_eq!((m.r, m.d, m.best_iteration), (5, 6, 0));
    assert_eq!(m.train_loss_history.len(), 1);
    let l = m.metric().unwrap();
    // Initialization is the identity-like embedding on the first rows.
    for i in 0..5 {
        assert_eq!(l.l()[[i, i]], 1.0);
    }
}

#[test]
fn presets_expand_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let model = dir.path().join("m.json");
    let (data, labels) = (g.join("data.csv"), g.join("labels.txt"));
    let base = [
        "train",
        "--data",
        s(&data),
        "--labels",
        s(&labels),
        "--iters",
        "0",
        "--out",
        s(&model),
    ];
    run(&[&base[..], &["--preset", "gmm"]].concat());
    let c = load_model(&model).unwrap().config;
    assert_eq!(
        (c.proj_dim, c.window, c.gamma, c.learn_rate),
        (5, 10, 0.1, 0.01)
    );

    run(&[&base[..], &["--preset", "sleep", "--proj-dim", "3"]].concat());
    let c = load_model(&model).unwrap().config;
    assert_eq!(
        (c.proj_dim, c.window, c.l1_weight, c.buffer),
        (3, 15, 0.01, 10)
    );
}

#[test]
fn too_few_changes_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    run(&[
        "generate",
        "--dataset",
        "var",
        "--changes",
        "1",
        "--segment-len",
        "8",
        "--out",
        s(&g),
    ]);
    let out = bin()
        .args([
            "train",
            "--data",
            s(&g.join("data.csv")),
            "--labels",
            s(&g.join("labels.txt")),
            "--window",
            "20",
            "--iters",
            "1",
            "--out",
            s(&dir.path().join("m.json")),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn detect_without_model_uses_identity_and_infinite_threshold_detects_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let scores = dir.path().join("s.csv");
    run(&[
        "detect",
        "--data",
        s(&g.join("data.csv")),
        "--window",
        "10",
        "--threshold",
        "inf",
        "--out",
        s(&scores),
    ]);
    let series = read_scores_csv(&scores).unwrap();
    assert_eq!(series.len(), 280);
    assert_eq!(series.valid_count(), 280 - 20 + 1);
    assert!(series.valid_indices().any(|i| series.scores[i] > 0.0));
    let det = read_labels(&dir.path().join("s.csv.detections.txt")).unwrap();
    assert!(det.is_empty());

    // The identity metric on raw features, scored directly.
    let x = read_sequence_csv(&g.join("data.csv")).unwrap();
    let direct = sinkcpd::detector::change_scores(
        x.view(),
        &GroundMetric::identity(6, 0.1).unwrap(),
        10,
        1,
        &SolverConfig::default(),
    )
    .unwrap();
    for i in series.valid_indices() {
        assert!(
            (series.scores[i] - direct.scores[i]).abs() <= 1e-15 * direct.scores[i].abs().max(1.0)
        );
    }
}

#[test]
fn dimension_mismatch_names_both_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let model = dir.path().join("m.json");
    run(&[
        "train",
        "--data",
        s(&g.join("data.csv")),
        "--labels",
        s(&g.join("labels.txt")),
        "--preset",
        "gmm",
        "--iters",
        "0",
        "--out",
        s(&model),
    ]);
    let other = dir.path().join("var");
    run(&[
        "generate",
        "--dataset",
        "freq",
        "--changes",
        "1",
        "--segment-len",
        "30",
        "--out",
        s(&other),
    ]);
    let out = bin()
        .args([
            "detect",
            "--data",
            s(&other.join("data.csv")),
            "--model",
            s(&model),
            "--threshold",
            "0",
            "--out",
            s(&dir.path().join("s.csv")),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('6') && err.contains('2'), "{err}");
}

#[test]
fn eval_prints_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("s.csv"),
        "index,score,valid\n0,0,1\n1,0,1\n2,0.1,1\n3,0,1\n4,0,1\n5,0.9,1\n6,0,1\n7,0.5,1\n8,0,1\n9,0,1\n",
    )
    .unwrap();
    fs::write(dir.path().join("l.txt"), "7\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "eval",
        "--scores",
        s(&dir.path().join("s.csv")),
        "--labels",
        s(&dir.path().join("l.txt")),
        "--out",
        s(&report),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["auc"].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-12);
    assert_eq!(v["match_margin"], 0);
    assert_eq!(v["roc_points"][0]["threshold"], "inf");
    assert_eq!(fs::read(&report).unwrap(), out.stdout);
}

#[test]
fn window_experiment_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.csv");
    run(&[
        "experiment",
        "errors-vs-window",
        "--windows",
        "4,8",
        "--dim",
        "5",
        "--trials",
        "12",
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    let scorer = Scorer {
        metric: GroundMetric::identity(5, 0.1).unwrap(),
        standardizer: Standardizer::identity(5),
        solver: SolverConfig::default(),
    };
    let curve = errors_vs_window(&scorer, &[4, 8], 0.0, 12, 3).unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis_value,threshold,type1,type2"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), curve.points.len());
    for (row, p) in rows.iter().zip(&curve.points) {
        assert_eq!(row, &vec![p.axis_value, p.threshold, p.type1, p.type2]);
    }
}

#[test]
fn noise_experiment_writes_one_block_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("n.csv");
    run(&[
        "experiment",
        "errors-vs-noise",
        "--noise",
        "0,1,2,4",
        "--dim",
        "5",
        "--trials",
        "6",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let levels: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        levels.into_iter().collect::<Vec<_>>(),
        vec!["0", "1", "2", "4"]
    );
}

#[test]
fn projection_experiment_reports_ranks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    run(&[
        "experiment",
        "proj-dim",
        "--dims",
        "1,8",
        "--changes",
        "6",
        "--dim",
        "6",
        "--iters",
        "2",
        "--trials",
        "6",
        "--out",
        s(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][..2], ["1", "1"]);
    let r: usize = rows[1][1].parse().unwrap();
    assert!(r <= 6);
}

#[test]
fn every_command_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let data = g.join("data.csv");
    let labels = g.join("labels.txt");
    let outputs = |tag: &str| -> Vec<Vec<u8>> {
        let p = |name: &str| dir.path().join(format!("{tag}-{name}"));
        run(&[
            "train",
            "--data",
            s(&data),
            "--labels",
            s(&labels),
            "--preset",
            "gmm",
            "--iters",
            "3",
            "--out",
            s(&p("m.json")),
        ]);
        run(&[
            "detect",
            "--data",
            s(&data),
            "--model",
            s(&p("m.json")),
            "--threshold",
            "0.01",
            "--out",
            s(&p("s.csv")),
        ]);
        let report = run(&["eval", "--scores", s(&p("s.csv")), "--labels", s(&labels)]).stdout;
        run(&[
            "experiment",
            "errors-vs-noise",
            "--noise",
            "0,2",
            "--model",
            s(&p("m.json")),
            "--trials",
            "5",
            "--out",
            s(&p("n.csv")),
        ]);
        let mut files: Vec<Vec<u8>> = ["m.json", "s.csv", "s.csv.detections.txt", "n.csv"]
            .iter()
            .map(|f| fs::read(p(f)).unwrap())
            .collect();
        files.push(report);
        files
    };
    assert_eq!(outputs("a"), outputs("b"));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let g = small_gmm(dir.path());
    let mut bytes = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("s{threads}.csv"));
        let status = bin()
            .env("SINKCPD_THREADS", threads)
            .args([
                "detect",
                "--data",
                s(&g.join("data.csv")),
                "--window",
                "8",
                "--threshold",
                "0.1",
            ])
            .args(["--out", s(&out)])
            .status()
            .unwrap();
        assert!(status.success());
        bytes.push(fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let bad = bin()
        .env("SINKCPD_THREADS", "zero")
        .args(["generate", "--dataset", "var", "--out", s(dir.path())])
        .status()
        .unwrap();
    assert!(!bad.success());
}
