use std::path::Path;
use std::process::{Command, Output};

use mondrian_cli::model::{samples_path, ModelFile};
use mondrian_cli::ExperimentResult;
use mondrian_forest::data::{Sample, SampleStream, SynthSpec};
use mondrian_forest::Task;

fn mondrian(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mondrian"))
        .args(args)
        .output()
        .expect("spawn mondrian")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Rows whose features already span [0, 1] in every column, so the fitted
/// normalizer is the identity.
fn spanning_rows(n: usize, seed: u64) -> SampleStream {
    let mut s = SynthSpec::lipschitz_classify(2, n, seed)
        .generate()
        .unwrap();
    s.samples[0].x = vec![0.0, 0.0];
    s.samples[1].x = vec![1.0, 1.0];
    s
}

#[test]
fn learning_curve_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.json");
    stdout(&mondrian(&[
        "learning-curve",
        "--synth",
        "classify:d=2",
        "--checkpoints",
        "50,100,200",
        "--test-size",
        "300",
        "--trees",
        "3",
        "--out",
        p(&out),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let result: ExperimentResult = serde_json::from_str(&text).unwrap();
    assert_eq!(result.schema, "mondrian-forest/experiment/v1");
    let records = &result.series[0].records;
    assert_eq!(
        records.iter().map(|r| r.n).collect::<Vec<_>>(),
        [50, 100, 200]
    );
    assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.metric)));
    // Lossless round trip.
    assert_eq!(
        serde_json::from_str::<ExperimentResult>(&serde_json::to_string(&result).unwrap()).unwrap(),
        result
    );

    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("series,n,lifetime,metric,std_error"));
}

#[test]
fn dump_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("train.csv");
    stdout(&mondrian(&[
        "learning-curve",
        "--synth",
        "classify:d=3",
        "--checkpoints",
        "20",
        "--test-size",
        "10",
        "--seed",
        "4",
        "--dump",
        p(&dump),
    ]));
    let dumped = mondrian_forest::data::load_csv(&dump, true, None, Task::Classify).unwrap();
    let direct = SynthSpec::lipschitz_classify(3, 20, 4).generate().unwrap();
    assert_eq!(dumped, direct);
}

#[test]
fn argument_errors_exit_with_status_two() {
    for args in [
        vec!["rate-check", "--checkpoints", "1000,2000"],
        vec![
            "learning-curve",
            "--synth",
            "classify",
            "--checkpoints",
            "20,10",
        ],
        vec!["learning-curve", "--synth", "band:eps=0.9"],
        vec![
            "learning-curve",
            "--synth",
            "classify",
            "--schedule",
            "linear:2",
        ],
    ] {
        let out = mondrian(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    std::fs::write(&data, "x0,x1,y\n").unwrap();
    let out = mondrian(&[
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&dir.path().join("m.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = mondrian(&["learning-curve", "--dataset", p(&data), "--test-size", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_emits_json_lines_and_fails_on_a_violated_claim() {
    let out = mondrian(&["verify", "--trials", "200", "--seed", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let reports: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(reports.len() >= 12);
    for r in &reports {
        for key in [
            "schema",
            "claim",
            "params",
            "statistic",
            "bound_or_p",
            "verdict",
        ] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
    let all_pass = reports.iter().all(|r| r["verdict"] == "pass");
    assert_eq!(out.status.code(), Some(if all_pass { 0 } else { 1 }));
}

#[test]
fn resumed_training_equals_one_pass() {
    let dir = tempfile::tempdir().unwrap();
    let all = spanning_rows(240, 8);
    let head = SampleStream {
        samples: all.samples[..150].to_vec(),
        ..all.clone()
    };
    let tail = SampleStream {
        samples: all.samples[150..].to_vec(),
        ..all.clone()
    };
    let write = |s: &SampleStream, name: &str| {
        let path = dir.path().join(name);
        s.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        path
    };
    let (all_csv, head_csv, tail_csv) = (
        write(&all, "all.csv"),
        write(&head, "head.csv"),
        write(&tail, "tail.csv"),
    );
    let one = dir.path().join("one.json");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let common = ["--trees", "4", "--schedule", "power:2", "--seed", "11"];

    stdout(&mondrian(
        &[
            &["train", "--dataset", p(&all_csv), "--out", p(&one)][..],
            &common,
        ]
        .concat(),
    ));
    stdout(&mondrian(
        &[
            &["train", "--dataset", p(&head_csv), "--out", p(&first)][..],
            &common,
        ]
        .concat(),
    ));
    let summary = stdout(&mondrian(&[
        "train",
        "--dataset",
        p(&tail_csv),
        "--resume",
        p(&first),
        "--out",
        p(&second),
    ]));
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["added"], 90);
    assert_eq!(summary["n_seen"], 240);

    assert_eq!(
        ModelFile::load(&one).unwrap(),
        ModelFile::load(&second).unwrap()
    );
    assert_eq!(
        std::fs::read_to_string(samples_path(&one)).unwrap(),
        std::fs::read_to_string(samples_path(&second)).unwrap()
    );
}

#[test]
fn predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.csv");
    spanning_rows(200, 2)
        .write_csv(std::fs::File::create(&data).unwrap())
        .unwrap();
    let model = dir.path().join("m.json");
    stdout(&mondrian(&[
        "train",
        "--dataset",
        p(&data),
        "--out",
        p(&model),
        "--trees",
        "5",
    ]));

    let input = dir.path().join("x.csv");
    // Out-of-range values are clamped into the unit square.
    std::fs::write(&input, "0.2,0.8\n0.9,0.1\n-3,4\n").unwrap();
    let preds = stdout(&mondrian(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--no-header",
        "--rule",
        "plugin",
    ]));
    let forest = ModelFile::load(&model).unwrap().frozen().unwrap();
    let mut lines = preds.lines();
    assert_eq!(lines.next(), Some("proba,class"));
    for x in [[0.2, 0.8], [0.9, 0.1], [0.0, 1.0]] {
        let proba = forest.predict_proba(&x).unwrap();
        let class = forest
            .predict_class(&x, mondrian_forest::VoteRule::Plugin)
            .unwrap();
        assert_eq!(lines.next().unwrap(), format!("{proba},{class}"));
    }

    std::fs::write(&input, "0.2\n").unwrap();
    let out = mondrian(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&input),
        "--no-header",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regression_model_predicts_leaf_means() {
    let dir = tempfile::tempdir().unwrap();
    let mut stream = SampleStream::new(Task::Regress, 1);
    stream.samples = (0..=100)
        .map(|i| Sample {
            x: vec![i as f64 / 100.0],
            y: 2.0,
        })
        .collect();
    let data = dir.path().join("r.csv");
    stream
        .write_csv(std::fs::File::create(&data).unwrap())
        .unwrap();
    let model = dir.path().join("r.json");
    stdout(&mondrian(&[
        "train",
        "--task",
        "regress",
        "--dataset",
        p(&data),
        "--out",
        p(&model),
        "--schedule",
        "fixed:0",
    ]));
    let input = dir.path().join("x.csv");
    std::fs::write(&input, "x0\n0.5\n").unwrap();
    let preds = stdout(&mondrian(&[
        "predict",
        "--model",
        p(&model),
        "--input",
        p(&input),
    ]));
    assert_eq!(preds, "prediction\n2\n");
}
