//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mondrian_cli::experiment::{
    inconsistency_demo, learning_curve, rate_check, strip_field, DataSource, InconsistencyConfig,
    LearningCurveConfig, RateCheckConfig, RateTarget,
};
use mondrian_forest::data::{band_epsilon, SynthSpec};
use mondrian_forest::partition::LeafStats;
use mondrian_forest::verify::{
    check_diameter_bounds, check_extension_equivalence, check_poisson_slice,
    check_split_count_bound, VerifyConfig,
};
use mondrian_forest::{Forest, LifetimeSchedule, RandomSource, Task, VoteRule};

const TRIALS: usize = 10_000;
const SEEDS: u64 = 5;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn run(id: u32, title: &str, limit: Duration, f: impl FnOnce() -> anyhow::Result<Outcome>) -> bool {
    let start = Instant::now();
    let result = f();
    let elapsed = start.elapsed();
    let (passed, detail) = match result {
        Ok(o) => (o.passed && elapsed <= limit, o.detail),
        Err(e) => (false, format!("error: {e:#}")),
    };
    println!(
        "{} criterion {id} {title} [{:.1}s / limit {}s]\n    {detail}",
        if passed { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    passed
}

fn split_count_bound() -> anyhow::Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (d, lambda) in [(1, 1.0), (1, 3.0), (2, 2.0), (3, 1.0)] {
        let report = check_split_count_bound(&VerifyConfig::new(d, lambda, TRIALS, 0))?;
        let mean = report.statistic;
        let se = report.std_error.unwrap_or(0.0);
        let bound = (std::f64::consts::E * (lambda + 1.0)).powi(d as i32);
        let upper = mean + 2.326_347_874_040_841 * se;
        ok &= upper <= bound;
        // In one dimension the split count is Poisson(lambda).
        if d == 1 {
            ok &= (mean - lambda).abs() <= 3.0 * se;
        }
        notes.push(format!(
            "d={d} lambda={lambda}: mean={mean:.4} ucl99={upper:.4} bound={bound:.3}"
        ));
    }
    Ok(outcome(ok, notes.join("; ")))
}

fn diameter_bounds() -> anyhow::Result<Outcome> {
    let mut tails_ok = true;
    let mut moment_ok = true;
    let mut notes = Vec::new();
    for d in [1, 2] {
        for lambda in [5.0, 10.0] {
            let report = check_diameter_bounds(&VerifyConfig::new(d, lambda, TRIALS, 0))?;
            for c in &report.checks {
                if c.skipped {
                    continue;
                }
                if c.name == "mean_sq_diameter" {
                    // Required without Monte-Carlo slack: E[D^2] <= 4d / lambda^2.
                    let pass = c.statistic <= c.reference;
                    moment_ok &= pass;
                    notes.push(format!(
                        "d={d} lambda={lambda} E[D^2]={:.5} (se {:.5}) vs {:.5} {}",
                        c.statistic,
                        c.std_error.unwrap_or(0.0),
                        c.reference,
                        if pass { "ok" } else { "exceeds" }
                    ));
                } else {
                    tails_ok &= c.verdict.passed();
                }
            }
        }
    }
    notes.insert(
        0,
        format!("tail bounds {}", if tails_ok { "hold" } else { "violated" }),
    );
    Ok(outcome(tails_ok && moment_ok, notes.join("; ")))
}

fn poisson_slices() -> anyhow::Result<Outcome> {
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 0..SEEDS {
        for d in [1, 2] {
            for lambda in [2.0, 5.0] {
                let mut anchor = vec![0.5; d];
                if d > 1 {
                    anchor[1] = 0.3;
                }
                let report =
                    check_poisson_slice(&VerifyConfig::new(d, lambda, TRIALS, seed), 0, &anchor)?;
                for name in ["count_poisson_chi2", "position_uniform_ks"] {
                    let c = report.check(name).expect("sub-check present");
                    worst = worst.min(c.reference);
                    if c.reference <= 0.001 {
                        failures.push(format!(
                            "seed={seed} d={d} lambda={lambda} {name} p={:.2e}",
                            c.reference
                        ));
                    }
                }
            }
        }
    }
    Ok(outcome(
        failures.is_empty(),
        format!("smallest p-value {worst:.4}; failures: {failures:?}"),
    ))
}

fn extension_equivalence() -> anyhow::Result<Outcome> {
    let mut worst = f64::INFINITY;
    let mut failures = Vec::new();
    for seed in 0..SEEDS {
        for d in [1, 2] {
            for next in [2.0, 3.0] {
                let mut cfg = VerifyConfig::new(d, 1.0, TRIALS, seed);
                cfg.lifetime_next = Some(next);
                let report = check_extension_equivalence(&cfg)?;
                for c in &report.checks {
                    worst = worst.min(c.reference);
                    if !c.verdict.passed() {
                        failures.push(format!(
                            "seed={seed} d={d} 1->{next} {} p={:.2e}",
                            c.name, c.reference
                        ));
                    }
                }
            }
        }
    }
    Ok(outcome(
        failures.is_empty(),
        format!("smallest p-value {worst:.4}; failures: {failures:?}"),
    ))
}

fn inconsistency() -> anyhow::Result<Outcome> {
    let lambda = 2.0;
    let eps = band_epsilon(lambda);
    let result = inconsistency_demo(&InconsistencyConfig {
        lifetime: lambda,
        power_constant: 1.0,
        trees: 10,
        checkpoints: vec![1_000, 10_000, 50_000],
        test_size: 10_000,
        seed: 0,
        rule: VoteRule::Majority,
    })?;
    let last = |label: &str| {
        result
            .series(label)
            .and_then(|s| s.records.last())
            .map(|r| r.metric)
    };
    let fixed = last("fixed:2").expect("fixed series");
    let power = last("power:1").expect("power series");
    let half = eps / 2.0;
    Ok(outcome(
        fixed >= half && power < fixed && power <= half,
        format!(
            "eps={eps:.5} eps/2={half:.5} fixed error={fixed:.4} power error={power:.4} at n=50000"
        ),
    ))
}

fn consistency() -> anyhow::Result<Outcome> {
    let result = learning_curve(&LearningCurveConfig {
        data: DataSource::Synth(SynthSpec::lipschitz_classify(2, 100_000, 0)),
        trees: 10,
        schedule: "power:1".parse()?,
        checkpoints: vec![1_000, 10_000, 100_000],
        test_size: 10_000,
        seed: 0,
        rule: VoteRule::Plugin,
    })?;
    let records = &result.series[0].records;
    let last = records.last().expect("records").metric;
    let monotone = records
        .windows(2)
        .all(|w| w[1].metric <= w[0].metric + w[1].std_error.max(w[0].std_error));
    let curve: Vec<String> = records
        .iter()
        .map(|r| format!("n={} err={:.4}±{:.4}", r.n, r.metric, r.std_error))
        .collect();
    Ok(outcome(
        last <= 0.28 && monotone,
        format!("{} (bayes 0.25)", curve.join(", ")),
    ))
}

fn rates() -> anyhow::Result<Outcome> {
    let mut ok = true;
    let mut notes = Vec::new();
    for (target, d) in [(RateTarget::Regress, 1), (RateTarget::ClassifyProba, 2)] {
        let result = rate_check(&RateCheckConfig {
            target,
            dimension: d,
            noise_sd: 0.1,
            trees: 10,
            power_constant: 1.0,
            checkpoints: vec![1_000, 4_000, 16_000, 64_000],
            test_size: 10_000,
            seed: 0,
            fit_from: 1_000,
            slope_tolerance: 0.2,
        })?;
        let slope = result.derived["slope"].as_f64().expect("slope");
        let theory = -2.0 / (d as f64 + 2.0);
        ok &= (slope - theory).abs() <= 0.2;
        notes.push(format!(
            "{target:?} d={d}: slope={slope:.4} theory={theory:.4}"
        ));
    }
    Ok(outcome(ok, notes.join("; ")))
}

/// Routes every buffered sample from the root of a copy of each tree with
/// cleared leaves and compares with the online statistics.
fn batch_equivalence() -> anyhow::Result<Outcome> {
    let mut compared = 0;
    for seed in 0..20u64 {
        for task in [Task::Classify, Task::Regress] {
            let mut forest = Forest::new(5, LifetimeSchedule::power(2.0, 2)?, 2, task, seed)?;
            let mut rng = RandomSource::new(seed, 99);
            for _ in 0..200 {
                let x = [rng.unit(), rng.unit()];
                let y = match task {
                    Task::Classify => f64::from(u8::from(rng.bernoulli(x[0]))),
                    Task::Regress => x[0].sin() + 0.3 * rng.standard_normal(),
                };
                forest.partial_fit(&x, y)?;
            }
            for tree in forest.trees() {
                let mut fresh = tree.clone();
                let leaves: Vec<usize> = fresh.leaf_ids().collect();
                for &l in &leaves {
                    *fresh.stats_mut(l).expect("leaf") = LeafStats::default();
                }
                for (id, (x, y)) in forest.buffer().iter().enumerate() {
                    let leaf = fresh.leaf_of(x)?;
                    fresh.stats_mut(leaf).expect("leaf").push(id as u32, y);
                }
                for l in leaves {
                    let online = tree.node(l).stats.as_ref().expect("leaf stats");
                    let batch = fresh.node(l).stats.as_ref().expect("leaf stats");
                    let same = online.count0 == batch.count0
                        && online.count1 == batch.count1
                        && online.sum_y.to_bits() == batch.sum_y.to_bits()
                        && online.sample_ids == batch.sample_ids;
                    if !same {
                        return Ok(outcome(
                            false,
                            format!("seed={seed} {task:?} leaf {l} differs"),
                        ));
                    }
                    compared += 1;
                }
            }
        }
    }
    Ok(outcome(
        true,
        format!("{compared} leaves identical over 20 seeds x 2 tasks"),
    ))
}

fn determinism() -> anyhow::Result<Outcome> {
    let bin = env!("CARGO_BIN_EXE_mondrian");
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data.csv");
    SynthSpec::lipschitz_classify(2, 300, 5)
        .generate()?
        .write_csv(std::fs::File::create(&data)?)?;
    let features = dir.path().join("features.csv");
    std::fs::write(&features, "a,b\n0.1,0.9\n0.7,0.2\n0.5,0.5\n")?;
    let model = dir.path().join("model.json");
    let model_s = model.to_str().expect("utf8 path");
    let data_s = data.to_str().expect("utf8 path");
    let features_s = features.to_str().expect("utf8 path");

    let commands: Vec<Vec<&str>> = vec![
        vec![
            "learning-curve",
            "--synth",
            "classify:d=2",
            "--checkpoints",
            "100,400",
            "--test-size",
            "500",
            "--seed",
            "3",
        ],
        vec![
            "learning-curve",
            "--dataset",
            data_s,
            "--test-size",
            "50",
            "--seed",
            "3",
            "--rule",
            "plugin",
        ],
        vec![
            "inconsistency-demo",
            "--checkpoints",
            "0,200,800",
            "--test-size",
            "500",
            "--seed",
            "3",
        ],
        vec![
            "rate-check",
            "--checkpoints",
            "100,200,400",
            "--fit-from",
            "100",
            "--test-size",
            "500",
            "--seed",
            "3",
        ],
        vec!["verify", "--trials", "100", "--seed", "3"],
        vec![
            "train",
            "--dataset",
            data_s,
            "--out",
            model_s,
            "--seed",
            "3",
        ],
        vec!["predict", "--model", model_s, "--input", features_s],
    ];
    let mut differing = Vec::new();
    for args in &commands {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let out = Command::new(bin).args(args).output()?;
            anyhow::ensure!(
                out.status.code().is_some_and(|c| c < 2),
                "{args:?} failed: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            let mut text = String::from_utf8(out.stdout)?;
            if args[0] == "train" {
                text.push_str(&std::fs::read_to_string(&model)?);
            }
            outputs.push(normalize(&text));
        }
        if outputs[0] != outputs[1] {
            differing.push(args[0]);
        }
    }
    Ok(outcome(
        differing.is_empty(),
        format!(
            "{} commands re-run; differing: {differing:?}",
            commands.len()
        ),
    ))
}

/// Removes timing fields from every JSON document in `text` (whole
/// documents or JSON lines); other text is kept verbatim.
fn normalize(text: &str) -> String {
    if let Ok(mut v) = serde_json::from_str::<serde_json::Value>(text) {
        strip_field(&mut v, "wall_time_ms");
        return v.to_string();
    }
    text.lines()
        .map(
            |line| match serde_json::from_str::<serde_json::Value>(line) {
                Ok(mut v) => {
                    strip_field(&mut v, "wall_time_ms");
                    v.to_string()
                }
                Err(_) => line.to_string(),
            },
        )
        .collect::<Vec<_>>()
        .join("\n")
}

fn main() -> ExitCode {
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        run(1, "split-count bound", min(2), split_count_bound),
        run(2, "cell-diameter bounds", min(2), diameter_bounds),
        run(3, "Poisson slices", min(2), poisson_slices),
        run(4, "extension equivalence", min(3), extension_equivalence),
        run(5, "inconsistency of fixed lifetime", min(5), inconsistency),
        run(
            6,
            "consistency of increasing lifetime",
            min(10),
            consistency,
        ),
        run(7, "minimax-rate slopes", min(15), rates),
        run(
            8,
            "batch-refit equivalence",
            Duration::from_secs(30),
            batch_equivalence,
        ),
        run(9, "determinism", min(1), determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
