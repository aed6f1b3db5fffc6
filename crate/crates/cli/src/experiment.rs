//! Online training runs evaluated at sample-size checkpoints.

use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use mondrian_forest::data::{
    band_epsilon, inverse_cell_length_bound, Normalizer, SampleStream, SynthKind, SynthSpec,
    TEST_STREAM,
};
use mondrian_forest::stats::{mean_se, ols_slope};
use mondrian_forest::{Forest, ScheduleSpec, Task, VoteRule};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const EXPERIMENT_SCHEMA: &str = "mondrian-forest/experiment/v1";

/// Field name of the informational timing in every record.
pub const TIMING_FIELD: &str = "wall_time_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub n: usize,
    pub lifetime: f64,
    /// Test error (classification) or quadratic risk (rate checks).
    pub metric: f64,
    pub std_error: f64,
    /// Theoretical ceiling at this checkpoint, when one applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub metric: String,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub schema: String,
    pub command: String,
    pub config: serde_json::Value,
    pub series: Vec<Series>,
    pub derived: serde_json::Value,
}

impl ExperimentResult {
    pub fn series(&self, label: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.label == label)
    }

    /// Curve data as CSV: `series,n,lifetime,metric,std_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,n,lifetime,metric,std_error\n");
        for s in &self.series {
            for r in &s.records {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.label, r.n, r.lifetime, r.metric, r.std_error
                ));
            }
        }
        out
    }
}

/// Where training and test samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Csv {
        train: SampleStream,
        /// Held-out rows, normalized with the training fit.
        test: SampleStream,
    },
}

impl DataSource {
    /// Splits a loaded CSV stream: the last `test_size` rows are held out
    /// and both parts are normalized on the training rows.
    pub fn from_csv(stream: SampleStream, test_size: usize) -> Result<Self> {
        ensure!(
            stream.len() > test_size,
            "dataset has {} rows, cannot hold out {test_size}",
            stream.len()
        );
        let fraction = test_size as f64 / stream.len() as f64;
        let (train, test) = stream.split_tail(fraction);
        let norm = Normalizer::fit(&train)?;
        Ok(DataSource::Csv {
            train: train.normalized(&norm),
            test: test.normalized(&norm),
        })
    }

    fn describe(&self) -> serde_json::Value {
        match self {
            DataSource::Synth(spec) => serde_json::json!({"synth": spec}),
            DataSource::Csv { train, test } => {
                serde_json::json!({"csv": {"train_rows": train.len(), "test_rows": test.len()}})
            }
        }
    }

    fn task(&self) -> Task {
        match self {
            DataSource::Synth(spec) => spec.task(),
            DataSource::Csv { train, .. } => train.task,
        }
    }

    fn dimension(&self) -> usize {
        match self {
            DataSource::Synth(spec) => spec.dimension,
            DataSource::Csv { train, .. } => train.dimension,
        }
    }

    /// Training stream with `n` rows (synthetic; 0 keeps the generator's own
    /// size) or the whole training split (CSV).
    fn train(&self, n: usize) -> Result<SampleStream> {
        match self {
            DataSource::Synth(spec) => {
                let n = if n == 0 { spec.n } else { n };
                Ok(SynthSpec { n, ..*spec }.generate()?)
            }
            DataSource::Csv { train, .. } => Ok(train.clone()),
        }
    }

    fn test(&self, test_size: usize) -> Result<SampleStream> {
        match self {
            DataSource::Synth(spec) => Ok(SynthSpec {
                n: test_size,
                ..*spec
            }
            .generate_on(TEST_STREAM)?),
            DataSource::Csv { test, .. } => Ok(test.clone()),
        }
    }
}

fn check_checkpoints(checkpoints: &[usize]) -> Result<()> {
    ensure!(
        !checkpoints.is_empty(),
        "at least one checkpoint is required"
    );
    ensure!(
        checkpoints.windows(2).all(|w| w[0] < w[1]),
        "checkpoints must be strictly increasing"
    );
    Ok(())
}

/// Misclassification rate on `test` and its binomial standard error.
pub fn test_error(forest: &Forest, test: &SampleStream, rule: VoteRule) -> Result<(f64, f64)> {
    let wrong: Vec<f64> = test
        .samples
        .par_iter()
        .map(|s| {
            Ok(f64::from(u8::from(
                f64::from(forest.predict_class(&s.x, rule)?) != s.y,
            )))
        })
        .collect::<mondrian_forest::Result<_>>()?;
    let m = wrong.len() as f64;
    let err = wrong.iter().sum::<f64>() / m;
    Ok((err, (err * (1.0 - err) / m).sqrt()))
}

/// Quadratic risk of the forest's estimate against the known conditional
/// mean `truth` over the test points.
pub fn quadratic_risk(
    forest: &Forest,
    test: &SampleStream,
    truth: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<(f64, f64)> {
    let sq: Vec<f64> = test
        .samples
        .par_iter()
        .map(|s| {
            let estimate = match forest.task() {
                Task::Classify => forest.predict_proba(&s.x)?,
                Task::Regress => forest.predict_regression(&s.x)?,
            };
            Ok((estimate - truth(&s.x)).powi(2))
        })
        .collect::<mondrian_forest::Result<_>>()?;
    Ok(mean_se(&sq))
}

/// Trains `forest` online on `train`, calling `evaluate` at each checkpoint.
fn run_curve(
    forest: &mut Forest,
    train: &SampleStream,
    checkpoints: &[usize],
    mut evaluate: impl FnMut(&Forest) -> Result<(f64, f64, Option<f64>)>,
) -> Result<Vec<Record>> {
    let start = Instant::now();
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut fed = 0;
    for &n in checkpoints {
        ensure!(
            n <= train.len(),
            "checkpoint {n} exceeds the {} training samples",
            train.len()
        );
        for s in &train.samples[fed..n] {
            forest.partial_fit(&s.x, s.y)?;
        }
        fed = n;
        let (metric, std_error, bound) = evaluate(forest)?;
        records.push(Record {
            n,
            lifetime: forest.lifetime(),
            metric,
            std_error,
            bound,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(records)
}

#[derive(Clone, Debug)]
pub struct LearningCurveConfig {
    pub data: DataSource,
    pub trees: usize,
    pub schedule: ScheduleSpec,
    /// Empty means ten evenly spaced fractions of the training data.
    pub checkpoints: Vec<usize>,
    pub test_size: usize,
    pub seed: u64,
    pub rule: VoteRule,
}

pub fn learning_curve(cfg: &LearningCurveConfig) -> Result<ExperimentResult> {
    ensure!(
        cfg.data.task() == Task::Classify,
        "learning curves need a classification task"
    );
    let d = cfg.data.dimension();
    ensure!(d > 0, "dataset has no feature columns");
    let max_n = cfg.checkpoints.last().copied().unwrap_or(0);
    let train = cfg.data.train(max_n)?;
    if train.is_empty() {
        bail!("empty training stream");
    }
    let checkpoints = if cfg.checkpoints.is_empty() {
        (1..=10)
            .map(|k| (train.len() * k / 10).max(1))
            .collect::<Vec<_>>()
    } else {
        cfg.checkpoints.clone()
    };
    check_checkpoints(&checkpoints)?;
    let test = cfg.data.test(cfg.test_size)?;
    ensure!(!test.is_empty(), "empty test set");

    let schedule = cfg.schedule.for_dimension(d)?;
    let mut forest = Forest::new(cfg.trees, schedule, d, Task::Classify, cfg.seed)?;
    let records = run_curve(&mut forest, &train, &checkpoints, |f| {
        let (e, se) = test_error(f, &test, cfg.rule)?;
        Ok((e, se, None))
    })?;

    Ok(ExperimentResult {
        schema: EXPERIMENT_SCHEMA.into(),
        command: "learning-curve".into(),
        config: serde_json::json!({
            "data": cfg.data.describe(),
            "trees": cfg.trees,
            "schedule": cfg.schedule.to_string(),
            "checkpoints": checkpoints,
            "test_size": test.len(),
            "seed": cfg.seed,
            "rule": cfg.rule,
        }),
        series: vec![Series {
            label: cfg.schedule.to_string(),
            metric: "test_error".into(),
            records,
        }],
        derived: serde_json::json!({}),
    })
}

#[derive(Clone, Debug)]
pub struct InconsistencyConfig {
    /// Fixed lifetime of the reference forest; also sets the band width.
    pub lifetime: f64,
    /// Constant of the increasing schedule it is compared with.
    pub power_constant: f64,
    pub trees: usize,
    pub checkpoints: Vec<usize>,
    pub test_size: usize,
    pub seed: u64,
    pub rule: VoteRule,
}

/// Fixed-lifetime versus increasing-lifetime forests on the band
/// distribution whose half-width makes the fixed forest's error stay above
/// the half-width itself.
pub fn inconsistency_demo(cfg: &InconsistencyConfig) -> Result<ExperimentResult> {
    ensure!(cfg.lifetime > 0.0, "fixed lifetime must be > 0");
    check_checkpoints(&cfg.checkpoints)?;
    let epsilon = band_epsilon(cfg.lifetime);
    ensure!(
        epsilon < 0.25,
        "lifetime too small: band would cover half the interval"
    );
    let max_n = *cfg.checkpoints.last().expect("checked nonempty");
    let spec = SynthSpec::band(epsilon, max_n, cfg.seed);
    let data = DataSource::Synth(spec);
    let train = data.train(max_n)?;
    let test = data.test(cfg.test_size)?;
    ensure!(!test.is_empty(), "empty test set");

    let schedules = [
        ScheduleSpec {
            mode: mondrian_forest::ScheduleMode::Fixed,
            constant: cfg.lifetime,
        },
        ScheduleSpec {
            mode: mondrian_forest::ScheduleMode::Power,
            constant: cfg.power_constant,
        },
    ];
    let mut series = Vec::new();
    for spec in schedules {
        let mut forest = Forest::new(
            cfg.trees,
            spec.for_dimension(1)?,
            1,
            Task::Classify,
            cfg.seed,
        )?;
        let records = run_curve(&mut forest, &train, &cfg.checkpoints, |f| {
            let (e, se) = test_error(f, &test, cfg.rule)?;
            Ok((e, se, None))
        })?;
        series.push(Series {
            label: spec.to_string(),
            metric: "test_error".into(),
            records,
        });
    }

    Ok(ExperimentResult {
        schema: EXPERIMENT_SCHEMA.into(),
        command: "inconsistency-demo".into(),
        config: serde_json::json!({
            "lifetime": cfg.lifetime,
            "power_constant": cfg.power_constant,
            "trees": cfg.trees,
            "checkpoints": cfg.checkpoints,
            "test_size": cfg.test_size,
            "seed": cfg.seed,
            "rule": cfg.rule,
        }),
        series,
        derived: serde_json::json!({
            "epsilon": epsilon,
            "inverse_cell_length_bound": inverse_cell_length_bound(cfg.lifetime),
            "band_mass": 2.0 * epsilon,
            "error_floor": epsilon,
        }),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateTarget {
    /// `predict_proba` against `eta(x) = x_1`.
    ClassifyProba,
    /// `predict_regression` against `f(x) = sin(2 pi x_1)`.
    Regress,
}

#[derive(Clone, Debug)]
pub struct RateCheckConfig {
    pub target: RateTarget,
    pub dimension: usize,
    pub noise_sd: f64,
    pub trees: usize,
    pub power_constant: f64,
    pub checkpoints: Vec<usize>,
    pub test_size: usize,
    pub seed: u64,
    /// Only checkpoints with `n >= fit_from` enter the slope fit.
    pub fit_from: usize,
    pub slope_tolerance: f64,
}

/// Quadratic-risk ceiling `4 d L^2 / lambda^2 + (1 + e^d (1 + lambda)^d)
/// (2 sigma^2 + 9 |f|_inf) / n` for an L-Lipschitz regression function.
pub fn regression_risk_bound(
    d: usize,
    lipschitz: f64,
    sup_norm: f64,
    sigma: f64,
    lifetime: f64,
    n: usize,
) -> f64 {
    let d_f = d as f64;
    4.0 * d_f * lipschitz.powi(2) / lifetime.powi(2)
        + (1.0 + d_f.exp() * (1.0 + lifetime).powf(d_f)) / n as f64
            * (2.0 * sigma.powi(2) + 9.0 * sup_norm)
}

pub fn rate_check(cfg: &RateCheckConfig) -> Result<ExperimentResult> {
    check_checkpoints(&cfg.checkpoints)?;
    ensure!(
        cfg.checkpoints.len() >= 3,
        "rate check needs at least 3 checkpoints"
    );
    let fitted: Vec<&usize> = cfg
        .checkpoints
        .iter()
        .filter(|&&n| n >= cfg.fit_from)
        .collect();
    ensure!(
        fitted.len() >= 3,
        "rate check needs at least 3 checkpoints with n >= {}",
        cfg.fit_from
    );
    let d = cfg.dimension;
    let max_n = *cfg.checkpoints.last().expect("checked nonempty");
    let spec = match cfg.target {
        RateTarget::ClassifyProba => SynthSpec::lipschitz_classify(d, max_n, cfg.seed),
        RateTarget::Regress => SynthSpec::lipschitz_regress(d, max_n, cfg.seed, cfg.noise_sd),
    };
    let data = DataSource::Synth(spec);
    let train = data.train(max_n)?;
    let test = data.test(cfg.test_size)?;
    ensure!(!test.is_empty(), "empty test set");

    let schedule = ScheduleSpec {
        mode: mondrian_forest::ScheduleMode::Power,
        constant: cfg.power_constant,
    };
    let mut forest = Forest::new(
        cfg.trees,
        schedule.for_dimension(d)?,
        d,
        spec.task(),
        cfg.seed,
    )?;
    let (lipschitz, sup_norm) = match spec.kind {
        SynthKind::LipschitzRegress => (2.0 * std::f64::consts::PI, 1.0),
        _ => (1.0, 1.0),
    };
    let trivial_risk = match cfg.target {
        RateTarget::Regress => 0.5,
        RateTarget::ClassifyProba => 1.0 / 3.0,
    };
    let records = run_curve(&mut forest, &train, &cfg.checkpoints, |f| {
        let (risk, se) = quadratic_risk(f, &test, |x| spec.target_mean(x))?;
        let bound = match cfg.target {
            RateTarget::Regress => Some(regression_risk_bound(
                d,
                lipschitz,
                sup_norm,
                cfg.noise_sd,
                f.lifetime(),
                f.n_seen(),
            )),
            RateTarget::ClassifyProba => None,
        };
        Ok((risk, se, bound))
    })?;

    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.n >= cfg.fit_from)
        .map(|r| ((r.n as f64).ln(), r.metric.ln()))
        .unzip();
    let slope = ols_slope(&xs, &ys);
    let theory = -2.0 / (d as f64 + 2.0);
    // The ceiling is only informative where it is below the risk of the
    // zero estimator.
    let ceiling_ok = records
        .iter()
        .filter_map(|r| r.bound.map(|b| (r.metric, b)))
        .filter(|(_, b)| *b < trivial_risk)
        .all(|(m, b)| m <= b);

    Ok(ExperimentResult {
        schema: EXPERIMENT_SCHEMA.into(),
        command: "rate-check".into(),
        config: serde_json::json!({
            "target": cfg.target,
            "synth": spec,
            "trees": cfg.trees,
            "schedule": schedule.to_string(),
            "checkpoints": cfg.checkpoints,
            "test_size": cfg.test_size,
            "seed": cfg.seed,
            "fit_from": cfg.fit_from,
        }),
        series: vec![Series {
            label: schedule.to_string(),
            metric: "quadratic_risk".into(),
            records,
        }],
        derived: serde_json::json!({
            "slope": slope,
            "theoretical_slope": theory,
            "slope_tolerance": cfg.slope_tolerance,
            "slope_within_tolerance": (slope - theory).abs() <= cfg.slope_tolerance,
            "risk_below_ceiling": ceiling_ok,
        }),
    })
}

/// Serializes with the timing fields removed, for determinism comparisons.
pub fn without_timing(result: &ExperimentResult) -> Result<String> {
    let mut v = serde_json::to_value(result).context("serialize result")?;
    strip_field(&mut v, TIMING_FIELD);
    Ok(serde_json::to_string(&v)?)
}

pub fn strip_field(v: &mut serde_json::Value, field: &str) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove(field);
            map.values_mut().for_each(|x| strip_field(x, field));
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(|x| strip_field(x, field)),
        _ => {}
    }
}
