//! Monte-Carlo checks of the distributional properties of Mondrian
//! partitions: split-count bound, cell-diameter bounds, Poisson law on
//! axis-parallel slices, and equality in law of extended and directly
//! sampled trees.
//!
//! Every trial draws from its own stream `RandomSource::new(seed, stream)`,
//! so reports are reproducible regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::partition::{AxisBox, MondrianTree};
use crate::rng::RandomSource;
use crate::stats;

pub const REPORT_SCHEMA: &str = "mondrian-forest/verify-report/v1";

/// One-sided 99% normal quantile.
const Z99: f64 = 2.326_347_874_040_841;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub dimension: usize,
    pub lifetime: f64,
    /// Target lifetime for extension checks.
    pub lifetime_next: Option<f64>,
    pub trials: usize,
    /// Defaults to the cube center.
    pub probe: Option<Vec<f64>>,
    pub delta_grid: Vec<f64>,
    pub significance: f64,
    pub seed: u64,
}

impl VerifyConfig {
    pub fn new(dimension: usize, lifetime: f64, trials: usize, seed: u64) -> Self {
        Self {
            dimension,
            lifetime,
            lifetime_next: None,
            trials,
            probe: None,
            delta_grid: vec![0.1, 0.3, 0.5],
            significance: 0.001,
            seed,
        }
    }

    pub fn probe_point(&self) -> Vec<f64> {
        self.probe
            .clone()
            .unwrap_or_else(|| vec![0.5; self.dimension])
    }

    fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return arg("dimension must be >= 1");
        }
        if self.trials < 100 {
            return arg(format!("at least 100 trials required, got {}", self.trials));
        }
        if !(self.lifetime >= 0.0) {
            return arg("lifetime must be >= 0");
        }
        if self.delta_grid.iter().any(|d| !(*d > 0.0)) {
            return arg("delta values must be > 0");
        }
        if !(self.significance > 0.0 && self.significance < 1.0) {
            return arg("significance must lie in (0, 1)");
        }
        if let Some(p) = &self.probe {
            if p.len() != self.dimension || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return arg("probe point must lie in the unit cube");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `statistic` must not exceed `reference`.
    UpperBound,
    /// `reference` is a p-value that must exceed the significance level.
    PValue,
    /// `statistic` must lie within `tolerance` of `reference`.
    Close,
}

/// One comparison inside a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubCheck {
    pub name: String,
    pub kind: CheckKind,
    pub statistic: f64,
    pub std_error: Option<f64>,
    pub reference: f64,
    pub tolerance: Option<f64>,
    /// Vacuous comparisons are reported but do not affect the verdict.
    pub skipped: bool,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema: String,
    pub claim: String,
    pub params: serde_json::Value,
    /// Headline statistic (first non-skipped check).
    pub statistic: f64,
    pub std_error: Option<f64>,
    pub bound_or_p: f64,
    pub verdict: Verdict,
    pub trials: usize,
    pub checks: Vec<SubCheck>,
}

impl VerifyReport {
    fn new(claim: &str, params: serde_json::Value, trials: usize, checks: Vec<SubCheck>) -> Self {
        let counted: Vec<&SubCheck> = checks.iter().filter(|c| !c.skipped).collect();
        let verdict = Verdict::from_bool(counted.iter().all(|c| c.verdict.passed()));
        // Headline: the first failing check if any, else the first counted.
        let head = counted
            .iter()
            .find(|c| !c.verdict.passed())
            .or_else(|| counted.first())
            .copied();
        Self {
            schema: REPORT_SCHEMA.to_string(),
            claim: claim.to_string(),
            params,
            statistic: head.map_or(0.0, |c| c.statistic),
            std_error: head.and_then(|c| c.std_error),
            bound_or_p: head.map_or(0.0, |c| c.reference),
            verdict,
            trials,
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&SubCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{:<5} {} {} statistic={:.6} bound_or_p={:.6}",
            match self.verdict {
                Verdict::Pass => "PASS",
                Verdict::Fail => "FAIL",
            },
            self.claim,
            self.params,
            self.statistic,
            self.bound_or_p
        )
    }
}

fn upper(name: String, statistic: f64, std_error: Option<f64>, bound: f64, slack: f64) -> SubCheck {
    SubCheck {
        name,
        kind: CheckKind::UpperBound,
        statistic,
        std_error,
        reference: bound,
        tolerance: Some(slack),
        skipped: false,
        verdict: Verdict::from_bool(statistic <= bound + slack),
    }
}

fn p_value(name: &str, outcome: stats::TestOutcome, significance: f64) -> SubCheck {
    SubCheck {
        name: name.to_string(),
        kind: CheckKind::PValue,
        statistic: outcome.statistic,
        std_error: None,
        reference: outcome.p_value,
        tolerance: Some(significance),
        skipped: false,
        verdict: Verdict::from_bool(outcome.p_value > significance),
    }
}

/// Runs `f` on `trials` independent streams `stream_base + i`, in order.
fn trials<T: Send>(
    seed: u64,
    stream_base: u64,
    n: usize,
    f: impl Fn(&mut RandomSource) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(&mut RandomSource::new(seed, stream_base + i)))
        .collect()
}

/// Mean split count over sampled trees against `(e (lambda + 1))^d`, using
/// a one-sided 99% upper confidence limit.
pub fn check_split_count_bound(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let d = cfg.dimension;
    let counts = trials(cfg.seed, 0, cfg.trials, |rng| {
        Ok(MondrianTree::sample(cfg.lifetime, AxisBox::unit(d), rng)?.split_count() as f64)
    })?;
    let (mean, se) = stats::mean_se(&counts);
    let bound = (std::f64::consts::E * (cfg.lifetime + 1.0)).powi(d as i32);
    let mut check = upper("mean_split_count".into(), mean, Some(se), bound, 0.0);
    check.verdict = Verdict::from_bool(mean + Z99 * se <= bound);
    check.tolerance = Some(Z99 * se);
    Ok(VerifyReport::new(
        "split_count_bound",
        serde_json::json!({"d": d, "lambda": cfg.lifetime, "seed": cfg.seed}),
        cfg.trials,
        vec![check],
    ))
}

/// Tail bound `P(D >= delta) <= d (1 + l delta / sqrt d) exp(-l delta / sqrt d)`
/// at each grid point, and `E[D^2] <= 4 d / lambda^2`, for the Euclidean
/// diameter `D` of the cell containing the probe point. Each empirical value
/// may exceed its bound by at most 3 standard errors; grid points whose
/// tail bound is at least 1 are reported as skipped.
pub fn check_diameter_bounds(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    if !(cfg.lifetime > 0.0) {
        return arg("diameter bounds need lifetime > 0");
    }
    let d = cfg.dimension;
    let probe = cfg.probe_point();
    let diam = trials(cfg.seed, 0, cfg.trials, |rng| {
        MondrianTree::sample(cfg.lifetime, AxisBox::unit(d), rng)?.cell_diameter(&probe)
    })?;
    let n = diam.len() as f64;
    let sqrt_d = (d as f64).sqrt();

    let mut checks = Vec::new();
    for &delta in &cfg.delta_grid {
        let freq = diam.iter().filter(|&&v| v >= delta).count() as f64 / n;
        let se = (freq * (1.0 - freq) / n).sqrt();
        let t = cfg.lifetime * delta / sqrt_d;
        let bound = d as f64 * (1.0 + t) * (-t).exp();
        let mut c = upper(
            format!("tail_delta_{delta}"),
            freq,
            Some(se),
            bound,
            3.0 * se,
        );
        c.skipped = bound >= 1.0;
        checks.push(c);
    }

    let sq: Vec<f64> = diam.iter().map(|v| v * v).collect();
    let (mean_sq, se) = stats::mean_se(&sq);
    let bound = 4.0 * d as f64 / cfg.lifetime.powi(2);
    checks.push(upper(
        "mean_sq_diameter".into(),
        mean_sq,
        Some(se),
        bound,
        3.0 * se,
    ));

    Ok(VerifyReport::new(
        "diameter_bounds",
        serde_json::json!({"d": d, "lambda": cfg.lifetime, "probe": probe, "seed": cfg.seed}),
        cfg.trials,
        checks,
    ))
}

/// Split positions on the slice through `anchor` along `axis`: counts must
/// fit Poisson(lambda) and pooled positions Uniform[0, 1].
pub fn check_poisson_slice(
    cfg: &VerifyConfig,
    axis: usize,
    anchor: &[f64],
) -> Result<VerifyReport> {
    cfg.validate()?;
    let d = cfg.dimension;
    let cuts = trials(cfg.seed, 0, cfg.trials, |rng| {
        MondrianTree::sample(cfg.lifetime, AxisBox::unit(d), rng)?.restrict_to_segment(axis, anchor)
    })?;
    let counts: Vec<u64> = cuts.iter().map(|c| c.len() as u64).collect();
    let positions: Vec<f64> = cuts.into_iter().flatten().collect();

    let as_f64: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mean, se) = stats::mean_se(&as_f64);
    let mut mean_check = SubCheck {
        name: "mean_count".into(),
        kind: CheckKind::Close,
        statistic: mean,
        std_error: Some(se),
        reference: cfg.lifetime,
        // Poisson standard error of the mean.
        tolerance: Some(3.0 * (cfg.lifetime / counts.len() as f64).sqrt()),
        skipped: false,
        verdict: Verdict::Pass,
    };
    mean_check.verdict =
        Verdict::from_bool((mean - cfg.lifetime).abs() <= mean_check.tolerance.unwrap_or(0.0));

    let checks = vec![
        p_value(
            "count_poisson_chi2",
            stats::poisson_gof(&counts, cfg.lifetime),
            cfg.significance,
        ),
        p_value(
            "position_uniform_ks",
            stats::ks_uniform(&positions),
            cfg.significance,
        ),
        mean_check,
    ];
    Ok(VerifyReport::new(
        "poisson_slice",
        serde_json::json!({
            "d": d, "lambda": cfg.lifetime, "axis": axis, "anchor": anchor, "seed": cfg.seed
        }),
        cfg.trials,
        checks,
    ))
}

/// Per-tree summary compared between populations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeSummary {
    pub split_count: u64,
    pub probe_depth: u64,
    pub first_split_time: f64,
}

impl TreeSummary {
    pub fn of(tree: &MondrianTree, probe: &[f64]) -> Result<Self> {
        Ok(Self {
            split_count: tree.split_count() as u64,
            probe_depth: tree.depth_of(probe)? as u64,
            first_split_time: tree.first_split_time(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Population {
    /// `sample(lambda')`.
    Direct,
    /// `sample(lambda)` then the leaf-by-leaf extension.
    ExtendNaive,
    /// `sample(lambda)` then the global-clock extension.
    ExtendFast,
}

/// Summaries of `cfg.trials` trees from one population. Populations use
/// disjoint stream ranges.
pub fn sample_population(cfg: &VerifyConfig, population: Population) -> Result<Vec<TreeSummary>> {
    let d = cfg.dimension;
    let target = cfg.lifetime_next.unwrap_or(cfg.lifetime);
    let probe = cfg.probe_point();
    let base = match population {
        Population::Direct => 0,
        Population::ExtendNaive => 1 << 40,
        Population::ExtendFast => 2 << 40,
    };
    trials(cfg.seed, base, cfg.trials, |rng| {
        let tree = match population {
            Population::Direct => MondrianTree::sample(target, AxisBox::unit(d), rng)?,
            Population::ExtendNaive => {
                let mut t = MondrianTree::sample(cfg.lifetime, AxisBox::unit(d), rng)?;
                t.extend(target, rng)?;
                t
            }
            Population::ExtendFast => {
                let mut t = MondrianTree::sample(cfg.lifetime, AxisBox::unit(d), rng)?;
                t.extend_fast(target, rng)?;
                t
            }
        };
        TreeSummary::of(&tree, &probe)
    })
}

fn compare(prefix: &str, a: &[TreeSummary], b: &[TreeSummary], alpha: f64) -> Vec<SubCheck> {
    let col = |s: &[TreeSummary], f: fn(&TreeSummary) -> u64| s.iter().map(f).collect::<Vec<_>>();
    let times = |s: &[TreeSummary]| s.iter().map(|t| t.first_split_time).collect::<Vec<_>>();
    vec![
        p_value(
            &format!("{prefix}_split_count_chi2"),
            stats::chi_square_two_sample(&col(a, |t| t.split_count), &col(b, |t| t.split_count)),
            alpha,
        ),
        p_value(
            &format!("{prefix}_probe_depth_chi2"),
            stats::chi_square_two_sample(&col(a, |t| t.probe_depth), &col(b, |t| t.probe_depth)),
            alpha,
        ),
        p_value(
            &format!("{prefix}_first_split_ks"),
            stats::ks_two_sample(&times(a), &times(b)),
            alpha,
        ),
    ]
}

/// Extended trees against directly sampled ones, and the global-clock
/// extension against the leaf-by-leaf one.
pub fn check_extension_equivalence(cfg: &VerifyConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let next = cfg.lifetime_next.unwrap_or(cfg.lifetime);
    if next < cfg.lifetime {
        return arg("extension target must be >= the starting lifetime");
    }
    let direct = sample_population(cfg, Population::Direct)?;
    let naive = sample_population(cfg, Population::ExtendNaive)?;
    let fast = sample_population(cfg, Population::ExtendFast)?;
    let mut checks = compare("naive_vs_direct", &naive, &direct, cfg.significance);
    checks.extend(compare("fast_vs_naive", &fast, &naive, cfg.significance));
    Ok(VerifyReport::new(
        "extension_equivalence",
        serde_json::json!({
            "d": cfg.dimension, "lambda": cfg.lifetime, "lambda_next": next,
            "probe": cfg.probe_point(), "seed": cfg.seed
        }),
        cfg.trials,
        checks,
    ))
}

/// The canonical parameter grid: four configurations per claim.
pub fn canonical_suite(seed: u64, trials: usize) -> Result<Vec<VerifyReport>> {
    let mut out = Vec::new();
    for (d, lambda) in [(1, 1.0), (1, 3.0), (2, 2.0), (3, 1.0)] {
        out.push(check_split_count_bound(&VerifyConfig::new(
            d, lambda, trials, seed,
        ))?);
    }
    for d in [1, 2] {
        for lambda in [5.0, 10.0] {
            out.push(check_diameter_bounds(&VerifyConfig::new(
                d, lambda, trials, seed,
            ))?);
        }
    }
    for d in [1, 2] {
        for lambda in [2.0, 5.0] {
            let cfg = VerifyConfig::new(d, lambda, trials, seed);
            let mut anchor = vec![0.5; d];
            if d > 1 {
                anchor[1] = 0.3;
            }
            out.push(check_poisson_slice(&cfg, 0, &anchor)?);
        }
    }
    for d in [1, 2] {
        for (lambda, next) in [(1.0, 2.0), (1.0, 3.0)] {
            let mut cfg = VerifyConfig::new(d, lambda, trials, seed);
            cfg.lifetime_next = Some(next);
            out.push(check_extension_equivalence(&cfg)?);
        }
    }
    Ok(out)
}
