//! Online Mondrian Forest with a lifetime schedule.
//!
//! Each call to [`Forest::partial_fit`] stores the sample, routes it into
//! every tree, extends every tree from `lambda_{n-1}` to `lambda_n`, and
//! refits leaves created by the extension from the stored samples, so leaf
//! statistics always aggregate every sample seen so far.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::partition::{AxisBox, LeafStats, MondrianTree};
use crate::rng::{RandomSource, SourceState};

pub const CHECKPOINT_SCHEMA: &str = "mondrian-forest/checkpoint/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Regress,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Fixed,
    Power,
}

/// `n -> lambda_n`: constant, or `c * n^(1/(d+2))`. Always 0 at `n = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifetimeSchedule {
    pub mode: ScheduleMode,
    pub constant: f64,
    pub dimension: usize,
}

impl LifetimeSchedule {
    pub fn fixed(lifetime: f64, dimension: usize) -> Result<Self> {
        if !(lifetime >= 0.0) || !lifetime.is_finite() {
            return arg(format!(
                "fixed lifetime must be finite and >= 0, got {lifetime}"
            ));
        }
        Self::checked(ScheduleMode::Fixed, lifetime, dimension)
    }

    pub fn power(constant: f64, dimension: usize) -> Result<Self> {
        if !(constant > 0.0) || !constant.is_finite() {
            return arg(format!(
                "power schedule constant must be > 0, got {constant}"
            ));
        }
        Self::checked(ScheduleMode::Power, constant, dimension)
    }

    fn checked(mode: ScheduleMode, constant: f64, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return arg("dimension must be >= 1");
        }
        Ok(Self {
            mode,
            constant,
            dimension,
        })
    }

    pub fn lifetime_at(&self, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        match self.mode {
            ScheduleMode::Fixed => self.constant,
            ScheduleMode::Power => {
                self.constant * (n as f64).powf(1.0 / (self.dimension as f64 + 2.0))
            }
        }
    }
}

/// Dimension-free form of a schedule as written on the command line:
/// `fixed:<lambda>` or `power:<c>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub mode: ScheduleMode,
    pub constant: f64,
}

impl ScheduleSpec {
    pub fn for_dimension(self, dimension: usize) -> Result<LifetimeSchedule> {
        match self.mode {
            ScheduleMode::Fixed => LifetimeSchedule::fixed(self.constant, dimension),
            ScheduleMode::Power => LifetimeSchedule::power(self.constant, dimension),
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mode, value) = s.split_once(':').ok_or_else(|| {
            Error::Argument(format!("schedule {s:?} is not <fixed|power>:<value>"))
        })?;
        let mode = match mode {
            "fixed" => ScheduleMode::Fixed,
            "power" => ScheduleMode::Power,
            other => return arg(format!("unknown schedule mode {other:?}")),
        };
        let constant: f64 = value
            .parse()
            .map_err(|_| Error::Argument(format!("bad schedule constant {value:?}")))?;
        Ok(Self { mode, constant })
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            ScheduleMode::Fixed => "fixed",
            ScheduleMode::Power => "power",
        };
        write!(f, "{mode}:{}", self.constant)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteRule {
    /// Majority of per-tree hard votes.
    Majority,
    /// Threshold the averaged probability at 1/2.
    Plugin,
}

impl FromStr for VoteRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(VoteRule::Majority),
            "plugin" => Ok(VoteRule::Plugin),
            other => arg(format!("unknown rule {other:?}")),
        }
    }
}

/// Append-only store of every training sample, row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBuffer {
    dimension: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl SampleBuffer {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            features: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dimension);
        self.features.extend_from_slice(x);
        self.targets.push(y);
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.features[id * self.dimension..(id + 1) * self.dimension]
    }

    pub fn target(&self, id: usize) -> f64 {
        self.targets[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.features
            .chunks_exact(self.dimension.max(1))
            .zip(self.targets.iter().copied())
    }
}

#[derive(Clone, Debug)]
pub struct Forest {
    trees: Vec<MondrianTree>,
    sources: Vec<RandomSource>,
    schedule: LifetimeSchedule,
    task: Task,
    seed: u64,
    n_seen: usize,
    buffer: SampleBuffer,
    /// Loaded without its sample buffer: prediction only.
    frozen: bool,
}

/// Serialized forest state, without the sample buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestCheckpoint {
    pub schema: String,
    pub task: Task,
    pub schedule: LifetimeSchedule,
    pub seed: u64,
    pub n_seen: usize,
    pub trees: Vec<MondrianTree>,
    pub sources: Vec<SourceState>,
}

impl Forest {
    pub fn new(
        n_trees: usize,
        schedule: LifetimeSchedule,
        dimension: usize,
        task: Task,
        seed: u64,
    ) -> Result<Self> {
        if n_trees == 0 {
            return arg("a forest needs at least one tree");
        }
        if dimension == 0 {
            return arg("dimension must be >= 1");
        }
        if schedule.dimension != dimension {
            return arg(format!(
                "schedule built for dimension {}, forest has {dimension}",
                schedule.dimension
            ));
        }
        Ok(Self {
            trees: (0..n_trees)
                .map(|_| MondrianTree::trivial(AxisBox::unit(dimension)))
                .collect(),
            sources: (0..n_trees as u64)
                .map(|k| RandomSource::new(seed, k))
                .collect(),
            schedule,
            task,
            seed,
            n_seen: 0,
            buffer: SampleBuffer::new(dimension),
            frozen: false,
        })
    }

    pub fn trees(&self) -> &[MondrianTree] {
        &self.trees
    }

    pub fn sources(&self) -> &[RandomSource] {
        &self.sources
    }

    pub fn schedule(&self) -> &LifetimeSchedule {
        &self.schedule
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn dimension(&self) -> usize {
        self.buffer.dimension
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn lifetime(&self) -> f64 {
        self.schedule.lifetime_at(self.n_seen)
    }

    pub fn partial_fit(&mut self, x: &[f64], y: f64) -> Result<()> {
        if self.frozen {
            return arg("forest was loaded without its sample buffer and cannot be trained");
        }
        self.check_point(x)?;
        if !y.is_finite() {
            return arg(format!("target must be finite, got {y}"));
        }
        if self.task == Task::Classify && y != 0.0 && y != 1.0 {
            return arg(format!("classification labels must be 0 or 1, got {y}"));
        }
        if self.n_seen >= u32::MAX as usize {
            return arg("sample buffer is full");
        }

        let id = self.n_seen;
        self.buffer.push(x, y);
        self.n_seen += 1;
        let from = self.schedule.lifetime_at(self.n_seen - 1);
        let to = self.schedule.lifetime_at(self.n_seen);
        debug_assert!(to >= from);

        let buffer = &self.buffer;
        self.trees
            .par_iter_mut()
            .zip(self.sources.par_iter_mut())
            .try_for_each(|(tree, rng)| -> Result<()> {
                let leaf = tree.descend(0, x);
                tree.stats_mut(leaf)
                    .expect("leaf carries stats")
                    .push(id as u32, y);
                tree.extend_fast(to, rng)?;
                refit_split_leaves(tree, buffer);
                Ok(())
            })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return arg(format!(
                "point has {} coordinates, forest has dimension {}",
                x.len(),
                self.dimension()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return arg("point has non-finite coordinates");
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return arg(format!("point {x:?} lies outside the unit cube"));
        }
        Ok(())
    }

    fn leaf_stats<'a>(&'a self, x: &'a [f64]) -> Result<impl Iterator<Item = &'a LeafStats> + 'a> {
        self.check_point(x)?;
        Ok(self.trees.iter().map(move |t| {
            t.node(t.descend(0, x))
                .stats
                .as_ref()
                .expect("leaf carries stats")
        }))
    }

    fn require(&self, task: Task) -> Result<()> {
        if self.task != task {
            return Err(Error::Mode {
                expected: task.name(),
                actual: self.task.name(),
            });
        }
        Ok(())
    }

    /// Average over trees of the fraction of 1-labels in the leaf of `x`
    /// (0 for an empty leaf).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.require(Task::Classify)?;
        let sum: f64 = self.leaf_stats(x)?.map(LeafStats::proportion).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict_class(&self, x: &[f64], rule: VoteRule) -> Result<u8> {
        match rule {
            VoteRule::Plugin => Ok(u8::from(self.predict_proba(x)? > 0.5)),
            VoteRule::Majority => {
                self.require(Task::Classify)?;
                let votes = self.leaf_stats(x)?.filter(|s| s.proportion() > 0.5).count();
                Ok(u8::from(2 * votes > self.trees.len()))
            }
        }
    }

    /// Average over trees of the mean target in the leaf of `x` (0 for an
    /// empty leaf).
    pub fn predict_regression(&self, x: &[f64]) -> Result<f64> {
        self.require(Task::Regress)?;
        let sum: f64 = self.leaf_stats(x)?.map(LeafStats::mean).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn checkpoint(&self) -> ForestCheckpoint {
        ForestCheckpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            task: self.task,
            schedule: self.schedule,
            seed: self.seed,
            n_seen: self.n_seen,
            trees: self.trees.clone(),
            sources: self.sources.iter().map(RandomSource::state).collect(),
        }
    }

    /// Restores a forest. Without `buffer` the forest can predict but not
    /// train further.
    pub fn from_checkpoint(ckpt: ForestCheckpoint, buffer: Option<SampleBuffer>) -> Result<Self> {
        if ckpt.schema != CHECKPOINT_SCHEMA {
            return arg(format!("unsupported checkpoint schema {:?}", ckpt.schema));
        }
        if ckpt.trees.is_empty() || ckpt.trees.len() != ckpt.sources.len() {
            return arg("checkpoint tree and source counts disagree");
        }
        let dimension = ckpt.schedule.dimension;
        let lifetime = ckpt.schedule.lifetime_at(ckpt.n_seen);
        for tree in &ckpt.trees {
            tree.audit().map_err(Error::Argument)?;
            if tree.dimension() != dimension || tree.lifetime() != lifetime {
                return arg("checkpoint tree does not match its schedule");
            }
        }
        let frozen = buffer.is_none();
        let buffer = match buffer {
            Some(b) if b.len() != ckpt.n_seen || b.dimension() != dimension => {
                return arg(format!(
                    "sample buffer holds {} samples of dimension {}, checkpoint expects {} of dimension {dimension}",
                    b.len(),
                    b.dimension(),
                    ckpt.n_seen
                ));
            }
            Some(b) => b,
            None => SampleBuffer::new(dimension),
        };
        let sources = ckpt
            .sources
            .iter()
            .map(RandomSource::from_state)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trees: ckpt.trees,
            sources,
            schedule: ckpt.schedule,
            task: ckpt.task,
            seed: ckpt.seed,
            n_seen: ckpt.n_seen,
            buffer,
            frozen,
        })
    }

    /// Checks the sample-routing invariants of every tree against the
    /// buffer.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let lifetime = self.lifetime();
        for (k, tree) in self.trees.iter().enumerate() {
            tree.audit().map_err(|e| format!("tree {k}: {e}"))?;
            if tree.lifetime() != lifetime {
                return Err(format!(
                    "tree {k} has lifetime {} != {lifetime}",
                    tree.lifetime()
                ));
            }
            if self.frozen {
                continue;
            }
            let mut seen = vec![false; self.n_seen];
            for leaf in tree.leaf_ids() {
                let node = tree.node(leaf);
                let stats = node.stats.as_ref().expect("leaf carries stats");
                let mut expect = LeafStats::default();
                for &id in &stats.sample_ids {
                    let id = id as usize;
                    if id >= self.n_seen || seen[id] {
                        return Err(format!(
                            "tree {k}: sample {id} missing from buffer or duplicated"
                        ));
                    }
                    seen[id] = true;
                    if !node.cell.contains(self.buffer.point(id)) {
                        return Err(format!("tree {k}: sample {id} outside its leaf"));
                    }
                    expect.push(id as u32, self.buffer.target(id));
                }
                if &expect != stats {
                    return Err(format!("tree {k}: stale stats at leaf {leaf}"));
                }
            }
            if let Some(id) = seen.iter().position(|s| !s) {
                return Err(format!("tree {k}: sample {id} is in no leaf"));
            }
        }
        Ok(())
    }
}

/// Moves the samples of leaves split during an extension into the leaves
/// that now cover them. Ids stay in ascending order.
fn refit_split_leaves(tree: &mut MondrianTree, buffer: &SampleBuffer) {
    for (node, stats) in tree.take_unrouted() {
        for &id in &stats.sample_ids {
            let leaf = tree.descend(node, buffer.point(id as usize));
            tree.stats_mut(leaf)
                .expect("leaf carries stats")
                .push(id, buffer.target(id as usize));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classify(k: usize, schedule: LifetimeSchedule) -> Forest {
        Forest::new(k, schedule, schedule.dimension, Task::Classify, 1).unwrap()
    }

    /// Overwrites the root leaf of tree `k` with the given class counts.
    fn set_counts(forest: &mut Forest, k: usize, count0: u64, count1: u64) {
        let stats = forest.trees[k].stats_mut(0).unwrap();
        stats.count0 = count0;
        stats.count1 = count1;
    }

    #[test]
    fn lifetime_examples() {
        let s = LifetimeSchedule::power(1.0, 1).unwrap();
        assert_eq!(s.lifetime_at(0), 0.0);
        assert!((s.lifetime_at(8) - 2.0).abs() < 1e-12);
        let s = LifetimeSchedule::power(1.0, 2).unwrap();
        assert_eq!(s.lifetime_at(1), 1.0);
        assert!((s.lifetime_at(1000) - 5.623_413_251_903_491).abs() < 1e-12);
        let s = LifetimeSchedule::fixed(2.0, 3).unwrap();
        assert_eq!(s.lifetime_at(0), 0.0);
        assert_eq!(s.lifetime_at(1), 2.0);
        assert_eq!(s.lifetime_at(12345), 2.0);
    }

    #[test]
    fn schedule_parsing() {
        let s: ScheduleSpec = "power:1.5".parse().unwrap();
        assert_eq!(s.mode, ScheduleMode::Power);
        assert_eq!(s.constant, 1.5);
        assert_eq!(s.to_string(), "power:1.5");
        assert!("fixed".parse::<ScheduleSpec>().is_err());
        assert!("linear:1".parse::<ScheduleSpec>().is_err());
        assert!("power:0"
            .parse::<ScheduleSpec>()
            .unwrap()
            .for_dimension(1)
            .is_err());
        assert!("fixed:0"
            .parse::<ScheduleSpec>()
            .unwrap()
            .for_dimension(1)
            .is_ok());
    }

    #[test]
    fn creation_errors() {
        let s = LifetimeSchedule::fixed(1.0, 2).unwrap();
        assert!(Forest::new(0, s, 2, Task::Classify, 0).is_err());
        assert!(Forest::new(1, s, 3, Task::Classify, 0).is_err());
        assert!(LifetimeSchedule::fixed(1.0, 0).is_err());
    }

    #[test]
    fn untrained_predictions_are_zero() {
        let f = classify(1, LifetimeSchedule::power(1.0, 1).unwrap());
        assert_eq!(f.predict_proba(&[0.3]).unwrap(), 0.0);
        assert_eq!(f.predict_class(&[0.3], VoteRule::Majority).unwrap(), 0);
        let s = LifetimeSchedule::power(1.0, 2).unwrap();
        let f = Forest::new(3, s, 2, Task::Regress, 0).unwrap();
        assert_eq!(f.predict_regression(&[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn distinct_streams_per_tree() {
        let f = classify(10, LifetimeSchedule::fixed(1.0, 1).unwrap());
        let streams: std::collections::BTreeSet<u64> =
            f.sources().iter().map(RandomSource::stream).collect();
        assert_eq!(streams.len(), 10);
    }

    #[test]
    fn proportion_and_average() {
        let mut f = classify(1, LifetimeSchedule::fixed(0.0, 1).unwrap());
        set_counts(&mut f, 0, 1, 3);
        assert_eq!(f.predict_proba(&[0.5]).unwrap(), 0.75);

        let mut f = classify(2, LifetimeSchedule::fixed(0.0, 1).unwrap());
        set_counts(&mut f, 0, 1, 3);
        set_counts(&mut f, 1, 3, 1);
        assert_eq!(f.predict_proba(&[0.5]).unwrap(), 0.5);
        // Plugin uses a strict inequality.
        assert_eq!(f.predict_class(&[0.5], VoteRule::Plugin).unwrap(), 0);
        // Votes {1, 0} tie at K = 2.
        assert_eq!(f.predict_class(&[0.5], VoteRule::Majority).unwrap(), 0);
    }

    #[test]
    fn majority_of_three() {
        let mut f = classify(3, LifetimeSchedule::fixed(0.0, 1).unwrap());
        set_counts(&mut f, 0, 0, 2);
        set_counts(&mut f, 1, 1, 2);
        set_counts(&mut f, 2, 5, 0);
        assert_eq!(f.predict_class(&[0.5], VoteRule::Majority).unwrap(), 1);
        // Per-tree proportion exactly 1/2 votes 0.
        set_counts(&mut f, 1, 2, 2);
        assert_eq!(f.predict_class(&[0.5], VoteRule::Majority).unwrap(), 0);
    }

    #[test]
    fn regression_means() {
        let s = LifetimeSchedule::fixed(0.0, 1).unwrap();
        let mut f = Forest::new(1, s, 1, Task::Regress, 0).unwrap();
        f.partial_fit(&[0.1], 1.0).unwrap();
        f.partial_fit(&[0.9], 3.0).unwrap();
        assert_eq!(f.predict_regression(&[0.5]).unwrap(), 2.0);

        let mut f = Forest::new(2, s, 1, Task::Regress, 0).unwrap();
        f.trees[0].stats_mut(0).unwrap().push(0, 1.0);
        f.trees[1].stats_mut(0).unwrap().push(0, 3.0);
        assert_eq!(f.predict_regression(&[0.5]).unwrap(), 2.0);
    }

    #[test]
    fn mode_errors() {
        let s = LifetimeSchedule::fixed(1.0, 1).unwrap();
        let f = Forest::new(1, s, 1, Task::Regress, 0).unwrap();
        assert!(matches!(f.predict_proba(&[0.5]), Err(Error::Mode { .. })));
        assert!(matches!(
            f.predict_class(&[0.5], VoteRule::Majority),
            Err(Error::Mode { .. })
        ));
        let f = Forest::new(1, s, 1, Task::Classify, 0).unwrap();
        assert!(matches!(
            f.predict_regression(&[0.5]),
            Err(Error::Mode { .. })
        ));
    }

    #[test]
    fn input_validation() {
        let mut f = classify(2, LifetimeSchedule::power(1.0, 2).unwrap());
        assert!(f.partial_fit(&[0.5, f64::NAN], 1.0).is_err());
        assert!(f.partial_fit(&[0.5, 0.5], f64::INFINITY).is_err());
        assert!(f.partial_fit(&[0.5, 0.5], 0.5).is_err());
        assert!(f.partial_fit(&[0.5, 1.5], 1.0).is_err());
        assert!(f.partial_fit(&[0.5], 1.0).is_err());
        assert_eq!(f.n_seen(), 0);
        assert!(f.predict_proba(&[-0.1, 0.5]).is_err());
    }

    #[test]
    fn zero_lifetime_predicts_global_fraction() {
        let mut f = classify(4, LifetimeSchedule::fixed(0.0, 2).unwrap());
        let mut rng = RandomSource::new(3, 99);
        let mut ones = 0;
        for _ in 0..57 {
            let x = [rng.unit(), rng.unit()];
            let y = u8::from(rng.bernoulli(0.3));
            ones += y as usize;
            f.partial_fit(&x, y as f64).unwrap();
        }
        for t in f.trees() {
            assert_eq!(t.split_count(), 0);
        }
        let p = f.predict_proba(&[0.2, 0.7]).unwrap();
        assert_eq!(p, ones as f64 / 57.0);
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let s = LifetimeSchedule::power(2.0, 2).unwrap();
        let mut a = Forest::new(3, s, 2, Task::Classify, 17).unwrap();
        let mut rng = RandomSource::new(0, 42);
        let mut draw = || {
            (
                [rng.unit(), rng.unit()],
                f64::from(u8::from(rng.bernoulli(0.5))),
            )
        };
        for _ in 0..50 {
            let (x, y) = draw();
            a.partial_fit(&x, y).unwrap();
        }
        let json = serde_json::to_string(&a.checkpoint()).unwrap();
        let ckpt: ForestCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(ckpt, a.checkpoint());
        let mut b = Forest::from_checkpoint(ckpt.clone(), Some(a.buffer().clone())).unwrap();
        for _ in 0..50 {
            let (x, y) = draw();
            a.partial_fit(&x, y).unwrap();
            b.partial_fit(&x, y).unwrap();
        }
        assert_eq!(a.checkpoint(), b.checkpoint());

        let mut frozen = Forest::from_checkpoint(ckpt, None).unwrap();
        assert!(frozen.partial_fit(&[0.5, 0.5], 1.0).is_err());
        assert!(frozen.predict_proba(&[0.5, 0.5]).is_ok());
    }
}
