//! Online Mondrian Forests grown with an increasing lifetime schedule.
//!
//! * [`rng`]: per-tree deterministic random streams.
//! * [`partition`]: Mondrian tree partitions, sampling and extension.
//! * [`forest`]: the online forest estimator and its prediction rules.
//! * [`data`]: CSV ingestion, normalization, synthetic distributions.
//! * [`verify`]: Monte-Carlo checks of the partition laws.

// NaN must fail validation, so the negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod forest;
pub mod partition;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use forest::{
    Forest, ForestCheckpoint, LifetimeSchedule, ScheduleMode, ScheduleSpec, Task, VoteRule,
};
pub use partition::{AxisBox, LeafStats, MondrianTree, Node, NodeId, Split};
pub use rng::RandomSource;
