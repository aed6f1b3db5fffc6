//! Mondrian tree partitions of an axis-aligned box.
//!
//! Trees are stored as an arena of [`Node`]s. Every node caches the total
//! linear dimension of the leaves below it (`weight`), which lets
//! [`MondrianTree::extend_fast`] pick the leaf to split with a single
//! root-to-leaf walk.

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::rng::RandomSource;

pub type NodeId = usize;

/// Axis-aligned box `prod_j [lower[j], upper[j]]`.
///
/// Serialized as a pair of arrays `[[lower...], [upper...]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[Vec<f64>; 2]", try_from = "[Vec<f64>; 2]")]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return arg("box bounds must be nonempty and of equal length");
        }
        for (j, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(0.0 <= *a && a <= b && *b <= 1.0) {
                return arg(format!(
                    "box side {j} is not a subinterval of [0,1]: [{a}, {b}]"
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dimension: usize) -> Self {
        Self {
            lower: vec![0.0; dimension],
            upper: vec![1.0; dimension],
        }
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.dimension()).map(|j| self.side(j)).collect()
    }

    /// Sum of side lengths; the rate of the cell's split clock.
    pub fn linear_dimension(&self) -> f64 {
        (0..self.dimension()).map(|j| self.side(j)).sum()
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        (0..self.dimension())
            .map(|j| self.side(j).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (a, b))| a <= v && v <= b)
    }

    fn halves(&self, split: Split) -> (AxisBox, AxisBox) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[split.dimension] = split.threshold;
        right.lower[split.dimension] = split.threshold;
        (left, right)
    }
}

impl From<AxisBox> for [Vec<f64>; 2] {
    fn from(b: AxisBox) -> Self {
        [b.lower, b.upper]
    }
}

impl TryFrom<[Vec<f64>; 2]> for AxisBox {
    type Error = Error;

    fn try_from([lower, upper]: [Vec<f64>; 2]) -> Result<Self> {
        AxisBox::new(lower, upper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Zero-based coordinate index.
    pub dimension: usize,
    pub threshold: f64,
}

/// Label statistics of the training samples stored in a leaf.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub count0: u64,
    pub count1: u64,
    pub sum_y: f64,
    /// Buffer indices of the samples in this leaf, ascending.
    pub sample_ids: Vec<u32>,
}

impl LeafStats {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Records sample `id` with target `y`. Class counts are bumped for
    /// targets equal to 0 or 1; `sum_y` always accumulates.
    pub fn push(&mut self, id: u32, y: f64) {
        self.sample_ids.push(id);
        if y == 1.0 {
            self.count1 += 1;
        } else if y == 0.0 {
            self.count0 += 1;
        }
        self.sum_y += y;
    }

    /// Fraction of label-1 samples; 0 for an empty leaf.
    pub fn proportion(&self) -> f64 {
        let total = self.count0 + self.count1;
        if total == 0 {
            0.0
        } else {
            self.count1 as f64 / total as f64
        }
    }

    /// Mean stored target; 0 for an empty leaf.
    pub fn mean(&self) -> f64 {
        if self.sample_ids.is_empty() {
            0.0
        } else {
            self.sum_y / self.sample_ids.len() as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<NodeId>,
    #[serde(rename = "box")]
    pub cell: AxisBox,
    pub creation_time: f64,
    pub split: Option<Split>,
    pub children: Option<[NodeId; 2]>,
    /// Total linear dimension of the leaves in this subtree.
    pub weight: f64,
    pub stats: Option<LeafStats>,
}

impl Node {
    fn leaf(parent: Option<NodeId>, cell: AxisBox, creation_time: f64) -> Self {
        let weight = cell.linear_dimension();
        Self {
            parent,
            cell,
            creation_time,
            split: None,
            children: None,
            weight,
            stats: Some(LeafStats::default()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MondrianTree {
    lifetime: f64,
    dimension: usize,
    nodes: Vec<Node>,
    /// Stats detached from leaves that were split; the owner of the sample
    /// buffer re-routes them with [`MondrianTree::take_unrouted`].
    #[serde(skip)]
    unrouted: Vec<(NodeId, LeafStats)>,
}

const ROOT: NodeId = 0;

impl MondrianTree {
    /// Single-leaf partition of `cell` at lifetime 0.
    pub fn trivial(cell: AxisBox) -> Self {
        Self {
            lifetime: 0.0,
            dimension: cell.dimension(),
            nodes: vec![Node::leaf(None, cell, 0.0)],
            unrouted: Vec::new(),
        }
    }

    /// Samples a partition distributed as MP(`lifetime`, `cell`).
    pub fn sample(lifetime: f64, cell: AxisBox, rng: &mut RandomSource) -> Result<Self> {
        if !(lifetime >= 0.0) {
            return arg(format!("lifetime must be >= 0, got {lifetime}"));
        }
        let mut tree = Self::trivial(cell);
        tree.split_cell(ROOT, 0.0, lifetime, rng)?;
        tree.lifetime = lifetime;
        Ok(tree)
    }

    pub fn lifetime(&self) -> f64 {
        self.lifetime
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[ROOT]
    }

    pub fn split_count(&self) -> usize {
        (self.nodes.len() - 1) / 2
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i)
    }

    /// Time of the root split, or infinity for a single-leaf tree.
    pub fn first_split_time(&self) -> f64 {
        match self.root().children {
            Some([l, _]) => self.nodes[l].creation_time,
            None => f64::INFINITY,
        }
    }

    /// Recursively splits leaf `node` with clocks started at `tau` until
    /// `lifetime`. Returns the leaves created by this call.
    pub fn split_cell(
        &mut self,
        node: NodeId,
        tau: f64,
        lifetime: f64,
        rng: &mut RandomSource,
    ) -> Result<Vec<NodeId>> {
        if !self.nodes[node].is_leaf() {
            return arg(format!("node {node} is not a leaf"));
        }
        let mut created = Vec::new();
        let mut stack = vec![(node, tau)];
        while let Some((id, start)) = stack.pop() {
            let rate = self.nodes[id].cell.linear_dimension();
            let time = start + rng.exponential(rate)?;
            if time <= lifetime {
                let [l, r] = self.split_leaf(id, time, rng)?;
                stack.push((r, time));
                stack.push((l, time));
            } else if id != node {
                created.push(id);
            }
        }
        Ok(created)
    }

    /// Extends the partition from its current lifetime to `new_lifetime` by
    /// restarting every leaf's clock at the current lifetime.
    pub fn extend(&mut self, new_lifetime: f64, rng: &mut RandomSource) -> Result<Vec<NodeId>> {
        self.check_extension(new_lifetime)?;
        let start = self.lifetime;
        let leaves: Vec<NodeId> = self.leaf_ids().collect();
        let mut created = Vec::new();
        for leaf in leaves {
            created.extend(self.split_cell(leaf, start, new_lifetime, rng)?);
        }
        self.lifetime = new_lifetime;
        Ok(created)
    }

    /// Same law as [`MondrianTree::extend`], driven by one global clock with
    /// rate equal to the total leaf linear dimension; the leaf to split is
    /// found top-down with child probabilities proportional to subtree weight.
    pub fn extend_fast(
        &mut self,
        new_lifetime: f64,
        rng: &mut RandomSource,
    ) -> Result<Vec<NodeId>> {
        self.check_extension(new_lifetime)?;
        let first_new = self.nodes.len();
        let mut time = self.lifetime;
        loop {
            time += rng.exponential(self.nodes[ROOT].weight)?;
            if time > new_lifetime {
                break;
            }
            let leaf = self.pick_leaf(rng)?;
            self.split_leaf(leaf, time, rng)?;
        }
        self.lifetime = new_lifetime;
        Ok((first_new..self.nodes.len())
            .filter(|&i| self.nodes[i].is_leaf())
            .collect())
    }

    fn check_extension(&self, new_lifetime: f64) -> Result<()> {
        if !(new_lifetime >= self.lifetime) {
            return arg(format!(
                "cannot extend lifetime {} to {}",
                self.lifetime, new_lifetime
            ));
        }
        Ok(())
    }

    fn pick_leaf(&self, rng: &mut RandomSource) -> Result<NodeId> {
        let mut id = ROOT;
        while let Some([l, r]) = self.nodes[id].children {
            let side = rng.categorical(&[self.nodes[l].weight, self.nodes[r].weight])?;
            id = if side == 0 { l } else { r };
        }
        Ok(id)
    }

    /// Splits a leaf at `time`: dimension chosen proportionally to side
    /// length, threshold uniform on that side.
    fn split_leaf(&mut self, id: NodeId, time: f64, rng: &mut RandomSource) -> Result<[NodeId; 2]> {
        let cell = &self.nodes[id].cell;
        let dimension = rng.categorical(&cell.sides())?;
        let threshold = rng.uniform(cell.lower[dimension], cell.upper[dimension])?;
        let split = Split {
            dimension,
            threshold,
        };
        let (lbox, rbox) = cell.halves(split);

        let l = self.nodes.len();
        let r = l + 1;
        self.nodes.push(Node::leaf(Some(id), lbox, time));
        self.nodes.push(Node::leaf(Some(id), rbox, time));

        let node = &mut self.nodes[id];
        node.split = Some(split);
        node.children = Some([l, r]);
        if let Some(stats) = node.stats.take() {
            if !stats.is_empty() {
                self.unrouted.push((id, stats));
            }
        }
        self.refresh_weights(id);
        Ok([l, r])
    }

    fn refresh_weights(&mut self, from: NodeId) {
        let mut cur = Some(from);
        while let Some(id) = cur {
            if let Some([l, r]) = self.nodes[id].children {
                self.nodes[id].weight = self.nodes[l].weight + self.nodes[r].weight;
            }
            cur = self.nodes[id].parent;
        }
    }

    /// Stats that were attached to leaves split since the last call, keyed
    /// by the (now interior) node that held them.
    pub fn take_unrouted(&mut self) -> Vec<(NodeId, LeafStats)> {
        std::mem::take(&mut self.unrouted)
    }

    pub fn stats_mut(&mut self, leaf: NodeId) -> Option<&mut LeafStats> {
        self.nodes[leaf].stats.as_mut()
    }

    /// Leaf below `from` reached by `x`, going left iff
    /// `x[dim] <= threshold`. No domain check.
    pub fn descend(&self, from: NodeId, x: &[f64]) -> NodeId {
        let mut id = from;
        while let (Some([l, r]), Some(split)) = (self.nodes[id].children, self.nodes[id].split) {
            id = if x[split.dimension] <= split.threshold {
                l
            } else {
                r
            };
        }
        id
    }

    /// Leaf whose cell contains `x`.
    pub fn leaf_of(&self, x: &[f64]) -> Result<NodeId> {
        if x.len() != self.dimension {
            return arg(format!(
                "point has {} coordinates, tree has dimension {}",
                x.len(),
                self.dimension
            ));
        }
        if !self.root().cell.contains(x) {
            return arg(format!("point {x:?} lies outside the tree's domain"));
        }
        Ok(self.descend(ROOT, x))
    }

    /// Number of edges from the root to the leaf containing `x`.
    pub fn depth_of(&self, x: &[f64]) -> Result<usize> {
        let mut id = self.leaf_of(x)?;
        let mut depth = 0;
        while let Some(p) = self.nodes[id].parent {
            id = p;
            depth += 1;
        }
        Ok(depth)
    }

    /// Euclidean diameter of the cell containing `x`.
    pub fn cell_diameter(&self, x: &[f64]) -> Result<f64> {
        Ok(self.nodes[self.leaf_of(x)?].cell.diameter())
    }

    /// Split positions induced on the segment through `anchor` parallel to
    /// coordinate `axis`, sorted ascending.
    pub fn restrict_to_segment(&self, axis: usize, anchor: &[f64]) -> Result<Vec<f64>> {
        if axis >= self.dimension {
            return arg(format!(
                "axis {axis} out of range for dimension {}",
                self.dimension
            ));
        }
        let mut probe = anchor.to_vec();
        if probe.len() != self.dimension {
            return arg("anchor dimension mismatch");
        }
        // The coordinate along `axis` is free; any in-range value passes the
        // domain check.
        probe[axis] = self.root().cell.lower[axis];
        if !self.root().cell.contains(&probe) {
            return arg(format!("anchor {anchor:?} lies outside the tree's domain"));
        }

        let mut cuts = Vec::new();
        let mut stack = vec![ROOT];
        while let Some(id) = stack.pop() {
            let (Some([l, r]), Some(split)) = (self.nodes[id].children, self.nodes[id].split)
            else {
                continue;
            };
            if split.dimension == axis {
                cuts.push(split.threshold);
                stack.push(l);
                stack.push(r);
            } else if anchor[split.dimension] <= split.threshold {
                stack.push(l);
            } else {
                stack.push(r);
            }
        }
        let lo = self.root().cell.lower[axis];
        let hi = self.root().cell.upper[axis];
        cuts.retain(|&c| c > lo && c < hi);
        cuts.sort_by(f64::total_cmp);
        Ok(cuts)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for (id, node) in self.nodes.iter().enumerate() {
            match (node.children, node.split) {
                (Some([l, r]), Some(split)) => {
                    if node.stats.is_some() {
                        return Err(format!("interior node {id} carries leaf stats"));
                    }
                    let (lb, rb) = node.cell.halves(split);
                    if self.nodes[l].cell != lb || self.nodes[r].cell != rb {
                        return Err(format!("children of {id} do not partition its box"));
                    }
                    for c in [l, r] {
                        if self.nodes[c].parent != Some(id) {
                            return Err(format!("node {c} has wrong parent"));
                        }
                        let t = self.nodes[c].creation_time;
                        if !(t > node.creation_time) || t > self.lifetime {
                            return Err(format!("node {c} has creation time {t} out of order"));
                        }
                    }
                    if node.weight != self.nodes[l].weight + self.nodes[r].weight {
                        return Err(format!("stale weight at node {id}"));
                    }
                }
                (None, None) => {
                    if node.stats.is_none() {
                        return Err(format!("leaf {id} has no stats"));
                    }
                    if node.weight != node.cell.linear_dimension() {
                        return Err(format!("stale weight at leaf {id}"));
                    }
                }
                _ => {
                    return Err(format!(
                        "node {id} has a split without children or vice versa"
                    ))
                }
            }
        }
        let leaves = self.leaf_ids().count();
        if leaves != self.nodes.len() - leaves + 1 {
            return Err("leaf count is not interior count + 1".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(s)?;
        tree.audit().map_err(Error::Argument)?;
        Ok(tree)
    }
}
