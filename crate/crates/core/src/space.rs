//! Finite filtered probability space on a non-recombining scenario tree.
//!
//! Every node at stage `k` is an atom of the sigma-algebra at the `k`-th
//! Bermudan date, so a stopping time is just a set of stop marks on nodes and
//! an event measurable at a stopping time is a set of nodes on (or before) its
//! stop frontier.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeIdx = usize;

/// Default hard limit on the number of tree nodes.
pub const DEFAULT_NODE_BUDGET: usize = 1 << 16;

const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BermudanGrid {
    dates: Vec<f64>,
}

impl BermudanGrid {
    pub fn new(dates: Vec<f64>) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::InvalidTree("grid needs at least two dates".into()));
        }
        if dates[0] != 0.0 {
            return Err(Error::InvalidTree(format!("first date must be 0, got {}", dates[0])));
        }
        if dates.iter().any(|t| !t.is_finite()) || dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTree("dates must be finite and strictly increasing".into()));
        }
        Ok(Self { dates })
    }

    /// `n` equal steps of length `delta` (the refracting time of a swing contract).
    pub fn equidistant(n: usize, delta: f64) -> Result<Self> {
        Self::new((0..=n).map(|k| k as f64 * delta).collect())
    }

    /// Number of stages `n`; stage indices run over `0..=n`.
    pub fn stages(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn date(&self, k: usize) -> f64 {
        self.dates[k]
    }

    pub fn horizon(&self) -> f64 {
        self.dates[self.dates.len() - 1]
    }

    /// Length of the step from stage `k` to `k + 1`.
    pub fn step(&self, k: usize) -> f64 {
        self.dates[k + 1] - self.dates[k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: String,
    pub stage: usize,
    pub parent: Option<NodeIdx>,
    pub children: Vec<NodeIdx>,
    pub probs: Vec<f64>,
    pub value: f64,
}

/// Immutable scenario tree. Nodes are stored in breadth-first order, so a
/// parent always precedes its children and a reverse sweep is a valid
/// backward induction order.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    grid: BermudanGrid,
    nodes: Vec<TreeNode>,
    index: HashMap<String, NodeIdx>,
    /// Leaves in depth-first order; the leaves below any node are contiguous.
    leaves: Vec<NodeIdx>,
    leaf_span: Vec<(usize, usize)>,
}

/// Input row for [`ScenarioTree::from_rows`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub stage: usize,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinomialSpec {
    pub n: usize,
    pub p: f64,
    pub root: f64,
    pub up: f64,
    pub down: f64,
    /// Step length between dates; defaults to 1.
    #[serde(default)]
    pub dt: Option<f64>,
}

/// Tree specification file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeSpec {
    Binomial { binomial: BinomialSpec },
    Explicit { grid: GridSpec, nodes: Vec<NodeSpec> },
}

pub fn build_tree(spec: &TreeSpec) -> Result<ScenarioTree> {
    build_tree_with_budget(spec, DEFAULT_NODE_BUDGET)
}

pub fn build_tree_with_budget(spec: &TreeSpec, node_limit: usize) -> Result<ScenarioTree> {
    match spec {
        TreeSpec::Binomial { binomial } => ScenarioTree::binomial(binomial, node_limit),
        TreeSpec::Explicit { grid, nodes } => {
            if nodes.len() > node_limit {
                return Err(Error::NodeBudget { nodes: nodes.len(), limit: node_limit });
            }
            ScenarioTree::from_rows(BermudanGrid::new(grid.dates.clone())?, nodes)
        }
    }
}

impl ScenarioTree {
    /// Full non-recombining binomial expansion. Node ids are the up/down move
    /// strings (`u`, `ud`, ...) with `root` for the root.
    pub fn binomial(spec: &BinomialSpec, node_limit: usize) -> Result<Self> {
        let n = spec.n;
        if n == 0 {
            return Err(Error::InvalidTree("binomial tree needs n >= 1".into()));
        }
        let count = if n >= 63 { usize::MAX } else { (1usize << (n + 1)) - 1 };
        if count > node_limit {
            return Err(Error::NodeBudget { nodes: count, limit: node_limit });
        }
        if !(spec.p > 0.0 && spec.p < 1.0) {
            return Err(Error::InvalidTree(format!("binomial p must lie in (0, 1), got {}", spec.p)));
        }
        let dt = spec.dt.unwrap_or(1.0);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTree(format!("binomial dt must be positive, got {dt}")));
        }
        let grid = BermudanGrid::equidistant(n, dt)?;
        let mut rows = Vec::with_capacity(count);
        rows.push(NodeSpec { id: "root".into(), stage: 0, parent: None, p: None, value: spec.root });
        let mut frontier = vec![(String::new(), spec.root)];
        for stage in 1..=n {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for (path, value) in &frontier {
                let parent = if path.is_empty() { "root".to_string() } else { path.clone() };
                for (mv, factor, p) in [('u', spec.up, spec.p), ('d', spec.down, 1.0 - spec.p)] {
                    let id = format!("{path}{mv}");
                    let v = value * factor;
                    rows.push(NodeSpec { id: id.clone(), stage, parent: Some(parent.clone()), p: Some(p), value: v });
                    next.push((id, v));
                }
            }
            frontier = next;
        }
        Self::from_rows(grid, &rows)
    }

    pub fn from_rows(grid: BermudanGrid, rows: &[NodeSpec]) -> Result<Self> {
        let n = grid.stages();
        let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if by_id.insert(row.id.as_str(), i).is_some() {
                return Err(Error::InvalidTree(format!("duplicate node id `{}`", row.id)));
            }
            if row.stage > n {
                return Err(Error::InvalidTree(format!(
                    "node `{}` has stage {} beyond horizon {n}",
                    row.id, row.stage
                )));
            }
            if !row.value.is_finite() {
                return Err(Error::InvalidTree(format!("node `{}` has a non-finite value", row.id)));
            }
        }
        let roots: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!("expected exactly one root, found {}", roots.len())));
        }
        let root = roots[0];
        if rows[root].stage != 0 {
            return Err(Error::InvalidTree("root must sit at stage 0".into()));
        }

        let mut child_rows: Vec<Vec<usize>> = vec![Vec::new(); rows.len()];
        for (i, row) in rows.iter().enumerate() {
            let Some(parent) = &row.parent else { continue };
            let &pi = by_id
                .get(parent.as_str())
                .ok_or_else(|| Error::InvalidTree(format!("node `{}` references unknown parent `{parent}`", row.id)))?;
            if rows[pi].stage + 1 != row.stage {
                return Err(Error::InvalidTree(format!(
                    "node `{}` at stage {} has parent `{parent}` at stage {}",
                    row.id, row.stage, rows[pi].stage
                )));
            }
            match row.p {
                Some(p) if p > 0.0 && p <= 1.0 => {}
                Some(p) => {
                    return Err(Error::InvalidTree(format!("node `{}` has probability {p} outside (0, 1]", row.id)))
                }
                None => return Err(Error::InvalidTree(format!("node `{}` is missing its probability", row.id))),
            }
            child_rows[pi].push(i);
        }

        // breadth-first relabelling
        let mut order = Vec::with_capacity(rows.len());
        let mut new_index = vec![usize::MAX; rows.len()];
        let mut queue = VecDeque::from([root]);
        while let Some(r) = queue.pop_front() {
            new_index[r] = order.len();
            order.push(r);
            queue.extend(child_rows[r].iter().copied());
        }
        if order.len() != rows.len() {
            return Err(Error::InvalidTree(format!(
                "{} node(s) are not connected to the root",
                rows.len() - order.len()
            )));
        }

        let mut nodes = Vec::with_capacity(rows.len());
        for &r in &order {
            let row = &rows[r];
            let children: Vec<NodeIdx> = child_rows[r].iter().map(|&c| new_index[c]).collect();
            let probs: Vec<f64> = child_rows[r].iter().map(|&c| rows[c].p.unwrap_or(0.0)).collect();
            if row.stage < n && children.is_empty() {
                return Err(Error::InvalidTree(format!("node `{}` at stage {} has no children", row.id, row.stage)));
            }
            if !children.is_empty() {
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidTree(format!(
                        "child probabilities of `{}` sum to {total}, not 1",
                        row.id
                    )));
                }
            }
            nodes.push(TreeNode {
                id: row.id.clone(),
                stage: row.stage,
                parent: row.parent.as_ref().map(|p| new_index[by_id[p.as_str()]]),
                children,
                probs,
                value: row.value,
            });
        }
        let index = nodes.iter().enumerate().map(|(i, nd)| (nd.id.clone(), i)).collect();
        let mut tree = Self { grid, nodes, index, leaves: Vec::new(), leaf_span: Vec::new() };
        tree.index_leaves();

        let total: f64 = (0..tree.leaves.len()).map(|l| tree.path_probability(l)).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidTree(format!("leaf probabilities sum to {total}")));
        }
        Ok(tree)
    }

    fn index_leaves(&mut self) {
        let mut span = vec![(0, 0); self.nodes.len()];
        let mut leaves = Vec::new();
        // iterative post-order walk
        let mut stack = vec![(0usize, false)];
        while let Some((m, done)) = stack.pop() {
            if done {
                let node = &self.nodes[m];
                if node.children.is_empty() {
                    span[m] = (leaves.len(), leaves.len() + 1);
                    leaves.push(m);
                } else {
                    let first = span[node.children[0]].0;
                    let last = span[*node.children.last().unwrap()].1;
                    span[m] = (first, last);
                }
            } else {
                stack.push((m, true));
                for &c in self.nodes[m].children.iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        self.leaves = leaves;
        self.leaf_span = span;
    }

    pub fn grid(&self) -> &BermudanGrid {
        &self.grid
    }

    /// Number of stages `n` (the terminal stage index).
    pub fn stages(&self) -> usize {
        self.grid.stages()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeIdx {
        0
    }

    pub fn node(&self, m: NodeIdx) -> &TreeNode {
        &self.nodes[m]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn stage(&self, m: NodeIdx) -> usize {
        self.nodes[m].stage
    }

    pub fn parent(&self, m: NodeIdx) -> Option<NodeIdx> {
        self.nodes[m].parent
    }

    pub fn children(&self, m: NodeIdx) -> &[NodeIdx] {
        &self.nodes[m].children
    }

    pub fn probs(&self, m: NodeIdx) -> &[f64] {
        &self.nodes[m].probs
    }

    pub fn value(&self, m: NodeIdx) -> f64 {
        self.nodes[m].value
    }

    pub fn id(&self, m: NodeIdx) -> &str {
        &self.nodes[m].id
    }

    pub fn is_leaf(&self, m: NodeIdx) -> bool {
        self.nodes[m].children.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<NodeIdx> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    /// Leaves in depth-first order. A leaf's position in this slice is its
    /// scenario index.
    pub fn leaves(&self) -> &[NodeIdx] {
        &self.leaves
    }

    /// Range of scenario indices passing through `m`.
    pub fn leaf_range(&self, m: NodeIdx) -> std::ops::Range<usize> {
        let (a, b) = self.leaf_span[m];
        a..b
    }

    pub fn nodes_at_stage(&self, k: usize) -> impl Iterator<Item = NodeIdx> + '_ {
        (0..self.nodes.len()).filter(move |&m| self.nodes[m].stage == k)
    }

    /// The unique stage-`k` ancestor of `m` (`m` itself when `k = stage(m)`).
    pub fn ancestor_at(&self, m: NodeIdx, k: usize) -> Result<NodeIdx> {
        let stage = self.stage(m);
        if k > stage {
            return Err(Error::StageOutOfRange { stage: k, node_stage: stage });
        }
        let mut cur = m;
        for _ in k..stage {
            cur = self.nodes[cur].parent.expect("non-root node has a parent");
        }
        Ok(cur)
    }

    /// `true` when `a` lies on the path from the root to `m` (inclusive).
    pub fn is_ancestor_or_self(&self, a: NodeIdx, m: NodeIdx) -> bool {
        let (s, e) = self.leaf_span[a];
        let (ms, me) = self.leaf_span[m];
        self.stage(a) <= self.stage(m) && s <= ms && me <= e
    }

    /// Root-to-leaf node path of scenario `leaf_pos`.
    pub fn path(&self, leaf_pos: usize) -> Vec<NodeIdx> {
        let mut path = Vec::with_capacity(self.stages() + 1);
        let mut cur = Some(self.leaves[leaf_pos]);
        while let Some(m) = cur {
            path.push(m);
            cur = self.nodes[m].parent;
        }
        path.reverse();
        path
    }

    /// Probability of reaching node `m` from the root.
    pub fn node_probability(&self, m: NodeIdx) -> f64 {
        let mut prob = 1.0;
        let mut cur = m;
        while let Some(p) = self.nodes[cur].parent {
            let slot = self.nodes[p].children.iter().position(|&c| c == cur).unwrap();
            prob *= self.nodes[p].probs[slot];
            cur = p;
        }
        prob
    }

    pub fn path_probability(&self, leaf_pos: usize) -> f64 {
        self.node_probability(self.leaves[leaf_pos])
    }

    pub fn min_path_probability(&self) -> f64 {
        (0..self.leaves.len()).map(|l| self.path_probability(l)).fold(f64::INFINITY, f64::min)
    }

    /// Node values as an adapted family.
    pub fn node_values(&self) -> AdaptedFamily {
        AdaptedFamily::from_fn(self, |m| self.value(m))
    }
}

/// Bermudan stopping time in canonical form: a node is marked iff the time
/// has stopped at or before it on every path through it. Terminal nodes are
/// always marked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StoppingTime {
    stop: Vec<bool>,
}

impl StoppingTime {
    /// Canonicalizes arbitrary marks: each path stops at its first mark, or at
    /// the terminal stage.
    pub fn from_marks(tree: &ScenarioTree, marks: &[bool]) -> Self {
        let mut stop = vec![false; tree.len()];
        for m in 0..tree.len() {
            let inherited = tree.parent(m).is_some_and(|p| stop[p]);
            stop[m] = inherited || marks[m] || tree.is_leaf(m);
        }
        Self { stop }
    }

    /// Stops at the given nodes (each path at its first listed node).
    pub fn from_stop_nodes(tree: &ScenarioTree, nodes: &[NodeIdx]) -> Self {
        let mut marks = vec![false; tree.len()];
        for &m in nodes {
            marks[m] = true;
        }
        Self::from_marks(tree, &marks)
    }

    pub fn at_stage(tree: &ScenarioTree, k: usize) -> Self {
        let marks: Vec<bool> = (0..tree.len()).map(|m| tree.stage(m) >= k).collect();
        Self::from_marks(tree, &marks)
    }

    pub fn immediate(tree: &ScenarioTree) -> Self {
        Self::at_stage(tree, 0)
    }

    pub fn terminal(tree: &ScenarioTree) -> Self {
        Self::at_stage(tree, tree.stages())
    }

    /// Builds a stopping time from its path-wise stop stages (one per
    /// scenario, in [`ScenarioTree::leaves`] order). Fails when the stages are
    /// not adapted: two scenarios sharing a node disagree on whether the time
    /// has already stopped there.
    pub fn from_leaf_stages(tree: &ScenarioTree, stages: &[usize]) -> Result<Self> {
        if stages.len() != tree.leaves().len() {
            return Err(Error::NotAdapted(format!(
                "expected {} scenario stages, got {}",
                tree.leaves().len(),
                stages.len()
            )));
        }
        let mut stop = vec![false; tree.len()];
        for (m, mark) in stop.iter_mut().enumerate() {
            let k = tree.stage(m);
            let range = tree.leaf_range(m);
            let first = stages[range.start] <= k;
            if stages[range].iter().any(|&s| (s <= k) != first) {
                return Err(Error::NotAdapted(format!("scenarios through `{}` disagree", tree.id(m))));
            }
            *mark = first;
        }
        for (l, &leaf) in tree.leaves().iter().enumerate() {
            if !stop[leaf] {
                return Err(Error::NotAdapted(format!("scenario {l} stops after the horizon")));
            }
        }
        Ok(Self { stop })
    }

    pub fn len(&self) -> usize {
        self.stop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stop.is_empty()
    }

    /// Raw canonical marks.
    pub fn marks(&self) -> &[bool] {
        &self.stop
    }

    /// The time has stopped at or before `m`.
    pub fn has_stopped(&self, m: NodeIdx) -> bool {
        self.stop[m]
    }

    /// The time stops exactly at `m`.
    pub fn stops_at(&self, tree: &ScenarioTree, m: NodeIdx) -> bool {
        self.stop[m] && tree.parent(m).is_none_or(|p| !self.stop[p])
    }

    /// Nodes where the time stops.
    pub fn frontier(&self, tree: &ScenarioTree) -> Vec<NodeIdx> {
        (0..tree.len()).filter(|&m| self.stops_at(tree, m)).collect()
    }

    /// Stop node on the path through `m`, for `m` at or after the stop.
    pub fn stop_node_above(&self, tree: &ScenarioTree, m: NodeIdx) -> Option<NodeIdx> {
        if !self.stop[m] {
            return None;
        }
        let mut cur = m;
        while let Some(p) = tree.parent(cur) {
            if !self.stop[p] {
                break;
            }
            cur = p;
        }
        Some(cur)
    }

    /// For every node at or after the stop: the stage at which the time
    /// stopped on the way there.
    pub fn stop_stages(&self, tree: &ScenarioTree) -> Vec<Option<usize>> {
        let mut out = vec![None; tree.len()];
        for m in 0..tree.len() {
            if self.stop[m] {
                out[m] = Some(match tree.parent(m) {
                    Some(p) if self.stop[p] => out[p].unwrap(),
                    _ => tree.stage(m),
                });
            }
        }
        out
    }

    /// Stop stage of every scenario.
    pub fn leaf_stages(&self, tree: &ScenarioTree) -> Vec<usize> {
        let stages = self.stop_stages(tree);
        tree.leaves().iter().map(|&l| stages[l].expect("terminal nodes are stop-marked")).collect()
    }

    /// `self <= other` on every path.
    pub fn le(&self, other: &StoppingTime) -> bool {
        self.stop.iter().zip(&other.stop).all(|(&a, &b)| a || !b)
    }

    fn check_same(&self, other: &StoppingTime) -> Result<()> {
        if self.stop.len() != other.stop.len() {
            return Err(Error::TreeMismatch(self.stop.len(), other.stop.len()));
        }
        Ok(())
    }

    /// Path-wise minimum.
    pub fn meet(&self, tree: &ScenarioTree, other: &StoppingTime) -> Result<StoppingTime> {
        self.check_same(other)?;
        let a = self.leaf_stages(tree);
        let b = other.leaf_stages(tree);
        let stages: Vec<usize> = a.iter().zip(&b).map(|(&x, &y)| x.min(y)).collect();
        StoppingTime::from_leaf_stages(tree, &stages)
    }

    /// Path-wise maximum.
    pub fn join(&self, tree: &ScenarioTree, other: &StoppingTime) -> Result<StoppingTime> {
        self.check_same(other)?;
        let a = self.leaf_stages(tree);
        let b = other.leaf_stages(tree);
        let stages: Vec<usize> = a.iter().zip(&b).map(|(&x, &y)| x.max(y)).collect();
        StoppingTime::from_leaf_stages(tree, &stages)
    }

    /// Human-readable list of stop node ids.
    pub fn describe(&self, tree: &ScenarioTree) -> Vec<String> {
        self.frontier(tree).into_iter().map(|m| tree.id(m).to_string()).collect()
    }
}

/// Meet and join of a non-empty list of stopping times, computed on the
/// canonical marks (union and intersection respectively).
pub fn meet_all(times: &[&StoppingTime]) -> StoppingTime {
    let mut stop = times[0].stop.clone();
    for t in &times[1..] {
        for (s, &o) in stop.iter_mut().zip(&t.stop) {
            *s |= o;
        }
    }
    StoppingTime { stop }
}

pub fn join_all(times: &[&StoppingTime]) -> StoppingTime {
    let mut stop = times[0].stop.clone();
    for t in &times[1..] {
        for (s, &o) in stop.iter_mut().zip(&t.stop) {
            *s &= o;
        }
    }
    StoppingTime { stop }
}

/// Set of scenarios passing through any of the listed nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Event {
    nodes: BTreeSet<NodeIdx>,
}

impl Event {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn whole(tree: &ScenarioTree) -> Self {
        Self::from_nodes([tree.root()])
    }

    pub fn from_nodes(nodes: impl IntoIterator<Item = NodeIdx>) -> Self {
        Self { nodes: nodes.into_iter().collect() }
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeIdx> + '_ {
        self.nodes.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scenario membership, indexed like [`ScenarioTree::leaves`].
    pub fn scenario_mask(&self, tree: &ScenarioTree) -> Vec<bool> {
        let mut mask = vec![false; tree.leaves().len()];
        for &m in &self.nodes {
            for l in tree.leaf_range(m) {
                mask[l] = true;
            }
        }
        mask
    }

    /// Whether every scenario through `m` lies in the event.
    pub fn covers(&self, tree: &ScenarioTree, m: NodeIdx) -> bool {
        let mask = self.scenario_mask(tree);
        tree.leaf_range(m).all(|l| mask[l])
    }

    /// Measurability at `tau`: on each stop node of `tau` the event holds
    /// for all scenarios or for none. Returns the first offending node.
    pub fn check_measurable(&self, tree: &ScenarioTree, tau: &StoppingTime) -> Result<()> {
        let mask = self.scenario_mask(tree);
        for f in tau.frontier(tree) {
            let range = tree.leaf_range(f);
            let first = mask[range.start];
            if mask[range].iter().any(|&x| x != first) {
                return Err(Error::NotMeasurable(tree.id(f).to_string()));
            }
        }
        Ok(())
    }
}

/// Concatenation: `tau` on `event`, `other` elsewhere. The event must be
/// measurable at `tau ∧ other`.
pub fn paste(tree: &ScenarioTree, tau: &StoppingTime, other: &StoppingTime, event: &Event) -> Result<StoppingTime> {
    let meet = tau.meet(tree, other)?;
    event.check_measurable(tree, &meet)?;
    let mask = event.scenario_mask(tree);
    let a = tau.leaf_stages(tree);
    let b = other.leaf_stages(tree);
    let stages: Vec<usize> = (0..mask.len()).map(|l| if mask[l] { a[l] } else { b[l] }).collect();
    StoppingTime::from_leaf_stages(tree, &stages)
}

/// First node at or after the stop of `start` where `hit` holds, with a
/// forced stop at the terminal stage.
pub fn first_hitting(tree: &ScenarioTree, start: &StoppingTime, hit: impl Fn(NodeIdx) -> bool) -> StoppingTime {
    let mut stop = vec![false; tree.len()];
    for m in 0..tree.len() {
        let inherited = tree.parent(m).is_some_and(|p| stop[p]);
        stop[m] = inherited || (start.has_stopped(m) && (tree.is_leaf(m) || hit(m)));
    }
    StoppingTime { stop }
}

/// One value per node; read at a stopping time by looking up the node where
/// the time stops.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedFamily {
    values: Vec<f64>,
}

impl AdaptedFamily {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn from_fn(tree: &ScenarioTree, f: impl Fn(NodeIdx) -> f64) -> Self {
        Self { values: (0..tree.len()).map(f).collect() }
    }

    pub fn constant(tree: &ScenarioTree, c: f64) -> Self {
        Self { values: vec![c; tree.len()] }
    }

    pub fn at(&self, m: NodeIdx) -> f64 {
        self.values[m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The family read at `tau`: values on the stop frontier, NaN elsewhere.
    pub fn at_time(&self, tree: &ScenarioTree, tau: &StoppingTime) -> Vec<f64> {
        let mut out = vec![f64::NAN; tree.len()];
        for m in tau.frontier(tree) {
            out[m] = self.values[m];
        }
        out
    }

    /// Value the family takes on scenario `leaf_pos` at time `tau`.
    pub fn on_scenario(&self, tree: &ScenarioTree, tau: &StoppingTime, leaf_pos: usize) -> f64 {
        let leaf = tree.leaves()[leaf_pos];
        self.values[tau.stop_node_above(tree, leaf).unwrap()]
    }
}
