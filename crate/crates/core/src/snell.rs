//! Single-agent optimal stopping under a non-linear evaluation.

use crate::error::Result;
use crate::evaluation::Evaluation;
use crate::space::{first_hitting, AdaptedFamily, NodeIdx, ScenarioTree, StoppingTime};

/// `|u - φ| <= STOP_TOL (1 + |u|)` marks a node as part of the stop region.
pub const STOP_TOL: f64 = 1e-9;

pub fn in_stop_region(u: f64, reward: f64) -> bool {
    (u - reward).abs() <= STOP_TOL * (1.0 + u.abs())
}

#[derive(Debug, Clone)]
pub struct SnellSolution {
    pub u: AdaptedFamily,
    pub reward: AdaptedFamily,
    /// Nodes where the envelope touches the reward.
    pub stop_region: Vec<bool>,
}

impl SnellSolution {
    /// First entry into the stop region at or after `start`.
    pub fn theta_star(&self, tree: &ScenarioTree, start: &StoppingTime) -> StoppingTime {
        first_hitting(tree, start, |m| self.stop_region[m])
    }
}

/// Backward induction `u = max(reward, kernel(children u))` over every node
/// with stage `>= from_stage`; earlier nodes are left as NaN. The evaluation
/// must already have passed [`Evaluation::check_tree`].
pub(crate) fn envelope_from(ev: &Evaluation, tree: &ScenarioTree, reward: &[f64], from_stage: usize) -> Vec<f64> {
    let mut u = vec![f64::NAN; tree.len()];
    let mut ys = Vec::with_capacity(4);
    for m in (0..tree.len()).rev() {
        if tree.stage(m) < from_stage {
            continue;
        }
        if tree.is_leaf(m) {
            u[m] = reward[m];
        } else {
            ys.clear();
            ys.extend(tree.children(m).iter().map(|&c| u[c]));
            let cont = ev.step(tree, m, &ys);
            u[m] = if reward[m] >= cont { reward[m] } else { cont };
        }
    }
    u
}

/// Snell envelope of `reward`: the value family of the single stopping problem.
pub fn snell_envelope(ev: &Evaluation, tree: &ScenarioTree, reward: &AdaptedFamily) -> Result<SnellSolution> {
    ev.check_tree(tree)?;
    let u = envelope_from(ev, tree, reward.values(), 0);
    let stop_region = (0..tree.len()).map(|m| in_stop_region(u[m], reward.at(m))).collect();
    Ok(SnellSolution { u: AdaptedFamily::new(u), reward: reward.clone(), stop_region })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityCheck {
    pub passed: bool,
    pub max_gap: f64,
    pub worst_node: Option<NodeIdx>,
}

/// Plugs the first-hitting time back into the evaluation and compares with
/// the envelope on the frontier of `start`.
pub fn verify_snell_optimality(
    ev: &Evaluation,
    tree: &ScenarioTree,
    sol: &SnellSolution,
    start: &StoppingTime,
    tol: f64,
) -> Result<OptimalityCheck> {
    let theta = sol.theta_star(tree, start);
    let plug = ev.evaluate(tree, start, &theta, &sol.reward.at_time(tree, &theta))?;
    let mut max_gap: f64 = 0.0;
    let mut worst_node = None;
    for m in start.frontier(tree) {
        let gap = (plug[m] - sol.u.at(m)).abs();
        if gap > max_gap || worst_node.is_none() {
            max_gap = max_gap.max(gap);
            worst_node = Some(m);
        }
    }
    Ok(OptimalityCheck { passed: max_gap <= tol, max_gap, worst_node })
}
