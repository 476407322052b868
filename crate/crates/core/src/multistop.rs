//! Multiple stopping under a non-linear evaluation, by reduction to nested
//! single stopping problems.
//!
//! The value of the `d`-fold problem started at a node `s` only depends on
//! `s` and on the stages at which the already exercised rights were used.
//! Every auxiliary problem is therefore indexed by a key of length `d`
//! holding `Some(stage)` for frozen slots and `None` for free ones, and is
//! solved once on the part of the tree at or after the latest frozen stage.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::Evaluation;
use crate::oracle::{count_stopping_times, enumerate_stopping_times, EnumerationBudget};
use crate::payoff::{PayoffFamily, PayoffKind};
use crate::snell::{envelope_from, in_stop_region, snell_envelope};
use crate::space::{first_hitting, meet_all, paste, AdaptedFamily, Event, NodeIdx, ScenarioTree, StoppingTime};

pub const DEFAULT_PLUG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Allowed gap between the value and the plugged-in optimal tuple.
    pub plug_tol: f64,
    pub max_d: usize,
    pub max_stages: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { plug_tol: DEFAULT_PLUG_TOL, max_d: 4, max_stages: 5 }
    }
}

impl SolveOptions {
    fn check(&self, tree: &ScenarioTree, d: usize) -> Result<()> {
        if d > self.max_d {
            return Err(Error::Budget { what: "exercise count", needed: d as u128, limit: self.max_d as u128 });
        }
        if tree.stages() > self.max_stages {
            return Err(Error::Budget {
                what: "recursion stage",
                needed: tree.stages() as u128,
                limit: self.max_stages as u128,
            });
        }
        if !(self.plug_tol > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Solution of one auxiliary problem: reward, value and, per node, the
/// smallest free slot attaining the reward.
struct Aux {
    reward: Vec<f64>,
    value: Vec<f64>,
    choice: Vec<usize>,
}

type Key = Vec<Option<usize>>;

struct Reduction<'a> {
    ev: &'a Evaluation,
    tree: &'a ScenarioTree,
    psi: &'a PayoffFamily,
    cache: HashMap<Key, Rc<Aux>>,
}

impl<'a> Reduction<'a> {
    fn new(ev: &'a Evaluation, tree: &'a ScenarioTree, psi: &'a PayoffFamily) -> Result<Self> {
        ev.check_tree(tree)?;
        Ok(Self { ev, tree, psi, cache: HashMap::new() })
    }

    fn d(&self) -> usize {
        self.psi.d()
    }

    fn frozen(key: &[Option<usize>], slot: usize, k: usize) -> Key {
        let mut f = key.to_vec();
        f[slot] = Some(k);
        f
    }

    /// Value at `m` of the problem with `key` frozen; a fully frozen key is
    /// the reward itself.
    fn value_at(&mut self, key: &[Option<usize>], m: NodeIdx) -> f64 {
        if key.iter().all(Option::is_some) {
            let stages: Vec<usize> = key.iter().map(|s| s.unwrap()).collect();
            self.psi.eval(self.tree, m, &stages)
        } else {
            self.family(key).value[m]
        }
    }

    /// `u^{(i)}` at every node: slot `i` frozen at the node's own stage.
    fn aux_family(&mut self, slot: usize) -> AdaptedFamily {
        let d = self.d();
        let values = (0..self.tree.len())
            .map(|m| self.value_at(&Self::frozen(&vec![None; d], slot, self.tree.stage(m)), m))
            .collect();
        AdaptedFamily::new(values)
    }

    fn family(&mut self, key: &[Option<usize>]) -> Rc<Aux> {
        if let Some(a) = self.cache.get(key) {
            return a.clone();
        }
        let tree = self.tree;
        let n = tree.len();
        let k0 = key.iter().flatten().max().copied().unwrap_or(0);
        let free: Vec<usize> = (0..key.len()).filter(|&i| key[i].is_none()).collect();
        debug_assert!(!free.is_empty());
        let mut reward = vec![f64::NAN; n];
        let mut choice = vec![usize::MAX; n];
        if free.len() == 1 {
            let slot = free[0];
            let mut stages: Vec<usize> = key.iter().map(|s| s.unwrap_or(0)).collect();
            for m in (0..n).filter(|&m| tree.stage(m) >= k0) {
                stages[slot] = tree.stage(m);
                reward[m] = self.psi.eval(tree, m, &stages);
                choice[m] = slot;
            }
        } else {
            let subs: Vec<Vec<Rc<Aux>>> = free
                .iter()
                .map(|&i| (k0..=tree.stages()).map(|k| self.family(&Self::frozen(key, i, k))).collect())
                .collect();
            for m in (0..n).filter(|&m| tree.stage(m) >= k0) {
                let k = tree.stage(m) - k0;
                let mut best = f64::NEG_INFINITY;
                for (j, &i) in free.iter().enumerate() {
                    let v = subs[j][k].value[m];
                    if v > best || choice[m] == usize::MAX {
                        best = v;
                        choice[m] = i;
                    }
                }
                reward[m] = best;
            }
        }
        let value = envelope_from(self.ev, tree, &reward, k0);
        let aux = Rc::new(Aux { reward, value, choice });
        self.cache.insert(key.to_vec(), aux.clone());
        aux
    }

    /// Optimal stop nodes for the free slots of `key`, for the problem
    /// started at `start`. The first-level hitting nodes are returned.
    fn assign(&mut self, key: &[Option<usize>], start: NodeIdx, stops: &mut [Vec<NodeIdx>]) -> Vec<NodeIdx> {
        let aux = self.family(key);
        let free = key.iter().filter(|s| s.is_none()).count();
        let mut hits = Vec::new();
        let mut stack = vec![start];
        while let Some(m) = stack.pop() {
            if self.tree.is_leaf(m) || in_stop_region(aux.value[m], aux.reward[m]) {
                hits.push(m);
            } else {
                stack.extend(self.tree.children(m).iter().rev());
            }
        }
        for &m in &hits {
            let slot = aux.choice[m];
            stops[slot].push(m);
            if free > 1 {
                self.assign(&Self::frozen(key, slot, self.tree.stage(m)), m, stops);
            }
        }
        hits
    }
}

/// Evaluation of the reward at `tuple`, read on the frontier of `s`.
pub fn tuple_value(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    tuple: &[StoppingTime],
) -> Result<Vec<f64>> {
    let refs: Vec<&StoppingTime> = tuple.iter().collect();
    let (join, eta) = psi.at_tuple(tree, &refs)?;
    ev.evaluate(tree, s, &join, &eta)
}

/// Largest frontier gap between `value` and the plug-in of `tuple`; errors
/// beyond `tol`.
fn plug_in(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    tuple: &[StoppingTime],
    value: &AdaptedFamily,
    tol: f64,
) -> Result<f64> {
    let plug = tuple_value(ev, tree, psi, s, tuple)?;
    let mut worst: f64 = 0.0;
    for m in s.frontier(tree) {
        let gap = (plug[m] - value.at(m)).abs();
        if !(gap <= tol) {
            return Err(Error::PlugIn { node: tree.id(m).to_string(), value: value.at(m), plug_in: plug[m] });
        }
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn check_payoff(tree: &ScenarioTree, psi: &PayoffFamily, s: &StoppingTime) -> Result<()> {
    if s.len() != tree.len() {
        return Err(Error::TreeMismatch(s.len(), tree.len()));
    }
    if let PayoffKind::Additive(eta) | PayoffKind::Multiplicative(eta) = psi.kind() {
        if eta.values().len() != tree.len() {
            return Err(Error::TreeMismatch(eta.values().len(), tree.len()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DoubleReduction {
    pub v1: AdaptedFamily,
    pub v2: AdaptedFamily,
    pub phi: AdaptedFamily,
    pub u: AdaptedFamily,
}

/// `v1(s)`: best single exercise of slot 1 with slot 2 used at `s`; `v2`
/// the other way round; `u` is the envelope of `max(v1, v2)`.
pub fn reduce_double(ev: &Evaluation, tree: &ScenarioTree, psi: &PayoffFamily) -> Result<DoubleReduction> {
    if psi.d() != 2 {
        return Err(Error::InvalidPayoff(format!("double stopping needs a 2-index reward, got {}", psi.d())));
    }
    check_payoff(tree, psi, &StoppingTime::immediate(tree))?;
    let mut red = Reduction::new(ev, tree, psi)?;
    let v1 = red.aux_family(1);
    let v2 = red.aux_family(0);
    let phi = AdaptedFamily::from_fn(tree, |m| v1.at(m).max(v2.at(m)));
    let u = snell_envelope(ev, tree, &phi)?.u;
    Ok(DoubleReduction { v1, v2, phi, u })
}

#[derive(Debug, Clone)]
pub struct DoubleSolution {
    pub value: AdaptedFamily,
    pub v1: AdaptedFamily,
    pub v2: AdaptedFamily,
    pub phi: AdaptedFamily,
    pub u: AdaptedFamily,
    pub theta_star: StoppingTime,
    pub theta1_star: StoppingTime,
    pub theta2_star: StoppingTime,
    /// Frontier nodes of `theta_star` where `v1 <= v2`.
    pub b: Event,
    pub pair: (StoppingTime, StoppingTime),
    pub plug_in_gap: f64,
}

/// Double stopping from `s`: first hitting of `{u = φ}`, then each right's
/// own first hitting with the other slot frozen, pasted on `{v1 <= v2}`.
pub fn solve_double(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    opts: &SolveOptions,
) -> Result<DoubleSolution> {
    if psi.d() != 2 {
        return Err(Error::InvalidPayoff(format!("double stopping needs a 2-index reward, got {}", psi.d())));
    }
    opts.check(tree, 2)?;
    check_payoff(tree, psi, s)?;
    let mut red = Reduction::new(ev, tree, psi)?;
    let v1 = red.aux_family(1);
    let v2 = red.aux_family(0);
    let phi = AdaptedFamily::from_fn(tree, |m| v1.at(m).max(v2.at(m)));
    let snell = snell_envelope(ev, tree, &phi)?;
    let u = snell.u.clone();
    let theta_star = snell.theta_star(tree, s);
    let frontier = theta_star.frontier(tree);

    let mut own_hits = |frozen_slot: usize| -> Vec<NodeIdx> {
        let mut nodes = Vec::new();
        for &m in &frontier {
            let key = Reduction::frozen(&[None, None], frozen_slot, tree.stage(m));
            let aux = red.family(&key);
            let start = StoppingTime::from_stop_nodes(tree, &[m]);
            let hit = first_hitting(tree, &start, |x| in_stop_region(aux.value[x], aux.reward[x]));
            nodes.extend(hit.frontier(tree).into_iter().filter(|&x| tree.is_ancestor_or_self(m, x)));
        }
        nodes
    };
    let theta1_star = StoppingTime::from_stop_nodes(tree, &own_hits(1));
    let theta2_star = StoppingTime::from_stop_nodes(tree, &own_hits(0));
    let b = Event::from_nodes(frontier.iter().copied().filter(|&m| v1.at(m) <= v2.at(m)));
    let tau1 = paste(tree, &theta_star, &theta1_star, &b)?;
    let tau2 = paste(tree, &theta2_star, &theta_star, &b)?;
    let pair = (tau1, tau2);
    let plug_in_gap = plug_in(ev, tree, psi, s, &[pair.0.clone(), pair.1.clone()], &u, opts.plug_tol)?;
    Ok(DoubleSolution { value: u.clone(), v1, v2, phi, u, theta_star, theta1_star, theta2_star, b, pair, plug_in_gap })
}

#[derive(Debug, Clone)]
pub struct MultiSolution {
    pub d: usize,
    pub value: AdaptedFamily,
    pub phi: AdaptedFamily,
    pub u: AdaptedFamily,
    /// `u^{(i)}` for each slot.
    pub u_aux: Vec<AdaptedFamily>,
    pub theta_star: StoppingTime,
    /// Frontier nodes of `theta_star` assigned to each slot.
    pub partition: Vec<Vec<NodeIdx>>,
    pub tuple: Vec<StoppingTime>,
    pub plug_in_gap: f64,
}

/// General `d`-fold stopping by recursive reduction.
pub fn solve_d(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    opts: &SolveOptions,
) -> Result<MultiSolution> {
    let d = psi.d();
    opts.check(tree, d)?;
    check_payoff(tree, psi, s)?;
    let mut red = Reduction::new(ev, tree, psi)?;
    let top: Key = vec![None; d];
    let root = red.family(&top);
    let u_aux: Vec<AdaptedFamily> = (0..d).map(|i| red.aux_family(i)).collect();
    let value = AdaptedFamily::new(root.value.clone());
    let phi = AdaptedFamily::new(root.reward.clone());

    let mut stops: Vec<Vec<NodeIdx>> = vec![Vec::new(); d];
    let mut theta_nodes = Vec::new();
    for f in s.frontier(tree) {
        theta_nodes.extend(red.assign(&top, f, &mut stops));
    }
    let theta_star = StoppingTime::from_stop_nodes(tree, &theta_nodes);
    let mut partition = vec![Vec::new(); d];
    for &m in &theta_nodes {
        partition[root.choice[m]].push(m);
    }
    for p in &mut partition {
        p.sort_unstable();
    }
    let tuple: Vec<StoppingTime> = stops.iter().map(|nodes| StoppingTime::from_stop_nodes(tree, nodes)).collect();
    let plug_in_gap = plug_in(ev, tree, psi, s, &tuple, &value, opts.plug_tol)?;
    Ok(MultiSolution { d, value: value.clone(), phi, u: value, u_aux, theta_star, partition, tuple, plug_in_gap })
}

#[derive(Debug, Clone)]
pub struct NestedSolution {
    pub d: usize,
    pub value: AdaptedFamily,
    /// Values of the remaining problem keyed by the sorted stages already
    /// used; NaN before the latest of them.
    pub families: BTreeMap<Vec<usize>, Vec<f64>>,
}

/// Symmetric rewards: exercises can be taken in order, so the state is the
/// sorted multiset of used stages.
pub fn solve_symmetric_nested(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    opts: &SolveOptions,
) -> Result<NestedSolution> {
    let d = psi.d();
    opts.check(tree, d)?;
    check_payoff(tree, psi, &StoppingTime::immediate(tree))?;
    if !psi.is_symmetric() || !psi.check_symmetry(tree, 256, 0x5eed) {
        return Err(Error::Precondition("reward is not symmetric in its stopping times".into()));
    }
    ev.check_tree(tree)?;
    let mut families = BTreeMap::new();
    nested(ev, tree, psi, Vec::new(), &mut families);
    let value = AdaptedFamily::new(families[&Vec::new()].clone());
    Ok(NestedSolution { d, value, families })
}

fn nested(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    used: Vec<usize>,
    families: &mut BTreeMap<Vec<usize>, Vec<f64>>,
) {
    if families.contains_key(&used) {
        return;
    }
    let k0 = used.last().copied().unwrap_or(0);
    let mut reward = vec![f64::NAN; tree.len()];
    for m in (0..tree.len()).filter(|&m| tree.stage(m) >= k0) {
        let mut next = used.clone();
        next.push(tree.stage(m));
        reward[m] = if next.len() == psi.d() {
            psi.eval(tree, m, &next)
        } else {
            nested(ev, tree, psi, next.clone(), families);
            families[&next][m]
        };
    }
    families.insert(used, envelope_from(ev, tree, &reward, k0));
}

#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub d: usize,
    /// `levels[i - 1]` is the level-`i` family, `i = 1..d-1`.
    pub levels: Vec<AdaptedFamily>,
    pub value: AdaptedFamily,
}

fn flag_holds(ev: &Evaluation, tree: &ScenarioTree, check: impl Fn(&[f64], f64) -> bool) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1a6);
    let s = StoppingTime::immediate(tree);
    let t = StoppingTime::terminal(tree);
    (0..16).all(|_| {
        let eta: Vec<f64> = (0..tree.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = rng.gen_range(0.1..3.0);
        let Ok(base) = ev.evaluate(tree, &s, &t, &eta) else { return false };
        check(&eta, c) && check(&base, c)
    })
}

/// Additive reward `Σ η(τ_i)` under a translation-invariant evaluation:
/// `v̄_{d-1}` is the envelope of `η`, `v̄_i` that of `η + v̄_{i+1}`.
pub fn solve_cascade_additive(
    ev: &Evaluation,
    tree: &ScenarioTree,
    eta: &AdaptedFamily,
    d: usize,
) -> Result<CascadeSolution> {
    if d == 0 {
        return Err(Error::InvalidPayoff("number of exercises must be >= 1".into()));
    }
    let s = StoppingTime::immediate(tree);
    let t = StoppingTime::terminal(tree);
    let ok = ev.capabilities().translation_invariant
        && flag_holds(ev, tree, |eta, c| {
            let shifted: Vec<f64> = eta.iter().map(|v| v + c).collect();
            match (ev.evaluate(tree, &s, &t, eta), ev.evaluate(tree, &s, &t, &shifted)) {
                (Ok(a), Ok(b)) => ((a[0] + c) - b[0]).abs() <= 1e-12 * (1.0 + b[0].abs()),
                _ => false,
            }
        });
    if !ok {
        return Err(Error::Precondition(format!("`{}` is not translation invariant", ev.label())));
    }
    cascade(ev, tree, eta, d, |e, v| e + v)
}

/// Multiplicative reward `Π η(τ_i)` with `η >= 0` under a positively
/// homogeneous evaluation.
pub fn solve_cascade_multiplicative(
    ev: &Evaluation,
    tree: &ScenarioTree,
    eta: &AdaptedFamily,
    d: usize,
) -> Result<CascadeSolution> {
    if d == 0 {
        return Err(Error::InvalidPayoff("number of exercises must be >= 1".into()));
    }
    if let Some(m) = (0..tree.len()).find(|&m| !(eta.at(m) >= 0.0)) {
        return Err(Error::InvalidPayoff(format!("negative reward at `{}`", tree.id(m))));
    }
    let s = StoppingTime::immediate(tree);
    let t = StoppingTime::terminal(tree);
    let ok = ev.capabilities().positively_homogeneous
        && flag_holds(ev, tree, |eta, c| {
            let scaled: Vec<f64> = eta.iter().map(|v| v * c).collect();
            match (ev.evaluate(tree, &s, &t, eta), ev.evaluate(tree, &s, &t, &scaled)) {
                (Ok(a), Ok(b)) => (a[0] * c - b[0]).abs() <= 1e-12 * (1.0 + b[0].abs()),
                _ => false,
            }
        });
    if !ok {
        return Err(Error::Precondition(format!("`{}` is not positively homogeneous", ev.label())));
    }
    cascade(ev, tree, eta, d, |e, v| e * v)
}

fn cascade(
    ev: &Evaluation,
    tree: &ScenarioTree,
    eta: &AdaptedFamily,
    d: usize,
    combine: impl Fn(f64, f64) -> f64,
) -> Result<CascadeSolution> {
    if eta.values().len() != tree.len() {
        return Err(Error::TreeMismatch(eta.values().len(), tree.len()));
    }
    let mut current = snell_envelope(ev, tree, eta)?.u;
    let mut levels = Vec::with_capacity(d.saturating_sub(1));
    for _ in 1..d {
        levels.push(current.clone());
        let reward = AdaptedFamily::from_fn(tree, |m| combine(eta.at(m), current.at(m)));
        current = snell_envelope(ev, tree, &reward)?.u;
    }
    levels.reverse();
    Ok(CascadeSolution { d, levels, value: current })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionResult {
    pub passed: bool,
    pub max_gap: f64,
    pub worst_node: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NecessaryCertificate {
    /// The meet of the tuple is optimal for the reduced single problem.
    pub meet_optimal: ConditionResult,
    /// On each region where slot `i` stops first, the remaining rights
    /// attain `u^{(i)}`. `None` when the evaluation is not strictly monotone.
    pub sub_tuples: Option<ConditionResult>,
    pub passed: bool,
}

fn condition(gaps: impl Iterator<Item = (NodeIdx, f64)>, tree: &ScenarioTree, tol: f64) -> ConditionResult {
    let mut max_gap: f64 = 0.0;
    let mut worst = None;
    for (m, gap) in gaps {
        if worst.is_none() || gap > max_gap || gap.is_nan() {
            max_gap = if gap.is_nan() { f64::INFINITY } else { max_gap.max(gap) };
            worst = Some(tree.id(m).to_string());
        }
    }
    ConditionResult { passed: max_gap <= tol, max_gap, worst_node: worst }
}

/// Necessary conditions for `tuple` to be optimal from `s`.
pub fn verify_necessary(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    tuple: &[StoppingTime],
    s: &StoppingTime,
    tol: f64,
) -> Result<NecessaryCertificate> {
    let d = psi.d();
    if tuple.len() != d {
        return Err(Error::InvalidPayoff(format!("expected {d} stopping times, got {}", tuple.len())));
    }
    check_payoff(tree, psi, s)?;
    for t in tuple {
        if !s.le(t) {
            return Err(Error::Precondition("every stopping time of the tuple must be >= the start".into()));
        }
    }
    let mut red = Reduction::new(ev, tree, psi)?;
    let top = red.family(&vec![None; d]);
    let refs: Vec<&StoppingTime> = tuple.iter().collect();
    let meet = meet_all(&refs);
    let phi = AdaptedFamily::new(top.reward.clone());
    let at_meet = ev.evaluate(tree, s, &meet, &phi.at_time(tree, &meet))?;
    let meet_optimal =
        condition(s.frontier(tree).into_iter().map(|m| (m, (at_meet[m] - top.value[m]).abs())), tree, tol);

    let sub_tuples = if ev.capabilities().strictly_monotone {
        let (join, eta) = psi.at_tuple(tree, &refs)?;
        let inner = ev.evaluate(tree, &meet, &join, &eta)?;
        let stop_stages: Vec<Vec<Option<usize>>> = tuple.iter().map(|t| t.stop_stages(tree)).collect();
        let mut gaps = Vec::new();
        for m in meet.frontier(tree) {
            let k = tree.stage(m);
            let slot = (0..d).find(|&i| stop_stages[i][m] == Some(k)).expect("some component stops at the meet");
            let target = red.value_at(&Reduction::frozen(&vec![None; d], slot, k), m);
            gaps.push((m, (inner[m] - target).abs()));
        }
        Some(condition(gaps.into_iter(), tree, tol))
    } else {
        None
    };
    let passed = meet_optimal.passed && sub_tuples.as_ref().is_none_or(|c| c.passed);
    Ok(NecessaryCertificate { meet_optimal, sub_tuples, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermartingaleViolation {
    pub sigma: Vec<String>,
    pub tau: Vec<String>,
    pub node: String,
    pub evaluated: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupermartingaleReport {
    pub exhaustive: bool,
    pub pairs_checked: u64,
    pub violations: u64,
    pub max_excess: f64,
    pub counterexample: Option<SupermartingaleViolation>,
    pub passed: bool,
}

/// Slack allowed in `ρ_{σ,τ}[V(τ)] <= V(σ)`.
pub const SUPERMARTINGALE_TOL: f64 = 1e-10;

/// Checks `ρ_{σ,τ}[V(τ)] <= V(σ)` for all pairs `σ <= τ` when the
/// stopping times fit the budget, otherwise for `samples` random pairs.
pub fn check_supermartingale(
    ev: &Evaluation,
    tree: &ScenarioTree,
    value: &AdaptedFamily,
    budget: &EnumerationBudget,
    samples: usize,
    seed: u64,
) -> Result<SupermartingaleReport> {
    if value.values().len() != tree.len() {
        return Err(Error::TreeMismatch(value.values().len(), tree.len()));
    }
    if value.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Precondition("the family must be finite at every node".into()));
    }
    ev.check_tree(tree)?;
    let root = StoppingTime::immediate(tree);
    let exhaustive = count_stopping_times(tree, &root) <= budget.max_stopping_times as u128;
    let pairs: Vec<(StoppingTime, StoppingTime)> = if exhaustive {
        let times = enumerate_stopping_times(tree, &root, budget)?;
        let mut out = Vec::new();
        for a in &times {
            for b in &times {
                if a.le(b) {
                    out.push((a.clone(), b.clone()));
                }
            }
        }
        out
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .map(|_| {
                let a = random_time(tree, &root, &mut rng);
                let b = random_time(tree, &a, &mut rng);
                (a, b)
            })
            .collect()
    };
    let mut report = SupermartingaleReport {
        exhaustive,
        pairs_checked: pairs.len() as u64,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
        counterexample: None,
        passed: true,
    };
    for (sigma, tau) in &pairs {
        let lhs = ev.evaluate(tree, sigma, tau, &value.at_time(tree, tau))?;
        let mut bad = None;
        for m in sigma.frontier(tree) {
            let excess = lhs[m] - value.at(m);
            report.max_excess = report.max_excess.max(excess);
            if excess > SUPERMARTINGALE_TOL && bad.is_none() {
                bad = Some(m);
            }
        }
        if let Some(m) = bad {
            report.violations += 1;
            if report.counterexample.is_none() {
                report.counterexample = Some(SupermartingaleViolation {
                    sigma: sigma.describe(tree),
                    tau: tau.describe(tree),
                    node: tree.id(m).to_string(),
                    evaluated: lhs[m],
                    value: value.at(m),
                });
            }
        }
    }
    report.passed = report.violations == 0;
    Ok(report)
}

/// Random stopping time `>= from`: each node past the start stops with
/// probability 1/3.
pub(crate) fn random_time(tree: &ScenarioTree, from: &StoppingTime, rng: &mut impl Rng) -> StoppingTime {
    let marks: Vec<bool> = (0..tree.len()).map(|m| from.has_stopped(m) && rng.gen_bool(1.0 / 3.0)).collect();
    StoppingTime::from_marks(tree, &marks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::fixtures::{binomial_tree, chain, peak_chain};

    fn opts() -> SolveOptions {
        SolveOptions::default()
    }

    #[test]
    fn reduce_double_examples() {
        let d = peak_chain();
        let psi = PayoffFamily::additive(d.node_values(), 2).unwrap();
        let r = reduce_double(&Evaluation::linear(), &d, &psi).unwrap();
        assert_eq!(r.v1.at(0), 3.0);
        assert_eq!(r.v1, r.v2);
        assert_eq!(r.u.at(0), 4.0);

        let b = binomial_tree();
        let c = PayoffFamily::constant(1.25, 2).unwrap();
        let r = reduce_double(&Evaluation::entropic(1.0).unwrap(), &b, &c).unwrap();
        for fam in [&r.v1, &r.v2, &r.phi, &r.u] {
            assert!(fam.values().iter().all(|&v| (v - 1.25).abs() < 1e-14));
        }
    }

    #[test]
    fn solve_double_examples() {
        let d = peak_chain();
        let s = StoppingTime::immediate(&d);
        let psi = PayoffFamily::additive(d.node_values(), 2).unwrap();
        let sol = solve_double(&Evaluation::linear(), &d, &psi, &s, &opts()).unwrap();
        assert_eq!(sol.value.at(0), 4.0);
        let one = StoppingTime::at_stage(&d, 1);
        assert_eq!(sol.pair, (one.clone(), one));

        let b = binomial_tree();
        let s = StoppingTime::immediate(&b);
        let psi = PayoffFamily::additive(b.node_values(), 2).unwrap();
        let sol = solve_double(&Evaluation::linear(), &b, &psi, &s, &opts()).unwrap();
        assert_eq!(sol.value.at(0), 3.125);
        for m in 0..b.len() {
            assert_eq!(sol.phi.at(m), sol.v1.at(m).max(sol.v2.at(m)));
            assert!(sol.v1.at(m) <= sol.value.at(m) && sol.v2.at(m) <= sol.value.at(m));
            assert!(2.0 * b.value(m) <= sol.v1.at(m));
        }

        let c = PayoffFamily::constant(-0.5, 2).unwrap();
        let sol = solve_double(&Evaluation::linear(), &b, &c, &s, &opts()).unwrap();
        assert!(sol.value.values().iter().all(|&v| v == -0.5));
        assert_eq!(sol.pair, (s.clone(), s));
    }

    #[test]
    fn solve_d_matches_solve_double_exactly() {
        let b = binomial_tree();
        let eta = AdaptedFamily::from_fn(&b, |m| [0.2, 1.0, -0.5, 3.0, 0.0, 1.0, -2.0][m]);
        for ev in [Evaluation::linear(), Evaluation::entropic(1.0).unwrap()] {
            for psi in [
                PayoffFamily::additive(eta.clone(), 2).unwrap(),
                PayoffFamily::multiplicative(b.node_values(), 2).unwrap(),
            ] {
                for s in [StoppingTime::immediate(&b), StoppingTime::at_stage(&b, 1)] {
                    let a = solve_double(&ev, &b, &psi, &s, &opts()).unwrap();
                    let g = solve_d(&ev, &b, &psi, &s, &opts()).unwrap();
                    assert_eq!(a.value, g.value);
                    assert_eq!(a.theta_star, g.theta_star);
                    assert_eq!(vec![a.pair.0, a.pair.1], g.tuple);
                    assert_eq!(a.v2, g.u_aux[0]);
                    assert_eq!(a.v1, g.u_aux[1]);
                }
            }
        }
    }

    #[test]
    fn solve_d_examples() {
        let d = peak_chain();
        let psi = PayoffFamily::additive(d.node_values(), 3).unwrap();
        let sol = solve_d(&Evaluation::linear(), &d, &psi, &StoppingTime::immediate(&d), &opts()).unwrap();
        assert_eq!(sol.value.at(0), 6.0);

        let c3 = chain(&[0.1, 0.4, -0.3, 0.9]);
        let psi = PayoffFamily::constant(2.0, 3).unwrap();
        let sol = solve_d(&Evaluation::linear(), &c3, &psi, &StoppingTime::immediate(&c3), &opts()).unwrap();
        assert!(sol.value.values().iter().all(|&v| v == 2.0));

        // partition covers the frontier of theta_star
        let b = binomial_tree();
        let psi = PayoffFamily::additive(b.node_values(), 3).unwrap();
        let sol = solve_d(&Evaluation::linear(), &b, &psi, &StoppingTime::immediate(&b), &opts()).unwrap();
        let mut all: Vec<NodeIdx> = sol.partition.concat();
        all.sort_unstable();
        assert_eq!(all, sol.theta_star.frontier(&b));
        for (i, part) in sol.partition.iter().enumerate() {
            for &m in part {
                assert_eq!(sol.phi.at(m), sol.u_aux[i].at(m));
            }
        }
    }

    #[test]
    fn recursion_budget() {
        let c = chain(&[0.0; 7]);
        let psi = PayoffFamily::constant(1.0, 2).unwrap();
        let err = solve_d(&Evaluation::linear(), &c, &psi, &StoppingTime::immediate(&c), &opts()).unwrap_err();
        assert!(matches!(err, Error::Budget { what: "recursion stage", .. }));
        let psi = PayoffFamily::constant(1.0, 5).unwrap();
        let d = peak_chain();
        assert!(solve_d(&Evaluation::linear(), &d, &psi, &StoppingTime::immediate(&d), &opts()).is_err());
    }

    #[test]
    fn nested_and_cascades() {
        let d = peak_chain();
        let mult = PayoffFamily::multiplicative(d.node_values(), 2).unwrap();
        let nested = solve_symmetric_nested(&Evaluation::linear(), &d, &mult, &opts()).unwrap();
        assert_eq!(nested.value.at(0), 4.0);
        let cas = solve_cascade_multiplicative(&Evaluation::linear(), &d, &d.node_values(), 2).unwrap();
        assert_eq!(cas.value.at(0), 4.0);

        let b = binomial_tree();
        let add = solve_cascade_additive(&Evaluation::linear(), &b, &b.node_values(), 2).unwrap();
        assert_eq!(add.value.at(0), 3.125);
        assert_eq!(add.levels.len(), 1);
        let single = solve_cascade_additive(&Evaluation::linear(), &b, &b.node_values(), 1).unwrap();
        let snell = snell_envelope(&Evaluation::linear(), &b, &b.node_values()).unwrap();
        assert_eq!(single.value, snell.u);

        let ones =
            solve_cascade_multiplicative(&Evaluation::linear(), &b, &AdaptedFamily::constant(&b, 1.0), 3).unwrap();
        assert!(ones.value.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cascade_preconditions() {
        let b = binomial_tree();
        let neg = AdaptedFamily::constant(&b, -1.0);
        assert!(matches!(
            solve_cascade_multiplicative(&Evaluation::linear(), &b, &neg, 2),
            Err(Error::InvalidPayoff(_))
        ));
        let ent = Evaluation::entropic(1.0).unwrap();
        assert!(matches!(solve_cascade_multiplicative(&ent, &b, &b.node_values(), 2), Err(Error::Precondition(_))));
    }

    #[test]
    fn necessary_conditions() {
        let b = binomial_tree();
        let s = StoppingTime::immediate(&b);
        let psi = PayoffFamily::additive(b.node_values(), 2).unwrap();
        let ev = Evaluation::linear();
        let sol = solve_d(&ev, &b, &psi, &s, &opts()).unwrap();
        let cert = verify_necessary(&ev, &b, &psi, &sol.tuple, &s, 1e-10).unwrap();
        assert!(cert.passed);
        assert!(cert.sub_tuples.is_some());

        let early = vec![s.clone(), s.clone()];
        let cert = verify_necessary(&ev, &b, &psi, &early, &s, 1e-10).unwrap();
        assert!(!cert.meet_optimal.passed);
        assert!((cert.meet_optimal.max_gap - (3.125 - 2.5625)).abs() < 1e-15);

        let c = PayoffFamily::constant(0.5, 2).unwrap();
        let any = vec![StoppingTime::at_stage(&b, 1), StoppingTime::terminal(&b)];
        assert!(verify_necessary(&ev, &b, &c, &any, &s, 1e-10).unwrap().passed);
    }

    #[test]
    fn supermartingale_checks() {
        let b = binomial_tree();
        let budget = EnumerationBudget::default();
        let ev = Evaluation::linear();
        let psi = PayoffFamily::additive(b.node_values(), 2).unwrap();
        let sol = solve_double(&ev, &b, &psi, &StoppingTime::immediate(&b), &opts()).unwrap();
        let r = check_supermartingale(&ev, &b, &sol.value, &budget, 0, 0).unwrap();
        assert!(r.passed && r.exhaustive);
        // 5 + 4 + 1 + 2 + 2... pairs sigma <= tau among the 5 times
        assert!(r.pairs_checked > 5);

        let r = check_supermartingale(&ev, &b, &AdaptedFamily::constant(&b, 3.0), &budget, 0, 0).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_excess, 0.0);

        // the reward is dominated at the root, so it is no supermartingale
        let r = check_supermartingale(&ev, &b, &sol.phi, &budget, 0, 0).unwrap();
        assert!(!r.passed);
        assert!(r.counterexample.is_some());
    }
}
