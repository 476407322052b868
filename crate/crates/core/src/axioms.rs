//! Randomized certification of two-index operators against the structural
//! laws the stopping theory relies on, and of their declared capabilities.
//!
//! Structural laws are checked for bit-wise equality since both sides run
//! the same kernel sequence; the algebraic flags are checked at `1e-12`.
//! Each sample draws from its own stream of a ChaCha generator, so a failing
//! sample is replayed by [`replay`] from `(seed, sample)` alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::evaluation::{Capabilities, Evaluation, TwoIndexOperator};
use crate::multistop::random_time;
use crate::payoff::PayoffFamily;
use crate::space::{join_all, meet_all, paste, Event, NodeIdx, ScenarioTree, StoppingTime};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 200;
pub const ALGEBRAIC_TOL: f64 = 1e-12;
pub const BUMP: f64 = 1e-6;
const PERTURBATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Admissibility,
    KnowledgePreservation,
    Monotonicity,
    Consistency,
    ZeroOneLaw,
    /// Localization on `{τ_i = τ_i'}` with the other slot held fixed.
    SlotLocalization,
    /// Reading an ordered pair from the meet or from the first time.
    OrderedPair,
    PairPasting,
    TuplePasting,
    TranslationInvariance,
    PositiveHomogeneity,
    StrictMonotonicity,
}

impl Axiom {
    fn stream_salt(self) -> u64 {
        self as u64 + 1
    }

    fn tolerance(self) -> f64 {
        match self {
            Axiom::TranslationInvariance | Axiom::PositiveHomogeneity => ALGEBRAIC_TOL,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedTime {
    pub name: String,
    /// Ids of the stop nodes.
    pub stops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub seed: u64,
    pub sample: usize,
    pub times: Vec<NamedTime>,
    pub event: Vec<String>,
    /// Terminal values, indexed like the tree's nodes.
    pub eta: Vec<f64>,
    pub node: String,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    /// For capability flags: whether the operator declares it.
    pub declared: Option<bool>,
    /// Whether the law held on every sample.
    pub holds: bool,
    /// `holds`, or an undeclared flag.
    pub passed: bool,
    pub samples: usize,
    pub tolerance: f64,
    pub max_gap: f64,
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AxiomReport {
    pub operator: String,
    pub seed: u64,
    pub checks: Vec<AxiomCheck>,
    pub passed: bool,
}

impl AxiomReport {
    fn new(op: &dyn TwoIndexOperator, seed: u64, checks: Vec<AxiomCheck>) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        Self { operator: op.label().to_string(), seed, checks, passed }
    }

    pub fn check(&self, axiom: Axiom) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| c.axiom == axiom)
    }

    pub fn first_failure(&self) -> Option<&AxiomCheck> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Linear evaluation plus `0.1 ×` the latest stage at which `S` stops on any
/// path: a defect that depends on `S` away from the node being evaluated.
pub struct BrokenOperator {
    inner: Evaluation,
}

impl BrokenOperator {
    pub fn new() -> Self {
        Self { inner: Evaluation::linear().with_label("broken") }
    }
}

impl Default for BrokenOperator {
    fn default() -> Self {
        Self::new()
    }
}

impl TwoIndexOperator for BrokenOperator {
    fn label(&self) -> &str {
        self.inner.label()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { translation_invariant: true, positively_homogeneous: false, strictly_monotone: true }
    }

    fn apply(&self, tree: &ScenarioTree, s: &StoppingTime, tau: &StoppingTime, eta: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.inner.evaluate(tree, s, tau, eta)?;
        let latest = s.leaf_stages(tree).into_iter().max().unwrap_or(0);
        for m in s.frontier(tree) {
            out[m] += 0.1 * latest as f64;
        }
        Ok(out)
    }
}

fn sample_rng(seed: u64, axiom: Axiom, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ axiom.stream_salt().wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(sample as u64);
    rng
}

/// Node values uniform on `[-1, 1]` scaled by `1 + stage`.
fn random_family(tree: &ScenarioTree, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..tree.len()).map(|m| rng.gen_range(-1.0..=1.0) * (1 + tree.stage(m)) as f64).collect()
}

fn random_subset(nodes: Vec<NodeIdx>, rng: &mut ChaCha8Rng) -> Vec<NodeIdx> {
    nodes.into_iter().filter(|_| rng.gen_bool(0.5)).collect()
}

/// A time agreeing with `base` on a random event measurable at both.
fn overlapping(tree: &ScenarioTree, base: &StoppingTime, from: &StoppingTime, rng: &mut ChaCha8Rng) -> StoppingTime {
    let other = random_time(tree, from, rng);
    let meet = base.meet(tree, &other).expect("same tree");
    let event = Event::from_nodes(random_subset(meet.frontier(tree), rng));
    paste(tree, base, &other, &event).expect("event is measurable at the meet")
}

/// Outcome of one sample: the largest gap seen and the first offending node.
struct Outcome {
    gap: f64,
    failure: Option<Failure>,
}

struct Failure {
    times: Vec<(&'static str, StoppingTime)>,
    event: Vec<NodeIdx>,
    eta: Vec<f64>,
    node: NodeIdx,
    lhs: f64,
    rhs: f64,
}

enum Compare {
    Exact,
    Close,
    AtMost,
    Above,
}

impl Compare {
    fn violated(&self, lhs: f64, rhs: f64) -> bool {
        match self {
            Compare::Exact => lhs.to_bits() != rhs.to_bits(),
            Compare::Close => !((lhs - rhs).abs() <= ALGEBRAIC_TOL * rhs.abs().max(1.0)),
            Compare::AtMost => !(lhs <= rhs),
            Compare::Above => !(lhs > rhs),
        }
    }
}

struct Sampler {
    outcome: Outcome,
}

impl Sampler {
    fn new() -> Self {
        Self { outcome: Outcome { gap: 0.0, failure: None } }
    }

    #[allow(clippy::too_many_arguments)]
    fn compare(
        &mut self,
        cmp: Compare,
        nodes: &[NodeIdx],
        lhs: &[f64],
        rhs: &[f64],
        times: &[(&'static str, &StoppingTime)],
        event: &[NodeIdx],
        eta: &[f64],
    ) {
        for &m in nodes {
            let gap = match cmp {
                Compare::Above => rhs[m] - lhs[m],
                _ => (lhs[m] - rhs[m]).abs(),
            };
            if gap.is_nan() {
                self.outcome.gap = f64::INFINITY;
            } else if !matches!(cmp, Compare::Above) {
                self.outcome.gap = self.outcome.gap.max(gap);
            }
            if self.outcome.failure.is_none() && cmp.violated(lhs[m], rhs[m]) {
                self.outcome.failure = Some(Failure {
                    times: times.iter().map(|(n, t)| (*n, (*t).clone())).collect(),
                    event: event.to_vec(),
                    eta: eta.to_vec(),
                    node: m,
                    lhs: lhs[m],
                    rhs: rhs[m],
                });
            }
        }
    }
}

struct Ctx<'a> {
    op: &'a dyn TwoIndexOperator,
    tree: &'a ScenarioTree,
    /// Two-index reward for the pair laws.
    pair: Option<&'a PayoffFamily>,
    /// Reward of any arity for the tuple law.
    tuple: Option<&'a PayoffFamily>,
}

fn both_stop(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Vec<NodeIdx> {
    a.frontier(tree).into_iter().filter(|&m| b.stops_at(tree, m)).collect()
}

fn one_sample(ctx: &Ctx<'_>, axiom: Axiom, rng: &mut ChaCha8Rng) -> Result<Outcome> {
    let tree = ctx.tree;
    let op = ctx.op;
    let root = StoppingTime::immediate(tree);
    let mut smp = Sampler::new();
    match axiom {
        Axiom::Admissibility => {
            let s1 = random_time(tree, &root, rng);
            let s2 = if rng.gen_bool(0.5) { overlapping(tree, &s1, &root, rng) } else { random_time(tree, &root, rng) };
            let tau = random_time(tree, &s1.join(tree, &s2)?, rng);
            let eta = random_family(tree, rng);
            let a = op.apply(tree, &s1, &tau, &eta)?;
            let b = op.apply(tree, &s2, &tau, &eta)?;
            let nodes = both_stop(tree, &s1, &s2);
            smp.compare(Compare::Exact, &nodes, &a, &b, &[("S", &s1), ("S'", &s2), ("tau", &tau)], &nodes, &eta);
        }
        Axiom::KnowledgePreservation => {
            let s = random_time(tree, &root, rng);
            let eta = random_family(tree, rng);
            let out = op.apply(tree, &s, &s, &eta)?;
            smp.compare(Compare::Exact, &s.frontier(tree), &out, &eta, &[("S", &s)], &[], &eta);
        }
        Axiom::Monotonicity => {
            let s = random_time(tree, &root, rng);
            let tau = random_time(tree, &s, rng);
            let eta = random_family(tree, rng);
            let base = op.apply(tree, &s, &tau, &eta)?;
            for _ in 0..PERTURBATIONS {
                let bumped: Vec<f64> =
                    eta.iter().map(|&v| if rng.gen_bool(0.5) { v + rng.gen_range(0.0..1.0) } else { v }).collect();
                let up = op.apply(tree, &s, &tau, &bumped)?;
                smp.compare(Compare::AtMost, &s.frontier(tree), &base, &up, &[("S", &s), ("tau", &tau)], &[], &bumped);
            }
        }
        Axiom::Consistency => {
            let s = random_time(tree, &root, rng);
            let theta = random_time(tree, &s, rng);
            let tau = random_time(tree, &theta, rng);
            let eta = random_family(tree, rng);
            let inner = op.apply(tree, &theta, &tau, &eta)?;
            let outer = op.apply(tree, &s, &theta, &inner)?;
            let direct = op.apply(tree, &s, &tau, &eta)?;
            let times = [("S", &s), ("theta", &theta), ("tau", &tau)];
            smp.compare(Compare::Exact, &s.frontier(tree), &outer, &direct, &times, &[], &eta);
        }
        Axiom::ZeroOneLaw => {
            let s = random_time(tree, &root, rng);
            let tau = random_time(tree, &s, rng);
            let other = random_time(tree, &s, rng);
            let event = random_subset(s.frontier(tree), rng);
            let tau2 = paste(tree, &tau, &other, &Event::from_nodes(event.iter().copied()))?;
            let xi = random_family(tree, rng);
            let a = op.apply(tree, &s, &tau, &xi)?;
            let b = op.apply(tree, &s, &tau2, &xi)?;
            smp.compare(Compare::Exact, &event, &a, &b, &[("S", &s), ("tau", &tau), ("tau'", &tau2)], &event, &xi);
        }
        Axiom::SlotLocalization => {
            let Some(psi) = ctx.pair else { return Ok(smp.outcome) };
            let t1 = random_time(tree, &root, rng);
            let t2 = random_time(tree, &root, rng);
            let t1b = overlapping(tree, &t1, &root, rng);
            let t2b = overlapping(tree, &t2, &root, rng);
            // first slot varies on {τ1 = τ1'}
            let (j, e) = psi.at_tuple(tree, &[&t1, &t2])?;
            let (jb, eb) = psi.at_tuple(tree, &[&t1b, &t2])?;
            let a = op.apply(tree, &t1, &j, &e)?;
            let b = op.apply(tree, &t1b, &jb, &eb)?;
            let nodes = both_stop(tree, &t1, &t1b);
            smp.compare(Compare::Exact, &nodes, &a, &b, &[("tau1", &t1), ("tau1'", &t1b), ("tau2", &t2)], &nodes, &e);
            // second slot varies on {τ2 = τ2'}
            let (jc, ec) = psi.at_tuple(tree, &[&t1, &t2b])?;
            let a = op.apply(tree, &t2, &j, &e)?;
            let b = op.apply(tree, &t2b, &jc, &ec)?;
            let nodes = both_stop(tree, &t2, &t2b);
            smp.compare(Compare::Exact, &nodes, &a, &b, &[("tau1", &t1), ("tau2", &t2), ("tau2'", &t2b)], &nodes, &e);
        }
        Axiom::OrderedPair => {
            let Some(psi) = ctx.pair else { return Ok(smp.outcome) };
            let t1 = random_time(tree, &root, rng);
            let t2 = if rng.gen_bool(0.5) { random_time(tree, &t1, rng) } else { random_time(tree, &root, rng) };
            let meet = t1.meet(tree, &t2)?;
            let join = t1.join(tree, &t2)?;
            let event = random_subset(meet.frontier(tree).into_iter().filter(|&m| t1.stops_at(tree, m)).collect(), rng);
            let times = [("tau1", &t1), ("tau2", &t2)];
            for (first, second) in [((&meet, &join), (&t1, &t2)), ((&join, &meet), (&t2, &t1))] {
                let (_, e1) = psi.at_tuple(tree, &[first.0, first.1])?;
                let (_, e2) = psi.at_tuple(tree, &[second.0, second.1])?;
                let r1 = op.apply(tree, &meet, &join, &e1)?;
                let r2 = op.apply(tree, &meet, &join, &e2)?;
                let r3 = op.apply(tree, &t1, &join, &e2)?;
                smp.compare(Compare::Exact, &event, &r1, &r2, &times, &event, &e1);
                smp.compare(Compare::Exact, &event, &r2, &r3, &times, &event, &e2);
            }
        }
        Axiom::PairPasting => {
            let Some(psi) = ctx.pair else { return Ok(smp.outcome) };
            let s = random_time(tree, &root, rng);
            let t1 = random_time(tree, &s, rng);
            let t2 = random_time(tree, &s, rng);
            let event = random_subset(s.frontier(tree), rng);
            let a_ev = Event::from_nodes(event.iter().copied());
            let t1b = paste(tree, &t1, &random_time(tree, &s, rng), &a_ev)?;
            let t2b = paste(tree, &t2, &random_time(tree, &s, rng), &a_ev)?;
            let (j, e) = psi.at_tuple(tree, &[&t1, &t2])?;
            let (jb, eb) = psi.at_tuple(tree, &[&t1b, &t2b])?;
            let a = op.apply(tree, &s, &j, &e)?;
            let b = op.apply(tree, &s, &jb, &eb)?;
            let times = [("S", &s), ("tau1", &t1), ("tau2", &t2), ("tau1'", &t1b), ("tau2'", &t2b)];
            smp.compare(Compare::Exact, &event, &a, &b, &times, &event, &e);
        }
        Axiom::TuplePasting => {
            let Some(psi) = ctx.tuple else { return Ok(smp.outcome) };
            let tuple: Vec<StoppingTime> = (0..psi.d()).map(|_| random_time(tree, &root, rng)).collect();
            let refs: Vec<&StoppingTime> = tuple.iter().collect();
            let meet = meet_all(&refs);
            let event = random_subset(meet.frontier(tree), rng);
            let a_ev = Event::from_nodes(event.iter().copied());
            let other: Vec<StoppingTime> =
                tuple.iter().map(|t| paste(tree, t, &random_time(tree, &meet, rng), &a_ev)).collect::<Result<_>>()?;
            let orefs: Vec<&StoppingTime> = other.iter().collect();
            let (j, e) = psi.at_tuple(tree, &refs)?;
            let (jb, eb) = psi.at_tuple(tree, &orefs)?;
            let a = op.apply(tree, &meet, &j, &e)?;
            let b = op.apply(tree, &meet_all(&orefs), &jb, &eb)?;
            debug_assert_eq!(join_all(&refs).len(), tree.len());
            let names = ["tau1", "tau2", "tau3", "tau4", "tau5", "tau6"];
            let times: Vec<(&'static str, &StoppingTime)> = names.iter().copied().zip(tuple.iter()).collect();
            smp.compare(Compare::Exact, &event, &a, &b, &times, &event, &e);
        }
        Axiom::TranslationInvariance | Axiom::PositiveHomogeneity => {
            let s = random_time(tree, &root, rng);
            let tau = random_time(tree, &s, rng);
            let eta = random_family(tree, rng);
            let translate = axiom == Axiom::TranslationInvariance;
            // one known constant per stop node of S
            let consts: Vec<f64> = (0..tree.len())
                .map(|_| if translate { rng.gen_range(-2.0..2.0) } else { rng.gen_range(0.0..3.0) })
                .collect();
            let moved: Vec<f64> = (0..tree.len())
                .map(|m| match s.stop_node_above(tree, m) {
                    Some(f) if translate => eta[m] + consts[f],
                    Some(f) => eta[m] * consts[f],
                    None => eta[m],
                })
                .collect();
            let lhs = op.apply(tree, &s, &tau, &moved)?;
            let base = op.apply(tree, &s, &tau, &eta)?;
            let rhs: Vec<f64> =
                (0..tree.len()).map(|m| if translate { base[m] + consts[m] } else { base[m] * consts[m] }).collect();
            smp.compare(Compare::Close, &s.frontier(tree), &lhs, &rhs, &[("S", &s), ("tau", &tau)], &[], &moved);
        }
        Axiom::StrictMonotonicity => {
            let s = random_time(tree, &root, rng);
            let tau = random_time(tree, &s, rng);
            let eta = random_family(tree, rng);
            let frontier = tau.frontier(tree);
            let q = frontier[rng.gen_range(0..frontier.len())];
            let mut bumped = eta.clone();
            bumped[q] += BUMP;
            let base = op.apply(tree, &s, &tau, &eta)?;
            let up = op.apply(tree, &s, &tau, &bumped)?;
            let m = s.stop_node_above(tree, q).expect("tau is after S");
            smp.compare(Compare::Above, &[m], &up, &base, &[("S", &s), ("tau", &tau)], &[q], &bumped);
        }
    }
    Ok(smp.outcome)
}

fn run_check(ctx: &Ctx<'_>, axiom: Axiom, samples: usize, seed: u64) -> Result<AxiomCheck> {
    let caps = ctx.op.capabilities();
    let declared = match axiom {
        Axiom::TranslationInvariance => Some(caps.translation_invariant),
        Axiom::PositiveHomogeneity => Some(caps.positively_homogeneous),
        Axiom::StrictMonotonicity => Some(caps.strictly_monotone),
        _ => None,
    };
    let mut max_gap: f64 = 0.0;
    let mut counterexample = None;
    for sample in 0..samples {
        let mut rng = sample_rng(seed, axiom, sample);
        let out = one_sample(ctx, axiom, &mut rng)?;
        max_gap = max_gap.max(out.gap);
        if counterexample.is_none() {
            counterexample = out.failure.map(|f| describe(ctx.tree, seed, sample, f));
        }
    }
    let holds = counterexample.is_none();
    Ok(AxiomCheck {
        axiom,
        declared,
        holds,
        passed: holds || declared == Some(false),
        samples,
        tolerance: axiom.tolerance(),
        max_gap,
        counterexample,
    })
}

fn describe(tree: &ScenarioTree, seed: u64, sample: usize, f: Failure) -> Counterexample {
    Counterexample {
        seed,
        sample,
        times: f.times.iter().map(|(n, t)| NamedTime { name: n.to_string(), stops: t.describe(tree) }).collect(),
        event: f.event.iter().map(|&m| tree.id(m).to_string()).collect(),
        eta: f.eta,
        node: tree.id(f.node).to_string(),
        lhs: f.lhs,
        rhs: f.rhs,
    }
}

/// Re-runs one sample of one law; `Some` iff that sample fails.
pub fn replay(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    psi: Option<&PayoffFamily>,
    axiom: Axiom,
    seed: u64,
    sample: usize,
) -> Result<Option<Counterexample>> {
    let ctx = Ctx { op, tree, pair: psi.filter(|p| p.d() == 2), tuple: psi };
    let mut rng = sample_rng(seed, axiom, sample);
    Ok(one_sample(&ctx, axiom, &mut rng)?.failure.map(|f| describe(tree, seed, sample, f)))
}

fn report(
    op: &dyn TwoIndexOperator,
    ctx: &Ctx<'_>,
    axioms: &[Axiom],
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let checks = axioms.iter().map(|&a| run_check(ctx, a, samples, seed)).collect::<Result<_>>()?;
    Ok(AxiomReport::new(op, seed, checks))
}

pub fn check_admissibility(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let ctx = Ctx { op, tree, pair: None, tuple: None };
    report(op, &ctx, &[Axiom::Admissibility], samples, seed)
}

/// Knowledge preservation, monotonicity and consistency.
pub fn check_core_laws(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let ctx = Ctx { op, tree, pair: None, tuple: None };
    report(op, &ctx, &[Axiom::KnowledgePreservation, Axiom::Monotonicity, Axiom::Consistency], samples, seed)
}

pub fn check_zero_one_law(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let ctx = Ctx { op, tree, pair: None, tuple: None };
    report(op, &ctx, &[Axiom::ZeroOneLaw], samples, seed)
}

/// The pair laws for a two-index reward: slot localization, ordered pairs
/// and pasting on an event known at the start.
pub fn check_pair_laws(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    if psi.d() != 2 {
        return Err(crate::Error::InvalidPayoff(format!("pair laws need a 2-index reward, got {}", psi.d())));
    }
    let ctx = Ctx { op, tree, pair: Some(psi), tuple: None };
    report(op, &ctx, &[Axiom::SlotLocalization, Axiom::OrderedPair, Axiom::PairPasting], samples, seed)
}

pub fn check_d_pasting_property(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    if psi.d() > 6 {
        return Err(crate::Error::InvalidPayoff("tuple pasting is sampled for at most 6 exercises".into()));
    }
    let ctx = Ctx { op, tree, pair: None, tuple: Some(psi) };
    report(op, &ctx, &[Axiom::TuplePasting], samples, seed)
}

pub fn check_flags(op: &dyn TwoIndexOperator, tree: &ScenarioTree, samples: usize, seed: u64) -> Result<AxiomReport> {
    let ctx = Ctx { op, tree, pair: None, tuple: None };
    report(
        op,
        &ctx,
        &[Axiom::TranslationInvariance, Axiom::PositiveHomogeneity, Axiom::StrictMonotonicity],
        samples,
        seed,
    )
}

/// Every law and flag. `pair` must have two indices; `tuple` may have any
/// arity up to 6.
pub fn check_all(
    op: &dyn TwoIndexOperator,
    tree: &ScenarioTree,
    pair: &PayoffFamily,
    tuple: &PayoffFamily,
    samples: usize,
    seed: u64,
) -> Result<AxiomReport> {
    let mut checks = Vec::new();
    for part in [
        check_admissibility(op, tree, samples, seed)?,
        check_core_laws(op, tree, samples, seed)?,
        check_zero_one_law(op, tree, samples, seed)?,
        check_pair_laws(op, tree, pair, samples, seed)?,
        check_d_pasting_property(op, tree, tuple, samples, seed)?,
        check_flags(op, tree, samples, seed)?,
    ] {
        checks.extend(part.checks);
    }
    Ok(AxiomReport::new(op, seed, checks))
}

/// Asymmetric, path-dependent two-index reward used by default for the
/// pair laws: `η(τ1) + 2 η(τ2) + 0.1 (stage τ2 - stage τ1)^2`.
pub fn default_pair_payoff(tree: &ScenarioTree) -> PayoffFamily {
    let values = tree.node_values();
    PayoffFamily::custom(
        2,
        false,
        std::sync::Arc::new(move |t: &ScenarioTree, m: NodeIdx, s: &[usize]| {
            let a = values.at(t.ancestor_at(m, s[0]).expect("stage on path"));
            let b = values.at(t.ancestor_at(m, s[1]).expect("stage on path"));
            let lag = s[1] as f64 - s[0] as f64;
            a + 2.0 * b + 0.1 * lag * lag
        }),
    )
    .expect("arity 2")
}
