//! Ground truth by exhaustion over every Bermudan stopping time of a small
//! tree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::Evaluation;
use crate::payoff::PayoffFamily;
use crate::space::{join_all, paste, Event, NodeIdx, ScenarioTree, StoppingTime};

pub const DEFAULT_MAX_STOPPING_TIMES: usize = 4096;
pub const DEFAULT_MAX_TUPLES: u128 = 1_000_000;
pub const BUDGET_ENV: &str = "MULTISTOP_BUDGET";

/// Ties in the brute-force maximum are collected within this distance.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_stopping_times: usize,
    pub max_tuples: u128,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        Self { max_stopping_times: DEFAULT_MAX_STOPPING_TIMES, max_tuples: DEFAULT_MAX_TUPLES }
    }
}

impl EnumerationBudget {
    /// Defaults, with both limits replaced by `MULTISTOP_BUDGET` when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(BUDGET_ENV) {
            Ok(v) => {
                let n: u128 =
                    v.trim().parse().map_err(|_| Error::Config(format!("{BUDGET_ENV} must be a positive integer")))?;
                if n == 0 {
                    return Err(Error::Config(format!("{BUDGET_ENV} must be a positive integer")));
                }
                Ok(Self { max_stopping_times: usize::try_from(n).unwrap_or(usize::MAX), max_tuples: n })
            }
            Err(_) => Ok(Self::default()),
        }
    }
}

fn count_below(tree: &ScenarioTree, m: NodeIdx) -> u128 {
    if tree.is_leaf(m) {
        return 1;
    }
    let prod = tree.children(m).iter().fold(1u128, |acc, &c| acc.saturating_mul(count_below(tree, c)));
    prod.saturating_add(1)
}

/// Number of canonical stopping times `>= from` (saturating).
pub fn count_stopping_times(tree: &ScenarioTree, from: &StoppingTime) -> u128 {
    from.frontier(tree).into_iter().fold(1u128, |acc, f| acc.saturating_mul(count_below(tree, f)))
}

/// First-stop node sets of every stopping time on the subtree of `m`.
fn options(tree: &ScenarioTree, m: NodeIdx) -> Vec<Vec<NodeIdx>> {
    let mut out = vec![vec![m]];
    if !tree.is_leaf(m) {
        out.extend(product(tree.children(m).iter().map(|&c| options(tree, c)).collect()));
    }
    out
}

fn product(parts: Vec<Vec<Vec<NodeIdx>>>) -> Vec<Vec<NodeIdx>> {
    parts.into_iter().fold(vec![vec![]], |acc, part| {
        acc.iter().flat_map(|a| part.iter().map(move |p| [a.as_slice(), p.as_slice()].concat())).collect()
    })
}

/// All canonical stopping times `>= from`, in a fixed order starting with
/// `from` itself.
pub fn enumerate_stopping_times(
    tree: &ScenarioTree,
    from: &StoppingTime,
    budget: &EnumerationBudget,
) -> Result<Vec<StoppingTime>> {
    if from.len() != tree.len() {
        return Err(Error::TreeMismatch(from.len(), tree.len()));
    }
    let count = count_stopping_times(tree, from);
    if count > budget.max_stopping_times as u128 {
        return Err(Error::Budget { what: "stopping time", needed: count, limit: budget.max_stopping_times as u128 });
    }
    let parts = from.frontier(tree).into_iter().map(|f| options(tree, f)).collect();
    Ok(product(parts).into_iter().map(|nodes| StoppingTime::from_stop_nodes(tree, &nodes)).collect())
}

/// Evaluates tuples of enumerated stopping times.
struct TupleEvaluator<'a> {
    ev: &'a Evaluation,
    tree: &'a ScenarioTree,
    psi: &'a PayoffFamily,
    s: &'a StoppingTime,
    times: &'a [StoppingTime],
    stop_stages: Vec<Vec<Option<usize>>>,
}

struct Scratch {
    eta: Vec<f64>,
    out: Vec<f64>,
    stages: Vec<usize>,
    idx: Vec<usize>,
}

impl<'a> TupleEvaluator<'a> {
    fn new(
        ev: &'a Evaluation,
        tree: &'a ScenarioTree,
        psi: &'a PayoffFamily,
        s: &'a StoppingTime,
        times: &'a [StoppingTime],
    ) -> Self {
        let stop_stages = times.iter().map(|t| t.stop_stages(tree)).collect();
        Self { ev, tree, psi, s, times, stop_stages }
    }

    fn scratch(&self) -> Scratch {
        let n = self.tree.len();
        let d = self.psi.d();
        Scratch { eta: vec![f64::NAN; n], out: vec![f64::NAN; n], stages: vec![0; d], idx: vec![0; d] }
    }

    fn decode(&self, t: u128, idx: &mut [usize]) {
        let k = self.times.len() as u128;
        let mut r = t;
        for slot in idx.iter_mut().rev() {
            *slot = (r % k) as usize;
            r /= k;
        }
    }

    /// Evaluation of the tuple `idx`; values on the `s` frontier are left in
    /// `scratch.out`.
    fn eval(&self, idx: &[usize], scratch: &mut Scratch) -> Result<()> {
        let refs: Vec<&StoppingTime> = idx.iter().map(|&i| &self.times[i]).collect();
        self.eval_tuple(&refs, idx.iter().map(|&i| &self.stop_stages[i]).collect(), scratch)
    }

    fn eval_tuple(
        &self,
        tuple: &[&StoppingTime],
        stop_stages: Vec<&Vec<Option<usize>>>,
        scratch: &mut Scratch,
    ) -> Result<()> {
        let join = join_all(tuple);
        for m in 0..self.tree.len() {
            if join.stops_at(self.tree, m) {
                for (slot, ss) in scratch.stages.iter_mut().zip(&stop_stages) {
                    *slot = ss[m].expect("component stopped at the join");
                }
                scratch.eta[m] = self.psi.eval(self.tree, m, &scratch.stages);
            }
        }
        self.ev.sweep(self.tree, self.s, &join, &scratch.eta, &mut scratch.out)
    }
}

#[derive(Debug, Clone)]
pub struct BruteForce {
    /// Stop frontier of the starting time.
    pub frontier: Vec<NodeIdx>,
    /// Node-wise maximum on `frontier`.
    pub value: Vec<f64>,
    pub times: Vec<StoppingTime>,
    /// Number of tuples evaluated.
    pub count: u128,
    /// Tuples (as indices into `times`) attaining the maximum at every
    /// frontier node within `1e-12`.
    pub argmax: Vec<Vec<usize>>,
}

impl BruteForce {
    pub fn value_at(&self, m: NodeIdx) -> Option<f64> {
        self.frontier.iter().position(|&f| f == m).map(|i| self.value[i])
    }

    pub fn tuple(&self, idx: &[usize]) -> Vec<&StoppingTime> {
        idx.iter().map(|&i| &self.times[i]).collect()
    }
}

fn check_inputs(ev: &Evaluation, tree: &ScenarioTree, psi: &PayoffFamily, s: &StoppingTime) -> Result<()> {
    if s.len() != tree.len() {
        return Err(Error::TreeMismatch(s.len(), tree.len()));
    }
    ev.check_tree(tree)?;
    if psi.d() == 0 {
        return Err(Error::InvalidPayoff("number of exercises must be >= 1".into()));
    }
    Ok(())
}

fn tuple_count(k: usize, d: usize, budget: &EnumerationBudget) -> Result<u128> {
    let count = (k as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if count > budget.max_tuples {
        return Err(Error::Budget { what: "tuple", needed: count, limit: budget.max_tuples });
    }
    Ok(count)
}

/// Values of every tuple on the frontier of `s`, row-major by tuple index.
fn all_tuple_values(ev: &TupleEvaluator<'_>, frontier: &[NodeIdx], count: u128) -> Result<Vec<f64>> {
    let f = frontier.len();
    let mut values = vec![0.0; count as usize * f];
    values.par_chunks_mut(f).enumerate().try_for_each_init(
        || ev.scratch(),
        |scratch, (t, chunk)| -> Result<()> {
            let mut idx = std::mem::take(&mut scratch.idx);
            ev.decode(t as u128, &mut idx);
            let r = ev.eval(&idx, scratch);
            scratch.idx = idx;
            r?;
            for (c, &m) in chunk.iter_mut().zip(frontier) {
                *c = scratch.out[m];
            }
            Ok(())
        },
    )?;
    Ok(values)
}

/// Maximum over all `d`-tuples of stopping times `>= s` of the evaluation
/// of the reward at the tuple, node-wise on the frontier of `s`.
pub fn brute_force_value(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    budget: &EnumerationBudget,
) -> Result<BruteForce> {
    check_inputs(ev, tree, psi, s)?;
    let times = enumerate_stopping_times(tree, s, budget)?;
    let d = psi.d();
    let count = tuple_count(times.len(), d, budget)?;
    let frontier = s.frontier(tree);
    let f = frontier.len();
    let evaluator = TupleEvaluator::new(ev, tree, psi, s, &times);
    let values = all_tuple_values(&evaluator, &frontier, count)?;

    let mut value = vec![f64::NEG_INFINITY; f];
    for row in values.chunks(f) {
        for (v, &x) in value.iter_mut().zip(row) {
            *v = v.max(x);
        }
    }
    let mut argmax = Vec::new();
    let mut idx = vec![0; d];
    for (t, row) in values.chunks(f).enumerate() {
        if row.iter().zip(&value).all(|(&x, &v)| x >= v - TIE_TOL * (1.0 + v.abs())) {
            evaluator.decode(t as u128, &mut idx);
            argmax.push(idx.clone());
        }
    }
    Ok(BruteForce { frontier, value, times, count, argmax })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairSampling {
    Exhaustive,
    Random { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectedCounterexample {
    pub first: Vec<Vec<String>>,
    pub second: Vec<Vec<String>>,
    pub node: String,
    pub pasted: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectedReport {
    pub pairs_checked: u64,
    pub failures: u64,
    pub passed: bool,
    pub counterexample: Option<DirectedCounterexample>,
}

/// For pairs of tuples, pastes the first onto `{value' <= value}` and the
/// second elsewhere, and checks the pasted tuple attains the node-wise
/// maximum of the two values exactly.
pub fn check_directed_upwards(
    ev: &Evaluation,
    tree: &ScenarioTree,
    psi: &PayoffFamily,
    s: &StoppingTime,
    sampling: PairSampling,
    budget: &EnumerationBudget,
) -> Result<DirectedReport> {
    check_inputs(ev, tree, psi, s)?;
    let times = enumerate_stopping_times(tree, s, budget)?;
    let d = psi.d();
    let count = tuple_count(times.len(), d, budget)?;
    let frontier = s.frontier(tree);
    let evaluator = TupleEvaluator::new(ev, tree, psi, s, &times);

    let pairs: Vec<(u128, u128)> = match sampling {
        PairSampling::Exhaustive => {
            let total = count.saturating_mul(count);
            if total > budget.max_tuples {
                return Err(Error::Budget { what: "tuple pair", needed: total, limit: budget.max_tuples });
            }
            (0..count).flat_map(|a| (0..count).map(move |b| (a, b))).collect()
        }
        PairSampling::Random { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..samples).map(|_| (rng.gen_range(0..count), rng.gen_range(0..count))).collect()
        }
    };

    let results: Vec<Option<DirectedCounterexample>> = pairs
        .par_iter()
        .map_init(
            || evaluator.scratch(),
            |scratch, &(a, b)| -> Result<Option<DirectedCounterexample>> {
                let mut ia = vec![0; d];
                let mut ib = vec![0; d];
                evaluator.decode(a, &mut ia);
                evaluator.decode(b, &mut ib);
                evaluator.eval(&ia, scratch)?;
                let wa: Vec<f64> = frontier.iter().map(|&m| scratch.out[m]).collect();
                evaluator.eval(&ib, scratch)?;
                let wb: Vec<f64> = frontier.iter().map(|&m| scratch.out[m]).collect();
                let event = Event::from_nodes(
                    frontier.iter().zip(wa.iter().zip(&wb)).filter(|(_, (x, y))| y <= x).map(|(&m, _)| m),
                );
                let pasted: Vec<StoppingTime> = ia
                    .iter()
                    .zip(&ib)
                    .map(|(&i, &j)| paste(tree, &times[i], &times[j], &event))
                    .collect::<Result<_>>()?;
                let refs: Vec<&StoppingTime> = pasted.iter().collect();
                let ss: Vec<Vec<Option<usize>>> = pasted.iter().map(|t| t.stop_stages(tree)).collect();
                evaluator.eval_tuple(&refs, ss.iter().collect(), scratch)?;
                for (k, &m) in frontier.iter().enumerate() {
                    let max = wa[k].max(wb[k]);
                    if scratch.out[m] != max {
                        return Ok(Some(DirectedCounterexample {
                            first: ia.iter().map(|&i| times[i].describe(tree)).collect(),
                            second: ib.iter().map(|&i| times[i].describe(tree)).collect(),
                            node: tree.id(m).to_string(),
                            pasted: scratch.out[m],
                            max,
                        }));
                    }
                }
                Ok(None)
            },
        )
        .collect::<Result<_>>()?;
    let failures = results.iter().filter(|r| r.is_some()).count() as u64;
    Ok(DirectedReport {
        pairs_checked: pairs.len() as u64,
        failures,
        passed: failures == 0,
        counterexample: results.into_iter().flatten().next(),
    })
}
