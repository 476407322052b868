//! Multi-index reward families `ψ(τ_1, ..., τ_d)`.
//!
//! A reward is read at the node where the last of the `d` stopping times
//! stops, given the stage at which each individual time stopped on the path
//! leading there. That makes it measurable at `τ_1 ∨ ... ∨ τ_d` and
//! consistent on coincidence events by construction.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{join_all, AdaptedFamily, NodeIdx, ScenarioTree, StoppingTime};

pub type PayoffFn = Arc<dyn Fn(&ScenarioTree, NodeIdx, &[usize]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PayoffKind {
    /// `Σ_i η(τ_i)`
    Additive(AdaptedFamily),
    /// `Π_i η(τ_i)`
    Multiplicative(AdaptedFamily),
    Constant(f64),
    /// Explicit values keyed by (node, stage tuple).
    Table(HashMap<(NodeIdx, Vec<usize>), f64>),
    Custom(PayoffFn),
}

#[derive(Clone)]
pub struct PayoffFamily {
    d: usize,
    kind: PayoffKind,
    symmetric: bool,
}

impl std::fmt::Debug for PayoffFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            PayoffKind::Additive(_) => "additive",
            PayoffKind::Multiplicative(_) => "multiplicative",
            PayoffKind::Constant(_) => "constant",
            PayoffKind::Table(_) => "table",
            PayoffKind::Custom(_) => "custom",
        };
        f.debug_struct("PayoffFamily")
            .field("d", &self.d)
            .field("kind", &kind)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidPayoff("number of exercises must be >= 1".into()));
    }
    Ok(())
}

fn check_finite(eta: &AdaptedFamily) -> Result<()> {
    if eta.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPayoff("reward values must be finite".into()));
    }
    Ok(())
}

impl PayoffFamily {
    pub fn additive(eta: AdaptedFamily, d: usize) -> Result<Self> {
        check_d(d)?;
        check_finite(&eta)?;
        Ok(Self { d, kind: PayoffKind::Additive(eta), symmetric: true })
    }

    pub fn multiplicative(eta: AdaptedFamily, d: usize) -> Result<Self> {
        check_d(d)?;
        check_finite(&eta)?;
        Ok(Self { d, kind: PayoffKind::Multiplicative(eta), symmetric: true })
    }

    pub fn constant(c: f64, d: usize) -> Result<Self> {
        check_d(d)?;
        if !c.is_finite() {
            return Err(Error::InvalidPayoff("constant reward must be finite".into()));
        }
        Ok(Self { d, kind: PayoffKind::Constant(c), symmetric: true })
    }

    /// Explicit table; every (node, admissible stage tuple) must be present.
    /// Symmetry is detected from the entries.
    pub fn table(tree: &ScenarioTree, d: usize, entries: HashMap<(NodeIdx, Vec<usize>), f64>) -> Result<Self> {
        check_d(d)?;
        for m in 0..tree.len() {
            for stages in admissible_tuples(tree.stage(m), d) {
                match entries.get(&(m, stages.clone())) {
                    Some(v) if v.is_finite() => {}
                    Some(_) => {
                        return Err(Error::InvalidPayoff(format!("non-finite entry at `{}` {stages:?}", tree.id(m))))
                    }
                    None => return Err(Error::InvalidPayoff(format!("missing entry at `{}` {stages:?}", tree.id(m)))),
                }
            }
        }
        let symmetric = entries.iter().all(|((m, stages), v)| {
            let mut sorted = stages.clone();
            sorted.sort_unstable();
            entries.get(&(*m, sorted)) == Some(v)
        });
        Ok(Self { d, kind: PayoffKind::Table(entries), symmetric })
    }

    /// Arbitrary reward. `symmetric` is a claim; [`PayoffFamily::check_symmetry`]
    /// spot-checks it.
    pub fn custom(d: usize, symmetric: bool, f: PayoffFn) -> Result<Self> {
        check_d(d)?;
        Ok(Self { d, kind: PayoffKind::Custom(f), symmetric })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> &PayoffKind {
        &self.kind
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// The same reward with a different number of exercises, where that
    /// makes sense (additive, multiplicative, constant).
    pub fn with_d(&self, d: usize) -> Result<Self> {
        check_d(d)?;
        match &self.kind {
            PayoffKind::Additive(_) | PayoffKind::Multiplicative(_) | PayoffKind::Constant(_) => {
                Ok(Self { d, ..self.clone() })
            }
            _ => Err(Error::InvalidPayoff("table and custom rewards have a fixed arity".into())),
        }
    }

    /// Reward at node `m` for stop stages `stages` (`max = stage(m)`).
    pub fn eval(&self, tree: &ScenarioTree, m: NodeIdx, stages: &[usize]) -> f64 {
        debug_assert_eq!(stages.len(), self.d);
        match &self.kind {
            PayoffKind::Additive(eta) => {
                stages.iter().map(|&k| eta.at(tree.ancestor_at(m, k).expect("stage within path"))).sum()
            }
            PayoffKind::Multiplicative(eta) => {
                stages.iter().map(|&k| eta.at(tree.ancestor_at(m, k).expect("stage within path"))).product()
            }
            PayoffKind::Constant(c) => *c,
            PayoffKind::Table(t) => t.get(&(m, stages.to_vec())).copied().unwrap_or(f64::NAN),
            PayoffKind::Custom(f) => f(tree, m, stages),
        }
    }

    /// Reward read at a tuple of stopping times: the join of the tuple and
    /// the reward on its stop frontier (NaN elsewhere).
    pub fn at_tuple(&self, tree: &ScenarioTree, tuple: &[&StoppingTime]) -> Result<(StoppingTime, Vec<f64>)> {
        if tuple.len() != self.d {
            return Err(Error::InvalidPayoff(format!("expected {} stopping times, got {}", self.d, tuple.len())));
        }
        if let Some(t) = tuple.iter().find(|t| t.len() != tree.len()) {
            return Err(Error::TreeMismatch(t.len(), tree.len()));
        }
        let join = join_all(tuple);
        let stop_stages: Vec<Vec<Option<usize>>> = tuple.iter().map(|t| t.stop_stages(tree)).collect();
        let mut eta = vec![f64::NAN; tree.len()];
        let mut stages = vec![0; self.d];
        for m in join.frontier(tree) {
            for (i, ss) in stop_stages.iter().enumerate() {
                stages[i] = ss[m].expect("every component has stopped at the join");
            }
            eta[m] = self.eval(tree, m, &stages);
        }
        Ok((join, eta))
    }

    /// Compares the reward under random permutations of random admissible
    /// stage tuples.
    pub fn check_symmetry(&self, tree: &ScenarioTree, samples: usize, seed: u64) -> bool {
        if matches!(self.kind, PayoffKind::Additive(_) | PayoffKind::Multiplicative(_) | PayoffKind::Constant(_)) {
            return true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let m = rng.gen_range(0..tree.len());
            let k = tree.stage(m);
            let mut stages: Vec<usize> = (0..self.d).map(|_| rng.gen_range(0..=k)).collect();
            let slot = rng.gen_range(0..self.d);
            stages[slot] = k;
            let base = self.eval(tree, m, &stages);
            let mut perm = stages.clone();
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            if self.eval(tree, m, &perm).to_bits() != base.to_bits() {
                return false;
            }
        }
        true
    }
}

/// All stage tuples of length `d` with entries in `0..=k` and maximum `k`.
pub fn admissible_tuples(k: usize, d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0; d];
    loop {
        if cur.contains(&k) {
            out.push(cur.clone());
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            if cur[i] < k {
                cur[i] += 1;
                break;
            }
            cur[i] = 0;
            i += 1;
        }
    }
}

/// Per-node reward `η` used by additive and multiplicative payoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaSpec {
    /// `"node-value"`: the node's own value.
    Named(String),
    Call {
        call: Strike,
    },
    Put {
        put: Strike,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strike {
    pub strike: f64,
}

impl EtaSpec {
    pub fn family(&self, tree: &ScenarioTree) -> Result<AdaptedFamily> {
        match self {
            EtaSpec::Named(n) if n == "node-value" => Ok(tree.node_values()),
            EtaSpec::Named(n) => Err(Error::Config(format!("unknown eta `{n}`"))),
            EtaSpec::Call { call } => Ok(AdaptedFamily::from_fn(tree, |m| (tree.value(m) - call.strike).max(0.0))),
            EtaSpec::Put { put } => Ok(AdaptedFamily::from_fn(tree, |m| (put.strike - tree.value(m)).max(0.0))),
        }
    }
}

fn default_eta() -> EtaSpec {
    EtaSpec::Named("node-value".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub node: String,
    pub stages: Vec<usize>,
    pub value: f64,
}

/// Payoff specification file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PayoffSpec {
    Additive {
        #[serde(default = "default_eta")]
        eta: EtaSpec,
    },
    Multiplicative {
        #[serde(default = "default_eta")]
        eta: EtaSpec,
    },
    Constant {
        value: f64,
    },
    Table {
        entries: Vec<TableEntry>,
    },
}

impl PayoffSpec {
    /// JSON object, or shorthand `additive`, `multiplicative`,
    /// `additive:call:K`, `constant:c`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.starts_with('{') {
            return serde_json::from_str(t).map_err(|e| Error::Config(format!("payoff spec: {e}")));
        }
        let parts: Vec<&str> = t.split(':').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}` in `{t}`")));
        let eta = |rest: &[&str]| -> Result<EtaSpec> {
            match rest {
                [] => Ok(default_eta()),
                ["call", k] => Ok(EtaSpec::Call { call: Strike { strike: num(k)? } }),
                ["put", k] => Ok(EtaSpec::Put { put: Strike { strike: num(k)? } }),
                _ => Err(Error::Config(format!("unknown payoff `{t}`"))),
            }
        };
        match parts.as_slice() {
            ["additive", rest @ ..] => Ok(PayoffSpec::Additive { eta: eta(rest)? }),
            ["multiplicative", rest @ ..] => Ok(PayoffSpec::Multiplicative { eta: eta(rest)? }),
            ["constant", c] => Ok(PayoffSpec::Constant { value: num(c)? }),
            _ => Err(Error::Config(format!("unknown payoff `{t}`"))),
        }
    }

    /// `d` is ignored for tables, whose arity comes from the entries.
    pub fn build(&self, tree: &ScenarioTree, d: usize) -> Result<PayoffFamily> {
        match self {
            PayoffSpec::Additive { eta } => PayoffFamily::additive(eta.family(tree)?, d),
            PayoffSpec::Multiplicative { eta } => PayoffFamily::multiplicative(eta.family(tree)?, d),
            PayoffSpec::Constant { value } => PayoffFamily::constant(*value, d),
            PayoffSpec::Table { entries } => {
                let d = entries.first().map(|e| e.stages.len()).ok_or_else(|| Error::Config("empty table".into()))?;
                let mut map = HashMap::with_capacity(entries.len());
                for e in entries {
                    if e.stages.len() != d {
                        return Err(Error::Config("table entries disagree on arity".into()));
                    }
                    map.insert((tree.index_of(&e.node)?, e.stages.clone()), e.value);
                }
                PayoffFamily::table(tree, d, map)
            }
        }
    }
}
