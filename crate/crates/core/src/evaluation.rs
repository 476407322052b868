//! Non-linear evaluations `rho_{S,tau}` generated by one-step node kernels.
//!
//! `rho_{S,tau}[eta]` is computed by a backward sweep over the nodes lying
//! between the stop frontiers of `S` and `tau`: frontier values of `tau` are
//! frozen, every other node in the region gets `kernel(children)`. Since the
//! value at a node only depends on its subtree, composing two sweeps through
//! an intermediate time replays the exact same floating-point operations as a
//! single sweep.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{NodeIdx, ScenarioTree, StoppingTime};

/// Structural capabilities an operator claims. The axioms module checks them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub translation_invariant: bool,
    pub positively_homogeneous: bool,
    pub strictly_monotone: bool,
}

/// Anything that maps terminal values on the `tau` frontier to values on the
/// `S` frontier. [`Evaluation`] is the only production implementor; the
/// axioms module uses the trait to plant broken operators.
pub trait TwoIndexOperator: Sync {
    fn label(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    /// Values on the region between `s` and `tau`; callers read the `s`
    /// frontier. Entries outside the region are NaN.
    fn apply(&self, tree: &ScenarioTree, s: &StoppingTime, tau: &StoppingTime, eta: &[f64]) -> Result<Vec<f64>>;
}

pub type DriverFn = Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>;

/// Driver `g(t, y, z)` of the explicit one-step scheme. `z` is the vector of
/// child deviations from the conditional mean.
#[derive(Clone)]
pub enum GDriver {
    Zero,
    /// `g = -r y`
    Discount {
        rate: f64,
    },
    /// `g = kappa * sum_c |z_c|`
    AbsDeviation {
        kappa: f64,
    },
    Custom {
        name: String,
        g: DriverFn,
        /// Lipschitz bound in `y`.
        y_lipschitz: f64,
        /// Lipschitz bound in `z` for the l1 norm.
        z_lipschitz: f64,
        capabilities: Capabilities,
    },
}

impl fmt::Debug for GDriver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GDriver::Zero => write!(f, "Zero"),
            GDriver::Discount { rate } => write!(f, "Discount({rate})"),
            GDriver::AbsDeviation { kappa } => write!(f, "AbsDeviation({kappa})"),
            GDriver::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl GDriver {
    fn eval(&self, t: f64, y: f64, z: &[f64]) -> f64 {
        match self {
            GDriver::Zero => 0.0,
            GDriver::Discount { rate } => -rate * y,
            GDriver::AbsDeviation { kappa } => kappa * z.iter().map(|d| d.abs()).sum::<f64>(),
            GDriver::Custom { g, .. } => g(t, y, z),
        }
    }

    fn lipschitz(&self) -> (f64, f64) {
        match self {
            GDriver::Zero => (0.0, 0.0),
            GDriver::Discount { rate } => (rate.abs(), 0.0),
            GDriver::AbsDeviation { kappa } => (0.0, kappa.abs()),
            GDriver::Custom { y_lipschitz, z_lipschitz, .. } => (*y_lipschitz, *z_lipschitz),
        }
    }

    fn capabilities(&self) -> Capabilities {
        match self {
            GDriver::Zero => {
                Capabilities { translation_invariant: true, positively_homogeneous: true, strictly_monotone: true }
            }
            GDriver::Discount { .. } => {
                Capabilities { translation_invariant: false, positively_homogeneous: true, strictly_monotone: true }
            }
            GDriver::AbsDeviation { .. } => {
                Capabilities { translation_invariant: true, positively_homogeneous: true, strictly_monotone: true }
            }
            GDriver::Custom { capabilities, .. } => *capabilities,
        }
    }
}

/// An alternative child distribution together with its penalty rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub weights: Vec<f64>,
    pub penalty: f64,
}

/// Finite ambiguity set around the baseline child probabilities. The
/// baseline itself is always included with zero penalty.
#[derive(Debug, Clone, PartialEq)]
pub enum Ambiguity {
    /// Explicit probability vectors, used at every node whose arity matches.
    Fixed(Vec<Alternative>),
    /// `q_c ∝ p_c w_c`; applies to any node whose arity matches the weights.
    Tilted(Vec<Alternative>),
    /// Explicit vectors per node id.
    PerNode(HashMap<String, Vec<Alternative>>),
}

#[derive(Debug, Clone)]
enum Kernel {
    Linear,
    Entropic { gamma: f64 },
    DiscreteG(GDriver),
    Robust(Ambiguity),
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    label: String,
    kernel: Kernel,
    caps: Capabilities,
}

fn check_distribution(q: &[f64]) -> Result<()> {
    if q.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidOperator(format!("alternative {q:?} must be strictly positive")));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidOperator(format!("alternative {q:?} sums to {total}")));
    }
    Ok(())
}

fn check_alternatives(alts: &[Alternative], normalized: bool) -> Result<()> {
    for alt in alts {
        if !(alt.penalty >= 0.0) || !alt.penalty.is_finite() {
            return Err(Error::InvalidOperator(format!("penalty {} must be finite and >= 0", alt.penalty)));
        }
        if normalized {
            check_distribution(&alt.weights)?;
        } else if alt.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidOperator(format!("tilt weights {:?} must be strictly positive", alt.weights)));
        }
    }
    Ok(())
}

impl Evaluation {
    /// Conditional expectation.
    pub fn linear() -> Self {
        Self {
            label: "linear".into(),
            kernel: Kernel::Linear,
            caps: Capabilities { translation_invariant: true, positively_homogeneous: true, strictly_monotone: true },
        }
    }

    /// Entropic certainty equivalent `-(1/γ) ln E[exp(-γ Y)]`.
    pub fn entropic(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidOperator(format!("risk aversion must be positive, got {gamma}")));
        }
        Ok(Self {
            label: format!("entropic(gamma={gamma})"),
            kernel: Kernel::Entropic { gamma },
            caps: Capabilities { translation_invariant: true, positively_homogeneous: false, strictly_monotone: true },
        })
    }

    /// Explicit one-step scheme `m + g(t_k, m, y - m) Δt_k` of a BSDE with
    /// driver `g`. Monotonicity of the scheme on a concrete tree is checked
    /// by [`Evaluation::check_tree`].
    pub fn discrete_g(driver: GDriver) -> Result<Self> {
        let (ly, lz) = driver.lipschitz();
        if !(ly >= 0.0 && lz >= 0.0 && ly.is_finite() && lz.is_finite()) {
            return Err(Error::InvalidOperator(format!("driver Lipschitz bounds must be finite, got ({ly}, {lz})")));
        }
        if let GDriver::Discount { rate } | GDriver::AbsDeviation { kappa: rate } = &driver {
            if !rate.is_finite() {
                return Err(Error::InvalidOperator("driver parameter must be finite".into()));
            }
        }
        if let GDriver::AbsDeviation { kappa } = &driver {
            if *kappa < 0.0 {
                return Err(Error::InvalidOperator("kappa must be non-negative".into()));
            }
        }
        Ok(Self { label: format!("g({driver:?})"), caps: driver.capabilities(), kernel: Kernel::DiscreteG(driver) })
    }

    /// Worst case over a finite ambiguity set with penalties:
    /// `min_q [E_q[Y] + c(q) Δt_k]`.
    pub fn penalized_robust(ambiguity: Ambiguity) -> Result<Self> {
        let zero_penalty = match &ambiguity {
            Ambiguity::Fixed(alts) => {
                check_alternatives(alts, true)?;
                alts.iter().all(|a| a.penalty == 0.0)
            }
            Ambiguity::Tilted(alts) => {
                check_alternatives(alts, false)?;
                alts.iter().all(|a| a.penalty == 0.0)
            }
            Ambiguity::PerNode(map) => {
                for alts in map.values() {
                    check_alternatives(alts, true)?;
                }
                map.values().flatten().all(|a| a.penalty == 0.0)
            }
        };
        Ok(Self {
            label: if zero_penalty { "robust(coherent)".into() } else { "robust(penalized)".into() },
            kernel: Kernel::Robust(ambiguity),
            caps: Capabilities {
                translation_invariant: true,
                positively_homogeneous: zero_penalty,
                strictly_monotone: true,
            },
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn capabilities(&self) -> Capabilities {
        self.caps
    }

    /// Tree-dependent preconditions: the explicit g-scheme must be monotone
    /// at every node, and per-node ambiguity vectors must match arities.
    pub fn check_tree(&self, tree: &ScenarioTree) -> Result<()> {
        match &self.kernel {
            Kernel::DiscreteG(driver) => {
                let (ly, lz) = driver.lipschitz();
                let max_dt = (0..tree.stages()).map(|k| tree.grid().step(k)).fold(0.0, f64::max);
                if (ly + lz) * max_dt >= 1.0 {
                    return Err(Error::InvalidOperator(format!(
                        "Lipschitz constant times max step must be < 1, got {}",
                        (ly + lz) * max_dt
                    )));
                }
                for m in 0..tree.len() {
                    if let Some(margin) = g_margin(tree, m, ly, lz) {
                        if margin < 0.0 {
                            return Err(Error::SchemeConstraint { node: tree.id(m).to_string(), margin });
                        }
                    }
                }
                Ok(())
            }
            Kernel::Robust(Ambiguity::PerNode(map)) => {
                for (id, alts) in map {
                    let m = tree.index_of(id)?;
                    if alts.iter().any(|a| a.weights.len() != tree.children(m).len()) {
                        return Err(Error::InvalidOperator(format!("ambiguity arity mismatch at node `{id}`")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// One backward step at a non-terminal node.
    pub fn step(&self, tree: &ScenarioTree, m: NodeIdx, ys: &[f64]) -> f64 {
        let ps = tree.probs(m);
        match &self.kernel {
            Kernel::Linear => dot(ps, ys),
            Kernel::Entropic { gamma } => {
                let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                let s: f64 = ps.iter().zip(ys).map(|(p, y)| p * (-gamma * (y - lo)).exp()).sum();
                lo - s.ln() / gamma
            }
            Kernel::DiscreteG(driver) => {
                let k = tree.stage(m);
                let mean = dot(ps, ys);
                let z: Vec<f64> = ys.iter().map(|y| y - mean).collect();
                mean + driver.eval(tree.grid().date(k), mean, &z) * tree.grid().step(k)
            }
            Kernel::Robust(amb) => {
                let dt = tree.grid().step(tree.stage(m));
                let mut best = dot(ps, ys);
                match amb {
                    Ambiguity::Fixed(alts) => {
                        for a in alts.iter().filter(|a| a.weights.len() == ys.len()) {
                            best = best.min(dot(&a.weights, ys) + a.penalty * dt);
                        }
                    }
                    Ambiguity::Tilted(alts) => {
                        for a in alts.iter().filter(|a| a.weights.len() == ys.len()) {
                            let norm: f64 = ps.iter().zip(&a.weights).map(|(p, w)| p * w).sum();
                            let e: f64 = ps.iter().zip(&a.weights).zip(ys).map(|((p, w), y)| p * w / norm * y).sum();
                            best = best.min(e + a.penalty * dt);
                        }
                    }
                    Ambiguity::PerNode(map) => {
                        if let Some(alts) = map.get(tree.id(m)) {
                            for a in alts {
                                best = best.min(dot(&a.weights, ys) + a.penalty * dt);
                            }
                        }
                    }
                }
                best
            }
        }
    }

    /// `rho_{s,tau}[eta]` where `eta` is read on the stop frontier of `tau`.
    /// Returns values on every node between the two frontiers (NaN
    /// elsewhere); the result at the `s` frontier is the evaluation.
    pub fn evaluate(&self, tree: &ScenarioTree, s: &StoppingTime, tau: &StoppingTime, eta: &[f64]) -> Result<Vec<f64>> {
        check_order(tree, s, tau)?;
        if eta.len() != tree.len() {
            return Err(Error::Precondition(format!(
                "terminal values have length {}, expected {}",
                eta.len(),
                tree.len()
            )));
        }
        self.check_tree(tree)?;
        let mut out = vec![f64::NAN; tree.len()];
        self.sweep(tree, s, tau, eta, &mut out)?;
        Ok(out)
    }

    /// Backward sweep without the order and scheme checks. The caller
    /// guarantees `s <= tau` and that [`Evaluation::check_tree`] passed.
    pub(crate) fn sweep(
        &self,
        tree: &ScenarioTree,
        s: &StoppingTime,
        tau: &StoppingTime,
        eta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        let mut ys: Vec<f64> = Vec::with_capacity(4);
        for m in (0..tree.len()).rev() {
            if !s.has_stopped(m) {
                out[m] = f64::NAN;
                continue;
            }
            if tau.stops_at(tree, m) {
                let v = eta[m];
                if v.is_nan() {
                    return Err(Error::MissingValue(tree.id(m).to_string()));
                }
                out[m] = v;
            } else if tau.has_stopped(m) {
                out[m] = f64::NAN;
            } else {
                ys.clear();
                ys.extend(tree.children(m).iter().map(|&c| out[c]));
                out[m] = self.step(tree, m, &ys);
            }
        }
        Ok(())
    }
}

impl TwoIndexOperator for Evaluation {
    fn label(&self) -> &str {
        &self.label
    }

    fn capabilities(&self) -> Capabilities {
        self.caps
    }

    fn apply(&self, tree: &ScenarioTree, s: &StoppingTime, tau: &StoppingTime, eta: &[f64]) -> Result<Vec<f64>> {
        self.evaluate(tree, s, tau, eta)
    }
}

pub(crate) fn check_order(tree: &ScenarioTree, s: &StoppingTime, tau: &StoppingTime) -> Result<()> {
    if s.len() != tree.len() || tau.len() != tree.len() {
        return Err(Error::TreeMismatch(s.len(), tau.len()));
    }
    if let Some(m) = (0..tree.len()).find(|&m| tau.has_stopped(m) && !s.has_stopped(m)) {
        return Err(Error::OrderViolated(tree.id(m).to_string()));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest per-child sensitivity lower bound of the explicit g-scheme at
/// node `m`; `None` for terminal nodes.
fn g_margin(tree: &ScenarioTree, m: NodeIdx, ly: f64, lz: f64) -> Option<f64> {
    let ps = tree.probs(m);
    if ps.is_empty() {
        return None;
    }
    let dt = tree.grid().step(tree.stage(m));
    let k = ps.len() as f64;
    ps.iter().map(|&p| p - dt * (ly * p + lz * ((1.0 - p) + (k - 1.0) * p))).reduce(f64::min)
}

/// Operator specification file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum OperatorSpec {
    Linear,
    Entropic {
        gamma: f64,
    },
    G {
        driver: String,
        #[serde(default)]
        param: f64,
    },
    Robust {
        ambiguity: Vec<Vec<f64>>,
        #[serde(default)]
        penalty: Vec<f64>,
        /// Interpret the vectors as tilts of the baseline instead of
        /// absolute probabilities.
        #[serde(default)]
        tilt: bool,
    },
    /// Planted defect used as a negative control by the axiom checker.
    Broken,
}

impl OperatorSpec {
    /// Parses either a JSON object or a shorthand such as `linear`,
    /// `entropic:1`, `g:discount:0.1`, `g:zabs:0.05`.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if t.starts_with('{') {
            return serde_json::from_str(t).map_err(|e| Error::Config(format!("operator spec: {e}")));
        }
        let parts: Vec<&str> = t.split(':').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad number `{s}` in `{t}`")));
        match parts.as_slice() {
            ["linear"] => Ok(OperatorSpec::Linear),
            ["broken"] => Ok(OperatorSpec::Broken),
            ["entropic"] => Ok(OperatorSpec::Entropic { gamma: 1.0 }),
            ["entropic", g] => Ok(OperatorSpec::Entropic { gamma: num(g)? }),
            ["g", d] => Ok(OperatorSpec::G { driver: d.to_string(), param: 0.0 }),
            ["g", d, p] => Ok(OperatorSpec::G { driver: d.to_string(), param: num(p)? }),
            ["robust"] => Ok(OperatorSpec::default_robust()),
            _ => Err(Error::Config(format!("unknown operator `{t}`"))),
        }
    }

    /// Two tilted alternatives with a small penalty on each.
    pub fn default_robust() -> Self {
        OperatorSpec::Robust { ambiguity: vec![vec![1.5, 0.5], vec![0.5, 1.5]], penalty: vec![0.05, 0.05], tilt: true }
    }

    pub fn build(&self) -> Result<Evaluation> {
        match self {
            OperatorSpec::Linear => Ok(Evaluation::linear()),
            OperatorSpec::Entropic { gamma } => Evaluation::entropic(*gamma),
            OperatorSpec::G { driver, param } => {
                let d = match driver.as_str() {
                    "zero" => GDriver::Zero,
                    "discount" => GDriver::Discount { rate: *param },
                    "zabs" => GDriver::AbsDeviation { kappa: *param },
                    other => return Err(Error::Config(format!("unknown g driver `{other}`"))),
                };
                Evaluation::discrete_g(d)
            }
            OperatorSpec::Robust { ambiguity, penalty, tilt } => {
                if !penalty.is_empty() && penalty.len() != ambiguity.len() {
                    return Err(Error::Config("penalty list must match ambiguity list".into()));
                }
                let alts: Vec<Alternative> = ambiguity
                    .iter()
                    .enumerate()
                    .map(|(i, w)| Alternative { weights: w.clone(), penalty: penalty.get(i).copied().unwrap_or(0.0) })
                    .collect();
                Evaluation::penalized_robust(if *tilt { Ambiguity::Tilted(alts) } else { Ambiguity::Fixed(alts) })
            }
            OperatorSpec::Broken => Err(Error::Config("the broken operator is only available to `axioms`".into())),
        }
    }
}
