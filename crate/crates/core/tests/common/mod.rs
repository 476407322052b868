#![allow(dead_code)]

use multistop::evaluation::{Evaluation, OperatorSpec};
use multistop::space::{BermudanGrid, BinomialSpec, NodeSpec, ScenarioTree, DEFAULT_NODE_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-stage binomial tree, root 1, up x2, down x0.5, p = 1/2.
pub fn binomial_tree() -> ScenarioTree {
    let spec = BinomialSpec { n: 2, p: 0.5, root: 1.0, up: 2.0, down: 0.5, dt: None };
    ScenarioTree::binomial(&spec, DEFAULT_NODE_BUDGET).unwrap()
}

pub fn chain(values: &[f64]) -> ScenarioTree {
    let rows: Vec<NodeSpec> = values
        .iter()
        .enumerate()
        .map(|(k, &v)| NodeSpec {
            id: format!("c{k}"),
            stage: k,
            parent: (k > 0).then(|| format!("c{}", k - 1)),
            p: (k > 0).then_some(1.0),
            value: v,
        })
        .collect();
    ScenarioTree::from_rows(BermudanGrid::equidistant(values.len() - 1, 1.0).unwrap(), &rows).unwrap()
}

pub fn peak_chain() -> ScenarioTree {
    chain(&[1.0, 2.0, 1.5])
}

/// Binary tree with `1..=max_stages` stages, quarter-year dates, up
/// probabilities in `[0.2, 0.8]` and node values uniform on `[-1, 2]`.
pub fn random_tree(seed: u64, max_stages: usize) -> ScenarioTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_stages);
    let mut rows = vec![NodeSpec { id: "r".into(), stage: 0, parent: None, p: None, value: rng.gen_range(-1.0..2.0) }];
    let mut level = vec!["r".to_string()];
    for k in 1..=n {
        let mut next = Vec::new();
        for parent in &level {
            let p: f64 = rng.gen_range(0.2..0.8);
            for (suffix, prob) in [("u", p), ("d", 1.0 - p)] {
                let id = format!("{parent}{suffix}");
                rows.push(NodeSpec {
                    id: id.clone(),
                    stage: k,
                    parent: Some(parent.clone()),
                    p: Some(prob),
                    value: rng.gen_range(-1.0..2.0),
                });
                next.push(id);
            }
        }
        level = next;
    }
    ScenarioTree::from_rows(BermudanGrid::equidistant(n, 0.25).unwrap(), &rows).unwrap()
}

/// Shifts node values to be non-negative.
pub fn nonneg_tree(seed: u64, max_stages: usize) -> ScenarioTree {
    let t = random_tree(seed, max_stages);
    let rows: Vec<NodeSpec> = t
        .nodes()
        .iter()
        .map(|n| NodeSpec {
            id: n.id.clone(),
            stage: n.stage,
            parent: n.parent.map(|p| t.id(p).to_string()),
            p: n.parent.map(|p| {
                let i = t.children(p).iter().position(|&c| t.id(c) == n.id).unwrap();
                t.probs(p)[i]
            }),
            value: n.value + 1.0,
        })
        .collect();
    ScenarioTree::from_rows(t.grid().clone(), &rows).unwrap()
}

pub fn op(spec: &str) -> Evaluation {
    OperatorSpec::parse(spec).unwrap().build().unwrap()
}

/// Linear, entropic at two risk aversions, discounted g-scheme and the
/// default penalized robust evaluation.
pub fn builtin_ops() -> Vec<Evaluation> {
    ["linear", "entropic:0.5", "entropic:1", "g:discount:0.1", "robust"].iter().map(|s| op(s)).collect()
}

/// Robust evaluation without penalties: positively homogeneous.
pub fn coherent_robust() -> Evaluation {
    OperatorSpec::parse(r#"{"op":"robust","ambiguity":[[1.5,0.5],[0.5,1.5]],"penalty":[],"tilt":true}"#)
        .unwrap()
        .build()
        .unwrap()
}
