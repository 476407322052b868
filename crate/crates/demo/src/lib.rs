//! wasm-bindgen front end for the browser page in `www/`. Every export takes
//! and returns plain strings so the same functions run natively in tests.

use multistop::axioms::{self, BrokenOperator};
use multistop::evaluation::{OperatorSpec, TwoIndexOperator};
use multistop::multistop::{solve_d, SolveOptions};
use multistop::oracle::{brute_force_value, EnumerationBudget};
use multistop::payoff::{PayoffFamily, PayoffSpec};
use multistop::report::{to_json, NodeMap};
use multistop::space::{build_tree, ScenarioTree, StoppingTime, TreeSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Two-stage binomial tree shown on page load.
pub const DEFAULT_TREE: &str = r#"{"binomial":{"n":2,"p":0.5,"root":1,"up":2,"down":0.5}}"#;

/// Oracle runs are skipped above this many tuples to keep the page responsive.
const DEMO_TUPLE_LIMIT: u128 = 200_000;

type Res<T> = std::result::Result<T, String>;

fn tree(text: &str) -> Res<ScenarioTree> {
    let spec: TreeSpec = serde_json::from_str(text).map_err(|e| format!("tree: {e}"))?;
    build_tree(&spec).map_err(|e| e.to_string())
}

fn payoff(tree: &ScenarioTree, text: &str, d: usize) -> Res<PayoffFamily> {
    PayoffSpec::parse(text).and_then(|p| p.build(tree, d)).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SolveView {
    value: f64,
    oracle: Option<f64>,
    families: Vec<(&'static str, NodeMap<f64>)>,
    tuple: Vec<Vec<String>>,
}

/// Value, families and an optimal tuple; the oracle value is attached when
/// the tuple count is small.
#[wasm_bindgen]
pub fn solve(tree_json: &str, op: &str, payoff_text: &str, d: usize) -> Res<String> {
    let tree = tree(tree_json)?;
    let ev = OperatorSpec::parse(op).and_then(|s| s.build()).map_err(|e| e.to_string())?;
    let psi = payoff(&tree, payoff_text, d)?;
    let s = StoppingTime::immediate(&tree);
    let sol = solve_d(&ev, &tree, &psi, &s, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let budget = EnumerationBudget { max_tuples: DEMO_TUPLE_LIMIT, ..EnumerationBudget::default() };
    let oracle = brute_force_value(&ev, &tree, &psi, &s, &budget).ok().map(|b| b.value[0]);
    let view = SolveView {
        value: sol.value.at(tree.root()),
        oracle,
        families: vec![
            ("value", NodeMap::family(&tree, sol.value.values())),
            ("phi", NodeMap::family(&tree, sol.phi.values())),
            ("single", NodeMap::family(&tree, sol.u.values())),
        ],
        tuple: sol.tuple.iter().map(|t| t.describe(&tree)).collect(),
    };
    Ok(to_json(&view))
}

#[derive(Serialize)]
struct Point {
    x: f64,
    value: f64,
}

/// Root value against the number of rights `1..=max_d`.
#[wasm_bindgen]
pub fn value_by_rights(tree_json: &str, op: &str, payoff_text: &str, max_d: usize) -> Res<String> {
    let tree = tree(tree_json)?;
    let ev = OperatorSpec::parse(op).and_then(|s| s.build()).map_err(|e| e.to_string())?;
    let s = StoppingTime::immediate(&tree);
    let mut points = Vec::new();
    for d in 1..=max_d {
        let psi = payoff(&tree, payoff_text, d)?;
        let sol = solve_d(&ev, &tree, &psi, &s, &SolveOptions::default()).map_err(|e| e.to_string())?;
        points.push(Point { x: d as f64, value: sol.value.at(tree.root()) });
    }
    Ok(to_json(&points))
}

/// Root value under the entropic evaluation for `steps + 1` risk aversions
/// evenly spaced on `[0, gamma_max]`; zero means the linear evaluation.
#[wasm_bindgen]
pub fn value_by_gamma(tree_json: &str, payoff_text: &str, d: usize, gamma_max: f64, steps: usize) -> Res<String> {
    if !(gamma_max > 0.0 && gamma_max.is_finite()) || steps == 0 {
        return Err("need gamma_max > 0 and at least one step".into());
    }
    let tree = tree(tree_json)?;
    let psi = payoff(&tree, payoff_text, d)?;
    let s = StoppingTime::immediate(&tree);
    let mut points = Vec::new();
    for i in 0..=steps {
        let gamma = gamma_max * i as f64 / steps as f64;
        let spec = if i == 0 { "linear".to_string() } else { format!("entropic:{gamma}") };
        let ev = OperatorSpec::parse(&spec).and_then(|s| s.build()).map_err(|e| e.to_string())?;
        let sol = solve_d(&ev, &tree, &psi, &s, &SolveOptions::default()).map_err(|e| e.to_string())?;
        points.push(Point { x: gamma, value: sol.value.at(tree.root()) });
    }
    Ok(to_json(&points))
}

/// Randomized law checks; `op = "broken"` runs the planted negative control.
#[wasm_bindgen]
pub fn check_axioms(tree_json: &str, op: &str, samples: usize, seed: u64) -> Res<String> {
    let tree = tree(tree_json)?;
    let pair = axioms::default_pair_payoff(&tree);
    let triple = PayoffFamily::additive(tree.node_values(), 3).map_err(|e| e.to_string())?;
    let broken;
    let built;
    let operator: &dyn TwoIndexOperator = if op.trim() == "broken" {
        broken = BrokenOperator::new();
        &broken
    } else {
        built = OperatorSpec::parse(op).and_then(|s| s.build()).map_err(|e| e.to_string())?;
        &built
    };
    let report = axioms::check_all(operator, &tree, &pair, &triple, samples, seed).map_err(|e| e.to_string())?;
    Ok(to_json(&report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: Res<String>) -> Value {
        serde_json::from_str(&s.unwrap()).unwrap()
    }

    #[test]
    fn solve_matches_oracle_on_default_tree() {
        let v = parse(solve(DEFAULT_TREE, "linear", "additive", 2));
        assert_eq!(v["value"].as_f64(), Some(3.125));
        assert_eq!(v["oracle"].as_f64(), Some(3.125));
        assert_eq!(v["tuple"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn rights_sweep_is_linear_in_d() {
        let v = parse(value_by_rights(DEFAULT_TREE, "linear", "additive", 3));
        let vals: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect();
        assert_eq!(vals, vec![1.5625, 3.125, 4.6875]);
    }

    #[test]
    fn gamma_sweep_decreases() {
        let v = parse(value_by_gamma(DEFAULT_TREE, "additive", 2, 2.0, 4));
        let vals: Vec<f64> = v.as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).collect();
        assert_eq!(vals.len(), 5);
        assert_eq!(vals[0], 3.125);
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn axioms_flag_the_broken_operator() {
        assert_eq!(parse(check_axioms(DEFAULT_TREE, "linear", 50, 1))["passed"], Value::Bool(true));
        assert_eq!(parse(check_axioms(DEFAULT_TREE, "broken", 50, 1))["passed"], Value::Bool(false));
    }

    #[test]
    fn bad_input_is_an_error_string() {
        assert!(solve("{", "linear", "additive", 2).is_err());
        assert!(solve(DEFAULT_TREE, "nope", "additive", 2).is_err());
        assert!(value_by_gamma(DEFAULT_TREE, "additive", 2, -1.0, 3).is_err());
    }
}
