//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//! Run with `cargo test -p multistop --test acceptance`.

mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{binomial_tree, builtin_ops, chain, coherent_robust, nonneg_tree, op, peak_chain, random_tree};
use multistop::axioms::{self, replay, BrokenOperator};
use multistop::cli::{run, CommandKind, RunArgs, RunConfig};
use multistop::evaluation::Evaluation;
use multistop::multistop::{
    check_supermartingale, solve_cascade_additive, solve_cascade_multiplicative, solve_d, solve_double,
    verify_necessary, SolveOptions,
};
use multistop::oracle::{brute_force_value, check_directed_upwards, EnumerationBudget, PairSampling};
use multistop::payoff::PayoffFamily;
use multistop::report::to_json;
use multistop::snell::snell_envelope;
use multistop::space::{NodeIdx, ScenarioTree, StoppingTime};
use serde_json::json;

const GAP_TOL: f64 = 1e-10;
const IDENTITY_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    summary: String,
    report: String,
}

fn outcome(passed: bool, summary: String, report: serde_json::Value) -> Outcome {
    Outcome { passed, summary, report: to_json(&report) }
}

/// `Σ_i w_i η(τ_i) + 0.1 (last stage - first stage)^2` with weights
/// `1, 2, 3, ...`: asymmetric and path dependent.
fn weighted_payoff(tree: &ScenarioTree, d: usize) -> PayoffFamily {
    let values = tree.node_values();
    PayoffFamily::custom(
        d,
        false,
        Arc::new(move |t: &ScenarioTree, m: NodeIdx, s: &[usize]| {
            let base: f64 =
                s.iter().enumerate().map(|(i, &k)| (i + 1) as f64 * values.at(t.ancestor_at(m, k).unwrap())).sum();
            let lag = s[s.len() - 1] as f64 - s[0] as f64;
            base + 0.1 * lag * lag
        }),
    )
    .unwrap()
}

fn payoff_for(tree: &ScenarioTree, seed: u64, d: usize) -> PayoffFamily {
    if seed.is_multiple_of(2) {
        PayoffFamily::additive(tree.node_values(), d).unwrap()
    } else {
        weighted_payoff(tree, d)
    }
}

fn root_gap(ev: &Evaluation, tree: &ScenarioTree, psi: &PayoffFamily, solver: f64) -> (f64, f64) {
    let bf = brute_force_value(ev, tree, psi, &StoppingTime::immediate(tree), &EnumerationBudget::default()).unwrap();
    (bf.value[0], (bf.value[0] - solver).abs())
}

fn c1_reduction_d2() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let tree = random_tree(1000 + seed, 4);
        let psi = payoff_for(&tree, seed, 2);
        for ev in builtin_ops() {
            let sol =
                solve_double(&ev, &tree, &psi, &StoppingTime::immediate(&tree), &SolveOptions::default()).unwrap();
            let v = sol.value.at(tree.root());
            let (oracle, gap) = root_gap(&ev, &tree, &psi, v);
            worst = worst.max(gap);
            rows.push(
                json!({"seed": seed, "operator": ev.label(), "stages": tree.stages(), "solver": v, "oracle": oracle}),
            );
        }
    }
    let elapsed = start.elapsed();
    let passed = worst <= GAP_TOL && elapsed <= Duration::from_secs(60);
    let summary = format!("{} instances, max gap {worst:.1e}, {:.1} s (limit 60 s)", rows.len(), elapsed.as_secs_f64());
    outcome(passed, summary, json!({"criterion": 1, "max_gap": worst, "instances": rows}))
}

fn c2_reduction_d3() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let tree = random_tree(2000 + seed, 3);
        let psi = payoff_for(&tree, seed, 3);
        for ev in [op("linear"), op("entropic:1")] {
            let sol = solve_d(&ev, &tree, &psi, &StoppingTime::immediate(&tree), &SolveOptions::default()).unwrap();
            let v = sol.value.at(tree.root());
            let (oracle, gap) = root_gap(&ev, &tree, &psi, v);
            worst = worst.max(gap);
            rows.push(
                json!({"seed": seed, "operator": ev.label(), "stages": tree.stages(), "solver": v, "oracle": oracle}),
            );
        }
    }
    let elapsed = start.elapsed();
    let passed = worst <= GAP_TOL && elapsed <= Duration::from_secs(120);
    let summary =
        format!("{} instances, max gap {worst:.1e}, {:.1} s (limit 120 s)", rows.len(), elapsed.as_secs_f64());
    outcome(passed, summary, json!({"criterion": 2, "max_gap": worst, "instances": rows}))
}

fn c3_additive_identity() -> Outcome {
    let ev = op("linear");
    let mut trees = vec![binomial_tree()];
    trees.extend((0..20u64).map(|s| random_tree(3000 + s, 4)));
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, tree) in trees.iter().enumerate() {
        let single = snell_envelope(&ev, tree, &tree.node_values()).unwrap().u.at(tree.root());
        for d in [2usize, 3] {
            let psi = PayoffFamily::additive(tree.node_values(), d).unwrap();
            let v = solve_d(&ev, tree, &psi, &StoppingTime::immediate(tree), &SolveOptions::default())
                .unwrap()
                .value
                .at(tree.root());
            let gap = (v - d as f64 * single).abs();
            worst = worst.max(gap);
            rows.push(json!({"tree": i, "d": d, "value": v, "single": single}));
        }
    }
    let summary = format!("{} instances, max |V - d v| {worst:.1e} (tol 1e-12)", rows.len());
    outcome(worst <= IDENTITY_TOL, summary, json!({"criterion": 3, "max_gap": worst, "instances": rows}))
}

fn c4_cascades() -> Outcome {
    let entropic = op("entropic:1");
    let robust = coherent_robust();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let d = 2 + (seed as usize % 2);
        let tree = random_tree(4000 + seed, 4);
        let s = StoppingTime::immediate(&tree);
        let eta = tree.node_values();
        let cas = solve_cascade_additive(&entropic, &tree, &eta, d).unwrap().value.at(tree.root());
        let psi = PayoffFamily::additive(eta, d).unwrap();
        let gen = solve_d(&entropic, &tree, &psi, &s, &SolveOptions::default()).unwrap().value.at(tree.root());
        worst = worst.max((cas - gen).abs());
        rows.push(json!({"seed": seed, "kind": "additive", "d": d, "cascade": cas, "general": gen}));

        let tree = nonneg_tree(4500 + seed, 4);
        let eta = tree.node_values();
        let cas = solve_cascade_multiplicative(&robust, &tree, &eta, d).unwrap().value.at(tree.root());
        let psi = PayoffFamily::multiplicative(eta, d).unwrap();
        let gen = solve_d(&robust, &tree, &psi, &StoppingTime::immediate(&tree), &SolveOptions::default())
            .unwrap()
            .value
            .at(tree.root());
        worst = worst.max((cas - gen).abs());
        rows.push(json!({"seed": seed, "kind": "multiplicative", "d": d, "cascade": cas, "general": gen}));
    }
    let summary = format!("{} instances, max gap {worst:.1e}", rows.len());
    outcome(worst <= GAP_TOL, summary, json!({"criterion": 4, "max_gap": worst, "instances": rows}))
}

fn c5_optimal_tuples() -> Outcome {
    let mut worst_plug: f64 = 0.0;
    let mut certified = 0usize;
    let mut cert_failures = Vec::new();
    let mut check = |ev: &Evaluation, tree: &ScenarioTree, psi: &PayoffFamily, tag: String| {
        let s = StoppingTime::immediate(tree);
        let tuple = if psi.d() == 2 {
            let sol = solve_double(ev, tree, psi, &s, &SolveOptions::default()).unwrap();
            worst_plug = worst_plug.max(sol.plug_in_gap);
            vec![sol.pair.0, sol.pair.1]
        } else {
            let sol = solve_d(ev, tree, psi, &s, &SolveOptions::default()).unwrap();
            worst_plug = worst_plug.max(sol.plug_in_gap);
            sol.tuple
        };
        let cert = verify_necessary(ev, tree, psi, &tuple, &s, GAP_TOL).unwrap();
        certified += 1;
        if !cert.passed {
            cert_failures.push(tag);
        }
    };
    for seed in 0..50u64 {
        let tree = random_tree(1000 + seed, 4);
        let psi = payoff_for(&tree, seed, 2);
        for ev in builtin_ops() {
            check(&ev, &tree, &psi, format!("d2/{seed}/{}", ev.label()));
        }
    }
    for seed in 0..20u64 {
        let tree = random_tree(2000 + seed, 3);
        let psi = payoff_for(&tree, seed, 3);
        for ev in [op("linear"), op("entropic:1")] {
            check(&ev, &tree, &psi, format!("d3/{seed}/{}", ev.label()));
        }
    }

    // planted: both rights at once at the root of the binomial tree, and both at the
    // end of the peak chain, where stage 1 is strictly better
    let lin = op("linear");
    let b = binomial_tree();
    let d = peak_chain();
    let planted = [
        (&b, vec![StoppingTime::immediate(&b), StoppingTime::immediate(&b)]),
        (&d, vec![StoppingTime::terminal(&d), StoppingTime::terminal(&d)]),
    ];
    let mut planted_rows = Vec::new();
    let mut planted_rejected = true;
    for (tree, tuple) in planted {
        let psi = PayoffFamily::additive(tree.node_values(), 2).unwrap();
        let cert = verify_necessary(&lin, tree, &psi, &tuple, &StoppingTime::immediate(tree), GAP_TOL).unwrap();
        planted_rejected &= !cert.passed;
        planted_rows.push(json!({"passed": cert.passed, "meet_gap": cert.meet_optimal.max_gap}));
    }
    let passed = worst_plug <= GAP_TOL && cert_failures.is_empty() && planted_rejected;
    let summary = format!(
        "{certified} solver tuples, max plug-in gap {worst_plug:.1e}, {} certificate failures, planted tuples rejected: {planted_rejected}",
        cert_failures.len()
    );
    outcome(
        passed,
        summary,
        json!({"criterion": 5, "max_plug_in_gap": worst_plug, "certified": certified,
               "failures": cert_failures, "planted": planted_rows}),
    )
}

fn c6_supermartingale() -> Outcome {
    let trees =
        [binomial_tree(), chain(&[1.0, 2.0, 1.5, 0.5]), chain(&[0.2, -0.4, 1.1, 0.9]), chain(&[3.0, 1.0, 2.0, 2.5])];
    let budget = EnumerationBudget::default();
    let mut rows = Vec::new();
    let mut all = true;
    for (i, tree) in trees.iter().enumerate() {
        let psi = PayoffFamily::additive(tree.node_values(), 2).unwrap();
        for ev in builtin_ops() {
            let sol = solve_d(&ev, tree, &psi, &StoppingTime::immediate(tree), &SolveOptions::default()).unwrap();
            let r = check_supermartingale(&ev, tree, &sol.value, &budget, 0, 0).unwrap();
            all &= r.passed && r.exhaustive;
            rows.push(json!({"tree": i, "operator": ev.label(), "pairs": r.pairs_checked, "max_excess": r.max_excess}));
        }
    }
    let pairs: u64 = rows.iter().map(|r| r["pairs"].as_u64().unwrap()).sum();
    let summary = format!("{} families, {pairs} exhaustive pairs", rows.len());
    outcome(all, summary, json!({"criterion": 6, "instances": rows}))
}

fn c7_axioms() -> Outcome {
    let trees = [binomial_tree(), random_tree(7000, 3)];
    let mut rows = Vec::new();
    let mut all = true;
    for tree in &trees {
        let pair = axioms::default_pair_payoff(tree);
        let triple = PayoffFamily::additive(tree.node_values(), 3).unwrap();
        for ev in builtin_ops() {
            let r =
                axioms::check_all(&ev, tree, &pair, &triple, axioms::DEFAULT_SAMPLES, axioms::DEFAULT_SEED).unwrap();
            all &= r.passed;
            rows.push(json!({"tree": tree.len(), "operator": ev.label(), "passed": r.passed,
                             "failed": r.first_failure().map(|c| c.axiom)}));
        }
    }
    let tree = binomial_tree();
    let broken = BrokenOperator::new();
    let pair = axioms::default_pair_payoff(&tree);
    let triple = PayoffFamily::additive(tree.node_values(), 3).unwrap();
    let r = axioms::check_all(&broken, &tree, &pair, &triple, axioms::DEFAULT_SAMPLES, axioms::DEFAULT_SEED).unwrap();
    let failure = r.checks.iter().find(|c| !c.holds && c.declared.is_none());
    let replayed = failure.is_some_and(|c| {
        let cx = c.counterexample.as_ref().unwrap();
        replay(&broken, &tree, None, c.axiom, cx.seed, cx.sample)
            .unwrap()
            .is_some_and(|again| again.node == cx.node && again.lhs == cx.lhs)
    });
    let passed = all && !r.passed && replayed;
    let summary = format!(
        "{} operator/tree runs pass; broken operator fails `{}` with replayable counterexample: {replayed}",
        rows.len(),
        failure.map(|c| format!("{:?}", c.axiom)).unwrap_or_default()
    );
    outcome(passed, summary, json!({"criterion": 7, "builtins": rows, "broken": r}))
}

fn c8_directed_upwards() -> Outcome {
    let tree = binomial_tree();
    let psi = PayoffFamily::additive(tree.node_values(), 2).unwrap();
    let mut rows = Vec::new();
    let mut all = true;
    for ev in [op("linear"), op("entropic:1")] {
        let r = check_directed_upwards(
            &ev,
            &tree,
            &psi,
            &StoppingTime::immediate(&tree),
            PairSampling::Exhaustive,
            &EnumerationBudget::default(),
        )
        .unwrap();
        all &= r.passed;
        rows.push(json!({"operator": ev.label(), "pairs": r.pairs_checked, "failures": r.failures}));
    }
    let summary =
        format!("{} exhaustive pair-of-pair checks", rows.iter().map(|r| r["pairs"].as_u64().unwrap()).sum::<u64>());
    outcome(all, summary, json!({"criterion": 8, "runs": rows}))
}

fn c9_swing() -> Outcome {
    let out = run(&RunConfig { command: CommandKind::Swing, args: RunArgs::default() });
    let v: serde_json::Value = serde_json::from_str(&out.report).unwrap_or_default();
    let oracle_gap = v["oracle_gap"].as_f64().unwrap_or(f64::INFINITY);
    let identity_gap = v["identity_gap"].as_f64().map(f64::abs).unwrap_or(f64::INFINITY);
    let passed = out.code == 0 && oracle_gap <= GAP_TOL && identity_gap <= IDENTITY_TOL;
    let summary = format!(
        "V = {}, oracle gap {oracle_gap:.1e}, |V - d v| {identity_gap:.1e}",
        v["value"].as_f64().unwrap_or(f64::NAN)
    );
    Outcome { passed, summary, report: out.report }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    ("reduction equals brute force, d = 2", c1_reduction_d2),
    ("reduction equals brute force, d = 3", c2_reduction_d3),
    ("additive linear identity V = d v", c3_additive_identity),
    ("cascades agree with the general solver", c4_cascades),
    ("optimal tuples plug in and certify", c5_optimal_tuples),
    ("supermartingale property", c6_supermartingale),
    ("operator laws and negative control", c7_axioms),
    ("directed-upwards pasting", c8_directed_upwards),
    ("swing preset", c9_swing),
];

fn main() {
    let first: Vec<Outcome> = CRITERIA.iter().map(|(_, f)| f()).collect();
    let mut failed = 0;
    for (i, ((name, _), o)) in CRITERIA.iter().zip(&first).enumerate() {
        println!("criterion {:>2} [{}] {name}: {}", i + 1, if o.passed { "PASS" } else { "FAIL" }, o.summary);
        failed += usize::from(!o.passed);
    }
    let second: Vec<String> = CRITERIA.iter().map(|(_, f)| f().report).collect();
    let differing: Vec<usize> =
        first.iter().zip(&second).enumerate().filter(|(_, (a, b))| a.report != **b).map(|(i, _)| i + 1).collect();
    let bytes: usize = first.iter().map(|o| o.report.len()).sum();
    let det = differing.is_empty();
    println!(
        "criterion 10 [{}] determinism: second run of criteria 1-9 {} ({bytes} report bytes)",
        if det { "PASS" } else { "FAIL" },
        if det { "byte-identical".to_string() } else { format!("differs in {differing:?}") }
    );
    failed += usize::from(!det);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 10 acceptance criteria passed");
}
