//! Randomized invariants of the lattice of stopping times, pasting, the
//! evaluation operators and the solver.

mod common;

use common::{builtin_ops, random_tree};
use multistop::multistop::{solve_d, tuple_value, SolveOptions};
use multistop::payoff::PayoffFamily;
use multistop::snell::snell_envelope;
use multistop::space::{paste, Event, ScenarioTree, StoppingTime};
use proptest::prelude::*;

/// Enough marks for a binary tree with four stages.
const MARKS: usize = 31;

fn time(tree: &ScenarioTree, marks: &[bool]) -> StoppingTime {
    StoppingTime::from_marks(tree, &marks[..tree.len()])
}

fn marks() -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.35), MARKS)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lattice_laws(seed in 0u64..1000, a in marks(), b in marks(), c in marks()) {
        let tree = random_tree(seed, 4);
        let (x, y, z) = (time(&tree, &a), time(&tree, &b), time(&tree, &c));
        let meet = x.meet(&tree, &y).unwrap();
        let join = x.join(&tree, &y).unwrap();
        prop_assert_eq!(&meet, &y.meet(&tree, &x).unwrap());
        prop_assert_eq!(&join, &y.join(&tree, &x).unwrap());
        prop_assert_eq!(&x.meet(&tree, &x).unwrap(), &x);
        prop_assert_eq!(&x.meet(&tree, &join).unwrap(), &x);
        prop_assert_eq!(&x.join(&tree, &meet).unwrap(), &x);
        prop_assert_eq!(
            meet.meet(&tree, &z).unwrap(),
            x.meet(&tree, &y.meet(&tree, &z).unwrap()).unwrap()
        );
        prop_assert!(meet.le(&x) && meet.le(&y) && x.le(&join) && y.le(&join));
        let (lx, ly) = (x.leaf_stages(&tree), y.leaf_stages(&tree));
        let lm = meet.leaf_stages(&tree);
        let lj = join.leaf_stages(&tree);
        for l in 0..lx.len() {
            prop_assert_eq!(lm[l], lx[l].min(ly[l]));
            prop_assert_eq!(lj[l], lx[l].max(ly[l]));
        }
    }

    #[test]
    fn paste_follows_the_event(seed in 0u64..1000, a in marks(), b in marks(), pick in prop::collection::vec(any::<bool>(), MARKS)) {
        let tree = random_tree(seed, 4);
        let (x, y) = (time(&tree, &a), time(&tree, &b));
        let meet = x.meet(&tree, &y).unwrap();
        let frontier = meet.frontier(&tree);
        let event = Event::from_nodes(frontier.iter().zip(&pick).filter(|(_, &p)| p).map(|(&m, _)| m));
        let pasted = paste(&tree, &x, &y, &event).unwrap();
        let mask = event.scenario_mask(&tree);
        let (lx, ly, lp) = (x.leaf_stages(&tree), y.leaf_stages(&tree), pasted.leaf_stages(&tree));
        for l in 0..mask.len() {
            prop_assert_eq!(lp[l], if mask[l] { lx[l] } else { ly[l] });
        }
        prop_assert!(meet.le(&pasted));
        prop_assert_eq!(paste(&tree, &x, &y, &Event::whole(&tree)).unwrap(), x.clone());
        prop_assert_eq!(paste(&tree, &x, &y, &Event::empty()).unwrap(), y);
    }

    #[test]
    fn evaluation_laws(seed in 0u64..1000, a in marks(), b in marks(), shift in 0.0f64..1.0) {
        let tree = random_tree(seed, 4);
        let s = StoppingTime::immediate(&tree);
        let tau = time(&tree, &a);
        let sigma = tau.meet(&tree, &time(&tree, &b)).unwrap();
        let eta = tree.node_values().into_values();
        let raised: Vec<f64> = eta.iter().map(|v| v + shift).collect();
        let root = tree.root();
        for ev in builtin_ops() {
            let direct = ev.evaluate(&tree, &s, &tau, &eta).unwrap();
            // knowledge preservation on the frontier
            let same = ev.evaluate(&tree, &tau, &tau, &eta).unwrap();
            for m in tau.frontier(&tree) {
                prop_assert_eq!(same[m], eta[m]);
            }
            // recursive consistency through an intermediate time
            let inner = ev.evaluate(&tree, &sigma, &tau, &eta).unwrap();
            let outer = ev.evaluate(&tree, &s, &sigma, &inner).unwrap();
            prop_assert!(close(outer[root], direct[root]), "{}: {} vs {}", ev.label(), outer[root], direct[root]);
            // monotone in the reward
            let up = ev.evaluate(&tree, &s, &tau, &raised).unwrap();
            prop_assert!(up[root] >= direct[root] - 1e-12, "{}", ev.label());
            if ev.capabilities().translation_invariant {
                prop_assert!(close(up[root], direct[root] + shift), "{}", ev.label());
            }
        }
    }

    #[test]
    fn snell_envelope_dominates(seed in 0u64..1000, a in marks()) {
        let tree = random_tree(seed, 4);
        let eta = tree.node_values();
        let tau = time(&tree, &a);
        for ev in builtin_ops() {
            let sol = snell_envelope(&ev, &tree, &eta).unwrap();
            for m in 0..tree.len() {
                prop_assert!(sol.u.at(m) >= eta.at(m) - 1e-12);
            }
            let v = ev.evaluate(&tree, &StoppingTime::immediate(&tree), &tau, eta.values()).unwrap();
            prop_assert!(sol.u.at(tree.root()) >= v[tree.root()] - 1e-12, "{}", ev.label());
        }
    }

    #[test]
    fn solver_dominates_random_tuples(seed in 0u64..1000, a in marks(), b in marks()) {
        let tree = random_tree(seed, 4);
        let s = StoppingTime::immediate(&tree);
        let psi = PayoffFamily::additive(tree.node_values(), 2).unwrap();
        let tuple = [time(&tree, &a), time(&tree, &b)];
        for ev in builtin_ops() {
            let v = solve_d(&ev, &tree, &psi, &s, &SolveOptions::default()).unwrap().value.at(tree.root());
            let candidate = tuple_value(&ev, &tree, &psi, &s, &tuple).unwrap();
            prop_assert!(v >= candidate[tree.root()] - 1e-12, "{}", ev.label());
        }
    }
}
