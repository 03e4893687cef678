//! Property tests for the knowledge-base inference engine.

use proptest::prelude::*;
use semloft::mln::{
    ground, infer_exact, kb_predicates, kb_same_length, Clause, Evidence, Formula, Term, Weight,
};

const NAMES: [&str; 3] = ["1", "2", "3"];

/// Builds consistent evidence: one type per unit, symmetric relations.
fn build_evidence(types: &[usize; 3], adj: &[bool; 3]) -> Evidence {
    let mut ev = Evidence::new(kb_predicates());
    for (i, &t) in types.iter().enumerate() {
        ev.assert(["Room", "Corr", "Hall"][t], &[NAMES[i]], true).unwrap();
    }
    let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let rel = if adj[k] { "Adj" } else { "Irr" };
        ev.assert(rel, &[NAMES[a], NAMES[b]], true).unwrap();
        ev.assert(rel, &[NAMES[b], NAMES[a]], true).unwrap();
    }
    ev
}

proptest! {
    #[test]
    fn marginals_ignore_constant_relabeling(
        types in [0usize..3, 0usize..3, 0usize..3],
        adj in [any::<bool>(), any::<bool>(), any::<bool>()],
        perm_choice in 0usize..6,
    ) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm: [usize; 3] = perms[perm_choice];

        let kb = kb_same_length();
        let base = infer_exact(
            &ground(&kb.formulas, &NAMES, &build_evidence(&types, &adj)).unwrap(),
            20,
        )
        .unwrap();

        // Relabel unit i as perm[i] and rebuild the evidence.
        let mut perm_types = [0usize; 3];
        for i in 0..3 {
            perm_types[perm[i]] = types[i];
        }
        let mut perm_adj = [false; 3];
        let pairs = [(0usize, 1usize), (0, 2), (1, 2)];
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let (pa, pb) = (perm[a].min(perm[b]), perm[a].max(perm[b]));
            let idx = pairs.iter().position(|&p| p == (pa, pb)).unwrap();
            perm_adj[idx] = adj[k];
        }
        let renamed = infer_exact(
            &ground(&kb.formulas, &NAMES, &build_evidence(&perm_types, &perm_adj)).unwrap(),
            20,
        )
        .unwrap();

        for a in 0..3 {
            for b in 0..3 {
                let p = base.marginal("SaLe", &[NAMES[a], NAMES[b]]).unwrap();
                let q = renamed.marginal("SaLe", &[NAMES[perm[a]], NAMES[perm[b]]]).unwrap();
                prop_assert!((p - q).abs() < 1e-12, "({a},{b}): {p} vs {q}");
            }
        }
    }

    #[test]
    fn zero_weight_formulas_change_nothing(
        types in [0usize..3, 0usize..3, 0usize..3],
        adj in [any::<bool>(), any::<bool>(), any::<bool>()],
    ) {
        let kb = kb_same_length();
        let ev = build_evidence(&types, &adj);
        let base = infer_exact(&ground(&kb.formulas, &NAMES, &ev).unwrap(), 20).unwrap();

        // A zero-weight formula that couples atoms across pair components.
        let mut extended = kb.formulas.clone();
        extended.push(Formula {
            weight: Weight::Soft(0.0),
            clause: Clause::and(
                Clause::atom("SaLe", &[Term::Var("p".into()), Term::Var("q".into())]),
                Clause::atom("SaLe", &[Term::Var("q".into()), Term::Var("r".into())]),
            ),
        });
        let more = infer_exact(&ground(&extended, &NAMES, &ev).unwrap(), 20).unwrap();

        for (atom, p) in &base.marginals {
            let q = more.marginals[atom];
            prop_assert!((p - q).abs() < 1e-12, "{atom}: {p} vs {q}");
        }
    }

    #[test]
    fn same_length_marginals_are_symmetric(
        types in [0usize..3, 0usize..3, 0usize..3],
        adj in [any::<bool>(), any::<bool>(), any::<bool>()],
    ) {
        let kb = kb_same_length();
        let ev = build_evidence(&types, &adj);
        let result = infer_exact(&ground(&kb.formulas, &NAMES, &ev).unwrap(), 20).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let p = result.marginal("SaLe", &[NAMES[a], NAMES[b]]).unwrap();
                let q = result.marginal("SaLe", &[NAMES[b], NAMES[a]]).unwrap();
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
