mod common;

use common::{clause, enumerate_z, abc_model, random_with_hard, worlds};
use pmrf::model::{parse_model_str, Assignment, ClauseStatus, ParseError, PropMrf, SoftClause};
use pmrf::sat::{is_satisfiable, unit_propagate};
use proptest::prelude::*;

#[test]
fn abc_model_parses_with_expected_sizes() {
    let m = abc_model();
    assert_eq!(m.num_vars, 9);
    assert!(m.hard.is_empty());
    let sizes: Vec<usize> = m.soft.iter().map(|s| s.clause.len()).collect();
    assert_eq!(sizes, vec![5, 5, 3, 3]);
}

#[test]
fn parse_errors_are_distinct() {
    let cases = [
        ("p pmrf 1\nh 2 0\n", "range"),
        ("p pmrf 2\nh 1 1 0\ns 0.5 1 -1 0\n", "taut"),
        ("p pmrf 2\nh 1 x 0\n", "malformed"),
        ("h 1 0\n", "header"),
    ];
    for (text, kind) in cases {
        let err = parse_model_str(text).unwrap_err();
        let ok = match kind {
            "range" => matches!(err, ParseError::OutOfRange { .. }),
            "taut" => matches!(err, ParseError::Tautology { .. }),
            "malformed" => matches!(err, ParseError::Malformed { .. }),
            _ => matches!(err, ParseError::MissingHeader { .. }),
        };
        assert!(ok, "{text:?} gave {err:?}");
    }
}

#[test]
fn conjoin_unit_matches_restricted_enumeration() {
    let m = abc_model();
    let with_a = m.conjoin_query(&[clause(&[1])]).unwrap();
    let direct: f64 = worlds(9)
        .filter(|x| x[0])
        .map(|x| {
            m.soft
                .iter()
                .filter(|s| s.clause.eval_total(&x))
                .map(|s| s.weight)
                .sum::<f64>()
                .exp()
        })
        .sum();
    assert!((enumerate_z(&with_a) - direct).abs() < 1e-9);
    assert_eq!(m.conjoin_query(&[]).unwrap(), m);
}

fn arb_model() -> impl Strategy<Value = PropMrf> {
    (2usize..=9, 1usize..=8, 1usize..=3, 0usize..=4, any::<u64>())
        .prop_map(|(n, m, s, h, seed)| random_with_hard(n, m, s.min(n), h, seed))
}

proptest! {
    #![proptest_config(common::cases(64))]

    #[test]
    fn write_then_parse_round_trips(m in arb_model()) {
        let back = parse_model_str(&m.to_text()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn total_assignments_decide_every_clause(m in arb_model(), mask in any::<u64>()) {
        let x: Vec<bool> = (0..m.num_vars).map(|j| mask >> j & 1 == 1).collect();
        let a = Assignment::from_total(&x);
        for c in m.clauses() {
            let st = c.status(&a);
            prop_assert_ne!(st, ClauseStatus::Undetermined);
            prop_assert_eq!(st == ClauseStatus::Satisfied, c.eval_total(&x));
        }
    }

    #[test]
    fn queries_never_increase_z(m in arb_model(), q in proptest::collection::vec(-9i64..=9, 1..4)) {
        let lits: Vec<i64> = q.into_iter().filter(|&l| l != 0 && l.unsigned_abs() as u32 <= m.num_vars).collect();
        prop_assume!(!lits.is_empty());
        let Ok(g) = pmrf::Clause::new(lits.iter().map(|&l| pmrf::Lit::from_dimacs(l).unwrap())) else {
            return Ok(());
        };
        let conj = m.conjoin_query(&[g]).unwrap();
        prop_assert!(enumerate_z(&conj) <= enumerate_z(&m) * (1.0 + 1e-12));
    }

    #[test]
    fn propagation_is_sound_and_idempotent(m in arb_model()) {
        let r = unit_propagate(&m.hard, &Assignment::new(m.num_vars));
        let solutions: Vec<Vec<bool>> = worlds(m.num_vars)
            .filter(|x| m.hard.iter().all(|c| c.eval_total(x)))
            .collect();
        if r.is_conflict() {
            prop_assert!(solutions.is_empty());
        } else {
            for (v, value) in r.assignment.assigned() {
                prop_assert!(solutions.iter().all(|x| x[v as usize - 1] == value));
            }
            let again = unit_propagate(&m.hard, &r.assignment);
            prop_assert_eq!(again.assignment, r.assignment);
        }
    }

    #[test]
    fn satisfiability_matches_enumeration(m in arb_model()) {
        let any = worlds(m.num_vars).any(|x| m.hard.iter().all(|c| c.eval_total(&x)));
        prop_assert_eq!(is_satisfiable(&m.hard), any);
    }
}

#[test]
fn satisfiability_on_dense_random_hard_sets() {
    for seed in 0..40 {
        let mut hard = PropMrf::new(12);
        for s in pmrf::bench::gen_random(12, 14 + (seed as usize % 30), 3, seed, Default::default())
            .unwrap()
            .soft
        {
            hard.hard.push(s.clause);
        }
        let any = worlds(12).any(|x| hard.hard.iter().all(|c| c.eval_total(&x)));
        assert_eq!(is_satisfiable(&hard.hard), any);
    }
}

#[test]
fn soft_weights_must_be_finite() {
    let r = std::panic::catch_unwind(|| SoftClause::new(clause(&[1]), f64::NAN));
    assert!(r.is_err());
}
