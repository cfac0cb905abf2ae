mod common;

use common::{clause, enumerate_z, abc_model, abc_model_weighted, random_with_hard, rel_close};
use pmrf::bench::{gen_random, WeightLaw};
use pmrf::fdc::{branch_candidate, choose_branch_clause, condition_on_clause, exact_marginals, fdc_count};
use pmrf::graph::{connected_components, minfill_width, primal_adjacency};
use pmrf::model::{PropMrf, SoftClause, Var};
use pmrf::simplify::{simplify, SimplifyStatus};
use pmrf::ve::{bucket_elimination, clauses_to_factors, ve_log_z};
use pmrf::{log_probability, BranchMode, FdcConfig};
use proptest::prelude::*;

fn arb_model() -> impl Strategy<Value = PropMrf> {
    (2usize..=10, 1usize..=10, 1usize..=4, 0usize..=4, any::<u64>())
        .prop_map(|(n, m, s, h, seed)| random_with_hard(n, m, s.min(n), h, seed))
}

#[test]
fn abc_model_branch_choices() {
    let m = abc_model();
    assert_eq!(choose_branch_clause(&m, BranchMode::Formula).unwrap(), clause(&[1, 2, 3]));
    let cand = branch_candidate(&m, BranchMode::Formula).unwrap();
    assert_eq!(cand.occurrence_count, 2);
    assert_eq!(choose_branch_clause(&m, BranchMode::Variable).unwrap(), clause(&[1]));
}

#[test]
fn abc_model_true_branch_satisfies_shared_clauses() {
    let m = abc_model_weighted([0.3, 0.4, 0.5, 0.6]);
    let (t, f) = condition_on_clause(&m, &clause(&[1, 2, 3])).unwrap();
    let out = simplify(&t);
    assert_eq!(out.status, SimplifyStatus::Open);
    assert_eq!(out.model.soft.len(), 2);
    assert!(out.log_weight >= 0.7 - 1e-12);
    let neg = simplify(&f);
    for v in [1, 2, 3] {
        assert_eq!(neg.forced.get(v), Some(false));
    }
}

#[test]
fn abc_model_with_a_forced_leaves_two_soft_clauses_open() {
    let w = [0.3, -0.2, 0.9, 0.1];
    let mut m = abc_model_weighted(w);
    m.add_hard(clause(&[1]));
    let out = simplify(&m);
    assert_eq!(out.status, SimplifyStatus::Open);
    assert_eq!(out.model.soft.len(), 2);
    // S1, S2 satisfied; B and C are free
    assert!((out.log_weight - (w[0] + w[1] + 2.0 * std::f64::consts::LN_2)).abs() < 1e-12);
    assert!(rel_close(out.log_weight.exp() * enumerate_z(&out.model), enumerate_z(&m), 1e-12));
}

#[test]
fn abc_model_decomposes_after_abc_false() {
    let mut m = abc_model();
    for v in [1, 2, 3] {
        m.add_hard(clause(&[-v]));
    }
    let out = simplify(&m);
    let comps = connected_components(&out.model);
    let original: Vec<Vec<Var>> = comps
        .iter()
        .map(|c| c.variables.iter().map(|&v| out.var_map[v as usize - 1]).collect())
        .collect();
    assert_eq!(original, vec![vec![4, 5, 8], vec![6, 7, 9]]);
}

#[test]
fn abc_model_unit_weights_match_enumeration() {
    let m = abc_model_weighted([1.0; 4]);
    let truth = enumerate_z(&m).ln();
    for mode in [BranchMode::Formula, BranchMode::Variable] {
        assert!((fdc_count(&m, FdcConfig { mode, ..FdcConfig::default() }).log_z - truth).abs() < 1e-12);
    }
    assert!((ve_log_z(&m, 20).unwrap() - truth).abs() < 1e-12);
}

#[test]
fn abc_model_s3_factor_has_one_zero_entry() {
    let m = abc_model_weighted([0.1, 0.2, 0.7, 0.4]);
    let f = &clauses_to_factors(&m, 20).unwrap()[2];
    assert_eq!(f.scope, vec![4, 5, 8]);
    assert_eq!(f.values.len(), 8);
    assert_eq!(f.values.iter().filter(|&&v| v == 0.0).count(), 1);
    assert_eq!(f.values[0], 0.0);
}

#[test]
fn disjoint_units_decompose_into_product() {
    let m = PropMrf::with_clauses(
        2,
        vec![],
        vec![SoftClause::new(clause(&[1]), 0.7), SoftClause::new(clause(&[2]), -0.4)],
    )
    .unwrap();
    let comps = connected_components(&m);
    assert_eq!(comps.len(), 2);
    let product: f64 = comps.iter().map(|c| enumerate_z(&c.model)).product();
    assert!(rel_close(product, enumerate_z(&m), 1e-12));
}

/// Second implementation of greedy min-fill: recomputes fill from scratch on
/// an edge set at every step.
fn minfill_oracle(m: &PropMrf) -> usize {
    use std::collections::BTreeSet;
    let n = m.num_vars as usize;
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for c in m.clauses() {
        let vs: Vec<usize> = c.vars().map(|v| v as usize).collect();
        for &a in &vs {
            for &b in &vs {
                if a < b {
                    edges.insert((a, b));
                }
            }
        }
    }
    let has = |e: &BTreeSet<(usize, usize)>, a: usize, b: usize| e.contains(&(a.min(b), a.max(b)));
    let mut alive: Vec<usize> = (1..=n).collect();
    let mut width = 0;
    while !alive.is_empty() {
        let nbrs = |e: &BTreeSet<(usize, usize)>, v: usize, alive: &[usize]| -> Vec<usize> {
            alive.iter().copied().filter(|&u| u != v && has(e, u, v)).collect()
        };
        let fill = |e: &BTreeSet<(usize, usize)>, v: usize, alive: &[usize]| -> usize {
            let nb = nbrs(e, v, alive);
            let mut f = 0;
            for i in 0..nb.len() {
                for j in i + 1..nb.len() {
                    if !has(e, nb[i], nb[j]) {
                        f += 1;
                    }
                }
            }
            f
        };
        let &v = alive.iter().min_by_key(|&&v| (fill(&edges, v, &alive), v)).unwrap();
        let nb = nbrs(&edges, v, &alive);
        width = width.max(nb.len());
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                edges.insert((nb[i].min(nb[j]), nb[i].max(nb[j])));
            }
        }
        alive.retain(|&u| u != v);
    }
    width
}

/// Exact treewidth by trying every elimination order.
fn exact_treewidth(adj: &[Vec<bool>]) -> usize {
    let n = adj.len() - 1;
    let mut order: Vec<usize> = (1..=n).collect();
    let mut best = usize::MAX;
    permute(&mut order, 0, adj, &mut best);
    best
}

fn permute(order: &mut Vec<usize>, k: usize, adj: &[Vec<bool>], best: &mut usize) {
    if k == order.len() {
        let mut a = adj.to_vec();
        let mut w = 0;
        let mut gone = vec![false; a.len()];
        for &v in order.iter() {
            let nb: Vec<usize> = (1..a.len()).filter(|&u| !gone[u] && u != v && a[v][u]).collect();
            w = w.max(nb.len());
            for &x in &nb {
                for &y in &nb {
                    if x != y {
                        a[x][y] = true;
                    }
                }
            }
            gone[v] = true;
        }
        *best = (*best).min(w);
        return;
    }
    for i in k..order.len() {
        order.swap(k, i);
        permute(order, k + 1, adj, best);
        order.swap(k, i);
    }
}

#[test]
fn minfill_matches_independent_simulation() {
    for seed in 0..30 {
        let m = gen_random(12, 14, 3, seed, WeightLaw::default()).unwrap();
        assert_eq!(minfill_width(&m).width, minfill_oracle(&m), "seed {seed}");
    }
}

#[test]
fn minfill_bounds_exact_treewidth() {
    for seed in 0..25 {
        let m = gen_random(7, 5, 3, 100 + seed, WeightLaw::default()).unwrap();
        let adj = primal_adjacency(&m);
        assert!(exact_treewidth(&adj) <= minfill_width(&m).width);
    }
}

#[test]
fn ve_is_order_invariant() {
    for seed in 0..20 {
        let m = random_with_hard(8, 8, 3, 2, 200 + seed);
        let factors = clauses_to_factors(&m, 20).unwrap();
        let forward: Vec<Var> = (1..=8).collect();
        let backward: Vec<Var> = (1..=8).rev().collect();
        let a = bucket_elimination(factors.clone(), &forward, 20).unwrap();
        let b = bucket_elimination(factors, &backward, 20).unwrap();
        if a.is_finite() {
            assert!((a - b).abs() < 1e-9);
        } else {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn conditioning_identity_on_random_subclauses() {
    for seed in 0..30 {
        let m = gen_random(10, 12, 3, 300 + seed, WeightLaw::default()).unwrap();
        let r = &m.soft[seed as usize % 12].clause;
        let sub = pmrf::Clause::new(r.lits().iter().copied().take(2)).unwrap();
        let (t, f) = condition_on_clause(&m, &sub).unwrap();
        assert!(rel_close(enumerate_z(&t) + enumerate_z(&f), enumerate_z(&m), 1e-12));
    }
}

#[test]
fn marginals_and_queries_match_enumeration() {
    for seed in 0..10 {
        let m = random_with_hard(9, 9, 3, 2, 400 + seed);
        let truth = common::enumerate_marginals(&m);
        if truth.iter().any(|p| p.is_nan()) {
            assert!(exact_marginals(&m, FdcConfig::default()).is_none());
            continue;
        }
        let got = exact_marginals(&m, FdcConfig::default()).unwrap();
        for (a, b) in got.iter().zip(&truth) {
            assert!((a - b).abs() < 1e-9);
        }
        let p = log_probability(&m, &[clause(&[1])], FdcConfig::default()).unwrap().exp();
        let q = log_probability(&m, &[clause(&[-1])], FdcConfig::default()).unwrap().exp();
        assert!((p + q - 1.0).abs() < 1e-9);
        assert!((p - truth[0]).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(common::cases(48))]

    #[test]
    fn engines_agree_with_enumeration(m in arb_model()) {
        let truth = enumerate_z(&m);
        for mode in [BranchMode::Formula, BranchMode::Variable] {
            let on = fdc_count(&m, FdcConfig { mode, cache: true, ve_width_threshold: 0 }).log_z;
            let off = fdc_count(&m, FdcConfig { mode, cache: false, ve_width_threshold: 0 }).log_z;
            prop_assert_eq!(on, off);
            if truth == 0.0 {
                prop_assert_eq!(on, f64::NEG_INFINITY);
            } else {
                prop_assert!((on - truth.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn simplify_preserves_z_and_is_idempotent(m in arb_model()) {
        let out = simplify(&m);
        let truth = enumerate_z(&m);
        match out.status {
            SimplifyStatus::Zero => prop_assert_eq!(truth, 0.0),
            SimplifyStatus::Scalar => prop_assert!(rel_close(out.log_weight.exp(), truth, 1e-12)),
            SimplifyStatus::Open => {
                prop_assert!(rel_close(out.log_weight.exp() * enumerate_z(&out.model), truth, 1e-12));
                let again = simplify(&out.model);
                prop_assert_eq!(again.log_weight, 0.0);
                prop_assert_eq!(again.model, out.model.clone());
                for c in out.model.clauses() {
                    for v in c.vars() {
                        prop_assert!(out.forced.get(out.var_map[v as usize - 1]).is_none());
                    }
                }
            }
        }
    }

    #[test]
    fn components_multiply(m in arb_model()) {
        let comps = connected_components(&m);
        let occurring: usize = comps.iter().map(|c| c.variables.len()).sum();
        let product: f64 = comps.iter().map(|c| enumerate_z(&c.model)).product::<f64>()
            * 2f64.powi((m.num_vars as usize - occurring) as i32);
        prop_assert!(rel_close(product, enumerate_z(&m), 1e-12));
    }
}
