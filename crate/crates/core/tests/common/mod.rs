#![allow(dead_code)]

use pmrf::bench::{gen_random, WeightLaw};
use pmrf::model::{parse_model_str, Clause, PropMrf};

/// Variables A..J (no I) map to 1..9.
pub const ABC_MODEL: &str = "\
c A B C D E F G H J -> 1..9
p pmrf 9
s 1 1 2 3 4 5 0
s 1 1 2 3 6 7 0
s 1 4 5 8 0
s 1 6 7 9 0
";

pub fn abc_model() -> PropMrf {
    parse_model_str(ABC_MODEL).unwrap()
}

pub fn abc_model_weighted(w: [f64; 4]) -> PropMrf {
    let mut m = abc_model();
    for (s, w) in m.soft.iter_mut().zip(w) {
        s.weight = w;
    }
    m
}

pub fn clause(v: &[i64]) -> Clause {
    Clause::from_dimacs(v)
}

/// Random instance with a few random hard clauses mixed in.
pub fn random_with_hard(n: usize, m: usize, s: usize, hard: usize, seed: u64) -> PropMrf {
    use rand::{Rng, SeedableRng};
    let mut model = gen_random(n, m, s, seed, WeightLaw::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for _ in 0..hard {
        let size = rng.gen_range(1..=s.min(3));
        let extra = gen_random(n, 1, size, rng.gen(), WeightLaw::default()).unwrap();
        model.hard.push(extra.soft[0].clause.clone());
    }
    model
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return a == b;
    }
    (a - b).abs() <= tol
}

/// All total assignments over `n` variables, bit `j` of the mask is `X_{j+1}`.
pub fn worlds(n: u32) -> impl Iterator<Item = Vec<bool>> {
    (0u64..1 << n).map(move |mask| (0..n).map(|j| mask >> j & 1 == 1).collect())
}

/// Linear-domain enumeration, written independently of the library oracle.
pub fn enumerate_z(m: &PropMrf) -> f64 {
    worlds(m.num_vars)
        .filter(|x| m.hard.iter().all(|c| c.eval_total(x)))
        .map(|x| {
            m.soft
                .iter()
                .filter(|s| s.clause.eval_total(&x))
                .map(|s| s.weight)
                .sum::<f64>()
                .exp()
        })
        .sum()
}

/// Exact `P(X_j = true)` by enumeration.
pub fn enumerate_marginals(m: &PropMrf) -> Vec<f64> {
    let mut z = 0.0;
    let mut acc = vec![0.0; m.num_vars as usize];
    for x in worlds(m.num_vars) {
        if !m.hard.iter().all(|c| c.eval_total(&x)) {
            continue;
        }
        let w = m
            .soft
            .iter()
            .filter(|s| s.clause.eval_total(&x))
            .map(|s| s.weight)
            .sum::<f64>()
            .exp();
        z += w;
        for (a, &b) in acc.iter_mut().zip(&x) {
            if b {
                *a += w;
            }
        }
    }
    acc.iter().map(|a| a / z).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

/// Proptest settings without on-disk regression files.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases: n,
        failure_persistence: None,
        ..Default::default()
    }
}
