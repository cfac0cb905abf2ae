//! Benchmark generators, evidence injection, the enumeration oracle and the
//! sum-KLD metric.
//!
//! Families:
//! - random `(n, m, s)`: `m` soft clauses, each over `s` distinct variables
//!   with every literal negated with probability 1/2;
//! - QMR-style `(d, f, s)`: a weighted positive unit clause per disease and a
//!   weighted positive disjunction of `s` random diseases per symptom;
//! - friends & smokers over `k` people, grounded from
//!   `friends(a,b) & smokes(a) => smokes(b)` and `smokes(a) => cancer(a)`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::logspace::log_add;
use crate::model::{clause_status, Assignment, Clause, ClauseStatus, Lit, PropMrf, SoftClause, Var};

/// Enumeration bound for [`brute_force_z`].
pub const MAX_BRUTE_FORCE_VARS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("clause size {s} exceeds the {n} available variables")]
    ClauseTooLarge { s: usize, n: usize },
    #[error("all counts must be at least 1")]
    EmptyFamily,
    #[error("{n} variables exceed the enumeration bound {bound}")]
    TooManyVariables { n: u32, bound: u32 },
    #[error("marginal vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("evidence fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("weight interval [{0}, {1}] is empty or not finite")]
    BadWeightLaw(f64, f64),
}

/// Uniform weights on `[low, high]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightLaw {
    pub low: f64,
    pub high: f64,
}

impl Default for WeightLaw {
    fn default() -> Self {
        WeightLaw {
            low: -1.0,
            high: 1.0,
        }
    }
}

impl WeightLaw {
    fn check(&self) -> Result<(), BenchError> {
        if self.low.is_finite() && self.high.is_finite() && self.low <= self.high {
            Ok(())
        } else {
            Err(BenchError::BadWeightLaw(self.low, self.high))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        self.low + (self.high - self.low) * rng.gen::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Random { n: usize, m: usize, s: usize },
    Qmr { diseases: usize, symptoms: usize, causes: usize },
    FriendsSmokers { people: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenSpec {
    pub family: Family,
    pub seed: u64,
    pub weight_law: WeightLaw,
}

impl GenSpec {
    pub fn new(family: Family, seed: u64) -> Self {
        GenSpec {
            family,
            seed,
            weight_law: WeightLaw::default(),
        }
    }
}

pub fn generate(spec: &GenSpec) -> Result<PropMrf, BenchError> {
    match spec.family {
        Family::Random { n, m, s } => gen_random(n, m, s, spec.seed, spec.weight_law),
        Family::Qmr {
            diseases,
            symptoms,
            causes,
        } => gen_qmr(diseases, symptoms, causes, spec.seed, spec.weight_law),
        Family::FriendsSmokers { people } => gen_fs(people, spec.seed, spec.weight_law),
    }
}

fn random_clause<R: Rng>(rng: &mut R, n: usize, s: usize, negate: bool) -> Clause {
    let lits = sample(rng, n, s).into_iter().map(|i| {
        let positive = !negate || rng.gen_bool(0.5);
        Lit::new(i as Var + 1, positive)
    });
    Clause::new(lits).expect("distinct variables")
}

pub fn gen_random(n: usize, m: usize, s: usize, seed: u64, law: WeightLaw) -> Result<PropMrf, BenchError> {
    law.check()?;
    if n == 0 || m == 0 || s == 0 {
        return Err(BenchError::EmptyFamily);
    }
    if s > n {
        return Err(BenchError::ClauseTooLarge { s, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PropMrf::new(n as u32);
    for _ in 0..m {
        let c = random_clause(&mut rng, n, s, true);
        let w = law.draw(&mut rng);
        model.soft.push(SoftClause::new(c, w));
    }
    Ok(model)
}

pub fn gen_qmr(diseases: usize, symptoms: usize, causes: usize, seed: u64, law: WeightLaw) -> Result<PropMrf, BenchError> {
    law.check()?;
    if diseases == 0 || symptoms == 0 || causes == 0 {
        return Err(BenchError::EmptyFamily);
    }
    if causes > diseases {
        return Err(BenchError::ClauseTooLarge {
            s: causes,
            n: diseases,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PropMrf::new(diseases as u32);
    for d in 1..=diseases as Var {
        let w = law.draw(&mut rng);
        model.soft.push(SoftClause::new(Clause::unit(Lit::pos(d)), w));
    }
    for _ in 0..symptoms {
        let c = random_clause(&mut rng, diseases, causes, false);
        let w = law.draw(&mut rng);
        model.soft.push(SoftClause::new(c, w));
    }
    Ok(model)
}

/// Variable layout for friends & smokers over `people` individuals.
#[derive(Clone, Copy, Debug)]
pub struct FsLayout {
    pub people: usize,
}

impl FsLayout {
    pub fn smokes(&self, a: usize) -> Var {
        a as Var
    }
    pub fn cancer(&self, a: usize) -> Var {
        (self.people + a) as Var
    }
    pub fn friends(&self, a: usize, b: usize) -> Var {
        (2 * self.people + (a - 1) * self.people + b) as Var
    }
    pub fn num_vars(&self) -> usize {
        self.people * self.people + 2 * self.people
    }
}

/// Reflexive groundings of the friendship rule are tautologies and are not
/// emitted, so there are `k(k-1)` friendship clauses and `k` cancer clauses.
pub fn gen_fs(people: usize, seed: u64, law: WeightLaw) -> Result<PropMrf, BenchError> {
    law.check()?;
    if people == 0 {
        return Err(BenchError::EmptyFamily);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_friends = law.draw(&mut rng);
    let w_cancer = law.draw(&mut rng);
    let layout = FsLayout { people };
    let mut model = PropMrf::new(layout.num_vars() as u32);
    for a in 1..=people {
        for b in 1..=people {
            if a == b {
                continue;
            }
            let c = Clause::new([
                Lit::neg(layout.friends(a, b)),
                Lit::neg(layout.smokes(a)),
                Lit::pos(layout.smokes(b)),
            ])
            .expect("distinct variables");
            model.soft.push(SoftClause::new(c, w_friends));
        }
    }
    for a in 1..=people {
        let c = Clause::new([Lit::neg(layout.smokes(a)), Lit::pos(layout.cancer(a))]).expect("distinct variables");
        model.soft.push(SoftClause::new(c, w_cancer));
    }
    Ok(model)
}

/// Number of evidence variables for `fraction` of `n`.
pub fn evidence_count(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Fixes `ceil(fraction * n)` distinct random variables to random values by
/// appending hard unit clauses.
pub fn pick_evidence(m: &PropMrf, fraction: f64, seed: u64) -> Result<PropMrf, BenchError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(BenchError::BadFraction(fraction));
    }
    let n = m.num_vars as usize;
    let k = evidence_count(n, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = m.clone();
    for i in sample(&mut rng, n, k).into_iter() {
        let value = rng.gen_bool(0.5);
        out.hard.push(Clause::unit(Lit::new(i as Var + 1, value)));
    }
    Ok(out)
}

/// `ln Z` by enumerating all `2^n` assignments.
pub fn brute_force_z(m: &PropMrf) -> Result<f64, BenchError> {
    if m.num_vars > MAX_BRUTE_FORCE_VARS {
        return Err(BenchError::TooManyVariables {
            n: m.num_vars,
            bound: MAX_BRUTE_FORCE_VARS,
        });
    }
    let n = m.num_vars;
    let mut a = Assignment::new(n);
    let mut total = f64::NEG_INFINITY;
    for mask in 0u64..(1u64 << n) {
        for v in 1..=n {
            a.set(v, mask >> (v - 1) & 1 == 1);
        }
        if m.hard.iter().any(|c| clause_status(c, &a) != ClauseStatus::Satisfied) {
            continue;
        }
        let w: f64 = m
            .soft
            .iter()
            .filter(|s| clause_status(&s.clause, &a) == ClauseStatus::Satisfied)
            .map(|s| s.weight)
            .sum();
        total = log_add(total, w);
    }
    Ok(total)
}

pub const KLD_EPSILON: f64 = 1e-9;

/// Sum over variables of the Bernoulli KL divergence `KL(exact || approx)`.
pub fn sum_kld(exact: &[f64], approx: &[f64]) -> Result<f64, BenchError> {
    if exact.len() != approx.len() {
        return Err(BenchError::LengthMismatch(exact.len(), approx.len()));
    }
    let term = |p: f64, q: f64| if p <= 0.0 { 0.0 } else { p * (p / q).ln() };
    Ok(exact
        .iter()
        .zip(approx)
        .map(|(&p, &q)| {
            let q = q.clamp(KLD_EPSILON, 1.0 - KLD_EPSILON);
            let p = p.clamp(0.0, 1.0);
            term(p, q) + term(1.0 - p, 1.0 - q)
        })
        .sum())
}
