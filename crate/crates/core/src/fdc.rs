//! Exact partition functions by decomposition and conditioning on clauses.
//!
//! Each call simplifies the model, splits it into primal-graph components and
//! solves those independently. A component is closed off as a leaf when it
//! is a single clause (its partition function has a closed form), when the
//! cache already knows it, or when its min-fill width falls under the
//! elimination threshold. Otherwise the engine picks a clause `R`, solves the
//! model with `R` added as a hard clause and the model with `not R` added
//! (as unit clauses), and sums the two results in log space.
//!
//! In [`BranchMode::Variable`] only unit clauses are used, which gives the
//! ordinary variable-conditioning counter.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::graph::{connected_components, minfill_width};
use crate::logspace::{log_add, LN_2};
use crate::model::{Clause, Lit, ModelError, PropMrf, Var};
use crate::simplify::{simplify, SimplifyStatus};
use crate::ve::{ve_log_z, DEFAULT_MAX_WIDTH};

pub const DEFAULT_VE_WIDTH_THRESHOLD: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchMode {
    /// Condition on shared sub-clauses.
    Formula,
    /// Condition on single variables.
    Variable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FdcConfig {
    pub mode: BranchMode,
    pub cache: bool,
    /// Components whose min-fill width is strictly below this value are
    /// handed to bucket elimination. `0` disables the fallback.
    pub ve_width_threshold: usize,
}

impl Default for FdcConfig {
    fn default() -> Self {
        FdcConfig {
            mode: BranchMode::Formula,
            cache: true,
            ve_width_threshold: DEFAULT_VE_WIDTH_THRESHOLD,
        }
    }
}

impl FdcConfig {
    pub fn pure_search(mode: BranchMode) -> Self {
        FdcConfig {
            mode,
            cache: false,
            ve_width_threshold: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Conditioning nodes expanded.
    pub nodes: u64,
    /// Terminal calls: simplified to zero or a scalar, closed-form single
    /// clauses, and elimination fallbacks.
    pub leaves: u64,
    pub cache_hits: u64,
    pub cache_entries: u64,
}

impl std::ops::Add for SearchStats {
    type Output = SearchStats;
    fn add(self, o: SearchStats) -> SearchStats {
        SearchStats {
            nodes: self.nodes + o.nodes,
            leaves: self.leaves + o.leaves,
            cache_hits: self.cache_hits + o.cache_hits,
            cache_entries: self.cache_entries + o.cache_entries,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactResult {
    /// `ln Z`; `-inf` for inconsistent models.
    pub log_z: f64,
    pub stats: SearchStats,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchCandidate {
    pub clause: Clause,
    pub occurrence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FdcError {
    #[error("model has no open clause to branch on")]
    NoOpenClause,
    #[error("instance too large for exhaustive search ({vars} variables, {clauses} clauses)")]
    TooLarge { vars: u32, clauses: usize },
}

/// The pair `(M_R, M_notR)` whose partition functions sum to that of `m`.
pub fn condition_on_clause(m: &PropMrf, r: &Clause) -> Result<(PropMrf, PropMrf), ModelError> {
    let with_r = m.conjoin_query(std::slice::from_ref(r))?;
    let without_r = m.conjoin_query(&r.negation_units())?;
    Ok((with_r, without_r))
}

fn entailed_by_hard(m: &PropMrf, r: &Clause) -> bool {
    m.hard.iter().any(|h| h.is_subset_of(r))
}

fn occurrence_count(m: &PropMrf, r: &Clause) -> usize {
    m.clauses().filter(|c| r.is_subset_of(c)).count()
}

fn most_frequent_literal(m: &PropMrf) -> Option<(Lit, usize)> {
    let mut counts: HashMap<Lit, usize> = HashMap::new();
    for c in m.clauses() {
        for &l in c.lits() {
            *counts.entry(l).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(lb.cmp(la)))
}

fn most_frequent_variable(m: &PropMrf) -> Option<(Var, usize)> {
    let mut counts = vec![0usize; m.num_vars as usize + 1];
    for c in m.clauses() {
        for v in c.vars() {
            counts[v as usize] += 1;
        }
    }
    counts
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &n)| n > 0)
        .max_by(|(va, ca), (vb, cb)| ca.cmp(cb).then(vb.cmp(va)))
        .map(|(v, &n)| (v as Var, n))
}

/// Branching choice: the sub-clause shared by the most clauses, larger first,
/// then lexicographically smallest. Candidates are the pairwise literal
/// intersections that are not already implied by a single hard clause.
pub fn branch_candidate(m: &PropMrf, mode: BranchMode) -> Result<BranchCandidate, FdcError> {
    if m.num_clauses() == 0 {
        return Err(FdcError::NoOpenClause);
    }
    if mode == BranchMode::Variable {
        let (var, n) = most_frequent_variable(m).ok_or(FdcError::NoOpenClause)?;
        return Ok(BranchCandidate {
            clause: Clause::unit(Lit::pos(var)),
            occurrence_count: n,
        });
    }
    let clauses: Vec<&Clause> = m.clauses().collect();
    let mut seen = BTreeSet::new();
    for (i, a) in clauses.iter().enumerate() {
        for b in &clauses[i + 1..] {
            let r = a.intersection(b);
            if !r.is_empty() && !entailed_by_hard(m, &r) {
                seen.insert(r);
            }
        }
    }
    let best = seen
        .into_iter()
        .map(|r| (occurrence_count(m, &r), r))
        .max_by(|(ca, ra), (cb, rb)| ca.cmp(cb).then(ra.len().cmp(&rb.len())).then(rb.cmp(ra)));
    if let Some((occurrence_count, clause)) = best {
        return Ok(BranchCandidate {
            clause,
            occurrence_count,
        });
    }
    let (lit, n) = most_frequent_literal(m).ok_or(FdcError::NoOpenClause)?;
    Ok(BranchCandidate {
        clause: Clause::unit(lit),
        occurrence_count: n,
    })
}

pub fn choose_branch_clause(m: &PropMrf, mode: BranchMode) -> Result<Clause, FdcError> {
    branch_candidate(m, mode).map(|c| c.clause)
}

/// Structural cache key: variables renamed by first occurrence (hard clauses
/// first), literals sorted within clauses, hard clauses sorted, soft clauses
/// sorted by clause then weight bits.
pub fn canonical_key(m: &PropMrf) -> Vec<i64> {
    let mut rename = vec![0i64; m.num_vars as usize + 1];
    let mut next = 0i64;
    for c in m.clauses() {
        for v in c.vars() {
            if rename[v as usize] == 0 {
                next += 1;
                rename[v as usize] = next;
            }
        }
    }
    let relabel = |c: &Clause| {
        let mut lits: Vec<i64> = c
            .lits()
            .iter()
            .map(|l| {
                let v = rename[l.var() as usize];
                if l.is_positive() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        lits.sort_unstable();
        lits
    };
    let mut hard: Vec<Vec<i64>> = m.hard.iter().map(relabel).collect();
    hard.sort_unstable();
    let mut soft: Vec<(Vec<i64>, i64)> = m
        .soft
        .iter()
        .map(|s| (relabel(&s.clause), s.weight.to_bits() as i64))
        .collect();
    soft.sort_unstable();

    let mut key = Vec::with_capacity(4 + m.num_clauses() * 4);
    key.push(next);
    key.push(hard.len() as i64);
    for c in hard {
        key.extend(c);
        key.push(0);
    }
    for (c, w) in soft {
        key.push(w);
        key.extend(c);
        key.push(0);
    }
    key
}

/// `ln(2^k - 1)` for `k >= 1`.
fn ln_pow2_minus_one(k: usize) -> f64 {
    k as f64 * LN_2 + (-(0.5f64.powi(k as i32))).ln_1p()
}

/// Closed form for a component made of exactly one clause over all of its
/// variables.
fn single_clause_log_z(m: &PropMrf) -> Option<f64> {
    if m.num_clauses() != 1 {
        return None;
    }
    if let Some(c) = m.hard.first() {
        debug_assert_eq!(c.len(), m.num_vars as usize);
        return Some(ln_pow2_minus_one(c.len()));
    }
    let s = &m.soft[0];
    debug_assert_eq!(s.clause.len(), m.num_vars as usize);
    Some(log_add(ln_pow2_minus_one(s.clause.len()) + s.weight, 0.0))
}

/// Reusable counter. The component cache persists across calls to
/// [`FdcCounter::log_z`], which is sound because keys are structural.
#[derive(Debug)]
pub struct FdcCounter {
    config: FdcConfig,
    cache: HashMap<Vec<i64>, f64>,
    stats: SearchStats,
}

impl FdcCounter {
    pub fn new(config: FdcConfig) -> Self {
        FdcCounter {
            config,
            cache: HashMap::new(),
            stats: SearchStats::default(),
        }
    }

    pub fn config(&self) -> FdcConfig {
        self.config
    }

    /// Cumulative statistics over every call so far.
    pub fn stats(&self) -> SearchStats {
        SearchStats {
            cache_entries: self.cache.len() as u64,
            ..self.stats
        }
    }

    pub fn log_z(&mut self, m: &PropMrf) -> f64 {
        self.solve(m)
    }

    pub fn count(&mut self, m: &PropMrf) -> ExactResult {
        let before = self.stats;
        let log_z = self.solve(m);
        let after = self.stats();
        ExactResult {
            log_z,
            stats: SearchStats {
                nodes: after.nodes - before.nodes,
                leaves: after.leaves - before.leaves,
                cache_hits: after.cache_hits - before.cache_hits,
                cache_entries: after.cache_entries,
            },
        }
    }

    fn solve(&mut self, m: &PropMrf) -> f64 {
        let out = simplify(m);
        match out.status {
            SimplifyStatus::Zero => {
                self.stats.leaves += 1;
                f64::NEG_INFINITY
            }
            SimplifyStatus::Scalar => {
                self.stats.leaves += 1;
                out.log_weight
            }
            SimplifyStatus::Open => {
                let mut total = out.log_weight;
                for comp in connected_components(&out.model) {
                    total += self.solve_component(&comp.model);
                    if total == f64::NEG_INFINITY {
                        break;
                    }
                }
                total
            }
        }
    }

    /// `m` is simplified and connected.
    fn solve_component(&mut self, m: &PropMrf) -> f64 {
        if let Some(z) = single_clause_log_z(m) {
            self.stats.leaves += 1;
            return z;
        }
        let key = self.config.cache.then(|| canonical_key(m));
        if let Some(z) = key.as_ref().and_then(|k| self.cache.get(k)) {
            self.stats.cache_hits += 1;
            return *z;
        }
        let mut result = None;
        if self.config.ve_width_threshold > 0 && minfill_width(m).width < self.config.ve_width_threshold {
            if let Ok(z) = ve_log_z(m, DEFAULT_MAX_WIDTH) {
                self.stats.leaves += 1;
                result = Some(z);
            }
        }
        let z = match result {
            Some(z) => z,
            None => {
                let r = choose_branch_clause(m, self.config.mode).expect("open component has clauses");
                let (with_r, without_r) = condition_on_clause(m, &r).expect("branch clause in range");
                self.stats.nodes += 1;
                let z_r = self.solve(&with_r);
                let z_not_r = self.solve(&without_r);
                log_add(z_r, z_not_r)
            }
        };
        if let Some(k) = key {
            self.cache.insert(k, z);
        }
        z
    }
}

pub fn fdc_count(m: &PropMrf, config: FdcConfig) -> ExactResult {
    FdcCounter::new(config).count(m)
}

/// `P(X_j = true)` for every variable, as `Z(M and X_j) / Z(M)`. Returns
/// `None` when the model is inconsistent.
pub fn exact_marginals(m: &PropMrf, config: FdcConfig) -> Option<Vec<f64>> {
    let mut counter = FdcCounter::new(config);
    let log_z = counter.log_z(m);
    if log_z == f64::NEG_INFINITY {
        return None;
    }
    let marginals = (1..=m.num_vars)
        .map(|v| {
            let with_v = m
                .conjoin_query(&[Clause::unit(Lit::pos(v))])
                .expect("variable in range");
            (counter.log_z(&with_v) - log_z).exp().clamp(0.0, 1.0)
        })
        .collect();
    Some(marginals)
}

/// Limits for [`minimal_search_space`].
pub const MAX_EXHAUSTIVE_VARS: u32 = 12;
pub const MAX_EXHAUSTIVE_CLAUSES: usize = 8;

/// Size of the smallest search space (fewest leaves, then fewest nodes) over
/// every branching choice, with caching and the elimination fallback off.
/// Formula mode may branch on any sub-clause of any clause that is not
/// already implied by a hard clause; variable mode on any single variable.
pub fn minimal_search_space(m: &PropMrf, mode: BranchMode) -> Result<SearchStats, FdcError> {
    let occurring = m.occurring_vars().len() as u32;
    if occurring > MAX_EXHAUSTIVE_VARS || m.num_clauses() > MAX_EXHAUSTIVE_CLAUSES {
        return Err(FdcError::TooLarge {
            vars: occurring,
            clauses: m.num_clauses(),
        });
    }
    let mut search = ExhaustiveSearch {
        mode,
        memo: HashMap::new(),
    };
    let (leaves, nodes) = search.model(m);
    Ok(SearchStats {
        nodes,
        leaves,
        cache_hits: 0,
        cache_entries: 0,
    })
}

struct ExhaustiveSearch {
    mode: BranchMode,
    memo: HashMap<Vec<i64>, (u64, u64)>,
}

impl ExhaustiveSearch {
    fn model(&mut self, m: &PropMrf) -> (u64, u64) {
        let out = simplify(m);
        if out.status != SimplifyStatus::Open {
            return (1, 0);
        }
        connected_components(&out.model)
            .iter()
            .map(|c| self.component(&c.model))
            .fold((0, 0), |(l, n), (cl, cn)| (l + cl, n + cn))
    }

    fn candidates(&self, m: &PropMrf) -> Vec<Clause> {
        match self.mode {
            BranchMode::Variable => m
                .occurring_vars()
                .into_iter()
                .map(|v| Clause::unit(Lit::pos(v)))
                .collect(),
            BranchMode::Formula => {
                let mut set = BTreeSet::new();
                for c in m.clauses() {
                    let lits = c.lits();
                    for mask in 1u32..(1 << lits.len()) {
                        let sub: Vec<Lit> = lits
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask >> i & 1 == 1)
                            .map(|(_, l)| *l)
                            .collect();
                        set.insert(Clause::from_sorted_unchecked(sub));
                    }
                }
                set.into_iter().filter(|r| !entailed_by_hard(m, r)).collect()
            }
        }
    }

    fn component(&mut self, m: &PropMrf) -> (u64, u64) {
        if m.num_clauses() == 1 {
            return (1, 0);
        }
        let key = canonical_key(m);
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let mut best = (u64::MAX, u64::MAX);
        for r in self.candidates(m) {
            let (with_r, without_r) = condition_on_clause(m, &r).expect("sub-clause in range");
            let a = self.model(&with_r);
            if a.0 >= best.0 {
                continue;
            }
            let b = self.model(&without_r);
            let total = (a.0 + b.0, a.1 + b.1 + 1);
            if total < best {
                best = total;
            }
        }
        self.memo.insert(key, best);
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SoftClause;

    fn c(v: &[i64]) -> Clause {
        Clause::from_dimacs(v)
    }

    #[test]
    fn empty_model_counts_free_assignments() {
        let r = fdc_count(&PropMrf::new(3), FdcConfig::default());
        assert!((r.log_z - 3.0 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn inconsistent_is_neg_infinity() {
        let m = PropMrf::with_clauses(2, vec![c(&[1, 2]), c(&[-1]), c(&[-2])], vec![]).unwrap();
        for mode in [BranchMode::Formula, BranchMode::Variable] {
            assert_eq!(fdc_count(&m, FdcConfig::pure_search(mode)).log_z, f64::NEG_INFINITY);
        }
    }

    #[test]
    fn closed_forms() {
        assert!((ln_pow2_minus_one(1)).abs() < 1e-15);
        assert!((ln_pow2_minus_one(3) - 7f64.ln()).abs() < 1e-15);
        let m = PropMrf::with_clauses(2, vec![], vec![SoftClause::new(c(&[1, -2]), 0.5)]).unwrap();
        let z = single_clause_log_z(&m).unwrap();
        assert!((z - (3.0 * 0.5f64.exp() + 1.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn unit_branch_matches_variable_conditioning() {
        let m = PropMrf::with_clauses(2, vec![c(&[1, 2])], vec![SoftClause::new(c(&[-1, 2]), 0.3)]).unwrap();
        let (a, b) = condition_on_clause(&m, &c(&[1])).unwrap();
        assert_eq!(a.hard.last(), Some(&c(&[1])));
        assert_eq!(b.hard.last(), Some(&c(&[-1])));
    }

    #[test]
    fn fallback_to_most_frequent_literal() {
        let m = PropMrf::with_clauses(
            4,
            vec![],
            vec![SoftClause::new(c(&[1, 2]), 1.0), SoftClause::new(c(&[3, 4]), 1.0)],
        )
        .unwrap();
        assert_eq!(choose_branch_clause(&m, BranchMode::Formula).unwrap(), c(&[1]));
        assert_eq!(
            choose_branch_clause(&PropMrf::new(2), BranchMode::Formula),
            Err(FdcError::NoOpenClause)
        );
    }

    #[test]
    fn entailed_intersections_are_skipped() {
        // {1,2} is a hard clause, so branching on it would not change the model
        let m = PropMrf::with_clauses(3, vec![c(&[1, 2])], vec![SoftClause::new(c(&[1, 2, 3]), 1.0)]).unwrap();
        let r = choose_branch_clause(&m, BranchMode::Formula).unwrap();
        assert!(!entailed_by_hard(&m, &r));
    }

    #[test]
    fn canonical_key_ignores_renaming_and_order() {
        let a = PropMrf::with_clauses(
            3,
            vec![c(&[1, -2])],
            vec![SoftClause::new(c(&[2, 3]), 0.5), SoftClause::new(c(&[-3]), 0.1)],
        )
        .unwrap();
        // monotone relabeling 1->2, 2->5, 3->7 with the soft clauses swapped
        let b = PropMrf::with_clauses(
            7,
            vec![c(&[2, -5])],
            vec![SoftClause::new(c(&[-7]), 0.1), SoftClause::new(c(&[5, 7]), 0.5)],
        )
        .unwrap();
        assert_eq!(canonical_key(&a), canonical_key(&b));
        let mut d = b.clone();
        d.soft[0].weight = 0.2;
        assert_ne!(canonical_key(&a), canonical_key(&d));
    }

    #[test]
    fn exhaustive_search_rejects_large_inputs() {
        let m = PropMrf::with_clauses(20, (1..=20).map(|v| c(&[v])).collect(), vec![]).unwrap();
        assert!(matches!(
            minimal_search_space(&m, BranchMode::Formula),
            Err(FdcError::TooLarge { .. })
        ));
    }
}
