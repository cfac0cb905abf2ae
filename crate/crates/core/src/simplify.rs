//! Partition-function preserving simplification.
//!
//! Unit propagation fixes forced literals; satisfied hard clauses and
//! falsified literals are dropped; soft clauses whose truth value is settled
//! are removed (satisfied ones move their weight into the scalar); hard clauses
//! subsumed by other hard clauses are removed; a soft clause that contains a
//! hard clause is always satisfied and is removed the same way; unassigned
//! variables that no longer occur anywhere contribute a factor 2 each.
//!
//! The reduced model is renumbered onto its remaining variables, so
//! `Z(original) = exp(log_weight) * Z(reduced)` holds with `Z` taken over each
//! model's own variable set.

use crate::logspace::LN_2;
use crate::model::{Assignment, Clause, ClauseStatus, Lit, PropMrf, SoftClause, Var};
use crate::sat::propagate_in_place;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimplifyStatus {
    /// An empty hard clause was derived; `Z = 0`.
    Zero,
    /// No clause remains; `Z = exp(log_weight)`.
    Scalar,
    /// Clauses remain; `Z = exp(log_weight) * Z(model)`.
    Open,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimplifyOutcome {
    pub model: PropMrf,
    pub log_weight: f64,
    pub status: SimplifyStatus,
    /// `var_map[i]` is the original index of reduced variable `i + 1`.
    pub var_map: Vec<Var>,
    /// Literals forced by propagation, over the original variables.
    pub forced: Assignment,
}

fn reduce(c: &Clause, a: &Assignment) -> Option<Vec<Lit>> {
    match c.status(a) {
        ClauseStatus::Satisfied => None,
        _ => Some(c.lits().iter().copied().filter(|l| a.get(l.var()).is_none()).collect()),
    }
}

fn subsumed(c: &[Lit], by: &[Lit]) -> bool {
    by.len() <= c.len() && by.iter().all(|l| c.binary_search(l).is_ok())
}

pub fn simplify(m: &PropMrf) -> SimplifyOutcome {
    let mut forced = Assignment::new(m.num_vars);
    if propagate_in_place(&m.hard, &mut forced).is_some() {
        return SimplifyOutcome {
            model: PropMrf {
                num_vars: 0,
                hard: vec![Clause::empty()],
                soft: Vec::new(),
            },
            log_weight: 0.0,
            status: SimplifyStatus::Zero,
            var_map: Vec::new(),
            forced,
        };
    }

    let mut log_weight = 0.0;
    // After the propagation fixpoint every surviving hard clause has at
    // least two open literals, so none of the removals below can create a
    // new unit and a single pass is already a fixpoint.
    let mut hard: Vec<Vec<Lit>> = m.hard.iter().filter_map(|c| reduce(c, &forced)).collect();
    let mut keep = vec![true; hard.len()];
    for i in 0..hard.len() {
        for j in 0..hard.len() {
            if i != j && keep[j] && subsumed(&hard[i], &hard[j]) && (hard[i] != hard[j] || j < i) {
                keep[i] = false;
                break;
            }
        }
    }
    let mut idx = 0;
    hard.retain(|_| {
        idx += 1;
        keep[idx - 1]
    });

    let mut soft: Vec<(Vec<Lit>, f64)> = Vec::new();
    for s in &m.soft {
        match s.clause.status(&forced) {
            ClauseStatus::Satisfied => log_weight += s.weight,
            ClauseStatus::Falsified => {}
            ClauseStatus::Undetermined => {
                let lits = reduce(&s.clause, &forced).expect("not satisfied");
                if hard.iter().any(|h| subsumed(&lits, h)) {
                    log_weight += s.weight;
                } else {
                    soft.push((lits, s.weight));
                }
            }
        }
    }

    let mut occurs = vec![false; m.num_vars as usize + 1];
    for l in hard.iter().flatten().chain(soft.iter().flat_map(|(c, _)| c)) {
        occurs[l.var() as usize] = true;
    }
    let mut var_map = Vec::new();
    let mut rename = vec![0 as Var; m.num_vars as usize + 1];
    for v in 1..=m.num_vars {
        if occurs[v as usize] {
            var_map.push(v);
            rename[v as usize] = var_map.len() as Var;
        } else if forced.get(v).is_none() {
            log_weight += LN_2;
        }
    }
    let relabel = |lits: &[Lit]| {
        Clause::from_sorted_unchecked(
            lits.iter()
                .map(|l| Lit::new(rename[l.var() as usize], l.is_positive()))
                .collect(),
        )
    };
    let model = PropMrf {
        num_vars: var_map.len() as u32,
        hard: hard.iter().map(|c| relabel(c)).collect(),
        soft: soft
            .iter()
            .map(|(c, w)| SoftClause::new(relabel(c), *w))
            .collect(),
    };
    let status = if model.num_clauses() == 0 {
        SimplifyStatus::Scalar
    } else {
        SimplifyStatus::Open
    };
    SimplifyOutcome {
        model,
        log_weight,
        status,
        var_map,
        forced,
    }
}
