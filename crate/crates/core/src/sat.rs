//! Unit propagation and a chronological DPLL satisfiability check.
//!
//! Propagation sweeps the clauses in declaration order until nothing changes,
//! so results depend only on the input. The DPLL search branches on the
//! lowest-index unassigned variable of an open clause, trying `true` first.

use crate::model::{Assignment, Clause, ClauseStatus, Lit};

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    /// Fixpoint extension of the input assignment. On conflict this is the
    /// partial extension reached when the conflict was found.
    pub assignment: Assignment,
    /// First clause found falsified, if any.
    pub conflict: Option<Clause>,
}

impl PropagationResult {
    pub fn is_conflict(&self) -> bool {
        self.conflict.is_some()
    }
}

/// Extends `a` in place; returns the index of the first falsified clause.
pub(crate) fn propagate_in_place(hard: &[Clause], a: &mut Assignment) -> Option<usize> {
    loop {
        let mut changed = false;
        for (idx, c) in hard.iter().enumerate() {
            let mut open: Option<Lit> = None;
            let mut n_open = 0usize;
            let mut satisfied = false;
            for &l in c.lits() {
                match a.lit_value(l) {
                    Some(true) => {
                        satisfied = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        n_open += 1;
                        open = Some(l);
                    }
                }
            }
            if satisfied {
                continue;
            }
            match n_open {
                0 => return Some(idx),
                1 => {
                    a.assign(open.expect("one open literal"));
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return None;
        }
    }
}

pub fn unit_propagate(hard: &[Clause], a: &Assignment) -> PropagationResult {
    let mut assignment = a.clone();
    let conflict = propagate_in_place(hard, &mut assignment).map(|i| hard[i].clone());
    PropagationResult {
        assignment,
        conflict,
    }
}

fn max_var(hard: &[Clause]) -> u32 {
    hard.iter().map(Clause::max_var).max().unwrap_or(0)
}

fn dpll(hard: &[Clause], mut a: Assignment) -> Option<Assignment> {
    if propagate_in_place(hard, &mut a).is_some() {
        return None;
    }
    let branch = hard
        .iter()
        .filter(|c| c.status(&a) == ClauseStatus::Undetermined)
        .flat_map(|c| c.vars())
        .filter(|&v| a.get(v).is_none())
        .min();
    let Some(var) = branch else {
        return Some(a);
    };
    for value in [true, false] {
        let mut next = a.clone();
        next.set(var, value);
        if let Some(model) = dpll(hard, next) {
            return Some(model);
        }
    }
    None
}

/// A satisfying partial assignment (variables of satisfied clauses may stay
/// unassigned), or `None` if the clauses are unsatisfiable.
pub fn find_model(hard: &[Clause]) -> Option<Assignment> {
    dpll(hard, Assignment::new(max_var(hard)))
}

/// Satisfiability under the given partial assignment.
pub fn is_satisfiable_under(hard: &[Clause], a: &Assignment) -> bool {
    dpll(hard, a.clone()).is_some()
}

pub fn is_satisfiable(hard: &[Clause]) -> bool {
    find_model(hard).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: &[i64]) -> Clause {
        Clause::from_dimacs(v)
    }

    #[test]
    fn chained_units() {
        let r = unit_propagate(&[c(&[1]), c(&[-1, 2])], &Assignment::new(2));
        assert!(!r.is_conflict());
        assert_eq!(r.assignment.get(1), Some(true));
        assert_eq!(r.assignment.get(2), Some(true));
    }

    #[test]
    fn contradictory_units() {
        let r = unit_propagate(&[c(&[1]), c(&[-1])], &Assignment::new(1));
        assert_eq!(r.conflict, Some(c(&[-1])));
    }

    #[test]
    fn no_unit_is_fixpoint() {
        let a = Assignment::new(2);
        let r = unit_propagate(&[c(&[1, 2])], &a);
        assert_eq!(r.assignment, a);
        assert!(!r.is_conflict());
    }

    #[test]
    fn satisfiability_small() {
        assert!(is_satisfiable(&[c(&[1]), c(&[-1, 2])]));
        assert!(!is_satisfiable(&[c(&[1]), c(&[-1])]));
        assert!(is_satisfiable(&[]));
        assert!(!is_satisfiable(&[Clause::empty()]));
        // pigeonhole 3 into 2
        let p = |i: i64, j: i64| (i - 1) * 2 + j;
        let mut cl = Vec::new();
        for i in 1..=3 {
            cl.push(c(&[p(i, 1), p(i, 2)]));
        }
        for j in 1..=2 {
            for i in 1..=3 {
                for k in (i + 1)..=3 {
                    cl.push(c(&[-p(i, j), -p(k, j)]));
                }
            }
        }
        assert!(!is_satisfiable(&cl));
    }

    #[test]
    fn satisfiable_under_assignment() {
        let cl = [c(&[1, 2])];
        let mut a = Assignment::new(2);
        a.set(1, false);
        assert!(is_satisfiable_under(&cl, &a));
        a.set(2, false);
        assert!(!is_satisfiable_under(&cl, &a));
    }
}
