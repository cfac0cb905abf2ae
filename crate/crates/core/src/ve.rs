//! Dense log-space factors and bucket elimination.

use thiserror::Error;

use crate::graph::minfill_width;
use crate::logspace::{log_add, LN_2};
use crate::model::{Clause, PropMrf, Var};

/// Largest clause scope tabulated by default.
pub const DEFAULT_MAX_WIDTH: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VeError {
    #[error("clause over {size} variables exceeds the tabulation bound {bound}")]
    ClauseTooWide { size: usize, bound: usize },
    #[error("intermediate factor of width {width} exceeds the bound {bound}")]
    TooWide { width: usize, bound: usize },
    #[error("variable {0} occurs in a factor but not in the elimination order")]
    OrderIncomplete(Var),
}

/// Table over `scope` (ascending variables). Entry `i` holds the log value
/// for the assignment whose bit `j` is the value of `scope[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub scope: Vec<Var>,
    pub values: Vec<f64>,
}

impl Factor {
    pub fn constant(log_value: f64) -> Self {
        Factor {
            scope: Vec::new(),
            values: vec![log_value],
        }
    }

    /// Tabulates a clause: `sat` where the clause holds, `unsat` elsewhere.
    pub fn from_clause(c: &Clause, sat: f64, unsat: f64) -> Self {
        let k = c.len();
        let values = (0..1usize << k)
            .map(|idx| {
                let holds = c
                    .lits()
                    .iter()
                    .enumerate()
                    .any(|(j, l)| l.eval(idx >> j & 1 == 1));
                if holds {
                    sat
                } else {
                    unsat
                }
            })
            .collect();
        Factor {
            scope: c.vars().collect(),
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.scope.len()
    }

    /// Pointwise product (log-sum) of several factors.
    pub fn product(factors: &[Factor]) -> Factor {
        let mut scope: Vec<Var> = factors.iter().flat_map(|f| f.scope.iter().copied()).collect();
        scope.sort_unstable();
        scope.dedup();
        let maps: Vec<Vec<(usize, usize)>> = factors
            .iter()
            .map(|f| {
                f.scope
                    .iter()
                    .enumerate()
                    .map(|(fb, v)| (scope.binary_search(v).expect("in union"), fb))
                    .collect()
            })
            .collect();
        let values = (0..1usize << scope.len())
            .map(|idx| {
                factors
                    .iter()
                    .zip(&maps)
                    .map(|(f, map)| {
                        let sub = map
                            .iter()
                            .fold(0usize, |acc, &(ub, fb)| acc | ((idx >> ub & 1) << fb));
                        f.values[sub]
                    })
                    .sum()
            })
            .collect();
        Factor { scope, values }
    }

    /// Sums `var` out of the table.
    pub fn sum_out(&self, var: Var) -> Factor {
        let Ok(pos) = self.scope.binary_search(&var) else {
            return Factor {
                scope: self.scope.clone(),
                values: self.values.iter().map(|v| v + LN_2).collect(),
            };
        };
        let mut scope = self.scope.clone();
        scope.remove(pos);
        let low = (1usize << pos) - 1;
        let values = (0..1usize << scope.len())
            .map(|idx| {
                let base = (idx & low) | ((idx & !low) << 1);
                log_add(self.values[base], self.values[base | 1 << pos])
            })
            .collect();
        Factor { scope, values }
    }
}

/// One factor per clause: soft clauses carry `w` where satisfied and `0`
/// elsewhere; hard clauses carry `0` where satisfied and `-inf` elsewhere.
pub fn clauses_to_factors(m: &PropMrf, max_scope: usize) -> Result<Vec<Factor>, VeError> {
    let check = |c: &Clause| {
        if c.len() > max_scope {
            Err(VeError::ClauseTooWide {
                size: c.len(),
                bound: max_scope,
            })
        } else {
            Ok(())
        }
    };
    let mut out = Vec::with_capacity(m.num_clauses());
    for c in &m.hard {
        check(c)?;
        out.push(Factor::from_clause(c, 0.0, f64::NEG_INFINITY));
    }
    for s in &m.soft {
        check(&s.clause)?;
        out.push(Factor::from_clause(&s.clause, s.weight, 0.0));
    }
    Ok(out)
}

/// Eliminates the variables of `order` in turn and returns the log of the
/// total sum. Order variables that appear in no factor contribute `ln 2`.
pub fn bucket_elimination(factors: Vec<Factor>, order: &[Var], max_width: usize) -> Result<f64, VeError> {
    let max_var = order
        .iter()
        .copied()
        .chain(factors.iter().flat_map(|f| f.scope.iter().copied()))
        .max()
        .unwrap_or(0) as usize;
    let mut pos = vec![usize::MAX; max_var + 1];
    for (i, &v) in order.iter().enumerate() {
        pos[v as usize] = i;
    }
    let mut buckets: Vec<Vec<Factor>> = vec![Vec::new(); order.len()];
    let mut constant = 0.0;

    let place = |f: Factor, buckets: &mut Vec<Vec<Factor>>, constant: &mut f64| -> Result<(), VeError> {
        match f.scope.iter().map(|&v| (pos[v as usize], v)).min() {
            None => *constant += f.values[0],
            Some((usize::MAX, v)) => return Err(VeError::OrderIncomplete(v)),
            Some((p, _)) => buckets[p].push(f),
        }
        Ok(())
    };
    for f in factors {
        place(f, &mut buckets, &mut constant)?;
    }

    for (i, &var) in order.iter().enumerate() {
        let bucket = std::mem::take(&mut buckets[i]);
        if bucket.is_empty() {
            constant += LN_2;
            continue;
        }
        let mut union: Vec<Var> = bucket.iter().flat_map(|f| f.scope.iter().copied()).collect();
        union.sort_unstable();
        union.dedup();
        let width = union.len() - 1;
        if width > max_width {
            return Err(VeError::TooWide {
                width,
                bound: max_width,
            });
        }
        let message = Factor::product(&bucket).sum_out(var);
        place(message, &mut buckets, &mut constant)?;
        if constant == f64::NEG_INFINITY {
            return Ok(constant);
        }
    }
    Ok(constant)
}

/// `ln Z` of a model by bucket elimination along its min-fill order.
pub fn ve_log_z(m: &PropMrf, max_width: usize) -> Result<f64, VeError> {
    let order = minfill_width(m).order;
    bucket_elimination(clauses_to_factors(m, max_width)?, &order, max_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SoftClause;

    fn c(v: &[i64]) -> Clause {
        Clause::from_dimacs(v)
    }

    #[test]
    fn soft_binary_table() {
        let m = PropMrf::with_clauses(2, vec![], vec![SoftClause::new(c(&[1, 2]), 0.3)]).unwrap();
        let f = &clauses_to_factors(&m, 20).unwrap()[0];
        assert_eq!(f.values, vec![0.0, 0.3, 0.3, 0.3]);
    }

    #[test]
    fn hard_unit_table() {
        let m = PropMrf::with_clauses(1, vec![c(&[1])], vec![]).unwrap();
        let f = &clauses_to_factors(&m, 20).unwrap()[0];
        assert_eq!(f.values, vec![f64::NEG_INFINITY, 0.0]);
    }

    #[test]
    fn single_soft_unit() {
        let w = 1.3f64;
        let m = PropMrf::with_clauses(1, vec![], vec![SoftClause::new(c(&[1]), w)]).unwrap();
        let z = ve_log_z(&m, 20).unwrap();
        assert!((z - (w.exp() + 1.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_units_add() {
        let (a, b) = (0.4f64, -0.9f64);
        let m = PropMrf::with_clauses(
            2,
            vec![],
            vec![SoftClause::new(c(&[1]), a), SoftClause::new(c(&[-2]), b)],
        )
        .unwrap();
        let z = ve_log_z(&m, 20).unwrap();
        let expect = (a.exp() + 1.0).ln() + (b.exp() + 1.0).ln();
        assert!((z - expect).abs() < 1e-12);
    }

    #[test]
    fn width_bounds_are_reported() {
        let m = PropMrf::with_clauses(3, vec![c(&[1, 2, 3])], vec![]).unwrap();
        assert_eq!(
            clauses_to_factors(&m, 2).unwrap_err(),
            VeError::ClauseTooWide { size: 3, bound: 2 }
        );
        let f = clauses_to_factors(&m, 20).unwrap();
        assert_eq!(
            bucket_elimination(f.clone(), &[1, 2, 3], 1).unwrap_err(),
            VeError::TooWide { width: 2, bound: 1 }
        );
        assert_eq!(bucket_elimination(f, &[1, 2], 5).unwrap_err(), VeError::OrderIncomplete(3));
    }

    #[test]
    fn inconsistent_is_neg_infinity() {
        let m = PropMrf::with_clauses(1, vec![c(&[1]), c(&[-1])], vec![]).unwrap();
        assert_eq!(ve_log_z(&m, 20).unwrap(), f64::NEG_INFINITY);
    }
}
