//! Loopy belief propagation on the clause factor graph.
//!
//! Every hard and soft clause is a factor (hard first, then soft, each in
//! declaration order). Messages are binary distributions; factor-to-variable
//! messages use the closed form for clause potentials, so a factor over `k`
//! variables costs `O(k)` per sweep.

use thiserror::Error;

use crate::model::{Assignment, Clause, PropMrf, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpConfig {
    pub max_iters: usize,
    pub damping: f64,
    pub tol: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            max_iters: 1000,
            damping: 0.5,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum BpError {
    #[error("variable {0} has an all-zero belief")]
    DegenerateBelief(Var),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("clause index {index} out of range ({len} soft clauses)")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Bipartite variable/clause graph. `edges[f]` lists the variables of
/// factor `f` in clause order; `var_edges[v]` lists `(factor, slot)` pairs.
#[derive(Clone, Debug)]
pub struct FactorGraph {
    pub num_vars: u32,
    pub clauses: Vec<Clause>,
    /// Potential on satisfying / falsifying scope assignments, scaled so the
    /// larger of the two is 1.
    pub potentials: Vec<(f64, f64)>,
    pub var_edges: Vec<Vec<(usize, usize)>>,
}

impl FactorGraph {
    pub fn new(m: &PropMrf) -> Self {
        let mut clauses = Vec::with_capacity(m.num_clauses());
        let mut potentials = Vec::with_capacity(m.num_clauses());
        for c in &m.hard {
            clauses.push(c.clone());
            potentials.push((1.0, 0.0));
        }
        for s in &m.soft {
            clauses.push(s.clause.clone());
            potentials.push(if s.weight >= 0.0 {
                (1.0, (-s.weight).exp())
            } else {
                (s.weight.exp(), 1.0)
            });
        }
        let mut var_edges = vec![Vec::new(); m.num_vars as usize + 1];
        for (f, c) in clauses.iter().enumerate() {
            for (slot, l) in c.lits().iter().enumerate() {
                var_edges[l.var() as usize].push((f, slot));
            }
        }
        FactorGraph {
            num_vars: m.num_vars,
            clauses,
            potentials,
            var_edges,
        }
    }

    pub fn num_factors(&self) -> usize {
        self.clauses.len()
    }
}

/// Belief at one factor: `phi(y) ∝ psi(y) * prod_v incoming[v](y_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorBelief {
    pub clause: Clause,
    pub sat: f64,
    pub unsat: f64,
    /// Normalized variable-to-factor messages `[P(false), P(true)]`, in
    /// clause order.
    pub incoming: Vec<[f64; 2]>,
}

impl FactorBelief {
    /// Product of incoming messages at the unique falsifying assignment.
    fn falsifying_mass(&self) -> f64 {
        self.clause
            .lits()
            .iter()
            .zip(&self.incoming)
            .map(|(l, m)| m[usize::from(!l.is_positive())])
            .product()
    }

    fn normalizer(&self) -> f64 {
        let f = self.falsifying_mass();
        self.sat * (1.0 - f) + self.unsat * f
    }

    /// Normalized table over the scope; bit `j` of the index is the value of
    /// the `j`-th variable of the clause.
    pub fn table(&self) -> Vec<f64> {
        let lits = self.clause.lits();
        let raw: Vec<f64> = (0..1usize << lits.len())
            .map(|idx| {
                let mut p = 1.0;
                let mut holds = false;
                for (j, (l, m)) in lits.iter().zip(&self.incoming).enumerate() {
                    let value = idx >> j & 1 == 1;
                    p *= m[usize::from(value)];
                    holds |= l.eval(value);
                }
                p * if holds { self.sat } else { self.unsat }
            })
            .collect();
        let z: f64 = raw.iter().sum();
        raw.iter().map(|p| p / z).collect()
    }

    /// Probability of the clause being satisfied under the factor belief.
    pub fn prob_satisfied(&self) -> f64 {
        let f = self.falsifying_mass();
        self.sat * (1.0 - f) / self.normalizer()
    }

    /// `U(C = true)`: belief mass on scope assignments that satisfy the
    /// clause and agree with `units`, against the mass on those that falsify
    /// it and agree with `units`. Returns 0.5 when both are zero.
    pub fn conditional_true(&self, units: &Assignment) -> f64 {
        // Consistent mass: free slots sum to 1, fixed slots take their value.
        let mut consistent = 1.0;
        let mut falsifying = 1.0;
        for (l, m) in self.clause.lits().iter().zip(&self.incoming) {
            let falsify_value = !l.is_positive();
            if let Some(v) = units.get(l.var()) {
                consistent *= m[usize::from(v)];
                if v != falsify_value {
                    falsifying = 0.0;
                }
            }
            falsifying *= m[usize::from(falsify_value)];
        }
        let num = self.sat * (consistent - falsifying).max(0.0);
        let den = num + self.unsat * falsifying;
        if den > 0.0 {
            num / den
        } else {
            0.5
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BpMarginals {
    /// `variable_marginals[i]` is `P(X_{i+1} = true)`.
    pub variable_marginals: Vec<f64>,
    /// One belief per factor, hard clauses first, then soft clauses.
    pub factor_marginals: Vec<FactorBelief>,
    pub num_hard: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl BpMarginals {
    pub fn variable(&self, v: Var) -> f64 {
        self.variable_marginals[v as usize - 1]
    }

    /// Belief of soft clause `i` (0-based).
    pub fn soft_factor(&self, i: usize) -> Option<&FactorBelief> {
        self.factor_marginals.get(self.num_hard + i)
    }
}

fn normalize2(a: f64, b: f64) -> Option<[f64; 2]> {
    let s = a + b;
    (s > 0.0 && s.is_finite()).then(|| [a / s, b / s])
}

/// Turns two log-domain entries into a normalized pair.
fn normalize_log(l0: f64, l1: f64) -> Option<[f64; 2]> {
    let m = l0.max(l1);
    if m == f64::NEG_INFINITY {
        return None;
    }
    normalize2((l0 - m).exp(), (l1 - m).exp())
}

struct LogProduct {
    finite: [f64; 2],
    zeros: [usize; 2],
}

impl LogProduct {
    fn of<'a>(msgs: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let mut p = LogProduct {
            finite: [0.0; 2],
            zeros: [0; 2],
        };
        for m in msgs {
            for (x, &v) in m.iter().enumerate() {
                if v > 0.0 {
                    p.finite[x] += v.ln();
                } else {
                    p.zeros[x] += 1;
                }
            }
        }
        p
    }

    fn total(&self, x: usize) -> f64 {
        if self.zeros[x] > 0 {
            f64::NEG_INFINITY
        } else {
            self.finite[x]
        }
    }

    fn without(&self, m: &[f64; 2], x: usize) -> f64 {
        let (zeros, finite) = if m[x] > 0.0 {
            (self.zeros[x], self.finite[x] - m[x].ln())
        } else {
            (self.zeros[x] - 1, self.finite[x])
        };
        if zeros > 0 {
            f64::NEG_INFINITY
        } else {
            finite
        }
    }
}

/// Synchronous damped sum-product from uniform messages.
pub fn run_bp(m: &PropMrf, config: &BpConfig) -> Result<BpMarginals, BpError> {
    if config.max_iters == 0 {
        return Err(BpError::InvalidConfig("max_iters must be at least 1"));
    }
    if !(0.0..1.0).contains(&config.damping) {
        return Err(BpError::InvalidConfig("damping must lie in [0, 1)"));
    }
    let g = FactorGraph::new(m);
    let n = m.num_vars as usize;
    // to_var[f][slot], to_factor[f][slot]
    let mut to_var: Vec<Vec<[f64; 2]>> = g.clauses.iter().map(|c| vec![[0.5, 0.5]; c.len()]).collect();
    let mut to_factor = to_var.clone();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        update_to_factor(&g, &to_var, &mut to_factor);
        let mut delta: f64 = 0.0;
        for (f, c) in g.clauses.iter().enumerate() {
            let (sat, unsat) = g.potentials[f];
            let incoming = &to_factor[f];
            let falsify: Vec<f64> = c
                .lits()
                .iter()
                .zip(incoming)
                .map(|(l, m)| m[usize::from(!l.is_positive())])
                .collect();
            // leave-one-out products of the falsifying masses
            let k = falsify.len();
            let mut prefix = vec![1.0; k + 1];
            for i in 0..k {
                prefix[i + 1] = prefix[i] * falsify[i];
            }
            let mut suffix = 1.0;
            for slot in (0..k).rev() {
                let others = prefix[slot] * suffix;
                suffix *= falsify[slot];
                let lit = c.lits()[slot];
                let when_satisfying = sat;
                let when_falsifying = sat * (1.0 - others) + unsat * others;
                let (m0, m1) = if lit.is_positive() {
                    (when_falsifying, when_satisfying)
                } else {
                    (when_satisfying, when_falsifying)
                };
                let fresh = normalize2(m0, m1).unwrap_or([0.5, 0.5]);
                let old = to_var[f][slot];
                let d = config.damping;
                // zeros come from hard clauses and are kept exact
                let mix = |x: usize| if fresh[x] == 0.0 { 0.0 } else { (1.0 - d) * fresh[x] + d * old[x] };
                let next = normalize2(mix(0), mix(1))
                .unwrap_or([0.5, 0.5]);
                delta = delta.max((next[0] - old[0]).abs()).max((next[1] - old[1]).abs());
                to_var[f][slot] = next;
            }
        }
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    update_to_factor(&g, &to_var, &mut to_factor);

    let mut variable_marginals = vec![0.5; n];
    for v in 1..=n {
        let edges = &g.var_edges[v];
        if edges.is_empty() {
            continue;
        }
        let p = LogProduct::of(edges.iter().map(|&(f, s)| &to_var[f][s]));
        match normalize_log(p.total(0), p.total(1)) {
            Some(b) => variable_marginals[v - 1] = b[1],
            None => return Err(BpError::DegenerateBelief(v as Var)),
        }
    }
    let factor_marginals = g
        .clauses
        .iter()
        .enumerate()
        .map(|(f, c)| FactorBelief {
            clause: c.clone(),
            sat: g.potentials[f].0,
            unsat: g.potentials[f].1,
            incoming: to_factor[f].clone(),
        })
        .collect();
    Ok(BpMarginals {
        variable_marginals,
        factor_marginals,
        num_hard: m.hard.len(),
        iterations,
        converged,
    })
}

fn update_to_factor(g: &FactorGraph, to_var: &[Vec<[f64; 2]>], to_factor: &mut [Vec<[f64; 2]>]) {
    for edges in &g.var_edges {
        if edges.is_empty() {
            continue;
        }
        let p = LogProduct::of(edges.iter().map(|&(f, s)| &to_var[f][s]));
        for &(f, s) in edges {
            let m = &to_var[f][s];
            to_factor[f][s] = normalize_log(p.without(m, 0), p.without(m, 1)).unwrap_or([0.5, 0.5]);
        }
    }
}

/// `U(C_i = true | prefix)` for soft clause `i` (0-based), where `units`
/// holds the literals forced by propagating the hard clauses together with
/// the prefix constraints.
pub fn formula_proposal(marginals: &BpMarginals, units: &Assignment, i: usize) -> Result<f64, BpError> {
    let len = marginals.factor_marginals.len() - marginals.num_hard;
    marginals
        .soft_factor(i)
        .map(|b| b.conditional_true(units))
        .ok_or(BpError::IndexOutOfRange { index: i, len })
}

/// Bernoulli parameters of the product proposal over the variables.
pub fn variable_proposal(marginals: &BpMarginals) -> Vec<f64> {
    marginals.variable_marginals.clone()
}
