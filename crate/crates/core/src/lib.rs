//! Exact and approximate inference for propositional Markov random fields.
//!
//! A model is a set of Boolean variables, hard clauses that every world must
//! satisfy, and soft clauses that multiply a world's weight by `exp(w)` when
//! satisfied. The crate computes the log partition function `ln Z` exactly
//! ([`fdc`], [`ve`]) or by importance sampling ([`fis`]), and the probability
//! of a CNF query as a ratio of two partition functions.

pub mod bench;
pub mod bp;
pub mod fdc;
pub mod fis;
pub mod graph;
pub mod logspace;
pub mod model;
pub mod sat;
pub mod simplify;
pub mod ve;

pub use fdc::{fdc_count, BranchMode, ExactResult, FdcConfig, FdcCounter, SearchStats};
pub use model::{parse_model, parse_model_str, Assignment, Clause, Lit, PropMrf, SoftClause, Var};

/// `ln P(query)` as `ln Z(model and query) - ln Z(model)`.
pub fn log_probability(model: &PropMrf, query: &[Clause], config: FdcConfig) -> Result<f64, model::ModelError> {
    let conjoined = model.conjoin_query(query)?;
    let mut counter = FdcCounter::new(config);
    let log_z = counter.log_z(model);
    let log_zq = counter.log_z(&conjoined);
    Ok(if log_zq == f64::NEG_INFINITY { f64::NEG_INFINITY } else { log_zq - log_z })
}
