//! Importance sampling of the partition function.
//!
//! Formula sampling draws a truth assignment `h` to a clause sequence
//! `H = (H_1..H_r)` one clause at a time. Before each draw both branches are
//! checked for satisfiability against the hard clauses and the constraints
//! drawn so far; a branch with no solution is never taken, so every sample
//! is consistent. The per-sample estimate is
//! `#(F_h and F_M) * exp(w(h)) / qb(h)` with `qb` the product of proposal
//! probabilities at the steps where both branches were open.
//!
//! Variable sampling draws a full assignment from a product distribution and
//! weights it by `I(x) exp(w(x)) / Q(x)`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bp::{run_bp, BpConfig, BpError, BpMarginals, FactorBelief};
use crate::fdc::{FdcConfig, FdcCounter};
use crate::model::{Assignment, Clause, Lit, PropMrf, Var};
use crate::sat::{is_satisfiable, unit_propagate};

/// Largest model handled by the formula sampler (exact counts per sample).
pub const MAX_FIS_VARS: u32 = 100;
/// Largest model handled by the enumeration helpers.
pub const MAX_ENUMERATION_VARS: u32 = 20;
/// Proposal probabilities are kept inside `[MIN_PROB, 1 - MIN_PROB]`.
pub const DEFAULT_MIN_PROB: f64 = 1e-3;
/// Samples sharing one random stream.
const BLOCK: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FisError {
    #[error("the hard clauses have no solution")]
    NoConsistentSample,
    #[error("{n} variables exceed the bound {bound}")]
    TooManyVariables { n: u32, bound: u32 },
    #[error("at least one sample is required")]
    NoSamples,
    #[error("soft clause {0} is not decided by the formula assignment")]
    UndeterminedSoftClause(usize),
    #[error("all sample weights are zero")]
    AllWeightsZero,
    #[error("clause over variable {0} outside the model")]
    OutOfRange(Var),
    #[error(transparent)]
    Bp(#[from] BpError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Fis,
    Vis,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FormulaAssignment {
    /// `(clause index, value)` in sampling order.
    pub assignments: Vec<(usize, bool)>,
}

impl FormulaAssignment {
    pub fn values(&self) -> Vec<bool> {
        self.assignments.iter().map(|&(_, v)| v).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub h: FormulaAssignment,
    pub qb: f64,
    pub log_qb: f64,
    pub log_count: f64,
    pub log_soft_weight: f64,
}

impl Sample {
    /// `ln(count * exp(w) / qb)`.
    pub fn log_estimate(&self) -> f64 {
        self.log_count + self.log_soft_weight - self.log_qb
    }
}

/// Streaming mean and variance of values given by their logs. Values are
/// stored relative to `exp(shift)`, where `shift` is the largest log seen.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMoments {
    n: u64,
    shift: f64,
    mean: f64,
    m2: f64,
}

impl Default for LogMoments {
    fn default() -> Self {
        LogMoments {
            n: 0,
            shift: f64::NEG_INFINITY,
            mean: 0.0,
            m2: 0.0,
        }
    }
}

impl LogMoments {
    fn rescale(&mut self, shift: f64) {
        if shift > self.shift {
            let f = (self.shift - shift).exp();
            self.mean *= f;
            self.m2 *= f * f;
            self.shift = shift;
        }
    }

    pub fn push(&mut self, log_x: f64) {
        if log_x.is_finite() {
            self.rescale(log_x);
        }
        let x = if log_x == f64::NEG_INFINITY {
            0.0
        } else {
            (log_x - self.shift).exp()
        };
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &LogMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let mut other = other.clone();
        let shift = self.shift.max(other.shift);
        self.rescale(shift);
        other.rescale(shift);
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = other.mean - self.mean;
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn log_mean(&self) -> f64 {
        if self.mean > 0.0 {
            self.shift + self.mean.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Log of the unbiased sample variance (`-inf` for fewer than two values).
    pub fn log_variance(&self) -> f64 {
        if self.n < 2 || self.m2 <= 0.0 {
            f64::NEG_INFINITY
        } else {
            2.0 * self.shift + (self.m2 / (self.n - 1) as f64).ln()
        }
    }

    pub fn estimate(&self) -> Estimate {
        let log_var = self.log_variance();
        let log_se = 0.5 * (log_var - (self.n as f64).ln());
        Estimate {
            log_z_hat: self.log_mean(),
            n_samples: self.n,
            sample_variance: log_var.exp(),
            log_sample_variance: log_var,
            std_error: log_se.exp(),
            log_std_error: log_se,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub log_z_hat: f64,
    pub n_samples: u64,
    /// Unbiased variance of the per-sample estimator.
    pub sample_variance: f64,
    pub log_sample_variance: f64,
    /// `sqrt(sample_variance / n_samples)`.
    pub std_error: f64,
    pub log_std_error: f64,
}

/// Self-normalized weighted averages of per-variable values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedMarginals {
    shift: f64,
    total: f64,
    sums: Vec<f64>,
}

impl WeightedMarginals {
    pub fn new(num_vars: usize) -> Self {
        WeightedMarginals {
            shift: f64::NEG_INFINITY,
            total: 0.0,
            sums: vec![0.0; num_vars],
        }
    }

    fn rescale(&mut self, shift: f64) {
        if shift > self.shift {
            let f = (self.shift - shift).exp();
            self.total *= f;
            self.sums.iter_mut().for_each(|s| *s *= f);
            self.shift = shift;
        }
    }

    pub fn push(&mut self, log_weight: f64, values: &[f64]) {
        if log_weight == f64::NEG_INFINITY {
            return;
        }
        self.rescale(log_weight);
        let w = (log_weight - self.shift).exp();
        self.total += w;
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += w * v;
        }
    }

    pub fn merge(&mut self, other: &WeightedMarginals) {
        if other.total == 0.0 {
            return;
        }
        let mut other = other.clone();
        let shift = self.shift.max(other.shift);
        self.rescale(shift);
        other.rescale(shift);
        self.total += other.total;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            *s += o;
        }
    }

    pub fn finish(&self) -> Result<Vec<f64>, FisError> {
        if self.total <= 0.0 {
            return Err(FisError::AllWeightsZero);
        }
        Ok(self.sums.iter().map(|s| (s / self.total).clamp(0.0, 1.0)).collect())
    }
}

/// Per-variable probability of true from `(log weight, per-variable value)`
/// pairs. Values are indicators for variable samples and conditional
/// fractions `#(F_h and X_j) / #(F_h)` for formula samples.
pub fn marginals_from_samples<'a>(
    num_vars: usize,
    samples: impl IntoIterator<Item = (f64, &'a [f64])>,
) -> Result<Vec<f64>, FisError> {
    let mut acc = WeightedMarginals::new(num_vars);
    for (w, v) in samples {
        acc.push(w, v);
    }
    acc.finish()
}

/// Source of the conditional probability `P(H_step = true | prefix)`.
pub trait Proposal {
    /// `units` holds the literals forced by propagating the hard clauses with
    /// the constraints of `prefix`.
    fn prob_true(&self, step: usize, clause: &Clause, prefix: &[bool], units: &Assignment) -> f64;
}

pub struct UniformProposal;

impl Proposal for UniformProposal {
    fn prob_true(&self, _: usize, _: &Clause, _: &[bool], _: &Assignment) -> f64 {
        0.5
    }
}

/// Conditional factor-belief proposal. Steps whose clause is a soft clause
/// use that clause's factor belief; other clauses use the product of
/// variable marginals over their scope.
pub struct BpProposal {
    marginals: BpMarginals,
    beliefs: Vec<FactorBelief>,
    min_prob: f64,
}

impl BpProposal {
    pub fn new(m: &PropMrf, h: &[Clause], marginals: BpMarginals, min_prob: f64) -> Self {
        let beliefs = h
            .iter()
            .map(|c| match m.soft.iter().position(|s| &s.clause == c) {
                Some(j) => marginals.soft_factor(j).expect("soft factor").clone(),
                None => FactorBelief {
                    clause: c.clone(),
                    sat: 1.0,
                    unsat: 1.0,
                    incoming: c
                        .vars()
                        .map(|v| {
                            let p = marginals.variable(v);
                            [1.0 - p, p]
                        })
                        .collect(),
                },
            })
            .collect();
        BpProposal {
            marginals,
            beliefs,
            min_prob,
        }
    }

    pub fn marginals(&self) -> &BpMarginals {
        &self.marginals
    }
}

impl Proposal for BpProposal {
    fn prob_true(&self, step: usize, _: &Clause, _: &[bool], units: &Assignment) -> f64 {
        self.beliefs[step]
            .conditional_true(units)
            .clamp(self.min_prob, 1.0 - self.min_prob)
    }
}

/// Constraints asserting `h_i` for every clause of the prefix.
fn constraints(h: &[Clause], prefix: &[bool]) -> Vec<Clause> {
    let mut out = Vec::new();
    for (c, &v) in h.iter().zip(prefix) {
        if v {
            out.push(c.clone());
        } else {
            out.extend(c.negation_units());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Step {
    Free(f64),
    Forced(bool),
}

#[derive(Clone, Debug)]
struct Leaf {
    log_count: f64,
    log_soft_weight: f64,
    fractions: Option<Vec<f64>>,
}

/// Formula sampler with memoized per-prefix decisions and per-leaf counts.
pub struct FisSampler<'a, P: Proposal> {
    m: &'a PropMrf,
    h: Vec<Clause>,
    proposal: &'a P,
    soft_step: Vec<Option<usize>>,
    steps: HashMap<Vec<bool>, Step>,
    leaves: HashMap<Vec<bool>, Leaf>,
    counter: FdcCounter,
}

impl<'a, P: Proposal> FisSampler<'a, P> {
    pub fn new(m: &'a PropMrf, h: Vec<Clause>, proposal: &'a P) -> Result<Self, FisError> {
        if m.num_vars > MAX_FIS_VARS {
            return Err(FisError::TooManyVariables {
                n: m.num_vars,
                bound: MAX_FIS_VARS,
            });
        }
        if let Some(v) = h.iter().map(Clause::max_var).find(|&v| v > m.num_vars) {
            return Err(FisError::OutOfRange(v));
        }
        if !is_satisfiable(&m.hard) {
            return Err(FisError::NoConsistentSample);
        }
        let soft_step = m.soft.iter().map(|s| h.iter().position(|c| c == &s.clause)).collect();
        Ok(FisSampler {
            m,
            h,
            proposal,
            soft_step,
            steps: HashMap::new(),
            leaves: HashMap::new(),
            counter: FdcCounter::new(FdcConfig::default()),
        })
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.h
    }

    fn formula(&self, prefix: &[bool]) -> Vec<Clause> {
        let mut g = self.m.hard.clone();
        g.extend(constraints(&self.h, prefix));
        g
    }

    fn step(&mut self, prefix: &[bool]) -> Step {
        if let Some(s) = self.steps.get(prefix) {
            return *s;
        }
        let i = prefix.len();
        let g = self.formula(prefix);
        let clause = &self.h[i];
        let mut g1 = g.clone();
        g1.push(clause.clone());
        let mut g0 = g.clone();
        g0.extend(clause.negation_units());
        let step = match (is_satisfiable(&g1), is_satisfiable(&g0)) {
            (true, true) => {
                let units = unit_propagate(&g, &Assignment::new(self.m.num_vars)).assignment;
                Step::Free(self.proposal.prob_true(i, clause, prefix, &units))
            }
            (true, false) => Step::Forced(true),
            (false, true) => Step::Forced(false),
            (false, false) => unreachable!("prefix kept consistent by the guards"),
        };
        self.steps.insert(prefix.to_vec(), step);
        step
    }

    fn count(&mut self, g: Vec<Clause>) -> f64 {
        let model = PropMrf {
            num_vars: self.m.num_vars,
            hard: g,
            soft: Vec::new(),
        };
        self.counter.log_z(&model)
    }

    fn leaf(&mut self, h: &[bool], fractions: bool) -> Result<&Leaf, FisError> {
        let need = match self.leaves.get(h) {
            None => true,
            Some(l) => fractions && l.fractions.is_none(),
        };
        if need {
            let g = self.formula(h);
            let log_count = match self.leaves.get(h) {
                Some(l) => l.log_count,
                None => self.count(g.clone()),
            };
            let mut log_soft_weight = 0.0;
            for (j, s) in self.m.soft.iter().enumerate() {
                let holds = match self.soft_step[j] {
                    Some(i) => h[i],
                    None => {
                        let mut neg = g.clone();
                        neg.extend(s.clause.negation_units());
                        if !is_satisfiable(&neg) {
                            true
                        } else {
                            let mut pos = g.clone();
                            pos.push(s.clause.clone());
                            if is_satisfiable(&pos) {
                                return Err(FisError::UndeterminedSoftClause(j));
                            }
                            false
                        }
                    }
                };
                if holds {
                    log_soft_weight += s.weight;
                }
            }
            let fractions = fractions.then(|| {
                (1..=self.m.num_vars)
                    .map(|v| {
                        let mut gv = g.clone();
                        gv.push(Clause::unit(Lit::pos(v)));
                        (self.count(gv) - log_count).exp().clamp(0.0, 1.0)
                    })
                    .collect()
            });
            self.leaves.insert(
                h.to_vec(),
                Leaf {
                    log_count,
                    log_soft_weight,
                    fractions,
                },
            );
        }
        Ok(&self.leaves[h])
    }

    fn walk<R: Rng + ?Sized>(&mut self, rng: &mut R) -> (Vec<bool>, f64) {
        let r = self.h.len();
        let mut prefix = Vec::with_capacity(r);
        let mut log_qb = 0.0;
        for _ in 0..r {
            let value = match self.step(&prefix) {
                Step::Forced(v) => v,
                Step::Free(p) => {
                    let v = rng.gen::<f64>() < p;
                    log_qb += if v { p.ln() } else { (1.0 - p).ln() };
                    v
                }
            };
            prefix.push(value);
        }
        (prefix, log_qb)
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Sample, FisError> {
        let (h, log_qb) = self.walk(rng);
        let leaf = self.leaf(&h, false)?;
        Ok(Sample {
            h: FormulaAssignment {
                assignments: h.iter().copied().enumerate().collect(),
            },
            qb: log_qb.exp(),
            log_qb,
            log_count: leaf.log_count,
            log_soft_weight: leaf.log_soft_weight,
        })
    }

    /// Draws `n` samples and accumulates the estimator (and, on request, the
    /// weighted marginals).
    fn run_block<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        n: usize,
        moments: &mut LogMoments,
        marginals: Option<&mut WeightedMarginals>,
    ) -> Result<(), FisError> {
        let mut marginals = marginals;
        for _ in 0..n {
            let (h, log_qb) = self.walk(rng);
            let want = marginals.is_some();
            let leaf = self.leaf(&h, want)?;
            let log_est = leaf.log_count + leaf.log_soft_weight - log_qb;
            moments.push(log_est);
            if let Some(acc) = marginals.as_deref_mut() {
                acc.push(log_est, leaf.fractions.as_ref().expect("requested"));
            }
        }
        Ok(())
    }

    /// Estimate from `n` samples. Sample blocks use independent streams of
    /// `seed`, so the result does not depend on how blocks are scheduled.
    pub fn estimate(&mut self, n: usize, seed: u64, with_marginals: bool) -> Result<SamplingRun, FisError> {
        if n == 0 {
            return Err(FisError::NoSamples);
        }
        let mut moments = LogMoments::default();
        let mut marginals = with_marginals.then(|| WeightedMarginals::new(self.m.num_vars as usize));
        for (b, size) in blocks(n).enumerate() {
            let mut rng = block_rng(seed, b);
            let mut bm = LogMoments::default();
            let mut bw = marginals.as_ref().map(|_| WeightedMarginals::new(self.m.num_vars as usize));
            self.run_block(&mut rng, size, &mut bm, bw.as_mut())?;
            moments.merge(&bm);
            if let (Some(acc), Some(bw)) = (marginals.as_mut(), bw) {
                acc.merge(&bw);
            }
        }
        Ok(SamplingRun {
            estimate: moments.estimate(),
            marginals: marginals.map(|m| m.finish()).transpose()?,
            distinct_assignments: self.leaves.len(),
        })
    }

    /// Enumerates every formula assignment the guarded process can emit,
    /// with its exact emission probability.
    pub fn support(&mut self) -> Result<Vec<(Sample, f64)>, FisError> {
        let mut out = Vec::new();
        let mut stack = vec![(Vec::new(), 0.0f64)];
        while let Some((prefix, log_q)) = stack.pop() {
            if prefix.len() == self.h.len() {
                let leaf = self.leaf(&prefix, false)?;
                let sample = Sample {
                    h: FormulaAssignment {
                        assignments: prefix.iter().copied().enumerate().collect(),
                    },
                    qb: log_q.exp(),
                    log_qb: log_q,
                    log_count: leaf.log_count,
                    log_soft_weight: leaf.log_soft_weight,
                };
                out.push((sample, log_q.exp()));
                continue;
            }
            let branches: Vec<(bool, f64)> = match self.step(&prefix) {
                Step::Forced(v) => vec![(v, 0.0)],
                Step::Free(p) => vec![(true, p.ln()), (false, (1.0 - p).ln())],
            };
            for (v, lp) in branches {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut next = prefix.clone();
                next.push(v);
                stack.push((next, log_q + lp));
            }
        }
        Ok(out)
    }
}

fn blocks(n: usize) -> impl Iterator<Item = usize> {
    (0..n.div_ceil(BLOCK)).map(move |b| BLOCK.min(n - b * BLOCK))
}

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingRun {
    pub estimate: Estimate,
    pub marginals: Option<Vec<f64>>,
    /// Distinct formula assignments seen (0 for variable sampling).
    pub distinct_assignments: usize,
}

/// Draws one formula sample.
pub fn sample_formula_assignment<P: Proposal, R: Rng + ?Sized>(
    m: &PropMrf,
    h: &[Clause],
    proposal: &P,
    rng: &mut R,
) -> Result<Sample, FisError> {
    FisSampler::new(m, h.to_vec(), proposal)?.draw(rng)
}

/// The default clause sequence: the soft clauses in declaration order.
pub fn default_h(m: &PropMrf) -> Vec<Clause> {
    m.soft.iter().map(|s| s.clause.clone()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    pub samples: usize,
    pub seed: u64,
    pub bp: BpConfig,
    pub min_prob: f64,
    /// Worker threads; blocks are dealt round-robin.
    pub jobs: usize,
    /// Formula sequence for `Fis`; defaults to the soft clauses.
    pub h: Option<Vec<Clause>>,
    pub marginals: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            method: Method::Fis,
            samples: 1000,
            seed: 0,
            bp: BpConfig::default(),
            min_prob: DEFAULT_MIN_PROB,
            jobs: 1,
            h: None,
            marginals: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingReport {
    pub run: SamplingRun,
    pub bp_iterations: usize,
    pub bp_converged: bool,
}

/// Runs belief propagation and then the chosen sampler.
pub fn sample(m: &PropMrf, config: &SamplerConfig) -> Result<SamplingReport, FisError> {
    if config.samples == 0 {
        return Err(FisError::NoSamples);
    }
    if config.method == Method::Fis && !is_satisfiable(&m.hard) {
        return Err(FisError::NoConsistentSample);
    }
    let bp = run_bp(m, &config.bp)?;
    let (bp_iterations, bp_converged) = (bp.iterations, bp.converged);
    let jobs = config.jobs.max(1);
    let run = match config.method {
        Method::Fis => {
            let h = config.h.clone().unwrap_or_else(|| default_h(m));
            let proposal = BpProposal::new(m, &h, bp, config.min_prob);
            parallel_blocks(m.num_vars as usize, config, jobs, |idx, b, size, mom, marg| {
                let mut rng = block_rng(config.seed, b);
                let sampler = idx.get_or_insert_with(|| FisSampler::new(m, h.clone(), &proposal).expect("checked"));
                sampler.run_block(&mut rng, size, mom, marg)?;
                Ok(sampler.leaves.len())
            })?
        }
        Method::Vis => {
            let q: Vec<f64> = crate::bp::variable_proposal(&bp)
                .into_iter()
                .map(|p| p.clamp(config.min_prob, 1.0 - config.min_prob))
                .collect();
            parallel_blocks(m.num_vars as usize, config, jobs, |_: &mut Option<()>, b, size, mom, marg| {
                let mut rng = block_rng(config.seed, b);
                vis_block(m, &q, &mut rng, size, mom, marg);
                Ok(0)
            })?
        }
    };
    Ok(SamplingReport {
        run,
        bp_iterations,
        bp_converged,
    })
}

type BlockResult = (LogMoments, Option<WeightedMarginals>);
type WorkerResult = Result<(Vec<(usize, BlockResult)>, usize), FisError>;

fn parallel_blocks<S, F>(num_vars: usize, config: &SamplerConfig, jobs: usize, f: F) -> Result<SamplingRun, FisError>
where
    F: Fn(&mut Option<S>, usize, usize, &mut LogMoments, Option<&mut WeightedMarginals>) -> Result<usize, FisError> + Sync,
{
    let sizes: Vec<usize> = blocks(config.samples).collect();
    let worker = |w: usize| -> WorkerResult {
        let mut state: Option<S> = None;
        let mut out = Vec::new();
        let mut distinct = 0;
        for b in (w..sizes.len()).step_by(jobs) {
            let mut mom = LogMoments::default();
            let mut marg = config.marginals.then(|| WeightedMarginals::new(num_vars));
            distinct = f(&mut state, b, sizes[b], &mut mom, marg.as_mut())?;
            out.push((b, (mom, marg)));
        }
        Ok((out, distinct))
    };
    let results: Vec<WorkerResult> = if jobs == 1 {
        vec![worker(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..jobs).map(|w| s.spawn(move || worker(w))).collect();
            handles.into_iter().map(|h| h.join().expect("sampling worker panicked")).collect()
        })
    };
    let mut per_block: Vec<Option<BlockResult>> = vec![None; sizes.len()];
    let mut distinct = 0;
    for r in results {
        let (blocks, d) = r?;
        distinct = distinct.max(d);
        for (b, res) in blocks {
            per_block[b] = Some(res);
        }
    }
    let mut moments = LogMoments::default();
    let mut marginals = config.marginals.then(|| WeightedMarginals::new(num_vars));
    for (mom, marg) in per_block.into_iter().map(|r| r.expect("every block ran")) {
        moments.merge(&mom);
        if let (Some(acc), Some(marg)) = (marginals.as_mut(), marg) {
            acc.merge(&marg);
        }
    }
    Ok(SamplingRun {
        estimate: moments.estimate(),
        marginals: marginals.map(|m| m.finish()).transpose()?,
        distinct_assignments: distinct,
    })
}

fn soft_log_weight(m: &PropMrf, x: &[bool]) -> f64 {
    m.soft.iter().filter(|s| s.clause.eval_total(x)).map(|s| s.weight).sum()
}

fn vis_block<R: Rng + ?Sized>(
    m: &PropMrf,
    q: &[f64],
    rng: &mut R,
    n: usize,
    moments: &mut LogMoments,
    mut marginals: Option<&mut WeightedMarginals>,
) {
    let mut x = vec![false; q.len()];
    let mut ind = vec![0.0; q.len()];
    for _ in 0..n {
        let mut log_q = 0.0;
        for (j, &p) in q.iter().enumerate() {
            x[j] = rng.gen::<f64>() < p;
            log_q += if x[j] { p.ln() } else { (1.0 - p).ln() };
            ind[j] = if x[j] { 1.0 } else { 0.0 };
        }
        let log_est = if m.hard.iter().all(|c| c.eval_total(&x)) {
            soft_log_weight(m, &x) - log_q
        } else {
            f64::NEG_INFINITY
        };
        moments.push(log_est);
        if let Some(acc) = marginals.as_deref_mut() {
            acc.push(log_est, &ind);
        }
    }
}

/// Convenience wrapper returning only the estimate.
pub fn estimate_z(m: &PropMrf, method: Method, n: usize, seed: u64, bp: BpConfig) -> Result<Estimate, FisError> {
    let config = SamplerConfig {
        method,
        samples: n,
        seed,
        bp,
        ..SamplerConfig::default()
    };
    Ok(sample(m, &config)?.run.estimate)
}

fn check_enumerable(m: &PropMrf) -> Result<(), FisError> {
    if m.num_vars > MAX_ENUMERATION_VARS {
        Err(FisError::TooManyVariables {
            n: m.num_vars,
            bound: MAX_ENUMERATION_VARS,
        })
    } else {
        Ok(())
    }
}

fn total_assignments(n: u32) -> impl Iterator<Item = Vec<bool>> {
    (0u64..1 << n).map(move |mask| (0..n).map(|j| mask >> j & 1 == 1).collect())
}

/// Distribution over formula assignments induced by a product distribution
/// `q`: `U(h)` is the `q`-mass of the solutions of the hard clauses that
/// give `H` the values `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct UDistribution {
    pub r: usize,
    /// Unnormalized masses of the consistent formula assignments.
    pub mass: HashMap<Vec<bool>, f64>,
    /// `q`-mass of all solutions of the hard clauses.
    pub total: f64,
    prefix_mass: HashMap<Vec<bool>, f64>,
}

impl UDistribution {
    pub fn prob(&self, h: &[bool]) -> f64 {
        self.mass.get(h).copied().unwrap_or(0.0) / self.total
    }

    pub fn prefix_mass(&self, prefix: &[bool]) -> f64 {
        self.prefix_mass.get(prefix).copied().unwrap_or(0.0)
    }
}

impl Proposal for UDistribution {
    fn prob_true(&self, _: usize, _: &Clause, prefix: &[bool], _: &Assignment) -> f64 {
        let all = self.prefix_mass(prefix);
        if all <= 0.0 {
            return 0.5;
        }
        let mut t = prefix.to_vec();
        t.push(true);
        self.prefix_mass(&t) / all
    }
}

pub fn u_from_q(m: &PropMrf, q: &[f64], h: &[Clause]) -> Result<UDistribution, FisError> {
    check_enumerable(m)?;
    let mut mass: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut total = 0.0;
    for x in total_assignments(m.num_vars) {
        if !m.hard.iter().all(|c| c.eval_total(&x)) {
            continue;
        }
        let qx: f64 = x.iter().zip(q).map(|(&b, &p)| if b { p } else { 1.0 - p }).product();
        let hx: Vec<bool> = h.iter().map(|c| c.eval_total(&x)).collect();
        *mass.entry(hx).or_default() += qx;
        total += qx;
    }
    let mut prefix_mass: HashMap<Vec<bool>, f64> = HashMap::new();
    for (hx, &w) in &mass {
        for len in 0..=hx.len() {
            *prefix_mass.entry(hx[..len].to_vec()).or_default() += w;
        }
    }
    Ok(UDistribution {
        r: h.len(),
        mass,
        total,
        prefix_mass,
    })
}

/// Exact mean and variance of a single-sample estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactMoments {
    pub mean: f64,
    pub variance: f64,
    /// Total probability of the enumerated outcomes.
    pub mass: f64,
}

fn moments_of(outcomes: &[(f64, f64)]) -> ExactMoments {
    let mass: f64 = outcomes.iter().map(|(p, _)| p).sum();
    let mean: f64 = outcomes.iter().map(|(p, e)| p * e).sum();
    let variance = outcomes.iter().map(|(p, e)| p * (e - mean).powi(2)).sum();
    ExactMoments { mean, variance, mass }
}

/// Exact moments of the formula estimator under `proposal`, by enumerating
/// the guarded sequential process.
pub fn fis_exact_moments<P: Proposal>(m: &PropMrf, h: &[Clause], proposal: &P) -> Result<ExactMoments, FisError> {
    check_enumerable(m)?;
    let mut sampler = FisSampler::new(m, h.to_vec(), proposal)?;
    let outcomes: Vec<(f64, f64)> = sampler
        .support()?
        .into_iter()
        .map(|(s, p)| (p, s.log_estimate().exp()))
        .collect();
    Ok(moments_of(&outcomes))
}

/// Exact moments of the variable estimator under the product distribution `q`.
pub fn vis_exact_moments(m: &PropMrf, q: &[f64]) -> Result<ExactMoments, FisError> {
    check_enumerable(m)?;
    let outcomes: Vec<(f64, f64)> = total_assignments(m.num_vars)
        .map(|x| {
            let qx: f64 = x.iter().zip(q).map(|(&b, &p)| if b { p } else { 1.0 - p }).product();
            let e = if qx > 0.0 && m.hard.iter().all(|c| c.eval_total(&x)) {
                soft_log_weight(m, &x).exp() / qx
            } else {
                0.0
            };
            (qx, e)
        })
        .collect();
    Ok(moments_of(&outcomes))
}
