//! Propositional Markov random fields: literals, clauses, the model triple,
//! partial assignments, and the line-oriented model / query file formats.
//!
//! Model files look like
//!
//! ```text
//! c comment
//! p pmrf 3
//! h 1 -2 0
//! s 0.5 2 3 0
//! ```
//!
//! where `h` lines are hard clauses and `s` lines carry a natural-log weight
//! followed by the literals of a soft clause. Query files hold one clause per
//! line, each terminated by `0`.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

/// 1-based variable index.
pub type Var = u32;

/// A variable or its negation. Ordered by variable first, positive before
/// negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lit {
    var: Var,
    negated: bool,
}

impl Lit {
    pub fn new(var: Var, positive: bool) -> Self {
        assert!(var >= 1, "variables are 1-based");
        Lit {
            var,
            negated: !positive,
        }
    }

    pub fn pos(var: Var) -> Self {
        Lit::new(var, true)
    }

    pub fn neg(var: Var) -> Self {
        Lit::new(var, false)
    }

    /// Builds a literal from a signed DIMACS-style integer.
    pub fn from_dimacs(value: i64) -> Option<Self> {
        if value == 0 || value.unsigned_abs() > u32::MAX as u64 {
            return None;
        }
        Some(Lit::new(value.unsigned_abs() as Var, value > 0))
    }

    pub fn to_dimacs(self) -> i64 {
        if self.negated {
            -(self.var as i64)
        } else {
            self.var as i64
        }
    }

    pub fn var(self) -> Var {
        self.var
    }

    pub fn is_positive(self) -> bool {
        !self.negated
    }

    /// Truth value the variable must take for this literal to hold.
    pub fn polarity(self) -> bool {
        !self.negated
    }

    pub fn negate(self) -> Self {
        Lit {
            var: self.var,
            negated: !self.negated,
        }
    }

    pub fn eval(self, value: bool) -> bool {
        value == self.polarity()
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        self.negate()
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClauseError {
    #[error("variable {0} appears twice in a clause")]
    DuplicateVariable(Var),
    #[error("clause contains both polarities of variable {0}")]
    Tautology(Var),
}

/// Disjunction of literals over distinct variables. Literals are kept sorted.
/// The empty clause is allowed and is always false.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Clause {
    lits: Vec<Lit>,
}

impl Clause {
    pub fn new(lits: impl IntoIterator<Item = Lit>) -> Result<Self, ClauseError> {
        let mut lits: Vec<Lit> = lits.into_iter().collect();
        lits.sort_unstable();
        for pair in lits.windows(2) {
            if pair[0].var == pair[1].var {
                return Err(if pair[0] == pair[1] {
                    ClauseError::DuplicateVariable(pair[0].var)
                } else {
                    ClauseError::Tautology(pair[0].var)
                });
            }
        }
        Ok(Clause { lits })
    }

    /// Convenience constructor from signed integers; panics on malformed input.
    pub fn from_dimacs(values: &[i64]) -> Self {
        let lits = values
            .iter()
            .map(|&v| Lit::from_dimacs(v).expect("nonzero literal"));
        Clause::new(lits).expect("well-formed clause")
    }

    pub fn unit(lit: Lit) -> Self {
        Clause { lits: vec![lit] }
    }

    pub fn empty() -> Self {
        Clause { lits: Vec::new() }
    }

    pub fn lits(&self) -> &[Lit] {
        &self.lits
    }

    pub fn len(&self) -> usize {
        self.lits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lits.is_empty()
    }

    pub fn is_unit(&self) -> bool {
        self.lits.len() == 1
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.lits.iter().map(|l| l.var)
    }

    pub fn max_var(&self) -> Var {
        self.lits.last().map_or(0, |l| l.var)
    }

    pub fn contains(&self, lit: Lit) -> bool {
        self.lits.binary_search(&lit).is_ok()
    }

    /// True if every literal of `self` occurs in `other`.
    pub fn is_subset_of(&self, other: &Clause) -> bool {
        if self.lits.len() > other.lits.len() {
            return false;
        }
        let mut it = other.lits.iter();
        'outer: for l in &self.lits {
            for m in it.by_ref() {
                if m == l {
                    continue 'outer;
                }
                if m > l {
                    return false;
                }
            }
            return false;
        }
        true
    }

    /// Literals common to both clauses.
    pub fn intersection(&self, other: &Clause) -> Clause {
        let lits = self
            .lits
            .iter()
            .copied()
            .filter(|l| other.contains(*l))
            .collect();
        Clause { lits }
    }

    /// Unit clauses whose conjunction is the negation of this clause.
    pub fn negation_units(&self) -> Vec<Clause> {
        self.lits.iter().map(|l| Clause::unit(l.negate())).collect()
    }

    pub fn status(&self, a: &Assignment) -> ClauseStatus {
        clause_status(self, a)
    }

    /// Evaluates the clause under a total assignment given as a bit vector
    /// indexed by `var - 1`.
    pub fn eval_total(&self, values: &[bool]) -> bool {
        self.lits
            .iter()
            .any(|l| l.eval(values[l.var as usize - 1]))
    }

    pub(crate) fn from_sorted_unchecked(lits: Vec<Lit>) -> Self {
        debug_assert!(lits.windows(2).all(|p| p[0].var < p[1].var));
        Clause { lits }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lits {
            write!(f, "{} ", l)?;
        }
        write!(f, "0")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftClause {
    pub clause: Clause,
    /// Natural-log potential: the clause contributes `exp(weight)` when satisfied.
    pub weight: f64,
}

impl SoftClause {
    pub fn new(clause: Clause, weight: f64) -> Self {
        assert!(weight.is_finite(), "soft clause weight must be finite");
        SoftClause { clause, weight }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClauseStatus {
    Satisfied,
    Falsified,
    Undetermined,
}

/// Status of `c` under the (possibly partial) assignment `a`.
pub fn clause_status(c: &Clause, a: &Assignment) -> ClauseStatus {
    let mut open = false;
    for l in c.lits() {
        match a.lit_value(*l) {
            Some(true) => return ClauseStatus::Satisfied,
            Some(false) => {}
            None => open = true,
        }
    }
    if open {
        ClauseStatus::Undetermined
    } else {
        ClauseStatus::Falsified
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("literal {lit} out of range for {num_vars} variables")]
    OutOfRange { lit: i64, num_vars: u32 },
}

/// A propositional MRF: `num_vars` Boolean variables, hard clauses and
/// weighted soft clauses.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PropMrf {
    pub num_vars: u32,
    pub hard: Vec<Clause>,
    pub soft: Vec<SoftClause>,
}

impl PropMrf {
    pub fn new(num_vars: u32) -> Self {
        PropMrf {
            num_vars,
            hard: Vec::new(),
            soft: Vec::new(),
        }
    }

    pub fn with_clauses(num_vars: u32, hard: Vec<Clause>, soft: Vec<SoftClause>) -> Result<Self, ModelError> {
        let m = PropMrf {
            num_vars,
            hard,
            soft,
        };
        m.check_range(m.hard.iter().chain(m.soft.iter().map(|s| &s.clause)))?;
        Ok(m)
    }

    pub fn add_hard(&mut self, c: Clause) {
        self.num_vars = self.num_vars.max(c.max_var());
        self.hard.push(c);
    }

    pub fn add_soft(&mut self, c: Clause, weight: f64) {
        self.num_vars = self.num_vars.max(c.max_var());
        self.soft.push(SoftClause::new(c, weight));
    }

    pub fn num_clauses(&self) -> usize {
        self.hard.len() + self.soft.len()
    }

    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.hard.iter().chain(self.soft.iter().map(|s| &s.clause))
    }

    pub fn max_clause_len(&self) -> usize {
        self.clauses().map(Clause::len).max().unwrap_or(0)
    }

    /// Variables that occur in at least one clause, ascending.
    pub fn occurring_vars(&self) -> Vec<Var> {
        let mut seen = vec![false; self.num_vars as usize + 1];
        for c in self.clauses() {
            for v in c.vars() {
                seen[v as usize] = true;
            }
        }
        (1..=self.num_vars).filter(|&v| seen[v as usize]).collect()
    }

    fn check_range<'a>(&self, clauses: impl IntoIterator<Item = &'a Clause>) -> Result<(), ModelError> {
        for c in clauses {
            if let Some(l) = c.lits().iter().find(|l| l.var() > self.num_vars) {
                return Err(ModelError::OutOfRange {
                    lit: l.to_dimacs(),
                    num_vars: self.num_vars,
                });
            }
        }
        Ok(())
    }

    /// `self` with the clauses of `query` appended to the hard clauses.
    pub fn conjoin_query(&self, query: &[Clause]) -> Result<PropMrf, ModelError> {
        self.check_range(query)?;
        let mut out = self.clone();
        out.hard.extend(query.iter().cloned());
        Ok(out)
    }

    /// Serializes in the model file format. `parse_model` reads it back.
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "p pmrf {}", self.num_vars)?;
        for c in &self.hard {
            writeln!(w, "h {}", c)?;
        }
        for s in &self.soft {
            writeln!(w, "s {:?} {}", s.weight, s.clause)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Partial truth assignment over variables `1..=n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Assignment {
    values: Vec<Option<bool>>,
}

impl Assignment {
    pub fn new(num_vars: u32) -> Self {
        Assignment {
            values: vec![None; num_vars as usize + 1],
        }
    }

    pub fn from_total(values: &[bool]) -> Self {
        let mut a = Assignment::new(values.len() as u32);
        for (i, &v) in values.iter().enumerate() {
            a.values[i + 1] = Some(v);
        }
        a
    }

    pub fn num_vars(&self) -> u32 {
        self.values.len().saturating_sub(1) as u32
    }

    pub fn get(&self, var: Var) -> Option<bool> {
        self.values.get(var as usize).copied().flatten()
    }

    pub fn set(&mut self, var: Var, value: bool) {
        let idx = var as usize;
        if idx >= self.values.len() {
            self.values.resize(idx + 1, None);
        }
        self.values[idx] = Some(value);
    }

    pub fn unset(&mut self, var: Var) {
        if let Some(slot) = self.values.get_mut(var as usize) {
            *slot = None;
        }
    }

    pub fn lit_value(&self, lit: Lit) -> Option<bool> {
        self.get(lit.var()).map(|v| lit.eval(v))
    }

    /// Makes `lit` true.
    pub fn assign(&mut self, lit: Lit) {
        self.set(lit.var(), lit.polarity());
    }

    pub fn is_total(&self) -> bool {
        self.values.iter().skip(1).all(Option::is_some)
    }

    pub fn assigned(&self) -> impl Iterator<Item = (Var, bool)> + '_ {
        self.values
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(i, v)| v.map(|b| (i as Var, b)))
    }

    pub fn num_assigned(&self) -> usize {
        self.values.iter().skip(1).filter(|v| v.is_some()).count()
    }

    /// Restriction to `scope`, in scope order.
    pub fn restrict(&self, scope: &[Var]) -> Vec<Option<bool>> {
        scope.iter().map(|&v| self.get(v)).collect()
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: literal {lit} out of range for {num_vars} variables")]
    OutOfRange { line: usize, lit: i64, num_vars: u32 },
    #[error("line {line}: variable {var} appears with conflicting signs in one clause")]
    DuplicateVariable { line: usize, var: Var },
    #[error("line {line}: tautological clause (contains {var} and -{var})")]
    Tautology { line: usize, var: Var },
    #[error("line {line}: expected `p pmrf <num_vars>` header before clauses")]
    MissingHeader { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Malformed { line, .. }
            | ParseError::OutOfRange { line, .. }
            | ParseError::DuplicateVariable { line, .. }
            | ParseError::Tautology { line, .. }
            | ParseError::MissingHeader { line } => Some(*line),
            ParseError::Io(_) => None,
        }
    }
}

fn is_comment(trimmed: &str) -> bool {
    trimmed.is_empty()
        || trimmed.starts_with('#')
        || trimmed == "c"
        || trimmed.starts_with("c ")
        || trimmed.starts_with("c\t")
}

/// Reads literals terminated by `0`. Repeated identical literals collapse.
fn parse_clause<'a>(
    mut tokens: impl Iterator<Item = &'a str>,
    line: usize,
    num_vars: u32,
) -> Result<Clause, ParseError> {
    let mut lits = Vec::new();
    let mut terminated = false;
    for tok in tokens.by_ref() {
        let value: i64 = tok.parse().map_err(|_| ParseError::Malformed {
            line,
            msg: format!("invalid literal `{}`", tok),
        })?;
        if value == 0 {
            terminated = true;
            break;
        }
        if value.unsigned_abs() > num_vars as u64 {
            return Err(ParseError::OutOfRange {
                line,
                lit: value,
                num_vars,
            });
        }
        lits.push(Lit::from_dimacs(value).expect("nonzero"));
    }
    if !terminated {
        return Err(ParseError::Malformed {
            line,
            msg: "clause not terminated by 0".into(),
        });
    }
    if let Some(extra) = tokens.next() {
        return Err(ParseError::Malformed {
            line,
            msg: format!("unexpected token `{}` after terminating 0", extra),
        });
    }
    lits.sort_unstable();
    lits.dedup();
    Clause::new(lits).map_err(|e| match e {
        ClauseError::Tautology(var) => ParseError::Tautology { line, var },
        ClauseError::DuplicateVariable(var) => ParseError::DuplicateVariable { line, var },
    })
}

pub fn parse_model_str(text: &str) -> Result<PropMrf, ParseError> {
    let mut model: Option<PropMrf> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if is_comment(trimmed) {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let tag = tokens.next().expect("nonempty line");
        match tag {
            "p" => {
                if model.is_some() {
                    return Err(ParseError::Malformed {
                        line,
                        msg: "duplicate header".into(),
                    });
                }
                let kind = tokens.next();
                let count = tokens.next().and_then(|t| t.parse::<u32>().ok());
                match (kind, count, tokens.next()) {
                    (Some("pmrf"), Some(n), None) => model = Some(PropMrf::new(n)),
                    _ => {
                        return Err(ParseError::Malformed {
                            line,
                            msg: "expected `p pmrf <num_vars>`".into(),
                        })
                    }
                }
            }
            "h" => {
                let m = model.as_mut().ok_or(ParseError::MissingHeader { line })?;
                let c = parse_clause(tokens, line, m.num_vars)?;
                m.hard.push(c);
            }
            "s" => {
                let m = model.as_mut().ok_or(ParseError::MissingHeader { line })?;
                let wtok = tokens.next().ok_or_else(|| ParseError::Malformed {
                    line,
                    msg: "soft clause without weight".into(),
                })?;
                let weight: f64 = wtok.parse().map_err(|_| ParseError::Malformed {
                    line,
                    msg: format!("invalid weight `{}`", wtok),
                })?;
                if !weight.is_finite() {
                    return Err(ParseError::Malformed {
                        line,
                        msg: format!("weight `{}` is not finite", wtok),
                    });
                }
                let c = parse_clause(tokens, line, m.num_vars)?;
                m.soft.push(SoftClause::new(c, weight));
            }
            other => {
                return Err(ParseError::Malformed {
                    line,
                    msg: format!("unknown line tag `{}`", other),
                })
            }
        }
    }
    model.ok_or(ParseError::MissingHeader {
        line: text.lines().count().max(1),
    })
}

pub fn parse_model<R: Read>(mut reader: R) -> Result<PropMrf, ParseError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_model_str(&text)
}

/// Parses a query file: one clause per non-comment line.
pub fn parse_query_str(text: &str, num_vars: u32) -> Result<Vec<Clause>, ParseError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if is_comment(trimmed) {
            continue;
        }
        out.push(parse_clause(trimmed.split_whitespace(), idx + 1, num_vars)?);
    }
    Ok(out)
}

pub fn parse_query<R: Read>(mut reader: R, num_vars: u32) -> Result<Vec<Clause>, ParseError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_query_str(&text, num_vars)
}
