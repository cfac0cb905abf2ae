//! Primal graph utilities: connected components and greedy min-fill
//! elimination orders.

use crate::model::{Clause, Lit, PropMrf, SoftClause, Var};

/// A variable-disjoint piece of a model. `model` is renumbered so that its
/// variable `i + 1` is `variables[i]` of the parent.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub variables: Vec<Var>,
    pub model: PropMrf,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Splits `m` into components of its primal graph, ordered by smallest
/// contained variable. Variables that occur in no clause are left out.
pub fn connected_components(m: &PropMrf) -> Vec<Component> {
    let n = m.num_vars as usize;
    let mut uf = UnionFind::new(n + 1);
    let mut occurs = vec![false; n + 1];
    for c in m.clauses() {
        let mut vars = c.vars();
        if let Some(first) = vars.next() {
            occurs[first as usize] = true;
            for v in vars {
                occurs[v as usize] = true;
                uf.union(first as usize, v as usize);
            }
        }
    }

    let mut slot_of_root = vec![usize::MAX; n + 1];
    let mut comps: Vec<Component> = Vec::new();
    let mut local = vec![0 as Var; n + 1];
    for v in 1..=n {
        if !occurs[v] {
            continue;
        }
        let r = uf.find(v);
        if slot_of_root[r] == usize::MAX {
            slot_of_root[r] = comps.len();
            comps.push(Component {
                variables: Vec::new(),
                model: PropMrf::new(0),
            });
        }
        let comp = &mut comps[slot_of_root[r]];
        comp.variables.push(v as Var);
        local[v] = comp.variables.len() as Var;
        comp.model.num_vars += 1;
    }

    let relabel = |c: &Clause| {
        Clause::from_sorted_unchecked(
            c.lits()
                .iter()
                .map(|l| Lit::new(local[l.var() as usize], l.is_positive()))
                .collect(),
        )
    };
    for c in &m.hard {
        if let Some(v) = c.vars().next() {
            let slot = slot_of_root[uf.find(v as usize)];
            comps[slot].model.hard.push(relabel(c));
        }
    }
    for s in &m.soft {
        if let Some(v) = s.clause.vars().next() {
            let slot = slot_of_root[uf.find(v as usize)];
            comps[slot]
                .model
                .soft
                .push(SoftClause::new(relabel(&s.clause), s.weight));
        }
    }
    comps
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WidthEstimate {
    /// Largest neighborhood met while eliminating along `order`.
    pub width: usize,
    pub order: Vec<Var>,
}

/// Adjacency matrix of the primal graph over variables `1..=num_vars`
/// (row/column 0 unused).
pub fn primal_adjacency(m: &PropMrf) -> Vec<Vec<bool>> {
    let n = m.num_vars as usize;
    let mut adj = vec![vec![false; n + 1]; n + 1];
    for c in m.clauses() {
        let vars: Vec<usize> = c.vars().map(|v| v as usize).collect();
        for (i, &a) in vars.iter().enumerate() {
            for &b in &vars[i + 1..] {
                adj[a][b] = true;
                adj[b][a] = true;
            }
        }
    }
    adj
}

/// Greedy min-fill elimination over all `num_vars` variables, ties broken by
/// the smaller index.
pub fn minfill_width(m: &PropMrf) -> WidthEstimate {
    minfill_on_adjacency(primal_adjacency(m))
}

pub(crate) fn minfill_on_adjacency(mut adj: Vec<Vec<bool>>) -> WidthEstimate {
    let n = adj.len().saturating_sub(1);
    let mut alive = vec![true; n + 1];
    alive[0] = false;
    let mut neighbors: Vec<Vec<usize>> = (0..=n)
        .map(|v| (1..=n).filter(|&u| adj[v][u]).collect())
        .collect();
    let mut order = Vec::with_capacity(n);
    let mut width = 0;
    for _ in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for v in 1..=n {
            if !alive[v] {
                continue;
            }
            let nb = &neighbors[v];
            let mut fill = 0;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if !adj[a][b] {
                        fill += 1;
                    }
                }
            }
            if best.is_none_or(|(f, _)| fill < f) {
                best = Some((fill, v));
            }
        }
        let (_, v) = best.expect("a live vertex remains");
        let nb = std::mem::take(&mut neighbors[v]);
        width = width.max(nb.len());
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                if !adj[a][b] {
                    adj[a][b] = true;
                    adj[b][a] = true;
                    neighbors[a].push(b);
                    neighbors[b].push(a);
                }
            }
        }
        for &a in &nb {
            adj[a][v] = false;
            neighbors[a].retain(|&x| x != v);
        }
        alive[v] = false;
        order.push(v as Var);
    }
    WidthEstimate { width, order }
}
