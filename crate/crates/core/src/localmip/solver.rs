//! Depth-first branch and bound.
//!
//! Variables are branched in index order. Each node tightens the variable
//! box by interval propagation over the constraints and is pruned when the
//! box bound (linear part at its best corner plus the best value of every
//! threshold term over its expression range) cannot beat the incumbent.
//! An optional 1-opt/transfer local search seeds the incumbent.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::{satisfied, IntegerProgram, Sense, FEAS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IpStatus {
    Optimal,
    Infeasible,
    /// Search stopped early; the assignment is the best one found.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IPSolution {
    /// `None` when no feasible point was found.
    pub assignment: Option<Vec<u32>>,
    pub objective: f64,
    pub status: IpStatus,
    pub nodes: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    pub node_limit: Option<u64>,
    pub time_budget: Option<Duration>,
    pub warm_start: Option<Vec<u32>>,
    pub local_search: bool,
}

impl SolveOptions {
    pub fn exhaustive() -> Self {
        Self::default()
    }

    pub fn with_nodes(limit: u64) -> Self {
        Self { node_limit: Some(limit), local_search: true, ..Self::default() }
    }
}

/// Per-variable incidence lists shared by search and local search.
struct Index {
    obj: Vec<f64>,
    in_pw: Vec<Vec<(usize, f64)>>,
    in_con: Vec<Vec<(usize, f64)>>,
    /// Variables with a positive objective coefficient whose linear part
    /// is bounded by a fractional knapsack over one `≤` row.
    groups: Vec<Group>,
    grouped: Vec<bool>,
}

/// A `≤` row with positive coefficients and its profitable members, sorted
/// by decreasing profit per unit of capacity.
struct Group {
    row: usize,
    members: Vec<(usize, f64, f64)>,
}

impl Index {
    fn new(ip: &IntegerProgram) -> Self {
        let n = ip.vars.len();
        let mut obj = vec![0.0; n];
        for &(v, c) in &ip.objective {
            obj[v] += c;
        }
        let mut in_pw = vec![Vec::new(); n];
        for (k, p) in ip.piecewise.iter().enumerate() {
            for &(v, a) in &p.terms {
                in_pw[v].push((k, a));
            }
        }
        let mut in_con = vec![Vec::new(); n];
        for (k, c) in ip.constraints.iter().enumerate() {
            for &(v, a) in &c.terms {
                in_con[v].push((k, a));
            }
        }
        let mut grouped = vec![false; n];
        let mut groups = Vec::new();
        for (k, c) in ip.constraints.iter().enumerate() {
            if c.sense != Sense::Le || c.terms.iter().any(|t| t.1 <= 0.0) {
                continue;
            }
            let mut members: Vec<(usize, f64, f64)> = Vec::new();
            for &(v, a) in &c.terms {
                if obj[v] > 0.0 && !grouped[v] && !members.iter().any(|m| m.0 == v) {
                    members.push((v, obj[v], a));
                }
            }
            if members.is_empty() || c.terms.iter().filter(|t| members.iter().any(|m| m.0 == t.0)).count() != members.len() {
                continue;
            }
            for m in &members {
                grouped[m.0] = true;
            }
            members.sort_by(|x, y| (y.1 / y.2).total_cmp(&(x.1 / x.2)).then(x.0.cmp(&y.0)));
            groups.push(Group { row: k, members });
        }
        Self { obj, in_pw, in_con, groups, grouped }
    }
}

pub fn solve_exact(ip: &IntegerProgram, opts: &SolveOptions) -> IPSolution {
    let index = Index::new(ip);
    let mut search = Search {
        ip,
        index: &index,
        best: None,
        best_value: f64::NEG_INFINITY,
        nodes: 0,
        node_limit: opts.node_limit.unwrap_or(u64::MAX),
        deadline: opts.time_budget.map(|d| Instant::now() + d),
        stopped: false,
    };
    if let Some(start) = opts.warm_start.as_ref().filter(|x| ip.is_feasible(x)) {
        let x = if opts.local_search { improve(ip, &index, start.clone()) } else { start.clone() };
        search.offer(x);
    } else if opts.local_search {
        let zero = vec![0; ip.vars.len()];
        if ip.is_feasible(&zero) {
            search.offer(improve(ip, &index, zero));
        }
    }
    let lo = vec![0u32; ip.vars.len()];
    let hi: Vec<u32> = ip.vars.iter().map(|v| v.ub).collect();
    search.dfs(lo, hi, 0);
    let status = match (&search.best, search.stopped) {
        (_, true) => IpStatus::BudgetExhausted,
        (Some(_), false) => IpStatus::Optimal,
        (None, false) => IpStatus::Infeasible,
    };
    let objective = search.best.as_ref().map_or(f64::NEG_INFINITY, |x| ip.evaluate(x));
    IPSolution { assignment: search.best, objective, status, nodes: search.nodes }
}

struct Search<'a> {
    ip: &'a IntegerProgram,
    index: &'a Index,
    best: Option<Vec<u32>>,
    best_value: f64,
    nodes: u64,
    node_limit: u64,
    deadline: Option<Instant>,
    stopped: bool,
}

impl Search<'_> {
    fn offer(&mut self, x: Vec<u32>) {
        let v = self.ip.evaluate(&x);
        if v > self.best_value {
            self.best_value = v;
            self.best = Some(x);
        }
    }

    fn budget_left(&mut self) -> bool {
        if self.stopped {
            return false;
        }
        self.nodes += 1;
        if self.nodes > self.node_limit {
            self.stopped = true;
        } else if self.nodes % 256 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d) {
            self.stopped = true;
        }
        !self.stopped
    }

    fn bound(&self, lo: &[u32], hi: &[u32]) -> f64 {
        let mut b = self.ip.constant;
        for (v, &c) in self.index.obj.iter().enumerate() {
            if !self.index.grouped[v] {
                b += if c > 0.0 { c * f64::from(hi[v]) } else { c * f64::from(lo[v]) };
            }
        }
        for g in &self.index.groups {
            let row = &self.ip.constraints[g.row];
            let mut cap = row.rhs - row.terms.iter().map(|&(v, a)| a * f64::from(lo[v])).sum::<f64>();
            for &(v, c, a) in &g.members {
                b += c * f64::from(lo[v]);
                if cap > 0.0 {
                    let take = f64::from(hi[v] - lo[v]).min(cap / a);
                    b += c * take;
                    cap -= a * take;
                }
            }
        }
        for p in &self.ip.piecewise {
            let (mut emin, mut emax) = (p.constant, p.constant);
            for &(v, a) in &p.terms {
                if a >= 0.0 {
                    emin += a * f64::from(lo[v]);
                    emax += a * f64::from(hi[v]);
                } else {
                    emin += a * f64::from(hi[v]);
                    emax += a * f64::from(lo[v]);
                }
            }
            let th = p.threshold;
            let g_hi = if emax >= th { if emin < th { emax.min(th).max(0.0) } else { 0.0 } } else { emax };
            let g_lo = if emin < th { if emax >= th { emin.min(0.0) } else { emin } } else { 0.0 };
            b += if p.coef >= 0.0 { p.coef * g_hi } else { p.coef * g_lo };
        }
        b
    }

    fn dfs(&mut self, mut lo: Vec<u32>, mut hi: Vec<u32>, from: usize) {
        if !self.budget_left() || !propagate(self.ip, &mut lo, &mut hi) {
            return;
        }
        if self.best.is_some() && self.bound(&lo, &hi) <= self.best_value + 1e-12 * (1.0 + self.best_value.abs()) {
            return;
        }
        let Some(v) = (from..lo.len()).find(|&v| lo[v] < hi[v]) else {
            if self.ip.is_feasible(&lo) {
                self.offer(lo);
            }
            return;
        };
        let hint = self.best.as_ref().map(|x| x[v]).filter(|&h| h >= lo[v] && h <= hi[v]);
        let values = hint.into_iter().chain((lo[v]..=hi[v]).filter(|&w| Some(w) != hint));
        for w in values.collect::<Vec<_>>() {
            let (mut l, mut h) = (lo.clone(), hi.clone());
            l[v] = w;
            h[v] = w;
            self.dfs(l, h, v + 1);
            if self.stopped {
                return;
            }
        }
    }
}

/// Tightens `[lo, hi]` until no constraint changes it. Returns `false` when
/// some constraint cannot be met inside the box.
fn propagate(ip: &IntegerProgram, lo: &mut [u32], hi: &mut [u32]) -> bool {
    for _ in 0..64 {
        let mut changed = false;
        for c in &ip.constraints {
            let (mut amin, mut amax) = (0.0, 0.0);
            for &(v, a) in &c.terms {
                let (l, h) = (a * f64::from(lo[v]), a * f64::from(hi[v]));
                amin += l.min(h);
                amax += l.max(h);
            }
            let tol = FEAS_TOL * (1.0 + c.rhs.abs());
            let upper = matches!(c.sense, Sense::Le | Sense::Eq);
            let lower = matches!(c.sense, Sense::Ge | Sense::Eq);
            if (upper && amin > c.rhs + tol) || (lower && amax < c.rhs - tol) {
                return false;
            }
            for &(v, a) in &c.terms {
                if a == 0.0 {
                    continue;
                }
                let (l, h) = (a * f64::from(lo[v]), a * f64::from(hi[v]));
                let (own_min, own_max) = (l.min(h), l.max(h));
                let mut new_lo = f64::from(lo[v]);
                let mut new_hi = f64::from(hi[v]);
                if upper {
                    // a·x ≤ rhs − (amin − own_min)
                    let cap = (c.rhs - (amin - own_min)) / a;
                    if a > 0.0 {
                        new_hi = new_hi.min((cap + tol).floor());
                    } else {
                        new_lo = new_lo.max((cap - tol).ceil());
                    }
                }
                if lower {
                    let floor_ = (c.rhs - (amax - own_max)) / a;
                    if a > 0.0 {
                        new_lo = new_lo.max((floor_ - tol).ceil());
                    } else {
                        new_hi = new_hi.min((floor_ + tol).floor());
                    }
                }
                if new_lo > new_hi {
                    return false;
                }
                let (nl, nh) = (new_lo.max(0.0) as u32, new_hi.max(0.0) as u32);
                if nl != lo[v] || nh != hi[v] {
                    if nl > nh {
                        return false;
                    }
                    lo[v] = nl;
                    hi[v] = nh;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    true
}

/// Local search from a feasible point: repeatedly applies the best
/// improving single-variable reassignment, or failing that the best
/// transfer of units between two variables of one constraint.
fn improve(ip: &IntegerProgram, index: &Index, x: Vec<u32>) -> Vec<u32> {
    let mut ls = LocalState::new(ip, index, x);
    let rows: Vec<Vec<usize>> = ip
        .constraints
        .iter()
        .filter(|c| c.terms.len() >= 2)
        .map(|c| c.terms.iter().map(|t| t.0).collect())
        .collect();
    for _ in 0..1000 {
        let eps = 1e-12 * (1.0 + ls.value.abs());
        let mut best: Option<(f64, Vec<(usize, i64)>)> = None;
        for v in 0..ls.x.len() {
            let cur = i64::from(ls.x[v]);
            for w in 0..=i64::from(ip.vars[v].ub) {
                if w == cur {
                    continue;
                }
                if let Some(d) = ls.try_moves(&[(v, w - cur)]) {
                    if d > eps && best.as_ref().is_none_or(|b| d > b.0) {
                        best = Some((d, vec![(v, w - cur)]));
                    }
                }
            }
        }
        if best.is_none() {
            for row in &rows {
                for &v in row {
                    let xv = i64::from(ls.x[v]);
                    for &w in row {
                        if w == v {
                            continue;
                        }
                        for k in 1..=xv {
                            let mv = [(v, -k), (w, k)];
                            if let Some(d) = ls.try_moves(&mv) {
                                if d > eps && best.as_ref().is_none_or(|b| d > b.0) {
                                    best = Some((d, mv.to_vec()));
                                }
                            }
                        }
                    }
                }
            }
        }
        match best {
            Some((_, mv)) => ls.commit(&mv),
            None => break,
        }
    }
    ls.x
}

struct LocalState<'a> {
    ip: &'a IntegerProgram,
    index: &'a Index,
    x: Vec<u32>,
    act: Vec<f64>,
    expr: Vec<f64>,
    value: f64,
}

impl<'a> LocalState<'a> {
    fn new(ip: &'a IntegerProgram, index: &'a Index, x: Vec<u32>) -> Self {
        let act = ip.constraints.iter().map(|c| c.terms.iter().map(|&(v, a)| a * f64::from(x[v])).sum()).collect();
        let expr = ip.piecewise.iter().map(|p| p.expr(&x)).collect();
        let value = ip.evaluate(&x);
        Self { ip, index, x, act, expr, value }
    }

    /// Objective change of applying `moves` if the result stays feasible.
    fn try_moves(&mut self, moves: &[(usize, i64)]) -> Option<f64> {
        for &(v, d) in moves {
            let nv = i64::from(self.x[v]) + d;
            if nv < 0 || nv > i64::from(self.ip.vars[v].ub) {
                return None;
            }
        }
        let delta = self.shift(moves, 1.0);
        let ok = moves.iter().all(|&(v, _)| {
            self.index.in_con[v].iter().all(|&(k, _)| {
                let c = &self.ip.constraints[k];
                satisfied(self.act[k], c.sense, c.rhs)
            })
        });
        self.shift(moves, -1.0);
        ok.then_some(delta)
    }

    fn commit(&mut self, moves: &[(usize, i64)]) {
        let d = self.shift(moves, 1.0);
        self.value += d;
        for &(v, dv) in moves {
            self.x[v] = (i64::from(self.x[v]) + dv) as u32;
        }
    }

    /// Shifts activities and expressions by `sign · moves`; returns the
    /// objective change.
    fn shift(&mut self, moves: &[(usize, i64)], sign: f64) -> f64 {
        let mut delta = 0.0;
        for &(v, d) in moves {
            let d = sign * d as f64;
            delta += self.index.obj[v] * d;
            for &(k, a) in &self.index.in_con[v] {
                self.act[k] += a * d;
            }
            for &(k, a) in &self.index.in_pw[v] {
                let p = &self.ip.piecewise[k];
                let before = p.gate(self.expr[k]);
                self.expr[k] += a * d;
                delta += p.coef * (p.gate(self.expr[k]) - before);
            }
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localmip::Piecewise;

    #[test]
    fn empty_program_is_constant() {
        let ip = IntegerProgram { constant: 4.5, ..IntegerProgram::new("e") };
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.status, IpStatus::Optimal);
        assert_eq!(s.objective, 4.5);
        assert_eq!(s.assignment, Some(vec![]));
    }

    #[test]
    fn knapsack() {
        let mut ip = IntegerProgram::new("k");
        let a = ip.add_var("a", 3);
        let b = ip.add_var("b", 3);
        ip.objective = vec![(a, 3.0), (b, 2.0)];
        ip.add_constraint("cap", vec![(a, 2.0), (b, 1.0)], Sense::Le, 4.0);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.objective, 7.0);
        assert_eq!(s.assignment, Some(vec![1, 2]));
        assert_eq!(s.status, IpStatus::Optimal);
    }

    #[test]
    fn infeasible_program() {
        let mut ip = IntegerProgram::new("i");
        let a = ip.add_var("a", 2);
        ip.objective = vec![(a, 1.0)];
        ip.add_constraint("c", vec![(a, 1.0)], Sense::Ge, 3.0);
        let s = solve_exact(&ip, &SolveOptions::exhaustive());
        assert_eq!(s.status, IpStatus::Infeasible);
        assert!(s.assignment.is_none());
    }

    #[test]
    fn threshold_jump_found_by_search() {
        // Two units are needed to lift e over the threshold; each unit costs
        // more than the linear gain, so only the jump pays off.
        let mut ip = IntegerProgram::new("j");
        let a = ip.add_var("a", 3);
        ip.objective = vec![(a, -1.5)];
        ip.piecewise.push(Piecewise { name: "g".into(), coef: 1.0, constant: -6.0, terms: vec![(a, 1.0)], threshold: -4.0 });
        let s = solve_exact(&ip, &SolveOptions::with_nodes(1000));
        assert_eq!(s.assignment, Some(vec![2]));
        assert_eq!(s.objective, -3.0);
    }

    #[test]
    fn node_budget_keeps_incumbent() {
        let mut ip = IntegerProgram::new("b");
        let vars: Vec<usize> = (0..12).map(|k| ip.add_var(format!("x{k}"), 3)).collect();
        ip.objective = vars.iter().map(|&v| (v, 1.0 + v as f64 * 0.01)).collect();
        ip.add_constraint("cap", vars.iter().map(|&v| (v, 1.0)).collect(), Sense::Le, 7.0);
        let s = solve_exact(&ip, &SolveOptions { node_limit: Some(5), warm_start: Some(vec![0; 12]), ..Default::default() });
        assert_eq!(s.status, IpStatus::BudgetExhausted);
        assert!(s.assignment.is_some());
        let full = solve_exact(&ip, &SolveOptions::with_nodes(1_000_000));
        assert_eq!(full.status, IpStatus::Optimal);
        assert!((full.objective - (3.0 * 1.11 + 3.0 * 1.10 + 1.09)).abs() < 1e-9);
    }
}
