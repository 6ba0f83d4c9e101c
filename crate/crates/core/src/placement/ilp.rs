//! Small exact integer-program solver.
//!
//! Depth-first branch and bound over bounded integer variables. Each node runs
//! bound propagation on the linear constraints (queue based, only constraints
//! touching a changed variable are revisited) and is pruned with a
//! combinatorial objective bound: variables covered by a unit-coefficient
//! cardinality equality contribute their cheapest feasible completion, all
//! others their cheapest bound. No LP relaxation is involved.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Var {
    pub name: String,
    pub lo: i64,
    pub hi: i64,
    pub cost: i64,
    /// Try the upper bound first when branching.
    pub prefer_high: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, i64)>,
    pub sense: Sense,
    pub rhs: i64,
}

/// `minimize sum(cost * x)` subject to linear constraints and variable bounds.
/// Variables are branched on in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntegerProgram {
    pub vars: Vec<Var>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveOutcome {
    Optimal {
        values: Vec<i64>,
        objective: i64,
        nodes: u64,
    },
    Infeasible {
        nodes: u64,
    },
    Timeout {
        nodes: u64,
    },
}

impl SolveOutcome {
    pub fn values(&self) -> Option<&[i64]> {
        match self {
            SolveOutcome::Optimal { values, .. } => Some(values),
            _ => None,
        }
    }
}

impl IntegerProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lo: i64, hi: i64, cost: i64) -> usize {
        self.vars.push(Var {
            name: name.into(),
            lo,
            hi,
            cost,
            prefer_high: false,
        });
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>, cost: i64, prefer_high: bool) -> usize {
        let v = self.add_var(name, 0, 1, cost);
        self.vars[v].prefer_high = prefer_high;
        v
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(usize, i64)>,
        sense: Sense,
        rhs: i64,
    ) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
        });
    }

    pub fn objective_of(&self, values: &[i64]) -> i64 {
        self.vars.iter().zip(values).map(|(v, x)| v.cost * x).sum()
    }

    /// True iff `values` respects every bound and constraint.
    pub fn is_feasible(&self, values: &[i64]) -> bool {
        values.len() == self.vars.len()
            && self
                .vars
                .iter()
                .zip(values)
                .all(|(v, &x)| v.lo <= x && x <= v.hi)
            && self.constraints.iter().all(|c| {
                let act: i64 = c.terms.iter().map(|&(i, a)| a * values[i]).sum();
                match c.sense {
                    Sense::Le => act <= c.rhs,
                    Sense::Eq => act == c.rhs,
                    Sense::Ge => act >= c.rhs,
                }
            })
    }

    /// CPLEX LP text, readable by common external MILP solvers.
    pub fn to_lp_string(&self) -> String {
        let mut out = String::from("\\ vclos placement program\nMinimize\n obj:");
        let mut any = false;
        for (i, v) in self.vars.iter().enumerate() {
            if v.cost != 0 {
                let _ = write!(out, " {} {} x{i}", if v.cost < 0 { "-" } else { "+" }, v.cost.abs());
                any = true;
            }
        }
        if !any {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        for (ci, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{ci}:");
            if c.terms.is_empty() {
                out.push_str(" 0 x0");
            }
            for &(i, a) in &c.terms {
                let _ = write!(out, " {} {} x{i}", if a < 0 { "-" } else { "+" }, a.abs());
            }
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {op} {}", c.rhs);
        }
        out.push_str("Bounds\n");
        for (i, v) in self.vars.iter().enumerate() {
            let _ = writeln!(out, " {} <= x{i} <= {}", v.lo, v.hi);
        }
        out.push_str("General\n");
        for i in 0..self.vars.len() {
            let _ = write!(out, " x{i}");
        }
        out.push_str("\nEnd\n");
        for (i, v) in self.vars.iter().enumerate() {
            let _ = writeln!(out, "\\ x{i} = {}", v.name);
        }
        out
    }
}

/// Solve `prog` exactly. `budget` bounds wall-clock time; the result is
/// deterministic whenever the search completes within it.
pub fn ilp_solve(prog: &IntegerProgram, budget: Duration) -> SolveOutcome {
    Solver::new(prog, budget).run()
}

struct Group {
    vars: Vec<usize>,
    rhs: i64,
}

struct Solver<'a> {
    prog: &'a IntegerProgram,
    lo: Vec<i64>,
    hi: Vec<i64>,
    trail: Vec<(usize, i64, i64)>,
    var_cons: Vec<Vec<usize>>,
    groups: Vec<Group>,
    ungrouped: Vec<usize>,
    queue: Vec<usize>,
    queued: Vec<bool>,
    best: Option<(Vec<i64>, i64)>,
    nodes: u64,
    deadline: Instant,
    timed_out: bool,
    scratch: Vec<i64>,
}

fn div_floor(a: i64, b: i64) -> i64 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -div_floor(-a, b)
}

impl<'a> Solver<'a> {
    fn new(prog: &'a IntegerProgram, budget: Duration) -> Self {
        let n = prog.vars.len();
        let mut var_cons = vec![Vec::new(); n];
        for (ci, c) in prog.constraints.iter().enumerate() {
            for &(v, _) in &c.terms {
                var_cons[v].push(ci);
            }
        }
        // disjoint cardinality equalities over non-negative-cost binaries
        let mut grouped = vec![false; n];
        let mut groups = Vec::new();
        for c in &prog.constraints {
            let unit = c.sense == Sense::Eq
                && !c.terms.is_empty()
                && c.terms.iter().all(|&(v, a)| {
                    a == 1 && prog.vars[v].lo >= 0 && prog.vars[v].hi <= 1 && prog.vars[v].cost >= 0
                });
            if unit && c.terms.iter().all(|&(v, _)| !grouped[v]) {
                let mut vars: Vec<usize> = c.terms.iter().map(|&(v, _)| v).collect();
                vars.sort_unstable();
                vars.dedup();
                if vars.len() != c.terms.len() {
                    continue;
                }
                for &v in &vars {
                    grouped[v] = true;
                }
                groups.push(Group { vars, rhs: c.rhs });
            }
        }
        let ungrouped = (0..n).filter(|&v| !grouped[v] && prog.vars[v].cost != 0).collect();
        Self {
            prog,
            lo: prog.vars.iter().map(|v| v.lo).collect(),
            hi: prog.vars.iter().map(|v| v.hi).collect(),
            trail: Vec::new(),
            var_cons,
            groups,
            ungrouped,
            queue: Vec::new(),
            queued: vec![false; prog.constraints.len()],
            best: None,
            nodes: 0,
            deadline: Instant::now() + budget,
            timed_out: false,
            scratch: Vec::new(),
        }
    }

    fn run(mut self) -> SolveOutcome {
        if self.lo.iter().zip(&self.hi).any(|(l, h)| l > h) {
            return SolveOutcome::Infeasible { nodes: 0 };
        }
        for ci in 0..self.prog.constraints.len() {
            self.enqueue(ci);
        }
        if self.propagate() {
            self.search();
        }
        let nodes = self.nodes;
        if self.timed_out {
            return SolveOutcome::Timeout { nodes };
        }
        match self.best {
            Some((values, objective)) => SolveOutcome::Optimal {
                values,
                objective,
                nodes,
            },
            None => SolveOutcome::Infeasible { nodes },
        }
    }

    fn enqueue(&mut self, ci: usize) {
        if !self.queued[ci] {
            self.queued[ci] = true;
            self.queue.push(ci);
        }
    }

    fn set_bounds(&mut self, v: usize, lo: i64, hi: i64) -> bool {
        if lo == self.lo[v] && hi == self.hi[v] {
            return true;
        }
        self.trail.push((v, self.lo[v], self.hi[v]));
        self.lo[v] = lo;
        self.hi[v] = hi;
        if lo > hi {
            return false;
        }
        for i in 0..self.var_cons[v].len() {
            let ci = self.var_cons[v][i];
            self.enqueue(ci);
        }
        true
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let (v, lo, hi) = self.trail.pop().unwrap();
            self.lo[v] = lo;
            self.hi[v] = hi;
        }
    }

    fn clear_queue(&mut self) {
        for ci in self.queue.drain(..) {
            self.queued[ci] = false;
        }
    }

    /// Bounds-consistency fixpoint. Returns false on a wipe-out.
    fn propagate(&mut self) -> bool {
        while let Some(ci) = self.queue.pop() {
            self.queued[ci] = false;
            if !self.propagate_one(ci) {
                self.clear_queue();
                return false;
            }
        }
        true
    }

    fn propagate_one(&mut self, ci: usize) -> bool {
        let c = &self.prog.constraints[ci];
        let (mut min_act, mut max_act) = (0i64, 0i64);
        for &(v, a) in &c.terms {
            if a >= 0 {
                min_act += a * self.lo[v];
                max_act += a * self.hi[v];
            } else {
                min_act += a * self.hi[v];
                max_act += a * self.lo[v];
            }
        }
        let upper = matches!(c.sense, Sense::Le | Sense::Eq);
        let lower = matches!(c.sense, Sense::Ge | Sense::Eq);
        if (upper && min_act > c.rhs) || (lower && max_act < c.rhs) {
            return false;
        }
        let slack_hi = c.rhs - min_act;
        let slack_lo = max_act - c.rhs;
        let upper_tight = upper && c.terms.iter().any(|&(v, a)| a.abs() * (self.hi[v] - self.lo[v]) > slack_hi);
        let lower_tight = lower && c.terms.iter().any(|&(v, a)| a.abs() * (self.hi[v] - self.lo[v]) > slack_lo);
        if !upper_tight && !lower_tight {
            return true;
        }
        let rhs = c.rhs;
        let terms = c.terms.clone();
        for (v, a) in terms {
            let (lo, hi) = (self.lo[v], self.hi[v]);
            let (mut nlo, mut nhi) = (lo, hi);
            let own_min = if a >= 0 { a * lo } else { a * hi };
            let own_max = if a >= 0 { a * hi } else { a * lo };
            if upper_tight {
                // a*x <= rhs - (min_act - own_min)
                let cap = rhs - (min_act - own_min);
                if a > 0 {
                    nhi = nhi.min(div_floor(cap, a));
                } else {
                    nlo = nlo.max(div_ceil(cap, a));
                }
            }
            if lower_tight {
                // a*x >= rhs - (max_act - own_max)
                let floor = rhs - (max_act - own_max);
                if a > 0 {
                    nlo = nlo.max(div_ceil(floor, a));
                } else {
                    nhi = nhi.min(div_floor(floor, a));
                }
            }
            if (nlo, nhi) != (lo, hi) && !self.set_bounds(v, nlo, nhi) {
                return false;
            }
        }
        true
    }

    fn bound(&mut self) -> i64 {
        let prog = self.prog;
        let mut total = 0i64;
        for &v in &self.ungrouped {
            let c = prog.vars[v].cost;
            total += (c * self.lo[v]).min(c * self.hi[v]);
        }
        for g in &self.groups {
            let mut fixed_ones = 0i64;
            self.scratch.clear();
            for &v in &g.vars {
                if self.lo[v] == 1 {
                    fixed_ones += 1;
                    total += prog.vars[v].cost;
                } else if self.hi[v] == 1 {
                    self.scratch.push(prog.vars[v].cost);
                }
            }
            let need = (g.rhs - fixed_ones).max(0) as usize;
            if need > self.scratch.len() {
                return i64::MAX;
            }
            if need > 0 {
                self.scratch.select_nth_unstable(need - 1);
                total += self.scratch[..need].iter().sum::<i64>();
            }
        }
        total
    }

    fn search(&mut self) {
        self.nodes += 1;
        if self.nodes % 1024 == 0 && Instant::now() >= self.deadline {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        let bound = self.bound();
        if let Some((_, best)) = &self.best {
            if bound >= *best {
                return;
            }
        }
        if bound == i64::MAX {
            return;
        }
        let Some(v) = (0..self.lo.len()).find(|&v| self.lo[v] < self.hi[v]) else {
            let values = self.lo.clone();
            debug_assert!(self.prog.is_feasible(&values));
            let obj = self.prog.objective_of(&values);
            if self.best.as_ref().map_or(true, |(_, b)| obj < *b) {
                self.best = Some((values, obj));
            }
            return;
        };
        let (lo, hi) = (self.lo[v], self.hi[v]);
        let values: Vec<i64> = if self.prog.vars[v].prefer_high {
            (lo..=hi).rev().collect()
        } else {
            (lo..=hi).collect()
        };
        for x in values {
            let mark = self.trail.len();
            if self.set_bounds(v, x, x) && self.propagate() {
                self.search();
            } else {
                self.clear_queue();
            }
            self.undo_to(mark);
            if self.timed_out {
                return;
            }
        }
    }
}
