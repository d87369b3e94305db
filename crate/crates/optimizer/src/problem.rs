//! Quadratically constrained NLP container.
//!
//! Variables `[0, n_global)` are linking variables; the rest are split into
//! contiguous blocks. Every constraint may touch the linking variables and at
//! most one block, which gives the KKT system its block-arrowhead shape.

use std::ops::Range;

use stvs_core::Scalar;

use crate::quad::QuadExpr;

#[derive(Debug, Clone, PartialEq)]
pub struct NlpProblem<T> {
    pub var_labels: Vec<String>,
    /// Minimised; must be at most quadratic.
    pub objective: QuadExpr<T>,
    /// `g(x) = 0`
    pub eq: Vec<QuadExpr<T>>,
    pub eq_labels: Vec<String>,
    /// `h(x) ≤ 0`
    pub ineq: Vec<QuadExpr<T>>,
    pub ineq_labels: Vec<String>,
    /// Box bounds; infinite entries are ignored.
    pub lb: Vec<T>,
    pub ub: Vec<T>,
    pub x0: Vec<T>,
    pub n_global: usize,
    pub blocks: Vec<Range<usize>>,
}

/// Where a constraint lives in the block structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Global,
    Block(usize),
}

/// One constant entry of the Lagrangian Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessSlot<T> {
    pub i: usize,
    pub j: usize,
    pub value: T,
    pub source: Multiplier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplier {
    Objective,
    Eq(usize),
    Ineq(usize),
}

impl<T: Scalar> NlpProblem<T> {
    pub fn new(n_global: usize) -> Self {
        Self {
            var_labels: Vec::new(),
            objective: QuadExpr::new(),
            eq: Vec::new(),
            eq_labels: Vec::new(),
            ineq: Vec::new(),
            ineq_labels: Vec::new(),
            lb: Vec::new(),
            ub: Vec::new(),
            x0: Vec::new(),
            n_global,
            blocks: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.var_labels.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_var(&mut self, label: impl Into<String>, lb: T, ub: T, x0: T) -> usize {
        self.var_labels.push(label.into());
        self.lb.push(lb);
        self.ub.push(ub);
        self.x0.push(x0);
        self.n() - 1
    }

    pub fn add_eq(&mut self, label: impl Into<String>, e: QuadExpr<T>) -> usize {
        self.eq.push(e);
        self.eq_labels.push(label.into());
        self.eq.len() - 1
    }

    pub fn add_ineq(&mut self, label: impl Into<String>, e: QuadExpr<T>) -> usize {
        self.ineq.push(e);
        self.ineq_labels.push(label.into());
        self.ineq.len() - 1
    }

    pub fn block_of_var(&self, v: usize) -> Option<usize> {
        if v < self.n_global {
            return None;
        }
        self.blocks.iter().position(|r| r.contains(&v))
    }

    /// Block owning a constraint, or an error naming the variables that
    /// straddle two blocks.
    pub fn owner(&self, e: &QuadExpr<T>) -> Result<Owner, String> {
        let mut owner = Owner::Global;
        for v in e.vars() {
            if let Some(b) = self.block_of_var(v) {
                match owner {
                    Owner::Global => owner = Owner::Block(b),
                    Owner::Block(o) if o == b => {}
                    Owner::Block(o) => return Err(format!("variables in blocks {o} and {b}")),
                }
            } else if v >= self.n() {
                return Err(format!("variable index {v} out of range"));
            }
        }
        Ok(owner)
    }

    /// Checks the block layout and that every constraint respects it.
    /// Crossed bounds are not a structural error; the solver reports them as
    /// infeasibility.
    pub fn check_structure(&self) -> Result<(), String> {
        let n = self.n();
        if self.lb.len() != n || self.ub.len() != n || self.x0.len() != n {
            return Err("bound or start vector length mismatch".into());
        }
        let mut next = self.n_global;
        for r in &self.blocks {
            if r.start != next {
                return Err(format!("block {r:?} is not contiguous"));
            }
            next = r.end;
        }
        if next != n {
            return Err(format!("blocks cover {next} of {n} variables"));
        }
        for (e, l) in self.eq.iter().zip(&self.eq_labels) {
            self.owner(e).map_err(|m| format!("{l}: {m}"))?;
        }
        for (e, l) in self.ineq.iter().zip(&self.ineq_labels) {
            self.owner(e).map_err(|m| format!("{l}: {m}"))?;
        }
        Ok(())
    }

    /// Every constant Hessian entry of the Lagrangian with the multiplier it
    /// is weighted by. Assembled once per problem.
    pub fn hessian_slots(&self) -> Vec<HessSlot<T>> {
        let mut out = Vec::new();
        let mut push = |e: &QuadExpr<T>, source| {
            for (i, j, value) in e.hessian() {
                out.push(HessSlot { i, j, value, source });
            }
        };
        push(&self.objective, Multiplier::Objective);
        for (k, e) in self.eq.iter().enumerate() {
            push(e, Multiplier::Eq(k));
        }
        for (k, e) in self.ineq.iter().enumerate() {
            push(e, Multiplier::Ineq(k));
        }
        out
    }

    /// Largest equality residual or inequality/bound excess at `x`.
    pub fn max_violation(&self, x: &[T]) -> (T, Option<String>) {
        #[derive(Clone, Copy)]
        enum Site {
            Eq(usize),
            Ineq(usize),
            Lower(usize),
            Upper(usize),
        }
        let mut worst = T::zero();
        let mut site = None;
        let mut see = |v: T, s: Site| {
            if v > worst {
                worst = v;
                site = Some(s);
            }
        };
        for (k, e) in self.eq.iter().enumerate() {
            see(e.eval(x).abs(), Site::Eq(k));
        }
        for (k, e) in self.ineq.iter().enumerate() {
            see(e.eval(x), Site::Ineq(k));
        }
        for k in 0..self.n() {
            see(self.lb[k] - x[k], Site::Lower(k));
            see(x[k] - self.ub[k], Site::Upper(k));
        }
        let label = site.map(|s| match s {
            Site::Eq(k) => self.eq_labels[k].clone(),
            Site::Ineq(k) => self.ineq_labels[k].clone(),
            Site::Lower(k) => format!("{} >= lower bound", self.var_labels[k]),
            Site::Upper(k) => format!("{} <= upper bound", self.var_labels[k]),
        });
        (worst, label)
    }

    pub fn var_index(&self, label: &str) -> Option<usize> {
        self.var_labels.iter().position(|l| l == label)
    }
}
