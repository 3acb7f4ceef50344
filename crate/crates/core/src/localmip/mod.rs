//! Integer programs for relocation decisions.
//!
//! [`IntegerProgram`] holds bounded integer variables, a linear objective
//! and, on top of it, threshold terms `coef · e · 1(e < th)` over affine
//! expressions `e`. The solver in [`solver`] works on this form directly;
//! [`lp`] writes and reads a linearized CPLEX-LP rendering.

pub mod lp;
pub mod models;
pub mod policy;
pub mod solver;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use models::{build_full_model, build_relocation_ip, build_transit_ip, FullModelIndex, LocalIpIndex};
pub use policy::{MipPolicy, MipPolicyConfig};
pub use solver::{solve_exact, IPSolution, IpStatus, SolveOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    /// Inclusive upper bound; the lower bound is always zero.
    pub ub: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `coef · e · 1(e < threshold)` with `e = constant + Σ a·x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piecewise {
    pub name: String,
    pub coef: f64,
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
    pub threshold: f64,
}

impl Piecewise {
    pub fn expr(&self, x: &[u32]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, a)| a * f64::from(x[v])).sum::<f64>()
    }

    #[inline]
    pub fn gate(&self, e: f64) -> f64 {
        if e < self.threshold {
            e
        } else {
            0.0
        }
    }

    pub fn value(&self, x: &[u32]) -> f64 {
        self.coef * self.gate(self.expr(x))
    }
}

/// A maximization problem over integer variables in `[0, ub]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntegerProgram {
    pub name: String,
    pub vars: Vec<Variable>,
    pub objective: Vec<(usize, f64)>,
    pub constant: f64,
    pub piecewise: Vec<Piecewise>,
    pub constraints: Vec<Constraint>,
}

impl IntegerProgram {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn add_var(&mut self, name: impl Into<String>, ub: u32) -> usize {
        self.vars.push(Variable { name: name.into(), ub });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { name: name.into(), terms, sense, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    /// Coefficients stored across objective, threshold terms and constraints.
    pub fn nonzeros(&self) -> usize {
        self.objective.len()
            + self.piecewise.iter().map(|p| p.terms.len()).sum::<usize>()
            + self.constraints.iter().map(|c| c.terms.len()).sum::<usize>()
    }

    pub fn evaluate(&self, x: &[u32]) -> f64 {
        let lin: f64 = self.objective.iter().map(|&(v, c)| c * f64::from(x[v])).sum();
        let pw: f64 = self.piecewise.iter().map(|p| p.value(x)).sum();
        self.constant + lin + pw
    }

    pub fn is_feasible(&self, x: &[u32]) -> bool {
        x.len() == self.vars.len()
            && x.iter().zip(&self.vars).all(|(&v, var)| v <= var.ub)
            && self.constraints.iter().all(|c| {
                let act: f64 = c.terms.iter().map(|&(v, a)| a * f64::from(x[v])).sum();
                satisfied(act, c.sense, c.rhs)
            })
    }

    /// Checks indices, finiteness and that every variable appears somewhere.
    pub fn validate(&self) -> Result<()> {
        let n = self.vars.len();
        let mut used = vec![false; n];
        let mut mark = |terms: &[(usize, f64)], what: &str| -> Result<()> {
            for &(v, a) in terms {
                if v >= n || !a.is_finite() {
                    return Err(Error::invalid(format!("{what} references variable {v} with coefficient {a}")));
                }
                used[v] = true;
            }
            Ok(())
        };
        mark(&self.objective, "objective")?;
        for p in &self.piecewise {
            if !(p.coef.is_finite() && p.constant.is_finite() && p.threshold.is_finite()) {
                return Err(Error::invalid(format!("threshold term {} is not finite", p.name)));
            }
            mark(&p.terms, &p.name)?;
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(Error::invalid(format!("constraint {} has non-finite rhs", c.name)));
            }
            mark(&c.terms, &c.name)?;
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::invalid(format!("variable {} is unreferenced", self.vars[v].name)));
        }
        if !self.constant.is_finite() {
            return Err(Error::invalid("objective constant is not finite"));
        }
        Ok(())
    }

    /// Range of a threshold expression over the variable bounds.
    pub fn expr_range(&self, p: &Piecewise) -> (f64, f64) {
        let mut lo = p.constant;
        let mut hi = p.constant;
        for &(v, a) in &p.terms {
            let ub = f64::from(self.vars[v].ub);
            if a >= 0.0 {
                hi += a * ub;
            } else {
                lo += a * ub;
            }
        }
        (lo, hi)
    }

    /// A big-M valid for every threshold term in the linearization.
    pub fn big_m(&self) -> f64 {
        self.piecewise
            .iter()
            .map(|p| {
                let (lo, hi) = self.expr_range(p);
                lo.abs().max(hi.abs()).max(p.threshold.abs()) + 1.0
            })
            .fold(1.0, f64::max)
            .ceil()
    }
}

pub(crate) const FEAS_TOL: f64 = 1e-9;

#[inline]
pub(crate) fn satisfied(act: f64, sense: Sense, rhs: f64) -> bool {
    let tol = FEAS_TOL * (1.0 + rhs.abs());
    match sense {
        Sense::Le => act <= rhs + tol,
        Sense::Ge => act >= rhs - tol,
        Sense::Eq => (act - rhs).abs() <= tol,
    }
}
