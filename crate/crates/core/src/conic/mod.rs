//! Solver-facing normal form for the convex programs built in this crate.
//!
//! ```text
//! minimize    c^T x + c0 + sum_i w_i ||A_i x + b_i||
//! subject to  named linear equalities      e(x) = 0
//!             named linear inequalities    g(x) >= 0
//!             named cone constraints       l(x) >= k ||A x + b||
//!             named exponential cones      y exp(x / y) <= z
//!             lo <= x <= hi
//! ```
//!
//! Dual multipliers are reported per constraint name. For inequalities and
//! cone constraints the multiplier is the sensitivity of the optimal value to
//! tightening the constant term of the left-hand side, so it is nonnegative.

mod clarabel_backend;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clarabel_backend::ClarabelBackend;

/// Sparse affine expression `sum coeff * x[index] + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        Self {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    /// `sum_i coeffs[i] * x[offset + i]`, dropping zero coefficients.
    pub fn dense(offset: usize, coeffs: &[f64], constant: f64) -> Self {
        Self {
            terms: coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, c)| (offset + i, *c))
                .collect(),
            constant,
        }
    }

    pub fn plus(mut self, index: usize, coeff: f64) -> Self {
        self.terms.push((index, coeff));
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(i, c)| c * x[*i]).sum::<f64>() + self.constant
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|t| t.0).max()
    }
}

fn norm(rows: &[AffineExpr], x: &[f64]) -> f64 {
    rows.iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt()
}

/// `weight * ||rows(x)||` added to the objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormTerm {
    pub weight: f64,
    pub rows: Vec<AffineExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearKind {
    /// `expr = 0`
    Equal,
    /// `expr >= 0`
    NonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub name: String,
    pub kind: LinearKind,
    pub expr: AffineExpr,
}

/// `lhs(x) >= scale * ||rows(x)||` with `scale >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub name: String,
    pub lhs: AffineExpr,
    pub scale: f64,
    pub rows: Vec<AffineExpr>,
}

/// `y * exp(x / y) <= z`, `y > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpConeConstraint {
    pub name: String,
    pub x: AffineExpr,
    pub y: AffineExpr,
    pub z: AffineExpr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub variable_names: Vec<String>,
    pub objective: AffineExpr,
    pub norm_terms: Vec<NormTerm>,
    pub linear: Vec<LinearConstraint>,
    pub cones: Vec<ConeConstraint>,
    pub exp_cones: Vec<ExpConeConstraint>,
    /// `(lower, upper)` per variable; infinite entries mean unbounded and
    /// are written as `null` in JSON.
    #[serde(with = "open_bounds")]
    pub bounds: Vec<(f64, f64)>,
}

impl ConicProgram {
    pub fn new(variable_names: Vec<String>) -> Self {
        let n = variable_names.len();
        Self {
            variable_names,
            objective: AffineExpr::default(),
            norm_terms: Vec::new(),
            linear: Vec::new(),
            cones: Vec::new(),
            exp_cones: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variable_names.len()
    }

    /// Appends a variable and returns its index.
    pub fn add_variable(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.variable_names.push(name.into());
        self.bounds.push((lower, upper));
        self.variable_names.len() - 1
    }

    pub fn add_equality(&mut self, name: impl Into<String>, expr: AffineExpr) {
        self.linear.push(LinearConstraint {
            name: name.into(),
            kind: LinearKind::Equal,
            expr,
        });
    }

    pub fn add_inequality(&mut self, name: impl Into<String>, expr: AffineExpr) {
        self.linear.push(LinearConstraint {
            name: name.into(),
            kind: LinearKind::NonNegative,
            expr,
        });
    }

    pub fn add_cone(
        &mut self,
        name: impl Into<String>,
        lhs: AffineExpr,
        scale: f64,
        rows: Vec<AffineExpr>,
    ) {
        self.cones.push(ConeConstraint {
            name: name.into(),
            lhs,
            scale,
            rows,
        });
    }

    pub fn add_exp_cone(
        &mut self,
        name: impl Into<String>,
        x: AffineExpr,
        y: AffineExpr,
        z: AffineExpr,
    ) {
        self.exp_cones.push(ExpConeConstraint {
            name: name.into(),
            x,
            y,
            z,
        });
    }

    /// Checks index ranges, finiteness and cone scale signs.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.bounds.len(),
                context: "variable bounds",
            });
        }
        let exprs = std::iter::once(&self.objective)
            .chain(self.norm_terms.iter().flat_map(|t| t.rows.iter()))
            .chain(self.linear.iter().map(|c| &c.expr))
            .chain(
                self.cones
                    .iter()
                    .flat_map(|c| std::iter::once(&c.lhs).chain(c.rows.iter())),
            )
            .chain(self.exp_cones.iter().flat_map(|c| [&c.x, &c.y, &c.z]));
        for e in exprs {
            if e.max_index().is_some_and(|i| i >= n) {
                return Err(Error::Validation(
                    "expression references an unknown variable".into(),
                ));
            }
            if !e.constant.is_finite() || e.terms.iter().any(|t| !t.1.is_finite()) {
                return Err(Error::Validation(
                    "expression has a non-finite coefficient".into(),
                ));
            }
        }
        if let Some(c) = self
            .cones
            .iter()
            .find(|c| !(c.scale >= 0.0 && c.scale.is_finite()))
        {
            return Err(Error::Validation(format!(
                "cone {} has scale {}",
                c.name, c.scale
            )));
        }
        if self
            .norm_terms
            .iter()
            .any(|t| !(t.weight >= 0.0 && t.weight.is_finite()))
        {
            return Err(Error::Validation(
                "objective norm weights must be finite and nonnegative".into(),
            ));
        }
        if let Some((i, _)) = self.bounds.iter().enumerate().find(|(_, b)| b.0 > b.1) {
            return Err(Error::Validation(format!("variable {i} has empty bounds")));
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
            + self
                .norm_terms
                .iter()
                .map(|t| t.weight * norm(&t.rows, x))
                .sum::<f64>()
    }

    /// Largest violation over every constraint and bound (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.linear {
            let v = c.expr.eval(x);
            worst = worst.max(match c.kind {
                LinearKind::Equal => v.abs(),
                LinearKind::NonNegative => (-v).max(0.0),
            });
        }
        for c in &self.cones {
            worst = worst.max((c.scale * norm(&c.rows, x) - c.lhs.eval(x)).max(0.0));
        }
        for c in &self.exp_cones {
            let (a, b, z) = (c.x.eval(x), c.y.eval(x), c.z.eval(x));
            let lhs = if b > 0.0 {
                b * (a / b).exp()
            } else if a <= 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max((lhs - z).max(0.0)).max((-b).max(0.0));
        }
        for (v, (lo, hi)) in x.iter().zip(&self.bounds) {
            worst = worst.max(lo - v).max(v - hi);
        }
        worst
    }

    /// Value and violation of the named cone constraint at `x`, if present.
    pub fn cone_slack(&self, name: &str, x: &[f64]) -> Option<f64> {
        self.cones
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.lhs.eval(x) - c.scale * norm(&c.rows, x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

mod open_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(bounds: &[(f64, f64)], s: S) -> Result<S::Ok, S::Error> {
        let finite = |v: f64| v.is_finite().then_some(v);
        bounds
            .iter()
            .map(|&(lo, hi)| (finite(lo), finite(hi)))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(f64, f64)>, D::Error> {
        let raw = Vec::<(Option<f64>, Option<f64>)>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|(lo, hi)| (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY)))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConicStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: ConicStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers per constraint name; `None` when the backend has no certificates.
    pub duals: Option<BTreeMap<String, f64>>,
    /// `max_violation` of `x` recomputed on the original program.
    pub residual: f64,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn dual(&self, name: &str) -> Option<f64> {
        self.duals.as_ref().and_then(|d| d.get(name).copied())
    }

    pub fn is_optimal(&self) -> bool {
        self.status == ConicStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub second_order_cones: bool,
    pub exponential_cones: bool,
    pub duals: bool,
    /// Whether one instance may serve concurrent `solve` calls.
    pub concurrent: bool,
}

/// Plug-in point for conic solvers.
pub trait ConicBackend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> BackendCapabilities;
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution>;
}

/// Solves with `backend` after validating the program and its cone support.
pub fn conic_solve(backend: &dyn ConicBackend, program: &ConicProgram) -> Result<ConicSolution> {
    program.validate()?;
    let caps = backend.capabilities();
    if (!program.cones.is_empty() || !program.norm_terms.is_empty()) && !caps.second_order_cones {
        return Err(Error::Unsupported(format!(
            "backend {} lacks second-order cones",
            backend.name()
        )));
    }
    if !program.exp_cones.is_empty() && !caps.exponential_cones {
        return Err(Error::Unsupported(format!(
            "backend {} lacks exponential cones",
            backend.name()
        )));
    }
    backend.solve(program)
}

/// Multipliers by forward differences: each named inequality or cone
/// constraint is tightened by `step` and the program re-solved. Used for
/// backends that return no certificates.
pub fn finite_difference_duals(
    backend: &dyn ConicBackend,
    program: &ConicProgram,
    names: &[&str],
    step: f64,
) -> Result<BTreeMap<String, f64>> {
    let base = conic_solve(backend, program)?;
    if !base.is_optimal() {
        return Err(Error::Numerical(format!(
            "base solve ended {:?}",
            base.status
        )));
    }
    let mut out = BTreeMap::new();
    for &name in names {
        let mut tightened = program.clone();
        if let Some(c) = tightened.cones.iter_mut().find(|c| c.name == name) {
            c.lhs.constant -= step;
        } else if let Some(c) = tightened
            .linear
            .iter_mut()
            .find(|c| c.name == name && c.kind == LinearKind::NonNegative)
        {
            c.expr.constant -= step;
        } else {
            return Err(Error::Validation(format!("no inequality named {name}")));
        }
        let sol = conic_solve(backend, &tightened)?;
        let value = if sol.is_optimal() {
            (sol.objective - base.objective) / step
        } else {
            f64::INFINITY
        };
        out.insert(name.to_string(), value);
    }
    Ok(out)
}
