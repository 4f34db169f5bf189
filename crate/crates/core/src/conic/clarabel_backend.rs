use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{
    AffineExpr, BackendCapabilities, ConeConstraint, ConicBackend, ConicProgram, ConicSolution,
    ConicStatus, LinearKind,
};
use crate::error::{Error, Result};

/// Interior-point backend built on the Clarabel solver.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub tolerance: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 200,
            verbose: false,
        }
    }
}

impl ClarabelBackend {
    fn settings(&self) -> Result<DefaultSettings<f64>> {
        DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tolerance)
            .tol_gap_rel(self.tolerance)
            .tol_feas(self.tolerance)
            .build()
            .map_err(|e| Error::Numerical(format!("solver settings: {e}")))
    }
}

/// Rows of `A x + s = b` accumulated in triplet form.
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row for slack `s = expr(x)`, i.e. `-expr.terms x + s = expr.constant`.
    fn push(&mut self, expr: &AffineExpr) -> usize {
        let r = self.b.len();
        for &(j, c) in &expr.terms {
            self.i.push(r);
            self.j.push(j);
            self.v.push(-c);
        }
        self.b.push(expr.constant);
        r
    }
}

fn is_degenerate(c: &ConeConstraint) -> bool {
    c.scale == 0.0 || c.rows.is_empty()
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            second_order_cones: true,
            exponential_cones: true,
            duals: true,
            concurrent: true,
        }
    }

    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution> {
        let n0 = program.num_vars();
        let n = n0 + program.norm_terms.len();
        let mut rows = Rows {
            i: Vec::new(),
            j: Vec::new(),
            v: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();
        // (constraint name, slack row) for the reported multipliers
        let mut named: Vec<(&str, usize)> = Vec::new();

        let mut q = vec![0.0; n];
        for &(j, c) in &program.objective.terms {
            q[j] += c;
        }
        for (k, t) in program.norm_terms.iter().enumerate() {
            q[n0 + k] = t.weight;
        }

        let mut equalities = 0;
        for c in program
            .linear
            .iter()
            .filter(|c| c.kind == LinearKind::Equal)
        {
            named.push((&c.name, rows.push(&c.expr)));
            equalities += 1;
        }
        for (j, &(lo, hi)) in program.bounds.iter().enumerate() {
            if lo == hi {
                rows.push(&AffineExpr::var(j).with_constant(-lo));
                equalities += 1;
            }
        }
        if equalities > 0 {
            cones.push(SupportedConeT::ZeroConeT(equalities));
        }

        let mut nonneg = 0;
        for c in program
            .linear
            .iter()
            .filter(|c| c.kind == LinearKind::NonNegative)
        {
            named.push((&c.name, rows.push(&c.expr)));
            nonneg += 1;
        }
        // cones without a norm part are plain inequalities
        for c in program.cones.iter().filter(|c| is_degenerate(c)) {
            named.push((&c.name, rows.push(&c.lhs)));
            nonneg += 1;
        }
        for (j, &(lo, hi)) in program.bounds.iter().enumerate() {
            if lo == hi {
                continue;
            }
            if lo.is_finite() {
                rows.push(&AffineExpr::var(j).with_constant(-lo));
                nonneg += 1;
            }
            if hi.is_finite() {
                rows.push(&AffineExpr {
                    terms: vec![(j, -1.0)],
                    constant: hi,
                });
                nonneg += 1;
            }
        }
        if nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg));
        }

        for (k, t) in program.norm_terms.iter().enumerate() {
            rows.push(&AffineExpr::var(n0 + k));
            for r in &t.rows {
                rows.push(r);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + t.rows.len()));
        }
        for c in program.cones.iter().filter(|c| !is_degenerate(c)) {
            named.push((&c.name, rows.push(&c.lhs)));
            for r in &c.rows {
                rows.push(&r.clone().scaled(c.scale));
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + c.rows.len()));
        }
        for c in &program.exp_cones {
            named.push((&c.name, rows.push(&c.x)));
            rows.push(&c.y);
            rows.push(&c.z);
            cones.push(SupportedConeT::ExponentialConeT());
        }

        let m = rows.b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
        let p = CscMatrix::zeros((n, n));
        let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, self.settings()?)
            .map_err(|e| Error::Numerical(format!("solver setup: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved => ConicStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                ConicStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                ConicStatus::Unbounded
            }
            _ => ConicStatus::NumericalLimit,
        };
        let x = sol.x[..n0].to_vec();
        let objective = match status {
            ConicStatus::Infeasible => f64::INFINITY,
            ConicStatus::Unbounded => f64::NEG_INFINITY,
            _ => program.objective_value(&x),
        };
        let duals = match status {
            ConicStatus::Optimal | ConicStatus::NumericalLimit => Some(
                named
                    .iter()
                    .map(|(name, r)| (name.to_string(), sol.z[*r]))
                    .collect::<BTreeMap<_, _>>(),
            ),
            _ => None,
        };
        log::debug!(
            "clarabel: {:?} after {} iterations, objective {objective:.6e}",
            sol.status,
            sol.iterations
        );
        Ok(ConicSolution {
            status,
            residual: program.max_violation(&x),
            x,
            objective,
            duals,
            iterations: sol.iterations,
        })
    }
}
