use serde::{Deserialize, Serialize};

use super::{check_joint_confidence, KlConstraintSpec};
use crate::conic::{AffineExpr, ConicProgram};
use crate::distributions::{std_cdf, EllipticalLaw};
use crate::error::{Error, Result};
use crate::kl::{adjust_range, detect_monotonicity, inverse_adjust_bracket, Monotonicity};

/// How the per-constraint confidences combine into the joint level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointConfidenceForm {
    /// `prod_k y_k >= eps_hat`, posed as `sum_k log y_k >= log eps_hat`.
    #[default]
    Product,
    /// `sum_k y_k >= eps_hat`.
    Sum,
}

impl JointConfidenceForm {
    pub fn holds(self, y: &[f64], eps_hat: f64, tol: f64) -> bool {
        match self {
            JointConfidenceForm::Product => y.iter().product::<f64>() >= eps_hat - tol,
            JointConfidenceForm::Sum => y.iter().sum::<f64>() >= eps_hat - tol,
        }
    }
}

/// `P(tau^T r >= threshold)` under the reference law.
pub fn satisfaction_probability(tau: &[f64], law: &EllipticalLaw, threshold: f64) -> Result<f64> {
    let mean = law.mean_of(tau);
    let sigma = law.quadratic_form(tau).sqrt();
    if sigma == 0.0 {
        return Ok(if mean >= threshold { 1.0 } else { 0.0 });
    }
    Ok(1.0 - std_cdf(law.generator(), (threshold - mean) / sigma)?)
}

/// Per-constraint interval of `y_k` with `chi(y_k) >= 1/2` (cone convexity) and
/// `chi(y_k) <= P_k(tau)` (the constraint holds at `tau`), with `chi` inverted
/// by bisection to `width`. Each end is the conservative side of its bracket.
pub fn confidence_bounds(
    probabilities: &[f64],
    specs: &[KlConstraintSpec],
    width: f64,
) -> Result<Vec<(f64, f64)>> {
    if probabilities.len() != specs.len() {
        return Err(Error::Dimension {
            expected: specs.len(),
            actual: probabilities.len(),
            context: "satisfaction probabilities",
        });
    }
    let mut out = Vec::with_capacity(specs.len());
    for (k, (spec, &p)) in specs.iter().zip(probabilities).enumerate() {
        let delta = spec.radius;
        let (low, high) = adjust_range(delta)?;
        let increasing = detect_monotonicity(delta)? == Monotonicity::Increasing;
        let (start, end) = if increasing { (0.0, 1.0) } else { (1.0, 0.0) };
        if p < low {
            return Err(Error::Infeasible(format!(
                "constraint {k}: satisfaction probability {p:.6} is below every attainable confidence ({low:.6})"
            )));
        }
        let half_end = if low >= 0.5 {
            start
        } else {
            inverse_adjust_bracket(0.5, delta, width, 0.0)?.above
        };
        let p_end = if p >= high {
            end
        } else {
            inverse_adjust_bracket(p, delta, width, 0.0)?.below
        };
        let (lower, upper) = if increasing {
            (half_end, p_end)
        } else {
            (p_end, half_end)
        };
        if upper < lower {
            return Err(Error::Infeasible(format!(
                "constraint {k}: confidence box [{lower:.6}, {upper:.6}] is empty at satisfaction probability {p:.6}"
            )));
        }
        out.push((lower, upper));
    }
    Ok(out)
}

/// `min_y sum_k gamma_k y_k` over the box and the joint-confidence constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceProgram {
    pub gamma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub joint_confidence: f64,
    pub form: JointConfidenceForm,
}

pub fn build_joint_y_subproblem(
    gamma: &[f64],
    bounds: &[(f64, f64)],
    joint_confidence: f64,
    form: JointConfidenceForm,
) -> Result<ConfidenceProgram> {
    check_joint_confidence(joint_confidence)?;
    if gamma.len() != bounds.len() {
        return Err(Error::Dimension {
            expected: bounds.len(),
            actual: gamma.len(),
            context: "confidence costs",
        });
    }
    if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
        return Err(Error::Validation(format!(
            "confidence costs must be finite and nonnegative: {gamma:?}"
        )));
    }
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Infeasible(format!(
                "confidence box {k} is [{lo}, {hi}]"
            )));
        }
    }
    Ok(ConfidenceProgram {
        gamma: gamma.to_vec(),
        lower: bounds.iter().map(|b| b.0).collect(),
        upper: bounds.iter().map(|b| b.1).collect(),
        joint_confidence,
        form,
    })
}

impl ConfidenceProgram {
    pub fn objective(&self, y: &[f64]) -> f64 {
        self.gamma.iter().zip(y).map(|(g, v)| g * v).sum()
    }

    pub fn is_feasible(&self, y: &[f64], tol: f64) -> bool {
        y.len() == self.gamma.len()
            && y.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
            && self.form.holds(y, self.joint_confidence, tol)
    }

    /// Optimal `y`. When every cost is zero the objective is flat and `keep` is
    /// returned unchanged.
    pub fn solve(&self, keep: &[f64]) -> Result<Vec<f64>> {
        if self.gamma.iter().all(|g| *g == 0.0) {
            return Ok(keep.to_vec());
        }
        match self.form {
            JointConfidenceForm::Product => self.solve_product(),
            JointConfidenceForm::Sum => self.solve_sum(),
        }
    }

    fn at_multiplier(&self, lambda: f64) -> Vec<f64> {
        self.gamma
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&g, (&lo, &hi))| {
                if g == 0.0 {
                    hi
                } else {
                    (lambda / g).clamp(lo, hi)
                }
            })
            .collect()
    }

    /// Stationarity gives `y_k = clip(lambda / gamma_k)`; `lambda` is bisected
    /// until the log constraint is tight, keeping the feasible end.
    fn solve_product(&self) -> Result<Vec<f64>> {
        let target = self.joint_confidence.ln();
        let log_sum = |y: &[f64]| y.iter().map(|v| v.ln()).sum::<f64>();
        let y0 = self.at_multiplier(0.0);
        if log_sum(&y0) >= target {
            return Ok(y0);
        }
        if log_sum(&self.upper) < target {
            return Err(Error::Infeasible(format!(
                "confidence boxes {:?} cannot reach the joint level {}",
                self.upper, self.joint_confidence
            )));
        }
        let mut lo = 0.0;
        let mut hi = self
            .gamma
            .iter()
            .zip(&self.upper)
            .map(|(g, u)| g * u)
            .fold(0.0, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if log_sum(&self.at_multiplier(mid)) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(self.at_multiplier(hi))
    }

    /// Linear program: fill the cheapest coordinates first.
    fn solve_sum(&self) -> Result<Vec<f64>> {
        let mut y = self.lower.clone();
        let mut deficit = self.joint_confidence - y.iter().sum::<f64>();
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| self.gamma[a].total_cmp(&self.gamma[b]));
        for k in order {
            if deficit <= 0.0 {
                break;
            }
            let step = (self.upper[k] - y[k]).min(deficit);
            y[k] += step;
            deficit -= step;
        }
        if deficit > 1e-12 {
            return Err(Error::Infeasible(format!(
                "confidence boxes {:?} cannot reach the joint level {}",
                self.upper, self.joint_confidence
            )));
        }
        Ok(y)
    }

    /// The same program as a cone program, for external solvers and cross-checks.
    /// The product form uses `w_k <= log y_k` through exponential cones.
    pub fn to_conic(&self) -> ConicProgram {
        let k = self.gamma.len();
        let mut names: Vec<String> = (0..k).map(|i| format!("y[{i}]")).collect();
        if self.form == JointConfidenceForm::Product {
            names.extend((0..k).map(|i| format!("w[{i}]")));
        }
        let mut p = ConicProgram::new(names);
        p.objective = AffineExpr::dense(0, &self.gamma, 0.0);
        for i in 0..k {
            p.bounds[i] = (self.lower[i], self.upper[i]);
        }
        match self.form {
            JointConfidenceForm::Product => {
                for i in 0..k {
                    p.add_exp_cone(
                        format!("log[{i}]"),
                        AffineExpr::var(k + i),
                        AffineExpr::constant(1.0),
                        AffineExpr::var(i),
                    );
                }
                p.add_inequality(
                    "joint",
                    AffineExpr::dense(k, &vec![1.0; k], -self.joint_confidence.ln()),
                );
            }
            JointConfidenceForm::Sum => {
                p.add_inequality(
                    "joint",
                    AffineExpr::dense(0, &vec![1.0; k], -self.joint_confidence),
                );
            }
        }
        p
    }
}

/// One confidence-split update: box at the current occupation measure widened
/// to contain `y`, the box-constrained split minimizing `gamma^T y`, and the
/// damped step towards it.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SplitStep {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub next: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn next_split(
    probabilities: &[f64],
    specs: &[KlConstraintSpec],
    gamma: &[f64],
    y: &[f64],
    joint_confidence: f64,
    form: JointConfidenceForm,
    width: f64,
    step: f64,
) -> Result<SplitStep> {
    // the current split is feasible for the current occupation measure, so
    // widening to it keeps the subproblem feasible despite the bisection slack
    let bounds: Vec<(f64, f64)> = confidence_bounds(probabilities, specs, width)?
        .into_iter()
        .zip(y)
        .map(|((lo, hi), &v)| (lo.min(v), hi.max(v)))
        .collect();
    let program = build_joint_y_subproblem(gamma, &bounds, joint_confidence, form)?;
    let target = program.solve(y)?;
    let next = y
        .iter()
        .zip(&target)
        .map(|(a, b)| a + step * (b - a))
        .collect();
    Ok(SplitStep {
        lower: program.lower,
        upper: program.upper,
        next,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{conic_solve, ClarabelBackend};

    fn program(
        gamma: &[f64],
        bounds: &[(f64, f64)],
        eps: f64,
        form: JointConfidenceForm,
    ) -> ConfidenceProgram {
        build_joint_y_subproblem(gamma, bounds, eps, form).unwrap()
    }

    #[test]
    fn single_constraint_takes_cheapest_endpoint() {
        let p = program(&[2.0], &[(0.85, 0.97)], 0.8, JointConfidenceForm::Product);
        let y = p.solve(&[0.9]).unwrap();
        assert!((y[0] - 0.85).abs() < 1e-12);
        let p = program(&[2.0], &[(0.5, 0.97)], 0.8, JointConfidenceForm::Product);
        assert!((p.solve(&[0.9]).unwrap()[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn zero_costs_keep_current_split() {
        let p = program(
            &[0.0, 0.0],
            &[(0.5, 1.0), (0.5, 1.0)],
            0.8,
            JointConfidenceForm::Product,
        );
        assert_eq!(p.solve(&[0.95, 0.91]).unwrap(), vec![0.95, 0.91]);
    }

    #[test]
    fn product_solution_matches_exponential_cone_program() {
        let p = program(
            &[1.3, 0.4, 2.2],
            &[(0.6, 1.0), (0.7, 0.99), (0.5, 0.97)],
            0.7,
            JointConfidenceForm::Product,
        );
        let y = p.solve(&[0.9, 0.9, 0.9]).unwrap();
        assert!(p.is_feasible(&y, 1e-12));
        let sol = conic_solve(&ClarabelBackend::default(), &p.to_conic()).unwrap();
        assert!(sol.is_optimal());
        assert!((p.objective(&y) - sol.objective).abs() < 1e-6);
    }

    #[test]
    fn sum_form_is_a_greedy_fill() {
        let p = program(
            &[3.0, 1.0],
            &[(0.2, 0.9), (0.1, 0.5)],
            0.8,
            JointConfidenceForm::Sum,
        );
        let y = p.solve(&[0.5, 0.5]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-12 && (y[1] - 0.5).abs() < 1e-12);
        let sol = conic_solve(&ClarabelBackend::default(), &p.to_conic()).unwrap();
        assert!((p.objective(&y) - sol.objective).abs() < 1e-6);
    }

    #[test]
    fn unreachable_joint_level_is_infeasible() {
        let p = program(
            &[1.0, 1.0],
            &[(0.5, 0.8), (0.5, 0.8)],
            0.7,
            JointConfidenceForm::Product,
        );
        assert!(matches!(p.solve(&[0.8, 0.8]), Err(Error::Infeasible(_))));
        assert!(
            build_joint_y_subproblem(&[1.0], &[(0.9, 0.8)], 0.5, JointConfidenceForm::Product)
                .is_err()
        );
    }
}
