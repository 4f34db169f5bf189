//! Alternating driver for the joint problem.
//!
//! Each pass fixes the confidence split `y`, solves the occupation step at the
//! tightened confidences `chi(y)`, prices each chance constraint from its
//! multiplier, and moves `y` a damped step towards the cheapest split that the
//! current occupation measure still supports. The occupation step's value is
//! nonincreasing along the passes; its final value bounds the joint optimum
//! from above.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::ConicBackend;
use crate::distributions::{std_quantile_derivative, worst_case_expectation};
use crate::error::{Error, Result};
use crate::kl::{adjust_confidence, detect_monotonicity};
use crate::mdp::{extract_policy, MdpInstance};
use crate::reformulate::{
    build_joint_tau_subproblem, next_split, satisfaction_probability, solve_tau_program,
    JointConfidenceForm, KlConstraintSpec, ObjectiveBall,
};
use crate::report::{IterationRecord, SolveMode, SolveReport, SolveStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Algorithm1Config {
    /// Starting split `y^0`.
    pub initial: Vec<f64>,
    pub max_iterations: usize,
    /// Movement `||y^{n+1} - y^n||` below which the driver stops.
    pub tolerance: f64,
    /// Damping `gamma` of the split update.
    pub step: f64,
    /// Bracket width of the bisection inverting `chi`.
    pub line_search_tolerance: f64,
    pub joint_form: JointConfidenceForm,
}

impl Default for Algorithm1Config {
    fn default() -> Self {
        Self {
            initial: vec![0.95, 0.91],
            max_iterations: 50,
            tolerance: 1e-4,
            step: 0.9,
            line_search_tolerance: 1e-3,
            joint_form: JointConfidenceForm::Product,
        }
    }
}

impl Algorithm1Config {
    fn validate(&self, constraints: usize, joint_confidence: f64) -> Result<()> {
        if self.initial.len() != constraints {
            return Err(Error::Dimension {
                expected: constraints,
                actual: self.initial.len(),
                context: "initial confidence split",
            });
        }
        if self.initial.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "initial split {:?} must lie in [0, 1]",
                self.initial
            )));
        }
        if !self
            .joint_form
            .holds(&self.initial, joint_confidence, 1e-12)
        {
            return Err(Error::Validation(format!(
                "initial split {:?} violates the joint confidence {joint_confidence}",
                self.initial
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Validation(format!(
                "step length must lie in (0, 1], got {}",
                self.step
            )));
        }
        if !(self.tolerance > 0.0 && self.line_search_tolerance >= 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        Ok(())
    }
}

pub fn algorithm1(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
    joint_confidence: f64,
    cfg: &Algorithm1Config,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    let started = Instant::now();
    cfg.validate(specs.len(), joint_confidence)?;
    let laws = specs
        .iter()
        .map(|s| s.reference.elliptical())
        .collect::<Result<Vec<_>>>()?;
    let chi_direction = specs
        .first()
        .map(|s| detect_monotonicity(s.radius))
        .transpose()?;

    let mut y = cfg.initial.clone();
    let mut records = Vec::new();
    let (status, tp, sol) = loop {
        let n = records.len();
        let y_tilde = y
            .iter()
            .zip(specs)
            .map(|(v, s)| adjust_confidence(*v, s.radius))
            .collect::<Result<Vec<_>>>()?;
        let tp = build_joint_tau_subproblem(mdp, specs, objective, &y_tilde)?;
        let sol = match solve_tau_program(&tp, backend) {
            Err(Error::Infeasible(msg)) if n == 0 => {
                return Err(Error::Infeasible(format!(
                    "infeasible start at y0 = {y:?} ({msg}); try a larger initial split"
                )))
            }
            other => other?,
        };
        let tau = sol.tau.as_slice();
        let mut probs = Vec::with_capacity(specs.len());
        let mut gamma = Vec::with_capacity(specs.len());
        for (k, law) in laws.iter().enumerate() {
            probs.push(satisfaction_probability(tau, law, specs[k].threshold)?);
            let sigma = law.quadratic_form(tau).sqrt();
            let slope = std_quantile_derivative(law.generator(), 1.0 - y_tilde[k])?;
            gamma.push(sol.duals[k] * slope * sigma);
        }
        let step = next_split(
            &probs,
            specs,
            &gamma,
            &y,
            joint_confidence,
            cfg.joint_form,
            cfg.line_search_tolerance,
            cfg.step,
        )?;
        let movement = step
            .next
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        log::debug!(
            "pass {n}: y = {y:?}, value = {:.8}, movement = {movement:.3e}",
            sol.objective
        );
        records.push(IterationRecord {
            iteration: n,
            y: y.clone(),
            y_tilde,
            theta: sol.duals.clone(),
            gamma,
            lower: step.lower,
            upper: step.upper,
            value: sol.objective,
            movement,
        });
        if movement < cfg.tolerance {
            break (SolveStatus::Converged, tp, sol);
        }
        if n + 1 >= cfg.max_iterations {
            break (SolveStatus::IterationLimit, tp, sol);
        }
        y = step.next;
    };

    let obj_law = objective.reference.elliptical()?;
    let alpha =
        worst_case_expectation(sol.tau.as_slice(), obj_law, objective.radius.value())?.alpha;
    Ok(SolveReport {
        mode: SolveMode::Joint,
        status,
        policy: extract_policy(&sol.tau, mdp)?,
        objective: sol.objective,
        tau: sol.tau,
        confidences: tp.levels,
        duals: sol.duals,
        alpha,
        heuristic: None,
        chi_direction,
        iterations: records,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}
