use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::individual::{add_chance_piece, check_dims, factor_rows, occupation_program};
use super::joint::{next_split, satisfaction_probability, JointConfidenceForm};
use super::{check_joint_confidence, KlConstraintSpec, ObjectiveBall};
use crate::conic::{conic_solve, AffineExpr, ConicBackend, ConicProgram, ConicStatus};
use crate::distributions::{
    check_generator_floor, log_generator, std_quantile, std_quantile_derivative, GeneratorTag,
    MixtureLaw,
};
use crate::error::{Error, Result};
use crate::kl::{
    adjust_confidence, adjust_confidence_detail, detect_monotonicity, tightening_ratio, KlRadius,
};
use crate::mdp::{build_occupation_polytope, extract_policy, MdpInstance, OccupationVector};
use crate::report::{IterationRecord, SolveMode, SolveReport, SolveStatus};
use crate::search::golden_section;

/// Tolerance for the feasibility audit of a returned point.
const AUDIT_TOL: f64 = 1e-6;

/// Settings of the block-coordinate mixture heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    /// Starting confidence split; the balanced split is also tried.
    pub initial: Option<Vec<f64>>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub step: f64,
    pub line_search_tolerance: f64,
    /// Bracket width in `log alpha` at which the multiplier search stops.
    pub alpha_tolerance: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            initial: None,
            max_iterations: 50,
            tolerance: 1e-4,
            step: 0.9,
            line_search_tolerance: 1e-3,
            alpha_tolerance: 1e-6,
        }
    }
}

/// A point of the mixture program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureProgramVars {
    pub tau: OccupationVector,
    /// `None` stands for `alpha = +inf` (zero objective radius).
    pub alpha: Option<f64>,
    /// Attaining point of each KL coupling; `None` when the infimum is a boundary limit.
    pub x: Vec<Option<f64>>,
    pub y: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// `l[k][j]`: confidence assigned to component `j` of constraint `k`.
    pub l: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureOutcome {
    pub report: SolveReport,
    pub point: MixtureProgramVars,
}

/// Mixture reformulation: objective
/// `alpha log sum_j w_j exp(-tau^T mu_j / alpha) psi_j(-tau^T Sigma_j tau / (2 alpha^2)) + alpha delta_0`,
/// one cone per constraint component at level `l[k][j]`, the aggregation
/// `sum_j w_kj l[k][j] >= y_hat_k`, the KL coupling `y_hat_k >= h(x_k; y_k, delta_k)`,
/// and the joint-confidence constraint over `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureProgramDescription {
    mdp: MdpInstance,
    objective: MixtureLaw,
    objective_radius: KlRadius,
    specs: Vec<KlConstraintSpec>,
    laws: Vec<MixtureLaw>,
    joint_confidence: f64,
    form: JointConfidenceForm,
}

pub fn build_mixture_program(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
    joint_confidence: f64,
    form: JointConfidenceForm,
) -> Result<MixtureProgramDescription> {
    check_joint_confidence(joint_confidence)?;
    let obj = objective.reference.to_mixture();
    let laws: Vec<MixtureLaw> = specs.iter().map(|s| s.reference.to_mixture()).collect();
    check_dims(
        mdp,
        std::iter::once(obj.dim()).chain(laws.iter().map(MixtureLaw::dim)),
    )?;
    for (j, c) in obj.components().iter().enumerate() {
        c.require_positive_definite(&format!("objective component {j}"))?;
        if let Some(i) = c.location().iter().position(|m| *m > 0.0) {
            return Err(Error::Assumption(format!(
                "objective component {j} has positive mean {} at pair {i}; mean rewards must be nonpositive",
                c.location()[i]
            )));
        }
        check_generator_floor(c.generator(), objective.radius.value())
            .map_err(|e| Error::Assumption(format!("objective component {j}: {e}")))?;
    }
    for (k, law) in laws.iter().enumerate() {
        for c in law.components() {
            // constraint components need a one-dimensional CDF
            std_quantile(c.generator(), 0.5)
                .map_err(|e| Error::Assumption(format!("constraint {k}: {e}")))?;
        }
    }
    Ok(MixtureProgramDescription {
        mdp: mdp.clone(),
        objective: obj,
        objective_radius: objective.radius,
        specs: specs.to_vec(),
        laws,
        joint_confidence,
        form,
    })
}

/// Output of the occupation block at fixed component levels.
#[derive(Debug, Clone)]
struct BlockA {
    tau: OccupationVector,
    alpha: Option<f64>,
    value: f64,
    /// `theta[k][j]`
    theta: Vec<Vec<f64>>,
}

impl MixtureProgramDescription {
    pub fn num_constraints(&self) -> usize {
        self.laws.len()
    }

    pub fn joint_confidence(&self) -> f64 {
        self.joint_confidence
    }

    pub fn form(&self) -> JointConfidenceForm {
        self.form
    }

    /// Objective at `(tau, alpha)`; `alpha = None` is the `+inf` limit, finite
    /// only at zero radius.
    pub fn evaluate_objective(&self, tau: &[f64], alpha: Option<f64>) -> f64 {
        let delta = self.objective_radius.value();
        let comps = self
            .objective
            .weights()
            .iter()
            .zip(self.objective.components());
        let Some(a) = alpha else {
            return if delta == 0.0 {
                -comps.map(|(w, c)| w * c.mean_of(tau)).sum::<f64>()
            } else {
                f64::INFINITY
            };
        };
        let terms: Vec<f64> = comps
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| {
                let t = c.quadratic_form(tau) / (2.0 * a * a);
                w.ln() - c.mean_of(tau) / a + log_generator(c.generator(), -t)
            })
            .collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return f64::INFINITY;
        }
        a * (top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()) + a * delta
    }

    fn piece_slack(&self, tau: &[f64], k: usize, j: usize, level: f64) -> Result<f64> {
        let c = &self.laws[k].components()[j];
        let q = std_quantile(c.generator(), 1.0 - level)?;
        Ok(c.mean_of(tau) - self.specs[k].threshold + q * c.quadratic_form(tau).sqrt())
    }

    /// Largest violation of any constraint of the program at `vars`.
    pub fn max_violation(&self, vars: &MixtureProgramVars) -> Result<f64> {
        let tau = vars.tau.as_slice();
        let (eq, min) = build_occupation_polytope(&self.mdp).residual(tau);
        let mut worst = eq.max(-min);
        let box01 = |v: f64| (-v).max(v - 1.0).max(0.0);
        for k in 0..self.num_constraints() {
            let (y, y_hat) = (vars.y[k], vars.y_hat[k]);
            worst = worst.max(box01(y)).max(box01(y_hat));
            let mut aggregate = 0.0;
            for (j, w) in self.laws[k].weights().iter().enumerate() {
                let l = vars.l[k][j];
                worst = worst.max((0.5 - l).max(0.0)).max(box01(l));
                if l < 1.0 {
                    worst = worst.max((-self.piece_slack(tau, k, j, l)?).max(0.0));
                }
                aggregate += w * l;
            }
            worst = worst.max(y_hat - aggregate);
            let radius = self.specs[k].radius;
            let coupling = match vars.x[k] {
                Some(x) if x > 0.0 && x < 1.0 => tightening_ratio(x, y, radius.value()),
                Some(_) => f64::INFINITY,
                None => adjust_confidence(y, radius)?,
            };
            worst = worst.max(coupling - y_hat);
        }
        if !self.form.holds(&vars.y, self.joint_confidence, 0.0) {
            worst = worst.max(match self.form {
                JointConfidenceForm::Product => {
                    self.joint_confidence - vars.y.iter().product::<f64>()
                }
                JointConfidenceForm::Sum => self.joint_confidence - vars.y.iter().sum::<f64>(),
            });
        }
        Ok(worst)
    }

    /// Occupation program at fixed levels `l` and fixed `alpha` (`None`: the
    /// expected-value objective).
    pub fn fixed_alpha_program(&self, l: &[Vec<f64>], alpha: Option<f64>) -> Result<ConicProgram> {
        let mut p = occupation_program(&self.mdp);
        for (k, law) in self.laws.iter().enumerate() {
            for (j, c) in law.components().iter().enumerate() {
                add_chance_piece(
                    &mut p,
                    format!("piece[{k}][{j}]"),
                    c,
                    self.specs[k].threshold,
                    l[k][j],
                    k,
                )?;
            }
        }
        let comps = self
            .objective
            .weights()
            .iter()
            .zip(self.objective.components())
            .enumerate();
        let Some(a) = alpha else {
            let mut mean = vec![0.0; self.mdp.num_pairs()];
            for (w, c) in self
                .objective
                .weights()
                .iter()
                .zip(self.objective.components())
            {
                for (m, v) in mean.iter_mut().zip(c.location()) {
                    *m -= w * v;
                }
            }
            p.objective = AffineExpr::dense(0, &mean, 0.0);
            return Ok(p);
        };
        let s = p.add_variable("s", f64::NEG_INFINITY, f64::INFINITY);
        p.objective = AffineExpr::var(s)
            .scaled(a)
            .with_constant(a * self.objective_radius.value());
        let mut budget = AffineExpr::constant(1.0);
        for (j, (w, c)) in comps.filter(|(_, (w, _))| **w > 0.0) {
            // t_j >= tau^T Sigma_j tau / (2 alpha^2) as a rotated cone
            let t = p.add_variable(format!("t[{j}]"), 0.0, f64::INFINITY);
            let mut rows = vec![AffineExpr::constant(1.0).plus(t, -1.0)];
            rows.extend(
                factor_rows(c.factor(), 0)
                    .into_iter()
                    .map(|r| r.scaled(2f64.sqrt() / a)),
            );
            p.add_cone(
                format!("spread[{j}]"),
                AffineExpr::constant(1.0).plus(t, 1.0),
                1.0,
                rows,
            );
            // g_j >= log psi_j(-t_j)
            let g = match c.generator() {
                GeneratorTag::Gaussian => t,
                GeneratorTag::Laplace => {
                    let g = p.add_variable(format!("g[{j}]"), f64::NEG_INFINITY, f64::INFINITY);
                    p.add_exp_cone(
                        format!("laplace[{j}]"),
                        AffineExpr::var(g).scaled(-1.0),
                        AffineExpr::constant(1.0),
                        AffineExpr::constant(1.0).plus(t, -1.0),
                    );
                    g
                }
                other => {
                    return Err(Error::UnsupportedGenerator {
                        generator: other.name().into(),
                        operation: "mixture objective",
                    })
                }
            };
            let u = p.add_variable(format!("u[{j}]"), 0.0, f64::INFINITY);
            let neg_mean: Vec<f64> = c.location().iter().map(|m| -m / a).collect();
            p.add_exp_cone(
                format!("lse[{j}]"),
                AffineExpr::dense(0, &neg_mean, w.ln())
                    .plus(g, 1.0)
                    .plus(s, -1.0),
                AffineExpr::constant(1.0),
                AffineExpr::var(u),
            );
            budget = budget.plus(u, -1.0);
        }
        p.add_inequality("lse_budget", budget);
        Ok(p)
    }

    fn solve_fixed(
        &self,
        l: &[Vec<f64>],
        alpha: Option<f64>,
        backend: &dyn ConicBackend,
    ) -> Result<BlockA> {
        let p = self.fixed_alpha_program(l, alpha)?;
        let sol = conic_solve(backend, &p)?;
        match sol.status {
            ConicStatus::Optimal => {}
            ConicStatus::Infeasible => {
                return Err(Error::Infeasible(
                    "no occupation measure meets the component levels".into(),
                ))
            }
            other => {
                return Err(Error::Numerical(format!(
                    "mixture occupation step ended {other:?}"
                )))
            }
        }
        let n = self.mdp.num_pairs();
        let theta = self
            .laws
            .iter()
            .enumerate()
            .map(|(k, law)| {
                (0..law.len())
                    .map(|j| {
                        sol.dual(&format!("piece[{k}][{j}]"))
                            .unwrap_or(0.0)
                            .max(0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(BlockA {
            tau: OccupationVector::from_solver(sol.x[..n].to_vec())?,
            alpha,
            value: sol.objective,
            theta,
        })
    }

    /// Spread of the objective mixture along `tau`, used to seed the multiplier search.
    fn alpha_guess(&self, tau: &[f64]) -> f64 {
        let w = self.objective.weights();
        let comps = self.objective.components();
        let means: Vec<f64> = comps.iter().map(|c| c.mean_of(tau)).collect();
        let avg: f64 = w.iter().zip(&means).map(|(w, m)| w * m).sum();
        let var: f64 = w
            .iter()
            .zip(comps.iter().zip(&means))
            .map(|(w, (c, m))| w * (c.quadratic_form(tau) + (m - avg).powi(2)))
            .sum();
        (var / (2.0 * self.objective_radius.value()))
            .sqrt()
            .clamp(1e-8, 1e8)
    }

    /// Occupation block: the objective is jointly convex in `(tau, alpha)`, so
    /// its partial minimum over `tau` is unimodal in `log alpha`. The minimum is
    /// bracketed by expanding steps from `guess` and refined by golden section.
    fn block_a(
        &self,
        l: &[Vec<f64>],
        guess: Option<f64>,
        cfg: &MixtureConfig,
        backend: &dyn ConicBackend,
    ) -> Result<BlockA> {
        let mean_step = self.solve_fixed(l, None, backend)?;
        if self.objective_radius.value() == 0.0 {
            return Ok(mean_step);
        }
        let f = |log_a: f64| match self.solve_fixed(l, Some(log_a.exp()), backend) {
            Ok(b) => b.value,
            Err(_) => f64::INFINITY,
        };
        let start = guess
            .unwrap_or_else(|| self.alpha_guess(mean_step.tau.as_slice()))
            .ln();
        let (lo, hi) = bracket_minimum(&f, start, 1.0)?;
        let (log_a, _) = golden_section(f, lo, hi, cfg.alpha_tolerance);
        self.solve_fixed(l, Some(log_a.exp()), backend)
    }
}

/// Expands `[c - h, c + h]` downhill until the middle point is lowest.
fn bracket_minimum(f: &dyn Fn(f64) -> f64, center: f64, step: f64) -> Result<(f64, f64)> {
    let (mut a, mut b) = (center - step, center);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa < fb {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    // now f(b) <= f(a); walk from a through b
    let mut h = b - a;
    for _ in 0..60 {
        let c = b + h;
        let fc = f(c);
        if fc >= fb && fb.is_finite() {
            return Ok((a.min(c), a.max(c)));
        }
        a = b;
        b = c;
        fb = fc;
        h *= 1.6;
    }
    Err(Error::Numerical(
        "multiplier search found no bracket".into(),
    ))
}

/// Component levels `l_j = 1/2 + t (P_j - 1/2)` with `t` chosen so that
/// `sum_j w_j l_j = y_hat`; every level stays within `[1/2, P_j]`.
fn allocate(weights: &[f64], probabilities: &[f64], y_hat: f64) -> Vec<f64> {
    let mixed: f64 = weights.iter().zip(probabilities).map(|(w, p)| w * p).sum();
    let t = if mixed > 0.5 {
        ((y_hat - 0.5) / (mixed - 0.5)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    probabilities.iter().map(|p| 0.5 + t * (p - 0.5)).collect()
}

/// Marginal cost of raising `y_hat_k` under the proportional allocation.
fn confidence_cost(
    desc: &MixtureProgramDescription,
    tau: &[f64],
    k: usize,
    theta: &[f64],
    levels: &[f64],
    probabilities: &[f64],
) -> Result<f64> {
    let law = &desc.laws[k];
    let mixed: f64 = law
        .weights()
        .iter()
        .zip(probabilities)
        .map(|(w, p)| w * p)
        .sum();
    if mixed <= 0.5 {
        return Ok(0.0);
    }
    let mut cost = 0.0;
    for (j, c) in law.components().iter().enumerate() {
        if theta[j] == 0.0 {
            continue;
        }
        let slope = (probabilities[j] - 0.5) / (mixed - 0.5);
        let sigma = c.quadratic_form(tau).sqrt();
        cost += theta[j] * std_quantile_derivative(c.generator(), 1.0 - levels[j])? * sigma * slope;
    }
    Ok(cost)
}

struct Split {
    y: Vec<f64>,
    y_hat: Vec<f64>,
    x: Vec<Option<f64>>,
}

fn tighten(desc: &MixtureProgramDescription, y: &[f64]) -> Result<Split> {
    let mut y_hat = Vec::with_capacity(y.len());
    let mut x = Vec::with_capacity(y.len());
    for (spec, &v) in desc.specs.iter().zip(y) {
        let t = adjust_confidence_detail(v, spec.radius)?;
        y_hat.push(t.value);
        x.push(t.argmin);
    }
    Ok(Split {
        y: y.to_vec(),
        y_hat,
        x,
    })
}

fn balanced_split(form: JointConfidenceForm, eps_hat: f64, k: usize) -> Vec<f64> {
    match form {
        JointConfidenceForm::Product => vec![eps_hat.powf(1.0 / k as f64); k],
        JointConfidenceForm::Sum => vec![(eps_hat / k as f64).clamp(0.5, 1.0); k],
    }
}

/// Block-coordinate heuristic for the mixture program.
///
/// Alternates an occupation block, which minimizes over `(tau, alpha)` at
/// fixed component levels, with a confidence block, which moves the split `y`
/// against the marginal costs of the chance constraints and re-derives
/// `y_hat`, `x` and the component levels. Every returned point is audited
/// against all constraints; the result is a stationary point at best.
pub fn solve_mixture_heuristic(
    desc: &MixtureProgramDescription,
    cfg: &MixtureConfig,
    backend: &dyn ConicBackend,
) -> Result<MixtureOutcome> {
    let started = Instant::now();
    let k_count = desc.num_constraints();
    if !(cfg.step > 0.0 && cfg.step <= 1.0) {
        return Err(Error::Validation(format!(
            "step length must lie in (0, 1], got {}",
            cfg.step
        )));
    }
    let mut candidates = Vec::new();
    if let Some(y0) = &cfg.initial {
        if y0.len() != k_count || y0.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "initial split {y0:?} is not a vector of {k_count} probabilities"
            )));
        }
        if !desc.form.holds(y0, desc.joint_confidence, 1e-12) {
            return Err(Error::Validation(format!(
                "initial split {y0:?} violates the joint confidence"
            )));
        }
        candidates.push(y0.clone());
    }
    candidates.push(balanced_split(desc.form, desc.joint_confidence, k_count));

    // phase 1: first candidate whose component levels admit an occupation measure
    let mut start = None;
    for y in &candidates {
        let split = tighten(desc, y)?;
        if split.y_hat.iter().any(|v| *v < 0.5) {
            continue;
        }
        let l: Vec<Vec<f64>> = split
            .y_hat
            .iter()
            .zip(&desc.laws)
            .map(|(v, law)| vec![*v; law.len()])
            .collect();
        match desc.block_a(&l, None, cfg, backend) {
            Ok(a) => {
                start = Some((split, l, a));
                break;
            }
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let Some((mut split, mut l, mut a)) = start else {
        return Err(Error::Infeasible(format!(
            "no feasible starting split among {candidates:?}"
        )));
    };

    let mut records = Vec::new();
    let status = loop {
        let n = records.len();
        let tau = a.tau.as_slice().to_vec();
        let mut probs = Vec::with_capacity(k_count);
        let mut mixed = Vec::with_capacity(k_count);
        let mut gamma = Vec::with_capacity(k_count);
        for (k, law) in desc.laws.iter().enumerate() {
            let p: Vec<f64> = law
                .components()
                .iter()
                .map(|c| satisfaction_probability(&tau, c, desc.specs[k].threshold))
                .collect::<Result<_>>()?;
            mixed.push(
                law.weights()
                    .iter()
                    .zip(&p)
                    .map(|(w, v)| w * v)
                    .sum::<f64>(),
            );
            gamma.push(confidence_cost(desc, &tau, k, &a.theta[k], &l[k], &p)?);
            probs.push(p);
        }
        let step = next_split(
            &mixed,
            &desc.specs,
            &gamma,
            &split.y,
            desc.joint_confidence,
            desc.form,
            cfg.line_search_tolerance,
            cfg.step,
        )?;
        let movement = step
            .next
            .iter()
            .zip(&split.y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        records.push(IterationRecord {
            iteration: n,
            y: split.y.clone(),
            y_tilde: split.y_hat.clone(),
            theta: a.theta.iter().map(|t| t.iter().sum()).collect(),
            gamma,
            lower: step.lower,
            upper: step.upper,
            value: a.value,
            movement,
        });
        if movement < cfg.tolerance {
            break SolveStatus::Converged;
        }
        if n + 1 >= cfg.max_iterations {
            break SolveStatus::IterationLimit;
        }
        let next = tighten(desc, &step.next)?;
        let next_l: Vec<Vec<f64>> = desc
            .laws
            .iter()
            .zip(probs.iter().zip(&next.y_hat))
            .map(|(law, (p, v))| allocate(law.weights(), p, *v))
            .collect();
        let next_a = desc.block_a(&next_l, a.alpha, cfg, backend)?;
        split = next;
        l = next_l;
        a = next_a;
    };

    let point = MixtureProgramVars {
        tau: a.tau.clone(),
        alpha: a.alpha,
        x: split.x.clone(),
        y: split.y.clone(),
        y_hat: split.y_hat.clone(),
        l,
    };
    let violation = desc.max_violation(&point)?;
    if violation > AUDIT_TOL {
        return Err(Error::Numerical(format!(
            "mixture point violates its constraints by {violation:.3e}"
        )));
    }
    let chi_direction = desc
        .specs
        .first()
        .map(|s| detect_monotonicity(s.radius))
        .transpose()?;
    let report = SolveReport {
        mode: SolveMode::Mixture,
        status,
        policy: extract_policy(&a.tau, &desc.mdp)?,
        objective: a.value,
        tau: a.tau,
        confidences: split.y_hat,
        duals: a.theta.iter().map(|t| t.iter().sum()).collect(),
        alpha: a.alpha,
        heuristic: Some("stationary-point only".into()),
        chi_direction,
        iterations: records,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(MixtureOutcome { report, point })
}
