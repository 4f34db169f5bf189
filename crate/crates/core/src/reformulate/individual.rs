use std::time::Instant;

use nalgebra::DMatrix;

use super::{KlConstraintSpec, ObjectiveBall};
use crate::conic::{
    self, AffineExpr, ConicBackend, ConicProgram, ConicSolution, ConicStatus, NormTerm,
};
use crate::distributions::{
    check_generator_floor, robust_penalty_coefficient, std_quantile, worst_case_expectation,
    EllipticalLaw, GeneratorTag,
};
use crate::error::{Error, Result};
use crate::kl::adjust_confidence;
use crate::mdp::{build_occupation_polytope, extract_policy, MdpInstance, OccupationVector};
use crate::report::{SolveMode, SolveReport, SolveStatus};

/// Residual above which a returned occupation vector is rejected.
const FEASIBILITY_TOL: f64 = 1e-6;
/// Step of the finite-difference fallback for chance-constraint multipliers.
const DUAL_STEP: f64 = 1e-5;

/// Conic program over the occupation measure with one named cone per chance
/// constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct TauProgram {
    pub program: ConicProgram,
    pub num_pairs: usize,
    pub constraint_names: Vec<String>,
    /// Reference-distribution confidence enforced per constraint.
    pub levels: Vec<f64>,
    /// Weight of the objective dispersion term `||F_0 tau||`.
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TauSolution {
    pub tau: OccupationVector,
    pub objective: f64,
    /// Chance-constraint multipliers in constraint order.
    pub duals: Vec<f64>,
    pub conic: ConicSolution,
}

pub(crate) fn factor_rows(factor: &DMatrix<f64>, offset: usize) -> Vec<AffineExpr> {
    factor
        .row_iter()
        .map(|row| AffineExpr::dense(offset, &row.iter().copied().collect::<Vec<_>>(), 0.0))
        .collect()
}

/// Variables `tau[s,a] >= 0` with the balance equations named `flow[s']`.
pub(crate) fn occupation_program(mdp: &MdpInstance) -> ConicProgram {
    let names = mdp
        .pairs()
        .map(|(_, s, a)| format!("tau[{s},{a}]"))
        .collect();
    let mut p = ConicProgram::new(names);
    for b in &mut p.bounds {
        b.0 = 0.0;
    }
    let poly = build_occupation_polytope(mdp);
    for (row, rhs) in poly.eq_matrix.row_iter().zip(poly.eq_rhs.iter()) {
        let coeffs: Vec<f64> = row.iter().copied().collect();
        p.add_equality(
            format!("flow[{}]", p.linear.len()),
            AffineExpr::dense(0, &coeffs, -rhs),
        );
    }
    p
}

/// Adds `mu^T tau + q(1 - level) ||F tau|| >= threshold` as a named cone.
pub(crate) fn add_chance_piece(
    program: &mut ConicProgram,
    name: String,
    law: &EllipticalLaw,
    threshold: f64,
    level: f64,
    index: usize,
) -> Result<()> {
    if !(level >= 0.5) {
        return Err(Error::Nonconvex {
            index,
            confidence: level,
        });
    }
    let q = std_quantile(law.generator(), 1.0 - level)?;
    if !q.is_finite() {
        return Err(Error::Domain(format!(
            "constraint {index}: confidence {level} has no finite quantile"
        )));
    }
    assert!(
        q <= 0.0,
        "cone multiplier must be nonpositive at confidence {level}"
    );
    program.add_cone(
        name,
        AffineExpr::dense(0, law.location(), -threshold),
        -q,
        factor_rows(law.factor(), 0),
    );
    Ok(())
}

pub(crate) fn check_dims(mdp: &MdpInstance, dims: impl IntoIterator<Item = usize>) -> Result<()> {
    let n = mdp.num_pairs();
    for d in dims {
        if d != n {
            return Err(Error::Dimension {
                expected: n,
                actual: d,
                context: "reward law over state-action pairs",
            });
        }
    }
    Ok(())
}

fn objective_law(objective: &ObjectiveBall) -> Result<&EllipticalLaw> {
    let law = objective.reference.elliptical()?;
    law.require_positive_definite("objective reference")?;
    check_generator_floor(law.generator(), objective.radius.value())?;
    Ok(law)
}

fn gaussian_objective_law(objective: &ObjectiveBall) -> Result<&EllipticalLaw> {
    let law = objective_law(objective)?;
    if law.generator() != GeneratorTag::Gaussian {
        return Err(Error::Unsupported(format!(
            "{} objective reference has no closed-form program; use solve_individual_nongaussian",
            law.generator().name()
        )));
    }
    Ok(law)
}

fn tau_program(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &EllipticalLaw,
    penalty: f64,
    levels: Vec<f64>,
) -> Result<TauProgram> {
    if levels.len() != specs.len() {
        return Err(Error::Dimension {
            expected: specs.len(),
            actual: levels.len(),
            context: "confidence levels",
        });
    }
    check_dims(
        mdp,
        std::iter::once(objective.dim()).chain(specs.iter().map(|s| s.reference.dim())),
    )?;
    let mut program = occupation_program(mdp);
    let neg_mean: Vec<f64> = objective.location().iter().map(|m| -m).collect();
    program.objective = AffineExpr::dense(0, &neg_mean, 0.0);
    if penalty > 0.0 {
        program.norm_terms.push(NormTerm {
            weight: penalty,
            rows: factor_rows(objective.factor(), 0),
        });
    }
    let mut constraint_names = Vec::with_capacity(specs.len());
    for (k, (spec, &level)) in specs.iter().zip(&levels).enumerate() {
        let name = format!("chance[{k}]");
        add_chance_piece(
            &mut program,
            name.clone(),
            spec.reference.elliptical()?,
            spec.threshold,
            level,
            k,
        )?;
        constraint_names.push(name);
    }
    Ok(TauProgram {
        program,
        num_pairs: mdp.num_pairs(),
        constraint_names,
        levels,
        penalty,
    })
}

/// Individual program with a Gaussian objective reference:
/// `min -mu_0^T tau + sqrt(2 delta_0) ||F_0 tau||` subject to one cone per
/// constraint at the tightened confidence and the occupation polytope.
pub fn build_individual(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
) -> Result<TauProgram> {
    let law = gaussian_objective_law(objective)?;
    let levels = specs
        .iter()
        .map(|s| adjust_confidence(s.confidence, s.radius))
        .collect::<Result<Vec<_>>>()?;
    tau_program(
        mdp,
        specs,
        law,
        (2.0 * objective.radius.value()).sqrt(),
        levels,
    )
}

/// Occupation step of the joint scheme at fixed reference confidences `y_tilde`.
pub fn build_joint_tau_subproblem(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
    y_tilde: &[f64],
) -> Result<TauProgram> {
    let law = gaussian_objective_law(objective)?;
    tau_program(
        mdp,
        specs,
        law,
        (2.0 * objective.radius.value()).sqrt(),
        y_tilde.to_vec(),
    )
}

/// Solves a [`TauProgram`], mapping infeasibility and numerical trouble to errors
/// and filling multipliers by finite differences when the backend has none.
pub fn solve_tau_program(tp: &TauProgram, backend: &dyn ConicBackend) -> Result<TauSolution> {
    let sol = conic::conic_solve(backend, &tp.program)?;
    match sol.status {
        ConicStatus::Optimal => {}
        ConicStatus::Infeasible => {
            return Err(Error::Infeasible(format!(
                "no occupation measure meets the chance constraints at confidences {:?}",
                tp.levels
            )))
        }
        ConicStatus::Unbounded => {
            return Err(Error::Numerical(
                "occupation program reported unbounded".into(),
            ))
        }
        ConicStatus::NumericalLimit => {
            return Err(Error::Numerical(format!(
                "conic solver stopped short of optimality (residual {:.3e})",
                sol.residual
            )))
        }
    }
    if sol.residual > FEASIBILITY_TOL {
        return Err(Error::Numerical(format!(
            "solution violates constraints by {:.3e}",
            sol.residual
        )));
    }
    let names: Vec<&str> = tp.constraint_names.iter().map(String::as_str).collect();
    let duals = match &sol.duals {
        Some(map) => names
            .iter()
            .map(|n| map.get(*n).copied().unwrap_or(0.0))
            .collect(),
        None => {
            let fd = conic::finite_difference_duals(backend, &tp.program, &names, DUAL_STEP)?;
            names.iter().map(|n| fd[*n]).collect::<Vec<f64>>()
        }
    };
    let duals = duals.into_iter().map(|d: f64| d.max(0.0)).collect();
    let tau = OccupationVector::from_solver(sol.x[..tp.num_pairs].to_vec())?;
    Ok(TauSolution {
        tau,
        objective: sol.objective,
        duals,
        conic: sol,
    })
}

fn report(
    mdp: &MdpInstance,
    tp: &TauProgram,
    sol: TauSolution,
    alpha: Option<f64>,
    started: Instant,
) -> Result<SolveReport> {
    Ok(SolveReport {
        mode: SolveMode::Individual,
        status: SolveStatus::Optimal,
        policy: extract_policy(&sol.tau, mdp)?,
        objective: sol.objective,
        tau: sol.tau,
        confidences: tp.levels.clone(),
        duals: sol.duals,
        alpha,
        heuristic: None,
        chi_direction: None,
        iterations: Vec::new(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Solves the individual problem, dispatching on the objective generator.
pub fn solve_individual(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    if objective.reference.elliptical()?.generator() != GeneratorTag::Gaussian {
        return solve_individual_nongaussian(mdp, specs, objective, backend);
    }
    let started = Instant::now();
    let tp = build_individual(mdp, specs, objective)?;
    let sol = solve_tau_program(&tp, backend)?;
    let alpha = worst_case_expectation(
        sol.tau.as_slice(),
        objective.reference.elliptical()?,
        objective.radius.value(),
    )?
    .alpha;
    report(mdp, &tp, sol, alpha, started)
}

/// Individual problem for any objective generator with a finite floor.
///
/// The worst-case objective equals `-mu_0^T tau + C ||F_0 tau||` where
/// `C = min_s s (log psi(-1 / (2 s^2)) + delta_0)` depends on the generator
/// and radius only, so the problem is the same cone program with `C` in place
/// of `sqrt(2 delta_0)`. The multiplier is recovered as `alpha = s* ||F_0 tau||`.
pub fn solve_individual_nongaussian(
    mdp: &MdpInstance,
    specs: &[KlConstraintSpec],
    objective: &ObjectiveBall,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    let started = Instant::now();
    let law = objective_law(objective)?;
    let (penalty, s_star) = robust_penalty_coefficient(law.generator(), objective.radius.value())?;
    let levels = specs
        .iter()
        .map(|s| adjust_confidence(s.confidence, s.radius))
        .collect::<Result<Vec<_>>>()?;
    let tp = tau_program(mdp, specs, law, penalty, levels)?;
    let sol = solve_tau_program(&tp, backend)?;
    let spread = law.quadratic_form(sol.tau.as_slice()).sqrt();
    let alpha = s_star.filter(|_| spread > 0.0).map(|s| s * spread);
    report(mdp, &tp, sol, alpha, started)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;
    use crate::distributions::worst_case_expectation_numeric;
    use crate::kl::KlRadius;
    use crate::reformulate::satisfaction_probability;

    /// One state, two actions: the occupation simplex is `tau = (t, 1 - t)`.
    fn bandit() -> MdpInstance {
        MdpInstance::new(vec![2], vec![vec![vec![1.0], vec![1.0]]], vec![1.0], 0.9).unwrap()
    }

    fn law(mean: [f64; 2], diag: [f64; 2], gen: GeneratorTag) -> EllipticalLaw {
        EllipticalLaw::diagonal(mean.to_vec(), &diag, gen).unwrap()
    }

    fn specs(delta: f64) -> Vec<KlConstraintSpec> {
        let r = KlRadius::new(delta).unwrap();
        vec![KlConstraintSpec::new(
            law([0.0, 3.0], [1.0, 1.0], GeneratorTag::Gaussian),
            1.0,
            0.8,
            r,
        )
        .unwrap()]
    }

    /// Minimum of `objective(t)` over a fine grid of the feasible `t`.
    fn grid_min(objective: impl Fn(&[f64]) -> f64, feasible: impl Fn(&[f64]) -> bool) -> f64 {
        (0..=20_000)
            .map(|i| {
                let t = i as f64 / 20_000.0;
                [t, 1.0 - t]
            })
            .filter(|tau| feasible(tau))
            .map(|tau| objective(&tau))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn gaussian_program_matches_grid() {
        let backend = ClarabelBackend::default();
        let delta = 0.2;
        let obj_law = law([4.0, 1.0], [2.0, 0.5], GeneratorTag::Gaussian);
        let ball = ObjectiveBall::new(obj_law.clone(), KlRadius::new(delta).unwrap());
        let sp = specs(delta);
        let report = solve_individual(&bandit(), &sp, &ball, &backend).unwrap();
        let level = adjust_confidence(0.8, sp[0].radius).unwrap();
        let cons = sp[0].reference.elliptical().unwrap();
        let oracle = grid_min(
            |tau| -worst_case_expectation(tau, &obj_law, delta).unwrap().value,
            |tau| satisfaction_probability(tau, cons, 1.0).unwrap() >= level,
        );
        assert!(
            (report.objective - oracle).abs() < 1e-3,
            "{} vs {oracle}",
            report.objective
        );
        // the high-mean action is capped by the chance constraint
        assert!(report.duals[0] > 0.0);
        let p = satisfaction_probability(report.tau.as_slice(), cons, 1.0).unwrap();
        assert!((p - level).abs() < 1e-5);
    }

    #[test]
    fn laplace_objective_matches_numeric_worst_case() {
        let backend = ClarabelBackend::default();
        let delta = 0.1;
        let obj_law = law([4.0, 1.0], [2.0, 0.5], GeneratorTag::Laplace);
        let ball = ObjectiveBall::new(obj_law.clone(), KlRadius::new(delta).unwrap());
        let sp = specs(delta);
        let report = solve_individual(&bandit(), &sp, &ball, &backend).unwrap();
        let level = adjust_confidence(0.8, sp[0].radius).unwrap();
        let cons = sp[0].reference.elliptical().unwrap();
        let oracle = grid_min(
            |tau| {
                -worst_case_expectation_numeric(tau, &obj_law, delta)
                    .unwrap()
                    .value
            },
            |tau| satisfaction_probability(tau, cons, 1.0).unwrap() >= level,
        );
        assert!(
            (report.objective - oracle).abs() < 1e-3,
            "{} vs {oracle}",
            report.objective
        );
        let at = worst_case_expectation_numeric(report.tau.as_slice(), &obj_law, delta).unwrap();
        assert!((report.objective + at.value).abs() < 1e-5);
        let alpha = report.alpha.unwrap();
        assert!((alpha - at.alpha.unwrap()).abs() / alpha < 1e-3);
    }

    #[test]
    fn low_confidence_is_rejected_as_nonconvex() {
        let backend = ClarabelBackend::default();
        let r = KlRadius::new(0.0).unwrap();
        let sp = vec![KlConstraintSpec::new(
            law([0.0, 3.0], [1.0, 1.0], GeneratorTag::Gaussian),
            1.0,
            0.3,
            r,
        )
        .unwrap()];
        let ball = ObjectiveBall::new(law([4.0, 1.0], [2.0, 0.5], GeneratorTag::Gaussian), r);
        assert!(matches!(
            solve_individual(&bandit(), &sp, &ball, &backend),
            Err(Error::Nonconvex { index: 0, .. })
        ));
    }

    #[test]
    fn unreachable_threshold_is_infeasible() {
        let backend = ClarabelBackend::default();
        let r = KlRadius::new(0.1).unwrap();
        let sp = vec![KlConstraintSpec::new(
            law([0.0, 3.0], [1.0, 1.0], GeneratorTag::Gaussian),
            10.0,
            0.8,
            r,
        )
        .unwrap()];
        let ball = ObjectiveBall::new(law([4.0, 1.0], [2.0, 0.5], GeneratorTag::Gaussian), r);
        assert!(matches!(
            solve_individual(&bandit(), &sp, &ball, &backend),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let backend = ClarabelBackend::default();
        let r = KlRadius::new(0.1).unwrap();
        let ball = ObjectiveBall::new(
            EllipticalLaw::diagonal(vec![1.0; 3], &[1.0; 3], GeneratorTag::Gaussian).unwrap(),
            r,
        );
        assert!(matches!(
            solve_individual(&bandit(), &specs(0.1), &ball, &backend),
            Err(Error::Dimension { .. })
        ));
    }
}
