//! Oracles shared by the integration suites. They avoid the reformulation
//! code and rebuild each quantity from first principles.
#![allow(dead_code)]

use drccmdp::conic::{
    conic_solve, AffineExpr, ClarabelBackend, ConicProgram, ConicStatus, NormTerm,
};
use drccmdp::distributions::{EllipticalLaw, GeneratorTag};
use drccmdp::mdp::MdpInstance;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `KL(Bernoulli(q) || Bernoulli(p))`.
pub fn bernoulli_kl(q: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// Smallest probability of an event over the KL ball of radius `delta` around
/// a law giving it probability `p`: the worst case moves mass between the
/// event and its complement only.
pub fn worst_case_probability(p: f64, delta: f64) -> f64 {
    if bernoulli_kl(0.0, p) <= delta {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(mid, p) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Reference probability needed so that the worst case over the ball is `eps`.
pub fn tightened_level(eps: f64, delta: f64) -> f64 {
    if delta == 0.0 || eps >= 1.0 {
        return eps;
    }
    let (mut lo, mut hi) = (eps, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if bernoulli_kl(eps, mid) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Lower Cholesky factor `L` with `L L^T = Sigma`.
pub fn cholesky(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    sigma.clone().cholesky().expect("positive definite").l()
}

pub fn gaussian_probability(tau: &[f64], law: &EllipticalLaw, threshold: f64) -> f64 {
    let t = DVector::from_column_slice(tau);
    let mean = DVector::from_column_slice(law.location()).dot(&t);
    let sd = (t.transpose() * law.dispersion() * &t)[(0, 0)].sqrt();
    normal_cdf((mean - threshold) / sd)
}

/// `min -mu_0^T tau + penalty ||L_0^T tau||` over the occupation polytope with
/// `mu_k^T tau - xi_k >= z(level_k) ||L_k^T tau||`, encoded from the raw
/// transition data. Returns `None` when infeasible.
pub fn nominal_program(
    mdp: &MdpInstance,
    objective: &EllipticalLaw,
    penalty: f64,
    constraints: &[(&EllipticalLaw, f64, f64)],
) -> Option<(f64, Vec<f64>)> {
    let n = mdp.num_pairs();
    let beta = mdp.discount();
    let names = (0..n).map(|i| format!("x{i}")).collect();
    let mut p = ConicProgram::new(names);
    for b in &mut p.bounds {
        b.0 = 0.0;
    }
    for next in 0..mdp.num_states() {
        let mut coeffs = vec![0.0; n];
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions(s) {
                let own = if s == next { 1.0 } else { 0.0 };
                coeffs[mdp.pair_index(s, a)] = own - beta * mdp.transition()[s][a][next];
            }
        }
        p.add_equality(
            format!("balance{next}"),
            AffineExpr::dense(0, &coeffs, -(1.0 - beta) * mdp.initial()[next]),
        );
    }
    let rows = |law: &EllipticalLaw| {
        let l = cholesky(law.dispersion());
        (0..n)
            .map(|j| AffineExpr::dense(0, &l.column(j).iter().copied().collect::<Vec<_>>(), 0.0))
            .collect::<Vec<_>>()
    };
    let neg: Vec<f64> = objective.location().iter().map(|m| -m).collect();
    p.objective = AffineExpr::dense(0, &neg, 0.0);
    if penalty > 0.0 {
        p.norm_terms.push(NormTerm {
            weight: penalty,
            rows: rows(objective),
        });
    }
    for (k, (law, xi, level)) in constraints.iter().enumerate() {
        p.add_cone(
            format!("c{k}"),
            AffineExpr::dense(0, law.location(), -xi),
            normal_quantile(*level),
            rows(law),
        );
    }
    let sol = conic_solve(&ClarabelBackend::default(), &p).expect("well-formed program");
    match sol.status {
        ConicStatus::Optimal => Some((sol.objective, sol.x[..n].to_vec())),
        ConicStatus::Infeasible => None,
        other => panic!("oracle program ended {other:?}"),
    }
}

/// Occupation measure of the policy choosing action 0 with probability
/// `pi[s]`, from the 2x2 balance equations.
pub fn two_state_occupation(mdp: &MdpInstance, pi: [f64; 2]) -> [f64; 4] {
    let beta = mdp.discount();
    let mut m = DMatrix::<f64>::identity(2, 2);
    for s in 0..2 {
        for next in 0..2 {
            let p =
                pi[s] * mdp.transition()[s][0][next] + (1.0 - pi[s]) * mdp.transition()[s][1][next];
            m[(next, s)] -= beta * p;
        }
    }
    let rhs = DVector::from_iterator(2, mdp.initial().iter().map(|q| (1.0 - beta) * q));
    let d = m.lu().solve(&rhs).expect("nonsingular");
    [
        d[0] * pi[0],
        d[0] * (1.0 - pi[0]),
        d[1] * pi[1],
        d[1] * (1.0 - pi[1]),
    ]
}

/// Exhaustive search over two-state stationary policies: a full grid, then
/// repeated zooms around the best feasible point.
pub fn grid_oracle(
    mdp: &MdpInstance,
    objective: impl Fn(&[f64]) -> f64,
    feasible: impl Fn(&[f64]) -> bool,
) -> Option<(f64, [f64; 4])> {
    let mut best: Option<(f64, [f64; 4], [f64; 2])> = None;
    let (mut lo, mut hi) = ([0.0, 0.0], [1.0, 1.0]);
    let m = 400;
    for _ in 0..5 {
        let step = [(hi[0] - lo[0]) / m as f64, (hi[1] - lo[1]) / m as f64];
        for i in 0..=m {
            for j in 0..=m {
                let pi = [lo[0] + i as f64 * step[0], lo[1] + j as f64 * step[1]];
                let tau = two_state_occupation(mdp, pi);
                if !feasible(&tau) {
                    continue;
                }
                let v = objective(&tau);
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, tau, pi));
                }
            }
        }
        let (_, _, pi) = best?;
        for d in 0..2 {
            lo[d] = (pi[d] - 8.0 * step[d]).max(0.0);
            hi[d] = (pi[d] + 8.0 * step[d]).min(1.0);
        }
    }
    best.map(|(v, tau, _)| (v, tau))
}

/// Two states, two actions, with a reward trade-off between the objective
/// and the constraints.
pub fn toy_mdp() -> MdpInstance {
    MdpInstance::new(
        vec![2, 2],
        vec![
            vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            vec![vec![0.6, 0.4], vec![0.2, 0.8]],
        ],
        vec![0.6, 0.4],
        0.8,
    )
    .unwrap()
}

pub fn diag_law(mean: &[f64], diag: &[f64]) -> EllipticalLaw {
    EllipticalLaw::diagonal(mean.to_vec(), diag, GeneratorTag::Gaussian).unwrap()
}

pub fn toy_laws() -> (EllipticalLaw, EllipticalLaw, EllipticalLaw) {
    (
        diag_law(&[-1.0, -2.0, -3.0, -0.5], &[0.5, 1.0, 0.8, 0.3]),
        diag_law(&[-4.0, -1.0, -1.0, -4.0], &[1.0, 0.5, 0.5, 1.0]),
        diag_law(&[-1.0, -3.0, -1.5, -2.5], &[0.6, 0.4, 0.7, 0.9]),
    )
}

pub const TOY_THRESHOLD: f64 = -3.0;
