//! Problem families indexed by a common KL radius, and the machine-replacement
//! benchmark.

use crate::distributions::{EllipticalLaw, GeneratorTag};
use crate::error::{Error, Result};
use crate::kl::KlRadius;
use crate::mdp::MdpInstance;
use crate::reformulate::{KlConstraintSpec, ObjectiveBall, RewardLaw};

/// A chance constraint before a radius is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTemplate {
    pub reference: RewardLaw,
    pub threshold: f64,
    pub confidence: f64,
}

/// An MDP with reward laws; [`Problem::instantiate`] attaches one radius to
/// every ball.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub mdp: MdpInstance,
    pub objective: RewardLaw,
    pub constraints: Vec<ConstraintTemplate>,
    pub joint_confidence: f64,
}

impl Problem {
    pub fn instantiate(&self, radius: f64) -> Result<(Vec<KlConstraintSpec>, ObjectiveBall)> {
        let r = KlRadius::new(radius)?;
        let specs = self
            .constraints
            .iter()
            .map(|c| KlConstraintSpec::new(c.reference.clone(), c.threshold, c.confidence, r))
            .collect::<Result<Vec<_>>>()?;
        Ok((specs, ObjectiveBall::new(self.objective.clone(), r)))
    }

    /// Sets every individual confidence and the joint confidence to `eps`.
    pub fn with_confidence(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Validation(format!(
                "confidence must lie in (0, 1], got {eps}"
            )));
        }
        for c in &mut self.constraints {
            c.confidence = eps;
        }
        self.joint_confidence = eps;
        Ok(self)
    }

    pub fn with_threshold(mut self, xi: f64) -> Result<Self> {
        if !xi.is_finite() {
            return Err(Error::Validation(format!(
                "threshold must be finite, got {xi}"
            )));
        }
        for c in &mut self.constraints {
            c.threshold = xi;
        }
        Ok(self)
    }

    pub fn with_transition(mut self, transition: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        self.mdp = self.mdp.with_transition(transition)?;
        Ok(self)
    }
}

pub const BENCHMARK_STATES: usize = 10;
pub const BENCHMARK_DISCOUNT: f64 = 0.9;
pub const BENCHMARK_THRESHOLD: f64 = -40.0;
pub const BENCHMARK_CONFIDENCE: f64 = 0.8;
pub const INDIVIDUAL_RADII: [f64; 6] = [0.5, 0.4, 0.3, 0.2, 0.1, 0.01];
pub const JOINT_RADII: [f64; 6] = [1e-4, 5e-5, 1e-5, 5e-6, 1e-6, 0.0];

pub const KERNEL_CAVEAT: &str = "The benchmark transition kernel is not published with the cost data. \
The default kernel sends 'repair' to state 1 and lets 'do not repair' advance one state with \
probability 0.9 or stay with probability 0.1, state 10 being absorbing. Results depend on this choice.";

/// Mean costs per state for (repair, do not repair).
const MEAN_R0: [[f64; 2]; 10] = [
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-10.0, 0.0],
    [-40.0, -85.0],
    [-40.0, -95.0],
];
const MEAN_R1: [[f64; 2]; 10] = [
    [-15.0, -10.0],
    [-15.0, -30.0],
    [-15.0, -40.0],
    [-15.0, -50.0],
    [-15.0, -70.0],
    [-15.0, -80.0],
    [-15.0, -80.0],
    [-15.0, -80.0],
    [-50.0, -200.0],
    [-50.0, -200.0],
];
const MEAN_R2: [[f64; 2]; 10] = [
    [0.0, -40.0],
    [0.0, -40.0],
    [0.0, -50.0],
    [0.0, -50.0],
    [-15.0, -50.0],
    [-15.0, -55.0],
    [-15.0, -55.0],
    [-15.0, -55.0],
    [-30.0, -80.0],
    [-30.0, -100.0],
];

fn diag_r0() -> Vec<f64> {
    let mut d = vec![0.3; 15];
    d.extend([3.0, 5.0, 2.0, 8.0, 9.0]);
    d
}

fn diag_r1() -> Vec<f64> {
    vec![
        0.5, 5.0, 0.5, 0.5, 0.5, 5.0, 0.5, 5.0, 0.5, 0.5, 0.5, 5.0, 0.5, 0.5, 0.5, 0.5, 8.0, 9.0,
        8.0, 9.0,
    ]
}

fn diag_r2() -> Vec<f64> {
    let mut d = vec![0.04; 15];
    d.extend([4.0, 9.0, 8.0, 8.5, 10.0]);
    d
}

fn flatten(table: &[[f64; 2]; 10]) -> Vec<f64> {
    table.iter().flat_map(|row| row.iter().copied()).collect()
}

/// Default kernel: repair returns to the first state; otherwise the machine
/// ages one state with probability 0.9. The last state is absorbing.
pub fn default_kernel() -> Vec<Vec<Vec<f64>>> {
    let n = BENCHMARK_STATES;
    (0..n)
        .map(|s| {
            let mut repair = vec![0.0; n];
            repair[0] = 1.0;
            let mut wait = vec![0.0; n];
            if s + 1 < n {
                wait[s + 1] = 0.9;
                wait[s] = 0.1;
            } else {
                wait[s] = 1.0;
            }
            vec![repair, wait]
        })
        .collect()
}

/// Mean vectors of `(r0, r1, r2)` over the 20 pairs, state-major.
pub fn benchmark_means() -> [Vec<f64>; 3] {
    [flatten(&MEAN_R0), flatten(&MEAN_R1), flatten(&MEAN_R2)]
}

/// Diagonals of the dispersion matrices of `(r0, r1, r2)`.
pub fn benchmark_dispersions() -> [Vec<f64>; 3] {
    [diag_r0(), diag_r1(), diag_r2()]
}

/// Gaussian reference laws of `(r0, r1, r2)`.
pub fn benchmark_laws() -> Result<[EllipticalLaw; 3]> {
    let [m0, m1, m2] = benchmark_means();
    let [d0, d1, d2] = benchmark_dispersions();
    Ok([
        EllipticalLaw::diagonal(m0, &d0, GeneratorTag::Gaussian)?,
        EllipticalLaw::diagonal(m1, &d1, GeneratorTag::Gaussian)?,
        EllipticalLaw::diagonal(m2, &d2, GeneratorTag::Gaussian)?,
    ])
}

/// Machine-replacement benchmark with the default kernel.
pub fn build_benchmark() -> Result<Problem> {
    build_benchmark_with_kernel(default_kernel())
}

pub fn build_benchmark_with_kernel(transition: Vec<Vec<Vec<f64>>>) -> Result<Problem> {
    let n = BENCHMARK_STATES;
    let mdp = MdpInstance::new(
        vec![2; n],
        transition,
        vec![1.0 / n as f64; n],
        BENCHMARK_DISCOUNT,
    )?;
    let [r0, r1, r2] = benchmark_laws()?;
    let constraint = |law: EllipticalLaw| ConstraintTemplate {
        reference: law.into(),
        threshold: BENCHMARK_THRESHOLD,
        confidence: BENCHMARK_CONFIDENCE,
    };
    Ok(Problem {
        mdp,
        objective: r0.into(),
        constraints: vec![constraint(r1), constraint(r2)],
        joint_confidence: BENCHMARK_CONFIDENCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn risky_state_means() {
        let [m0, m1, m2] = benchmark_means();
        // state 9, do not repair
        let i = 8 * 2 + 1;
        assert_eq!((m0[i], m1[i], m2[i]), (-85.0, -200.0, -80.0));
        // state 1
        assert_eq!((m0[0], m1[0], m2[0]), (-10.0, -15.0, 0.0));
        assert_eq!((m0[1], m1[1], m2[1]), (0.0, -10.0, -40.0));
    }

    #[test]
    fn dispersion_listing() {
        let [d0, d1, d2] = benchmark_dispersions();
        assert_eq!(d2[15], 4.0);
        assert_eq!((d0.len(), d1.len(), d2.len()), (20, 20, 20));
        assert!(d0.iter().chain(&d1).chain(&d2).all(|v| *v > 0.0));
    }

    #[test]
    fn benchmark_instance_shape() {
        let p = build_benchmark().unwrap();
        assert_eq!(p.mdp.num_pairs(), 20);
        assert!(p.mdp.initial().iter().all(|q| (q - 0.1).abs() < 1e-15));
        assert_eq!(p.constraints.len(), 2);
        let (specs, ball) = p.instantiate(0.3).unwrap();
        assert_eq!(ball.radius.value(), 0.3);
        assert!(specs
            .iter()
            .all(|s| s.threshold == -40.0 && s.confidence == 0.8));
    }
}
