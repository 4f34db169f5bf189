//! Deterministic conic equivalents of the robust chance-constrained MDP.

mod individual;
mod joint;
mod mixture;

use crate::distributions::{EllipticalLaw, MixtureLaw};
use crate::error::{Error, Result};
use crate::kl::KlRadius;

pub use individual::{
    build_individual, build_joint_tau_subproblem, solve_individual, solve_individual_nongaussian,
    solve_tau_program, TauProgram, TauSolution,
};
pub(crate) use joint::next_split;
pub use joint::{
    build_joint_y_subproblem, confidence_bounds, satisfaction_probability, ConfidenceProgram,
    JointConfidenceForm,
};
pub use mixture::{
    build_mixture_program, solve_mixture_heuristic, MixtureConfig, MixtureOutcome,
    MixtureProgramDescription, MixtureProgramVars,
};

/// Reference law of a reward vector.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardLaw {
    Elliptical(EllipticalLaw),
    Mixture(MixtureLaw),
}

impl RewardLaw {
    pub fn dim(&self) -> usize {
        match self {
            RewardLaw::Elliptical(l) => l.dim(),
            RewardLaw::Mixture(m) => m.dim(),
        }
    }

    /// The law as a single elliptical component; one-component mixtures qualify.
    pub fn elliptical(&self) -> Result<&EllipticalLaw> {
        match self {
            RewardLaw::Elliptical(l) => Ok(l),
            RewardLaw::Mixture(m) if m.len() == 1 => Ok(&m.components()[0]),
            RewardLaw::Mixture(_) => Err(Error::Unsupported(
                "a mixture reference requires the mixture solver".into(),
            )),
        }
    }

    pub fn to_mixture(&self) -> MixtureLaw {
        match self {
            RewardLaw::Elliptical(l) => MixtureLaw::single(l.clone()),
            RewardLaw::Mixture(m) => m.clone(),
        }
    }
}

impl From<EllipticalLaw> for RewardLaw {
    fn from(law: EllipticalLaw) -> Self {
        RewardLaw::Elliptical(law)
    }
}

impl From<MixtureLaw> for RewardLaw {
    fn from(law: MixtureLaw) -> Self {
        RewardLaw::Mixture(law)
    }
}

/// Chance constraint `P_F(tau^T r_k >= threshold) >= confidence` for every `F`
/// in the KL ball of `radius` around `reference`.
///
/// `confidence` is read by the individual formulation only; joint solves take a
/// single joint level instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KlConstraintSpec {
    pub reference: RewardLaw,
    pub threshold: f64,
    pub confidence: f64,
    pub radius: KlRadius,
}

impl KlConstraintSpec {
    pub fn new(
        reference: impl Into<RewardLaw>,
        threshold: f64,
        confidence: f64,
        radius: KlRadius,
    ) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Validation(format!(
                "threshold must be finite, got {threshold}"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Validation(format!(
                "confidence must lie in [0, 1], got {confidence}"
            )));
        }
        Ok(Self {
            reference: reference.into(),
            threshold,
            confidence,
            radius,
        })
    }
}

/// KL ball around the reference law of the objective reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBall {
    pub reference: RewardLaw,
    pub radius: KlRadius,
}

impl ObjectiveBall {
    pub fn new(reference: impl Into<RewardLaw>, radius: KlRadius) -> Self {
        Self {
            reference: reference.into(),
            radius,
        }
    }
}

fn check_joint_confidence(eps_hat: f64) -> Result<()> {
    if eps_hat > 0.0 && eps_hat <= 1.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "joint confidence must lie in (0, 1], got {eps_hat}"
        )))
    }
}
