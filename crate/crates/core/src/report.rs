//! Serializable outcome of a solve.

use serde::{Deserialize, Serialize};

use crate::kl::Monotonicity;
use crate::mdp::{OccupationVector, StationaryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Individual,
    Joint,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Single convex program solved to optimality.
    Optimal,
    /// Iterative scheme stopped on the movement criterion.
    Converged,
    /// Iterative scheme hit its iteration cap.
    IterationLimit,
}

/// One pass of an alternating scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Confidence split `y^n` used for this pass.
    pub y: Vec<f64>,
    /// Reference-distribution confidences enforced in the occupation step.
    pub y_tilde: Vec<f64>,
    /// Multipliers of the chance constraints.
    pub theta: Vec<f64>,
    /// Marginal cost of raising each `y_k`.
    pub gamma: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Optimal value of the occupation step.
    pub value: f64,
    /// `||y^{n+1} - y^n||`
    pub movement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mode: SolveMode,
    pub status: SolveStatus,
    pub tau: OccupationVector,
    /// Minimized robust objective, the negated worst-case expected reward.
    pub objective: f64,
    pub policy: StationaryPolicy,
    /// Reference confidence enforced per constraint at the returned point.
    pub confidences: Vec<f64>,
    /// Multiplier per chance constraint at the returned point.
    pub duals: Vec<f64>,
    /// Worst-case multiplier of the objective ball; `None` stands for `+inf`.
    pub alpha: Option<f64>,
    /// Set when the returned point carries no optimality certificate.
    pub heuristic: Option<String>,
    pub chi_direction: Option<Monotonicity>,
    pub iterations: Vec<IterationRecord>,
    pub wall_time_secs: f64,
}

impl SolveReport {
    pub fn repair_probability(&self, state: usize) -> f64 {
        self.policy.action_probability(state, 0)
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}
