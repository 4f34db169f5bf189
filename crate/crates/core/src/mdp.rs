//! Finite discounted MDPs and their occupation-measure polytope.
//!
//! State-action pairs are enumerated state-major: pair `(s, a)` has index
//! `offset(s) + a`. Every policy-search problem in this crate is posed over
//! the occupation measure `tau`, a probability vector over those pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PROBABILITY_TOL: f64 = 1e-12;

/// Tolerance below zero that solver output may carry before it is rejected.
pub const NEGATIVE_MASS_TOL: f64 = 1e-9;

/// A finite MDP `(S, A, P, q, beta)` with dense transition storage.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpInstance {
    num_states: usize,
    actions_per_state: Vec<usize>,
    /// `transition[s][a][s']`
    transition: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    discount: f64,
    offsets: Vec<usize>,
}

impl MdpInstance {
    pub fn new(
        actions_per_state: Vec<usize>,
        transition: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        let num_states = actions_per_state.len();
        if num_states == 0 {
            return Err(Error::Validation("at least one state is required".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Validation(format!(
                "discount factor must lie in [0, 1), got {discount}"
            )));
        }
        if let Some(s) = actions_per_state.iter().position(|&n| n == 0) {
            return Err(Error::Validation(format!("state {s} has no actions")));
        }
        if transition.len() != num_states {
            return Err(Error::Dimension {
                expected: num_states,
                actual: transition.len(),
                context: "transition kernel states",
            });
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != actions_per_state[s] {
                return Err(Error::Dimension {
                    expected: actions_per_state[s],
                    actual: rows.len(),
                    context: "transition kernel actions",
                });
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::TransitionRow {
                        state: s,
                        action: a,
                        reason: format!(
                            "expected {num_states} successor entries, got {}",
                            row.len()
                        ),
                    });
                }
                if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return Err(Error::TransitionRow {
                        state: s,
                        action: a,
                        reason: format!("entry {p} is not a probability"),
                    });
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROBABILITY_TOL {
                    return Err(Error::TransitionRow {
                        state: s,
                        action: a,
                        reason: format!("row sums to {total}"),
                    });
                }
            }
        }
        if initial.len() != num_states {
            return Err(Error::Dimension {
                expected: num_states,
                actual: initial.len(),
                context: "initial distribution",
            });
        }
        if initial.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(
                "initial distribution has a negative entry".into(),
            ));
        }
        let total: f64 = initial.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOL {
            return Err(Error::Validation(format!(
                "initial distribution sums to {total}"
            )));
        }

        let mut offsets = Vec::with_capacity(num_states);
        let mut acc = 0;
        for &n in &actions_per_state {
            offsets.push(acc);
            acc += n;
        }
        Ok(Self {
            num_states,
            actions_per_state,
            transition,
            initial,
            discount,
            offsets,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions_per_state(&self) -> &[usize] {
        &self.actions_per_state
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.actions_per_state[state]
    }

    /// `|Lambda|`, the number of state-action pairs.
    pub fn num_pairs(&self) -> usize {
        self.actions_per_state.iter().sum()
    }

    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        debug_assert!(action < self.actions_per_state[state]);
        self.offsets[state] + action
    }

    /// Iterates `(index, state, action)` in state-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.actions_per_state
            .iter()
            .enumerate()
            .flat_map(move |(s, &n)| (0..n).map(move |a| (self.offsets[s] + a, s, a)))
    }

    pub fn transition_prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[state][action][next]
    }

    pub fn transition(&self) -> &[Vec<Vec<f64>>] {
        &self.transition
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Returns a copy with the transition kernel replaced.
    pub fn with_transition(&self, transition: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            self.actions_per_state.clone(),
            transition,
            self.initial.clone(),
            self.discount,
        )
    }
}

/// Linear description `{tau >= 0 : eq_matrix * tau = eq_rhs}` of the
/// occupation measures of an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationPolytope {
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
}

impl OccupationPolytope {
    pub fn dimension(&self) -> usize {
        self.eq_matrix.ncols()
    }

    /// Infinity-norm residual of the equality system and the most negative entry.
    pub fn residual(&self, tau: &[f64]) -> (f64, f64) {
        let x = DVector::from_column_slice(tau);
        let r = &self.eq_matrix * x - &self.eq_rhs;
        let eq = r.amax();
        let min = tau.iter().copied().fold(f64::INFINITY, f64::min);
        (eq, min)
    }

    pub fn contains(&self, tau: &[f64], tol: f64) -> bool {
        let (eq, min) = self.residual(tau);
        eq <= tol && min >= -tol
    }
}

/// Builds the balance equations
/// `sum_{(s,a)} tau(s,a) (delta(s',s) - beta p(s'|s,a)) = (1 - beta) q(s')`.
pub fn build_occupation_polytope(mdp: &MdpInstance) -> OccupationPolytope {
    let n = mdp.num_states();
    let beta = mdp.discount();
    let mut eq_matrix = DMatrix::zeros(n, mdp.num_pairs());
    for (col, s, a) in mdp.pairs() {
        for next in 0..n {
            let kron = if next == s { 1.0 } else { 0.0 };
            eq_matrix[(next, col)] = kron - beta * mdp.transition_prob(s, a, next);
        }
    }
    let eq_rhs = DVector::from_iterator(n, mdp.initial().iter().map(|q| (1.0 - beta) * q));
    OccupationPolytope { eq_matrix, eq_rhs }
}

/// A nonnegative mass vector over state-action pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OccupationVector(Vec<f64>);

impl OccupationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::Domain(format!(
                "occupation mass at pair {i} is {v}, expected a nonnegative number"
            )));
        }
        Ok(Self(values))
    }

    /// Accepts solver output, zeroing entries within [`NEGATIVE_MASS_TOL`] below zero.
    pub fn from_solver(values: Vec<f64>) -> Result<Self> {
        let cleaned = values
            .into_iter()
            .map(|v| {
                if (-NEGATIVE_MASS_TOL..0.0).contains(&v) {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        Self::new(cleaned)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Time-independent action distribution per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    /// `probabilities[s][a]`
    pub probabilities: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn action_probability(&self, state: usize, action: usize) -> f64 {
        self.probabilities[state][action]
    }
}

/// Row-normalizes `tau` per state. States carrying no mass get the uniform
/// distribution over their actions.
pub fn extract_policy(tau: &OccupationVector, mdp: &MdpInstance) -> Result<StationaryPolicy> {
    if tau.len() != mdp.num_pairs() {
        return Err(Error::Dimension {
            expected: mdp.num_pairs(),
            actual: tau.len(),
            context: "occupation vector",
        });
    }
    let t = tau.as_slice();
    let probabilities = (0..mdp.num_states())
        .map(|s| {
            let n = mdp.num_actions(s);
            let row: Vec<f64> = (0..n).map(|a| t[mdp.pair_index(s, a)]).collect();
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                row.into_iter().map(|m| m / mass).collect()
            } else {
                vec![1.0 / n as f64; n]
            }
        })
        .collect();
    Ok(StationaryPolicy { probabilities })
}

/// `(1 / (1 - beta)) * tau^T r`.
pub fn discounted_value(tau: &OccupationVector, reward: &[f64], discount: f64) -> Result<f64> {
    if reward.len() != tau.len() {
        return Err(Error::Dimension {
            expected: tau.len(),
            actual: reward.len(),
            context: "reward vector",
        });
    }
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Domain(format!("discount {discount} not in [0, 1)")));
    }
    let inner: f64 = tau.as_slice().iter().zip(reward).map(|(t, r)| t * r).sum();
    Ok(inner / (1.0 - discount))
}

/// Occupation measure induced by a stationary policy, from
/// `d = (1 - beta) q^T (I - beta P_f)^{-1}` spread over actions.
pub fn occupation_of_policy(
    mdp: &MdpInstance,
    policy: &StationaryPolicy,
) -> Result<OccupationVector> {
    let n = mdp.num_states();
    let beta = mdp.discount();
    let mut chain = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions(s) {
            let f = policy.probabilities[s][a];
            for next in 0..n {
                chain[(s, next)] -= beta * f * mdp.transition_prob(s, a, next);
            }
        }
    }
    let q = DVector::from_column_slice(mdp.initial());
    let lu = chain.transpose().lu();
    let state_mass = lu
        .solve(&q)
        .ok_or_else(|| Error::Numerical("singular policy evaluation system".into()))?
        * (1.0 - beta);
    let mut tau = vec![0.0; mdp.num_pairs()];
    for (i, s, a) in mdp.pairs() {
        tau[i] = state_mass[s] * policy.probabilities[s][a];
    }
    OccupationVector::from_solver(tau)
}
