//! JSON instance, kernel and run-configuration files.
//!
//! An instance file holds the MDP and, under `model`, the reward laws:
//!
//! ```json
//! {
//!   "states": 2, "actions": 2, "discount": 0.9, "initial": [0.5, 0.5],
//!   "transition": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
//!   "model": {
//!     "objective": {"kind": "elliptical", "mean": [1, 0, 0, 1], "covariance_diag": [1, 1, 1, 1]},
//!     "constraints": [{"law": {"kind": "elliptical", "mean": [0, 0, 0, 0],
//!                              "covariance_diag": [1, 1, 1, 1]}, "threshold": -5, "confidence": 0.8}],
//!     "joint_confidence": 0.8
//!   }
//! }
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::distributions::{EllipticalLaw, GeneratorTag, MixtureLaw};
use crate::error::{Error, Result};
use crate::mdp::MdpInstance;
use crate::problem::{ConstraintTemplate, Problem};
use crate::reformulate::{JointConfidenceForm, MixtureConfig, RewardLaw};
use crate::solve::Algorithm1Config;

/// Either one action count for every state or one count per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ActionCounts {
    Uniform(usize),
    PerState(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalSpec {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance_diag: Option<Vec<f64>>,
    #[serde(default = "gaussian")]
    pub generator: GeneratorTag,
}

fn gaussian() -> GeneratorTag {
    GeneratorTag::Gaussian
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub weight: f64,
    #[serde(flatten)]
    pub law: EllipticalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSpec {
    Elliptical(EllipticalSpec),
    Mixture { components: Vec<ComponentSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub law: LawSpec,
    pub threshold: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub objective: LawSpec,
    pub constraints: Vec<ConstraintSpec>,
    pub joint_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub states: usize,
    pub actions: ActionCounts,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    pub discount: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
}

impl EllipticalSpec {
    pub fn to_law(&self) -> Result<EllipticalLaw> {
        let d = self.mean.len();
        let dispersion = match (&self.covariance, &self.covariance_diag) {
            (Some(rows), None) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension {
                        expected: d,
                        actual: rows.len(),
                        context: "covariance rows",
                    });
                }
                DMatrix::from_fn(d, d, |i, j| rows[i][j])
            }
            (None, Some(diag)) => {
                if diag.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        actual: diag.len(),
                        context: "covariance diagonal",
                    });
                }
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
            }
            _ => {
                return Err(Error::Validation(
                    "give exactly one of `covariance` and `covariance_diag`".into(),
                ))
            }
        };
        EllipticalLaw::new(self.mean.clone(), dispersion, self.generator)
    }

    pub fn from_law(law: &EllipticalLaw) -> Self {
        let m = law.dispersion();
        let d = law.dim();
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || m[(i, j)] == 0.0));
        let (covariance, covariance_diag) = if diagonal {
            (None, Some(m.diagonal().iter().copied().collect()))
        } else {
            (
                Some(
                    (0..d)
                        .map(|i| (0..d).map(|j| m[(i, j)]).collect())
                        .collect(),
                ),
                None,
            )
        };
        Self {
            mean: law.location().to_vec(),
            covariance,
            covariance_diag,
            generator: law.generator(),
        }
    }
}

impl LawSpec {
    pub fn to_law(&self) -> Result<RewardLaw> {
        match self {
            LawSpec::Elliptical(e) => Ok(e.to_law()?.into()),
            LawSpec::Mixture { components } => {
                let weights = components.iter().map(|c| c.weight).collect();
                let laws = components
                    .iter()
                    .map(|c| c.law.to_law())
                    .collect::<Result<Vec<_>>>()?;
                Ok(MixtureLaw::new(weights, laws)?.into())
            }
        }
    }

    pub fn from_law(law: &RewardLaw) -> Self {
        match law {
            RewardLaw::Elliptical(e) => LawSpec::Elliptical(EllipticalSpec::from_law(e)),
            RewardLaw::Mixture(m) => LawSpec::Mixture {
                components: m
                    .weights()
                    .iter()
                    .zip(m.components())
                    .map(|(w, c)| ComponentSpec {
                        weight: *w,
                        law: EllipticalSpec::from_law(c),
                    })
                    .collect(),
            },
        }
    }
}

impl InstanceFile {
    pub fn to_mdp(&self) -> Result<MdpInstance> {
        let actions = match &self.actions {
            ActionCounts::Uniform(a) => vec![*a; self.states],
            ActionCounts::PerState(v) => v.clone(),
        };
        if actions.len() != self.states {
            return Err(Error::Dimension {
                expected: self.states,
                actual: actions.len(),
                context: "action counts",
            });
        }
        MdpInstance::new(
            actions,
            self.transition.clone(),
            self.initial.clone(),
            self.discount,
        )
    }

    pub fn to_problem(&self) -> Result<Problem> {
        let mdp = self.to_mdp()?;
        let model = self.model.as_ref().ok_or_else(|| {
            Error::Validation("instance has no `model` section with reward laws".into())
        })?;
        let constraints = model
            .constraints
            .iter()
            .map(|c| {
                Ok(ConstraintTemplate {
                    reference: c.law.to_law()?,
                    threshold: c.threshold,
                    confidence: c.confidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Problem {
            mdp,
            objective: model.objective.to_law()?,
            constraints,
            joint_confidence: model.joint_confidence,
        })
    }

    pub fn from_problem(problem: &Problem) -> Self {
        let mdp = &problem.mdp;
        Self {
            states: mdp.num_states(),
            actions: ActionCounts::PerState(mdp.actions_per_state().to_vec()),
            transition: mdp.transition().to_vec(),
            initial: mdp.initial().to_vec(),
            discount: mdp.discount(),
            model: Some(ModelSpec {
                objective: LawSpec::from_law(&problem.objective),
                constraints: problem
                    .constraints
                    .iter()
                    .map(|c| ConstraintSpec {
                        law: LawSpec::from_law(&c.reference),
                        threshold: c.threshold,
                        confidence: c.confidence,
                    })
                    .collect(),
                joint_confidence: problem.joint_confidence,
            }),
        }
    }
}

pub fn load_problem(path: &Path) -> Result<Problem> {
    let file: InstanceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    file.to_problem()
}

pub fn save_problem(problem: &Problem, path: &Path) -> Result<()> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(&InstanceFile::from_problem(problem))?,
    )?;
    Ok(())
}

/// Reads a transition kernel `[s][a][s']`, optionally wrapped as
/// `{"transition": ...}`.
pub fn load_kernel(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum KernelFile {
        Bare(Vec<Vec<Vec<f64>>>),
        Wrapped { transition: Vec<Vec<Vec<f64>>> },
    }
    Ok(
        match serde_json::from_str(&std::fs::read_to_string(path)?)? {
            KernelFile::Bare(k) | KernelFile::Wrapped { transition: k } => k,
        },
    )
}

/// Solver settings read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub algorithm1: Algorithm1Config,
    pub mixture: MixtureConfig,
    /// Concurrent sweep points; 0 uses every core.
    pub workers: usize,
    pub joint_form: JointConfidenceForm,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm1: Algorithm1Config::default(),
            mixture: MixtureConfig::default(),
            workers: 0,
            joint_form: JointConfidenceForm::Product,
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
