//! Sampling estimators used as independent checks of the closed forms.
//!
//! Samples are drawn in fixed-size chunks; chunk `i` uses its own ChaCha
//! stream of the configured seed, so sequential and parallel runs return
//! identical estimates.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::distributions::{EllipticalLaw, GeneratorTag, MixtureLaw};
use crate::error::{Error, Result};
use crate::mdp::{MdpInstance, StationaryPolicy};
use crate::parallel::{map_ordered, Execution};

const CHUNK: usize = 1 << 14;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub samples: usize,
    pub seed: u64,
    pub execution: Execution,
    pub workers: usize,
}

impl Sampling {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            execution: Execution::default(),
            workers: 0,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

/// Mean of `f` over `sampling.samples` draws.
pub fn estimate_mean<F>(sampling: Sampling, f: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    let n = sampling.samples;
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).collect();
    let partial = map_ordered(sampling.execution, sampling.workers, &chunks, |&c| {
        let mut rng = chunk_rng(sampling.seed, c);
        let count = CHUNK.min(n - c * CHUNK);
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..count {
            let v = f(&mut rng);
            sum += v;
            sq += v * v;
        }
        (sum, sq)
    });
    let (sum, sq) = partial
        .iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sq / nf - mean * mean) * nf / (nf - 1.0).max(1.0)).max(0.0);
    Estimate {
        mean,
        std_error: (var / nf).sqrt(),
        samples: n,
    }
}

/// One draw of `law`. Laplace draws use the normal variance mixture
/// `sqrt(E) Z` with `E` unit exponential, whose one-dimensional margins have
/// the standardized CDF and the exponential moment used by the reformulations.
pub fn sample_elliptical<R: Rng + ?Sized>(
    law: &EllipticalLaw,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let f = law.factor();
    let z = DVector::from_fn(f.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let scale = match law.generator() {
        GeneratorTag::Gaussian => 1.0,
        GeneratorTag::Laplace => rng.sample::<f64, _>(Exp1).sqrt(),
        other => {
            return Err(Error::UnsupportedGenerator {
                generator: other.name().into(),
                operation: "sampling",
            })
        }
    };
    Ok(DVector::from_column_slice(law.location()) + f.transpose() * z * scale)
}

pub fn sample_mixture<R: Rng + ?Sized>(
    law: &MixtureLaw,
    pick: &WeightedIndex<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    sample_elliptical(&law.components()[pick.sample(rng)], rng)
}

fn dot(tau: &[f64], r: &DVector<f64>) -> f64 {
    tau.iter().zip(r.iter()).map(|(a, b)| a * b).sum()
}

fn check_sampleable(law: &EllipticalLaw) -> Result<()> {
    match law.generator() {
        GeneratorTag::Gaussian | GeneratorTag::Laplace => Ok(()),
        other => Err(Error::UnsupportedGenerator {
            generator: other.name().into(),
            operation: "sampling",
        }),
    }
}

/// `P(tau^T r_k >= xi_k for every k)` with independent rewards across `k`.
pub fn joint_satisfaction(
    tau: &[f64],
    constraints: &[(&EllipticalLaw, f64)],
    sampling: Sampling,
) -> Result<Estimate> {
    for (law, _) in constraints {
        check_sampleable(law)?;
    }
    Ok(estimate_mean(sampling, |rng| {
        let ok = constraints.iter().all(|(law, xi)| {
            dot(
                tau,
                &sample_elliptical(law, rng).expect("checked generator"),
            ) >= *xi
        });
        if ok {
            1.0
        } else {
            0.0
        }
    }))
}

/// `alpha log E exp(-tau^T r / alpha) + alpha delta` under a mixture, with the
/// standard error propagated through the logarithm.
pub fn mixture_objective(
    tau: &[f64],
    law: &MixtureLaw,
    alpha: f64,
    delta: f64,
    sampling: Sampling,
) -> Result<Estimate> {
    for c in law.components() {
        check_sampleable(c)?;
    }
    let pick = WeightedIndex::new(law.weights().to_vec())
        .map_err(|e| Error::Validation(format!("mixture weights: {e}")))?;
    let est = estimate_mean(sampling, |rng| {
        let r = sample_mixture(law, &pick, rng).expect("checked generator");
        (-dot(tau, &r) / alpha).exp()
    });
    Ok(Estimate {
        mean: alpha * est.mean.ln() + alpha * delta,
        std_error: alpha * est.std_error / est.mean,
        samples: est.samples,
    })
}

/// Empirical occupation measure `(1 - beta) sum_t beta^t P(s_t = s, a_t = a)`
/// of `policy`, from episodes truncated at `horizon`.
pub fn simulate_occupation(
    mdp: &MdpInstance,
    policy: &StationaryPolicy,
    horizon: usize,
    sampling: Sampling,
) -> Result<Vec<f64>> {
    let beta = mdp.discount();
    let initial = WeightedIndex::new(mdp.initial().to_vec())
        .map_err(|e| Error::Validation(format!("initial distribution: {e}")))?;
    let mut act = Vec::new();
    let mut step = Vec::new();
    for s in 0..mdp.num_states() {
        act.push(
            WeightedIndex::new(policy.probabilities[s].clone())
                .map_err(|e| Error::Validation(format!("policy at state {s}: {e}")))?,
        );
        let rows = (0..mdp.num_actions(s))
            .map(|a| {
                WeightedIndex::new(mdp.transition()[s][a].clone())
                    .map_err(|e| Error::Validation(format!("transition ({s}, {a}): {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        step.push(rows);
    }
    let pairs = mdp.num_pairs();
    let n = sampling.samples;
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).collect();
    let partial = map_ordered(sampling.execution, sampling.workers, &chunks, |&c| {
        let mut rng = chunk_rng(sampling.seed, c);
        let mut acc = vec![0.0; pairs];
        for _ in 0..CHUNK.min(n - c * CHUNK) {
            let mut s = initial.sample(&mut rng);
            let mut weight = 1.0 - beta;
            for _ in 0..horizon {
                let a = act[s].sample(&mut rng);
                acc[mdp.pair_index(s, a)] += weight;
                s = step[s][a].sample(&mut rng);
                weight *= beta;
            }
        }
        acc
    });
    let mut total = vec![0.0; pairs];
    for acc in partial {
        for (t, v) in total.iter_mut().zip(acc) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|v| v / n as f64).collect())
}
