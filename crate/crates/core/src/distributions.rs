//! Elliptical and elliptical-mixture reference laws.
//!
//! Location/dispersion conventions: for a law `E(mu, Sigma, psi)` and a
//! direction `a`, the scalar `a^T X` has location `a^T mu` and dispersion
//! `a^T Sigma a`. The standardized variable used by chance constraints is the
//! standard normal for the Gaussian tag and the unit-variance Laplace law for
//! the Laplace tag. Both read the generator as `psi(b^T Sigma b / 2)`, so the
//! dispersion is the variance and the exponential moment is `psi(-sigma^2 / 2)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::search;

const SYMMETRY_TOL: f64 = 1e-12;
/// Rate of the unit-variance Laplace law, density `rate / 2 * exp(-rate |z|)`.
const LAPLACE_RATE: f64 = std::f64::consts::SQRT_2;

/// Characteristic generator `psi` of an elliptical family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorTag {
    /// `psi(t) = exp(-t)`
    Gaussian,
    /// `psi(t) = 1 / (1 + t)`
    Laplace,
    /// `psi(t) = exp(-omega1 * t^(omega2 / 2))`
    GeneralizedStable { omega1: f64, omega2: f64 },
}

impl GeneratorTag {
    pub fn validate(&self) -> Result<()> {
        if let GeneratorTag::GeneralizedStable { omega1, omega2 } = *self {
            if !(omega1 > 0.0 && omega2 > 0.0 && omega1.is_finite() && omega2.is_finite()) {
                return Err(Error::Validation(format!(
                    "generalized stable parameters must be positive, got ({omega1}, {omega2})"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeneratorTag::Gaussian => "gaussian",
            GeneratorTag::Laplace => "laplace",
            GeneratorTag::GeneralizedStable { .. } => "generalized-stable",
        }
    }

    fn unsupported(&self, operation: &'static str) -> Error {
        Error::UnsupportedGenerator {
            generator: self.name().to_string(),
            operation,
        }
    }

    /// `inf psi(t)` over the nonpositive arguments at which `log psi` is
    /// defined (`t <= 0` for Gaussian, `-1 < t <= 0` for Laplace).
    pub fn nonpositive_floor(&self) -> Result<f64> {
        match self {
            GeneratorTag::Gaussian | GeneratorTag::Laplace => Ok(1.0),
            GeneratorTag::GeneralizedStable { .. } => {
                Err(self.unsupported("evaluation at negative arguments"))
            }
        }
    }
}

/// Evaluates the characteristic generator.
pub fn generator_value(gen: GeneratorTag, t: f64) -> Result<f64> {
    match gen {
        GeneratorTag::Gaussian => Ok((-t).exp()),
        GeneratorTag::Laplace => {
            if t == -1.0 {
                return Err(Error::Domain(
                    "laplace generator has a pole at t = -1".into(),
                ));
            }
            Ok(1.0 / (1.0 + t))
        }
        GeneratorTag::GeneralizedStable { omega1, omega2 } => {
            if t < 0.0 {
                return Err(Error::Domain(format!(
                    "generalized stable generator needs t >= 0, got {t}"
                )));
            }
            Ok((-omega1 * t.powf(omega2 / 2.0)).exp())
        }
    }
}

/// `log psi(t)`, or `+inf` where the generator is nonpositive or undefined.
pub(crate) fn log_generator(gen: GeneratorTag, t: f64) -> f64 {
    match gen {
        GeneratorTag::Gaussian => -t,
        GeneratorTag::Laplace => {
            if t > -1.0 {
                -t.ln_1p()
            } else {
                f64::INFINITY
            }
        }
        GeneratorTag::GeneralizedStable { omega1, omega2 } => {
            if t >= 0.0 {
                -omega1 * t.powf(omega2 / 2.0)
            } else {
                f64::INFINITY
            }
        }
    }
}

/// CDF of the standardized variable `E_1(0, 1, psi)`.
pub fn std_cdf(gen: GeneratorTag, z: f64) -> Result<f64> {
    match gen {
        GeneratorTag::Gaussian => Ok(0.5 * erfc(-z / std::f64::consts::SQRT_2)),
        GeneratorTag::Laplace => Ok(if z < 0.0 {
            0.5 * (LAPLACE_RATE * z).exp()
        } else {
            1.0 - 0.5 * (-LAPLACE_RATE * z).exp()
        }),
        GeneratorTag::GeneralizedStable { .. } => Err(gen.unsupported("cumulative distribution")),
    }
}

/// Density of the standardized variable.
pub fn std_pdf(gen: GeneratorTag, z: f64) -> Result<f64> {
    match gen {
        GeneratorTag::Gaussian => Ok((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()),
        GeneratorTag::Laplace => Ok(0.5 * LAPLACE_RATE * (-LAPLACE_RATE * z.abs()).exp()),
        GeneratorTag::GeneralizedStable { .. } => Err(gen.unsupported("density")),
    }
}

/// How the Gaussian quantile is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileMethod {
    /// Bisection on the CDF to full double precision.
    #[default]
    Bisection,
    /// Abramowitz-Stegun 26.2.23 rational approximation (|error| < 4.5e-4).
    Rational,
}

fn check_probability(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "quantile level must lie in (0, 1), got {p}"
        )))
    }
}

/// Quantile of the standardized variable, Gaussian by bisection.
pub fn std_quantile(gen: GeneratorTag, p: f64) -> Result<f64> {
    std_quantile_with(gen, p, QuantileMethod::Bisection)
}

pub fn std_quantile_with(gen: GeneratorTag, p: f64, method: QuantileMethod) -> Result<f64> {
    check_probability(p)?;
    match gen {
        GeneratorTag::Gaussian => Ok(match method {
            QuantileMethod::Bisection => gaussian_quantile_bisection(p),
            QuantileMethod::Rational => gaussian_quantile_rational(p),
        }),
        GeneratorTag::Laplace => Ok(if p < 0.5 {
            (2.0 * p).ln() / LAPLACE_RATE
        } else {
            -(2.0 * (1.0 - p)).ln() / LAPLACE_RATE
        }),
        GeneratorTag::GeneralizedStable { .. } => Err(gen.unsupported("quantile")),
    }
}

fn gaussian_quantile_bisection(p: f64) -> f64 {
    if p > 0.5 {
        return -gaussian_quantile_bisection(1.0 - p);
    }
    if p == 0.5 {
        return 0.0;
    }
    let cdf = |z: f64| 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0_f64, 0.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Abramowitz-Stegun 26.2.23. The formula gives the upper-tail point `x_p`
/// with `Q(x_p) = p` for `p <= 1/2`; the lower tail follows by symmetry.
fn gaussian_quantile_rational(p: f64) -> f64 {
    let upper_point = |q: f64| {
        let t = (-2.0 * q.ln()).sqrt();
        t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
            / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t)
    };
    if p <= 0.5 {
        -upper_point(p)
    } else {
        upper_point(1.0 - p)
    }
}

/// Derivative of the quantile function, `1 / f(F^{-1}(p))`.
pub fn std_quantile_derivative(gen: GeneratorTag, p: f64) -> Result<f64> {
    let z = std_quantile(gen, p)?;
    Ok(1.0 / std_pdf(gen, z)?)
}

/// `E[X]` for `log X ~ E_1(mu, sigma2, psi)`, i.e. `exp(mu) psi(-sigma2 / 2)`.
pub fn log_elliptical_mean(mu: f64, sigma2: f64, gen: GeneratorTag) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::Domain(format!(
            "variance must be nonnegative, got {sigma2}"
        )));
    }
    let t = -0.5 * sigma2;
    match gen {
        GeneratorTag::Laplace if sigma2 >= 2.0 => Err(Error::DivergentMean(format!(
            "laplace law with dispersion {sigma2} >= 2 has no exponential moment"
        ))),
        GeneratorTag::GeneralizedStable { .. } if sigma2 > 0.0 => {
            Err(gen.unsupported("log-elliptical mean"))
        }
        _ => Ok(mu.exp() * generator_value(gen, t.min(0.0))?),
    }
}

/// Elliptical law `E_d(mu, Sigma, psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticalLaw {
    location: Vec<f64>,
    dispersion: DMatrix<f64>,
    generator: GeneratorTag,
    /// `F` with `F^T F = Sigma`; zero rows dropped.
    factor: DMatrix<f64>,
    positive_definite: bool,
}

impl EllipticalLaw {
    pub fn new(
        location: Vec<f64>,
        dispersion: DMatrix<f64>,
        generator: GeneratorTag,
    ) -> Result<Self> {
        generator.validate()?;
        let d = location.len();
        if dispersion.nrows() != d || dispersion.ncols() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: dispersion.nrows(),
                context: "dispersion matrix",
            });
        }
        if location
            .iter()
            .chain(dispersion.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation("law parameters must be finite".into()));
        }
        let scale = dispersion.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (dispersion[(i, j)] - dispersion[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Validation(format!(
                        "dispersion matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let (factor, positive_definite) = match dispersion.clone().cholesky() {
            Some(chol) => (chol.l().transpose(), true),
            None => {
                let eig = dispersion.clone().symmetric_eigen();
                let min = eig.eigenvalues.min();
                if min < -1e-10 * scale {
                    return Err(Error::Validation(format!(
                        "dispersion matrix is not positive semidefinite (eigenvalue {min})"
                    )));
                }
                let keep: Vec<usize> = (0..d)
                    .filter(|&i| eig.eigenvalues[i] > 1e-14 * scale)
                    .collect();
                let mut f = DMatrix::zeros(keep.len(), d);
                for (r, &i) in keep.iter().enumerate() {
                    let root = eig.eigenvalues[i].sqrt();
                    for c in 0..d {
                        f[(r, c)] = root * eig.eigenvectors[(c, i)];
                    }
                }
                (f, false)
            }
        };
        Ok(Self {
            location,
            dispersion,
            generator,
            factor,
            positive_definite,
        })
    }

    /// Law with a diagonal dispersion matrix.
    pub fn diagonal(location: Vec<f64>, diag: &[f64], generator: GeneratorTag) -> Result<Self> {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        Self::new(location, m, generator)
    }

    pub fn dim(&self) -> usize {
        self.location.len()
    }

    pub fn location(&self) -> &[f64] {
        &self.location
    }

    pub fn dispersion(&self) -> &DMatrix<f64> {
        &self.dispersion
    }

    pub fn generator(&self) -> GeneratorTag {
        self.generator
    }

    pub fn is_positive_definite(&self) -> bool {
        self.positive_definite
    }

    pub fn require_positive_definite(&self, what: &str) -> Result<()> {
        if self.positive_definite {
            Ok(())
        } else {
            Err(Error::Assumption(format!(
                "{what}: dispersion matrix must be positive definite"
            )))
        }
    }

    /// Rows of `F` such that `||F x||^2 = x^T Sigma x`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn mean_of(&self, a: &[f64]) -> f64 {
        self.location.iter().zip(a).map(|(m, x)| m * x).sum()
    }

    pub fn quadratic_form(&self, a: &[f64]) -> f64 {
        let x = DVector::from_column_slice(a);
        (&self.factor * x).norm_squared()
    }

    fn check_dim(&self, n: usize, context: &'static str) -> Result<()> {
        if n == self.dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.dim(),
                actual: n,
                context,
            })
        }
    }
}

/// Finite mixture `sum_j w_j E(mu_j, Sigma_j, psi_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureLaw {
    weights: Vec<f64>,
    components: Vec<EllipticalLaw>,
}

impl MixtureLaw {
    pub fn new(weights: Vec<f64>, components: Vec<EllipticalLaw>) -> Result<Self> {
        if components.is_empty() || weights.len() != components.len() {
            return Err(Error::Validation(format!(
                "mixture needs one weight per component ({} weights, {} components)",
                weights.len(),
                components.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Validation(
                "mixture weights must be nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!("mixture weights sum to {total}")));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::Validation(
                "mixture components differ in dimension".into(),
            ));
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn single(law: EllipticalLaw) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![law],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[EllipticalLaw] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// One-dimensional parameters of `a^T X`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearImage {
    pub mean: f64,
    pub variance: f64,
    pub generator: GeneratorTag,
}

pub fn linear_image_params(law: &EllipticalLaw, a: &[f64]) -> Result<LinearImage> {
    law.check_dim(a.len(), "linear image direction")?;
    Ok(LinearImage {
        mean: law.mean_of(a),
        variance: law.quadratic_form(a),
        generator: law.generator(),
    })
}

/// Worst-case expectation over a KL ball and the dual multiplier attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    /// `inf_F E_F[tau^T r]` over the ball.
    pub value: f64,
    /// Minimizing `alpha`; `None` stands for `+inf` (zero radius or zero spread).
    pub alpha: Option<f64>,
}

fn check_radius(delta: f64) -> Result<()> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "KL radius must be a finite nonnegative number, got {delta}"
        )))
    }
}

/// Validates `inf_{t <= 0} psi(t) >= exp(-delta)` for the objective reference.
pub fn check_generator_floor(gen: GeneratorTag, delta: f64) -> Result<()> {
    let floor = gen.nonpositive_floor()?;
    if floor >= (-delta).exp() {
        Ok(())
    } else {
        Err(Error::Assumption(format!(
            "inf psi = {floor} below exp(-delta) = {}",
            (-delta).exp()
        )))
    }
}

/// `inf_F E_F[tau^T r]` over `{F : KL(F || law) <= delta}`. Closed form for the
/// Gaussian tag; one-dimensional search over `alpha` otherwise.
pub fn worst_case_expectation(tau: &[f64], law: &EllipticalLaw, delta: f64) -> Result<WorstCase> {
    law.check_dim(tau.len(), "occupation vector")?;
    check_radius(delta)?;
    check_generator_floor(law.generator(), delta)?;
    let mean = law.mean_of(tau);
    let v = law.quadratic_form(tau);
    if delta == 0.0 || v == 0.0 {
        return Ok(WorstCase {
            value: mean,
            alpha: None,
        });
    }
    match law.generator() {
        GeneratorTag::Gaussian => Ok(WorstCase {
            value: mean - (2.0 * delta * v).sqrt(),
            alpha: Some((v / (2.0 * delta)).sqrt()),
        }),
        _ => worst_case_expectation_numeric(tau, law, delta),
    }
}

/// Grid-plus-golden minimization of
/// `g(alpha) = -tau^T mu + alpha log psi(-tau^T Sigma tau / (2 alpha^2)) + alpha delta`
/// over `alpha` in `[1e-6, 1e6]`; returns `-min g`.
pub fn worst_case_expectation_numeric(
    tau: &[f64],
    law: &EllipticalLaw,
    delta: f64,
) -> Result<WorstCase> {
    law.check_dim(tau.len(), "occupation vector")?;
    check_radius(delta)?;
    let mean = law.mean_of(tau);
    let v = law.quadratic_form(tau);
    let gen = law.generator();
    let g = |log_alpha: f64| {
        let alpha = log_alpha.exp();
        -mean + alpha * log_generator(gen, -v / (2.0 * alpha * alpha)) + alpha * delta
    };
    let grid: Vec<f64> = search::log_space(1e-6, 1e6, 200)
        .iter()
        .map(|a| a.ln())
        .collect();
    let (log_alpha, best) = search::grid_then_golden(g, &grid, 1e-10);
    if !best.is_finite() {
        return Err(Error::Numerical(
            "worst-case objective is infinite on the alpha grid".into(),
        ));
    }
    Ok(WorstCase {
        value: -best,
        alpha: Some(log_alpha.exp()),
    })
}

/// `C(delta) = min_{s > 0} s (log psi(-1 / (2 s^2)) + delta)`.
///
/// The worst-case objective depends on `tau` only through
/// `sqrt(tau^T Sigma tau)`: substituting `alpha = s sqrt(v)` gives
/// `inf_F E[tau^T r] = tau^T mu - C(delta) sqrt(v)` with minimizer `s*`.
/// Returns `(C, s*)`; `s* = None` when `delta = 0`.
pub fn robust_penalty_coefficient(gen: GeneratorTag, delta: f64) -> Result<(f64, Option<f64>)> {
    check_radius(delta)?;
    check_generator_floor(gen, delta)?;
    if delta == 0.0 {
        return Ok((0.0, None));
    }
    if gen == GeneratorTag::Gaussian {
        return Ok(((2.0 * delta).sqrt(), Some(1.0 / (2.0 * delta).sqrt())));
    }
    let h = |log_s: f64| {
        let s = log_s.exp();
        s * (log_generator(gen, -1.0 / (2.0 * s * s)) + delta)
    };
    let grid: Vec<f64> = search::log_space(1e-6, 1e6, 400)
        .iter()
        .map(|a| a.ln())
        .collect();
    let (log_s, best) = search::grid_then_golden(h, &grid, 1e-12);
    if !best.is_finite() {
        return Err(Error::Numerical("penalty coefficient search failed".into()));
    }
    Ok((best, Some(log_s.exp())))
}
