//! Dirichlet distribution over emotion mixtures: density, score, expectation,
//! sampling and maximum-likelihood fitting.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::emotion::{AlphaVector, EmotionVector, ALPHA_FLOOR, NUM_EMOTIONS};
use crate::error::{Error, Result};
use crate::special::{digamma_unchecked, inverse_digamma, ln_gamma_unchecked};

pub use crate::special::{digamma, log_gamma, trigamma};

/// ln Dir(x | α).
pub fn dir_log_density(x: &EmotionVector, alpha: &AlphaVector) -> f64 {
    let a = alpha.values();
    let x = x.values();
    let mut out = ln_gamma_unchecked(alpha.total());
    for i in 0..NUM_EMOTIONS {
        out += (a[i] - 1.0) * x[i].ln() - ln_gamma_unchecked(a[i]);
    }
    out
}

/// ∂/∂α ln Dir(x | α): `ψ(α₀) − ψ(α_i) + ln x_i`.
pub fn dir_log_density_grad_alpha(x: &EmotionVector, alpha: &AlphaVector) -> [f64; NUM_EMOTIONS] {
    let a = alpha.values();
    let x = x.values();
    let psi_total = digamma_unchecked(alpha.total());
    std::array::from_fn(|i| psi_total - digamma_unchecked(a[i]) + x[i].ln())
}

/// Mean of the distribution, `α_i / α₀`, projected onto the simplex interior.
pub fn dir_expectation(alpha: &AlphaVector) -> EmotionVector {
    let total = alpha.total();
    EmotionVector::from_raw(alpha.values().map(|a| a / total)).expect("positive concentrations give a positive mean")
}

/// The positivity map `g(x) = x² + 1e-6` turning raw network outputs into concentrations.
pub fn positive_map(raw: f64) -> f64 {
    raw * raw + ALPHA_FLOOR
}

/// `g'(x) = 2x`.
pub fn positive_map_derivative(raw: f64) -> f64 {
    2.0 * raw
}

/// Draws from Gamma(shape, 1) with the Marsaglia–Tsang squeeze method.
///
/// Shapes below one use the boost `Gamma(a) = Gamma(a + 1) · U^(1/a)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let boost: f64 = rng.random::<f64>().powf(1.0 / shape);
        return sample_gamma(shape + 1.0, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Draws one emotion mixture from Dir(α).
pub fn dir_sample<R: Rng + ?Sized>(alpha: &AlphaVector, rng: &mut R) -> EmotionVector {
    loop {
        let draws = alpha.values().map(|a| sample_gamma(a, rng));
        // All six gammas underflow only for vanishing concentrations; redraw.
        if let Ok(v) = EmotionVector::from_raw(draws) {
            return v;
        }
    }
}

/// A non-empty collection of observed mixtures, the input of [`fit_mle`].
#[derive(Debug, Clone)]
pub struct DirichletSampleSet {
    samples: Vec<EmotionVector>,
}

impl DirichletSampleSet {
    pub fn new(samples: Vec<EmotionVector>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("Dirichlet sample set".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[EmotionVector] {
        &self.samples
    }

    /// Mean of `ln x_i` per component, the sufficient statistic of the likelihood.
    pub fn mean_log(&self) -> [f64; NUM_EMOTIONS] {
        let n = self.samples.len() as f64;
        let mut acc = [0.0; NUM_EMOTIONS];
        for s in &self.samples {
            for (a, x) in acc.iter_mut().zip(s.values()) {
                *a += x.ln();
            }
        }
        acc.map(|a| a / n)
    }

    /// Mean gradient of the log-likelihood with respect to α.
    pub fn mean_grad(&self, alpha: &AlphaVector) -> [f64; NUM_EMOTIONS] {
        mean_log_likelihood_grad(&self.mean_log(), alpha)
    }
}

fn mean_log_likelihood_grad(mean_log: &[f64; NUM_EMOTIONS], alpha: &AlphaVector) -> [f64; NUM_EMOTIONS] {
    let psi_total = digamma_unchecked(alpha.total());
    let a = alpha.values();
    std::array::from_fn(|i| psi_total - digamma_unchecked(a[i]) + mean_log[i])
}

pub const MLE_MAX_ITERATIONS: usize = 500;
pub const MLE_GRAD_TOLERANCE: f64 = 1e-8;

/// Maximum-likelihood Dirichlet fit by the fixed-point iteration
/// `ψ(α_i) ← ψ(α₀) + mean(ln x_i)`, inverting ψ with Newton steps.
///
/// Stops once the gradient norm drops below [`MLE_GRAD_TOLERANCE`].
pub fn fit_mle(samples: &DirichletSampleSet) -> Result<AlphaVector> {
    if samples.samples().len() < 10 {
        return Err(Error::Invalid(format!(
            "fit_mle needs at least 10 samples, got {}",
            samples.samples().len()
        )));
    }
    let mean_log = samples.mean_log();
    let mut alpha = AlphaVector::new(moment_initialization(samples.samples()))?;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..MLE_MAX_ITERATIONS {
        let grad = mean_log_likelihood_grad(&mean_log, &alpha);
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < MLE_GRAD_TOLERANCE {
            return Ok(alpha);
        }
        let psi_total = digamma_unchecked(alpha.total());
        let next = mean_log.map(|m| inverse_digamma(psi_total + m).max(ALPHA_FLOOR));
        alpha = AlphaVector::new(next)?;
    }
    Err(Error::NoConvergence {
        iterations: MLE_MAX_ITERATIONS,
        grad_norm,
        last: alpha,
    })
}

/// Method-of-moments starting point: mean scaled by a precision estimated
/// from the first component's variance.
fn moment_initialization(samples: &[EmotionVector]) -> [f64; NUM_EMOTIONS] {
    let n = samples.len() as f64;
    let mut mean = [0.0; NUM_EMOTIONS];
    let mut second = 0.0;
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s.values()) {
            *m += x / n;
        }
        second += s.values()[0] * s.values()[0] / n;
    }
    let var = second - mean[0] * mean[0];
    let precision = if var > 0.0 {
        ((mean[0] - second) / var).clamp(0.1, 1e4)
    } else {
        1.0
    };
    mean.map(|m| (m * precision).max(ALPHA_FLOOR))
}
