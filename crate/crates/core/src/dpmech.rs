//! Laplace mechanism on customer utilities.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum PrivacyError {
    #[error("epsilon must be positive and finite, got {0}")]
    Epsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("utility bounds reversed: u_max {u_max} < u_min {u_min}")]
    Bounds { u_min: f64, u_max: f64 },
    #[error("need at least one customer")]
    Empty,
    #[error("expected {expected} privacy parameters, got {got}")]
    Length { expected: usize, got: usize },
    #[error("n / delta must exceed 1, got {0}")]
    LogArgument(f64),
    #[error("Laplace scale must be positive, got {0}")]
    Scale(f64),
    #[error("privacy cost undefined for a non-positive optimum ({0})")]
    UndefinedCost(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, PrivacyError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(PrivacyError::Epsilon(epsilon));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(PrivacyError::Delta(delta));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Which span enters the optimality bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaVariant {
    /// `u_max - u_min`.
    #[default]
    Span,
    /// `u_max` in place of the span.
    UpperBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedUtilities {
    pub values: Vec<f64>,
    pub noise_scale_used: Vec<f64>,
    pub seed: u64,
}

/// Inverse CDF of the zero-mean Laplace distribution at `u in (0, 1)`.
pub fn laplace_inverse_cdf(u: f64, scale_b: f64) -> f64 {
    let c = u - 0.5;
    -scale_b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// `P(X <= x)` for `X ~ Laplace(0, b)`.
pub fn laplace_cdf(x: f64, scale_b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale_b).exp()
    } else {
        1.0 - 0.5 * (-x / scale_b).exp()
    }
}

/// One draw from `Laplace(0, b)`. A zero scale returns exactly zero.
pub fn laplace_sample<R: Rng + ?Sized>(scale_b: f64, rng: &mut R) -> Result<f64, PrivacyError> {
    if !(scale_b >= 0.0) || !scale_b.is_finite() {
        return Err(PrivacyError::Scale(scale_b));
    }
    if scale_b == 0.0 {
        return Ok(0.0);
    }
    // Open interval: both endpoints map to infinities.
    let mut u: f64 = rng.random();
    while u == 0.0 {
        u = rng.random();
    }
    Ok(laplace_inverse_cdf(u, scale_b))
}

fn check_bounds(u_min: f64, u_max: f64) -> Result<f64, PrivacyError> {
    if !(u_max >= u_min) {
        return Err(PrivacyError::Bounds { u_min, u_max });
    }
    Ok(u_max - u_min)
}

/// `b = (u_max - u_min) sqrt(8 n ln(1/delta)) / epsilon`.
pub fn noise_scale(n: usize, params: &PrivacyParams, u_min: f64, u_max: f64) -> Result<f64, PrivacyError> {
    if n == 0 {
        return Err(PrivacyError::Empty);
    }
    let span = check_bounds(u_min, u_max)?;
    Ok(span * (8.0 * n as f64 * (1.0 / params.delta).ln()).sqrt() / params.epsilon)
}

/// `alpha = 4 (u_max - u_min) sqrt(8 n ln(n/delta)) / epsilon`, or with
/// `4 u_max` in front for [`AlphaVariant::UpperBound`].
pub fn theoretical_alpha(
    n: usize,
    params: &PrivacyParams,
    u_min: f64,
    u_max: f64,
    variant: AlphaVariant,
) -> Result<f64, PrivacyError> {
    if n == 0 {
        return Err(PrivacyError::Empty);
    }
    let span = check_bounds(u_min, u_max)?;
    let ratio = n as f64 / params.delta;
    if !(ratio > 1.0) {
        return Err(PrivacyError::LogArgument(ratio));
    }
    let lead = match variant {
        AlphaVariant::Span => span,
        AlphaVariant::UpperBound => u_max,
    };
    Ok(4.0 * lead * (8.0 * n as f64 * ratio.ln()).sqrt() / params.epsilon)
}

/// Adds independent Laplace noise to every utility, each with the scale
/// implied by that customer's privacy parameters.
pub fn perturb_utilities(
    true_utilities: &[f64],
    params_per_customer: &[PrivacyParams],
    u_min: f64,
    u_max: f64,
    seed: u64,
) -> Result<PerturbedUtilities, PrivacyError> {
    let n = true_utilities.len();
    if params_per_customer.len() != n {
        return Err(PrivacyError::Length {
            expected: n,
            got: params_per_customer.len(),
        });
    }
    let mut rng: ChaCha20Rng = stream_rng(seed, Stream::Noise);
    let mut values = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for (u, p) in true_utilities.iter().zip(params_per_customer) {
        let b = noise_scale(n, p, u_min, u_max)?;
        values.push(u + laplace_sample(b, &mut rng)?);
        scales.push(b);
    }
    Ok(PerturbedUtilities {
        values,
        noise_scale_used: scales,
        seed,
    })
}

/// `(opt - opt_dp) / opt`.
pub fn privacy_cost(opt: f64, opt_dp: f64) -> Result<f64, PrivacyError> {
    if !(opt > 0.0) {
        return Err(PrivacyError::UndefinedCost(opt));
    }
    Ok((opt - opt_dp) / opt)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;

    fn params(eps: f64) -> PrivacyParams {
        PrivacyParams::new(eps, 0.5).unwrap()
    }

    #[test]
    fn inverse_cdf_spot_values() {
        assert_eq!(laplace_inverse_cdf(0.5, 2.0), 0.0);
        assert!((laplace_inverse_cdf(0.9, 2.0) - (-2.0 * 0.2_f64.ln())).abs() < 1e-12);
        assert!((laplace_inverse_cdf(0.9, 2.0) - 3.218_875_824_868_2).abs() < 1e-12);
        assert!((laplace_inverse_cdf(0.1, 2.0) + 3.218_875_824_868_2).abs() < 1e-12);
    }

    #[test]
    fn noise_scale_examples() {
        assert_eq!(noise_scale(5, &params(1.0), 2.0, 2.0).unwrap(), 0.0);
        let b = noise_scale(2, &params(1.0), 0.0, 1.0).unwrap();
        assert!((b - (16.0 * 2.0_f64.ln()).sqrt()).abs() < 1e-12);
        assert!((b - 3.3302).abs() < 1e-4);
        let b = noise_scale(1000, &params(0.01), 0.0, 1.0).unwrap();
        assert!((b - (8000.0 * 2.0_f64.ln()).sqrt() / 0.01).abs() < 1e-9, "{b}");
        assert!((b / 7446.4 - 1.0).abs() < 1e-4);
        assert!(noise_scale(1, &params(1.0), 1.0, 0.0).is_err());
    }

    #[test]
    fn alpha_examples() {
        let a = theoretical_alpha(1, &params(1.0), 0.0, 1.0, AlphaVariant::Span).unwrap();
        assert!((a - 4.0 * (8.0 * 2.0_f64.ln()).sqrt()).abs() < 1e-12);
        assert!((a / 9.4177 - 1.0).abs() < 1e-3);
        assert_eq!(theoretical_alpha(10, &params(1.0), 3.0, 3.0, AlphaVariant::Span).unwrap(), 0.0);
        let upper = theoretical_alpha(1, &params(1.0), 0.5, 1.0, AlphaVariant::UpperBound).unwrap();
        assert!((upper - a).abs() < 1e-12);
    }

    #[test]
    fn privacy_cost_examples() {
        assert_eq!(privacy_cost(3.0, 3.0).unwrap(), 0.0);
        assert!((privacy_cost(100.0, 41.0).unwrap() - 0.59).abs() < 1e-12);
        assert_eq!(privacy_cost(2.0, 0.0).unwrap(), 1.0);
        assert!(matches!(privacy_cost(0.0, 0.0), Err(PrivacyError::UndefinedCost(_))));
    }

    #[test]
    fn parameter_validation() {
        assert!(PrivacyParams::new(0.0, 0.5).is_err());
        assert!(PrivacyParams::new(1.0, 1.0).is_err());
        assert!(PrivacyParams::new(1.0, 0.0).is_err());
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(laplace_sample(-1.0, &mut rng).is_err());
        assert_eq!(laplace_sample(0.0, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn huge_epsilon_leaves_utilities_almost_unchanged() {
        let u: Vec<f64> = (0..50).map(|k| k as f64 / 50.0).collect();
        let p = vec![params(1e9); 50];
        let out = perturb_utilities(&u, &p, 0.0, 1.0, 3).unwrap();
        assert!(out.values.iter().zip(&u).all(|(a, b)| (a - b).abs() <= 1e-3));
    }

    #[test]
    fn perturbation_is_reproducible_and_uses_per_customer_scale() {
        let u = vec![0.2, 0.4, 0.6];
        let p = vec![params(0.01), params(0.1), params(1.0)];
        let a = perturb_utilities(&u, &p, 0.0, 1.0, 99).unwrap();
        let b = perturb_utilities(&u, &p, 0.0, 1.0, 99).unwrap();
        assert_eq!(a, b);
        assert!((a.noise_scale_used[0] / a.noise_scale_used[2] - 100.0).abs() < 1e-9);
        let c = perturb_utilities(&u, &p, 0.0, 1.0, 100).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn sample_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let b = 3.0;
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n).map(|_| laplace_sample(b, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 0.02, "mean {mean}");
        assert!((var / (2.0 * b * b) - 1.0).abs() <= 0.02, "var {var}");
    }

    #[test]
    fn empirical_cdf_matches_laplace() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let b = noise_scale(2, &params(1.0), 0.0, 1.0).unwrap();
        let mut draws: Vec<f64> = (0..100_000).map(|_| laplace_sample(b, &mut rng).unwrap()).collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = laplace_cdf(*x, b);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.01, "{ks}");
    }

    proptest! {
        #[test]
        fn noise_scale_is_linear_in_span_and_inverse_epsilon(
            n in 1usize..5000, span in 0.0..100.0f64, eps in 1e-4..10.0f64, k in 0.1..10.0f64
        ) {
            let p = params(eps);
            let base = noise_scale(n, &p, 0.0, span).unwrap();
            let scaled = noise_scale(n, &p, 0.0, k * span).unwrap();
            prop_assert!((scaled - k * base).abs() <= 1e-9 * scaled.abs().max(1.0));
            let sharper = noise_scale(n, &params(eps * k), 0.0, span).unwrap();
            prop_assert!((sharper * k - base).abs() <= 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn inverse_cdf_inverts_cdf(u in 1e-9..(1.0 - 1e-9f64), b in 0.01..100.0f64) {
            let x = laplace_inverse_cdf(u, b);
            prop_assert!((laplace_cdf(x, b) - u).abs() < 1e-9);
        }

        #[test]
        fn cost_within_unit_interval_for_dominated_private_value(opt in 1e-6..1e6f64, frac in 0.0..1.0f64) {
            let phi = privacy_cost(opt, opt * frac).unwrap();
            prop_assert!((0.0..=1.0).contains(&phi));
        }
    }
}
