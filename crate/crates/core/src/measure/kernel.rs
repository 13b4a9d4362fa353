//! Closed-form smoothed densities `P * φ_σ` and the moments of the smoothing
//! kernel under `P`.
//!
//! Two identities carry most of the work here:
//!
//! * `φ_σ(u)² = (4πσ²)^{-d/2} φ_{σ/√2}(u)`, so `E_P[φ_σ(x−X)²]` is a rescaled
//!   smoothed density at bandwidth `σ/√2`;
//! * `φ_σ(x−z) φ_σ(y−z) = φ_{σ√2}(x−y) φ_{σ/√2}((x+y)/2 − z)`, which does the
//!   same for the cross moment.
//!
//! Point clouds are finite sums, so they are evaluated directly instead.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use statrs::function::erf::erfc;

use super::spec::{GaussianSpec, MeasureSpec};
use super::Smoothing;
use crate::error::{Error, Result};

/// Relative negativity of `v(x)` tolerated as roundoff before it is reported.
pub const VARIANCE_NEGATIVITY_TOL: f64 = 1e-10;

/// Isotropic Gaussian density `φ_σ(x)`.
pub fn gaussian_density(x: &[f64], sigma: Smoothing) -> f64 {
    let s2 = sigma.get() * sigma.get();
    let r2: f64 = x.iter().map(|v| v * v).sum();
    (2.0 * PI * s2).powf(-0.5 * x.len() as f64) * (-0.5 * r2 / s2).exp()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, evaluated on whichever tail keeps precision.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// A Gaussian density `N(mean, cov)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct GaussPdf {
    mean: Vec<f64>,
    /// Row-major lower Cholesky factor.
    chol: Vec<f64>,
    log_norm: f64,
}

impl GaussPdf {
    pub(crate) fn new(mean: &[f64], cov: &DMatrix<f64>) -> Self {
        let d = mean.len();
        let chol = cov
            .clone()
            .cholesky()
            .expect("smoothed covariance is positive definite")
            .l();
        let log_det: f64 = (0..d).map(|i| chol[(i, i)].ln()).sum::<f64>() * 2.0;
        Self {
            mean: mean.to_vec(),
            chol: (0..d * d).map(|k| chol[(k / d, k % d)]).collect(),
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
        }
    }

    fn smoothed(g: &GaussianSpec, s2: f64) -> Self {
        let d = g.dim();
        Self::new(g.mean(), &(g.covariance() + DMatrix::identity(d, d) * s2))
    }

    pub(crate) fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        // forward substitution L z = x − μ, accumulating ‖z‖²
        let mut z = [0.0f64; 8];
        let mut heap;
        let z: &mut [f64] = if d <= 8 {
            &mut z[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= self.chol[i * d + j] * z[j];
            }
            z[i] = acc / self.chol[i * d + i];
            q += z[i] * z[i];
        }
        self.log_norm - 0.5 * q
    }

    pub(crate) fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Gaussian(GaussPdf),
    Mixture(Vec<(f64, GaussPdf)>),
    Box { lo: Vec<f64>, hi: Vec<f64>, sigma: f64 },
    Cloud { points: Vec<Vec<f64>>, weights: Vec<f64>, sigma: Smoothing },
}

/// Evaluator for `x ↦ (P * φ_σ)(x)` with per-spec setup done once.
#[derive(Debug, Clone)]
pub struct SmoothedDensity {
    dim: usize,
    repr: Repr,
}

impl SmoothedDensity {
    pub fn new(spec: &MeasureSpec, sigma: Smoothing) -> Self {
        let s2 = sigma.get() * sigma.get();
        let repr = match spec {
            MeasureSpec::Gaussian(g) => Repr::Gaussian(GaussPdf::smoothed(g, s2)),
            MeasureSpec::GaussianMixture {
                weights,
                components,
            } => Repr::Mixture(
                weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| (*w, GaussPdf::smoothed(c, s2)))
                    .collect(),
            ),
            MeasureSpec::UniformBox { lo, hi } => Repr::Box {
                lo: lo.clone(),
                hi: hi.clone(),
                sigma: sigma.get(),
            },
            MeasureSpec::PointCloud { points, weights } => Repr::Cloud {
                points: points.clone(),
                weights: weights.clone(),
                sigma,
            },
        };
        Self {
            dim: spec.dim(),
            repr,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.repr {
            Repr::Gaussian(g) => g.density(x),
            Repr::Mixture(cs) => cs.iter().map(|(w, g)| w * g.density(x)).sum(),
            Repr::Box { lo, hi, sigma } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(xk, (l, h))| normal_interval((xk - h) / sigma, (xk - l) / sigma) / (h - l))
                .product(),
            Repr::Cloud {
                points,
                weights,
                sigma,
            } => cloud_kernel_sum(points, weights, *sigma, x),
        }
    }
}

fn cloud_kernel_sum(points: &[Vec<f64>], weights: &[f64], sigma: Smoothing, x: &[f64]) -> f64 {
    let mut diff = vec![0.0; x.len()];
    points
        .iter()
        .zip(weights)
        .map(|(p, w)| {
            for (k, d) in diff.iter_mut().enumerate() {
                *d = x[k] - p[k];
            }
            w * gaussian_density(&diff, sigma)
        })
        .sum()
}

/// Moments of `φ_σ(x − X)`, `X ~ P`: mean, second moment, variance and covariance.
#[derive(Debug, Clone)]
pub struct KernelMoments {
    spec: MeasureSpec,
    sigma: Smoothing,
    rho: SmoothedDensity,
    /// `P * φ_{σ/√2}`.
    half: SmoothedDensity,
    sq_scale: f64,
}

impl KernelMoments {
    pub fn new(spec: &MeasureSpec, sigma: Smoothing) -> Self {
        let half_sigma = Smoothing::new(sigma.get() / std::f64::consts::SQRT_2)
            .expect("positive sigma stays positive");
        let d = spec.dim() as f64;
        Self {
            spec: spec.clone(),
            sigma,
            rho: SmoothedDensity::new(spec, sigma),
            half: SmoothedDensity::new(spec, half_sigma),
            sq_scale: (4.0 * PI * sigma.get() * sigma.get()).powf(-0.5 * d),
        }
    }

    pub fn sigma(&self) -> Smoothing {
        self.sigma
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.rho.dim()
    }

    /// `ρ(x) = (P * φ_σ)(x)`.
    pub fn rho(&self, x: &[f64]) -> f64 {
        self.rho.density(x)
    }

    pub fn smoothed(&self) -> &SmoothedDensity {
        &self.rho
    }

    /// `E_P[φ_σ(x − X)²]`.
    pub fn second_moment(&self, x: &[f64]) -> f64 {
        match &self.spec {
            MeasureSpec::PointCloud { points, weights } => {
                let mut diff = vec![0.0; x.len()];
                points
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| {
                        for (k, d) in diff.iter_mut().enumerate() {
                            *d = x[k] - p[k];
                        }
                        let f = gaussian_density(&diff, self.sigma);
                        w * f * f
                    })
                    .sum()
            }
            _ => self.sq_scale * self.half.density(x),
        }
    }

    /// `v(x) = Var_P(φ_σ(x − ·))`, with roundoff negativity clamped and
    /// anything worse reported.
    pub fn variance(&self, x: &[f64]) -> Result<f64> {
        let m2 = self.second_moment(x);
        let m1 = self.rho(x);
        clamp_variance(m2 - m1 * m1, m2, x)
    }

    /// `Cov_P(φ_σ(x − ·), φ_σ(y − ·))`.
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        let cross = match &self.spec {
            MeasureSpec::PointCloud { points, weights } => {
                let d = x.len();
                let mut dx = vec![0.0; d];
                let mut dy = vec![0.0; d];
                points
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| {
                        for k in 0..d {
                            dx[k] = x[k] - p[k];
                            dy[k] = y[k] - p[k];
                        }
                        w * gaussian_density(&dx, self.sigma) * gaussian_density(&dy, self.sigma)
                    })
                    .sum()
            }
            _ => {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
                let wide = Smoothing::new(self.sigma.get() * std::f64::consts::SQRT_2)
                    .expect("positive sigma stays positive");
                gaussian_density(&diff, wide) * self.half.density(&mid)
            }
        };
        cross - self.rho(x) * self.rho(y)
    }
}

fn clamp_variance(v: f64, scale: f64, x: &[f64]) -> Result<f64> {
    if v >= 0.0 {
        return Ok(v);
    }
    let relative = if scale > 0.0 { v / scale } else { f64::NEG_INFINITY };
    if relative >= -VARIANCE_NEGATIVITY_TOL {
        Ok(0.0)
    } else {
        Err(Error::NegativeVariance {
            x: x.to_vec(),
            relative,
        })
    }
}

/// `(P * φ_σ)(x)`.
pub fn smoothed_density(spec: &MeasureSpec, sigma: Smoothing, x: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    Ok(SmoothedDensity::new(spec, sigma).density(x))
}

/// `E_P[φ_σ(x − X)²]`.
pub fn squared_kernel_mean(spec: &MeasureSpec, sigma: Smoothing, x: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    Ok(KernelMoments::new(spec, sigma).second_moment(x))
}

/// `Var_P(φ_σ(x − ·))`.
pub fn variance_function(spec: &MeasureSpec, sigma: Smoothing, x: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    KernelMoments::new(spec, sigma).variance(x)
}

/// Covariance kernel of the limiting Gaussian process.
pub fn covariance_kernel(spec: &MeasureSpec, sigma: Smoothing, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(spec, x)?;
    check_dim(spec, y)?;
    Ok(KernelMoments::new(spec, sigma).covariance(x, y))
}

fn check_dim(spec: &MeasureSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: x.len(),
        });
    }
    Ok(())
}
