//! Norm tail probabilities `P(‖X‖ > t)`.
//!
//! Exact where a closed form exists (point clouds, one-dimensional Gaussians
//! and boxes, centered isotropic Gaussians). Every other case uses a fixed
//! 10^6-draw Monte Carlo table, built once per spec and shared read-only.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::function::gamma::gamma_ur;

use super::kernel::normal_cdf;
use super::sample::Sampler;
use super::spec::MeasureSpec;
use crate::integrate::{adaptive_simpson, EstimateWithError, Method};
use crate::error::{Error, Result};
use crate::seed;

pub const TAIL_MC_DRAWS: usize = 1_000_000;
const TAIL_MC_SEED: u64 = 0x7a11_ca11;

/// Piecewise-constant tail from weighted atoms at given norms.
#[derive(Debug)]
pub struct TailSteps {
    /// Ascending.
    norms: Vec<f64>,
    /// `suffix[k] = Σ_{j ≥ k} w_j`; one extra trailing zero.
    suffix: Vec<f64>,
    /// `Some(N)` for Monte Carlo tables.
    draws: Option<usize>,
}

impl TailSteps {
    fn new(mut atoms: Vec<(f64, f64)>, draws: Option<usize>) -> Self {
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut suffix = vec![0.0; atoms.len() + 1];
        for k in (0..atoms.len()).rev() {
            suffix[k] = suffix[k + 1] + atoms[k].1;
        }
        Self {
            norms: atoms.into_iter().map(|a| a.0).collect(),
            suffix,
            draws,
        }
    }

    fn tail(&self, t: f64) -> f64 {
        let k = self.norms.partition_point(|&r| r <= t);
        self.suffix[k].clamp(0.0, 1.0)
    }

    /// `∫_0^∞ t^{d-1} sqrt(tail(t)) dt`, exact for a step function.
    fn sqrt_tail_moment(&self, d: usize) -> f64 {
        let dd = d as i32;
        let mut prev = 0.0_f64;
        let mut total = 0.0;
        for (k, &r) in self.norms.iter().enumerate() {
            if r > prev {
                total += self.suffix[k].max(0.0).sqrt() * (r.powi(dd) - prev.powi(dd)) / d as f64;
                prev = r;
            }
        }
        total
    }
}

/// How `P(‖X‖ > t)` is evaluated for a given spec.
#[derive(Debug, Clone)]
pub enum TailModel {
    Gaussian1d { mean: f64, sd: f64 },
    /// `X ~ N(0, s2 I_d)`: `‖X‖²/s2` is chi-square with `d` degrees of freedom.
    CenteredIsotropic { s2: f64, d: usize },
    Box1d { lo: f64, hi: f64 },
    Steps(Arc<TailSteps>),
}

fn mc_cache() -> &'static Mutex<HashMap<String, Arc<TailSteps>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<TailSteps>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn monte_carlo_steps(spec: &MeasureSpec) -> Arc<TailSteps> {
    let key = spec.describe();
    let mut cache = mc_cache().lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry(key)
        .or_insert_with(|| {
            let sampler = Sampler::new(spec);
            let mut rng = seed::rng_from(TAIL_MC_SEED, &[seed::stream::TAIL_CACHE]);
            let d = spec.dim();
            let pts = sampler.draw(&mut rng, TAIL_MC_DRAWS);
            let w = 1.0 / TAIL_MC_DRAWS as f64;
            let atoms = pts
                .chunks_exact(d)
                .map(|p| (p.iter().map(|v| v * v).sum::<f64>().sqrt(), w))
                .collect();
            Arc::new(TailSteps::new(atoms, Some(TAIL_MC_DRAWS)))
        })
        .clone()
}

impl TailModel {
    pub fn for_spec(spec: &MeasureSpec) -> Self {
        match spec {
            MeasureSpec::PointCloud { points, weights } => {
                let atoms = points
                    .iter()
                    .zip(weights)
                    .map(|(p, w)| (p.iter().map(|v| v * v).sum::<f64>().sqrt(), *w))
                    .collect();
                Self::Steps(Arc::new(TailSteps::new(atoms, None)))
            }
            MeasureSpec::Gaussian(g) if g.dim() == 1 => Self::Gaussian1d {
                mean: g.mean()[0],
                sd: g.covariance()[(0, 0)].max(0.0).sqrt(),
            },
            MeasureSpec::Gaussian(g) if g.mean().iter().all(|m| *m == 0.0) => {
                match g.isotropic_variance() {
                    Some(s2) => Self::CenteredIsotropic { s2, d: g.dim() },
                    None => Self::Steps(monte_carlo_steps(spec)),
                }
            }
            MeasureSpec::UniformBox { lo, hi } if lo.len() == 1 => Self::Box1d {
                lo: lo[0],
                hi: hi[0],
            },
            _ => Self::Steps(monte_carlo_steps(spec)),
        }
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self, Self::Steps(s) if s.draws.is_some())
    }

    pub fn tail(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Self::Gaussian1d { mean, sd } => {
                if *sd == 0.0 {
                    return if mean.abs() > t { 1.0 } else { 0.0 };
                }
                normal_cdf((-t - mean) / sd) + normal_cdf((mean - t) / sd)
            }
            Self::CenteredIsotropic { s2, d } => {
                if *s2 == 0.0 {
                    return 0.0;
                }
                if t == 0.0 {
                    return 1.0;
                }
                gamma_ur(0.5 * *d as f64, 0.5 * t * t / s2)
            }
            Self::Box1d { lo, hi } => {
                let inside = (hi.min(t) - lo.max(-t)).max(0.0);
                1.0 - inside / (hi - lo)
            }
            Self::Steps(s) => s.tail(t),
        }
    }

    pub fn tail_estimate(&self, t: f64) -> EstimateWithError {
        let p = self.tail(t);
        match self {
            Self::Steps(s) if s.draws.is_some() => {
                let n = s.draws.unwrap() as f64;
                EstimateWithError::new(
                    p,
                    (p * (1.0 - p) / n).sqrt(),
                    Method::MonteCarlo {
                        draws: s.draws.unwrap(),
                        seed: TAIL_MC_SEED,
                    },
                )
            }
            _ => EstimateWithError::exact(p),
        }
    }

    /// `∫_0^∞ t^{d-1} sqrt(P(‖X‖ > t)) dt`.
    ///
    /// Analytic tails are integrated adaptively on `[0, T]`, doubling `T`
    /// until the increment is below `1e-10` relative; a tail that never
    /// saturates is reported as divergent.
    pub fn sqrt_tail_moment(&self, d: usize) -> Result<f64> {
        if let Self::Steps(s) = self {
            return Ok(s.sqrt_tail_moment(d));
        }
        let f = |t: f64| t.powi(d as i32 - 1) * self.tail(t).max(0.0).sqrt();
        let mut hi = match self {
            Self::Gaussian1d { mean, sd } => mean.abs() + 4.0 * sd + 1.0,
            Self::CenteredIsotropic { s2, d } => (s2 * (*d as f64 + 8.0)).sqrt() + 1.0,
            Self::Box1d { lo, hi } => lo.abs().max(hi.abs()),
            Self::Steps(_) => unreachable!(),
        };
        let mut total = adaptive_simpson(&f, 0.0, hi, 1e-13, 50);
        let mut last_change = f64::INFINITY;
        for _ in 0..40 {
            let piece = adaptive_simpson(&f, hi, 2.0 * hi, 1e-13, 50);
            total += piece;
            hi *= 2.0;
            last_change = if total > 0.0 { piece / total } else { 0.0 };
            if last_change < 1e-10 {
                return Ok(total);
            }
        }
        Err(Error::TailDivergence { last_change })
    }
}

/// `P(‖X‖ > t)` with its standard error (zero when exact).
pub fn tail_probability(spec: &MeasureSpec, t: f64) -> Result<EstimateWithError> {
    if !(t >= 0.0) {
        return Err(crate::error::config_err("tail threshold must be nonnegative"));
    }
    Ok(TailModel::for_spec(spec).tail_estimate(t))
}
