//! Closed-form bounds, moment identities and sufficient-condition checks for
//! the smoothed divergences.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;

use crate::error::{config_err, Error, Result};
use crate::integrate::{choose_box, EstimateWithError, Rule, TensorGrid, DEFAULT_EPS, MAX_GRID_DIM};
use crate::measure::{spec_dist, GaussianSpec, KernelMoments, MeasureSpec, Smoothing, TailModel};
use crate::seed::{rng_from, stream};

/// Default η in [`lemma2_bound`].
pub const DEFAULT_ETA: f64 = 0.1;
/// Monte Carlo draws in [`mgf_check`].
pub const MGF_DRAWS: usize = 1_000_000;
/// Relative change under which a truncated integral counts as saturated.
pub const SATURATION_TOL: f64 = 1e-3;
/// Radius growth factor used by the saturation probes.
pub const SATURATION_GROWTH: f64 = 1.5;

/// Outcome of one sufficient-condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// How `lhs` is compared to `rhs` for `holds`.
    pub relation: String,
    pub parameters: BTreeMap<String, f64>,
}

impl ConditionReport {
    fn less_than(name: &str, lhs: f64, rhs: f64, parameters: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            holds: lhs < rhs,
            lhs,
            rhs,
            relation: "<".into(),
            parameters: parameters.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

/// Integrates a fallible integrand, surfacing the first error it reports.
fn integrate_fallible<F>(rule: &Rule, f: F) -> Result<EstimateWithError>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let fail: OnceLock<Error> = OnceLock::new();
    let est = rule.integrate(|x| match f(x) {
        Ok(v) => v,
        Err(e) => {
            let _ = fail.set(e);
            f64::NAN
        }
    });
    match fail.into_inner() {
        Some(e) => Err(e),
        None => est,
    }
}

fn chi2_integrand(km: &KernelMoments, x: &[f64]) -> Result<f64> {
    let v = km.variance(x)?;
    let r = km.rho(x);
    if r >= f64::MIN_POSITIVE {
        Ok(v / r)
    } else if v == 0.0 {
        Ok(0.0)
    } else {
        Err(Error::DensityUnderflow { x: x.to_vec() })
    }
}

/// `∫ √v(x) dx`.
pub fn tv_variance_integral(spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<EstimateWithError> {
    let km = KernelMoments::new(spec, sigma);
    integrate_fallible(rule, |x| Ok(km.variance(x)?.sqrt()))
}

/// `½ ∫ √v`, the moment bound on `√n E δ_TV`.
pub fn tv_upper_bound(spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<EstimateWithError> {
    Ok(tv_variance_integral(spec, sigma, rule)?.scaled(0.5))
}

/// `(2π)^{-1/2} ∫ √v`, the asymptotic lower bound on `√n E δ_TV`.
pub fn tv_lower_bound(spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<EstimateWithError> {
    Ok(tv_variance_integral(spec, sigma, rule)?.scaled((2.0 * PI).powf(-0.5)))
}

/// `8^{d/2} + 2^{d/2+1}/(σ^d Γ(d/2)) ∫_0^∞ t^{d−1} √P(‖X‖ > t) dt`, an upper
/// bound on `∫ √v`.
pub fn lemma1_bound(spec: &MeasureSpec, sigma: Smoothing) -> Result<f64> {
    let d = spec.dim();
    let df = d as f64;
    let tail = TailModel::for_spec(spec).sqrt_tail_moment(d)?;
    Ok(8f64.powf(0.5 * df) + 2f64.powf(0.5 * df + 1.0) / (sigma.get().powf(df) * gamma(0.5 * df)) * tail)
}

/// `J = ∫ v/ρ`, which equals `n E χ²_σ(P_n ‖ P)` for every `n`.
pub fn chi2_mean_integral(spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<EstimateWithError> {
    let km = KernelMoments::new(spec, sigma);
    integrate_fallible(rule, |x| chi2_integrand(&km, x))
}

/// Holds iff `β < σ/√2`.
pub fn lemma2_check(beta: f64, sigma: Smoothing) -> ConditionReport {
    let rhs = sigma.get() / 2f64.sqrt();
    ConditionReport::less_than("lemma2", beta, rhs, &[("beta", beta), ("sigma", sigma.get())])
}

/// Largest `β` allowed by the η-condition, `σ √((1−η)/(2(1+η)))`.
pub fn lemma2_beta_limit(sigma: Smoothing, eta: f64) -> f64 {
    sigma.get() * ((1.0 - eta) / (2.0 * (1.0 + eta))).sqrt()
}

/// `E exp(−a ‖X − E X‖²)` in closed form for every family.
pub fn centered_gaussian_moment(spec: &MeasureSpec, a: f64) -> f64 {
    let center = spec.mean();
    let gauss = |g: &GaussianSpec| {
        let d = g.dim();
        let m = DMatrix::identity(d, d) + g.covariance() * (2.0 * a);
        let mu = nalgebra::DVector::from_iterator(d, g.mean().iter().zip(&center).map(|(x, c)| x - c));
        let chol = m.clone().cholesky().expect("I + 2aΣ is positive definite");
        let quad = mu.dot(&chol.solve(&mu));
        chol.determinant().powf(-0.5) * (-a * quad).exp()
    };
    match spec {
        MeasureSpec::Gaussian(g) => gauss(g),
        MeasureSpec::GaussianMixture { weights, components } => {
            weights.iter().zip(components).map(|(w, g)| w * gauss(g)).sum()
        }
        MeasureSpec::UniformBox { lo, hi } => lo
            .iter()
            .zip(hi)
            .zip(&center)
            .map(|((l, h), c)| {
                let s = a.sqrt();
                0.5 * (PI / a).sqrt() * (erf(s * (h - c)) - erf(s * (l - c))) / (h - l)
            })
            .product(),
        MeasureSpec::PointCloud { points, weights } => points
            .iter()
            .zip(weights)
            .map(|(p, w)| w * (-a * spec_dist(p, &center).powi(2)).exp())
            .sum(),
    }
}

/// `(1−η)^{-d/2} C_{P,η}^{-1} [1 − 2(1+η)β²/((1−η)σ²)]^{-d/2}` with
/// `C_{P,η} = E exp(−(1+1/η)‖X − E X‖²/(2σ²))`; an upper bound on `J` for
/// β-subgaussian `P`.
pub fn lemma2_bound(spec: &MeasureSpec, sigma: Smoothing, beta: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(config_err(format!("eta must lie in (0, 1) (got {eta})")));
    }
    let limit = lemma2_beta_limit(sigma, eta);
    if !(beta < limit) {
        return Err(Error::EtaCondition { beta, limit });
    }
    let s2 = sigma.get().powi(2);
    let half_d = 0.5 * spec.dim() as f64;
    let a = (1.0 + 1.0 / eta) / (2.0 * s2);
    let c = centered_gaussian_moment(spec, a);
    if !(c > 0.0) {
        return Err(Error::Numerical(format!("C_(P,eta) underflowed at eta = {eta}")));
    }
    let bracket = 1.0 - 2.0 * (1.0 + eta) * beta * beta / ((1.0 - eta) * s2);
    Ok((1.0 - eta).powf(-half_d) / c * bracket.powf(-half_d))
}

/// Minimizes [`lemma2_bound`] over `η ∈ {0.01, 0.02, …, 0.5}`; returns `(η, bound)`.
pub fn lemma2_bound_min(spec: &MeasureSpec, sigma: Smoothing, beta: f64) -> Result<(f64, f64)> {
    let mut best: Option<(f64, f64)> = None;
    for k in 1..=50 {
        let eta = k as f64 / 100.0;
        if let Ok(b) = lemma2_bound(spec, sigma, beta, eta) {
            if best.is_none_or(|(_, v)| b < v) {
                best = Some((eta, b));
            }
        }
    }
    best.ok_or(Error::EtaCondition {
        beta,
        limit: lemma2_beta_limit(sigma, 0.01),
    })
}

/// Holds iff `λ_max(Σ) < λ_min(Σ) + σ²/2`.
pub fn lemma3_check(covariance: &DMatrix<f64>, sigma: Smoothing) -> Result<ConditionReport> {
    let g = GaussianSpec::new(vec![0.0; covariance.nrows()], covariance.clone())?;
    let eig = g.eigenvalues();
    let (lmin, lmax) = (eig[0].max(0.0), *eig.last().unwrap());
    let rhs = lmin + 0.5 * sigma.get().powi(2);
    Ok(ConditionReport::less_than(
        "lemma3",
        lmax,
        rhs,
        &[("lambda_min", lmin), ("lambda_max", lmax), ("sigma", sigma.get())],
    ))
}

/// Monte Carlo check of `E exp(η‖X − E X‖²) ≤ (1 − 2β²η)^{-d/2}` for Gaussian
/// `P`, with `η = fraction/(2β²)` and `β` the subgaussian parameter.
pub fn mgf_check(spec: &MeasureSpec, eta_fracs: &[f64], seed: u64) -> Result<Vec<ConditionReport>> {
    let g = match spec {
        MeasureSpec::Gaussian(g) => g,
        _ => return Err(config_err("mgf_check needs a Gaussian measure")),
    };
    if let Some(f) = eta_fracs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(config_err(format!("eta fractions must lie in (0, 1) (got {f})")));
    }
    let beta = spec.subgaussian_parameter();
    if beta == 0.0 {
        return Ok(eta_fracs
            .iter()
            .map(|&f| mgf_report(f, 0.0, 1.0, 1.0, 0.0, 1.0))
            .collect());
    }
    let d = g.dim();
    let factor = g.sqrt_factor();
    let mut rng = rng_from(seed, &[stream::MGF]);
    let mut z = vec![0.0; d];
    let norms: Vec<f64> = (0..MGF_DRAWS)
        .map(|_| {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            (0..d)
                .map(|i| (0..d).map(|j| factor[(i, j)] * z[j]).sum::<f64>().powi(2))
                .sum()
        })
        .collect();
    let eig = g.eigenvalues();
    Ok(eta_fracs
        .iter()
        .map(|&frac| {
            let eta = frac / (2.0 * beta * beta);
            let vals: Vec<f64> = norms.iter().map(|r2| (eta * r2).exp()).collect();
            let n = vals.len() as f64;
            let mean = crate::integrate::pairwise_sum(&vals) / n;
            let dev: Vec<f64> = vals.iter().map(|v| (v - mean).powi(2)).collect();
            let se = (crate::integrate::pairwise_sum(&dev) / (n - 1.0) / n).sqrt();
            let rhs = (1.0 - 2.0 * beta * beta * eta).powf(-0.5 * d as f64);
            let exact: f64 = eig.iter().map(|l| (1.0 - 2.0 * l.max(0.0) * eta).powf(-0.5)).product();
            mgf_report(frac, eta, mean, rhs, se, exact)
        })
        .collect())
}

fn mgf_report(frac: f64, eta: f64, lhs: f64, rhs: f64, se: f64, exact: f64) -> ConditionReport {
    let se_rel = if lhs > 0.0 { se / lhs } else { 0.0 };
    ConditionReport {
        name: "mgf".into(),
        holds: lhs <= rhs * (1.0 + 3.0 * se_rel),
        lhs,
        rhs,
        relation: "<= rhs*(1+3*se_rel)".into(),
        parameters: [
            ("fraction", frac),
            ("eta", eta),
            ("standard_error", se),
            ("exact_lhs", exact),
            ("draws", MGF_DRAWS as f64),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect(),
    }
}

/// `exp(−n t²/2)`, the tail bound on `δ_TV − E δ_TV`.
pub fn concentration_bound(n: usize, t: f64) -> Result<f64> {
    if n == 0 || !(t > 0.0) || !t.is_finite() {
        return Err(config_err(format!("need n >= 1 and t > 0 (got n = {n}, t = {t})")));
    }
    Ok((-(n as f64) * t * t / 2.0).exp())
}

/// Nodes per axis for the ball-restricted grids below.
fn probe_points(r: f64, sigma: f64, d: usize) -> usize {
    let per = (2.0 * r / (0.05 * sigma)).ceil() as usize;
    let cap = match d {
        1 => 20_000,
        2 => 1_500,
        _ => 150,
    };
    per.clamp(200.min(cap), cap)
}

fn ball_integral<F>(spec: &MeasureSpec, sigma: Smoothing, r: f64, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = spec.dim();
    if d > MAX_GRID_DIM {
        return Err(config_err(format!("ball probes need d <= {MAX_GRID_DIM} (got {d})")));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let grid = TensorGrid::new(vec![-r; d], vec![r; d], probe_points(r, sigma.get(), d))?;
    let rule = Rule::Grid(grid);
    let r2 = r * r;
    Ok(integrate_fallible(&rule, |x| {
        if x.iter().map(|v| v * v).sum::<f64>() <= r2 {
            f(x)
        } else {
            Ok(0.0)
        }
    })?
    .value)
}

/// `∫_{‖x‖ ≤ r} v/ρ` for each radius.
pub fn chi2_divergence_probe(spec: &MeasureSpec, sigma: Smoothing, radii: &[f64]) -> Result<Vec<f64>> {
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(config_err("radii must be nonnegative and strictly increasing"));
    }
    let km = KernelMoments::new(spec, sigma);
    radii.iter().map(|&r| ball_integral(spec, sigma, r, |x| chi2_integrand(&km, x))).collect()
}

/// `∫_{‖x‖ ≤ r} √v` for each radius.
pub fn tv_variance_probe(spec: &MeasureSpec, sigma: Smoothing, radii: &[f64]) -> Result<Vec<f64>> {
    if radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(config_err("radii must be nonnegative and strictly increasing"));
    }
    let km = KernelMoments::new(spec, sigma);
    radii
        .iter()
        .map(|&r| ball_integral(spec, sigma, r, |x| Ok(km.variance(x)?.sqrt())))
        .collect()
}

/// Radius of the smallest origin-centered ball containing the default truncation box.
pub fn default_probe_radius(spec: &MeasureSpec, sigma: Smoothing) -> Result<f64> {
    let (lo, hi) = choose_box(spec, sigma, DEFAULT_EPS)?;
    Ok(lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| l.abs().max(h.abs()).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn saturation_report(name: &str, values: &[f64], radius: f64) -> ConditionReport {
    let (a, b) = (values[0], values[1]);
    let change = if b == 0.0 { 0.0 } else { (b - a).abs() / b.abs() };
    ConditionReport::less_than(
        name,
        change,
        SATURATION_TOL,
        &[
            ("radius", radius),
            ("grown_radius", radius * SATURATION_GROWTH),
            ("integral", a),
            ("grown_integral", b),
        ],
    )
}

/// Numerical finiteness of `∫ √v`: the ball integral changes by less than
/// [`SATURATION_TOL`] (relative) when the radius grows by [`SATURATION_GROWTH`].
pub fn tv_condition_probe(spec: &MeasureSpec, sigma: Smoothing, radius: Option<f64>) -> Result<ConditionReport> {
    let r = match radius {
        Some(r) => r,
        None => default_probe_radius(spec, sigma)?,
    };
    let vals = tv_variance_probe(spec, sigma, &[r, r * SATURATION_GROWTH])?;
    Ok(saturation_report("tv_condition", &vals, r))
}

/// Numerical finiteness of `J = ∫ v/ρ`, decided the same way.
pub fn chi2_condition_probe(spec: &MeasureSpec, sigma: Smoothing, radius: Option<f64>) -> Result<ConditionReport> {
    let r = match radius {
        Some(r) => r,
        None => default_probe_radius(spec, sigma)?,
    };
    let vals = chi2_divergence_probe(spec, sigma, &[r, r * SATURATION_GROWTH])?;
    Ok(saturation_report("chi2_condition", &vals, r))
}
