//! Integration over `R^d`: truncated midpoint tensor grids for `d ≤ 3` and
//! importance-sampled Monte Carlo for any `d`.
//!
//! Node and draw evaluations may run on the rayon pool, but every reduction
//! goes through [`pairwise_sum`] over a vector in index order, so results are
//! bit-identical for any worker count.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{config_err, Error, Result};
use crate::measure::{GaussPdf, GaussianSpec, MeasureSpec, Sampler, Smoothing};
use crate::seed;

/// Largest dimension handled by tensor grids.
pub const MAX_GRID_DIM: usize = 3;
/// Default tail mass left outside truncation boxes.
pub const DEFAULT_EPS: f64 = 1e-8;

/// How an estimate was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Exact,
    Grid { points_per_axis: usize, lo: Vec<f64>, hi: Vec<f64> },
    MonteCarlo { draws: usize, seed: u64 },
    Importance { draws: usize, seed: u64 },
    Quadrature,
}

/// A numerical value with a nonnegative error descriptor: standard error for
/// Monte Carlo, refinement delta for grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithError {
    pub value: f64,
    pub error: f64,
    pub method: Method,
}

impl EstimateWithError {
    pub fn new(value: f64, error: f64, method: Method) -> Self {
        debug_assert!(error >= 0.0 || error.is_nan());
        Self {
            value,
            error: error.abs(),
            method,
        }
    }

    pub fn exact(value: f64) -> Self {
        Self::new(value, 0.0, Method::Exact)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.value * factor, self.error * factor.abs(), self.method.clone())
    }
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Midpoint lattice on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points_per_axis: usize,
}

impl TensorGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points_per_axis: usize) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(config_err("grid bounds must be non-empty and equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h && l.is_finite() && h.is_finite())) {
            return Err(config_err("grid requires finite lo < hi componentwise"));
        }
        if points_per_axis < 2 {
            return Err(config_err("grid needs at least 2 points per axis"));
        }
        Ok(Self {
            lo,
            hi,
            points_per_axis,
        })
    }

    /// Grid on [`choose_box`]`(spec, sigma, eps)`.
    pub fn for_measure(spec: &MeasureSpec, sigma: Smoothing, eps: f64, points_per_axis: usize) -> Result<Self> {
        let (lo, hi) = choose_box(spec, sigma, eps)?;
        Self::new(lo, hi, points_per_axis)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.points_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.spacing(k)).product()
    }

    /// Node coordinates along one axis.
    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.points_per_axis)
            .map(|j| self.lo[axis] + (j as f64 + 0.5) * h)
            .collect()
    }

    /// Writes node `index` (axis 0 slowest) into `out`.
    pub fn node_into(&self, mut index: usize, out: &mut [f64]) {
        let p = self.points_per_axis;
        for k in (0..self.dim()).rev() {
            let j = index % p;
            index /= p;
            out[k] = self.lo[k] + (j as f64 + 0.5) * self.spacing(k);
        }
    }

    pub fn node(&self, index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(index, &mut x);
        x
    }

    /// All nodes, row-major.
    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (i, row) in out.chunks_exact_mut(d).enumerate() {
            self.node_into(i, row);
        }
        out
    }

    /// Whether node `index` touches the box boundary.
    pub fn is_boundary(&self, mut index: usize) -> bool {
        let p = self.points_per_axis;
        for _ in 0..self.dim() {
            let j = index % p;
            if j == 0 || j == p - 1 {
                return true;
            }
            index /= p;
        }
        false
    }

    /// Same box at half resolution.
    pub fn coarsened(&self) -> Self {
        Self {
            lo: self.lo.clone(),
            hi: self.hi.clone(),
            points_per_axis: (self.points_per_axis / 2).max(1),
        }
    }

    pub fn method(&self) -> Method {
        Method::Grid {
            points_per_axis: self.points_per_axis,
            lo: self.lo.clone(),
            hi: self.hi.clone(),
        }
    }

    pub(crate) fn check_dim(&self) -> Result<()> {
        if self.dim() > MAX_GRID_DIM {
            return Err(config_err(format!(
                "tensor grids support d <= {MAX_GRID_DIM} (got d = {})",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Radius `r` with `P(‖Z‖ > r) ≤ mass` for `Z ~ N(0, I_d)`.
pub fn chi_radius(d: usize, mass: f64) -> f64 {
    let a = 0.5 * d as f64;
    let sf = |r: f64| gamma_ur(a, 0.5 * r * r);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while sf(hi) > mass {
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sf(mid) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// A cube `mean ± r` holding all but `eps` of the smoothed law `P * N_σ`.
///
/// Uses `‖X + σZ − μ‖ ≤ ‖X − μ‖ + σ‖Z‖` with half the mass budget spent on
/// each term.
pub fn choose_box(spec: &MeasureSpec, sigma: Smoothing, eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(config_err(format!("tail mass must lie in (0, 1) (got {eps})")));
    }
    let d = spec.dim();
    let z = chi_radius(d, 0.5 * eps);
    let mu = spec.mean();
    let spread = match spec {
        MeasureSpec::Gaussian(g) => g.lambda_max().sqrt() * z,
        MeasureSpec::GaussianMixture { components, .. } => components
            .iter()
            .map(|c| crate::measure::spec_dist(c.mean(), &mu) + c.lambda_max().sqrt() * z)
            .fold(0.0, f64::max),
        _ => spec.support_radius().unwrap_or(0.0),
    };
    let r = spread + sigma.get() * z;
    Ok((
        mu.iter().map(|m| m - r).collect(),
        mu.iter().map(|m| m + r).collect(),
    ))
}

fn grid_pass<F>(f: &F, grid: &TensorGrid) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let d = grid.dim();
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |x, i| {
                grid.node_into(i, x);
                f(x)
            },
        )
        .collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "integrand is not finite at grid node {:?}",
            grid.node(i)
        )));
    }
    Ok(pairwise_sum(&vals) * grid.cell_volume())
}

/// Midpoint-rule integral of `f` over `grid`; the error is the change from
/// the half-resolution grid.
pub fn integrate_grid<F>(f: F, grid: &TensorGrid) -> Result<EstimateWithError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    grid.check_dim()?;
    let fine = grid_pass(&f, grid)?;
    let coarse = grid_pass(&f, &grid.coarsened())?;
    Ok(EstimateWithError::new(fine, (fine - coarse).abs(), grid.method()))
}

/// Density of an importance proposal (Gaussian or Gaussian mixture).
#[derive(Debug, Clone)]
pub struct ProposalDensity {
    components: Vec<(f64, GaussPdf)>,
}

impl ProposalDensity {
    fn new(spec: &MeasureSpec) -> Result<Self> {
        let comps: Vec<(f64, &GaussianSpec)> = match spec {
            MeasureSpec::Gaussian(g) => vec![(1.0, g)],
            MeasureSpec::GaussianMixture {
                weights,
                components,
            } => weights.iter().copied().zip(components).collect(),
            _ => {
                return Err(config_err(
                    "importance proposals must be Gaussian or Gaussian mixtures",
                ))
            }
        };
        let components = comps
            .into_iter()
            .map(|(w, g)| {
                if g.eigenvalues()[0] <= 0.0 {
                    return Err(config_err("proposal covariance must be positive definite"));
                }
                Ok((w, GaussPdf::new(g.mean(), g.covariance())))
            })
            .collect::<Result<_>>()?;
        Ok(Self { components })
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, g)| w * g.density(x)).sum()
    }
}

/// Importance-sampling rule: draws from `proposal`, weights by `1/q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRule {
    proposal: MeasureSpec,
    draws: usize,
    seed: u64,
}

impl ImportanceRule {
    pub fn new(proposal: MeasureSpec, draws: usize, seed: u64) -> Result<Self> {
        ProposalDensity::new(&proposal)?;
        if draws < 2 {
            return Err(config_err("importance sampling needs at least 2 draws"));
        }
        Ok(Self {
            proposal,
            draws,
            seed,
        })
    }

    /// Proposal equal to `P * N_σ` with every Gaussian piece's covariance doubled.
    pub fn for_measure(spec: &MeasureSpec, sigma: Smoothing, draws: usize, seed: u64) -> Result<Self> {
        Self::new(default_proposal(spec, sigma)?, draws, seed)
    }

    pub fn proposal(&self) -> &MeasureSpec {
        &self.proposal
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn density(&self) -> ProposalDensity {
        ProposalDensity::new(&self.proposal).expect("validated at construction")
    }

    pub fn method(&self) -> Method {
        Method::Importance {
            draws: self.draws,
            seed: self.seed,
        }
    }

    /// The proposal draws, row-major.
    pub fn draw_points(&self) -> Vec<f64> {
        let mut rng = seed::Rng::seed_from_u64(seed::derive_seed(self.seed, &[seed::stream::IMPORTANCE]));
        Sampler::new(&self.proposal).draw(&mut rng, self.draws)
    }
}

const INFLATION: f64 = 2.0;

fn default_proposal(spec: &MeasureSpec, sigma: Smoothing) -> Result<MeasureSpec> {
    let d = spec.dim();
    let s2 = sigma.get() * sigma.get();
    let eye = DMatrix::<f64>::identity(d, d);
    let inflate = |mean: &[f64], cov: &DMatrix<f64>| {
        GaussianSpec::new(mean.to_vec(), (cov + &eye * s2) * INFLATION)
    };
    match spec {
        MeasureSpec::Gaussian(g) => Ok(MeasureSpec::Gaussian(inflate(g.mean(), g.covariance())?)),
        MeasureSpec::GaussianMixture {
            weights,
            components,
        } => MeasureSpec::mixture(
            weights.clone(),
            components
                .iter()
                .map(|c| inflate(c.mean(), c.covariance()))
                .collect::<Result<_>>()?,
        ),
        MeasureSpec::UniformBox { .. } => {
            let var = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spec.marginal_variances()));
            Ok(MeasureSpec::Gaussian(inflate(&spec.mean(), &var)?))
        }
        MeasureSpec::PointCloud { points, weights } => {
            let zero = DMatrix::zeros(d, d);
            MeasureSpec::mixture(
                weights.clone(),
                points
                    .iter()
                    .map(|p| inflate(p, &zero))
                    .collect::<Result<_>>()?,
            )
        }
    }
}

/// Mean and standard error of importance ratios, reduced in index order.
pub(crate) fn ratio_estimate(ratios: &[f64], method: Method) -> Result<EstimateWithError> {
    if let Some(index) = ratios.iter().position(|r| !r.is_finite()) {
        return Err(Error::NonFiniteRatio { index });
    }
    let n = ratios.len() as f64;
    let mean = pairwise_sum(ratios) / n;
    let dev: Vec<f64> = ratios.iter().map(|r| (r - mean) * (r - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    Ok(EstimateWithError::new(mean, (var / n).sqrt(), method))
}

/// `∫ f` estimated as the mean of `f(x)/q(x)`, `x ~ q`.
pub fn integrate_importance<F>(f: F, rule: &ImportanceRule) -> Result<EstimateWithError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let q = rule.density();
    let d = rule.proposal.dim();
    let pts = rule.draw_points();
    let ratios: Vec<f64> = pts
        .par_chunks_exact(d)
        .map(|x| {
            let fx = f(x);
            if fx == 0.0 {
                0.0
            } else {
                fx / q.density(x)
            }
        })
        .collect();
    ratio_estimate(&ratios, rule.method())
}

/// A concrete integration rule over `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rule {
    Grid(TensorGrid),
    Importance(ImportanceRule),
}

impl Rule {
    pub fn grid(spec: &MeasureSpec, sigma: Smoothing, points_per_axis: usize, eps: f64) -> Result<Self> {
        let grid = TensorGrid::for_measure(spec, sigma, eps, points_per_axis)?;
        grid.check_dim()?;
        Ok(Self::Grid(grid))
    }

    pub fn importance(spec: &MeasureSpec, sigma: Smoothing, draws: usize, seed: u64) -> Result<Self> {
        Ok(Self::Importance(ImportanceRule::for_measure(spec, sigma, draws, seed)?))
    }

    /// Grid for `d ≤ 2`, importance sampling otherwise.
    pub fn default_for(spec: &MeasureSpec, sigma: Smoothing) -> Result<Self> {
        match spec.dim() {
            1 => Self::grid(spec, sigma, 2000, DEFAULT_EPS),
            2 => Self::grid(spec, sigma, 200, DEFAULT_EPS),
            _ => Self::importance(spec, sigma, 100_000, 0),
        }
    }

    pub fn integrate<F>(&self, f: F) -> Result<EstimateWithError>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        match self {
            Self::Grid(g) => integrate_grid(f, g),
            Self::Importance(r) => integrate_importance(f, r),
        }
    }
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    // split into panels first so narrow features are not skipped
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|k| {
            let (lo, hi) = (a + k as f64 * h, a + (k + 1) as f64 * h);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            rec(f, lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol / PANELS as f64, max_depth)
        })
        .sum()
}
