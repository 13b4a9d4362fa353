//! Smooth TV distance and smooth χ²-divergence between the empirical measure
//! `P_n` and a reference `P`, both convolved with `N(0, σ² I)`.
//!
//! Both are computed through densities:
//!
//! ```text
//! δ_TV = ½ ∫ |f_n − ρ|        χ² = ∫ (f_n − ρ)² / ρ
//! ```
//!
//! with `f_n = P_n * φ_σ` and `ρ = P * φ_σ`. A [`DivergencePlan`] caches
//! everything that depends only on `(P, σ, rule)` so that repeated samples
//! cost one pass over the nodes (or draws) each.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{choose_box, pairwise_sum, ratio_estimate, Rule, TensorGrid, DEFAULT_EPS};
use crate::measure::{MeasureSpec, Sample, Smoothing, SmoothedDensity};

/// Kernel factors below this (relative to the peak) are dropped.
const KERNEL_CUTOFF: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Divergence {
    Tv,
    Chi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub value: f64,
    pub integration_error: f64,
    pub n: usize,
    pub sigma: f64,
}

/// Both divergences for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergencePair {
    pub tv: DivergenceResult,
    pub chi2: DivergenceResult,
}

/// Weighted atoms, row-major.
#[derive(Debug, Clone)]
struct Atoms {
    coords: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

impl Atoms {
    fn from_sample(sample: &Sample) -> Self {
        let d = sample.dim();
        let mut idx: Vec<usize> = (0..sample.n()).collect();
        idx.sort_by(|&a, &b| {
            sample
                .point(a)
                .iter()
                .zip(sample.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = sample.n() as f64;
        let mut coords: Vec<f64> = Vec::with_capacity(sample.n() * d);
        let mut counts: Vec<usize> = Vec::with_capacity(sample.n());
        for i in idx {
            let p = sample.point(i);
            let same = !counts.is_empty() && &coords[coords.len() - d..] == p;
            if same {
                *counts.last_mut().unwrap() += 1;
            } else {
                coords.extend_from_slice(p);
                counts.push(1);
            }
        }
        Self {
            coords,
            weights: counts.iter().map(|&c| c as f64 / n).collect(),
            dim: d,
        }
    }

    fn from_cloud(points: &[Vec<f64>], weights: &[f64]) -> Self {
        Self {
            coords: points.concat(),
            weights: weights.to_vec(),
            dim: points[0].len(),
        }
    }

    fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.coords.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// `Σ_j w_j φ_σ(x − a_j)`.
    fn density(&self, sigma: f64, x: &[f64]) -> f64 {
        let s2 = sigma * sigma;
        let norm = (2.0 * PI * s2).powf(-0.5 * self.dim as f64);
        let mut total = 0.0;
        for (a, w) in self.iter() {
            let r2: f64 = a.iter().zip(x).map(|(p, q)| (q - p) * (q - p)).sum();
            total += w * (-0.5 * r2 / s2).exp();
        }
        norm * total
    }
}

/// Independent recurrence chains in [`gauss_run`].
const LANES: usize = 8;

/// Appends `exp(−u²/2)` for `u = u0, u0 + s, u0 + 2s, …` (at most `max`
/// terms), stopping after the first block that lies wholly below the cutoff.
/// `|u|` must be nondecreasing after the first term.
///
/// Lane `m` steps by `LANES·s` with the ratio recurrence
/// `g ← g·q, q ← q·exp(−(LANES·s)²)`, so the lanes vectorize.
fn gauss_run(u0: f64, s: f64, max: usize, out: &mut Vec<f64>) {
    if max == 0 {
        return;
    }
    let ks = LANES as f64 * s;
    let c = (-ks * ks).exp();
    let mut g = [0.0; LANES];
    let mut q = [0.0; LANES];
    for m in 0..LANES {
        let u = u0 + m as f64 * s;
        g[m] = (-0.5 * u * u).exp();
        q[m] = (-(u * ks + 0.5 * ks * ks)).exp();
    }
    let mut done = 0;
    loop {
        let take = (max - done).min(LANES);
        out.extend_from_slice(&g[..take]);
        done += take;
        if done == max || g.iter().all(|&v| v < KERNEL_CUTOFF) {
            break;
        }
        for m in 0..LANES {
            g[m] *= q[m];
            q[m] *= c;
        }
    }
}

/// `exp(−(x_j − center)²/(2σ²))` along one grid axis, outward from the node
/// nearest `center` until the factor drops below the cutoff. Returns the
/// first index; the values land in `out`.
fn axis_window(nodes_lo: f64, h: f64, p: usize, center: f64, sigma: f64, out: &mut Vec<f64>) -> usize {
    out.clear();
    let delta = h / sigma;
    let j0 = ((center - nodes_lo) / h).round().clamp(0.0, (p - 1) as f64) as usize;
    let u0 = (nodes_lo + j0 as f64 * h - center) / sigma;
    gauss_run(u0 - delta, -delta, j0, out);
    out.reverse();
    let start = j0 - out.len();
    gauss_run(u0, delta, p - j0, out);
    start
}

/// Values of `Σ_j w_j φ_σ(x − a_j)` at every node of `grid`.
fn kernel_field(atoms: &Atoms, sigma: f64, grid: &TensorGrid) -> Vec<f64> {
    let d = grid.dim();
    let p = grid.points_per_axis();
    let norm = (2.0 * PI * sigma * sigma).powf(-0.5 * d as f64);
    let first: Vec<f64> = (0..d).map(|k| grid.lo()[k] + 0.5 * grid.spacing(k)).collect();
    let mut acc = vec![0.0; grid.len()];
    let mut windows: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut starts = vec![0usize; d];
    for (a, w) in atoms.iter() {
        for k in 0..d {
            starts[k] = axis_window(first[k], grid.spacing(k), p, a[k], sigma, &mut windows[k]);
        }
        match d {
            1 => {
                let dst = &mut acc[starts[0]..starts[0] + windows[0].len()];
                for (o, g) in dst.iter_mut().zip(&windows[0]) {
                    *o += w * g;
                }
            }
            2 => {
                for (i, g1) in windows[0].iter().enumerate() {
                    let wg = w * g1;
                    let row = (starts[0] + i) * p + starts[1];
                    let dst = &mut acc[row..row + windows[1].len()];
                    for (o, g2) in dst.iter_mut().zip(&windows[1]) {
                        *o += wg * g2;
                    }
                }
            }
            _ => {
                for (i, g1) in windows[0].iter().enumerate() {
                    for (j, g2) in windows[1].iter().enumerate() {
                        let wg = w * g1 * g2;
                        let row = ((starts[0] + i) * p + starts[1] + j) * p + starts[2];
                        let dst = &mut acc[row..row + windows[2].len()];
                        for (o, g3) in dst.iter_mut().zip(&windows[2]) {
                            *o += wg * g3;
                        }
                    }
                }
            }
        }
    }
    acc.iter_mut().for_each(|v| *v *= norm);
    acc
}

#[derive(Debug, Clone)]
struct GridLevel {
    grid: TensorGrid,
    rho: Vec<f64>,
    floor: f64,
}

impl GridLevel {
    fn new(spec: &MeasureSpec, sigma: Smoothing, grid: TensorGrid) -> Result<Self> {
        let rho = match spec {
            // same code path as the empirical side, so identical measures cancel exactly
            MeasureSpec::PointCloud { points, weights } => {
                kernel_field(&Atoms::from_cloud(points, weights), sigma.get(), &grid)
            }
            _ => {
                let dens = SmoothedDensity::new(spec, sigma);
                let d = grid.dim();
                (0..grid.len())
                    .into_par_iter()
                    .map_init(|| vec![0.0; d], |x, i| {
                        grid.node_into(i, x);
                        dens.density(x)
                    })
                    .collect()
            }
        };
        let floor = (0..grid.len())
            .filter(|&i| grid.is_boundary(i))
            .map(|i| rho[i])
            .fold(f64::INFINITY, f64::min);
        Ok(Self { grid, rho, floor })
    }

    /// (TV, χ²) by the midpoint rule.
    fn evaluate(&self, atoms: &Atoms, sigma: f64) -> Result<(f64, f64)> {
        let f = kernel_field(atoms, sigma, &self.grid);
        let mut tv = Vec::with_capacity(f.len());
        let mut chi = Vec::with_capacity(f.len());
        for (i, (fi, ri)) in f.iter().zip(&self.rho).enumerate() {
            let diff = fi - ri;
            tv.push(diff.abs());
            let denom = ri.max(self.floor);
            if !(denom >= f64::MIN_POSITIVE) {
                return Err(Error::DensityUnderflow {
                    x: self.grid.node(i),
                });
            }
            chi.push(diff * diff / denom);
        }
        let vol = self.grid.cell_volume();
        Ok((0.5 * pairwise_sum(&tv) * vol, pairwise_sum(&chi) * vol))
    }
}

#[derive(Debug, Clone)]
struct ImportanceLevel {
    points: Vec<f64>,
    q: Vec<f64>,
    rho: Vec<f64>,
    inside: Vec<bool>,
    floor: f64,
    method: crate::integrate::Method,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Grid { fine: GridLevel, coarse: GridLevel },
    Importance(ImportanceLevel),
}

/// Precomputed reference-side quantities for evaluating divergences of many
/// samples against one `(P, σ, rule)`.
#[derive(Debug, Clone)]
pub struct DivergencePlan {
    spec: MeasureSpec,
    sigma: Smoothing,
    kind: PlanKind,
}

impl DivergencePlan {
    pub fn new(spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<Self> {
        let kind = match rule {
            Rule::Grid(grid) => {
                grid.check_dim()?;
                if grid.dim() != spec.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: spec.dim(),
                        got: grid.dim(),
                    });
                }
                PlanKind::Grid {
                    fine: GridLevel::new(spec, sigma, grid.clone())?,
                    coarse: GridLevel::new(spec, sigma, grid.coarsened())?,
                }
            }
            Rule::Importance(ir) => {
                let d = spec.dim();
                if ir.proposal().dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: ir.proposal().dim(),
                    });
                }
                let qd = ir.density();
                let rho_d = SmoothedDensity::new(spec, sigma);
                let points = ir.draw_points();
                let q: Vec<f64> = points.par_chunks_exact(d).map(|x| qd.density(x)).collect();
                let rho: Vec<f64> = points.par_chunks_exact(d).map(|x| rho_d.density(x)).collect();
                let (lo, hi) = choose_box(spec, sigma, DEFAULT_EPS)?;
                let inside = points
                    .chunks_exact(d)
                    .map(|x| x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h))
                    .collect();
                let floor = box_corner_floor(&rho_d, &lo, &hi);
                PlanKind::Importance(ImportanceLevel {
                    points,
                    q,
                    rho,
                    inside,
                    floor,
                    method: ir.method(),
                })
            }
        };
        Ok(Self {
            spec: spec.clone(),
            sigma,
            kind,
        })
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn sigma(&self) -> Smoothing {
        self.sigma
    }

    /// `(P * φ_σ)` at the fine grid nodes, when the plan is grid based.
    pub fn grid_reference(&self) -> Option<(&TensorGrid, &[f64])> {
        match &self.kind {
            PlanKind::Grid { fine, .. } => Some((&fine.grid, &fine.rho)),
            PlanKind::Importance(_) => None,
        }
    }

    /// Smooth TV and χ² of `sample` against the plan's reference.
    pub fn evaluate(&self, sample: &Sample) -> Result<DivergencePair> {
        if sample.dim() != self.spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dim(),
                got: sample.dim(),
            });
        }
        let atoms = Atoms::from_sample(sample);
        let sigma = self.sigma.get();
        let n = sample.n();
        let wrap = |value: f64, err: f64| DivergenceResult {
            value,
            integration_error: err,
            n,
            sigma,
        };
        match &self.kind {
            PlanKind::Grid { fine, coarse } => {
                let (tv_f, chi_f) = fine.evaluate(&atoms, sigma)?;
                let (tv_c, chi_c) = coarse.evaluate(&atoms, sigma)?;
                Ok(DivergencePair {
                    tv: wrap(tv_f, (tv_f - tv_c).abs()),
                    chi2: wrap(chi_f, (chi_f - chi_c).abs()),
                })
            }
            PlanKind::Importance(lvl) => {
                let d = self.spec.dim();
                let pairs: Vec<(f64, f64)> = lvl
                    .points
                    .par_chunks_exact(d)
                    .enumerate()
                    .map(|(i, x)| {
                        let diff = atoms.density(sigma, x) - lvl.rho[i];
                        let tv = 0.5 * diff.abs() / lvl.q[i];
                        let chi = if lvl.inside[i] {
                            diff * diff / lvl.rho[i].max(lvl.floor) / lvl.q[i]
                        } else {
                            0.0
                        };
                        (tv, chi)
                    })
                    .collect();
                if let Some(i) = (0..pairs.len())
                    .find(|&i| lvl.inside[i] && !(lvl.rho[i].max(lvl.floor) >= f64::MIN_POSITIVE))
                {
                    return Err(Error::DensityUnderflow {
                        x: lvl.points[i * d..(i + 1) * d].to_vec(),
                    });
                }
                let (tv, chi): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let tv = ratio_estimate(&tv, lvl.method.clone())?;
                let chi = ratio_estimate(&chi, lvl.method.clone())?;
                Ok(DivergencePair {
                    tv: wrap(tv.value, tv.error),
                    chi2: wrap(chi.value, chi.error),
                })
            }
        }
    }
}

/// Smallest smoothed density over the corners of the box (all-axis extremes).
fn box_corner_floor(rho: &SmoothedDensity, lo: &[f64], hi: &[f64]) -> f64 {
    let d = lo.len();
    if d > 12 {
        return 0.0;
    }
    let mut x = vec![0.0; d];
    (0..1usize << d)
        .map(|mask| {
            for k in 0..d {
                x[k] = if mask >> k & 1 == 1 { hi[k] } else { lo[k] };
            }
            rho.density(&x)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `(P_n * φ_σ)(x) = n⁻¹ Σ φ_σ(x − X_i)`.
pub fn empirical_smoothed_density(sample: &Sample, sigma: Smoothing, x: &[f64]) -> Result<f64> {
    if x.len() != sample.dim() {
        return Err(Error::DimensionMismatch {
            expected: sample.dim(),
            got: x.len(),
        });
    }
    Ok(Atoms::from_sample(sample).density(sigma.get(), x))
}

/// Smooth TV distance `δ_TV(P_n * N_σ, P * N_σ)`.
pub fn smooth_tv(sample: &Sample, spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<DivergenceResult> {
    Ok(DivergencePlan::new(spec, sigma, rule)?.evaluate(sample)?.tv)
}

/// Smooth χ²-divergence `χ²(P_n * N_σ ‖ P * N_σ)`.
pub fn smooth_chi2(sample: &Sample, spec: &MeasureSpec, sigma: Smoothing, rule: &Rule) -> Result<DivergenceResult> {
    Ok(DivergencePlan::new(spec, sigma, rule)?.evaluate(sample)?.chi2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{gaussian_density, sample, KernelMoments};

    fn s1() -> Smoothing {
        Smoothing::new(1.0).unwrap()
    }

    #[test]
    fn axis_window_matches_direct_exp() {
        let (lo, h, p) = (-5.0 + 0.005, 0.01, 1000);
        let mut w = Vec::new();
        for center in [-7.0, -0.0031, 0.37, 4.999, 12.0] {
            let start = axis_window(lo, h, p, center, 0.8, &mut w);
            for j in 0..p {
                let x = lo + j as f64 * h;
                let want = (-0.5 * ((x - center) / 0.8).powi(2)).exp();
                let got = if j >= start && j < start + w.len() { w[j - start] } else { 0.0 };
                assert!(
                    (got - want).abs() <= 1e-12 * want + KERNEL_CUTOFF,
                    "center {center} j {j}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn kernel_field_matches_direct_sum_2d() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0, 0.5], 0.3).unwrap();
        let smp = sample(&spec, 40, 2).unwrap();
        let atoms = Atoms::from_sample(&smp);
        let grid = TensorGrid::new(vec![-4.0, -3.0], vec![4.0, 5.0], 31).unwrap();
        let field = kernel_field(&atoms, 0.7, &grid);
        for i in (0..grid.len()).step_by(37) {
            let x = grid.node(i);
            let want = atoms.density(0.7, &x);
            assert!((field[i] - want).abs() < 1e-12 * want.max(1e-300) + 1e-17, "{i}");
        }
    }

    #[test]
    fn empirical_density_examples() {
        let one = Sample::from_rows(&[vec![0.0]]).unwrap();
        for x in [-1.5, 0.0, 2.0] {
            let v = empirical_smoothed_density(&one, s1(), &[x]).unwrap();
            assert!((v - gaussian_density(&[x], s1())).abs() < 1e-16);
        }
        let a = 1.3;
        let pair = Sample::from_rows(&[vec![-a], vec![a]]).unwrap();
        let v = empirical_smoothed_density(&pair, s1(), &[0.0]).unwrap();
        assert!((v - gaussian_density(&[a], s1())).abs() < 1e-16);
    }

    #[test]
    fn empirical_density_clt() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let km = KernelMoments::new(&spec, s1());
        let n = 1000;
        let smp = sample(&spec, n, 42).unwrap();
        let v = empirical_smoothed_density(&smp, s1(), &[0.0]).unwrap();
        let sd = (km.variance(&[0.0]).unwrap() / n as f64).sqrt();
        assert!((v - km.rho(&[0.0])).abs() < 4.0 * sd);
    }

    #[test]
    fn identical_measures_give_zero() {
        let spec = MeasureSpec::point_mass(vec![0.0]).unwrap();
        let smp = sample(&spec, 10, 0).unwrap();
        let rule = Rule::grid(&spec, s1(), 500, 1e-8).unwrap();
        let tv = smooth_tv(&smp, &spec, s1(), &rule).unwrap();
        let chi = smooth_chi2(&smp, &spec, s1(), &rule).unwrap();
        assert_eq!(tv.value, 0.0);
        assert_eq!(chi.value, 0.0);
        let rule = Rule::importance(&spec, s1(), 5000, 1).unwrap();
        assert_eq!(smooth_tv(&smp, &spec, s1(), &rule).unwrap().value, 0.0);
    }

    #[test]
    fn grid_and_importance_agree() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let smp = sample(&spec, 100, 42).unwrap();
        let grid = DivergencePlan::new(&spec, s1(), &Rule::grid(&spec, s1(), 2000, 1e-8).unwrap())
            .unwrap()
            .evaluate(&smp)
            .unwrap();
        let imp = DivergencePlan::new(&spec, s1(), &Rule::importance(&spec, s1(), 200_000, 9).unwrap())
            .unwrap()
            .evaluate(&smp)
            .unwrap();
        for (g, i) in [(&grid.tv, &imp.tv), (&grid.chi2, &imp.chi2)] {
            let tol = 3.0 * (g.integration_error.powi(2) + i.integration_error.powi(2)).sqrt();
            assert!((g.value - i.value).abs() < tol, "{g:?} vs {i:?}");
        }
    }

    #[test]
    fn translation_invariance() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.5).unwrap();
        let smp = sample(&spec, 60, 5).unwrap();
        let shift = [3.7];
        let moved = spec.translated(&shift).unwrap();
        let a = smooth_tv(&smp, &spec, s1(), &Rule::grid(&spec, s1(), 1500, 1e-8).unwrap()).unwrap();
        let b = smooth_tv(
            &smp.translated(&shift),
            &moved,
            s1(),
            &Rule::grid(&moved, s1(), 1500, 1e-8).unwrap(),
        )
        .unwrap();
        let tol = 2.0 * (a.integration_error + b.integration_error) + 1e-12;
        assert!((a.value - b.value).abs() <= tol, "{a:?} {b:?}");
    }

    #[test]
    fn chi2_dominates_tv_and_ranges() {
        let specs = [
            MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap(),
            MeasureSpec::uniform_box(vec![0.0], vec![1.0]).unwrap(),
            MeasureSpec::point_cloud(vec![vec![-1.0], vec![1.0]], vec![0.5, 0.5]).unwrap(),
            MeasureSpec::isotropic_gaussian(vec![0.0, 0.0], 0.5).unwrap(),
        ];
        for (k, spec) in specs.iter().enumerate() {
            let rule = Rule::default_for(spec, s1()).unwrap();
            let plan = DivergencePlan::new(spec, s1(), &rule).unwrap();
            for n in [5, 50] {
                let smp = sample(spec, n, k as u64).unwrap();
                let r = plan.evaluate(&smp).unwrap();
                assert!(r.tv.value >= -r.tv.integration_error && r.tv.value <= 1.0 + r.tv.integration_error);
                assert!(r.chi2.value >= -r.chi2.integration_error);
                let slack = r.chi2.integration_error + 8.0 * r.tv.value * r.tv.integration_error + 1e-12;
                assert!(r.chi2.value + slack >= 4.0 * r.tv.value.powi(2), "{spec:?} n={n}: {r:?}");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 1.0).unwrap();
        let smp = Sample::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let rule = Rule::default_for(&spec, s1()).unwrap();
        assert!(matches!(
            smooth_tv(&smp, &spec, s1(), &rule),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
