use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::spec::MeasureSpec;
use crate::error::{config_err, Result};
use crate::seed;

/// `n` observations in `R^d`, stored row-major, with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    points: Vec<f64>,
    dim: usize,
    seed: u64,
    source: String,
}

impl Sample {
    /// Wraps explicit points (seed recorded as 0, source "explicit").
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(config_err("sample rows must be non-empty and of equal length"));
        }
        Ok(Self {
            points: rows.concat(),
            dim,
            seed: 0,
            source: "explicit".into(),
        })
    }

    pub fn n(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for p in self.iter() {
            for (m, v) in mu.iter_mut().zip(p) {
                *m += v;
            }
        }
        let n = self.n() as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }

    pub fn translated(&self, by: &[f64]) -> Self {
        let mut out = self.clone();
        for p in out.points.chunks_exact_mut(self.dim) {
            for (v, b) in p.iter_mut().zip(by) {
                *v += b;
            }
        }
        out
    }

    /// The empirical measure as distinct points with multiplicity weights.
    ///
    /// Identical observations collapse to one atom, so a sample sitting on the
    /// atoms of a point cloud reproduces that cloud's weights exactly.
    pub fn empirical_measure(&self) -> MeasureSpec {
        let mut rows: Vec<&[f64]> = self.iter().collect();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n = self.n() as f64;
        let mut points: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for r in rows {
            match points.last() {
                Some(last) if last.as_slice() == r => *counts.last_mut().unwrap() += 1,
                _ => {
                    points.push(r.to_vec());
                    counts.push(1);
                }
            }
        }
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        MeasureSpec::PointCloud { points, weights }
    }
}

/// Reusable draw machinery for one spec.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: MeasureSpec,
    factors: Vec<DMatrix<f64>>,
    cumulative: Vec<f64>,
}

impl Sampler {
    pub fn new(spec: &MeasureSpec) -> Self {
        let (factors, weights) = match spec {
            MeasureSpec::Gaussian(g) => (vec![g.sqrt_factor()], vec![1.0]),
            MeasureSpec::GaussianMixture {
                weights,
                components,
            } => (
                components.iter().map(|c| c.sqrt_factor()).collect(),
                weights.clone(),
            ),
            MeasureSpec::PointCloud { weights, .. } => (Vec::new(), weights.clone()),
            MeasureSpec::UniformBox { .. } => (Vec::new(), vec![1.0]),
        };
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            spec: spec.clone(),
            factors,
            cumulative,
        }
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> usize {
        if self.cumulative.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    /// Writes one draw into `out`.
    pub fn draw_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let d = out.len();
        match &self.spec {
            MeasureSpec::Gaussian(g) => gaussian_draw(rng, g.mean(), &self.factors[0], out),
            MeasureSpec::GaussianMixture { components, .. } => {
                let k = self.pick(rng);
                gaussian_draw(rng, components[k].mean(), &self.factors[k], out)
            }
            MeasureSpec::UniformBox { lo, hi } => {
                for k in 0..d {
                    out[k] = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
                }
            }
            MeasureSpec::PointCloud { points, .. } => {
                let k = self.pick(rng);
                out.copy_from_slice(&points[k]);
            }
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let d = self.spec.dim();
        let mut pts = vec![0.0; n * d];
        for row in pts.chunks_exact_mut(d) {
            self.draw_into(rng, row);
        }
        pts
    }

    pub fn sample_with<R: Rng>(&self, rng: &mut R, n: usize, seed: u64) -> Result<Sample> {
        if n == 0 {
            return Err(config_err("sample size must be at least 1"));
        }
        Ok(Sample {
            points: self.draw(rng, n),
            dim: self.spec.dim(),
            seed,
            source: self.spec.describe(),
        })
    }
}

fn gaussian_draw<R: Rng>(rng: &mut R, mean: &[f64], factor: &DMatrix<f64>, out: &mut [f64]) {
    let d = mean.len();
    let mut z = [0.0f64; 8];
    let mut heap;
    let z: &mut [f64] = if d <= 8 {
        &mut z[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..d {
        out[i] = mean[i] + (0..d).map(|j| factor[(i, j)] * z[j]).sum::<f64>();
    }
}

/// `n` i.i.d. draws from `spec`, deterministic in `(spec, n, seed)`.
pub fn sample(spec: &MeasureSpec, n: usize, seed: u64) -> Result<Sample> {
    let mut rng = seed::Rng::seed_from_u64(seed);
    Sampler::new(spec).sample_with(&mut rng, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_sample_is_constant() {
        let spec = MeasureSpec::point_mass(vec![0.0]).unwrap();
        let s = sample(&spec, 5, 1).unwrap();
        assert!(s.iter().all(|p| p == [0.0]));
    }

    #[test]
    fn gaussian_sample_mean() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0, 0.0], 1.0).unwrap();
        let n = 100_000;
        let s = sample(&spec, n, 7).unwrap();
        let tol = 4.0 / (n as f64).sqrt();
        for m in s.mean() {
            assert!(m.abs() < tol, "{m}");
        }
    }

    #[test]
    fn uniform_sample_mean() {
        let spec = MeasureSpec::uniform_box(vec![0.0], vec![1.0]).unwrap();
        let n = 100_000;
        let s = sample(&spec, n, 11).unwrap();
        let tol = 4.0 * (1.0 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((s.mean()[0] - 0.5).abs() < tol);
        assert!(s.iter().all(|p| (0.0..1.0).contains(&p[0])));
    }

    #[test]
    fn mixture_and_cloud_moments() {
        let c1 = super::super::GaussianSpec::isotropic(vec![-2.0], 0.5).unwrap();
        let c2 = super::super::GaussianSpec::isotropic(vec![1.0], 1.5).unwrap();
        let mix = MeasureSpec::mixture(vec![0.3, 0.7], vec![c1, c2]).unwrap();
        let cloud = MeasureSpec::point_cloud(vec![vec![-1.0], vec![2.0]], vec![0.25, 0.75]).unwrap();
        let n = 200_000;
        for spec in [mix, cloud] {
            let s = sample(&spec, n, 3).unwrap();
            let sd = spec.marginal_variances()[0].sqrt();
            assert!((s.mean()[0] - spec.mean()[0]).abs() < 4.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn reproducible() {
        let spec = MeasureSpec::isotropic_gaussian(vec![1.0, -1.0], 2.0).unwrap();
        assert_eq!(sample(&spec, 50, 9).unwrap(), sample(&spec, 50, 9).unwrap());
        assert_ne!(sample(&spec, 50, 9).unwrap(), sample(&spec, 50, 10).unwrap());
        assert!(sample(&spec, 0, 9).is_err());
    }

    #[test]
    fn empirical_measure_collapses_ties() {
        let s = Sample::from_rows(&[vec![1.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        match s.empirical_measure() {
            MeasureSpec::PointCloud { points, weights } => {
                assert_eq!(points, vec![vec![0.0], vec![1.0]]);
                assert_eq!(weights, vec![0.25, 0.75]);
            }
            _ => unreachable!(),
        }
    }
}
