//! Simulation of the limiting Gaussian process `B` (centered, covariance
//! `Cov_P(φ_σ(x−·), φ_σ(y−·))`) and of the two limit functionals
//!
//! ```text
//! TV:  ½ ∫ |B(x)| dx        χ²:  ∫ B(x)² / ρ(x) dx
//! ```
//!
//! Two constructions are provided: a covariance factorization on a
//! quadrature grid (`d ≤ 3`), and a multiplier representation over anchor
//! draws from `P`, usable at any point set.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{pairwise_sum, TensorGrid};
use crate::measure::{KernelMoments, MeasureSpec, Sampler, Smoothing, SmoothedDensity};
use crate::seed::{derive_seed, rng_from, stream};

/// Starting jitter, relative to the largest diagonal entry.
pub const JITTER_START: f64 = 1e-12;
/// Largest jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Draws per batched matrix product.
const BATCH: usize = 256;

/// Discretized limit process on a tensor grid.
///
/// The factorization is done on `D^{-1/2} K D^{-1/2}` with `D = diag(ρ)`, so
/// `factor · factorᵀ = K + jitter · max_j(K_jj/ρ_j) · D`. Jitter then scales
/// with the density and cannot swamp the `B²/ρ` functional in the tails.
#[derive(Debug, Clone)]
pub struct GPModel {
    grid: TensorGrid,
    rho: Vec<f64>,
    k: DMatrix<f64>,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GPModel {
    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Relative jitter the factorization accepted (0 for a zero kernel).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn nodes(&self) -> usize {
        self.rho.len()
    }

    /// `E ½∫|B|` on the grid, `(2π)^{-1/2} Σ w √K_jj`.
    pub fn expected_tv(&self) -> f64 {
        let w = self.grid.cell_volume();
        let terms: Vec<f64> = (0..self.nodes()).map(|j| self.k[(j, j)].max(0.0).sqrt()).collect();
        (2.0 * PI).powf(-0.5) * w * pairwise_sum(&terms)
    }

    /// `E ∫B²/ρ` on the grid, `Σ w K_jj/ρ_j`.
    pub fn expected_chi2(&self) -> f64 {
        let w = self.grid.cell_volume();
        let terms: Vec<f64> = (0..self.nodes()).map(|j| self.k[(j, j)] / self.rho[j]).collect();
        w * pairwise_sum(&terms)
    }

    fn tv_of(&self, field: &[f64]) -> f64 {
        let abs: Vec<f64> = field.iter().map(|b| b.abs()).collect();
        0.5 * self.grid.cell_volume() * pairwise_sum(&abs)
    }

    fn chi2_of(&self, field: &[f64]) -> f64 {
        let sq: Vec<f64> = field.iter().zip(&self.rho).map(|(b, r)| b * b / r).collect();
        self.grid.cell_volume() * pairwise_sum(&sq)
    }
}

/// Assembles `K` over the grid nodes and factors it, starting from relative
/// jitter `jitter` and doubling up to [`JITTER_MAX`].
pub fn build_gp(spec: &MeasureSpec, sigma: Smoothing, grid: &TensorGrid, jitter: f64) -> Result<GPModel> {
    grid.check_dim()?;
    if grid.dim() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: grid.dim(),
        });
    }
    if !(jitter >= 0.0 && jitter.is_finite()) {
        return Err(crate::error::config_err(format!("jitter must be nonnegative (got {jitter})")));
    }
    let km = KernelMoments::new(spec, sigma);
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.node(i)).collect();
    let m = nodes.len();
    let rho: Vec<f64> = nodes.iter().map(|x| km.rho(x)).collect();
    if let Some(j) = rho.iter().position(|&r| !(r >= f64::MIN_POSITIVE)) {
        return Err(Error::DensityUnderflow { x: nodes[j].clone() });
    }
    let diag: Vec<f64> = nodes.iter().map(|x| km.variance(x)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| if i == j { diag[i] } else { km.covariance(&nodes[i], &nodes[j]) })
                .collect()
        })
        .collect();
    let mut k = DMatrix::zeros(m, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let scale: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    let s = DMatrix::from_fn(m, m, |i, j| k[(i, j)] / (scale[i] * scale[j]));
    let max_diag = (0..m).map(|j| s[(j, j)]).fold(0.0, f64::max);
    if max_diag == 0.0 {
        return Ok(GPModel {
            grid: grid.clone(),
            rho,
            factor: DMatrix::zeros(m, m),
            k,
            jitter: 0.0,
        });
    }
    let mut rel = jitter;
    loop {
        let mut trial = s.clone();
        for j in 0..m {
            trial[(j, j)] += rel * max_diag;
        }
        if let Some(ch) = Cholesky::new(trial) {
            let mut factor = ch.unpack();
            for i in 0..m {
                for j in 0..=i {
                    factor[(i, j)] *= scale[i];
                }
            }
            return Ok(GPModel {
                grid: grid.clone(),
                rho,
                k,
                factor,
                jitter: rel,
            });
        }
        rel = if rel == 0.0 { JITTER_START } else { rel * 2.0 };
        if rel > JITTER_MAX * (1.0 + 1e-12) {
            return Err(Error::Factorization { jitter: JITTER_MAX });
        }
    }
}

fn normals(seed: u64, out: &mut [f64]) {
    let mut rng = rng_from(seed, &[stream::LIMIT]);
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// One field realization `factor · z` on the grid nodes.
pub fn gp_draw(model: &GPModel, seed: u64) -> Vec<f64> {
    let mut z = vec![0.0; model.nodes()];
    normals(seed, &mut z);
    (&model.factor * DMatrix::from_vec(model.nodes(), 1, z)).data.into()
}

/// `½ Σ_j w |B_j|` for one draw.
pub fn limit_tv_draw(model: &GPModel, seed: u64) -> f64 {
    model.tv_of(&gp_draw(model, seed))
}

/// `Σ_j w B_j² / ρ_j` for one draw.
pub fn limit_chi2_draw(model: &GPModel, seed: u64) -> f64 {
    model.chi2_of(&gp_draw(model, seed))
}

/// Paired draws of both limit functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSamples {
    pub tv: Vec<f64>,
    pub chi2: Vec<f64>,
}

/// `count` draws of both functionals; draw `i` equals the single-draw
/// functions at seed `derive_seed(seed, [i])`.
pub fn limit_samples(model: &GPModel, count: usize, seed: u64) -> LimitSamples {
    let m = model.nodes();
    let chunks: Vec<(usize, usize)> = (0..count).step_by(BATCH).map(|s| (s, (s + BATCH).min(count))).collect();
    let parts: Vec<Vec<(f64, f64)>> = chunks
        .par_iter()
        .map(|&(a, b)| {
            let mut z = DMatrix::zeros(m, b - a);
            for (c, i) in (a..b).enumerate() {
                normals(derive_seed(seed, &[i as u64]), z.column_mut(c).as_mut_slice());
            }
            let fields = &model.factor * z;
            fields
                .column_iter()
                .map(|col| {
                    let f = col.as_slice();
                    (model.tv_of(f), model.chi2_of(f))
                })
                .collect()
        })
        .collect();
    let (tv, chi2) = parts.into_iter().flatten().unzip();
    LimitSamples { tv, chi2 }
}

/// Multiplier surrogate `m^{-1/2} Σ g_i (φ_σ(x − a_i) − ρ(x))` over anchors
/// `a_i ~ P`.
#[derive(Debug, Clone)]
pub struct MultiplierModel {
    anchors: Vec<f64>,
    dim: usize,
    sigma: Smoothing,
    rho: SmoothedDensity,
}

impl MultiplierModel {
    /// Draws `m` anchors from `spec` under `seed`.
    pub fn new(spec: &MeasureSpec, sigma: Smoothing, m: usize, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(crate::error::config_err("multiplier model needs at least one anchor"));
        }
        let mut rng = rng_from(seed, &[stream::MULTIPLIER]);
        Ok(Self {
            anchors: Sampler::new(spec).draw(&mut rng, m),
            dim: spec.dim(),
            sigma,
            rho: SmoothedDensity::new(spec, sigma),
        })
    }

    /// Uses the given anchors (row-major).
    pub fn with_anchors(spec: &MeasureSpec, sigma: Smoothing, anchors: Vec<f64>) -> Result<Self> {
        let d = spec.dim();
        if anchors.is_empty() || anchors.len() % d != 0 {
            return Err(crate::error::config_err("anchors must be a non-empty m×d array"));
        }
        Ok(Self {
            anchors,
            dim: d,
            sigma,
            rho: SmoothedDensity::new(spec, sigma),
        })
    }

    pub fn m(&self) -> usize {
        self.anchors.len() / self.dim
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// Centered features at the points of `xs` (row-major), scaled by `m^{-1/2}`.
    pub fn features(&self, xs: &[f64]) -> Result<MultiplierField> {
        let d = self.dim;
        if xs.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: xs.len() % d,
            });
        }
        let nx = xs.len() / d;
        let m = self.m();
        let s2 = self.sigma.get().powi(2);
        let norm = (2.0 * PI * s2).powf(-0.5 * d as f64);
        let rho: Vec<f64> = xs.chunks_exact(d).map(|x| self.rho.density(x)).collect();
        let scale = (m as f64).powf(-0.5);
        let cols: Vec<Vec<f64>> = xs
            .par_chunks_exact(d)
            .zip(&rho)
            .map(|(x, r)| {
                self.anchors
                    .chunks_exact(d)
                    .map(|a| {
                        let r2: f64 = a.iter().zip(x).map(|(p, q)| (q - p) * (q - p)).sum();
                        scale * (norm * (-0.5 * r2 / s2).exp() - r)
                    })
                    .collect()
            })
            .collect();
        Ok(MultiplierField {
            features: DMatrix::from_vec(m, nx, cols.concat()),
        })
    }
}

/// Precomputed multiplier features at a fixed point set.
#[derive(Debug, Clone)]
pub struct MultiplierField {
    features: DMatrix<f64>,
}

impl MultiplierField {
    pub fn points(&self) -> usize {
        self.features.ncols()
    }

    /// One field realization; multipliers from `seed`.
    pub fn draw(&self, seed: u64) -> Vec<f64> {
        let m = self.features.nrows();
        let mut g = vec![0.0; m];
        let mut rng = rng_from(seed, &[stream::MULTIPLIER]);
        for v in g.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        (self.features.transpose() * DMatrix::from_vec(m, 1, g)).data.into()
    }

    /// `count` realizations; realization `i` equals `draw(derive_seed(seed, [i]))`.
    pub fn draws(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = self.features.nrows();
        let ft = self.features.transpose();
        let chunks: Vec<(usize, usize)> = (0..count).step_by(BATCH).map(|s| (s, (s + BATCH).min(count))).collect();
        chunks
            .par_iter()
            .flat_map_iter(|&(a, b)| {
                let mut g = DMatrix::zeros(m, b - a);
                for (c, i) in (a..b).enumerate() {
                    let mut rng = rng_from(derive_seed(seed, &[i as u64]), &[stream::MULTIPLIER]);
                    for v in g.column_mut(c).iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                }
                let out = &ft * g;
                out.column_iter().map(|c| c.as_slice().to_vec()).collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Multiplier field at the points `xs` with multipliers from `seed`.
pub fn multiplier_draw(mm: &MultiplierModel, xs: &[f64], seed: u64) -> Result<Vec<f64>> {
    Ok(mm.features(xs)?.draw(seed))
}

/// Both limit functionals of `count` multiplier draws at the nodes of `model`'s grid.
pub fn multiplier_limit_samples(mm: &MultiplierModel, model: &GPModel, count: usize, seed: u64) -> Result<LimitSamples> {
    let field = mm.features(&model.grid.nodes())?;
    let (tv, chi2) = field
        .draws(count, seed)
        .iter()
        .map(|f| (model.tv_of(f), model.chi2_of(f)))
        .unzip();
    Ok(LimitSamples { tv, chi2 })
}

/// Metadata line written at the top of a limit-sample file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitHeader {
    pub functional: String,
    pub seed: u64,
    pub grid: TensorGrid,
    pub jitter: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Writes a single-column text file: one `# {json header}` line, then one value per line.
pub fn write_limit_sample(path: &Path, header: &LimitHeader, values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {}", serde_json::to_string(header).map_err(|e| Error::Numerical(e.to_string()))?)?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads back a file produced by [`write_limit_sample`].
pub fn read_limit_sample(path: &Path) -> Result<(LimitHeader, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .ok_or_else(|| crate::error::config_err("limit sample file lacks a header"))?;
    let header: LimitHeader = serde_json::from_str(head).map_err(|e| crate::error::config_err(e.to_string()))?;
    let values = lines
        .map(|l| l.trim().parse::<f64>().map_err(|e| crate::error::config_err(e.to_string())))
        .collect::<Result<_>>()?;
    Ok((header, values))
}
