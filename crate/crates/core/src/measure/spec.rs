use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

const WEIGHT_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// A Gaussian component `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(config_err("gaussian mean must be non-empty"));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(config_err(format!(
                "covariance must be {d}x{d}, got {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(config_err("gaussian parameters must be finite"));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(config_err("covariance must be symmetric"));
                }
            }
        }
        let spec = Self { mean, covariance };
        let eig = spec.eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        if eig.iter().any(|&l| l < -PSD_TOL * max.max(1.0)) {
            return Err(config_err("covariance must be positive semidefinite"));
        }
        Ok(spec)
    }

    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Eigenvalues of the covariance, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.covariance.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0).max(0.0)
    }

    /// `Some(s2)` when the covariance is `s2 * I`.
    pub fn isotropic_variance(&self) -> Option<f64> {
        let d = self.dim();
        let s2 = self.covariance[(0, 0)];
        let tol = 1e-14 * s2.abs().max(1.0);
        for i in 0..d {
            for j in 0..d {
                let want = if i == j { s2 } else { 0.0 };
                if (self.covariance[(i, j)] - want).abs() > tol {
                    return None;
                }
            }
        }
        Some(s2)
    }

    /// Symmetric square root `V sqrt(Λ⁺)`, usable for sampling even when singular.
    pub(crate) fn sqrt_factor(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.covariance.clone());
        let mut v = eig.eigenvectors;
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            let s = l.max(0.0).sqrt();
            v.column_mut(k).scale_mut(s);
        }
        v
    }
}

/// A reference probability measure with closed-form Gaussian smoothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub enum MeasureSpec {
    Gaussian(GaussianSpec),
    GaussianMixture {
        weights: Vec<f64>,
        components: Vec<GaussianSpec>,
    },
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    PointCloud {
        /// One row per point.
        points: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

fn check_weights(weights: &[f64], what: &str) -> Result<()> {
    if weights.is_empty() {
        return Err(config_err(format!("{what} weights must be non-empty")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(config_err(format!("{what} weights must be nonnegative")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(config_err(format!(
            "{what} weights must sum to 1 (got {total})"
        )));
    }
    Ok(())
}

impl MeasureSpec {
    pub fn gaussian(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Ok(Self::Gaussian(GaussianSpec::new(mean, covariance)?))
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic_gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Ok(Self::Gaussian(GaussianSpec::isotropic(mean, variance)?))
    }

    pub fn mixture(weights: Vec<f64>, components: Vec<GaussianSpec>) -> Result<Self> {
        check_weights(&weights, "mixture")?;
        if weights.len() != components.len() {
            return Err(config_err("mixture needs one weight per component"));
        }
        let d = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.dim(),
            });
        }
        Ok(Self::GaussianMixture {
            weights,
            components,
        })
    }

    pub fn uniform_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(config_err("box bounds must be non-empty and equal length"));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(config_err("box requires finite lo < hi componentwise"));
        }
        Ok(Self::UniformBox { lo, hi })
    }

    pub fn point_cloud(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        check_weights(&weights, "point cloud")?;
        if points.len() != weights.len() {
            return Err(config_err("point cloud needs one weight per point"));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(config_err("points must be non-empty vectors"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(config_err("points must be finite"));
        }
        Ok(Self::PointCloud { points, weights })
    }

    /// Dirac mass at `at`.
    pub fn point_mass(at: Vec<f64>) -> Result<Self> {
        Self::point_cloud(vec![at], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.dim(),
            Self::GaussianMixture { components, .. } => components[0].dim(),
            Self::UniformBox { lo, .. } => lo.len(),
            Self::PointCloud { points, .. } => points[0].len(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Gaussian(_) => "gaussian",
            Self::GaussianMixture { .. } => "gaussian_mixture",
            Self::UniformBox { .. } => "uniform_box",
            Self::PointCloud { .. } => "point_cloud",
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        match self {
            Self::Gaussian(g) => g.mean.clone(),
            Self::GaussianMixture {
                weights,
                components,
            } => weighted_mean(d, weights, components.iter().map(|c| c.mean.as_slice())),
            Self::UniformBox { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            Self::PointCloud { points, weights } => {
                weighted_mean(d, weights, points.iter().map(|p| p.as_slice()))
            }
        }
    }

    /// Marginal variances per axis.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let d = self.dim();
        let mu = self.mean();
        match self {
            Self::Gaussian(g) => (0..d).map(|k| g.covariance[(k, k)]).collect(),
            Self::GaussianMixture {
                weights,
                components,
            } => (0..d)
                .map(|k| {
                    weights
                        .iter()
                        .zip(components)
                        .map(|(w, c)| w * (c.covariance[(k, k)] + (c.mean[k] - mu[k]).powi(2)))
                        .sum()
                })
                .collect(),
            Self::UniformBox { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| (h - l).powi(2) / 12.0)
                .collect(),
            Self::PointCloud { points, weights } => (0..d)
                .map(|k| {
                    weights
                        .iter()
                        .zip(points)
                        .map(|(w, p)| w * (p[k] - mu[k]).powi(2))
                        .sum()
                })
                .collect(),
        }
    }

    /// Radius of the support around the mean, for bounded families.
    pub fn support_radius(&self) -> Option<f64> {
        let mu = self.mean();
        match self {
            Self::UniformBox { lo, hi } => Some(
                0.5 * lo
                    .iter()
                    .zip(hi)
                    .map(|(l, h)| (h - l).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
            Self::PointCloud { points, .. } => Some(
                points
                    .iter()
                    .map(|p| dist(p, &mu))
                    .fold(0.0_f64, f64::max),
            ),
            _ => None,
        }
    }

    /// A valid sub-Gaussian parameter β, not necessarily the smallest one.
    ///
    /// Gaussian: `sqrt(λ_max)`. Bounded families: support radius around the
    /// mean. Mixtures: largest component β plus the spread of component means
    /// around the mixture mean.
    pub fn subgaussian_parameter(&self) -> f64 {
        match self {
            Self::Gaussian(g) => g.lambda_max().sqrt(),
            Self::GaussianMixture { components, .. } => {
                let mu = self.mean();
                let comp = components
                    .iter()
                    .map(|c| c.lambda_max().sqrt())
                    .fold(0.0_f64, f64::max);
                let spread = components
                    .iter()
                    .map(|c| dist(&c.mean, &mu))
                    .fold(0.0_f64, f64::max);
                comp + spread
            }
            Self::UniformBox { .. } | Self::PointCloud { .. } => {
                self.support_radius().unwrap_or(0.0)
            }
        }
    }

    /// The same measure shifted by `by`.
    pub fn translated(&self, by: &[f64]) -> Result<Self> {
        if by.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: by.len(),
            });
        }
        let shift = |v: &[f64]| v.iter().zip(by).map(|(a, b)| a + b).collect::<Vec<_>>();
        Ok(match self {
            Self::Gaussian(g) => Self::Gaussian(GaussianSpec {
                mean: shift(&g.mean),
                covariance: g.covariance.clone(),
            }),
            Self::GaussianMixture {
                weights,
                components,
            } => Self::GaussianMixture {
                weights: weights.clone(),
                components: components
                    .iter()
                    .map(|c| GaussianSpec {
                        mean: shift(&c.mean),
                        covariance: c.covariance.clone(),
                    })
                    .collect(),
            },
            Self::UniformBox { lo, hi } => Self::UniformBox {
                lo: shift(lo),
                hi: shift(hi),
            },
            Self::PointCloud { points, weights } => Self::PointCloud {
                points: points.iter().map(|p| shift(p)).collect(),
                weights: weights.clone(),
            },
        })
    }

    /// Parses the plain-text (TOML) document form.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("measure documents always serialize")
    }

    /// One-line descriptor used in metadata headers.
    pub fn describe(&self) -> String {
        serde_json::to_string(self).expect("measure documents always serialize")
    }
}

fn weighted_mean<'a>(d: usize, weights: &[f64], rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut mu = vec![0.0; d];
    for (w, row) in weights.iter().zip(rows) {
        for k in 0..d {
            mu[k] += w * row[k];
        }
    }
    mu
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

/// On-disk form of a [`MeasureSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureDoc {
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariance: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    components: Option<Vec<ComponentDoc>>,
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(config_err("covariance must be a square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn required<T>(field: Option<T>, name: &str, variant: &str) -> Result<T> {
    field.ok_or_else(|| config_err(format!("variant `{variant}` requires field `{name}`")))
}

impl TryFrom<MeasureDoc> for MeasureSpec {
    type Error = Error;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        let v = doc.variant.as_str();
        let spec = match v {
            "gaussian" => {
                let mean = required(doc.mean, "mean", v)?;
                let cov = matrix_from_rows(required(doc.covariance, "covariance", v)?)?;
                Self::gaussian(mean, cov)?
            }
            "gaussian_mixture" => {
                let weights = required(doc.weights, "weights", v)?;
                let comps = required(doc.components, "components", v)?
                    .into_iter()
                    .map(|c| GaussianSpec::new(c.mean, matrix_from_rows(c.covariance)?))
                    .collect::<Result<Vec<_>>>()?;
                if comps.is_empty() {
                    return Err(config_err("mixture needs at least one component"));
                }
                Self::mixture(weights, comps)?
            }
            "uniform_box" => Self::uniform_box(required(doc.lo, "lo", v)?, required(doc.hi, "hi", v)?)?,
            "point_cloud" => {
                let points = required(doc.points, "points", v)?;
                if points.is_empty() {
                    return Err(config_err("point cloud needs at least one point"));
                }
                let weights = match doc.weights {
                    Some(w) => w,
                    None => vec![1.0 / points.len() as f64; points.len()],
                };
                Self::point_cloud(points, weights)?
            }
            other => return Err(config_err(format!("unknown measure variant `{other}`"))),
        };
        if let Some(d) = doc.dimension {
            if d != spec.dim() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: spec.dim(),
                });
            }
        }
        Ok(spec)
    }
}

impl From<MeasureSpec> for MeasureDoc {
    fn from(spec: MeasureSpec) -> Self {
        let mut doc = MeasureDoc {
            variant: spec.variant_name().to_string(),
            dimension: Some(spec.dim()),
            mean: None,
            covariance: None,
            weights: None,
            lo: None,
            hi: None,
            points: None,
            components: None,
        };
        match spec {
            MeasureSpec::Gaussian(g) => {
                doc.covariance = Some(matrix_to_rows(&g.covariance));
                doc.mean = Some(g.mean);
            }
            MeasureSpec::GaussianMixture {
                weights,
                components,
            } => {
                doc.weights = Some(weights);
                doc.components = Some(
                    components
                        .into_iter()
                        .map(|c| ComponentDoc {
                            covariance: matrix_to_rows(&c.covariance),
                            mean: c.mean,
                        })
                        .collect(),
                );
            }
            MeasureSpec::UniformBox { lo, hi } => {
                doc.lo = Some(lo);
                doc.hi = Some(hi);
            }
            MeasureSpec::PointCloud { points, weights } => {
                doc.points = Some(points);
                doc.weights = Some(weights);
            }
        }
        doc
    }
}
