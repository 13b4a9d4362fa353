//! Reference measures `P`, their Gaussian smoothings, and the moments of the
//! smoothing kernel that drive every limit-law quantity.

mod kernel;
mod sample;
mod spec;
mod tail;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

pub use kernel::{
    covariance_kernel, gaussian_density, normal_cdf, normal_interval, smoothed_density,
    squared_kernel_mean, variance_function, KernelMoments, SmoothedDensity,
    VARIANCE_NEGATIVITY_TOL,
};
pub(crate) use kernel::GaussPdf;
pub use sample::{sample, Sample, Sampler};
pub use spec::{GaussianSpec, MeasureSpec};
pub(crate) use spec::dist as spec_dist;
pub use tail::{tail_probability, TailModel, TAIL_MC_DRAWS};

/// Standard deviation `σ > 0` of the isotropic smoothing kernel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Smoothing(f64);

impl Smoothing {
    pub fn new(sigma: f64) -> Result<Self> {
        if sigma.is_finite() && sigma > 0.0 {
            Ok(Self(sigma))
        } else {
            Err(config_err(format!("sigma must be positive and finite (got {sigma})")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Smoothing {
    type Error = crate::error::Error;

    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Smoothing> for f64 {
    fn from(s: Smoothing) -> f64 {
        s.0
    }
}

/// Subgaussian parameter of `spec`; see [`MeasureSpec::subgaussian_parameter`].
pub fn subgaussian_parameter(spec: &MeasureSpec) -> f64 {
    spec.subgaussian_parameter()
}
