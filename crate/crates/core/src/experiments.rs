//! Monte Carlo harness: repeated samples at several sizes, scaled divergence
//! statistics, comparison against limit-law draws, rate fits and
//! concentration frequencies. Output is reproducible from the config alone.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{chi2_mean_integral, concentration_bound, tv_variance_integral};
use crate::divergence::{DivergencePair, DivergencePlan};
use crate::error::{config_err, Error, Result};
use crate::integrate::{pairwise_sum, Rule, TensorGrid, DEFAULT_EPS, MAX_GRID_DIM};
use crate::limit::{build_gp, limit_samples, write_limit_sample, LimitHeader, LimitSamples, JITTER_START};
use crate::measure::{MeasureSpec, Sampler, Smoothing};
use crate::seed::{derive_seed, stream, Rng};

/// Integration errors above this fraction of the cross-rep spread abort a run.
pub const MAX_ERROR_TO_SPREAD: f64 = 0.05;

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(config_err("KS distance needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN in KS input".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut best) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// 1-Wasserstein distance between the empirical laws of `a` and `b`.
///
/// Equal lengths use the sorted coupling; otherwise `∫ |F_a − F_b|`.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(config_err("Wasserstein distance needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        return Ok(pairwise_sum(&diffs) / a.len() as f64);
    }
    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut total) = (0usize, 0usize, 0.0);
    for w in pooled.windows(2) {
        while i < a.len() && a[i] <= w[0] {
            i += 1;
        }
        while j < b.len() && b[j] <= w[0] {
            j += 1;
        }
        total += (i as f64 / na - j as f64 / nb).abs() * (w[1] - w[0]);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
}

/// Least-squares slope of `log(mean)` on `log(n)`.
pub fn fit_loglog_slope(ns: &[f64], means: &[f64]) -> Result<SlopeFit> {
    if ns.len() != means.len() || ns.len() < 3 {
        return Err(config_err("slope fit needs at least 3 paired points"));
    }
    if ns.iter().chain(means).any(|v| !(*v > 0.0)) {
        return Err(config_err("slope fit needs positive sizes and means"));
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = means.iter().map(|v| v.ln()).collect();
    let k = x.len() as f64;
    let (xm, ym) = (x.iter().sum::<f64>() / k, y.iter().sum::<f64>() / k);
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
    if sxx == 0.0 {
        return Err(config_err("slope fit needs distinct sizes"));
    }
    let slope = sxy / sxx;
    let icept = ym - slope * xm;
    let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - icept - slope * a).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        stderr: (ssr / (k - 2.0) / sxx).sqrt(),
    })
}

/// Mean and standard error of the mean.
pub fn mean_sem(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    (mean, (pairwise_sum(&dev) / (n - 1.0) / n).sqrt())
}

fn sample_sd(v: &[f64]) -> f64 {
    mean_sem(v).1 * (v.len() as f64).sqrt()
}

/// Integration settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuleConfig {
    /// Grid points per axis for the divergences (grid used when `d ≤ 3`).
    pub points_per_axis: Option<usize>,
    /// Tail mass left outside the truncation box.
    pub eps: f64,
    /// Importance draws when no grid is used.
    pub importance_draws: usize,
    /// Grid points per axis for the limit-process model.
    pub limit_points_per_axis: Option<usize>,
    /// Starting relative jitter for the limit-process factorization.
    pub jitter: f64,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            points_per_axis: None,
            eps: DEFAULT_EPS,
            importance_draws: 100_000,
            limit_points_per_axis: None,
            jitter: JITTER_START,
        }
    }
}

impl RuleConfig {
    pub fn divergence_rule(&self, spec: &MeasureSpec, sigma: Smoothing, seed: u64) -> Result<Rule> {
        let d = spec.dim();
        let points = self.points_per_axis.or(match d {
            1 => Some(4000),
            2 => Some(200),
            _ => None,
        });
        match points {
            Some(p) if d <= MAX_GRID_DIM => Rule::grid(spec, sigma, p, self.eps),
            _ => Rule::importance(spec, sigma, self.importance_draws, seed),
        }
    }

    pub fn limit_grid(&self, spec: &MeasureSpec, sigma: Smoothing) -> Result<TensorGrid> {
        let p = self.limit_points_per_axis.unwrap_or(match spec.dim() {
            1 => 400,
            2 => 40,
            _ => 12,
        });
        TensorGrid::for_measure(spec, sigma, self.eps, p)
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: MeasureSpec,
    pub sigma: Smoothing,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub limit_draws: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub rule: RuleConfig,
    /// Where results are written; left out of the persisted headers.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("n_grid must be non-empty, positive and strictly increasing"));
        }
        if self.reps < 2 {
            return Err(config_err(format!("reps must be at least 2 (got {})", self.reps)));
        }
        if self.limit_draws < 100 {
            return Err(config_err(format!("limit_draws must be at least 100 (got {})", self.limit_draws)));
        }
        if !(self.rule.eps > 0.0 && self.rule.eps < 1.0) {
            return Err(config_err(format!("eps must lie in (0, 1) (got {})", self.rule.eps)));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single-line JSON used as the header of every persisted file.
    pub fn header_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Scaled statistics and their summaries at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n: usize,
    /// `√n δ_TV` per rep.
    pub stat_tv: Vec<f64>,
    /// `n χ²` per rep.
    pub stat_chi2: Vec<f64>,
    pub err_tv: Vec<f64>,
    pub err_chi2: Vec<f64>,
    pub mean_tv: f64,
    pub sem_tv: f64,
    pub mean_chi2: f64,
    pub sem_chi2: f64,
    pub ks_tv: Option<f64>,
    pub ks_chi2: Option<f64>,
}

/// Reference values the statistics are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    /// `∫ √v`.
    pub tv_variance_integral: f64,
    pub tv_upper_bound: f64,
    pub tv_lower_bound: f64,
    /// `J = ∫ v/ρ`.
    pub chi2_mean_integral: f64,
    pub chi2_mean_integral_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub sizes: Vec<SizeReport>,
    /// Slope of `log E δ_TV` on `log n`.
    pub slope_tv: Option<SlopeFit>,
    /// Slope of `log E χ²` on `log n`.
    pub slope_chi2: Option<SlopeFit>,
    pub bounds: BoundSummary,
    pub limit_jitter: Option<f64>,
    #[serde(skip)]
    pub limit: Option<LimitSamples>,
}

/// Divergences of `reps` fresh samples of size `n`, in rep order.
fn run_reps(config: &ExperimentConfig, plan: &DivergencePlan, n: usize) -> Result<Vec<DivergencePair>> {
    let sampler = Sampler::new(&config.spec);
    (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(config.master_seed, &[stream::SAMPLE, n as u64, rep as u64]);
            let mut rng = Rng::seed_from_u64(seed);
            let sample = sampler.sample_with(&mut rng, n, seed)?;
            plan.evaluate(&sample)
        })
        .collect()
}

fn check_spread(n: usize, stats: &[f64], errs: &[f64]) -> Result<()> {
    let sd = sample_sd(stats);
    match errs.iter().copied().find(|&e| e > MAX_ERROR_TO_SPREAD * sd) {
        Some(error) => Err(Error::IntegrationTooCoarse { n, error, sd }),
        None => Ok(()),
    }
}

fn bound_summary(config: &ExperimentConfig, rule: &Rule) -> Result<BoundSummary> {
    let iv = tv_variance_integral(&config.spec, config.sigma, rule)?;
    let j = chi2_mean_integral(&config.spec, config.sigma, rule)?;
    Ok(BoundSummary {
        tv_variance_integral: iv.value,
        tv_upper_bound: 0.5 * iv.value,
        tv_lower_bound: (2.0 * std::f64::consts::PI).powf(-0.5) * iv.value,
        chi2_mean_integral: j.value,
        chi2_mean_integral_error: j.error,
    })
}

/// Runs the convergence experiment and, if `config.output` is set, persists
/// `convergence.csv`, `summary.json`, `limit_tv.txt` and `limit_chi2.txt`.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceReport> {
    config.validate()?;
    let rule = config
        .rule
        .divergence_rule(&config.spec, config.sigma, derive_seed(config.master_seed, &[stream::IMPORTANCE]))?;
    let plan = DivergencePlan::new(&config.spec, config.sigma, &rule)?;

    let limit_seed = derive_seed(config.master_seed, &[stream::LIMIT]);
    let (limit, limit_jitter, limit_grid) = if config.spec.dim() <= MAX_GRID_DIM {
        let grid = config.rule.limit_grid(&config.spec, config.sigma)?;
        let model = build_gp(&config.spec, config.sigma, &grid, config.rule.jitter)?;
        (
            Some(limit_samples(&model, config.limit_draws, limit_seed)),
            Some(model.jitter()),
            Some(grid),
        )
    } else {
        (None, None, None)
    };

    let mut sizes = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let pairs = run_reps(config, &plan, n)?;
        let sn = (n as f64).sqrt();
        let nf = n as f64;
        let stat_tv: Vec<f64> = pairs.iter().map(|p| sn * p.tv.value).collect();
        let stat_chi2: Vec<f64> = pairs.iter().map(|p| nf * p.chi2.value).collect();
        let err_tv: Vec<f64> = pairs.iter().map(|p| sn * p.tv.integration_error).collect();
        let err_chi2: Vec<f64> = pairs.iter().map(|p| nf * p.chi2.integration_error).collect();
        check_spread(n, &stat_tv, &err_tv)?;
        check_spread(n, &stat_chi2, &err_chi2)?;
        let (mean_tv, sem_tv) = mean_sem(&stat_tv);
        let (mean_chi2, sem_chi2) = mean_sem(&stat_chi2);
        let (ks_tv, ks_chi2) = match &limit {
            Some(l) => (Some(ks_statistic(&stat_tv, &l.tv)?), Some(ks_statistic(&stat_chi2, &l.chi2)?)),
            None => (None, None),
        };
        sizes.push(SizeReport {
            n,
            stat_tv,
            stat_chi2,
            err_tv,
            err_chi2,
            mean_tv,
            sem_tv,
            mean_chi2,
            sem_chi2,
            ks_tv,
            ks_chi2,
        });
    }

    let ns: Vec<f64> = sizes.iter().map(|s| s.n as f64).collect();
    let raw_tv: Vec<f64> = sizes.iter().map(|s| s.mean_tv / (s.n as f64).sqrt()).collect();
    let raw_chi2: Vec<f64> = sizes.iter().map(|s| s.mean_chi2 / s.n as f64).collect();
    let report = ConvergenceReport {
        slope_tv: fit_loglog_slope(&ns, &raw_tv).ok(),
        slope_chi2: fit_loglog_slope(&ns, &raw_chi2).ok(),
        bounds: bound_summary(config, &rule)?,
        limit_jitter,
        sizes,
        limit,
    };
    if let Some(dir) = &config.output {
        persist_convergence(config, &report, limit_grid.as_ref(), limit_seed, dir)?;
    }
    Ok(report)
}

fn header_line(config: &ExperimentConfig) -> String {
    format!("# {}", config.header_json())
}

fn persist_convergence(
    config: &ExperimentConfig,
    report: &ConvergenceReport,
    limit_grid: Option<&TensorGrid>,
    limit_seed: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("convergence.csv"))?);
    writeln!(csv, "{}", header_line(config))?;
    writeln!(csv, "n,rep,stat_tv,stat_chi2,err_tv,err_chi2")?;
    for s in &report.sizes {
        for r in 0..s.stat_tv.len() {
            writeln!(
                csv,
                "{},{},{},{},{},{}",
                s.n, r, s.stat_tv[r], s.stat_chi2[r], s.err_tv[r], s.err_chi2[r]
            )?;
        }
    }
    csv.flush()?;

    let sizes: Vec<serde_json::Value> = report
        .sizes
        .iter()
        .map(|s| {
            serde_json::json!({
                "n": s.n,
                "mean_tv": s.mean_tv,
                "sem_tv": s.sem_tv,
                "mean_chi2": s.mean_chi2,
                "sem_chi2": s.sem_chi2,
                "ks_tv": s.ks_tv,
                "ks_chi2": s.ks_chi2,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "config": config,
        "sizes": sizes,
        "slope_tv": report.slope_tv,
        "slope_chi2": report.slope_chi2,
        "bounds": report.bounds,
        "limit_jitter": report.limit_jitter,
    });
    write_json(&dir.join("summary.json"), &summary)?;

    if let (Some(l), Some(grid)) = (&report.limit, limit_grid) {
        for (name, vals) in [("tv", &l.tv), ("chi2", &l.chi2)] {
            let header = LimitHeader {
                functional: name.into(),
                seed: limit_seed,
                grid: grid.clone(),
                jitter: report.limit_jitter.unwrap_or(0.0),
                config: Some(serde_json::to_value(config).expect("config serializes")),
            };
            write_limit_sample(&dir.join(format!("limit_{name}.txt")), &header, vals)?;
        }
    }
    Ok(())
}

pub(crate) fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// One row of the concentration table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub t: f64,
    /// Fraction of reps with `δ_TV ≥ mean + t`.
    pub frequency: f64,
    pub bound: f64,
    /// `√(bound (1 − bound)/reps)`.
    pub binomial_se: f64,
    pub mean_tv: f64,
}

/// Empirical exceedance frequencies of `δ_TV` over its mean, beside
/// `exp(−n t²/2)`, for every `n` in the grid and `t` in `t_grid`. Persists
/// `concentration.csv` if `config.output` is set.
pub fn run_concentration(config: &ExperimentConfig, t_grid: &[f64]) -> Result<Vec<ConcentrationRow>> {
    config.validate()?;
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(config_err("t values must be positive"));
    }
    let rule = config
        .rule
        .divergence_rule(&config.spec, config.sigma, derive_seed(config.master_seed, &[stream::IMPORTANCE]))?;
    let plan = DivergencePlan::new(&config.spec, config.sigma, &rule)?;
    let mut rows = Vec::new();
    for &n in &config.n_grid {
        let tv: Vec<f64> = run_reps(config, &plan, n)?.iter().map(|p| p.tv.value).collect();
        let mean = pairwise_sum(&tv) / tv.len() as f64;
        for &t in t_grid {
            let hits = tv.iter().filter(|&&v| v >= mean + t).count();
            let bound = concentration_bound(n, t)?;
            rows.push(ConcentrationRow {
                n,
                t,
                frequency: hits as f64 / tv.len() as f64,
                bound,
                binomial_se: (bound * (1.0 - bound) / tv.len() as f64).sqrt(),
                mean_tv: mean,
            });
        }
    }
    if let Some(dir) = &config.output {
        std::fs::create_dir_all(dir)?;
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("concentration.csv"))?);
        writeln!(csv, "{}", header_line(config))?;
        writeln!(csv, "n,t,frequency,bound,binomial_se,mean_tv")?;
        for r in &rows {
            writeln!(csv, "{},{},{},{},{},{}", r.n, r.t, r.frequency, r.bound, r.binomial_se, r.mean_tv)?;
        }
        csv.flush()?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(spec: MeasureSpec, n_grid: Vec<usize>, reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            spec,
            sigma: Smoothing::new(1.0).unwrap(),
            n_grid,
            reps,
            limit_draws: 500,
            master_seed: 7,
            rule: RuleConfig {
                points_per_axis: Some(1000),
                limit_points_per_axis: Some(100),
                ..RuleConfig::default()
            },
            output: None,
        }
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[-2.0, -1.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((ks_statistic(&[1.0, 2.0, 3.0], &[1.5, 2.5]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_examples() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.75).collect();
        assert!((wasserstein1_1d(&a, &b).unwrap() - 0.75).abs() < 1e-15);
        assert!((wasserstein1_1d(&[0.0, 1.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        // unequal lengths: {0} vs {0, 2} → ∫|F_a − F_b| = ½·2
        assert!((wasserstein1_1d(&[0.0], &[0.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slope_examples() {
        let ns = [10.0, 100.0, 1000.0, 5000.0];
        let m: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(-0.5)).collect();
        assert!((fit_loglog_slope(&ns, &m).unwrap().slope + 0.5).abs() < 1e-12);
        assert!(fit_loglog_slope(&ns, &[2.0; 4]).unwrap().slope.abs() < 1e-15);
        let f = fit_loglog_slope(&[1.0, 4.0, 16.0], &[1.0, 0.51, 0.26]).unwrap();
        assert!((f.slope + 0.486).abs() < 0.02);
        assert!(fit_loglog_slope(&[1.0, 2.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn config_validation() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let mut c = config(spec, vec![10, 20], 5);
        assert!(c.validate().is_ok());
        c.n_grid = vec![20, 10];
        assert!(c.validate().is_err());
        c.n_grid = vec![10];
        c.reps = 1;
        assert!(c.validate().is_err());
        c.reps = 2;
        c.limit_draws = 99;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_toml_round_trip() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let c = config(spec, vec![10, 20], 5);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn degenerate_convergence_is_all_zero() {
        let spec = MeasureSpec::point_mass(vec![0.0]).unwrap();
        let r = run_convergence(&config(spec, vec![5, 50], 4)).unwrap();
        for s in &r.sizes {
            assert!(s.stat_tv.iter().chain(&s.stat_chi2).all(|&v| v == 0.0));
            assert_eq!(s.ks_tv, Some(0.0));
            assert_eq!(s.ks_chi2, Some(0.0));
        }
    }

    #[test]
    fn statistics_respect_ranges_and_seeds() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let c = config(spec, vec![20, 80], 40);
        let a = run_convergence(&c).unwrap();
        for s in &a.sizes {
            let root = (s.n as f64).sqrt();
            assert!(s.stat_tv.iter().all(|&v| (0.0..=root).contains(&v)));
            assert!(s.stat_chi2.iter().zip(&s.err_chi2).all(|(v, e)| *v >= -e));
            assert_eq!(s.stat_tv.len(), 40);
        }
        let b = run_convergence(&c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sem_halves_with_four_times_the_reps() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let small = run_convergence(&config(spec.clone(), vec![100], 100)).unwrap();
        let big = run_convergence(&config(spec, vec![100], 400)).unwrap();
        let ratio = big.sizes[0].sem_tv / small.sizes[0].sem_tv;
        assert!((ratio - 0.5).abs() <= 0.5 * 0.3, "{ratio}");
    }

    #[test]
    fn persisted_files_carry_config() {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(spec, vec![10, 20, 40], 3);
        c.output = Some(dir.path().to_path_buf());
        run_convergence(&c).unwrap();
        run_concentration(&c, &[0.05]).unwrap();
        let head = format!("# {}", c.header_json());
        for f in ["convergence.csv", "concentration.csv"] {
            let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().next().unwrap(), head);
        }
        let (h, v) = crate::limit::read_limit_sample(&dir.path().join("limit_tv.txt")).unwrap();
        assert_eq!(v.len(), 500);
        assert!(h.config.is_some());
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert!(summary["slope_tv"]["slope"].is_number());
    }

    #[test]
    fn concentration_trivial_cases() {
        let spec = MeasureSpec::point_mass(vec![0.0]).unwrap();
        let rows = run_concentration(&config(spec, vec![10], 20), &[0.01, 0.1]).unwrap();
        assert!(rows.iter().all(|r| r.frequency == 0.0));
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap();
        let rows = run_concentration(&config(spec, vec![10], 20), &[5.0]).unwrap();
        assert!(rows[0].frequency == 0.0 && rows[0].frequency <= rows[0].bound);
    }
}
