//! Command-line driver. Exit codes: 0 success, 2 configuration error,
//! 3 numerical failure or abort.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::bounds::{
    chi2_condition_probe, chi2_mean_integral, lemma1_bound, lemma2_bound, lemma2_bound_min, lemma2_check,
    lemma3_check, mgf_check, tv_condition_probe, tv_variance_integral, ConditionReport, DEFAULT_ETA,
};
use crate::divergence::DivergencePlan;
use crate::error::{config_err, Error, Result};
use crate::experiments::{run_concentration, run_convergence, write_json, ExperimentConfig, RuleConfig};
use crate::integrate::{Rule, MAX_GRID_DIM};
use crate::limit::{build_gp, limit_samples, write_limit_sample, LimitHeader};
use crate::measure::{sample, MeasureSpec, Smoothing};
use crate::seed::{derive_seed, stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable consulted for the seed when `--seed` is absent.
pub const SEED_ENV: &str = "SMOOTHDIV_SEED";

#[derive(Debug, Parser)]
#[command(name = "smoothdiv", version, about = "Smoothed TV and chi-square divergences of empirical measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Divergences of one sample against the reference.
    Estimate(Flags),
    /// Draws from the two limit laws.
    Limit(Flags),
    /// Moment bounds and identities.
    Bounds(Flags),
    /// Sufficient-condition checks.
    Check(Flags),
    /// Convergence experiment over a grid of sample sizes.
    Convergence(Flags),
    /// Concentration experiment.
    Concentration(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureChoice {
    Tv,
    Chi2,
    Both,
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// Run config or bare measure file (TOML).
    #[arg(long = "config", visible_alias = "spec", value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long = "n-grid", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Limit-law draws (limit, convergence) or importance draws (estimate, bounds).
    #[arg(long)]
    draws: Option<usize>,
    /// Grid points per axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Tail mass outside the truncation box.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    measure: Option<MeasureChoice>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Deviations for the concentration experiment.
    #[arg(long = "t-grid", value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    /// Starting relative jitter for the limit-process factorization.
    #[arg(long)]
    jitter: Option<f64>,
}

/// Contents of a `--config` file. Every field can be overridden by a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: Option<MeasureSpec>,
    pub sigma: Option<f64>,
    pub n: Option<usize>,
    pub reps: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub draws: Option<usize>,
    pub grid: Option<usize>,
    pub eps: Option<f64>,
    pub measure: Option<MeasureChoice>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub t_grid: Option<Vec<f64>>,
    pub jitter: Option<f64>,
    pub eta_fracs: Option<Vec<f64>>,
}

impl RunConfig {
    /// Parses a run config, or a bare measure document (one with a top-level `variant`).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if value.contains_key("variant") {
            return Ok(Self {
                spec: Some(MeasureSpec::from_toml_str(text)?),
                ..Self::default()
            });
        }
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn overlay(mut self, f: &Flags) -> Self {
        macro_rules! take {
            ($($field:ident),*) => { $( if f.$field.is_some() { self.$field = f.$field.clone(); } )* };
        }
        take!(sigma, n, reps, n_grid, draws, grid, eps, measure, seed, workers, out, t_grid, jitter);
        self
    }

    fn spec(&self) -> Result<&MeasureSpec> {
        self.spec.as_ref().ok_or_else(|| config_err("no measure given (use --spec PATH)"))
    }

    fn sigma(&self) -> Result<Smoothing> {
        Smoothing::new(self.sigma.ok_or_else(|| config_err("sigma is required (use --sigma)"))?)
    }

    fn rule_config(&self) -> RuleConfig {
        let base = RuleConfig::default();
        RuleConfig {
            points_per_axis: self.grid,
            eps: self.eps.unwrap_or(base.eps),
            importance_draws: base.importance_draws,
            limit_points_per_axis: self.grid,
            jitter: self.jitter.unwrap_or(base.jitter),
        }
    }

    fn n_grid(&self) -> Result<Vec<usize>> {
        match (&self.n_grid, self.n) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(n)) => Ok(vec![n]),
            _ => Err(config_err("sample sizes are required (use --n-grid or --n)")),
        }
    }
}

fn resolve_seed(cfg: &RunConfig) -> Result<u64> {
    if let Some(s) = cfg.seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_err(format!("{SEED_ENV} must be an unsigned integer (got {v:?})"))),
        Err(_) => Ok(0),
    }
}

fn emit(value: &serde_json::Value, out: Option<&Path>, file: &str) -> Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(file), value)?;
    }
    // a closed stdout (e.g. piped into `head`) is not an error
    let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(value).expect("json"));
    Ok(())
}

/// Integration rule for one-off integrals: grid for `d ≤ 3`, importance otherwise.
fn integral_rule(cfg: &RunConfig, spec: &MeasureSpec, sigma: Smoothing, seed: u64) -> Result<Rule> {
    let mut rc = cfg.rule_config();
    if let Some(d) = cfg.draws {
        rc.importance_draws = d;
    }
    rc.divergence_rule(spec, sigma, derive_seed(seed, &[stream::IMPORTANCE]))
}

fn cmd_estimate(cfg: &RunConfig, seed: u64) -> Result<()> {
    let spec = cfg.spec()?;
    let sigma = cfg.sigma()?;
    let n = cfg.n.ok_or_else(|| config_err("sample size is required (use --n)"))?;
    let measure = cfg.measure.unwrap_or(MeasureChoice::Both);
    let rule = integral_rule(cfg, spec, sigma, seed)?;
    let smp = sample(spec, n, derive_seed(seed, &[stream::SAMPLE]))?;
    let pair = DivergencePlan::new(spec, sigma, &rule)?.evaluate(&smp)?;
    let mut out = json!({ "spec": spec, "sigma": sigma, "n": n, "seed": seed, "rule": rule });
    if measure != MeasureChoice::Chi2 {
        out["tv"] = json!(pair.tv);
    }
    if measure != MeasureChoice::Tv {
        out["chi2"] = json!(pair.chi2);
    }
    emit(&out, cfg.out.as_deref(), "estimate.json")
}

fn cmd_limit(cfg: &RunConfig, seed: u64) -> Result<()> {
    let spec = cfg.spec()?;
    let sigma = cfg.sigma()?;
    if spec.dim() > MAX_GRID_DIM {
        return Err(config_err(format!("limit simulation needs d <= {MAX_GRID_DIM}")));
    }
    let rc = cfg.rule_config();
    let grid = rc.limit_grid(spec, sigma)?;
    let model = build_gp(spec, sigma, &grid, rc.jitter)?;
    let draws = cfg.draws.unwrap_or(1000);
    let limit_seed = derive_seed(seed, &[stream::LIMIT]);
    let samples = limit_samples(&model, draws, limit_seed);
    let measure = cfg.measure.unwrap_or(MeasureChoice::Both);
    let mean = |v: &[f64]| crate::experiments::mean_sem(v);
    let mut out = json!({
        "spec": spec, "sigma": sigma, "seed": seed, "draws": draws,
        "grid": grid, "jitter": model.jitter(),
    });
    for (name, vals, expected, choice) in [
        ("tv", &samples.tv, model.expected_tv(), MeasureChoice::Tv),
        ("chi2", &samples.chi2, model.expected_chi2(), MeasureChoice::Chi2),
    ] {
        if measure != MeasureChoice::Both && measure != choice {
            continue;
        }
        let (m, sem) = mean(vals);
        out[name] = json!({ "mean": m, "sem": sem, "expected": expected });
        if let Some(dir) = &cfg.out {
            std::fs::create_dir_all(dir)?;
            let header = LimitHeader {
                functional: name.into(),
                seed: limit_seed,
                grid: grid.clone(),
                jitter: model.jitter(),
                config: Some(json!({ "spec": spec, "sigma": sigma, "draws": draws })),
            };
            write_limit_sample(&dir.join(format!("limit_{name}.txt")), &header, vals)?;
        }
    }
    emit(&out, cfg.out.as_deref(), "limit_summary.json")
}

fn cmd_bounds(cfg: &RunConfig, seed: u64) -> Result<()> {
    let spec = cfg.spec()?;
    let sigma = cfg.sigma()?;
    let rule = integral_rule(cfg, spec, sigma, seed)?;
    let iv = tv_variance_integral(spec, sigma, &rule)?;
    let j = chi2_mean_integral(spec, sigma, &rule)?;
    let beta = spec.subgaussian_parameter();
    let lemma2 = match lemma2_bound(spec, sigma, beta, DEFAULT_ETA) {
        Ok(v) => json!({ "eta": DEFAULT_ETA, "bound": v }),
        Err(e @ Error::EtaCondition { .. }) => json!({ "eta": DEFAULT_ETA, "bound": null, "reason": e.to_string() }),
        Err(e) => return Err(e),
    };
    let lemma2_min = match lemma2_bound_min(spec, sigma, beta) {
        Ok((eta, v)) => json!({ "eta": eta, "bound": v }),
        Err(e @ Error::EtaCondition { .. }) => json!({ "eta": null, "bound": null, "reason": e.to_string() }),
        Err(e) => return Err(e),
    };
    let c = (2.0 * std::f64::consts::PI).powf(-0.5);
    let out = json!({
        "spec": spec,
        "sigma": sigma,
        "rule": rule,
        "subgaussian_parameter": beta,
        "tv_variance_integral": iv,
        "tv_upper_bound": 0.5 * iv.value,
        "tv_lower_bound": c * iv.value,
        "lemma1_bound": lemma1_bound(spec, sigma)?,
        "chi2_mean_integral": j,
        "lemma2_bound": lemma2,
        "lemma2_bound_min": lemma2_min,
    });
    emit(&out, cfg.out.as_deref(), "bounds.json")
}

fn cmd_check(cfg: &RunConfig, seed: u64) -> Result<()> {
    let spec = cfg.spec()?;
    let sigma = cfg.sigma()?;
    let mut reports: Vec<ConditionReport> = vec![lemma2_check(spec.subgaussian_parameter(), sigma)];
    if let MeasureSpec::Gaussian(g) = spec {
        reports.push(lemma3_check(g.covariance(), sigma)?);
        let fracs = cfg.eta_fracs.clone().unwrap_or_else(|| vec![0.25, 0.5, 0.75]);
        reports.extend(mgf_check(spec, &fracs, seed)?);
    }
    if spec.dim() <= MAX_GRID_DIM {
        reports.push(tv_condition_probe(spec, sigma, None)?);
        reports.push(chi2_condition_probe(spec, sigma, None)?);
    }
    emit(&json!(reports), cfg.out.as_deref(), "checks.json")
}

fn experiment_config(cfg: &RunConfig, seed: u64, reps: usize, limit_draws: usize) -> Result<ExperimentConfig> {
    let mut rule = cfg.rule_config();
    rule.limit_points_per_axis = None;
    Ok(ExperimentConfig {
        spec: cfg.spec()?.clone(),
        sigma: cfg.sigma()?,
        n_grid: cfg.n_grid()?,
        reps: cfg.reps.unwrap_or(reps),
        limit_draws: cfg.draws.unwrap_or(limit_draws),
        master_seed: seed,
        rule,
        output: cfg.out.clone(),
    })
}

fn cmd_convergence(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ec = experiment_config(cfg, seed, 100, 1000)?;
    let report = run_convergence(&ec)?;
    let sizes: Vec<serde_json::Value> = report
        .sizes
        .iter()
        .map(|s| {
            json!({
                "n": s.n, "mean_tv": s.mean_tv, "sem_tv": s.sem_tv,
                "mean_chi2": s.mean_chi2, "sem_chi2": s.sem_chi2,
                "ks_tv": s.ks_tv, "ks_chi2": s.ks_chi2,
            })
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "sizes": sizes,
            "slope_tv": report.slope_tv,
            "slope_chi2": report.slope_chi2,
            "bounds": report.bounds,
        }))
        .expect("json")
    );
    Ok(())
}

fn cmd_concentration(cfg: &RunConfig, seed: u64) -> Result<()> {
    let ec = experiment_config(cfg, seed, 1000, 100)?;
    let ts = cfg.t_grid.clone().unwrap_or_else(|| vec![0.02, 0.05, 0.1]);
    let rows = run_concentration(&ec, &ts)?;
    println!("{}", serde_json::to_string_pretty(&rows).expect("json"));
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    let flags = match command {
        Command::Estimate(f)
        | Command::Limit(f)
        | Command::Bounds(f)
        | Command::Check(f)
        | Command::Convergence(f)
        | Command::Concentration(f) => f,
    };
    let cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .overlay(flags);
    let seed = resolve_seed(&cfg)?;
    let run = || match command {
        Command::Estimate(_) => cmd_estimate(&cfg, seed),
        Command::Limit(_) => cmd_limit(&cfg, seed),
        Command::Bounds(_) => cmd_bounds(&cfg, seed),
        Command::Check(_) => cmd_check(&cfg, seed),
        Command::Convergence(_) => cmd_convergence(&cfg, seed),
        Command::Concentration(_) => cmd_concentration(&cfg, seed),
    };
    match cfg.workers {
        Some(0) => Err(config_err("workers must be at least 1")),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Numerical(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}
