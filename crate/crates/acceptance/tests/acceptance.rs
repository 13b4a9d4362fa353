//! Acceptance suite. Each test prints one line
//! `criterion NN <name>: PASS|FAIL <details>` and then asserts the verdict.
//!
//! Run with `cargo test --release -p smoothdiv-acceptance -- --nocapture --test-threads 1`
//! to see the lines in order.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use smoothdiv::bounds::{
    chi2_divergence_probe, chi2_mean_integral, concentration_bound, lemma1_bound, lemma2_bound, mgf_check,
    tv_variance_integral,
};
use smoothdiv::experiments::{
    fit_loglog_slope, ks_statistic, run_concentration, run_convergence, ConvergenceReport, ExperimentConfig,
    RuleConfig,
};
use smoothdiv::integrate::{Rule, TensorGrid};
use smoothdiv::limit::{build_gp, gp_draw, limit_samples, multiplier_limit_samples, MultiplierModel, JITTER_START};
use smoothdiv::measure::{MeasureSpec, Smoothing};
use smoothdiv::seed::derive_seed;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:>2} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn sigma1() -> Smoothing {
    Smoothing::new(1.0).unwrap()
}

/// `N(0, 0.25)` in one dimension, the reference used throughout.
fn base_spec() -> MeasureSpec {
    MeasureSpec::isotropic_gaussian(vec![0.0], 0.25).unwrap()
}

fn base_rule() -> Rule {
    Rule::grid(&base_spec(), sigma1(), 4000, 1e-8).unwrap()
}

fn experiment(n_grid: Vec<usize>, reps: usize, limit_draws: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        spec: base_spec(),
        sigma: sigma1(),
        n_grid,
        reps,
        limit_draws,
        master_seed: seed,
        rule: RuleConfig {
            points_per_axis: Some(4000),
            eps: 1e-8,
            limit_points_per_axis: Some(400),
            jitter: JITTER_START,
            ..RuleConfig::default()
        },
        output: None,
    }
}

/// n ∈ {50, 500, 5000}, 500 reps, 5000 limit draws on a 400-node grid.
fn shared_run() -> &'static ConvergenceReport {
    static RUN: OnceLock<ConvergenceReport> = OnceLock::new();
    RUN.get_or_init(|| run_convergence(&experiment(vec![50, 500, 5000], 500, 5000, 11)).unwrap())
}

fn tv_integral() -> f64 {
    tv_variance_integral(&base_spec(), sigma1(), &base_rule()).unwrap().value
}

#[test]
fn criterion_01_chi2_mean_identity() {
    let j = chi2_mean_integral(&base_spec(), sigma1(), &base_rule()).unwrap();
    // independent closed form for Gaussian P: J = (1 + s²/σ²)^d − 1
    let closed = 0.25;
    let report = run_convergence(&experiment(vec![50, 500], 1000, 100, 1)).unwrap();
    let mut pass = (j.value - closed).abs() < 1e-6;
    let mut detail = format!("J(grid)={:.6} J(closed)={closed};", j.value);
    for s in &report.sizes {
        let ok = (s.mean_chi2 - j.value).abs() <= 3.0 * s.sem_chi2;
        pass &= ok;
        detail += &format!(" n={}: mean n*chi2={:.5} sem={:.5}", s.n, s.mean_chi2, s.sem_chi2);
    }
    verdict(1, "chi2 mean identity", pass, detail);
}

#[test]
fn criterion_02_tv_moment_sandwich() {
    let run = shared_run();
    let iv = tv_integral();
    let upper = 0.5 * iv;
    let lower = (2.0 * PI).powf(-0.5) * iv;
    let mut pass = true;
    let mut detail = format!("upper={upper:.5} lower={lower:.5};");
    for s in &run.sizes {
        pass &= s.stat_tv.len() >= 500;
        pass &= s.mean_tv <= upper + 3.0 * s.sem_tv;
        detail += &format!(" n={}: {:.5}±{:.5}", s.n, s.mean_tv, s.sem_tv);
    }
    let last = run.sizes.iter().find(|s| s.n == 5000).unwrap();
    pass &= last.mean_tv >= 0.95 * lower - 3.0 * last.sem_tv;
    verdict(2, "TV moment sandwich", pass, detail);
}

#[test]
fn criterion_03_tv_limit_law() {
    let run = shared_run();
    let ks: Vec<f64> = run.sizes.iter().map(|s| s.ks_tv.unwrap()).collect();
    let monotone = ks.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let pass = monotone && ks[2] <= 0.08 && run.limit.as_ref().unwrap().tv.len() == 5000;
    verdict(3, "TV limit law", pass, format!("KS at n=50,500,5000: {ks:.4?}"));
}

#[test]
fn criterion_04_chi2_limit_law() {
    let run = shared_run();
    let ks: Vec<f64> = run.sizes.iter().map(|s| s.ks_chi2.unwrap()).collect();
    verdict(4, "chi2 limit law", ks[2] <= 0.10, format!("KS at n=50,500,5000: {ks:.4?}"));
}

#[test]
fn criterion_05_rates() {
    let ns = vec![50, 200, 800, 3200];
    let report = run_convergence(&experiment(ns.clone(), 300, 100, 5)).unwrap();
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let tv: Vec<f64> = report.sizes.iter().map(|s| s.mean_tv / (s.n as f64).sqrt()).collect();
    let chi: Vec<f64> = report.sizes.iter().map(|s| s.mean_chi2 / s.n as f64).collect();
    let st = fit_loglog_slope(&nf, &tv).unwrap();
    let sc = fit_loglog_slope(&nf, &chi).unwrap();
    let pass = (-0.55..=-0.45).contains(&st.slope) && (-1.1..=-0.9).contains(&sc.slope);
    verdict(
        5,
        "rates",
        pass,
        format!("tv slope {:.4}±{:.4}, chi2 slope {:.4}±{:.4}", st.slope, st.stderr, sc.slope, sc.stderr),
    );
}

#[test]
fn criterion_06_concentration() {
    let cfg = experiment(vec![200], 2000, 100, 6);
    let rows = run_concentration(&cfg, &[0.02, 0.05, 0.1]).unwrap();
    let mut pass = rows.len() == 3;
    let mut detail = String::new();
    for r in &rows {
        let bound = concentration_bound(200, r.t).unwrap();
        let se = (bound * (1.0 - bound) / 2000.0).sqrt();
        pass &= r.frequency <= bound + 2.0 * se;
        detail += &format!(" t={}: freq {:.4} bound {:.4};", r.t, r.frequency, bound);
    }
    verdict(6, "concentration", pass, detail);
}

#[test]
fn criterion_07_tail_moment_bound() {
    let mut pass = true;
    let mut detail = String::new();
    for d in [1usize, 2] {
        let specs = [
            ("gaussian", MeasureSpec::isotropic_gaussian(vec![0.0; d], 0.25).unwrap()),
            ("box", MeasureSpec::uniform_box(vec![0.0; d], vec![1.0; d]).unwrap()),
        ];
        for (name, spec) in specs {
            let p = if d == 1 { 4000 } else { 300 };
            let iv = tv_variance_integral(&spec, sigma1(), &Rule::grid(&spec, sigma1(), p, 1e-8).unwrap()).unwrap();
            let b = lemma1_bound(&spec, sigma1()).unwrap();
            let margin = b - iv.value;
            pass &= margin > 0.0;
            detail += &format!(" {name} d={d}: bound {b:.4} integral {:.4} margin {margin:.4};", iv.value);
        }
    }
    verdict(7, "tail-moment bound", pass, detail);
}

#[test]
fn criterion_08_subgaussian_bound_dominance() {
    let j = chi2_mean_integral(&base_spec(), sigma1(), &base_rule()).unwrap().value;
    let mut pass = true;
    let mut detail = format!("J={j:.5};");
    for eta in [0.05, 0.1, 0.2] {
        let b = lemma2_bound(&base_spec(), sigma1(), 0.5, eta).unwrap();
        pass &= b >= j;
        detail += &format!(" eta={eta}: bound {b:.5}");
    }
    verdict(8, "subgaussian bound dominance", pass, detail);
}

#[test]
fn criterion_09_condition_violation_probe() {
    let heavy = MeasureSpec::isotropic_gaussian(vec![0.0], 4.0).unwrap();
    let light = base_spec();
    let h = chi2_divergence_probe(&heavy, sigma1(), &[5.0, 40.0]).unwrap();
    let l = chi2_divergence_probe(&light, sigma1(), &[5.0, 40.0]).unwrap();
    let (rh, rl) = (h[1] / h[0], l[1] / l[0]);
    verdict(
        9,
        "condition violation probe",
        rh > 10.0 && rl < 1.01,
        format!("beta=2: J(40)/J(5) = {rh:.4} (need > 10); beta=0.5: {rl:.6} (need < 1.01)"),
    );
}

#[test]
fn criterion_10_gp_sampler_fidelity() {
    let spec = base_spec();
    let grid = TensorGrid::for_measure(&spec, sigma1(), 1e-8, 200).unwrap();
    let model = build_gp(&spec, sigma1(), &grid, JITTER_START).unwrap();
    let count = 20_000;
    let m = model.nodes();
    let mut fields = DMatrix::zeros(m, count);
    for i in 0..count {
        fields.column_mut(i).copy_from_slice(&gp_draw(&model, derive_seed(10, &[i as u64])));
    }
    let mean = fields.column_mean();
    for mut c in fields.column_iter_mut() {
        c -= &mean;
    }
    let emp = &fields * fields.transpose() / (count as f64 - 1.0);
    let k = model.covariance();
    let kmax = (0..m).map(|j| k[(j, j)]).fold(0.0, f64::max);
    let tol = 5.0 * kmax / (count as f64).sqrt();
    let worst = (emp - k).abs().max();

    let mm = MultiplierModel::new(&spec, sigma1(), 4000, 12).unwrap();
    let a = limit_samples(&model, 10_000, 13);
    let b = multiplier_limit_samples(&mm, &model, 10_000, 14).unwrap();
    let ks = ks_statistic(&a.tv, &b.tv).unwrap();
    verdict(
        10,
        "GP sampler fidelity",
        worst <= tol && ks <= 0.05,
        format!("max |emp - K| = {worst:.3e} (tol {tol:.3e}); multiplier vs factor KS = {ks:.4}"),
    );
}

#[test]
fn criterion_11_mgf_equality_case() {
    let mut pass = true;
    let mut detail = String::new();
    for d in [1usize, 2] {
        let spec = MeasureSpec::isotropic_gaussian(vec![0.0; d], 0.25).unwrap();
        let r = &mgf_check(&spec, &[0.5], 11 + d as u64).unwrap()[0];
        let se = r.parameters["standard_error"];
        let target = 2f64.powf(d as f64 / 2.0);
        pass &= (r.lhs - target).abs() <= 3.0 * se && (r.rhs - target).abs() < 1e-12;
        detail += &format!(" d={d}: lhs {:.5} se {se:.5} target {target:.5};", r.lhs);
    }
    verdict(11, "MGF equality case", pass, detail);
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_12_cli_determinism() {
    let bin = env!("CARGO_BIN_EXE_smoothdiv-acceptance-cli");
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = tmp.path().join("gauss.toml");
    std::fs::write(&spec_path, base_spec().to_toml_string()).unwrap();
    let spec = spec_path.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("estimate", vec!["--n", "200"]),
        ("limit", vec!["--draws", "100", "--grid", "50"]),
        ("bounds", vec![]),
        ("check", vec![]),
        ("convergence", vec!["--n-grid", "20,40,80", "--reps", "20", "--draws", "200", "--grid", "1000"]),
        ("concentration", vec!["--n-grid", "50", "--reps", "50", "--grid", "1000"]),
    ];
    let mut pass = true;
    let mut detail = String::new();
    for (cmd, extra) in &commands {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{cmd}-{run}"));
            let status = Command::new(bin)
                .arg(cmd)
                .args(["--spec", spec, "--sigma", "1", "--seed", "42", "--workers", "1", "--out"])
                .arg(&out)
                .args(extra)
                .output()
                .unwrap();
            pass &= status.status.success();
            outputs.push((read_dir_bytes(&out), status.stdout));
        }
        let same = outputs[0] == outputs[1] && !outputs[0].0.is_empty();
        pass &= same;
        detail += &format!(" {cmd}: {} file(s) {};", outputs[0].0.len(), if same { "identical" } else { "DIFFER" });
    }
    verdict(12, "CLI determinism", pass, detail);
}
