//! Orchestration behind the `lagflow` binary: config loading, the
//! solve / barrier / verify pipeline and the standalone checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use lagflow::barriers::{
    build_envelopes_with_floor, default_w0, envelope_amplitude, integrate_barrier_ode_with, BarrierProfile, Branch, OdeSettings,
    ThetaParams,
};
use lagflow::kernels::random_convolution_cases;
use lagflow::problem::{Forcing, GridField, SpaceTimeGrid};
use lagflow::solver::{solve_with, SolverConfig, Stencil};
use lagflow::verify::{
    calibrate_decay_bound, chi_search, domination_report, error_field, fit_exponential_rate, fit_polynomial_rate,
    linearization_check, sandwich_check, RateFit,
};
use lagflow::SymMatrix;

pub use config::ExperimentConfig;
use config::{ChiSearchSpec, KernelCheckSpec, W0Policy};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SNAPSHOT_FILE: &str = "snapshots.csv";
pub const VERDICT_FILE: &str = "verdict.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const BARRIER_FILE: &str = "barrier.json";
pub const KERNEL_FILE: &str = "kernel_check.csv";
pub const CHI_FILE: &str = "chi_search.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] lagflow::Error),
}

impl CliError {
    pub(crate) fn from_json(e: serde_json::Error) -> Self {
        CliError::Config(format!("config parse error at line {}, column {}: {e}", e.line(), e.column()))
    }
}

/// Exit status of a completed command: 0 passed, 1 a check failed.
/// Errors exit with 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Passed
        } else {
            Status::Failed
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Status::Passed => 0,
            Status::Failed => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Max `|u - q|` over every time level.
    pub max_abs_error: f64,
    /// Max `|u - q|` over levels with `t <= -T`; absent when the forcing
    /// has no finite start time or the run begins after it.
    pub max_abs_error_before_forcing: Option<f64>,
    pub final_max_abs_error: f64,
    pub support_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub grid: SpaceTimeGrid,
    pub stencil: Stencil,
    pub nodes: usize,
    pub steps: usize,
    pub snapshot_file: String,
    pub snapshot_times: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
    pub wall_time_s: f64,
}

pub fn output_dir(cfg: Option<&ExperimentConfig>, out: Option<&Path>) -> PathBuf {
    match (out, cfg) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(c)) => c.output_dir.clone(),
        (None, None) => PathBuf::from("out"),
    }
}

/// Runs the solver, writing the snapshot CSV and the manifest.
pub fn solve_command(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let grid = cfg.grid()?;
    let q = cfg.quadratic()?;
    let mut solver = SolverConfig::quadratic(grid.clone(), &q)?;
    solver.stencil = cfg.grid.stencil;
    solver.snapshot_times = cfg.snapshot_times();
    let forcing = &cfg.problem.forcing;
    let support_time = forcing.support_time();

    let started = Instant::now();
    let eps = 1e-9 * grid.dt;
    let wanted = solver.snapshot_times.clone();
    let mut next = 0;
    let mut snaps = Vec::with_capacity(wanted.len());
    let mut max_err = 0.0f64;
    let mut before: Option<f64> = None;
    let mut final_err = 0.0;
    solve_with(&solver, forcing, |_, u| {
        let e = error_field(u, &q)?.max_abs();
        max_err = max_err.max(e);
        if u.t <= -support_time {
            before = Some(before.unwrap_or(0.0).max(e));
        }
        final_err = e;
        while next < wanted.len() && u.t >= wanted[next] - eps {
            snaps.push(u.clone());
            next += 1;
        }
        Ok(())
    })?;
    let wall = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    output::write_snapshots(&out.join(SNAPSHOT_FILE), &snaps)?;
    let manifest = RunManifest {
        name: cfg.name.clone(),
        nodes: grid.node_count(),
        steps: grid.step_count(),
        grid,
        stencil: solver.stencil,
        snapshot_file: SNAPSHOT_FILE.into(),
        snapshot_times: snaps.iter().map(|s| s.t).collect(),
        diagnostics: SolveDiagnostics {
            max_abs_error: max_err,
            max_abs_error_before_forcing: before,
            final_max_abs_error: final_err,
            support_time,
        },
        wall_time_s: wall,
    };
    output::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub branch: Branch,
    pub theta: f64,
    pub k: f64,
    pub m_value: f64,
    pub half_beta: f64,
    pub w0: f64,
    pub c_norm: f64,
    pub tail_power: f64,
    /// Log-log slope of `W - 1` over `[0.1 s_max, s_max]`.
    pub tail_slope: f64,
    pub table_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSummary {
    pub name: String,
    pub beta: f64,
    pub envelope_amplitude: f64,
    pub s0: f64,
    pub branches: Vec<BranchSummary>,
}

/// Sub- and supersolution profiles for the configured problem.
pub fn build_barriers(cfg: &ExperimentConfig) -> Result<(BarrierProfile, BarrierProfile), CliError> {
    let q = cfg.quadratic()?;
    let b = &cfg.barriers;
    let amp = envelope_amplitude(&cfg.problem.forcing, b.envelope_floor);
    let params = ThetaParams::for_profile(&q, b.theta_rule, b.beta, -amp)?;
    let env = build_envelopes_with_floor(&cfg.problem.forcing, &params, b.envelope_floor)?;
    let settings = OdeSettings { s_max: b.s_max, ..OdeSettings::default() };
    let build = |branch| -> Result<BarrierProfile, CliError> {
        let w0 = match b.w0 {
            W0Policy::Midpoint => default_w0(&params, &env, branch)?,
            W0Policy::Value(v) => v,
        };
        Ok(integrate_barrier_ode_with(&params, &env, w0, &settings, branch)?)
    };
    Ok((build(Branch::Sub)?, build(Branch::Super)?))
}

pub fn barrier_command(cfg: &ExperimentConfig, out: &Path) -> Result<(BarrierSummary, Status), CliError> {
    let (sub, sup) = build_barriers(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut branches = Vec::new();
    let mut pass = true;
    for prof in [&sub, &sup] {
        let file = match prof.branch {
            Branch::Sub => "barrier_sub.csv",
            Branch::Super => "barrier_super.csv",
        };
        output::write_barrier_table(&out.join(file), &prof.table()?)?;
        let p = &prof.params;
        pass &= p.m_value > 0.5 * p.beta;
        branches.push(BranchSummary {
            branch: prof.branch,
            theta: p.theta,
            k: p.k,
            m_value: p.m_value,
            half_beta: 0.5 * p.beta,
            w0: prof.w_at(0.0),
            c_norm: prof.c_norm,
            tail_power: prof.tail_power,
            tail_slope: prof.log_slope(0.1 * prof.s_max, prof.s_max, 40),
            table_file: file.into(),
        });
    }
    let summary = BarrierSummary {
        name: cfg.name.clone(),
        beta: cfg.barriers.beta,
        envelope_amplitude: sub.env.amplitude,
        s0: sub.env.s0,
        branches,
    };
    output::write_json(&out.join(BARRIER_FILE), &summary)?;
    Ok((summary, Status::from_pass(pass)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    pub metrics: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_kappa: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_fit: Option<RateFit>,
}

fn check(name: &str, passed: bool, metrics: serde_json::Value) -> CheckOutcome {
    CheckOutcome { check: name.into(), passed, metrics }
}

/// Reads the manifest and snapshots from `out` and runs the enabled checks.
pub fn verify_command(cfg: &ExperimentConfig, out: &Path) -> Result<(Verdict, Status), CliError> {
    let manifest: RunManifest = output::read_json(&out.join(MANIFEST_FILE))?;
    let grid = cfg.grid()?;
    if manifest.grid != grid {
        return Err(CliError::Config(format!("{} was produced on a different grid than the config describes", MANIFEST_FILE)));
    }
    let snaps = output::read_snapshots(&out.join(&manifest.snapshot_file), &grid)?;
    let q = cfg.quadratic()?;
    let errors: Vec<GridField> = snaps.iter().map(|u| error_field(u, &q)).collect::<Result<_, _>>()?;
    let checks = &cfg.checks;
    let diag = &manifest.diagnostics;
    let mut outcomes = Vec::new();
    let mut fitted_kappa = None;
    let mut rate_fit = None;

    if let Some(c) = &checks.exact {
        let snap_max = errors.iter().map(GridField::max_abs).fold(0.0, f64::max);
        let worst = diag.max_abs_error.max(snap_max);
        outcomes.push(check("exact", worst <= c.tol, json!({ "max_abs_error": worst, "tol": c.tol })));
    }
    if let Some(c) = &checks.rigidity {
        let outcome = match diag.max_abs_error_before_forcing {
            Some(worst) => check(
                "rigidity",
                worst <= c.tol,
                json!({ "max_abs_error_before_forcing": worst, "support_time": diag.support_time, "tol": c.tol }),
            ),
            None => check("rigidity", false, json!({ "reason": "no time level precedes the forcing", "tol": c.tol })),
        };
        outcomes.push(outcome);
    }
    let big_t = diag.support_time;
    let active: Vec<GridField> = errors.iter().filter(|e| e.t > -big_t + 1e-12).cloned().collect();
    if let Some(c) = &checks.exponential_rate {
        let annulus = c.annulus.unwrap_or_else(|| cfg.default_annulus());
        let (calib, held_out) = annulus.halves();
        let fit = fit_exponential_rate(&active, big_t, annulus)?;
        let a = q.a();
        let expected = SymMatrix::identity(a.dim()).add(&matmul_sym(a, a));
        let dev = fit.fitted_kappa.sub(&expected).max_abs() / expected.max_abs();
        let calib_fit = fit_exponential_rate(&active, big_t, calib)?;
        let model = calibrate_decay_bound(&active, &calib_fit, big_t, cfg.problem.forcing.support_radius(), calib)?;
        let dom = domination_report(&active, &model, held_out)?;
        let passed = dev <= c.kappa_tol && fit.residual_r2 >= c.r2_min && dom.fraction >= c.domination_min;
        outcomes.push(check(
            "exponential_rate",
            passed,
            json!({
                "annulus": annulus,
                "fitted_kappa": fit.fitted_kappa.to_rows(),
                "expected_kappa": expected.to_rows(),
                "relative_kappa_deviation": dev,
                "kappa_tol": c.kappa_tol,
                "residual_r2": fit.residual_r2,
                "r2_min": c.r2_min,
                "domination": dom,
                "domination_min": c.domination_min,
                "bound": model.bound,
            }),
        ));
        fitted_kappa = Some(fit.fitted_kappa.to_rows());
        rate_fit = Some(fit);
    }
    if let Some(c) = &checks.polynomial_rate {
        let outcome = match cfg.problem.forcing {
            Forcing::AlgebraicDecay { beta, .. } => {
                let slope = fit_polynomial_rate(&errors, c.annulus)?;
                let target = -(beta - 2.0);
                check(
                    "polynomial_rate",
                    (slope - target).abs() <= c.rel_tol * target.abs(),
                    json!({ "fitted_exponent": slope, "target": target, "rel_tol": c.rel_tol, "annulus": c.annulus }),
                )
            }
            _ => check("polynomial_rate", false, json!({ "reason": "needs an algebraic-decay forcing" })),
        };
        outcomes.push(outcome);
    }
    if let Some(c) = &checks.linearization {
        let annulus = c.annulus.unwrap_or_else(|| cfg.default_annulus());
        let rep = linearization_check(&active, q.a(), annulus, c.factor)?;
        outcomes.push(check(
            "linearization",
            rep.fraction >= c.min_fraction,
            json!({ "annulus": annulus, "report": rep, "min_fraction": c.min_fraction }),
        ));
    }
    if let Some(c) = &checks.sandwich {
        let (sub, sup) = build_barriers(cfg)?;
        let mut worst = 0.0f64;
        let mut checked = 0;
        for u in &snaps {
            let rep = sandwich_check(u, &sub, &sup, &q);
            worst = worst.max(rep.max_violation());
            checked += rep.checked;
        }
        outcomes.push(check("sandwich", worst <= c.tol, json!({ "checked": checked, "max_violation": worst, "tol": c.tol })));
    }

    output::write_diagnostics(&out.join(DIAGNOSTICS_FILE), &errors, cfg.default_annulus())?;
    let passed = outcomes.iter().all(|o| o.passed);
    let verdict = Verdict { name: cfg.name.clone(), passed, checks: outcomes, fitted_kappa, rate_fit };
    output::write_json(&out.join(VERDICT_FILE), &verdict)?;
    Ok((verdict, Status::from_pass(passed)))
}

fn matmul_sym(a: &SymMatrix, b: &SymMatrix) -> SymMatrix {
    let n = a.dim();
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            m.set(i, j, (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum());
        }
    }
    m
}

/// Solve, build barriers, verify.
pub fn run_command(cfg: &ExperimentConfig, out: &Path) -> Result<Status, CliError> {
    solve_command(cfg, out)?;
    let (_, barrier_status) = barrier_command(cfg, out)?;
    let (_, verify_status) = verify_command(cfg, out)?;
    Ok(Status::from_pass(barrier_status == Status::Passed && verify_status == Status::Passed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRow {
    pub case: usize,
    pub n: usize,
    pub kappa: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub sigma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

pub fn kernel_check_command(spec: &KernelCheckSpec, out: &Path) -> Result<(Vec<KernelRow>, Status), CliError> {
    let mut rows = Vec::new();
    for (i, case) in random_convolution_cases(spec.cases, spec.seed).into_iter().enumerate() {
        let (lhs, rhs) = case.check()?;
        rows.push(KernelRow {
            case: i,
            n: case.kappa.len(),
            rel_err: (lhs - rhs).abs() / rhs.abs(),
            kappa: case.kappa,
            alpha: case.alpha,
            beta: case.beta,
            x: case.x,
            y: case.y,
            t: case.t,
            sigma: case.sigma,
            lhs,
            rhs,
        });
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    output::write_kernel_rows(&out.join(KERNEL_FILE), &rows)?;
    let pass = rows.iter().all(|r| r.rel_err <= spec.rel_tol);
    Ok((rows, Status::from_pass(pass)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSummary {
    pub spec: ChiSearchSpec,
    pub result: lagflow::verify::ChiSearchResult,
}

pub fn chi_search_command(spec: &ChiSearchSpec, out: &Path) -> Result<(ChiSummary, Status), CliError> {
    let result = chi_search(spec.n, &spec.radii, spec.k_deg, spec.alpha_deg, spec.samples, spec.seed)?;
    let pass = result.witness.is_some() && result.reports.iter().all(|r| r.min_value > 0.0);
    let summary = ChiSummary { spec: spec.clone(), result };
    std::fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    output::write_json(&out.join(CHI_FILE), &summary)?;
    Ok((summary, Status::from_pass(pass)))
}
