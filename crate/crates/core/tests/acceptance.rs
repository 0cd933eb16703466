//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lagflow::barriers::{
    barrier_residual, blowup_curve, build_envelopes, default_w0, envelope_amplitude, integrate_barrier_ode, invert_f1, Branch,
    ThetaParams, ThetaRule, DEFAULT_ENVELOPE_FLOOR,
};
use lagflow::kernels::random_convolution_cases;
use lagflow::problem::{bump_profile, eval_quadratic, Forcing, GridField, QuadraticProfile, SpaceTimeGrid};
use lagflow::solver::{solve_with, SolverConfig};
use lagflow::verify::{
    calibrate_decay_bound, chi_search, domination_report, error_field, fit_exponential_rate, fit_polynomial_rate,
    linearization_check, ordering_check, Annulus,
};
use lagflow::{Error, SymMatrix};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome, Error> {
    Ok(Outcome { pass, detail })
}

fn bump() -> Forcing {
    Forcing::CompactBump { center: vec![0.0, 0.0], radius: 1.0, amplitude: 1.0, support_time: 1.0 }
}

fn rigidity() -> Result<Outcome, Error> {
    let mut worst = 0.0f64;
    for rows in [
        vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![0.0, 3.0]],
        vec![vec![2.0, 1.0], vec![1.0, 2.0]],
    ] {
        let q = QuadraticProfile::new(SymMatrix::from_rows(&rows)?, vec![0.3, -0.2], 0.5)?;
        let h = 0.1;
        let dt = 0.9 * h * h / 4.0;
        let grid = SpaceTimeGrid::new(2, 4.0, h, -1000.0 * dt, 0.0, dt)?;
        assert_eq!(grid.per_axis(), 81);
        assert_eq!(grid.step_count(), 1000);
        let cfg = SolverConfig::quadratic(grid, &q)?;
        solve_with(&cfg, &Forcing::Zero, |_, u| {
            worst = worst.max(error_field(u, &q)?.max_abs());
            Ok(())
        })?;
    }
    outcome(worst <= 1e-9, format!("max nodewise error {worst:.2e} over 1000 steps on 81x81, 4 profiles"))
}

fn convolution() -> Result<Outcome, Error> {
    let mut worst = 0.0f64;
    for case in random_convolution_cases(20, 2024) {
        let (quad, closed) = case.check()?;
        worst = worst.max((quad - closed).abs() / closed.abs());
    }
    outcome(worst <= 1e-6, format!("20 cases, worst relative error {worst:.2e}"))
}

fn barrier_asymptotics() -> Result<Outcome, Error> {
    let q = QuadraticProfile::zero(2);
    let f = bump();
    let amp = envelope_amplitude(&f, DEFAULT_ENVELOPE_FLOOR);
    let mut pass = true;
    let mut parts = Vec::new();
    for beta in [3.0, 4.0] {
        let p = ThetaParams::for_profile(&q, ThetaRule::RateCorrected, beta, -amp)?;
        let env = build_envelopes(&f, &p)?;
        for branch in [Branch::Sub, Branch::Super] {
            let prof = integrate_barrier_ode(&p, &env, default_w0(&p, &env, branch)?, 1e4, branch)?;
            let mut trapped = true;
            for (&s, &phi) in prof.s.iter().zip(&prof.phi) {
                let w = 1.0 + phi;
                let (edge, blow) = (invert_f1(&p, &env, s, branch)?, blowup_curve(&p, &env, s, branch));
                trapped &= match branch {
                    Branch::Sub => edge < w && w < blow,
                    Branch::Super => blow < w && w < edge,
                };
            }
            let slope = prof.log_slope(1e2, 1e4, 60);
            let ok = trapped && (slope + 0.5 * beta).abs() <= 0.1 * 0.5 * beta;
            pass &= ok;
            parts.push(format!("beta={beta} {branch:?} slope {slope:.4}{}", if trapped { "" } else { " (escaped)" }));
        }
    }
    outcome(pass, parts.join(", "))
}

fn residuals() -> Result<Outcome, Error> {
    let f = bump();
    let amp = envelope_amplitude(&f, DEFAULT_ENVELOPE_FLOOR);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut sub_min, mut sup_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in [[0.0, 0.0], [1.0, 3.0]] {
        let q = QuadraticProfile::new(SymMatrix::from_diag(&a), vec![0.0, 0.0], 0.0)?;
        let p = ThetaParams::for_profile(&q, ThetaRule::default(), 3.0, -amp)?;
        let env = build_envelopes(&f, &p)?;
        let sub = integrate_barrier_ode(&p, &env, default_w0(&p, &env, Branch::Sub)?, 1e4, Branch::Sub)?;
        let sup = integrate_barrier_ode(&p, &env, default_w0(&p, &env, Branch::Super)?, 1e4, Branch::Super)?;
        for _ in 0..1000 {
            let y = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
            let t = rng.gen_range(-2.0..0.0);
            sub_min = sub_min.min(barrier_residual(&sub, &y, t, &f)?);
            sup_max = sup_max.max(barrier_residual(&sup, &y, t, &f)?);
        }
    }
    outcome(sub_min >= -1e-8 && sup_max <= 1e-8, format!("min sub residual {sub_min:.3e}, max super residual {sup_max:.3e}"))
}

/// Bump run shared by the exponential-rate and linearization criteria.
struct BumpRun {
    errors: Vec<GridField>,
    rigid_max: f64,
}

fn bump_run() -> Result<BumpRun, Error> {
    let q = QuadraticProfile::zero(2);
    let grid = SpaceTimeGrid::with_cfl(2, 8.0, 0.1, -1.5, 0.0, 0.9)?;
    let cfg = SolverConfig::quadratic(grid.clone(), &q)?;
    let stride = (0.05 / grid.dt).round() as usize;
    let mut errors = Vec::new();
    let mut rigid_max = 0.0f64;
    let last = grid.step_count();
    solve_with(&cfg, &bump(), |k, u| {
        let e = error_field(u, &q)?;
        if u.t <= -1.0 {
            rigid_max = rigid_max.max(e.max_abs());
        } else if k % stride == 0 || k == last {
            errors.push(e);
        }
        Ok(())
    })?;
    Ok(BumpRun { errors, rigid_max })
}

fn exponential_rate(run: &BumpRun) -> Result<Outcome, Error> {
    let annulus = Annulus { inner: 4.0, outer: 6.0 };
    let (calib, held_out) = annulus.halves();
    let fit = fit_exponential_rate(&run.errors, 1.0, annulus)?;
    let kappa_err = fit.fitted_kappa.sub(&SymMatrix::identity(2)).max_abs();
    let calib_fit = fit_exponential_rate(&run.errors, 1.0, calib)?;
    let model = calibrate_decay_bound(&run.errors, &calib_fit, 1.0, 1.0, calib)?;
    let dom = domination_report(&run.errors, &model, held_out)?;
    let pass = kappa_err <= 0.25 && fit.residual_r2 >= 0.95 && dom.fraction >= 0.99 && run.rigid_max <= 1e-9;
    outcome(
        pass,
        format!(
            "kappa {:?} (max dev {kappa_err:.3}), R^2 {:.4}, held-out domination {:.4} of {}, max|E| for t<=-T {:.1e}",
            fit.fitted_kappa.to_rows().iter().map(|r| r.iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>()).collect::<Vec<_>>(),
            fit.residual_r2,
            dom.fraction,
            dom.checked,
            run.rigid_max
        ),
    )
}

fn polynomial_rate() -> Result<Outcome, Error> {
    let beta = 3.0;
    let q = QuadraticProfile::zero(2);
    let grid = SpaceTimeGrid::with_cfl(2, 32.0, 0.5, -400.0, 0.0, 0.9)?;
    let cfg = SolverConfig::quadratic(grid.clone(), &q)?;
    let mut sup = GridField::from_fn(&grid, 0.0, |_| 0.0);
    solve_with(&cfg, &Forcing::AlgebraicDecay { amplitude: 1.0, beta }, |_, u| {
        for (s, e) in sup.values.iter_mut().zip(&error_field(u, &q)?.values) {
            *s = s.max(e.abs());
        }
        Ok(())
    })?;
    let slope = fit_polynomial_rate(&[sup], Annulus { inner: 3.0, outer: 8.0 })?;
    let target = -(beta - 2.0);
    outcome((slope - target).abs() <= 0.2 * target.abs(), format!("fitted exponent {slope:.4} vs {target}"))
}

fn comparison_principle() -> Result<Outcome, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let grid = SpaceTimeGrid::with_cfl(2, 1.0, 0.1, -0.1, 0.0, 1.0)?;
    let (mut violations, mut comparisons) = (0usize, 0usize);
    for _ in 0..50 {
        let (a11, a12, a22) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let a = SymMatrix::from_rows(&[vec![a11, a12], vec![a12, a22]])?;
        let q = QuadraticProfile::new(a, vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], 0.0)?;
        let mut lo = SolverConfig::quadratic(grid.clone(), &q)?;
        let noise: Vec<f64> = (0..grid.node_count()).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let gap: Vec<f64> = (0..grid.node_count()).map(|_| rng.gen_range(0.0..0.1)).collect();
        let centre = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let lift = rng.gen_range(0.0..0.5);
        lo.initial = GridField::from_fn(&grid, grid.t_start, |x| eval_quadratic(&q, x, grid.t_start));
        for (v, e) in lo.initial.values.iter_mut().zip(&noise) {
            *v += e;
        }
        let mut hi = lo.clone();
        for (i, v) in hi.initial.values.iter_mut().enumerate() {
            let x = grid.point(i);
            let r = ((x[0] - centre[0]).powi(2) + (x[1] - centre[1]).powi(2)).sqrt();
            *v += gap[i] + lift * bump_profile(r / 0.6);
        }
        let rep = ordering_check(&lo, &hi, &bump(), &bump())?;
        violations += rep.violations;
        comparisons += rep.comparisons;
    }
    outcome(violations == 0, format!("{violations} violations in {comparisons} nodewise comparisons over 50 pairs"))
}

fn chi_witness() -> Result<Outcome, Error> {
    let res = chi_search(2, &[10.0, 100.0], 1.0, 0.5, 10_000, 9)?;
    let mins: Vec<String> = res.reports.iter().map(|r| format!("R={} min A {:.3e}", r.params.r, r.min_value)).collect();
    let pass = res.witness.is_some() && res.reports.iter().all(|r| r.samples == 10_000 && r.min_value > 0.0);
    outcome(pass, format!("witness (c,k,beta) = {:?}; {}; {} candidates", res.witness, mins.join(", "), res.candidates_tried))
}

fn linearization(run: &BumpRun) -> Result<Outcome, Error> {
    let rep = linearization_check(&run.errors, &SymMatrix::zeros(2), Annulus { inner: 4.0, outer: 6.0 }, 10.0)?;
    outcome(rep.fraction >= 0.99, format!("{:.4} of {} far-field nodes, worst ratio {:.2e}", rep.fraction, rep.sampled, rep.worst_ratio))
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Result<Outcome, Error>) -> bool {
    let start = Instant::now();
    let res = f();
    let took = start.elapsed();
    let (pass, detail) = match res {
        Ok(o) => (o.pass && took <= limit, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {verdict} ({detail}; {:.2}s of {}s)", took.as_secs_f64(), limit.as_secs());
    pass
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= report(1, "quadratic rigidity", secs(30), rigidity);
    all &= report(2, "convolution identity", secs(60), convolution);
    all &= report(3, "barrier ODE asymptotics", secs(10), barrier_asymptotics);
    all &= report(4, "barrier residual signs", secs(10), residuals);
    let start = Instant::now();
    let run = bump_run();
    let run_time = start.elapsed();
    match run {
        Ok(run) => {
            all &= report(5, "exponential rate fit", secs(300) - run_time, || exponential_rate(&run));
            all &= report(6, "polynomial rate fit", secs(300), polynomial_rate);
            all &= report(7, "discrete comparison", secs(60), comparison_principle);
            all &= report(8, "chi_R supersolution witness", secs(60), chi_witness);
            all &= report(9, "linearized coefficients", secs(30), || linearization(&run));
        }
        Err(e) => {
            println!("bump run failed: {e}");
            all = false;
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
