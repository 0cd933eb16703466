//! Checks run against solver output: error fields, decay-rate fits, bound
//! domination, barrier sandwiches, discrete ordering, the `chi_R` comparison
//! barrier and the linearized coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::barriers::{untranslated_barrier, BarrierProfile};
use crate::kernels::{eval_decay_bound, DecayBound, KappaForm};
use crate::problem::{eval_quadratic, Forcing, GridField, QuadraticProfile};
use crate::quadrature::gauss_legendre;
use crate::solver::{hessian_at, step_with, Scheme, SolverConfig};
use crate::spectral::{eigh, lag_operator_derivative, SymMatrix};
use crate::Error;

/// `|E|` below this is treated as round-off and kept out of log fits.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annulus {
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    pub fn contains(&self, x: &[f64]) -> bool {
        let r = norm(x);
        r >= self.inner && r <= self.outer
    }

    /// Inner and outer halves, split at the mean radius.
    pub fn halves(&self) -> (Annulus, Annulus) {
        let mid = 0.5 * (self.inner + self.outer);
        (Annulus { inner: self.inner, outer: mid }, Annulus { inner: mid, outer: self.outer })
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `E = u - (tau t + x.A x/2 + b.x + c)` nodewise.
pub fn error_field(u: &GridField, q: &QuadraticProfile) -> Result<GridField, Error> {
    if q.dim() != u.grid.n || u.values.len() != u.grid.node_count() {
        return Err(Error::InvalidInput(format!("profile of dimension {} does not match the grid", q.dim())));
    }
    let values = u.values.iter().enumerate().map(|(i, v)| v - eval_quadratic(q, &u.grid.point(i), u.t)).collect();
    Ok(GridField { grid: u.grid.clone(), t: u.t, values })
}

/// Weighted least squares by Householder QR on column-scaled rows.
fn least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<Vec<f64>, Error> {
    let m = rows.len();
    let p = rows.first().map_or(0, |r| r.len());
    if m < p + 1 {
        return Err(Error::InsufficientData(format!("{m} samples for {p} parameters")));
    }
    let mut a: Vec<Vec<f64>> = rows.iter().zip(w).map(|(r, wi)| r.iter().map(|v| v * wi.sqrt()).collect()).collect();
    let mut b: Vec<f64> = y.iter().zip(w).map(|(v, wi)| v * wi.sqrt()).collect();
    let scale: Vec<f64> = (0..p).map(|j| a.iter().map(|r| r[j] * r[j]).sum::<f64>().sqrt().max(f64::MIN_POSITIVE)).collect();
    for r in a.iter_mut() {
        for j in 0..p {
            r[j] /= scale[j];
        }
    }
    for j in 0..p {
        let col_norm = (j..m).map(|i| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        if col_norm < 1e-12 {
            return Err(Error::InsufficientData(format!("design column {j} is degenerate")));
        }
        let alpha = if a[j][j] > 0.0 { -col_norm } else { col_norm };
        let mut v: Vec<f64> = (j..m).map(|i| a[i][j]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        for k in j..p {
            let dot: f64 = (j..m).map(|i| v[i - j] * a[i][k]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                a[i][k] -= f * v[i - j];
            }
        }
        let dot: f64 = (j..m).map(|i| v[i - j] * b[i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in j..m {
            b[i] -= f * v[i - j];
        }
    }
    let mut x = vec![0.0; p];
    for j in (0..p).rev() {
        let s: f64 = (j + 1..p).map(|k| a[j][k] * x[k]).sum();
        x[j] = (b[j] - s) / a[j][j];
    }
    Ok(x.iter().zip(&scale).map(|(v, s)| v / s).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub fitted_kappa: SymMatrix,
    #[serde(rename = "fitted_C")]
    pub fitted_c: f64,
    #[serde(rename = "fitted_S")]
    pub fitted_s: f64,
    /// Exponent `p` in the prefactor `(t+T)^(-p)`.
    pub fitted_power: f64,
    pub residual_r2: f64,
    pub samples: usize,
}

struct Sample {
    x: Vec<f64>,
    lag: f64,
    log_e: f64,
}

fn collect_samples(fields: &[GridField], big_t: f64, annulus: Annulus) -> Vec<Sample> {
    let mut out = Vec::new();
    for field in fields {
        let lag = field.t + big_t;
        if !(lag > 0.0) {
            continue;
        }
        for (i, &e) in field.values.iter().enumerate() {
            let x = field.grid.point(i);
            if e.abs() > LOG_FLOOR && annulus.contains(&x) {
                out.push(Sample { x, lag, log_e: e.abs().ln() });
            }
        }
    }
    out
}

/// Fits `log|E| = log C - p log(t+T) - (x.Kx - S|Kx|) / (4(t+T))` over the
/// annulus and all levels with `t > -T`. The `S|Kx|` term is linearized
/// around the previous `K` and iterated.
pub fn fit_exponential_rate(fields: &[GridField], big_t: f64, annulus: Annulus) -> Result<RateFit, Error> {
    let samples = collect_samples(fields, big_t, annulus);
    let n = fields.first().map_or(0, |f| f.grid.n);
    let mut lags: Vec<f64> = samples.iter().map(|s| s.lag).collect();
    lags.sort_by(f64::total_cmp);
    lags.dedup();
    let free_power = lags.len() >= 3;
    let fixed_power = 0.5 * n as f64 - 2.0;
    let quad_terms = n * (n + 1) / 2;
    let y: Vec<f64> = samples
        .iter()
        .map(|s| -4.0 * s.lag * (s.log_e + if free_power { 0.0 } else { fixed_power * s.lag.ln() }))
        .collect();
    let w: Vec<f64> = samples.iter().map(|s| 1.0 / (s.lag * s.lag)).collect();
    let design = |s: &Sample, k_prev: Option<&SymMatrix>| {
        let mut row = Vec::with_capacity(quad_terms + 3);
        for i in 0..n {
            for j in 0..=i {
                row.push(if i == j { s.x[i] * s.x[i] } else { 2.0 * s.x[i] * s.x[j] });
            }
        }
        if let Some(k) = k_prev {
            row.push(-norm(&k.mul_vec(&s.x)));
        }
        row.push(-4.0 * s.lag);
        if free_power {
            row.push(4.0 * s.lag * s.lag.ln());
        }
        row
    };
    let unpack = |coef: &[f64]| SymMatrix::from_lower(n, coef[..quad_terms].to_vec());
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| design(s, None)).collect();
    let mut coef = least_squares(&rows, &y, &w)?;
    let mut kappa = unpack(&coef)?;
    let mut s_tilde = 0.0;
    for _ in 0..100 {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| design(s, Some(&kappa))).collect();
        coef = least_squares(&rows, &y, &w)?;
        let next = unpack(&coef)?;
        let change = next.sub(&kappa).max_abs();
        kappa = next;
        s_tilde = coef[quad_terms];
        if change < 1e-12 * kappa.max_abs() {
            break;
        }
    }
    if eigh(&kappa)?.values[0] <= 0.0 {
        return Err(Error::Consistency(format!("fitted kappa {:?} is not positive definite", kappa.to_rows())));
    }
    let rows: Vec<Vec<f64>> = samples.iter().map(|s| design(s, Some(&kappa))).collect();
    let (mut ss_res, mut ss_tot, mut wsum, mut ybar) = (0.0, 0.0, 0.0, 0.0);
    for (yi, wi) in y.iter().zip(&w) {
        ybar += wi * yi;
        wsum += wi;
    }
    ybar /= wsum;
    for ((row, yi), wi) in rows.iter().zip(&y).zip(&w) {
        let pred: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
        ss_res += wi * (yi - pred).powi(2);
        ss_tot += wi * (yi - ybar).powi(2);
    }
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 0.0 };
    let log_c = coef[quad_terms + 1];
    let fitted_power = if free_power { coef[quad_terms + 2] } else { fixed_power };
    Ok(RateFit { fitted_kappa: kappa, fitted_c: log_c.exp(), fitted_s: s_tilde, fitted_power, residual_r2: r2, samples: samples.len() })
}

/// Log-log slope of `sup_t |E(x, .)|` against `|x|` over the annulus.
pub fn fit_polynomial_rate(fields: &[GridField], annulus: Annulus) -> Result<f64, Error> {
    let first = fields.first().ok_or_else(|| Error::InsufficientData("no fields".into()))?;
    let g = &first.grid;
    let mut sup = vec![0.0f64; g.node_count()];
    for f in fields {
        for (s, v) in sup.iter_mut().zip(&f.values) {
            *s = s.max(v.abs());
        }
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (i, &s) in sup.iter().enumerate() {
        let x = g.point(i);
        if s > LOG_FLOOR && annulus.contains(&x) {
            rows.push(vec![norm(&x).ln(), 1.0]);
            y.push(s.ln());
        }
    }
    let w = vec![1.0; y.len()];
    Ok(least_squares(&rows, &y, &w)?[0])
}

/// A [`DecayBound`] evaluated in the eigenframe of a fitted kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub bound: DecayBound,
    /// Row-major eigenvectors (columns) of the fitted kappa.
    pub basis: Vec<f64>,
}

impl DecayModel {
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, Error> {
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|k| (0..n).map(|i| self.basis[i * n + k] * x[i]).sum()).collect();
        eval_decay_bound(&self.bound, &y, t)
    }
}

/// Bound with the fitted kappa, `S~ = max(fitted_S, s_min)`, the literal
/// prefactor power `n/2 - 2`, and the smallest `C` dominating every usable
/// node of `annulus`.
pub fn calibrate_decay_bound(fields: &[GridField], fit: &RateFit, big_t: f64, s_min: f64, annulus: Annulus) -> Result<DecayModel, Error> {
    let e = eigh(&fit.fitted_kappa)?;
    let mut model = DecayModel {
        bound: DecayBound { kappa: KappaForm::new(e.values.clone())?, s_tilde: fit.fitted_s.max(s_min), c_fit: 1.0, big_t },
        basis: e.vectors,
    };
    let mut c = 0.0f64;
    for s in collect_samples(fields, big_t, annulus) {
        c = c.max(s.log_e.exp() / model.eval(&s.x, s.lag - big_t)?);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InsufficientData("no usable calibration nodes".into()));
    }
    model.bound.c_fit = c;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub checked: usize,
    pub dominated: usize,
    pub fraction: f64,
    pub worst_ratio: f64,
}

pub fn domination_report(fields: &[GridField], model: &DecayModel, annulus: Annulus) -> Result<DominationReport, Error> {
    let big_t = model.bound.big_t;
    let (mut checked, mut dominated, mut worst) = (0usize, 0usize, 0.0f64);
    for s in collect_samples(fields, big_t, annulus) {
        let ratio = s.log_e.exp() / model.eval(&s.x, s.lag - big_t)?;
        checked += 1;
        if ratio <= 1.0 {
            dominated += 1;
        }
        worst = worst.max(ratio);
    }
    if checked == 0 {
        return Err(Error::InsufficientData("no held-out nodes above the floor".into()));
    }
    Ok(DominationReport { checked, dominated, fraction: dominated as f64 / checked as f64, worst_ratio: worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub levels: usize,
    pub max_abs_error: f64,
}

/// Largest `|E|` over all levels with `t <= -T`.
pub fn rigidity_report(errors: &[GridField], big_t: f64) -> RigidityReport {
    let early: Vec<&GridField> = errors.iter().filter(|e| e.t <= -big_t + 1e-12).collect();
    RigidityReport { levels: early.len(), max_abs_error: early.iter().map(|e| e.max_abs()).fold(0.0, f64::max) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxReport {
    pub levels: usize,
    pub violations: usize,
    /// Largest `|x_max - center| - (S + const sqrt(t+T))` seen.
    pub worst_excess: f64,
}

/// Whether the maximizer of `|E|` stays within `|x - center| <= S + c sqrt(t+T)`.
pub fn argmax_report(errors: &[GridField], center: &[f64], support_radius: f64, big_t: f64, cone: f64) -> ArgmaxReport {
    let mut report = ArgmaxReport { levels: 0, violations: 0, worst_excess: f64::NEG_INFINITY };
    for e in errors.iter().filter(|e| e.t > -big_t && e.max_abs() > LOG_FLOOR) {
        let (idx, _) = e.values.iter().enumerate().fold((0, -1.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        let x = e.grid.point(idx);
        let dist = norm(&x.iter().zip(center).map(|(a, b)| a - b).collect::<Vec<_>>());
        let excess = dist - (support_radius + cone * (e.t + big_t).sqrt());
        report.levels += 1;
        report.worst_excess = report.worst_excess.max(excess);
        if excess > 0.0 {
            report.violations += 1;
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub checked: usize,
    /// `max(sub - u)`; positive values are violations.
    pub worst_below_sub: f64,
    /// `max(u - super)`; positive values are violations.
    pub worst_above_super: f64,
}

impl SandwichReport {
    pub fn max_violation(&self) -> f64 {
        self.worst_below_sub.max(self.worst_above_super).max(0.0)
    }
}

/// Compares `u` with both barriers. The shifts `u + K|x|^2/2 - Theta t` and
/// removal of `b.x + c` are applied to the barriers instead of `u`.
pub fn sandwich_check(u: &GridField, sub: &BarrierProfile, sup: &BarrierProfile, q: &QuadraticProfile) -> SandwichReport {
    let mut r = SandwichReport { checked: 0, worst_below_sub: f64::NEG_INFINITY, worst_above_super: f64::NEG_INFINITY };
    for (i, &v) in u.values.iter().enumerate() {
        let x = u.grid.point(i);
        r.worst_below_sub = r.worst_below_sub.max(untranslated_barrier(sub, q, &x, u.t) - v);
        r.worst_above_super = r.worst_above_super.max(v - untranslated_barrier(sup, q, &x, u.t));
        r.checked += 1;
    }
    r
}

/// Constants of `A[w] = w_t - K (tr(D^2 w)^+)^alpha` and of
/// `chi_R = R^beta ((1+R^2)^(1/2) (1 - ct) - (1+|x|^2)^(1/2))^(-k)` on
/// `D(c,R) = {0 <= t, ct < 1/2, (1+|x|^2)^(1/2) < (1+R^2)^(1/2)(1-ct)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonBarrierParams {
    pub k_deg: f64,
    pub alpha_deg: f64,
    pub c: f64,
    pub k: f64,
    pub beta_chi: f64,
    pub r: f64,
}

impl ComparisonBarrierParams {
    pub fn validate(&self) -> Result<(), Error> {
        let ok = self.k_deg > 0.0
            && self.alpha_deg > 0.0
            && self.alpha_deg < 1.0
            && self.c > 0.0
            && self.k > self.beta_chi
            && self.beta_chi > 0.0
            && self.r > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("comparison barrier parameters out of range: {self:?}")))
        }
    }

    fn gap(&self, x: &[f64], t: f64) -> f64 {
        (1.0 + self.r * self.r).sqrt() * (1.0 - self.c * t) - (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn in_domain(&self, x: &[f64], t: f64) -> bool {
        t >= 0.0 && self.c * t < 0.5 && self.gap(x, t) > 0.0
    }
}

/// `(chi, chi_t, tr D^2 chi)` from closed-form derivatives.
pub fn chi_derivatives(p: &ComparisonBarrierParams, x: &[f64], t: f64) -> Result<(f64, f64, f64), Error> {
    if !p.in_domain(x, t) {
        return Err(Error::Domain(format!("({x:?}, {t}) is outside D(c, R)")));
    }
    let n = x.len() as f64;
    let z = p.gap(x, t);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let rho = (1.0 + r2).sqrt();
    let rho_r = (1.0 + p.r * p.r).sqrt();
    let scale = p.r.powf(p.beta_chi);
    let chi = scale * z.powf(-p.k);
    let chi_t = p.k * p.c * rho_r * scale * z.powf(-p.k - 1.0);
    let trace = p.k
        * scale
        * ((p.k + 1.0) * z.powf(-p.k - 2.0) * r2 / (rho * rho) + z.powf(-p.k - 1.0) * (n / rho - r2 / (rho * rho * rho)));
    Ok((chi, chi_t, trace))
}

pub fn chi_value(p: &ComparisonBarrierParams, x: &[f64], t: f64) -> Result<f64, Error> {
    Ok(chi_derivatives(p, x, t)?.0)
}

/// `A[chi_R](x, t)`.
pub fn comparison_operator(p: &ComparisonBarrierParams, x: &[f64], t: f64) -> Result<f64, Error> {
    let (_, chi_t, trace) = chi_derivatives(p, x, t)?;
    Ok(chi_t - p.k_deg * trace.max(0.0).powf(p.alpha_deg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub params: ComparisonBarrierParams,
    pub samples: usize,
    pub min_value: f64,
    pub argmin_x: Vec<f64>,
    pub argmin_t: f64,
    pub passed: bool,
}

/// Samples `D(c,R)` with `t` uniform in `[0, 1/(2c))` and `|x|` uniform up to
/// the lateral boundary, so the blow-up layer is well represented.
pub fn comparison_barrier_check(p: &ComparisonBarrierParams, n: usize, sample_count: usize, seed: u64) -> Result<ComparisonReport, Error> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_r = (1.0 + p.r * p.r).sqrt();
    let mut report =
        ComparisonReport { params: *p, samples: 0, min_value: f64::INFINITY, argmin_x: vec![0.0; n], argmin_t: 0.0, passed: false };
    while report.samples < sample_count {
        let t = rng.gen_range(0.0..0.5 / p.c);
        let edge = rho_r * (1.0 - p.c * t);
        let r_max = (edge * edge - 1.0).max(0.0).sqrt();
        let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = norm(&dir);
        if !(1e-3..=1.0).contains(&len) {
            continue;
        }
        let r = r_max * rng.gen::<f64>();
        dir.iter_mut().for_each(|v| *v *= r / len);
        if !p.in_domain(&dir, t) {
            continue;
        }
        let a = comparison_operator(p, &dir, t)?;
        report.samples += 1;
        if a < report.min_value {
            report.min_value = a;
            report.argmin_x = dir;
            report.argmin_t = t;
        }
    }
    report.passed = report.min_value > 0.0;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSearchResult {
    /// `(c, k, beta_chi)` of the witness.
    pub witness: Option<[f64; 3]>,
    pub reports: Vec<ComparisonReport>,
    pub candidates_tried: usize,
}

/// Coarse grid over `(c, k, beta_chi)`, then a local refinement around the
/// best coarse triple. A triple counts when `min A[chi_R] > 0` for every radius;
/// among those the largest worst-case minimum (relative to `chi_t` scale
/// `R^(beta-k)`) wins, ties broken lexicographically.
pub fn chi_search(n: usize, radii: &[f64], k_deg: f64, alpha_deg: f64, sample_count: usize, seed: u64) -> Result<ChiSearchResult, Error> {
    let score = |c: f64, k: f64, b: f64| -> Result<Option<(f64, Vec<ComparisonReport>)>, Error> {
        let mut worst = f64::INFINITY;
        let mut reps = Vec::new();
        for &r in radii {
            let p = ComparisonBarrierParams { k_deg, alpha_deg, c, k, beta_chi: b, r };
            if p.validate().is_err() {
                return Ok(None);
            }
            let rep = comparison_barrier_check(&p, n, sample_count, seed)?;
            worst = worst.min(rep.min_value / r.powf(b - k));
            reps.push(rep);
        }
        Ok(Some((worst, reps)))
    };
    let mut tried = 0;
    let mut best: Option<([f64; 3], f64, Vec<ComparisonReport>)> = None;
    let mut consider = |triple: [f64; 3], best: &mut Option<([f64; 3], f64, Vec<ComparisonReport>)>| -> Result<(), Error> {
        tried += 1;
        if let Some((s, reps)) = score(triple[0], triple[1], triple[2])? {
            let better = match best {
                None => true,
                Some((bt, bs, _)) => s > *bs || (s == *bs && triple < *bt),
            };
            if better {
                *best = Some((triple, s, reps));
            }
        }
        Ok(())
    };
    let cs = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0];
    let betas = [0.25, 0.5, 1.0, 2.0];
    let gaps = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5];
    for &c in &cs {
        for &b in &betas {
            for &g in &gaps {
                consider([c, b + g, b], &mut best)?;
            }
        }
    }
    if let Some((centre, _, _)) = best.clone() {
        for fc in [0.7, 0.85, 1.0, 1.2, 1.4] {
            for fb in [0.8, 1.0, 1.25] {
                for fg in [0.8, 1.0, 1.25] {
                    let (c, b) = (centre[0] * fc, centre[2] * fb);
                    consider([c, b + (centre[1] - centre[2]) * fg, b], &mut best)?;
                }
            }
        }
    }
    Ok(match best {
        Some((triple, s, reps)) if s > 0.0 => ChiSearchResult { witness: Some(triple), reports: reps, candidates_tried: tried },
        Some((_, _, reps)) => ChiSearchResult { witness: None, reports: reps, candidates_tried: tried },
        None => ChiSearchResult { witness: None, reports: Vec::new(), candidates_tried: tried },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub step: usize,
    pub t: f64,
    pub node: Vec<usize>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub steps: usize,
    pub comparisons: usize,
    pub violations: usize,
    pub first_violation: Option<OrderingViolation>,
}

/// Runs both configurations in lockstep and checks `lower <= upper` at every
/// node of every level, including the initial one.
pub fn ordering_check(lower: &SolverConfig, upper: &SolverConfig, f_lower: &Forcing, f_upper: &Forcing) -> Result<OrderingReport, Error> {
    lower.validate()?;
    upper.validate()?;
    if lower.grid != upper.grid || lower.stencil != upper.stencil {
        return Err(Error::InvalidInput("ordering check needs identical grids and stencils".into()));
    }
    let g = &lower.grid;
    let scheme = Scheme::new(g, lower.stencil);
    let mut report = OrderingReport { steps: 0, comparisons: 0, violations: 0, first_violation: None };
    let mut u = lower.initial.clone();
    let mut v = upper.initial.clone();
    u.t = g.t_start;
    v.t = g.t_start;
    let compare = |k: usize, u: &GridField, v: &GridField, report: &mut OrderingReport| {
        for (i, (a, b)) in u.values.iter().zip(&v.values).enumerate() {
            report.comparisons += 1;
            if a > b {
                report.violations += 1;
                if report.first_violation.is_none() {
                    report.first_violation = Some(OrderingViolation { step: k, t: u.t, node: g.multi_index(i), gap: b - a });
                }
            }
        }
    };
    compare(0, &u, &v, &mut report);
    for k in 1..=g.step_count() {
        let t = g.time_at(k);
        u = step_with(&scheme, &u, t, f_lower, &lower.boundary)?;
        v = step_with(&scheme, &v, t, f_upper, &upper.boundary)?;
        compare(k, &u, &v, &mut report);
        report.steps = k;
    }
    Ok(report)
}

/// `int_0^1 DF(A + theta D^2 E) d theta` by 8-point Gauss-Legendre, written
/// as `DF(A)` plus the quadrature of the difference so that `E = 0` returns
/// `(I + A^2)^-1` exactly.
pub fn linearized_coefficients(e: &GridField, a: &SymMatrix, node: usize) -> Result<SymMatrix, Error> {
    let hess = hessian_at(e, node)?;
    let base = lag_operator_derivative(a)?;
    let (x, w) = gauss_legendre(8);
    let mut acc = SymMatrix::zeros(a.dim());
    for (xi, wi) in x.iter().zip(&w) {
        let theta = 0.5 * (xi + 1.0);
        let d = lag_operator_derivative(&a.axpy(theta, &hess))?.sub(&base);
        acc = acc.axpy(0.5 * wi, &d);
    }
    Ok(base.add(&acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    pub sampled: usize,
    pub satisfied: usize,
    pub fraction: f64,
    /// Largest `|a - (I+A^2)^-1| / |D^2 E|` (Frobenius norms).
    pub worst_ratio: f64,
}

/// Checks `|a(x,t) - (I+A^2)^-1| <= factor |D^2 E(x,t)|` at interior nodes of
/// the annulus whose Hessian is above round-off.
pub fn linearization_check(errors: &[GridField], a: &SymMatrix, annulus: Annulus, factor: f64) -> Result<LinearizationReport, Error> {
    let base = lag_operator_derivative(a)?;
    let mut r = LinearizationReport { sampled: 0, satisfied: 0, fraction: 0.0, worst_ratio: 0.0 };
    for e in errors {
        for i in 0..e.values.len() {
            if e.grid.depth(i) < 1 || !annulus.contains(&e.grid.point(i)) {
                continue;
            }
            let h = hessian_at(e, i)?.frobenius();
            if h <= 1e-10 {
                continue;
            }
            let dev = linearized_coefficients(e, a, i)?.sub(&base).frobenius();
            r.sampled += 1;
            if dev <= factor * h {
                r.satisfied += 1;
            }
            r.worst_ratio = r.worst_ratio.max(dev / h);
        }
    }
    if r.sampled == 0 {
        return Err(Error::InsufficientData("no nodes with a resolvable Hessian".into()));
    }
    r.fraction = r.satisfied as f64 / r.sampled as f64;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::SpaceTimeGrid;
    use proptest::prelude::*;

    fn grid(r: f64, h: f64, t0: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::with_cfl(2, r, h, t0, 0.0, 0.9).unwrap()
    }

    fn synthetic(g: &SpaceTimeGrid, times: &[f64], e: impl Fn(&[f64], f64) -> f64) -> Vec<GridField> {
        times.iter().map(|&t| GridField::from_fn(g, t, |x| e(x, t))).collect()
    }

    #[test]
    fn error_field_examples() {
        let g = grid(1.0, 0.1, -1.0);
        let q = QuadraticProfile::new(SymMatrix::from_diag(&[1.0, 3.0]), vec![0.2, 0.0], -1.0).unwrap();
        let u = GridField::quadratic(&g, &q, -0.5);
        assert_eq!(error_field(&u, &q).unwrap().max_abs(), 0.0);
        let bumped = GridField::from_fn(&g, -0.5, |x| eval_quadratic(&q, x, -0.5) + x[0].sin());
        let e = error_field(&bumped, &q).unwrap();
        for i in 0..g.node_count() {
            assert!((e.values[i] - g.point(i)[0].sin()).abs() < 1e-14);
        }
        assert!(error_field(&u, &QuadraticProfile::zero(3)).is_err());
    }

    #[test]
    fn exponential_fit_recovers_synthetic_models() {
        let g = grid(6.0, 0.2, -1.0);
        let times: Vec<f64> = (1..=8).map(|k| -1.0 + 0.125 * k as f64).collect();
        let ann = Annulus { inner: 2.0, outer: 5.0 };
        let fit = fit_exponential_rate(&synthetic(&g, &times, |x, t| (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * (t + 1.0))).exp()), 1.0, ann).unwrap();
        assert!(fit.fitted_kappa.sub(&SymMatrix::identity(2)).max_abs() < 0.05);
        assert!(fit.fitted_s.abs() < 0.05);
        let fit = fit_exponential_rate(
            &synthetic(&g, &times, |x, t| (t + 1.0) * (-(2.0 * x[0] * x[0] + x[1] * x[1]) / (4.0 * (t + 1.0))).exp()),
            1.0,
            ann,
        )
        .unwrap();
        assert!(fit.fitted_kappa.sub(&SymMatrix::from_diag(&[2.0, 1.0])).max_abs() < 0.05 * 2.0);
        assert!(fit.residual_r2 > 0.999);
        // A shifted profile exercises the S|Kx| term.
        let fit = fit_exponential_rate(
            &synthetic(&g, &times, |x, t| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                (t + 1.0) * (-(r * r - 1.5 * r) / (4.0 * (t + 1.0))).exp()
            }),
            1.0,
            ann,
        )
        .unwrap();
        assert!((fit.fitted_s - 1.5).abs() < 0.05, "{fit:?}");
        assert!(matches!(fit_exponential_rate(&synthetic(&g, &times, |_, _| 0.0), 1.0, ann), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn polynomial_fit_examples() {
        let g = grid(10.0, 0.25, -1.0);
        let f = synthetic(&g, &[-0.5, 0.0], |x, _| (x[0] * x[0] + x[1] * x[1]).powf(-1.5));
        let slope = fit_polynomial_rate(&f, Annulus { inner: 2.0, outer: 8.0 }).unwrap();
        assert!((slope + 3.0).abs() < 0.06);
        let gauss = synthetic(&g, &[0.0], |x, _| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let s1 = fit_polynomial_rate(&gauss, Annulus { inner: 1.0, outer: 2.5 }).unwrap();
        let s2 = fit_polynomial_rate(&gauss, Annulus { inner: 1.0, outer: 4.0 }).unwrap();
        assert!(s2 < s1 && s1 < 0.0);
    }

    #[test]
    fn calibrated_bound_dominates_its_own_samples() {
        let g = grid(6.0, 0.2, -1.0);
        let times: Vec<f64> = (1..=8).map(|k| -1.0 + 0.125 * k as f64).collect();
        let f = synthetic(&g, &times, |x, t| (t + 1.0) * (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * (t + 1.0))).exp());
        let ann = Annulus { inner: 2.0, outer: 5.0 };
        let fit = fit_exponential_rate(&f, 1.0, ann).unwrap();
        let model = calibrate_decay_bound(&f, &fit, 1.0, 1.0, ann).unwrap();
        let rep = domination_report(&f, &model, ann).unwrap();
        assert_eq!(rep.fraction, 1.0);
        assert!(rep.worst_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn chi_value_matches_direct_formula() {
        let p = ComparisonBarrierParams { k_deg: 1.0, alpha_deg: 0.5, c: 1.0, k: 2.0, beta_chi: 1.0, r: 10.0 };
        let want = 10.0 * (101f64.sqrt() - 1.0).powi(-2);
        assert!((chi_value(&p, &[0.0, 0.0], 0.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.12210).abs() < 1e-5);
        assert!(chi_value(&p, &[20.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn chi_blows_up_along_rays() {
        let p = ComparisonBarrierParams { k_deg: 1.0, alpha_deg: 0.5, c: 0.5, k: 1.5, beta_chi: 1.0, r: 10.0 };
        let t = 0.3;
        let edge = ((1.0 + 100.0f64).sqrt() * (1.0 - 0.5 * t)).powi(2) - 1.0;
        let mut prev = 0.0;
        for frac in [0.0, 0.5, 0.9, 0.99, 0.9999, 0.999999] {
            let r = edge.sqrt() * frac;
            let v = chi_value(&p, &[r * 0.6, r * 0.8], t).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 1e6);
    }

    proptest! {
        #[test]
        fn chi_derivatives_match_finite_differences(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, t in 0.05f64..0.4) {
            let p = ComparisonBarrierParams { k_deg: 1.0, alpha_deg: 0.5, c: 0.5, k: 1.5, beta_chi: 1.0, r: 10.0 };
            let (_, chi_t, trace) = chi_derivatives(&p, &[x0, x1], t).unwrap();
            let h = 1e-4;
            let f = |a: f64, b: f64, s: f64| chi_value(&p, &[a, b], s).unwrap();
            let dt = (f(x0, x1, t + h) - f(x0, x1, t - h)) / (2.0 * h);
            let lap = (f(x0 + h, x1, t) + f(x0 - h, x1, t) + f(x0, x1 + h, t) + f(x0, x1 - h, t) - 4.0 * f(x0, x1, t)) / (h * h);
            prop_assert!((dt - chi_t).abs() <= 1e-6 * chi_t.abs().max(1e-3));
            prop_assert!((lap - trace).abs() <= 1e-4 * trace.abs().max(1e-3));
        }
    }

    #[test]
    fn linearized_coefficient_examples() {
        let g = grid(1.0, 0.1, -1.0);
        let node = g.flat_index(&[10, 10]);
        let zero = GridField::from_fn(&g, 0.0, |_| 0.0);
        let a = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 2.0]]).unwrap();
        assert_eq!(linearized_coefficients(&zero, &a, node).unwrap(), lag_operator_derivative(&a).unwrap());
        let e = GridField::from_fn(&g, 0.0, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let c = linearized_coefficients(&e, &SymMatrix::zeros(2), node).unwrap();
        let want = std::f64::consts::FRAC_PI_4;
        assert!((c.get(0, 0) - want).abs() < 1e-9 && (c.get(1, 1) - want).abs() < 1e-9 && c.get(0, 1).abs() < 1e-12);
        let boundary = g.flat_index(&[0, 5]);
        assert!(linearized_coefficients(&e, &a, boundary).is_err());
    }

    proptest! {
        #[test]
        fn linearized_coefficients_spectrum(c0 in -2.0f64..2.0, c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, a0 in -2.0f64..2.0, a1 in -2.0f64..2.0) {
            let g = grid(1.0, 0.1, -1.0);
            let e = GridField::from_fn(&g, 0.0, |x| c0 * x[0] * x[0] + c1 * x[0] * x[1] + c2 * x[1] * x[1] + (3.0 * x[0]).sin());
            let a = SymMatrix::from_rows(&[vec![a0, 0.3], vec![0.3, a1]]).unwrap();
            let m = linearized_coefficients(&e, &a, g.flat_index(&[7, 12])).unwrap();
            let ev = eigh(&m).unwrap().values;
            prop_assert!(ev[0] > 0.0 && ev[1] <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn ordering_examples() {
        let g = SpaceTimeGrid::with_cfl(2, 1.0, 0.1, -0.2, 0.0, 0.9).unwrap();
        let q = QuadraticProfile::new(SymMatrix::from_diag(&[1.0, 0.5]), vec![0.0, 0.0], 0.0).unwrap();
        let lo = SolverConfig::quadratic(g.clone(), &q).unwrap();
        let same = ordering_check(&lo, &lo, &Forcing::Zero, &Forcing::Zero).unwrap();
        assert_eq!(same.violations, 0);
        let shifted_q = QuadraticProfile::new(SymMatrix::from_diag(&[1.0, 0.5]), vec![0.0, 0.0], 0.25).unwrap();
        let hi = SolverConfig::quadratic(g.clone(), &shifted_q).unwrap();
        let rep = ordering_check(&lo, &hi, &Forcing::Zero, &Forcing::Zero).unwrap();
        assert_eq!(rep.violations, 0);
        // Constant shifts are carried exactly up to rounding of the operator.
        let scheme = Scheme::new(&g, lo.stencil);
        let mut u = lo.initial.clone();
        let mut v = hi.initial.clone();
        for k in 1..=g.step_count() {
            u = step_with(&scheme, &u, g.time_at(k), &Forcing::Zero, &lo.boundary).unwrap();
            v = step_with(&scheme, &v, g.time_at(k), &Forcing::Zero, &hi.boundary).unwrap();
        }
        assert!(u.values.iter().zip(&v.values).all(|(a, b)| ((b - a) - 0.25).abs() < 1e-12));
        let mut bumped = hi.clone();
        bumped.initial = GridField::from_fn(&g, g.t_start, |x| eval_quadratic(&q, x, g.t_start) + 0.3 * crate::problem::bump_profile((x[0] * x[0] + x[1] * x[1]).sqrt() / 0.5));
        bumped.boundary = lo.boundary.clone();
        let rep = ordering_check(&lo, &bumped, &Forcing::Zero, &Forcing::Zero).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(rep.comparisons > 0);
    }

    #[test]
    fn rigidity_and_argmax_reports() {
        let g = grid(4.0, 0.2, -2.0);
        let fields = synthetic(&g, &[-2.0, -1.0, -0.5, 0.0], |x, t| if t > -1.0 { (t + 1.0) * (-(x[0] * x[0] + x[1] * x[1])).exp() } else { 0.0 });
        let rig = rigidity_report(&fields, 1.0);
        assert_eq!(rig.levels, 2);
        assert_eq!(rig.max_abs_error, 0.0);
        let arg = argmax_report(&fields, &[0.0, 0.0], 1.0, 1.0, 10.0);
        assert_eq!(arg.levels, 2);
        assert_eq!(arg.violations, 0);
    }
}
