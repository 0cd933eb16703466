//! Generalized-symmetric barriers `v(x,t) = V(s)`, `s = tau~ t + x^T D x / 2`.
//!
//! Work happens in the eigenframe of `A` after the shifts
//! `u -> u + K|x|^2/2 - Theta t`, where the flow becomes
//! `P[v] = -v_t + sum arctan(lambda(D^2 v - K I)) = Theta - f`.
//! `W = V'` solves `dW/ds = h(s, W) / (2 d_n (s + 1))`. Everything is carried
//! in the deviation `phi = W - 1`, which decays like `s^(-beta/2)`; the arctan
//! differences are evaluated with `atan2` so tiny deviations keep full
//! relative precision.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::problem::{eval_forcing, Forcing, QuadraticProfile};
use crate::spectral::{eigh, SymMatrix};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Sub,
    Super,
}

/// How `Theta_M` is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaRule {
    /// `M(A, Theta_M) = beta/2 + 1`.
    Literal,
    /// `M(A, Theta_M) = 2 d_n (beta/2 + 1)`. The linearized barrier ODE
    /// contracts at rate `M / (2 d_n)` in `log(1+s)`, so this is what makes the
    /// forcing rate `beta/2` the dominant decay of `W - 1`.
    #[default]
    RateCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Eigenvalues of `A`, ascending.
    pub a: Vec<f64>,
    pub k: f64,
    pub theta: f64,
    pub tau: f64,
    pub tau_tilde: f64,
    /// Eigenvalues of `D = A + K I`.
    pub d: Vec<f64>,
    pub beta: f64,
    pub m_value: f64,
    /// Row-major eigenvectors of `A` (columns), mapping frame to world coordinates.
    pub basis: Vec<f64>,
}

/// `M(A, Theta) = (Theta - tau + sum a/(1+a^2)) / sum 1/(1+a^2)`.
pub fn m_value(a: &[f64], tau: f64, theta: f64) -> f64 {
    let (num, den) = m_sums(a);
    (theta - tau + num) / den
}

fn m_sums(a: &[f64]) -> (f64, f64) {
    a.iter().fold((0.0, 0.0), |(n, d), &ai| (n + ai / (1.0 + ai * ai), d + 1.0 / (1.0 + ai * ai)))
}

/// `Theta = max{Theta_M, n pi/2, tau - sum min(a,0), n pi/2 - f_lower(0)} + 1`
/// with `M(A, Theta_M) = beta/2 + 1`, and `K = max(0, -a_1) + 1`.
pub fn select_theta(a: &[f64], tau: f64, beta: f64, f_lower_at_0: f64) -> Result<ThetaParams, Error> {
    select_theta_with(ThetaRule::Literal, a, tau, beta, f_lower_at_0)
}

pub fn select_theta_with(rule: ThetaRule, a: &[f64], tau: f64, beta: f64, f_lower_at_0: f64) -> Result<ThetaParams, Error> {
    if !(beta > 2.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("barrier decay exponent must exceed 2, got {beta}")));
    }
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) || !f_lower_at_0.is_finite() || f_lower_at_0 > 0.0 {
        return Err(Error::InvalidInput("need finite eigenvalues and f_lower(0) <= 0".into()));
    }
    let mut a = a.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let k = (-a[0]).max(0.0) + 1.0;
    let d: Vec<f64> = a.iter().map(|ai| ai + k).collect();
    let d_n = d[d.len() - 1];
    let target_m = match rule {
        ThetaRule::Literal => 0.5 * beta + 1.0,
        ThetaRule::RateCorrected => 2.0 * d_n * (0.5 * beta + 1.0),
    };
    let (num, den) = m_sums(&a);
    let theta_m = target_m * den + tau - num;
    let neg: f64 = a.iter().map(|ai| ai.min(0.0)).sum();
    let half = n * FRAC_PI_2;
    let theta = theta_m.max(half).max(tau - neg).max(half - f_lower_at_0) + 1.0;
    let mut basis = vec![0.0; a.len() * a.len()];
    for i in 0..a.len() {
        basis[i * a.len() + i] = 1.0;
    }
    let p = ThetaParams { m_value: m_value(&a, tau, theta), a, k, theta, tau, tau_tilde: tau - theta, d, beta, basis };
    p.check(f_lower_at_0)?;
    Ok(p)
}

impl ThetaParams {
    /// Parameters for a quadratic target in its own eigenframe.
    pub fn for_profile(q: &QuadraticProfile, rule: ThetaRule, beta: f64, f_lower_at_0: f64) -> Result<Self, Error> {
        let e = eigh(q.a())?;
        let mut p = select_theta_with(rule, &e.values, q.tau(), beta, f_lower_at_0)?;
        p.basis = e.vectors;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn d_max(&self) -> f64 {
        self.d[self.d.len() - 1]
    }

    fn half_pi_n(&self) -> f64 {
        self.dim() as f64 * FRAC_PI_2
    }

    pub fn check(&self, f_lower_at_0: f64) -> Result<(), Error> {
        let neg: f64 = self.a.iter().map(|ai| ai.min(0.0)).sum();
        let ok = self.theta > self.half_pi_n()
            && self.m_value > 0.5 * self.beta
            && self.theta - self.tau + neg > 0.0
            && self.half_pi_n() < self.theta + f_lower_at_0
            && self.tau_tilde < 0.0
            && self.d.iter().all(|&di| di > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Consistency(format!("Theta parameters violate their invariants: {self:?}")))
        }
    }

    /// World coordinates to eigenframe: `Q^T x`.
    pub fn to_frame(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|k| (0..n).map(|i| self.basis[i * n + k] * x[i]).sum()).collect()
    }

    pub fn from_frame(&self, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|k| self.basis[i * n + k] * y[k]).sum()).collect()
    }

    /// `s = tau~ t + sum d_i y_i^2 / 2` in frame coordinates.
    pub fn s_of(&self, y: &[f64], t: f64) -> f64 {
        self.tau_tilde * t + 0.5 * self.d.iter().zip(y).map(|(d, v)| d * v * v).sum::<f64>()
    }

    /// `F_1(1 + phi) - Theta`.
    fn g1(&self, phi: f64) -> f64 {
        -self.tau_tilde * phi + self.a.iter().map(|&a| (a * phi).atan2(1.0 + a * a * (1.0 + phi))).sum::<f64>()
    }

    fn g1_prime(&self, phi: f64) -> f64 {
        let w = 1.0 + phi;
        -self.tau_tilde + self.a.iter().map(|&a| a / (1.0 + a * a * w * w)).sum::<f64>()
    }

    /// `F_2(1 + phi, h) - Theta`.
    fn g2(&self, phi: f64, h: f64) -> f64 {
        -self.tau_tilde * phi
            + self.a.iter().map(|&a| (a * phi + h).atan2(1.0 + a * (a + a * phi + h))).sum::<f64>()
    }

    fn g2_dh(&self, phi: f64, h: f64) -> f64 {
        self.a.iter().map(|&a| 1.0 / (1.0 + (a * (1.0 + phi) + h).powi(2))).sum()
    }
}

/// Radial envelopes `f_lower(s) <= -f(x,t) <= f_upper(s)` with
/// `f_upper(s) = F min(1, ((1+s0)/(1+s))^(beta/2))` and `f_lower = -f_upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingEnvelopes {
    pub amplitude: f64,
    pub s0: f64,
    pub beta: f64,
}

pub const DEFAULT_ENVELOPE_FLOOR: f64 = 1e-3;

impl ForcingEnvelopes {
    pub fn f_upper(&self, s: f64) -> f64 {
        let ratio = (1.0 + self.s0) / (1.0 + s.max(0.0));
        self.amplitude * ratio.powf(0.5 * self.beta).min(1.0)
    }

    pub fn f_lower(&self, s: f64) -> f64 {
        -self.f_upper(s)
    }

    pub fn target(&self, s: f64, branch: Branch) -> f64 {
        match branch {
            Branch::Sub => self.f_upper(s),
            Branch::Super => self.f_lower(s),
        }
    }
}

/// Sup of `|f|` before Theta is known, so `f_lower(0) = -amplitude` can feed
/// [`select_theta`].
pub fn envelope_amplitude(f: &Forcing, floor: f64) -> f64 {
    let sup = f.sup_abs();
    if sup > 0.0 {
        sup
    } else {
        floor
    }
}

pub fn build_envelopes(f: &Forcing, params: &ThetaParams) -> Result<ForcingEnvelopes, Error> {
    build_envelopes_with_floor(f, params, DEFAULT_ENVELOPE_FLOOR)
}

pub fn build_envelopes_with_floor(f: &Forcing, params: &ThetaParams, floor: f64) -> Result<ForcingEnvelopes, Error> {
    if !(floor > 0.0) {
        return Err(Error::InvalidInput("envelope floor must be positive".into()));
    }
    let beta = params.beta;
    let amplitude = envelope_amplitude(f, floor);
    if !amplitude.is_finite() {
        return Err(Error::InvalidInput("forcing is unbounded".into()));
    }
    let s0 = match f {
        _ if f.is_zero() => 0.0,
        Forcing::AlgebraicDecay { beta: bf, .. } => {
            if beta > *bf {
                return Err(Error::InvalidInput(format!(
                    "barrier exponent {beta} exceeds the forcing decay exponent {bf}"
                )));
            }
            // s <= c R^2 with c = max(|tau~|, d_n / 2), hence
            // (1 + R^2)^-1 <= max(1, c) / (1 + s).
            (-params.tau_tilde).max(0.5 * params.d_max()).max(1.0) - 1.0
        }
        _ => {
            let (big_t, big_s) = (f.support_time(), f.support_radius());
            if !(big_t.is_finite() && big_s.is_finite()) {
                return Err(Error::InvalidInput("forcing has unbounded support".into()));
            }
            -params.tau_tilde * big_t + 0.5 * params.d_max() * big_s * big_s
        }
    };
    Ok(ForcingEnvelopes { amplitude, s0, beta })
}

const ROOT_MAX_ITER: usize = 400;

/// Root of an increasing function `g` on `[lo, hi]` with `g(lo) <= 0 <= g(hi)`:
/// Newton steps kept inside a shrinking bisection bracket.
fn increasing_root(mut lo: f64, mut hi: f64, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Result<f64, Error> {
    let (glo, ghi) = (g(lo), g(hi));
    if glo > 0.0 || ghi < 0.0 {
        return Err(Error::Consistency(format!("bracket [{lo}, {hi}] does not change sign ({glo}, {ghi})")));
    }
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..ROOT_MAX_ITER {
        let gx = g(x);
        if gx == 0.0 {
            return Ok(x);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dg(x);
        let newton = x - gx / d;
        let next = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - x).abs();
        x = next;
        if step <= 4.0 * f64::EPSILON * x.abs() || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Deviation `phi` with `F_1(1 + phi) = Theta + target`.
fn phi_root(params: &ThetaParams, target: f64) -> Result<f64, Error> {
    let g = |p: f64| params.g1(p) - target;
    let dg = |p: f64| params.g1_prime(p);
    if target >= 0.0 {
        let mut hi = target / (-params.tau_tilde) + 1e-300;
        let mut guard = 0;
        while g(hi) < 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 2000 {
                return Err(Error::Consistency("could not bracket w_lower".into()));
            }
        }
        increasing_root(0.0, hi, g, dg)
    } else {
        increasing_root(-1.0, 0.0, g, dg)
    }
}

/// `w_lower(s)` (sub: `F_1(w) = Theta + f_upper(s)`) or `w_upper(s)`
/// (super: `F_1(w) = Theta + f_lower(s)`).
pub fn invert_f1(params: &ThetaParams, env: &ForcingEnvelopes, s: f64, branch: Branch) -> Result<f64, Error> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be nonnegative, got {s}")));
    }
    Ok(1.0 + phi_root(params, env.target(s, branch))?)
}

/// Deviation `phi*` of the blow-up curve: `w*(s)` (sub) or `w_*(s)` (super).
fn phi_blowup(params: &ThetaParams, env: &ForcingEnvelopes, s: f64, branch: Branch) -> f64 {
    let half = params.half_pi_n();
    match branch {
        Branch::Sub => (env.f_upper(s) + half + params.tau) / (-params.tau_tilde),
        Branch::Super => (env.f_lower(s) - half + params.tau) / (-params.tau_tilde),
    }
}

/// `w*(s) = (Theta + f_upper(s) + n pi/2) / (-tau~)` for the sub branch,
/// `w_*(s) = (Theta + f_lower(s) - n pi/2) / (-tau~)` for the super branch.
pub fn blowup_curve(params: &ThetaParams, env: &ForcingEnvelopes, s: f64, branch: Branch) -> f64 {
    1.0 + phi_blowup(params, env, s, branch)
}

/// `h` solving `F_2(1 + phi, h) = Theta + target`, valid for any `phi`
/// strictly between the two blow-up curves of that target.
fn h_root(params: &ThetaParams, phi: f64, target: f64) -> Result<f64, Error> {
    let g = |h: f64| params.g2(phi, h) - target;
    let dg = |h: f64| params.g2_dh(phi, h);
    let g0 = g(0.0);
    if g0 == 0.0 {
        return Ok(0.0);
    }
    // Linearized guess sets the initial bracket scale.
    let scale = (g0.abs() / dg(0.0)).max(1e-300);
    let mut span = scale;
    for _ in 0..2200 {
        let edge = if g0 > 0.0 { -span } else { span };
        let ge = g(edge);
        if (g0 > 0.0 && ge <= 0.0) || (g0 < 0.0 && ge >= 0.0) {
            return if g0 > 0.0 { increasing_root(edge, 0.0, g, dg) } else { increasing_root(0.0, edge, g, dg) };
        }
        span *= 2.0;
        if !span.is_finite() {
            break;
        }
    }
    Err(Error::Domain(format!("no root h for w = {} (outside the blow-up curves)", 1.0 + phi)))
}

fn admissible(params: &ThetaParams, env: &ForcingEnvelopes, s: f64, phi: f64, branch: Branch) -> Result<(), Error> {
    let edge = phi_root(params, env.target(s, branch))?;
    let blow = phi_blowup(params, env, s, branch);
    let slack = 1e-12 * (1.0 + edge.abs());
    let ok = match branch {
        Branch::Sub => phi >= edge - slack && phi < blow,
        Branch::Super => phi <= edge + slack && phi > blow,
    };
    if ok {
        Ok(())
    } else {
        let (lo, hi) = match branch {
            Branch::Sub => (1.0 + edge, 1.0 + blow),
            Branch::Super => (1.0 + blow, 1.0 + edge),
        };
        Err(Error::Domain(format!("w = {} outside the admissible interval ({lo}, {hi}) at s = {s}", 1.0 + phi)))
    }
}

/// `h(s, w)`: root of `F_2(w, h) = Theta + f_upper(s)` (sub, `h <= 0`) or
/// `Theta + f_lower(s)` (super, `h >= 0`).
pub fn invert_h(params: &ThetaParams, env: &ForcingEnvelopes, s: f64, w: f64, branch: Branch) -> Result<f64, Error> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("s must be nonnegative, got {s}")));
    }
    let phi = w - 1.0;
    admissible(params, env, s, phi, branch)?;
    let h = h_root(params, phi, env.target(s, branch))?;
    Ok(match branch {
        Branch::Sub => h.min(0.0),
        Branch::Super => h.max(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSettings {
    pub rel_tol: f64,
    pub s_max: f64,
}

impl Default for OdeSettings {
    fn default() -> Self {
        OdeSettings { rel_tol: 1e-10, s_max: 1e4 }
    }
}

/// Tabulated barrier slope `W = 1 + phi` with its antiderivative.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierProfile {
    pub branch: Branch,
    pub params: ThetaParams,
    pub env: ForcingEnvelopes,
    pub s_max: f64,
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    /// `int_0^{s_k} phi`.
    pub cum: Vec<f64>,
    pub c_norm: f64,
    /// Exponent `p` of the tail `phi ~ phi_end (s/s_max)^p`.
    pub tail_power: f64,
}

fn ode_rhs(params: &ThetaParams, env: &ForcingEnvelopes, branch: Branch, s: f64, phi: f64) -> Result<f64, Error> {
    let h = h_root(params, phi, env.target(s, branch))?;
    Ok(h / (2.0 * params.d_max() * (s + 1.0)))
}

fn rk4(params: &ThetaParams, env: &ForcingEnvelopes, branch: Branch, s: f64, phi: f64, ds: f64, k1: f64) -> Result<f64, Error> {
    let k2 = ode_rhs(params, env, branch, s + 0.5 * ds, phi + 0.5 * ds * k1)?;
    let k3 = ode_rhs(params, env, branch, s + 0.5 * ds, phi + 0.5 * ds * k2)?;
    let k4 = ode_rhs(params, env, branch, s + ds, phi + ds * k3)?;
    Ok(phi + ds / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// Midpoint of the admissible interval at `s = 0`.
pub fn default_w0(params: &ThetaParams, env: &ForcingEnvelopes, branch: Branch) -> Result<f64, Error> {
    let edge = invert_f1(params, env, 0.0, branch)?;
    Ok(0.5 * (edge + blowup_curve(params, env, 0.0, branch)))
}

pub fn integrate_barrier_ode(params: &ThetaParams, env: &ForcingEnvelopes, w0: f64, s_max: f64, branch: Branch) -> Result<BarrierProfile, Error> {
    integrate_barrier_ode_with(params, env, w0, &OdeSettings { s_max, ..OdeSettings::default() }, branch)
}

pub fn integrate_barrier_ode_with(params: &ThetaParams, env: &ForcingEnvelopes, w0: f64, settings: &OdeSettings, branch: Branch) -> Result<BarrierProfile, Error> {
    let s_max = settings.s_max;
    if !(s_max > 100.0) {
        return Err(Error::InvalidInput(format!("s_max must exceed 100, got {s_max}")));
    }
    let phi0 = w0 - 1.0;
    let edge0 = phi_root(params, env.target(0.0, branch))?;
    let blow0 = phi_blowup(params, env, 0.0, branch);
    let inside = match branch {
        Branch::Sub => phi0 > edge0 && phi0 < blow0,
        Branch::Super => phi0 < edge0 && phi0 > blow0,
    };
    if !inside {
        return Err(Error::Domain(format!(
            "w0 = {w0} is outside the open interval between {} and {}",
            1.0 + edge0.min(blow0),
            1.0 + edge0.max(blow0)
        )));
    }
    let sign = match branch {
        Branch::Sub => 1.0,
        Branch::Super => -1.0,
    };
    let tol = settings.rel_tol;
    let mut s = 0.0;
    let mut phi = phi0;
    let mut k1 = ode_rhs(params, env, branch, s, phi)?;
    let mut ss = vec![s];
    let mut ps = vec![phi];
    let mut ds_list = vec![k1];
    let mut ds: f64 = 1e-4;
    while s < s_max {
        ds = ds.min(s_max - s);
        if ds <= 1e-14 * (1.0 + s) {
            return Err(Error::Singularity { s, w: 1.0 + phi, detail: "step size underflow".into() });
        }
        let full = rk4(params, env, branch, s, phi, ds, k1);
        let half = rk4(params, env, branch, s, phi, 0.5 * ds, k1).and_then(|mid| {
            let kmid = ode_rhs(params, env, branch, s + 0.5 * ds, mid)?;
            rk4(params, env, branch, s + 0.5 * ds, mid, 0.5 * ds, kmid)
        });
        let (full, half) = match (full, half) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                ds *= 0.25;
                continue;
            }
        };
        let err = (half - full).abs() / 15.0;
        let allowed = tol * half.abs();
        let s_new = s + ds;
        // Guards keeping the step away from h = 0 and h = -inf (mirrored on
        // the super branch).
        let edge = phi_root(params, env.target(s_new, branch))?;
        let blow = phi_blowup(params, env, s_new, branch);
        let guarded = sign * (half - edge) >= 1e-14 && sign * (blow - half) >= 1e-8;
        if err > allowed || !guarded {
            let shrink = if err > allowed { (0.9 * (allowed / err).powf(0.2)).clamp(0.1, 0.5) } else { 0.5 };
            ds *= shrink;
            continue;
        }
        let monotone = sign * (half - phi) < 0.0;
        if !monotone {
            return Err(Error::Consistency(format!("barrier slope lost monotonicity at s = {s_new}")));
        }
        s = s_new;
        phi = half;
        k1 = ode_rhs(params, env, branch, s, phi)?;
        ss.push(s);
        ps.push(phi);
        ds_list.push(k1);
        let grow = if err > 0.0 { (0.9 * (allowed / err).powf(0.2)).clamp(1.0, 4.0) } else { 4.0 };
        ds *= grow;
    }
    BarrierProfile::assemble(branch, params.clone(), env.clone(), ss, ps, ds_list)
}

/// Interval slopes limited so the cubic Hermite interpolant stays monotone.
fn limited_slopes(h: f64, y0: f64, y1: f64, m0: f64, m1: f64) -> (f64, f64) {
    let delta = (y1 - y0) / h;
    if delta == 0.0 {
        return (0.0, 0.0);
    }
    let mut a = m0 / delta;
    let mut b = m1 / delta;
    a = a.max(0.0);
    b = b.max(0.0);
    let r = a * a + b * b;
    if r > 9.0 {
        let tau = 3.0 / r.sqrt();
        a *= tau;
        b *= tau;
    }
    (a * delta, b * delta)
}

fn hermite(h: f64, y0: f64, y1: f64, m0: f64, m1: f64, u: f64) -> (f64, f64) {
    // Value and integral from the left end over a fraction u of the interval.
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    let value = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
    let u4 = u2 * u2;
    let i00 = 0.5 * u4 - u3 + u;
    let i10 = 0.25 * u4 - 2.0 / 3.0 * u3 + 0.5 * u2;
    let i01 = -0.5 * u4 + u3;
    let i11 = 0.25 * u4 - u3 / 3.0;
    let integral = h * (i00 * y0 + i10 * h * m0 + i01 * y1 + i11 * h * m1);
    (value, integral)
}

impl BarrierProfile {
    fn assemble(branch: Branch, params: ThetaParams, env: ForcingEnvelopes, s: Vec<f64>, phi: Vec<f64>, dphi: Vec<f64>) -> Result<Self, Error> {
        let mut cum = vec![0.0; s.len()];
        for k in 0..s.len() - 1 {
            let h = s[k + 1] - s[k];
            let (m0, m1) = limited_slopes(h, phi[k], phi[k + 1], dphi[k], dphi[k + 1]);
            cum[k + 1] = cum[k] + hermite(h, phi[k], phi[k + 1], m0, m1, 1.0).1;
        }
        let s_max = *s.last().unwrap();
        let mut profile = BarrierProfile { branch, params, env, s_max, s, phi, dphi, cum, c_norm: 0.0, tail_power: f64::NAN };
        let p = profile.log_slope(0.1 * s_max, s_max, 40);
        if !(p < -1.0) {
            return Err(Error::Consistency(format!("tail exponent {p} does not give an integrable tail")));
        }
        profile.tail_power = p;
        let phi_end = *profile.phi.last().unwrap();
        let tail = -phi_end * s_max / (p + 1.0);
        profile.c_norm = -(profile.cum.last().unwrap() + tail);
        Ok(profile)
    }

    /// Profile with `W = 1` identically and a given constant.
    pub fn constant(branch: Branch, params: ThetaParams, env: ForcingEnvelopes, s_max: f64, c_norm: f64) -> Self {
        BarrierProfile {
            branch,
            params,
            env,
            s_max,
            s: vec![0.0, s_max],
            phi: vec![0.0, 0.0],
            dphi: vec![0.0, 0.0],
            cum: vec![0.0, 0.0],
            c_norm,
            tail_power: -2.0,
        }
    }

    /// Least-squares slope of `log|W - 1|` against `log s` on `points`
    /// log-spaced samples of `[s_lo, s_hi]`.
    pub fn log_slope(&self, s_lo: f64, s_hi: f64, points: usize) -> f64 {
        let (mut sx, mut sy, mut sxx, mut sxy, mut m) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..points {
            let s = s_lo * (s_hi / s_lo).powf(i as f64 / (points - 1) as f64);
            let y = self.phi_at(s).0.abs();
            if y > 0.0 {
                let (lx, ly) = (s.ln(), y.ln());
                sx += lx;
                sy += ly;
                sxx += lx * lx;
                sxy += lx * ly;
                m += 1.0;
            }
        }
        (m * sxy - sx * sy) / (m * sxx - sx * sx)
    }

    /// `(phi(s), int_0^s phi)`.
    pub fn phi_at(&self, s: f64) -> (f64, f64) {
        if s <= 0.0 {
            return (self.phi[0], self.phi[0] * s);
        }
        if s >= self.s_max {
            let phi_end = *self.phi.last().unwrap();
            let p = self.tail_power;
            let r = s / self.s_max;
            let extra = if phi_end == 0.0 { 0.0 } else { phi_end * self.s_max / (p + 1.0) * (r.powf(p + 1.0) - 1.0) };
            return (phi_end * r.powf(p), self.cum.last().unwrap() + extra);
        }
        let k = match self.s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(k) => return (self.phi[k], self.cum[k]),
            Err(k) => k - 1,
        };
        let h = self.s[k + 1] - self.s[k];
        let (m0, m1) = limited_slopes(h, self.phi[k], self.phi[k + 1], self.dphi[k], self.dphi[k + 1]);
        let (v, i) = hermite(h, self.phi[k], self.phi[k + 1], m0, m1, (s - self.s[k]) / h);
        (v, self.cum[k] + i)
    }

    /// `W(s)`.
    pub fn w_at(&self, s: f64) -> f64 {
        1.0 + self.phi_at(s).0
    }

    /// `V(s) = int_0^s W + C`.
    pub fn v_at(&self, s: f64) -> f64 {
        s + self.phi_at(s).1 + self.c_norm
    }

    /// `W'(s)` from the ODE right-hand side at the interpolated `W(s)`.
    pub fn w_prime_at(&self, s: f64) -> Result<f64, Error> {
        ode_rhs(&self.params, &self.env, self.branch, s.max(0.0), self.phi_at(s).0)
    }

    /// Sampled `(s, W, w_lower or w_upper, blow-up curve, h)` rows.
    pub fn table(&self) -> Result<Vec<[f64; 5]>, Error> {
        self.s
            .iter()
            .zip(&self.phi)
            .map(|(&s, &phi)| {
                let edge = invert_f1(&self.params, &self.env, s, self.branch)?;
                let blow = blowup_curve(&self.params, &self.env, s, self.branch);
                let h = h_root(&self.params, phi, self.env.target(s, self.branch))?;
                Ok([s, 1.0 + phi, edge, blow, h])
            })
            .collect()
    }
}

/// `V(s(y, t))` in eigenframe coordinates of the shifted problem.
pub fn eval_barrier(profile: &BarrierProfile, y: &[f64], t: f64) -> f64 {
    profile.v_at(profile.params.s_of(y, t))
}

/// The barrier expressed for `u` in world coordinates:
/// `V(s(Q^T x, t)) - K|x|^2/2 + Theta t + b.x + c`.
pub fn untranslated_barrier(profile: &BarrierProfile, q: &QuadraticProfile, x: &[f64], t: f64) -> f64 {
    let p = &profile.params;
    let y = p.to_frame(x);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let lin: f64 = q.b().iter().zip(x).map(|(b, v)| b * v).sum();
    eval_barrier(profile, &y, t) - 0.5 * p.k * r2 + p.theta * t + lin + q.c()
}

/// `P[v] - (Theta - f)` at frame point `y`, with `f` sampled at the matching
/// world point.
pub fn barrier_residual(profile: &BarrierProfile, y: &[f64], t: f64, f: &Forcing) -> Result<f64, Error> {
    let p = &profile.params;
    let n = p.dim();
    let s = p.s_of(y, t);
    let phi = profile.phi_at(s).0;
    let w = 1.0 + phi;
    let w_prime = profile.w_prime_at(s)?;
    let mut hess = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let rank_one = w_prime * p.d[i] * y[i] * p.d[j] * y[j];
            let diag = if i == j { p.a[i] + p.d[i] * phi } else { 0.0 };
            hess.set(i, j, diag + rank_one);
        }
    }
    let arctan_sum: f64 = eigh(&hess)?.values.iter().map(|l| l.atan()).sum();
    let fx = eval_forcing(f, &p.from_frame(y), t);
    Ok(-p.tau_tilde * w + arctan_sum - p.theta + fx)
}
