//! Anisotropic Gaussian kernels: the space-time convolution identity with its
//! Beta-function closed form, compact-support convolution bounds, and the
//! exponential decay envelope `C (t+T)^{-p} exp(-(kappa(x) - S|Kx|)/(4(t+T)))`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::problem::{eval_forcing, Forcing};
use crate::quadrature::{adaptive_panels, CompositeRule};
use crate::Error;

// Lanczos coefficients (g = 607/128, 14 terms).
const LANCZOS_G: f64 = 5.242_187_5;
const LANCZOS_C0: f64 = 0.999_999_999_999_997_09;
const LANCZOS: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, Error> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma needs a positive finite argument, got {x}")));
    }
    let mut y = x;
    let tmp = x + LANCZOS_G;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = LANCZOS_C0;
    for c in LANCZOS {
        y += 1.0;
        ser += c / y;
    }
    Ok(tmp + (2.506_628_274_631_000_5 * ser / x).ln())
}

/// `B(a, b) = Gamma(a) Gamma(b) / Gamma(a + b)`.
pub fn beta_function(a: f64, b: f64) -> Result<f64, Error> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("Beta function needs positive arguments, got ({a}, {b})")));
    }
    Ok((ln_gamma(a)? + ln_gamma(b)? - ln_gamma(a + b)?).exp())
}

/// Diagonal anisotropy `kappa(x) = sum_i kappa_i x_i^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KappaForm {
    kappa: Vec<f64>,
}

impl KappaForm {
    pub fn new(kappa: Vec<f64>) -> Result<Self, Error> {
        if kappa.is_empty() || kappa.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::InvalidInput(format!("kappa entries must be positive, got {kappa:?}")));
        }
        Ok(KappaForm { kappa })
    }

    pub fn isotropic(n: usize) -> Self {
        KappaForm { kappa: vec![1.0; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.kappa
    }

    pub fn dim(&self) -> usize {
        self.kappa.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.kappa.iter().zip(x).map(|(k, v)| k * v * v).sum()
    }

    /// `|diag(kappa) x|`.
    pub fn image_norm(&self, x: &[f64]) -> f64 {
        self.kappa.iter().zip(x).map(|(k, v)| (k * v).powi(2)).sum::<f64>().sqrt()
    }
}

/// One admissible instance of the space-time convolution identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvolutionCase {
    pub kappa: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub sigma: f64,
}

/// Closed form `(4 pi)^{n/2} (prod kappa)^{-1/2} B(n/2-alpha+1, n/2-beta+1)
/// (t-sigma)^{n/2+1-alpha-beta} exp(-kappa(x-y)/(4(t-sigma)))`.
pub fn convolution_closed_form(kappa: &KappaForm, alpha: f64, beta: f64, x: &[f64], y: &[f64], t: f64, sigma: f64) -> Result<f64, Error> {
    let n = kappa.dim() as f64;
    let span = t - sigma;
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let prod: f64 = kappa.values().iter().product();
    Ok((4.0 * PI).powf(0.5 * n) / prod.sqrt()
        * beta_function(0.5 * n - alpha + 1.0, 0.5 * n - beta + 1.0)?
        * span.powf(0.5 * n + 1.0 - alpha - beta)
        * (-kappa.eval(&diff) / (4.0 * span)).exp())
}

const SPACE_ORDER: usize = 16;
const TIME_ORDER: usize = 16;
const REL_TOL: f64 = 1e-10;

/// `int exp(-k (x-xi)^2/(4a) - k (xi-y)^2/(4b)) dxi` by Gauss-Legendre panels
/// over twelve standard deviations of the product Gaussian.
fn gaussian_product_1d(k: f64, x: f64, y: f64, a: f64, b: f64) -> f64 {
    let center = (x * b + y * a) / (a + b);
    let sd = (2.0 * a * b / (k * (a + b))).sqrt();
    let f = |xi: f64| (-k * (x - xi).powi(2) / (4.0 * a) - k * (xi - y).powi(2) / (4.0 * b)).exp();
    adaptive_panels(center - 12.0 * sd, center + 12.0 * sd, SPACE_ORDER, 4, 256, 1e-13, f).0
}

/// Left-hand side of the identity by quadrature:
/// `int_sigma^t int (t-tau)^{-alpha} e^{-kappa(x-xi)/(4(t-tau))}
/// (tau-sigma)^{-beta} e^{-kappa(xi-y)/(4(tau-sigma))} dxi dtau`.
///
/// The time interval is split at its midpoint and each half is mapped by
/// `v -> v^p` toward its endpoint so the algebraic endpoint behaviour becomes
/// smooth enough for Gauss-Legendre panels.
pub fn convolution_quadrature(kappa: &KappaForm, alpha: f64, beta: f64, x: &[f64], y: &[f64], t: f64, sigma: f64) -> Result<f64, Error> {
    let n = kappa.dim() as f64;
    let integrand = |tau: f64| -> f64 {
        let a = t - tau;
        let b = tau - sigma;
        if a <= 0.0 || b <= 0.0 {
            return 0.0;
        }
        let space: f64 = (0..kappa.dim()).map(|i| gaussian_product_1d(kappa.values()[i], x[i], y[i], a, b)).product();
        a.powf(-alpha) * b.powf(-beta) * space
    };
    let mid = 0.5 * (t + sigma);
    let half = mid - sigma;
    // Endpoint exponent of the time integrand is n/2 - alpha (at t) and
    // n/2 - beta (at sigma); choose p so the mapped exponent is at least 6.
    let power = |e: f64| ((7.0 / (e + 1.0)).ceil()).max(1.0);
    let (p_left, p_right) = (power(0.5 * n - beta), power(0.5 * n - alpha));
    let left = |v: f64| {
        let tau = sigma + half * v.powf(p_left);
        integrand(tau) * half * p_left * v.powf(p_left - 1.0)
    };
    let right = |v: f64| {
        let tau = t - half * v.powf(p_right);
        integrand(tau) * half * p_right * v.powf(p_right - 1.0)
    };
    let (l, okl) = adaptive_panels(0.0, 1.0, TIME_ORDER, 2, 1024, REL_TOL, left);
    let (r, okr) = adaptive_panels(0.0, 1.0, TIME_ORDER, 2, 1024, REL_TOL, right);
    if !(okl && okr) {
        return Err(Error::Consistency(format!("time quadrature did not converge (estimate {})", l + r)));
    }
    Ok(l + r)
}

/// Returns `(lhs, rhs)` of the convolution identity.
pub fn convolution_identity_check(kappa: &KappaForm, alpha: f64, beta: f64, x: &[f64], y: &[f64], t: f64, sigma: f64) -> Result<(f64, f64), Error> {
    let n = kappa.dim();
    let cap = 0.5 * n as f64 + 1.0;
    if !(alpha < cap && beta < cap) {
        return Err(Error::Domain(format!("need alpha, beta < n/2 + 1 = {cap}, got ({alpha}, {beta})")));
    }
    if !(sigma < t) || x.len() != n || y.len() != n {
        return Err(Error::Domain("need sigma < t and points of dimension n".into()));
    }
    let lhs = convolution_quadrature(kappa, alpha, beta, x, y, t, sigma)?;
    let rhs = convolution_closed_form(kappa, alpha, beta, x, y, t, sigma)?;
    Ok((lhs, rhs))
}

impl ConvolutionCase {
    pub fn check(&self) -> Result<(f64, f64), Error> {
        convolution_identity_check(&KappaForm::new(self.kappa.clone())?, self.alpha, self.beta, &self.x, &self.y, self.t, self.sigma)
    }
}

/// Deterministic random admissible cases with `n` in {1, 2}. The exponents
/// stay at least 1/2 below the `n/2 + 1` cap.
pub fn random_convolution_cases(count: usize, seed: u64) -> Vec<ConvolutionCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=2usize);
            let cap = 0.5 * n as f64 + 0.5;
            let sigma = rng.gen_range(-2.0..-0.5);
            let t = rng.gen_range(sigma + 0.25..=0.0);
            ConvolutionCase {
                kappa: (0..n).map(|_| rng.gen_range(0.5..2.0)).collect(),
                alpha: rng.gen_range(-0.5..cap),
                beta: rng.gen_range(-0.5..cap),
                x: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                y: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                t,
                sigma,
            }
        })
        .collect()
}

/// Largeness threshold `S1 = 2 S0 max_{i,j} kappa_i/kappa_j + 1`.
pub fn compact_threshold(kappa: &KappaForm, s0: f64) -> f64 {
    let max = kappa.values().iter().cloned().fold(f64::MIN, f64::max);
    let min = kappa.values().iter().cloned().fold(f64::MAX, f64::min);
    2.0 * s0 * max / min + 1.0
}

/// `int_{-T}^t int (t-tau)^{-n/2} exp(-kappa(x-xi)/(4(t-tau))) f(xi,tau) dxi dtau`
/// over the support box of a compact forcing.
pub fn compact_convolution_integral(kappa: &KappaForm, f: &Forcing, x: &[f64], t: f64) -> Result<f64, Error> {
    let n = kappa.dim();
    let big_t = f.support_time();
    if f.is_zero() || t <= -big_t {
        return Ok(0.0);
    }
    let (center, radius) = match f {
        Forcing::CompactBump { center, radius, .. } => (center.clone(), *radius),
        Forcing::Zero => return Ok(0.0),
        _ => {
            let s = f.support_radius();
            if !s.is_finite() {
                return Err(Error::InvalidInput("convolution bound needs a compactly supported forcing".into()));
            }
            (vec![0.0; n], s)
        }
    };
    let t_hi = t.min(0.0);
    let estimate = |panels: usize| -> f64 {
        let time = CompositeRule::new(-big_t, t_hi, panels, 8);
        let spaces: Vec<CompositeRule> = (0..n).map(|i| CompositeRule::new(center[i] - radius, center[i] + radius, panels, 8)).collect();
        let m = spaces[0].nodes.len();
        let mut total = 0.0;
        let mut xi = vec![0.0; n];
        for (&tau, &wt) in time.nodes.iter().zip(&time.weights) {
            let lag = t - tau;
            let pref = lag.powf(-0.5 * n as f64);
            let mut inner = 0.0;
            for flat in 0..m.pow(n as u32) {
                let mut rem = flat;
                let mut w = 1.0;
                for d in (0..n).rev() {
                    let k = rem % m;
                    rem /= m;
                    xi[d] = spaces[d].nodes[k];
                    w *= spaces[d].weights[k];
                }
                let fv = eval_forcing(f, &xi, tau);
                if fv == 0.0 {
                    continue;
                }
                let d2: f64 = (0..n).map(|i| kappa.values()[i] * (x[i] - xi[i]).powi(2)).sum();
                inner += w * fv * (-d2 / (4.0 * lag)).exp();
            }
            total += wt * pref * inner;
        }
        total
    };
    let mut panels = 4;
    let mut prev = estimate(panels);
    while panels < 64 {
        panels *= 2;
        let cur = estimate(panels);
        if (cur - prev).abs() <= 1e-6 * cur.abs() {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Consistency(format!("compact convolution quadrature did not converge (estimate {prev})")))
}

/// Bound shape with unit constant:
/// `(t+T)^{-(n/2-2)} exp(-(kappa(x) - sum_i 2 kappa_i S0 |x_i|)/(4(t+T)))`.
pub fn compact_bound_shape(kappa: &KappaForm, s0: f64, big_t: f64, x: &[f64], t: f64) -> f64 {
    let n = kappa.dim() as f64;
    let lag = t + big_t;
    let shift: f64 = kappa.values().iter().zip(x).map(|(k, v)| 2.0 * k * s0 * v.abs()).sum();
    lag.powf(-(0.5 * n - 2.0)) * (-(kappa.eval(x) - shift) / (4.0 * lag)).exp()
}

/// Returns `(integral, bound)` with the bound's constant `c_fit`.
pub fn compact_convolution_bound(kappa: &KappaForm, f: &Forcing, x: &[f64], t: f64, c_fit: f64) -> Result<(f64, f64), Error> {
    let s0 = f.support_radius();
    let threshold = compact_threshold(kappa, s0);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < threshold {
        return Err(Error::Domain(format!("|x| = {norm} is below the largeness threshold {threshold}")));
    }
    let big_t = f.support_time();
    if t <= -big_t {
        return Ok((0.0, 0.0));
    }
    let integral = compact_convolution_integral(kappa, f, x, t)?;
    Ok((integral, c_fit * compact_bound_shape(kappa, s0, big_t, x, t)))
}

/// Smallest constant dominating the calibration sample: `max integral/shape`.
pub fn fit_compact_constant(kappa: &KappaForm, f: &Forcing, points: &[(Vec<f64>, f64)]) -> Result<f64, Error> {
    let s0 = f.support_radius();
    let big_t = f.support_time();
    let mut c: f64 = 0.0;
    for (x, t) in points {
        let integral = compact_convolution_integral(kappa, f, x, *t)?;
        let shape = compact_bound_shape(kappa, s0, big_t, x, *t);
        if shape > 0.0 {
            c = c.max(integral / shape);
        }
    }
    Ok(c)
}

/// Decay envelope `C (t+T)^{-p} exp(-(kappa(x) - S|Kx|)/(4(t+T)))`, `p = n/2 - 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayBound {
    pub kappa: KappaForm,
    pub s_tilde: f64,
    pub c_fit: f64,
    pub big_t: f64,
}

impl DecayBound {
    pub fn power(&self) -> f64 {
        0.5 * self.kappa.dim() as f64 - 2.0
    }
}

pub fn eval_decay_bound(b: &DecayBound, x: &[f64], t: f64) -> Result<f64, Error> {
    let lag = t + b.big_t;
    if !(lag > 0.0) {
        return Err(Error::Domain(format!("decay bound needs t > -T, got t = {t}, T = {}", b.big_t)));
    }
    let expo = -(b.kappa.eval(x) - b.s_tilde * b.kappa.image_norm(x)) / (4.0 * lag);
    Ok(b.c_fit * lag.powf(-b.power()) * expo.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ln_factorial(k: u32) -> f64 {
        (1..=k).map(|j| (j as f64).ln()).sum()
    }

    #[test]
    fn ln_gamma_matches_factorials_and_half_integers() {
        for k in 1..30u32 {
            let got = ln_gamma(k as f64 + 1.0).unwrap();
            let want = ln_factorial(k);
            assert!((got - want).abs() <= 1e-13 * want.abs().max(1.0), "k = {k}");
        }
        assert!((ln_gamma(0.5).unwrap() - 0.5 * PI.ln()).abs() < 1e-14);
        assert!(ln_gamma(0.0).is_err());
    }

    #[test]
    fn beta_examples() {
        assert!((beta_function(1.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((beta_function(2.0, 3.0).unwrap() * 12.0 - 1.0).abs() < 1e-13);
        // Gamma(3/2) = sqrt(pi)/2, Gamma(3) = 2.
        let oracle = (PI.sqrt() / 2.0).powi(2) / 2.0;
        let got = beta_function(1.5, 1.5).unwrap();
        assert!((got - oracle).abs() <= 1e-13 * oracle);
        assert!((got - PI / 8.0).abs() < 1e-13);
        assert!(beta_function(-1.0, 2.0).is_err());
    }

    proptest! {
        #[test]
        fn beta_recurrence(a in 0.1f64..6.0, b in 0.1f64..6.0) {
            // B(a+1, b) = B(a, b) a / (a + b).
            let lhs = beta_function(a + 1.0, b).unwrap();
            let rhs = beta_function(a, b).unwrap() * a / (a + b);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }

        #[test]
        fn ln_gamma_recurrence(x in 0.05f64..20.0) {
            let lhs = ln_gamma(x + 1.0).unwrap();
            let rhs = ln_gamma(x).unwrap() + x.ln();
            prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn identity_unit_case() {
        let k = KappaForm::new(vec![1.0]).unwrap();
        let (lhs, rhs) = convolution_identity_check(&k, 0.0, 0.0, &[0.0], &[0.0], 0.0, -1.0).unwrap();
        assert!((rhs - PI.powf(1.5) / 4.0).abs() < 1e-13);
        assert!((lhs - rhs).abs() <= 1e-6 * rhs);
    }

    #[test]
    fn identity_anisotropic_case() {
        let k = KappaForm::new(vec![1.0, 2.0]).unwrap();
        let (lhs, rhs) = convolution_identity_check(&k, 0.5, 0.25, &[1.0, 0.0], &[0.0, 0.0], 0.0, -2.0).unwrap();
        assert!((lhs - rhs).abs() <= 1e-6 * rhs, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn identity_without_shift_drops_exponential() {
        let k = KappaForm::new(vec![0.7, 1.3]).unwrap();
        let rhs = convolution_closed_form(&k, 0.0, 0.0, &[0.3, 0.3], &[0.3, 0.3], 0.5, -0.5).unwrap();
        let want = 4.0 * PI / (0.7f64 * 1.3).sqrt() * beta_function(2.0, 2.0).unwrap();
        assert!((rhs - want).abs() <= 1e-14 * want);
    }

    #[test]
    fn identity_at_heat_kernel_exponents() {
        // alpha = beta = n/2 reduces to the semigroup property, B(1,1) = 1.
        let k = KappaForm::new(vec![1.5]).unwrap();
        let (lhs, rhs) = convolution_identity_check(&k, 0.5, 0.5, &[0.4], &[-0.2], 0.0, -1.0).unwrap();
        let want = (4.0 * PI / 1.5).sqrt() * (-1.5 * 0.36 / 4.0f64).exp();
        assert!((rhs - want).abs() <= 1e-13 * want);
        assert!((lhs - rhs).abs() <= 1e-6 * rhs);
    }

    #[test]
    fn identity_rejects_inadmissible_exponent() {
        let k = KappaForm::new(vec![1.0]).unwrap();
        assert!(convolution_identity_check(&k, 1.5, 0.0, &[0.0], &[0.0], 0.0, -1.0).is_err());
    }

    #[test]
    fn random_cases_are_deterministic() {
        assert_eq!(random_convolution_cases(5, 7), random_convolution_cases(5, 7));
    }

    fn unit_bump() -> Forcing {
        Forcing::CompactBump { center: vec![0.0, 0.0], radius: 1.0, amplitude: 1.0, support_time: 1.0 }
    }

    #[test]
    fn compact_bound_zero_forcing() {
        let k = KappaForm::isotropic(2);
        let (i, b) = compact_convolution_bound(&k, &Forcing::Zero, &[6.0, 0.0], 0.0, 1.0).unwrap();
        assert_eq!(i, 0.0);
        assert!(i <= b);
    }

    #[test]
    fn compact_bound_threshold_enforced() {
        let k = KappaForm::isotropic(2);
        assert!(matches!(compact_convolution_bound(&k, &unit_bump(), &[2.0, 0.0], 0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn compact_bound_dominates_out_of_sample() {
        let k = KappaForm::isotropic(2);
        let f = unit_bump();
        let calib: Vec<(Vec<f64>, f64)> = [3.0, 5.0, 7.0, 9.0]
            .iter()
            .flat_map(|&r| [-0.75, -0.25, 0.0].into_iter().map(move |t| (vec![r, 0.0], t)))
            .collect();
        let c = fit_compact_constant(&k, &f, &calib).unwrap();
        assert!(c > 0.0);
        for (x, t) in [(vec![6.0, 0.0], 0.0), (vec![4.0, 2.0], -0.5), (vec![0.0, 8.0], -0.1), (vec![3.5, 3.5], -0.6)] {
            let (i, b) = compact_convolution_bound(&k, &f, &x, t, c).unwrap();
            assert!(i > 0.0 && i <= b, "x {x:?} t {t}: {i} > {b}");
        }
    }

    #[test]
    fn compact_integral_gaussian_rate() {
        // Far from the support the integral decays like exp(-|x|^2 / (4 (t+T))).
        let k = KappaForm::isotropic(2);
        let f = unit_bump();
        let (r1, r2) = (8.0f64, 10.0f64);
        let i1 = compact_convolution_integral(&k, &f, &[r1, 0.0], 0.0).unwrap();
        let i2 = compact_convolution_integral(&k, &f, &[r2, 0.0], 0.0).unwrap();
        let denom = (r2 * r2 - r1 * r1) / (i1 / i2).ln();
        assert!((denom - 4.0).abs() <= 0.15 * 4.0, "{denom}");
    }

    #[test]
    fn decay_bound_examples() {
        let b = DecayBound { kappa: KappaForm::isotropic(2), s_tilde: 2.0, c_fit: 1.0, big_t: 1.0 };
        assert!((eval_decay_bound(&b, &[4.0, 0.0], 0.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        assert!((eval_decay_bound(&b, &[0.0, 0.0], 1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(eval_decay_bound(&b, &[0.0, 0.0], -1.0).is_err());
    }

    proptest! {
        #[test]
        fn decay_bound_decreases_along_rays(r in 0.0f64..10.0, dr in 0.01f64..1.0, t in -0.9f64..0.0, axis in 0usize..2) {
            let b = DecayBound { kappa: KappaForm::new(vec![1.0, 2.0]).unwrap(), s_tilde: 1.5, c_fit: 3.0, big_t: 1.0 };
            // Vertex of the exponent along coordinate axis i: kappa_i r = S kappa_i / 2.
            let vertex = 0.5 * b.s_tilde;
            let r = vertex + r;
            let mut x0 = [0.0; 2];
            let mut x1 = [0.0; 2];
            x0[axis] = r;
            x1[axis] = r + dr;
            prop_assert!(eval_decay_bound(&b, &x1, t).unwrap() <= eval_decay_bound(&b, &x0, t).unwrap());
        }
    }
}
