//! Problem data: quadratic targets, forcing terms, space-time grids and fields.

use serde::{Deserialize, Serialize};

use crate::spectral::{lag_operator, SymMatrix};
use crate::Error;

/// Target profile `q(x,t) = tau t + x^T A x / 2 + b.x + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadraticSpec", into = "QuadraticSpec")]
pub struct QuadraticProfile {
    a: SymMatrix,
    b: Vec<f64>,
    c: f64,
    tau: f64,
}

impl QuadraticProfile {
    /// `tau` is derived from `A`, so the profile is always a solution of the
    /// unforced flow.
    pub fn new(a: SymMatrix, b: Vec<f64>, c: f64) -> Result<Self, Error> {
        if b.len() != a.dim() {
            return Err(Error::InvalidInput(format!("b has length {}, expected {}", b.len(), a.dim())));
        }
        if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("quadratic profile has a non-finite entry".into()));
        }
        let tau = lag_operator(&a)?;
        Ok(QuadraticProfile { a, b, c, tau })
    }

    pub fn zero(n: usize) -> Self {
        Self::new(SymMatrix::zeros(n), vec![0.0; n], 0.0).expect("zero profile is valid")
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn a(&self) -> &SymMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Serialized form of [`QuadraticProfile`]; `tau` is optional and checked
/// against `A` when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl TryFrom<QuadraticSpec> for QuadraticProfile {
    type Error = Error;

    fn try_from(s: QuadraticSpec) -> Result<Self, Error> {
        let q = QuadraticProfile::new(SymMatrix::from_rows(&s.a)?, s.b, s.c)?;
        if let Some(tau) = s.tau {
            if (tau - q.tau).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "tau = {tau} does not equal sum arctan(eig A) = {}",
                    q.tau
                )));
            }
        }
        Ok(q)
    }
}

impl From<QuadraticProfile> for QuadraticSpec {
    fn from(q: QuadraticProfile) -> Self {
        QuadraticSpec { a: q.a.to_rows(), b: q.b, c: q.c, tau: None }
    }
}

pub fn eval_quadratic(q: &QuadraticProfile, x: &[f64], t: f64) -> f64 {
    let lin: f64 = q.b.iter().zip(x).map(|(b, x)| b * x).sum();
    q.tau * t + 0.5 * q.a.quad_form(x) + lin + q.c
}

/// Parabolic scale `R(x,t) = sqrt(-t + |x|^2)`.
pub fn r_scale(x: &[f64], t: f64) -> Result<f64, Error> {
    if t > 0.0 {
        return Err(Error::InvalidInput(format!("r_scale needs t <= 0, got {t}")));
    }
    Ok((norm_sq(x) - t).sqrt())
}

pub(crate) fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Standard smooth cutoff `exp(1 - 1/(1 - r^2))` on `r < 1`, equal to 1 at 0.
pub fn bump_profile(r: f64) -> f64 {
    let r2 = r * r;
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

/// Smooth time cutoff supported in `(-T, 0)`, equal to 1 at `t = -T/2`.
pub fn time_cutoff(t: f64, support_time: f64) -> f64 {
    if support_time <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * support_time;
    bump_profile((t + half) / half)
}

/// Forcing values on a regular `(x, t)` box, multilinearly interpolated and
/// zero outside the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedForcing {
    pub x_min: Vec<f64>,
    pub x_spacing: f64,
    pub x_counts: Vec<usize>,
    pub t_min: f64,
    pub t_spacing: f64,
    pub t_count: usize,
    /// Row-major over `(t, x1, ..., xn)`, time slowest.
    pub values: Vec<f64>,
}

impl TabulatedForcing {
    fn validate(&self) -> Result<(), Error> {
        let n = self.x_min.len();
        let expected = self.t_count * self.x_counts.iter().product::<usize>();
        if n == 0 || self.x_counts.len() != n || self.values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "tabulated forcing expects {expected} values for its shape, got {}",
                self.values.len()
            )));
        }
        if self.x_counts.iter().any(|&c| c < 2) || self.t_count < 2 {
            return Err(Error::InvalidInput("tabulated forcing needs at least 2 samples per axis".into()));
        }
        if !(self.x_spacing > 0.0 && self.t_spacing > 0.0) || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("tabulated forcing spacing must be positive and values finite".into()));
        }
        if self.t_min + self.t_spacing * (self.t_count - 1) as f64 > 1e-12 {
            return Err(Error::InvalidInput("tabulated forcing must live in t <= 0".into()));
        }
        Ok(())
    }

    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let n = self.x_min.len();
        // Axis 0 is time, axes 1..=n are space.
        let mut base = Vec::with_capacity(n + 1);
        let mut frac = Vec::with_capacity(n + 1);
        let mut counts = Vec::with_capacity(n + 1);
        let axes = std::iter::once((t, self.t_min, self.t_spacing, self.t_count))
            .chain((0..n).map(|i| (x[i], self.x_min[i], self.x_spacing, self.x_counts[i])));
        for (v, lo, dh, cnt) in axes {
            let u = (v - lo) / dh;
            if !(u >= 0.0 && u <= (cnt - 1) as f64) {
                return 0.0;
            }
            let k = (u.floor() as usize).min(cnt - 2);
            base.push(k);
            frac.push(u - k as f64);
            counts.push(cnt);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << (n + 1)) {
            let mut weight = 1.0;
            let mut idx = 0;
            for ax in 0..=n {
                let bit = (corner >> ax) & 1;
                weight *= if bit == 1 { frac[ax] } else { 1.0 - frac[ax] };
                idx = idx * counts[ax] + base[ax] + bit;
            }
            if weight != 0.0 {
                total += weight * self.values[idx];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Forcing {
    Zero,
    /// `amplitude * phi(|x - center| / radius) * psi(t)`.
    CompactBump { center: Vec<f64>, radius: f64, amplitude: f64, support_time: f64 },
    /// `amplitude * (1 + |x|^2 - t)^(-beta/2)`, bounded by `amplitude * R^(-beta)`.
    AlgebraicDecay { amplitude: f64, beta: f64 },
    Tabulated(TabulatedForcing),
}

impl Forcing {
    pub fn validate(&self, n: usize) -> Result<(), Error> {
        match self {
            Forcing::Zero => Ok(()),
            Forcing::CompactBump { center, radius, amplitude, support_time } => {
                if center.len() != n {
                    return Err(Error::InvalidInput(format!("bump center has length {}, expected {n}", center.len())));
                }
                if !(*radius > 0.0 && radius.is_finite() && amplitude.is_finite() && *support_time >= 0.0 && support_time.is_finite()) {
                    return Err(Error::InvalidInput("bump needs radius > 0, finite amplitude, support_time >= 0".into()));
                }
                Ok(())
            }
            Forcing::AlgebraicDecay { amplitude, beta } => {
                if !(*beta > 2.0 && beta.is_finite() && amplitude.is_finite()) {
                    return Err(Error::InvalidInput(format!("algebraic forcing needs beta > 2, got {beta}")));
                }
                Ok(())
            }
            Forcing::Tabulated(tab) => {
                if tab.x_min.len() != n {
                    return Err(Error::InvalidInput(format!("tabulated forcing has dimension {}, expected {n}", tab.x_min.len())));
                }
                tab.validate()
            }
        }
    }

    /// `T` with `f = 0` for `t <= -T`; infinite when the forcing never switches off.
    pub fn support_time(&self) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::CompactBump { support_time, .. } => *support_time,
            Forcing::AlgebraicDecay { .. } => f64::INFINITY,
            Forcing::Tabulated(tab) => (-tab.t_min).max(0.0),
        }
    }

    /// `S` with `f = 0` for `|x| >= S`; infinite for non-compact kinds.
    pub fn support_radius(&self) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::CompactBump { center, radius, .. } => norm_sq(center).sqrt() + radius,
            Forcing::AlgebraicDecay { .. } => f64::INFINITY,
            Forcing::Tabulated(tab) => {
                let far: f64 = tab
                    .x_min
                    .iter()
                    .zip(&tab.x_counts)
                    .map(|(&lo, &c)| {
                        let hi = lo + tab.x_spacing * (c - 1) as f64;
                        lo.abs().max(hi.abs()).powi(2)
                    })
                    .sum();
                far.sqrt()
            }
        }
    }

    /// `sup |f|`.
    pub fn sup_abs(&self) -> f64 {
        match self {
            Forcing::Zero => 0.0,
            Forcing::CompactBump { amplitude, support_time, .. } => {
                if *support_time > 0.0 {
                    amplitude.abs()
                } else {
                    0.0
                }
            }
            Forcing::AlgebraicDecay { amplitude, .. } => amplitude.abs(),
            Forcing::Tabulated(tab) => tab.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sup_abs() == 0.0
    }
}

pub fn eval_forcing(f: &Forcing, x: &[f64], t: f64) -> f64 {
    match f {
        Forcing::Zero => 0.0,
        Forcing::CompactBump { center, radius, amplitude, support_time } => {
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            let space = bump_profile(r2.sqrt() / radius);
            if space == 0.0 {
                return 0.0;
            }
            amplitude * space * time_cutoff(t, *support_time)
        }
        Forcing::AlgebraicDecay { amplitude, beta } => amplitude * (1.0 + norm_sq(x) - t).powf(-0.5 * beta),
        Forcing::Tabulated(tab) => tab.eval(x, t),
    }
}

/// Default node budget (about 160 MB per stored level pair at 8 bytes/node).
pub const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// Uniform grid on `[-R, R]^n x [t_start, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceTimeGrid {
    pub n: usize,
    pub radius: f64,
    pub h: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl SpaceTimeGrid {
    pub fn new(n: usize, radius: f64, h: f64, t_start: f64, t_end: f64, dt: f64) -> Result<Self, Error> {
        let g = SpaceTimeGrid { n, radius, h, t_start, t_end, dt };
        g.validate(DEFAULT_NODE_BUDGET)?;
        Ok(g)
    }

    /// Grid with `dt = cfl_safety * h^2 / (2n)`.
    pub fn with_cfl(n: usize, radius: f64, h: f64, t_start: f64, t_end: f64, cfl_safety: f64) -> Result<Self, Error> {
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl_safety must lie in (0, 1], got {cfl_safety}")));
        }
        Self::new(n, radius, h, t_start, t_end, cfl_safety * h * h / (2.0 * n as f64))
    }

    pub fn cfl_bound(&self) -> f64 {
        self.h * self.h / (2.0 * self.n as f64)
    }

    pub fn validate(&self, node_budget: usize) -> Result<(), Error> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::InvalidInput(format!("spatial dimension must be 1, 2 or 3, got {}", self.n)));
        }
        if !(self.radius > 0.0 && self.h > 0.0 && self.radius.is_finite() && self.h.is_finite()) {
            return Err(Error::InvalidInput("grid radius and spacing must be positive".into()));
        }
        let cells = 2.0 * self.radius / self.h;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 2.0 {
            return Err(Error::InvalidInput(format!("2R/h = {cells} must be an integer >= 2")));
        }
        if !(self.t_start < self.t_end && self.t_end <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "need t_start < t_end <= 0, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput("dt must be positive".into()));
        }
        if self.dt > self.cfl_bound() * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt: self.dt, bound: self.cfl_bound() });
        }
        let nodes = (self.per_axis() as f64).powi(self.n as i32);
        if nodes > node_budget as f64 {
            return Err(Error::InvalidInput(format!("grid has {nodes} nodes, budget is {node_budget}")));
        }
        Ok(())
    }

    /// Nodes per axis, `2R/h + 1`.
    pub fn per_axis(&self) -> usize {
        (2.0 * self.radius / self.h).round() as usize + 1
    }

    pub fn node_count(&self) -> usize {
        self.per_axis().pow(self.n as u32)
    }

    /// Number of steps; the last step is shortened to land on `t_end`.
    pub fn step_count(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt * (1.0 - 1e-12)).ceil() as usize
    }

    /// Time after `k` steps.
    pub fn time_at(&self, k: usize) -> f64 {
        (self.t_start + k as f64 * self.dt).min(self.t_end)
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.radius + k as f64 * self.h
    }

    /// Multi-index of a flat (row-major, first axis slowest) node index.
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let m = self.per_axis();
        let mut out = vec![0; self.n];
        for d in (0..self.n).rev() {
            out[d] = idx % m;
            idx /= m;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let m = self.per_axis();
        multi.iter().fold(0, |acc, &k| acc * m + k)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx).into_iter().map(|k| self.coord(k)).collect()
    }

    /// Distance (in nodes) from the nearest face of the box.
    pub fn depth(&self, idx: usize) -> usize {
        let m = self.per_axis();
        self.multi_index(idx).into_iter().map(|k| k.min(m - 1 - k)).min().unwrap_or(0)
    }
}

/// One time level of nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: SpaceTimeGrid,
    pub t: f64,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn from_fn(grid: &SpaceTimeGrid, t: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(&grid.point(i))).collect();
        GridField { grid: grid.clone(), t, values }
    }

    pub fn quadratic(grid: &SpaceTimeGrid, q: &QuadraticProfile, t: f64) -> Self {
        Self::from_fn(grid, t, |x| eval_quadratic(q, x, t))
    }

    pub fn check_finite(&self) -> Result<(), Error> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Divergence { node: self.grid.multi_index(i), x: self.grid.point(i), t: self.t }),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn bump() -> Forcing {
        Forcing::CompactBump { center: vec![0.0, 0.0], radius: 1.0, amplitude: 1.0, support_time: 1.0 }
    }

    #[test]
    fn quadratic_examples() {
        assert_eq!(eval_quadratic(&QuadraticProfile::zero(2), &[3.0, -1.0], -2.0), 0.0);
        let q = QuadraticProfile::new(SymMatrix::identity(2), vec![0.0; 2], 0.0).unwrap();
        assert!((q.tau() - FRAC_PI_2).abs() < 1e-15);
        assert!((eval_quadratic(&q, &[1.0, 1.0], -1.0) - (1.0 - FRAC_PI_2)).abs() < 1e-15);
        let q = QuadraticProfile::new(SymMatrix::from_diag(&[1.0, 3.0]), vec![1.0, 0.0], 2.0).unwrap();
        assert!((q.tau() - (1f64.atan() + 3f64.atan())).abs() < 1e-14);
        // Hand evaluation: (4 + 3)/2 + 2 + 2.
        assert_eq!(eval_quadratic(&q, &[2.0, 1.0], 0.0), 7.5);
    }

    #[test]
    fn quadratic_spec_rejects_wrong_tau() {
        let spec = QuadraticSpec { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![0.0; 2], c: 0.0, tau: Some(1.0) };
        assert!(QuadraticProfile::try_from(spec).is_err());
        let spec = QuadraticSpec { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![0.0; 2], c: 0.0, tau: Some(FRAC_PI_2) };
        assert!(QuadraticProfile::try_from(spec).is_ok());
    }

    #[test]
    fn r_scale_examples() {
        assert_eq!(r_scale(&[0.0, 0.0], 0.0).unwrap(), 0.0);
        assert_eq!(r_scale(&[3.0, 4.0], 0.0).unwrap(), 5.0);
        assert_eq!(r_scale(&[0.0], -9.0).unwrap(), 3.0);
        assert!(r_scale(&[0.0], 0.5).is_err());
    }

    #[test]
    fn forcing_examples() {
        assert_eq!(eval_forcing(&Forcing::Zero, &[1.0, 2.0], -3.0), 0.0);
        assert_eq!(eval_forcing(&bump(), &[2.0, 0.0], -0.5), 0.0);
        assert_eq!(eval_forcing(&bump(), &[0.0, 0.0], -0.5), 1.0);
        assert_eq!(bump().support_radius(), 1.0);
    }

    #[test]
    fn tabulated_interpolates_and_vanishes_outside() {
        let tab = TabulatedForcing {
            x_min: vec![-1.0],
            x_spacing: 1.0,
            x_counts: vec![3],
            t_min: -1.0,
            t_spacing: 1.0,
            t_count: 2,
            values: vec![0.0, 2.0, 0.0, 0.0, 4.0, 0.0],
        };
        let f = Forcing::Tabulated(tab);
        f.validate(1).unwrap();
        assert!((eval_forcing(&f, &[0.0], -0.5) - 3.0).abs() < 1e-15);
        assert!((eval_forcing(&f, &[0.5], -1.0) - 1.0).abs() < 1e-15);
        assert_eq!(eval_forcing(&f, &[1.5], -0.5), 0.0);
        assert_eq!(eval_forcing(&f, &[0.0], -1.5), 0.0);
        assert_eq!(f.sup_abs(), 4.0);
    }

    #[test]
    fn forcing_json_rejects_unknown_keys() {
        let ok = r#"{"kind":"compact-bump","center":[0,0],"radius":1,"amplitude":1,"support_time":1}"#;
        assert_eq!(serde_json_roundtrip(ok), bump());
        let bad = r#"{"kind":"compact-bump","center":[0,0],"radius":1,"amplitude":1,"support_time":1,"extra":2}"#;
        assert!(serde_json_parse(bad).is_err());
    }

    fn serde_json_parse(s: &str) -> Result<Forcing, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn serde_json_roundtrip(s: &str) -> Forcing {
        let f = serde_json_parse(s).unwrap();
        let back: Forcing = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
        f
    }

    #[test]
    fn grid_validation() {
        assert!(SpaceTimeGrid::with_cfl(2, 8.0, 0.1, -2.0, 0.0, 0.9).is_ok());
        assert!(matches!(SpaceTimeGrid::new(2, 1.0, 0.1, -1.0, 0.0, 0.01), Err(Error::Cfl { .. })));
        assert!(SpaceTimeGrid::with_cfl(2, 1.0, 0.3, -1.0, 0.0, 0.9).is_err());
        assert!(SpaceTimeGrid::with_cfl(2, 1.0, 0.1, 0.0, 1.0, 0.9).is_err());
        assert!(SpaceTimeGrid::with_cfl(3, 100.0, 0.01, -1.0, 0.0, 0.9).is_err());
        let g = SpaceTimeGrid::with_cfl(2, 1.0, 0.5, -1.0, 0.0, 0.9).unwrap();
        assert_eq!(g.per_axis(), 5);
        assert_eq!(g.point(g.flat_index(&[1, 4])), vec![-0.5, 1.0]);
        assert_eq!(g.time_at(g.step_count()), 0.0);
    }

    proptest! {
        #[test]
        fn quadratic_second_differences_are_constant(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, t in -5.0f64..0.0) {
            let q = QuadraticProfile::new(SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, -1.0]]).unwrap(), vec![0.3, -0.7], 1.0).unwrap();
            let h = 0.25;
            let d2 = (eval_quadratic(&q, &[x0 + h, x1], t) - 2.0 * eval_quadratic(&q, &[x0, x1], t) + eval_quadratic(&q, &[x0 - h, x1], t)) / (h * h);
            prop_assert!((d2 - 2.0).abs() < 1e-9);
            let dt = 0.125;
            let dq = eval_quadratic(&q, &[x0, x1], t) - eval_quadratic(&q, &[x0, x1], t - dt);
            prop_assert!((dq - q.tau() * dt).abs() < 1e-12);
        }

        #[test]
        fn compact_forcing_vanishes_off_support(r in 1.0f64..5.0, th in 0.0f64..(2.0 * PI), t in -3.0f64..0.0, ts in -3.0f64..-1.0) {
            let x = [r * th.cos(), r * th.sin()];
            prop_assert_eq!(eval_forcing(&bump(), &x, t), 0.0);
            prop_assert_eq!(eval_forcing(&bump(), &[0.1, 0.2], ts), 0.0);
        }

        #[test]
        fn algebraic_forcing_bounded_by_scale(x0 in -20.0f64..20.0, x1 in -20.0f64..20.0, t in -50.0f64..0.0) {
            let f = Forcing::AlgebraicDecay { amplitude: 2.0, beta: 3.0 };
            let r = r_scale(&[x0, x1], t).unwrap();
            prop_assume!(r > 1e-6);
            prop_assert!(eval_forcing(&f, &[x0, x1], t) <= 2.0 * r.powf(-3.0));
        }

        #[test]
        fn r_scale_squares_exactly(x0 in -10.0f64..10.0, t in -10.0f64..0.0) {
            let r = r_scale(&[x0], t).unwrap();
            prop_assert!((r * r - (x0 * x0 - t)).abs() <= 1e-12 * (1.0 + x0 * x0 - t));
        }
    }
}
