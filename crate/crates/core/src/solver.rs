//! Explicit forward-Euler stepping of `u_t = sum arctan(lambda_i(D^2 u)) + f`
//! with Dirichlet data on the faces of `[-R, R]^n`.
//!
//! Two spatial discretizations are available. [`Stencil::Central`] feeds the
//! central-difference Hessian to the exact operator; it is exact for every
//! quadratic but only monotone when the operator's linearization is
//! diagonally dominant. [`Stencil::Monotone`] (default) builds each eigenvalue
//! from min/max combinations of directional second differences
//! `(u(x+hv) - 2u(x) + u(x-hv)) / (h|v|)^2`. Every such quotient is
//! nondecreasing in the neighbours, so under `dt <= h^2/(2n)` the update is
//! monotone for arbitrary data.
//! In 2D the direction set is closed under quarter turns, which makes
//! `lambda_min + lambda_max` equal the discrete Laplacian along the matched pair.

use rayon::prelude::*;

use crate::barriers::{untranslated_barrier, BarrierProfile};
use crate::problem::{eval_forcing, eval_quadratic, Forcing, GridField, QuadraticProfile, SpaceTimeGrid};
use crate::spectral::{lag_operator, SymMatrix};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    #[default]
    Monotone,
    Central,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryRule {
    QuadraticExact(QuadraticProfile),
    /// Boundary values from a sub- or super-barrier of the given target.
    Barrier { profile: Box<BarrierProfile>, target: QuadraticProfile },
}

impl BoundaryRule {
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        match self {
            BoundaryRule::QuadraticExact(q) => eval_quadratic(q, x, t),
            BoundaryRule::Barrier { profile, target } => untranslated_barrier(profile, target, x, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub grid: SpaceTimeGrid,
    pub boundary: BoundaryRule,
    pub initial: GridField,
    pub cfl_safety: f64,
    pub snapshot_times: Vec<f64>,
    pub stencil: Stencil,
}

impl SolverConfig {
    /// Quadratic initial and boundary data.
    pub fn quadratic(grid: SpaceTimeGrid, q: &QuadraticProfile) -> Result<Self, Error> {
        if q.dim() != grid.n {
            return Err(Error::InvalidInput(format!("profile has dimension {}, grid has {}", q.dim(), grid.n)));
        }
        let cfl_safety = grid.dt / grid.cfl_bound();
        Ok(SolverConfig {
            initial: GridField::quadratic(&grid, q, grid.t_start),
            boundary: BoundaryRule::QuadraticExact(q.clone()),
            grid,
            cfl_safety,
            snapshot_times: Vec::new(),
            stencil: Stencil::default(),
        })
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.grid.validate(usize::MAX)?;
        if self.initial.grid != self.grid {
            return Err(Error::InvalidInput("initial field lives on a different grid".into()));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::InvalidInput(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety)));
        }
        Ok(())
    }
}

/// Central-difference Hessian at an interior node.
pub fn hessian_at(u: &GridField, node: usize) -> Result<SymMatrix, Error> {
    let g = &u.grid;
    if node >= g.node_count() || g.depth(node) < 1 {
        return Err(Error::Domain(format!("node {:?} has no full one-ring", g.multi_index(node.min(g.node_count() - 1)))));
    }
    let strides = strides(g);
    let v = &u.values;
    let h2 = g.h * g.h;
    let mut m = SymMatrix::zeros(g.n);
    for i in 0..g.n {
        let si = strides[i];
        m.set(i, i, (v[node + si] - 2.0 * v[node] + v[node - si]) / h2);
        for j in 0..i {
            let sj = strides[j];
            let cross = v[node + si + sj] - v[node + si - sj] - v[node - si + sj] + v[node - si - sj];
            m.set(i, j, cross / (4.0 * h2));
        }
    }
    Ok(m)
}

fn strides(g: &SpaceTimeGrid) -> Vec<usize> {
    let m = g.per_axis();
    (0..g.n).map(|d| m.pow((g.n - 1 - d) as u32)).collect()
}

fn directions(n: usize) -> Vec<Vec<i64>> {
    match n {
        1 => vec![vec![1]],
        2 => vec![vec![1, 0], vec![0, 1], vec![1, 1], vec![1, -1], vec![2, 1], vec![1, 2], vec![2, -1], vec![1, -2]],
        _ => {
            // One representative per line through the origin in {-1,0,1}^3.
            let mut out = Vec::new();
            for a in -1i64..=1 {
                for b in -1i64..=1 {
                    for c in -1i64..=1 {
                        let v = [a, b, c];
                        let lead = v.iter().find(|&&x| x != 0);
                        if lead == Some(&1) {
                            out.push(v.to_vec());
                        }
                    }
                }
            }
            out
        }
    }
}

/// Precomputed neighbour offsets for one grid and stencil.
#[derive(Debug, Clone)]
pub struct Scheme {
    stencil: Stencil,
    n: usize,
    h: f64,
    reach: usize,
    strides: Vec<usize>,
    /// `(flat offset, 1 / (h |v|)^2)` per direction.
    dirs: Vec<(isize, f64)>,
    /// Direction indices of each plane used for the middle eigenvalue in 3D.
    planes: Vec<Vec<usize>>,
}

impl Scheme {
    pub fn new(grid: &SpaceTimeGrid, stencil: Stencil) -> Self {
        let strides = strides(grid);
        let n = grid.n;
        let dv = directions(n);
        let dirs = dv
            .iter()
            .map(|v| {
                let off: isize = v.iter().zip(&strides).map(|(&c, &s)| c as isize * s as isize).sum();
                let len2: i64 = v.iter().map(|c| c * c).sum();
                (off, 1.0 / (grid.h * grid.h * len2 as f64))
            })
            .collect();
        let mut planes = Vec::new();
        if n == 3 {
            // Coordinate planes and the diagonal planes x_i = +-x_j, each
            // holding four directions 45 degrees apart.
            let normals: [[i64; 3]; 9] =
                [[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, -1, 0], [1, 1, 0], [1, 0, -1], [1, 0, 1], [0, 1, -1], [0, 1, 1]];
            for nrm in normals {
                let members: Vec<usize> =
                    dv.iter().enumerate().filter(|(_, v)| v.iter().zip(&nrm).map(|(a, b)| a * b).sum::<i64>() == 0).map(|(k, _)| k).collect();
                planes.push(members);
            }
        }
        let reach = match stencil {
            Stencil::Central => 1,
            Stencil::Monotone => dv.iter().flatten().map(|c| c.unsigned_abs() as usize).max().unwrap_or(1),
        };
        Scheme { stencil, n, h: grid.h, reach, strides, dirs, planes }
    }

    /// Width of the Dirichlet ring, in nodes.
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// Discrete `sum arctan(lambda_i(D^2 u))` at an interior node.
    pub fn operator_at(&self, v: &[f64], node: usize) -> f64 {
        match self.stencil {
            Stencil::Monotone => self.monotone_at(v, node),
            Stencil::Central => {
                let h2 = self.h * self.h;
                let mut m = SymMatrix::zeros(self.n);
                for i in 0..self.n {
                    let si = self.strides[i];
                    m.set(i, i, (v[node + si] - 2.0 * v[node] + v[node - si]) / h2);
                    for j in 0..i {
                        let sj = self.strides[j];
                        let cross = v[node + si + sj] - v[node + si - sj] - v[node - si + sj] + v[node - si - sj];
                        m.set(i, j, cross / (4.0 * h2));
                    }
                }
                // Finite input always yields a value; divergence is caught per step.
                lag_operator(&m).unwrap_or(f64::NAN)
            }
        }
    }

    fn monotone_at(&self, v: &[f64], node: usize) -> f64 {
        let c = v[node];
        let mut d = [0.0; 13];
        for (k, &(off, w)) in self.dirs.iter().enumerate() {
            let p = v[(node as isize + off) as usize];
            let m = v[(node as isize - off) as usize];
            d[k] = (p + m - 2.0 * c) * w;
        }
        let d = &d[..self.dirs.len()];
        let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match self.n {
            1 => d[0].atan(),
            2 => lo.atan() + hi.atan(),
            _ => {
                let mid = self
                    .planes
                    .iter()
                    .map(|p| p.iter().map(|&k| d[k]).fold(f64::INFINITY, f64::min))
                    .fold(f64::NEG_INFINITY, f64::max);
                lo.atan() + mid.atan() + hi.atan()
            }
        }
    }

    fn is_interior(&self, grid: &SpaceTimeGrid, idx: usize) -> bool {
        grid.depth(idx) >= self.reach
    }
}

/// One forward-Euler step from `u` (at time `u.t`) to `t_next`.
pub fn step(u: &GridField, t_next: f64, f: &Forcing, cfg: &SolverConfig) -> Result<GridField, Error> {
    let scheme = Scheme::new(&u.grid, cfg.stencil);
    step_with(&scheme, u, t_next, f, &cfg.boundary)
}

pub fn step_with(scheme: &Scheme, u: &GridField, t_next: f64, f: &Forcing, boundary: &BoundaryRule) -> Result<GridField, Error> {
    let g = &u.grid;
    let dt = t_next - u.t;
    if !(dt > 0.0) || dt > g.cfl_bound() * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, bound: g.cfl_bound() });
    }
    let t = u.t;
    let values: Vec<f64> = (0..g.node_count())
        .into_par_iter()
        .map(|idx| {
            let x = g.point(idx);
            if scheme.is_interior(g, idx) {
                u.values[idx] + dt * (scheme.operator_at(&u.values, idx) + eval_forcing(f, &x, t))
            } else {
                boundary.value(&x, t_next)
            }
        })
        .collect();
    let out = GridField { grid: g.clone(), t: t_next, values };
    out.check_finite()?;
    Ok(out)
}

/// March from `t_start` to `t_end`, calling `visit` on the initial level and
/// after every step.
pub fn solve_with(cfg: &SolverConfig, f: &Forcing, mut visit: impl FnMut(usize, &GridField) -> Result<(), Error>) -> Result<GridField, Error> {
    cfg.validate()?;
    f.validate(cfg.grid.n)?;
    let scheme = Scheme::new(&cfg.grid, cfg.stencil);
    let mut u = cfg.initial.clone();
    u.t = cfg.grid.t_start;
    u.check_finite()?;
    visit(0, &u)?;
    for k in 1..=cfg.grid.step_count() {
        u = step_with(&scheme, &u, cfg.grid.time_at(k), f, &cfg.boundary)?;
        visit(k, &u)?;
    }
    Ok(u)
}

/// Snapshots at the first time level at or after each requested time; the
/// final level when none are requested.
pub fn solve(cfg: &SolverConfig, f: &Forcing) -> Result<Vec<GridField>, Error> {
    let mut wanted: Vec<f64> = cfg.snapshot_times.clone();
    wanted.sort_by(f64::total_cmp);
    let eps = 1e-9 * cfg.grid.dt;
    let mut next = 0;
    let mut snaps = Vec::with_capacity(wanted.len());
    let last = solve_with(cfg, f, |_, u| {
        while next < wanted.len() && u.t >= wanted[next] - eps {
            snaps.push(u.clone());
            next += 1;
        }
        Ok(())
    })?;
    if wanted.is_empty() {
        snaps.push(last);
    }
    Ok(snaps)
}
