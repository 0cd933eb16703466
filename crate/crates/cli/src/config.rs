//! Experiment configuration: a JSON document with strict key checking.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use lagflow::barriers::{ThetaRule, DEFAULT_ENVELOPE_FLOOR};
use lagflow::problem::{Forcing, QuadraticProfile, QuadraticSpec, SpaceTimeGrid};
use lagflow::solver::Stencil;
use lagflow::verify::Annulus;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSpec,
    pub grid: GridSpec,
    #[serde(default)]
    pub snapshots: SnapshotSpec,
    #[serde(default)]
    pub barriers: BarrierSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub quadratic: QuadraticSpec,
    pub forcing: Forcing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub radius: f64,
    pub h: f64,
    pub t_start: f64,
    #[serde(default)]
    pub t_end: f64,
    /// Explicit step; when absent `dt = cfl_safety * h^2 / (2n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl_safety")]
    pub cfl_safety: f64,
    #[serde(default)]
    pub stencil: Stencil,
}

fn default_cfl_safety() -> f64 {
    0.9
}

/// Snapshot times `start, start + every, ...` up to `t_end` (always included).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSpec {
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_floor")]
    pub envelope_floor: f64,
    #[serde(default)]
    pub w0: W0Policy,
    #[serde(default)]
    pub theta_rule: ThetaRule,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

fn default_beta() -> f64 {
    3.0
}

fn default_floor() -> f64 {
    DEFAULT_ENVELOPE_FLOOR
}

fn default_s_max() -> f64 {
    1e4
}

impl Default for BarrierSpec {
    fn default() -> Self {
        BarrierSpec {
            beta: default_beta(),
            envelope_floor: default_floor(),
            w0: W0Policy::default(),
            theta_rule: ThetaRule::default(),
            s_max: default_s_max(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum W0Policy {
    #[default]
    Midpoint,
    /// The same starting value for both branches.
    Value(f64),
}

/// Verification checks. A check is enabled when its key is present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rigidity: Option<RigidityCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponential_rate: Option<ExponentialRateCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial_rate: Option<PolynomialRateCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearization: Option<LinearizationCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichCheck>,
    #[serde(default)]
    pub kernel: KernelCheckSpec,
    #[serde(default)]
    pub chi: ChiSearchSpec,
}

/// Max `|u - q|` over every time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactCheck {
    #[serde(default = "default_exact_tol")]
    pub tol: f64,
}

fn default_exact_tol() -> f64 {
    1e-9
}

/// Max `|u - q|` over the levels with `t <= -T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigidityCheck {
    #[serde(default = "default_exact_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentialRateCheck {
    /// Defaults to `[S + 3, R - 2]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annulus: Option<Annulus>,
    /// Max entrywise deviation of the fitted kappa from `I + A^2`.
    #[serde(default = "default_kappa_tol")]
    pub kappa_tol: f64,
    #[serde(default = "default_r2_min")]
    pub r2_min: f64,
    #[serde(default = "default_fraction_min")]
    pub domination_min: f64,
}

fn default_kappa_tol() -> f64 {
    0.25
}

fn default_r2_min() -> f64 {
    0.95
}

fn default_fraction_min() -> f64 {
    0.99
}

/// Log-log slope of `sup_t |E|` against `-(beta - 2)` of an algebraic forcing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialRateCheck {
    pub annulus: Annulus,
    #[serde(default = "default_slope_rel_tol")]
    pub rel_tol: f64,
}

fn default_slope_rel_tol() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearizationCheck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annulus: Option<Annulus>,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_fraction_min")]
    pub min_fraction: f64,
}

fn default_factor() -> f64 {
    10.0
}

/// `sub <= u <= sup` on every snapshot, up to `tol`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SandwichCheck {
    #[serde(default = "default_sandwich_tol")]
    pub tol: f64,
}

fn default_sandwich_tol() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckSpec {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default = "default_kernel_seed")]
    pub seed: u64,
    #[serde(default = "default_kernel_tol")]
    pub rel_tol: f64,
}

fn default_cases() -> usize {
    20
}

fn default_kernel_seed() -> u64 {
    2024
}

fn default_kernel_tol() -> f64 {
    1e-6
}

impl Default for KernelCheckSpec {
    fn default() -> Self {
        KernelCheckSpec { cases: default_cases(), seed: default_kernel_seed(), rel_tol: default_kernel_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiSearchSpec {
    #[serde(default = "default_chi_n")]
    pub n: usize,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_one")]
    pub k_deg: f64,
    #[serde(default = "default_alpha")]
    pub alpha_deg: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_chi_seed")]
    pub seed: u64,
}

fn default_chi_n() -> usize {
    2
}

fn default_radii() -> Vec<f64> {
    vec![10.0, 100.0]
}

fn default_one() -> f64 {
    1.0
}

fn default_alpha() -> f64 {
    0.5
}

fn default_samples() -> usize {
    10_000
}

fn default_chi_seed() -> u64 {
    9
}

impl Default for ChiSearchSpec {
    fn default() -> Self {
        ChiSearchSpec {
            n: default_chi_n(),
            radii: default_radii(),
            k_deg: default_one(),
            alpha_deg: default_alpha(),
            samples: default_samples(),
            seed: default_chi_seed(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(CliError::from_json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `path=value` overrides below `checks`, e.g. `rigidity.tol=1e-8`.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let checks = apply_overrides(&self.checks, "", overrides)?;
        let cfg = ExperimentConfig { checks, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let q = self.quadratic()?;
        self.grid()?;
        if q.dim() != self.grid.n {
            return Err(CliError::Config(format!("quadratic has dimension {}, grid has n = {}", q.dim(), self.grid.n)));
        }
        self.problem.forcing.validate(self.grid.n)?;
        if let Some(every) = self.snapshots.every {
            if !(every > 0.0) {
                return Err(CliError::Config(format!("snapshots.every must be positive, got {every}")));
            }
        }
        if !(self.barriers.beta > 2.0) {
            return Err(CliError::Config(format!("barriers.beta must exceed 2, got {}", self.barriers.beta)));
        }
        Ok(())
    }

    pub fn quadratic(&self) -> Result<QuadraticProfile, CliError> {
        Ok(QuadraticProfile::try_from(self.problem.quadratic.clone())?)
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid, CliError> {
        let g = &self.grid;
        let grid = match g.dt {
            Some(dt) => SpaceTimeGrid::new(g.n, g.radius, g.h, g.t_start, g.t_end, dt)?,
            None => SpaceTimeGrid::with_cfl(g.n, g.radius, g.h, g.t_start, g.t_end, g.cfl_safety)?,
        };
        Ok(grid)
    }

    /// Requested snapshot times, always ending at `t_end`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let mut times = Vec::new();
        if let Some(every) = self.snapshots.every {
            let start = self.snapshots.start.unwrap_or(self.grid.t_start);
            let count = ((self.grid.t_end - start) / every + 1e-9).floor().max(0.0) as usize;
            times.extend((0..=count).map(|k| start + k as f64 * every).filter(|t| *t < self.grid.t_end - 1e-12));
        }
        times.push(self.grid.t_end);
        times
    }

    /// `[S + 3, R - 2]` with `S` the forcing support radius (0 when unbounded).
    pub fn default_annulus(&self) -> Annulus {
        let s = self.problem.forcing.support_radius();
        let s = if s.is_finite() { s } else { 0.0 };
        Annulus { inner: s + 3.0, outer: self.grid.radius - 2.0 }
    }
}

/// Sets each `a.b.c=value` override on the serialized form of `spec` and
/// reads it back. A leading `prefix.` on a key is ignored.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(spec: &T, prefix: &str, overrides: &[String]) -> Result<T, CliError> {
    let mut doc = serde_json::to_value(spec).map_err(|e| CliError::Config(e.to_string()))?;
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("tolerance override `{item}` is not of the form key=value")))?;
        let value: serde_json::Value = serde_json::from_str(raw).map_err(|e| CliError::Config(format!("override `{item}`: {e}")))?;
        let path = if prefix.is_empty() { path } else { path.strip_prefix(prefix).and_then(|p| p.strip_prefix('.')).unwrap_or(path) };
        let keys: Vec<&str> = path.split('.').collect();
        let mut node = &mut doc;
        for (i, key) in keys.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| CliError::Config(format!("override `{item}`: `{key}` is not inside an object")))?;
            if i + 1 == keys.len() {
                obj.insert((*key).to_string(), value.clone());
                break;
            }
            node = obj.entry(*key).or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
    }
    serde_json::from_value(doc).map_err(|e| CliError::Config(format!("after overrides: {e}")))
}
