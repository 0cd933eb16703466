use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lagflow_cli::config::{apply_overrides, ChiSearchSpec, KernelCheckSpec};
use lagflow_cli::{
    barrier_command, chi_search_command, kernel_check_command, output_dir, run_command, solve_command, verify_command, CliError,
    ExperimentConfig, Status,
};

#[derive(Parser)]
#[command(name = "lagflow", version, about = "Solver, barriers and decay-rate verification for u_t = sum arctan(eig D2u) + f")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a tolerance below `checks`, e.g. `rigidity.tol=1e-8`. Repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VALUE")]
    tol_override: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver and write snapshots plus a run manifest.
    Solve(Common),
    /// Build the sub- and supersolution profiles.
    Barrier(Common),
    /// Check a finished run against the configured verification list.
    Verify(Common),
    /// solve, barrier and verify in sequence.
    Run(Common),
    /// Quadrature check of the heat-kernel convolution identity.
    KernelCheck {
        #[command(flatten)]
        common: Common,
        /// `default` or a case count.
        #[arg(long, default_value = "default")]
        cases: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Grid search for a comparison-barrier witness (c, k, beta).
    ChiSearch {
        #[command(flatten)]
        common: Common,
        /// Truncation radius; repeatable.
        #[arg(long = "R", value_name = "R")]
        radii: Vec<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(common: &Common) -> Result<Option<ExperimentConfig>, CliError> {
    common.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn require(common: &Common) -> Result<ExperimentConfig, CliError> {
    let cfg = load(common)?.ok_or_else(|| CliError::Config("--config is required".into()))?;
    cfg.with_overrides(&common.tol_override)
}

fn execute(cmd: Command) -> Result<Status, CliError> {
    match cmd {
        Command::Solve(c) => {
            let cfg = require(&c)?;
            let out = output_dir(Some(&cfg), c.out.as_deref());
            let m = solve_command(&cfg, &out)?;
            println!("solve: {} steps, {} snapshots, max |u - q| = {:e} -> {}", m.steps, m.snapshot_times.len(), m.diagnostics.max_abs_error, out.display());
            Ok(Status::Passed)
        }
        Command::Barrier(c) => {
            let cfg = require(&c)?;
            let out = output_dir(Some(&cfg), c.out.as_deref());
            let (summary, status) = barrier_command(&cfg, &out)?;
            for b in &summary.branches {
                println!("barrier {:?}: theta = {}, M = {} (beta/2 = {}), tail slope {:.4}", b.branch, b.theta, b.m_value, b.half_beta, b.tail_slope);
            }
            Ok(status)
        }
        Command::Verify(c) => {
            let cfg = require(&c)?;
            let out = output_dir(Some(&cfg), c.out.as_deref());
            let (verdict, status) = verify_command(&cfg, &out)?;
            for o in &verdict.checks {
                println!("{}: {}", o.check, if o.passed { "pass" } else { "FAIL" });
            }
            Ok(status)
        }
        Command::Run(c) => {
            let cfg = require(&c)?;
            let out = output_dir(Some(&cfg), c.out.as_deref());
            let status = run_command(&cfg, &out)?;
            println!("run {}: {}", cfg.name, if status == Status::Passed { "pass" } else { "FAIL" });
            Ok(status)
        }
        Command::KernelCheck { common, cases, seed } => {
            let cfg = load(&common)?;
            let mut spec = cfg.as_ref().map(|c| c.checks.kernel.clone()).unwrap_or_default();
            if cases != "default" {
                spec.cases = cases.parse().map_err(|_| CliError::Config(format!("--cases expects `default` or a count, got `{cases}`")))?;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let spec: KernelCheckSpec = apply_overrides(&spec, "kernel", &common.tol_override)?;
            let out = output_dir(cfg.as_ref(), common.out.as_deref());
            let (rows, status) = kernel_check_command(&spec, &out)?;
            let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
            println!("kernel-check: {} cases, worst relative error {worst:e} (tol {:e})", rows.len(), spec.rel_tol);
            Ok(status)
        }
        Command::ChiSearch { common, radii, n, samples, seed } => {
            let cfg = load(&common)?;
            let mut spec = cfg.as_ref().map(|c| c.checks.chi.clone()).unwrap_or_default();
            if !radii.is_empty() {
                spec.radii = radii;
            }
            spec.n = n.unwrap_or(spec.n);
            spec.samples = samples.unwrap_or(spec.samples);
            spec.seed = seed.unwrap_or(spec.seed);
            let spec: ChiSearchSpec = apply_overrides(&spec, "chi", &common.tol_override)?;
            let out = output_dir(cfg.as_ref(), common.out.as_deref());
            let (summary, status) = chi_search_command(&spec, &out)?;
            match summary.result.witness {
                Some([c, k, b]) => println!("chi-search: witness c = {c}, k = {k}, beta = {b}"),
                None => println!("chi-search: no witness in {} candidates", summary.result.candidates_tried),
            }
            Ok(status)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
