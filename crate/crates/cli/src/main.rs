//! `wns`: batch front end for weighted Navier–Stokes solves.
//!
//! Exit codes: 0 success, 1 spec or usage error, 2 numerical non-convergence
//! (artifacts are still written).

mod spec;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use wns_core::solver::{apriori_bound_check, picard, smallness_indicator, SolverError};
use wns_core::study::{run_convergence, NuChoice, StudyConfig, StudyError, StudyProblem};
use wns_core::{AnalyticBuiltin, ConstantsReport, ForcingSpec, SolveOptions, TaylorHoodSpace};

use spec::LoadedSpec;

#[derive(Debug, Parser)]
#[command(
    name = "wns",
    version,
    about = "Weighted Navier-Stokes solver with singular forcing"
)]
struct Cli {
    /// Seed for the randomized constant estimators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Picard solve; writes the solution, the iteration trace and the constants.
    Solve { spec: PathBuf },
    /// Convergence study over uniform refinements of the spec mesh.
    Convergence {
        spec: PathBuf,
        #[arg(long, default_value_t = 4)]
        levels: usize,
    },
    /// Weight classification and dyadic A2 scan.
    Weights { spec: PathBuf },
    /// Smallness indicator and the constants entering it.
    Constants { spec: PathBuf },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Convergence { .. } => "convergence",
            Command::Weights { .. } => "weights",
            Command::Constants { .. } => "constants",
        }
    }

    fn spec_path(&self) -> &Path {
        match self {
            Command::Solve { spec }
            | Command::Convergence { spec, .. }
            | Command::Weights { spec }
            | Command::Constants { spec } => spec,
        }
    }
}

enum Status {
    Done,
    NotConverged,
}

/// Invalid specs; reported verbatim with exit status 1.
#[derive(Debug)]
struct SpecError(String);

impl std::fmt::Display for SpecError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SpecError {}

struct Run<'a> {
    loaded: LoadedSpec,
    seed: u64,
    command: &'a str,
}

impl Run<'_> {
    fn provenance(&self) -> Value {
        json!({
            "spec_sha256": self.loaded.sha256,
            "seed": self.seed,
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn write_json(&self, path: &Path, key: &str, value: impl Serialize) -> Result<PathBuf> {
        let mut doc = serde_json::Map::new();
        doc.insert("provenance".into(), self.provenance());
        doc.insert(key.into(), serde_json::to_value(value)?);
        let text = serde_json::to_string_pretty(&Value::Object(doc))? + "\n";
        self.write_text(path, &text)
    }

    fn write_text(&self, path: &Path, text: &str) -> Result<PathBuf> {
        let out = self.loaded.output(path);
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
        println!("wrote {}", out.display());
        Ok(out)
    }

    fn space(&self) -> Result<Arc<TaylorHoodSpace>> {
        let spec = &self.loaded.spec;
        let domain = spec.domain.polygon().map_err(spec_error)?;
        let mesh = spec.build_mesh(&domain).map_err(spec_error)?;
        Ok(TaylorHoodSpace::new(mesh))
    }

    /// Viscosity from the spec together with the constants evaluated at it.
    fn viscosity(&self, space: &Arc<TaylorHoodSpace>) -> Result<(SolveOptions, ConstantsReport)> {
        let spec = &self.loaded.spec;
        let settings = spec.estimators.settings(self.seed);
        match spec.nu.choice() {
            NuChoice::Fixed(nu) => {
                let opts = spec.solve.options(nu);
                opts.validate().map_err(spec_error)?;
                let forcing = spec.forcing.clone().with_default_nu(nu);
                let report = smallness_indicator(space, &opts, &forcing, &spec.weight, &settings)?;
                Ok((opts, report))
            }
            NuChoice::Smallness { target } => {
                if !(target > 0.0 && target.is_finite()) {
                    return Err(spec_error(format!(
                        "smallness target must be positive, got {target}"
                    )));
                }
                let unit = spec.solve.options(1.0);
                unit.validate().map_err(spec_error)?;
                let forcing = spec.forcing.clone().with_default_nu(1.0);
                let probe = smallness_indicator(space, &unit, &forcing, &spec.weight, &settings)?;
                let nu = probe.nu_for_smallness(target);
                if !(nu > 0.0 && nu.is_finite()) {
                    return Err(spec_error(
                        "the forcing vanishes, so a smallness target cannot fix nu",
                    ));
                }
                Ok((spec.solve.options(nu), probe.with_nu(nu)))
            }
        }
    }
}

fn spec_error(e: impl std::fmt::Display) -> anyhow::Error {
    SpecError(e.to_string()).into()
}

fn cmd_solve(run: &Run) -> Result<Status> {
    let spec = &run.loaded.spec;
    let space = run.space()?;
    let (opts, constants) = run.viscosity(&space)?;
    let forcing = spec.forcing.clone().with_default_nu(opts.nu);
    let result = picard(&space, &opts, &forcing, &spec.weight)?;
    let apriori = apriori_bound_check(&result.field, &constants, &spec.weight);
    let field: Value = serde_json::from_str(&result.field.to_json()?)?;
    run.write_json(&spec.outputs.solution, "field", field)?;
    run.write_json(&spec.outputs.trace, "trace", &result.trace)?;
    run.write_json(
        &spec.outputs.constants,
        "constants",
        json!({ "report": constants, "apriori": apriori }),
    )?;
    println!(
        "picard: {} after {} iteration(s), residual {:.3e}; eta = {:.4}, nu = {:.6e}",
        if result.converged() {
            "converged"
        } else {
            "NOT converged"
        },
        result.trace.iterations(),
        result.trace.residual,
        constants.smallness,
        opts.nu,
    );
    Ok(if result.converged() {
        Status::Done
    } else {
        Status::NotConverged
    })
}

fn cmd_convergence(run: &Run, levels: usize) -> Result<Status> {
    let spec = &run.loaded.spec;
    let domain = spec.domain.polygon().map_err(spec_error)?;
    let problem = match &spec.forcing {
        ForcingSpec::Analytic {
            expr: AnalyticBuiltin::Manufactured(case),
            ..
        } => StudyProblem::Manufactured { case: *case },
        other => StudyProblem::Forcing {
            forcing: other.clone(),
        },
    };
    let choice = spec.nu.choice();
    let nu = match choice {
        NuChoice::Fixed(nu) => nu,
        NuChoice::Smallness { .. } => 1.0,
    };
    let opts = spec.solve.options(nu);
    opts.validate().map_err(spec_error)?;
    let config = StudyConfig {
        domain,
        problem,
        weight: spec.weight,
        nu: choice,
        opts,
        levels,
        mesh: spec.mesh.clone(),
        estimators: spec.estimators.settings(run.seed),
    };
    let mut report = match run_convergence(&config) {
        Err(e @ StudyError::TooFewLevels { .. }) | Err(e @ StudyError::Mesh(_)) => {
            return Err(spec_error(e))
        }
        other => other?,
    };
    report.spec_sha256 = Some(run.loaded.sha256.clone());
    report.seed = run.seed;
    run.write_text(&spec.outputs.convergence_csv, &report.to_csv())?;
    run.write_json(&spec.outputs.convergence_json, "report", &report)?;
    for row in &report.levels {
        println!(
            "h = {:.4e}  dofs = {:>7}  err_u = {:.4e}  err_p = {:.4e}",
            row.h,
            row.velocity_dofs + row.pressure_dofs,
            row.err_u_h1w,
            row.err_p_l2w
        );
    }
    Ok(if report.complete {
        Status::Done
    } else {
        Status::NotConverged
    })
}

const SCAN_DEPTHS: std::ops::RangeInclusive<usize> = 3..=7;

fn cmd_weights(run: &Run) -> Result<Status> {
    let spec = &run.loaded.spec;
    let domain = spec.domain.polygon().map_err(spec_error)?;
    let classification = spec.weight.classify(&domain);
    let scan = spec.weight.a2_scan(&domain, *SCAN_DEPTHS.end());
    let rows: Vec<Value> = SCAN_DEPTHS
        .map(|d| json!({ "depth": d, "a2_estimate": scan[d] }))
        .collect();
    run.write_json(
        &spec.outputs.weights,
        "weights",
        json!({
            "weight": spec.weight.describe(),
            "classification": classification,
            "a2_scan": rows,
        }),
    )?;
    println!(
        "{}: in_A2 = {}, in_A1 = {}, inverse_in_A1 = {}, A2 estimate (depth {}) = {:.6}",
        spec.weight.describe(),
        classification.in_a2,
        classification.in_a1,
        classification.inverse_in_a1,
        SCAN_DEPTHS.end(),
        scan[*SCAN_DEPTHS.end()]
    );
    Ok(Status::Done)
}

fn cmd_constants(run: &Run) -> Result<Status> {
    let space = run.space()?;
    let (_, constants) = run.viscosity(&space)?;
    run.write_json(&run.loaded.spec.outputs.constants, "report", &constants)?;
    println!(
        "C42 = {:.6e}, |S^-1| = {:.6e}, |f|_* = {:.6e}, nu = {:.6e}, eta = {:.6} ({})",
        constants.c42,
        constants.sinv_norm,
        constants.f_dual_norm,
        constants.nu,
        constants.smallness,
        if constants.is_small {
            "small"
        } else {
            "not small"
        },
    );
    Ok(Status::Done)
}

/// Linear-solver breakdowns count as non-convergence, not as spec errors.
fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<SolverError>(),
            Some(SolverError::Breakdown { .. })
        ) || matches!(
            c.downcast_ref::<StudyError>(),
            Some(StudyError::Solver(SolverError::Breakdown { .. }))
        )
    })
}

fn execute(cli: &Cli) -> Result<Status> {
    let loaded = spec::load(cli.command.spec_path()).map_err(spec_error)?;
    let run = Run {
        loaded,
        seed: cli.seed,
        command: cli.command.name(),
    };
    match &cli.command {
        Command::Solve { .. } => cmd_solve(&run),
        Command::Convergence { levels, .. } => cmd_convergence(&run, *levels),
        Command::Weights { .. } => cmd_weights(&run),
        Command::Constants { .. } => cmd_constants(&run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("warning: iteration did not converge; artifacts hold the partial result");
            ExitCode::from(2)
        }
        Err(e) if is_numerical(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_is_numerical() {
        let e: anyhow::Error = SolverError::Breakdown {
            achieved: 1e-3,
            target: 1e-10,
        }
        .into();
        assert!(is_numerical(&e));
        assert!(is_numerical(
            &StudyError::Solver(SolverError::Breakdown {
                achieved: 1.0,
                target: 0.0
            })
            .into()
        ));
        assert!(!is_numerical(&spec_error("bad")));
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
