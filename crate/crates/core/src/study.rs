//! Manufactured solutions, convergence sweeps and rate estimation.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AnalyticBuiltin, ForcingSpec};
use crate::femspace::{FEField, PointValue, TaylorHoodSpace};
use crate::geometry::Point;
use crate::mesh::{
    generate_graded, generate_uniform, uniform_refine, GradingSpec, MeshError, Polygon, TriMesh,
};
use crate::solver::{
    picard_with, smallness_indicator, stokes_projection_with, ConstantsReport, EstimatorSettings,
    PicardProblem, SolveOptions, SolverError,
};
use crate::sparse::NonNeg;
use crate::weights::Weight;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("a convergence study needs at least {min} levels, got {got}")]
    TooFewLevels { min: usize, got: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Built-in exact pairs on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManufacturedCase {
    /// `u = curl ψ` with `ψ = x²(1−x)²y²(1−y)²`, `p = x³ + y³ − 1/2`.
    StreamFunction,
    /// `u = 0`, `p = x³ + y³ − 1/2`.
    PressureOnly,
    /// `u = 0`, `p = 0`.
    Zero,
}

// g(t) = t²(1−t)² and its derivatives.
fn g0(t: f64) -> f64 {
    t * t * (1.0 - t) * (1.0 - t)
}
fn g1(t: f64) -> f64 {
    2.0 * t - 6.0 * t * t + 4.0 * t * t * t
}
fn g2(t: f64) -> f64 {
    2.0 - 12.0 * t + 12.0 * t * t
}
fn g3(t: f64) -> f64 {
    -12.0 + 24.0 * t
}

impl ManufacturedCase {
    pub fn name(&self) -> &'static str {
        match self {
            ManufacturedCase::StreamFunction => "stream_function",
            ManufacturedCase::PressureOnly => "pressure_only",
            ManufacturedCase::Zero => "zero",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "stream_function" => Some(ManufacturedCase::StreamFunction),
            "pressure_only" => Some(ManufacturedCase::PressureOnly),
            "zero" => Some(ManufacturedCase::Zero),
            _ => None,
        }
    }

    pub fn velocity(&self, x: Point) -> [f64; 2] {
        match self {
            ManufacturedCase::StreamFunction => [g0(x[0]) * g1(x[1]), -g1(x[0]) * g0(x[1])],
            _ => [0.0, 0.0],
        }
    }

    /// `grad[i][j] = ∂u_i/∂x_j`.
    pub fn velocity_gradient(&self, x: Point) -> [[f64; 2]; 2] {
        match self {
            ManufacturedCase::StreamFunction => {
                let (a, b) = (x[0], x[1]);
                [
                    [g1(a) * g1(b), g0(a) * g2(b)],
                    [-g2(a) * g0(b), -g1(a) * g1(b)],
                ]
            }
            _ => [[0.0; 2]; 2],
        }
    }

    pub fn velocity_laplacian(&self, x: Point) -> [f64; 2] {
        match self {
            ManufacturedCase::StreamFunction => {
                let (a, b) = (x[0], x[1]);
                [
                    g2(a) * g1(b) + g0(a) * g3(b),
                    -g3(a) * g0(b) - g1(a) * g2(b),
                ]
            }
            _ => [0.0, 0.0],
        }
    }

    pub fn pressure(&self, x: Point) -> f64 {
        match self {
            ManufacturedCase::Zero => 0.0,
            _ => x[0].powi(3) + x[1].powi(3) - 0.5,
        }
    }

    pub fn pressure_gradient(&self, x: Point) -> [f64; 2] {
        match self {
            ManufacturedCase::Zero => [0.0, 0.0],
            _ => [3.0 * x[0] * x[0], 3.0 * x[1] * x[1]],
        }
    }

    /// `f = −ν Δu + (u·∇)u + ∇p`.
    pub fn forcing(&self, x: Point, nu: f64) -> [f64; 2] {
        let u = self.velocity(x);
        let g = self.velocity_gradient(x);
        let lap = self.velocity_laplacian(x);
        let gp = self.pressure_gradient(x);
        let mut f = [0.0; 2];
        for i in 0..2 {
            f[i] = -nu * lap[i] + u[0] * g[i][0] + u[1] * g[i][1] + gp[i];
        }
        f
    }

    pub fn point_value(&self, x: Point) -> PointValue {
        PointValue {
            velocity: self.velocity(x),
            grad: self.velocity_gradient(x),
            pressure: self.pressure(x),
        }
    }
}

/// The analytic forcing reproducing `case` at viscosity `nu`.
pub fn manufactured_forcing(case: ManufacturedCase, nu: f64) -> ForcingSpec {
    let expr = match case {
        ManufacturedCase::Zero => AnalyticBuiltin::Zero,
        c => AnalyticBuiltin::Manufactured(c),
    };
    ForcingSpec::Analytic { expr, nu: Some(nu) }
}

/// `log₂(e_i / e_{i+1})`; `None` where either error is not positive and finite.
pub fn rate_estimate(errors: &[f64]) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .map(|w| {
            let ok = |e: f64| e > 0.0 && e.is_finite();
            (ok(w[0]) && ok(w[1])).then(|| (w[0] / w[1]).log2())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudyProblem {
    /// Errors against an exact pair.
    Manufactured { case: ManufacturedCase },
    /// Errors against a solution two uniform refinements finer than the finest level.
    Forcing { forcing: ForcingSpec },
}

impl StudyProblem {
    pub fn forcing(&self, nu: f64) -> ForcingSpec {
        match self {
            StudyProblem::Manufactured { case } => manufactured_forcing(*case, nu),
            StudyProblem::Forcing { forcing } => forcing.clone().with_default_nu(nu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshMode {
    Uniform { n: usize },
    Graded { grading: GradingSpec },
}

impl MeshMode {
    pub fn build(&self, domain: &Polygon) -> Result<TriMesh, MeshError> {
        match self {
            MeshMode::Uniform { n } => generate_uniform(domain, *n),
            MeshMode::Graded { grading } => generate_graded(domain, grading),
        }
    }
}

/// Viscosity policy for a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NuChoice {
    Fixed(f64),
    /// Pick `ν` so that the coarsest-level smallness indicator equals `target`.
    Smallness {
        target: f64,
    },
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub domain: Polygon,
    pub problem: StudyProblem,
    pub weight: Weight,
    pub nu: NuChoice,
    pub opts: SolveOptions,
    pub levels: usize,
    /// Coarsest mesh; each further level is one uniform refinement.
    pub mesh: MeshMode,
    pub estimators: EstimatorSettings,
}

pub const MIN_LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub h: f64,
    pub velocity_dofs: usize,
    pub pressure_dofs: usize,
    pub err_u_h1w: f64,
    pub err_p_l2w: f64,
    pub rate_u: Option<f64>,
    pub rate_p: Option<f64>,
    pub picard_iterations: usize,
    pub converged: bool,
    /// `‖∇(u − S_h u)‖_{L²(ω)}` (manufactured cases).
    pub projection_error: Option<f64>,
    /// `‖∇(S_h u − u_h)‖_{L²(ω)}` (manufactured cases).
    pub discrete_error: Option<f64>,
    /// `‖∇(u − I_h u)‖_{L²(ω)}` (manufactured cases).
    pub interpolation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelResult>,
    pub weight: String,
    pub forcing: String,
    pub nu: f64,
    pub reference: String,
    pub constants: Option<ConstantsReport>,
    /// False when some level failed to converge; later levels are omitted.
    pub complete: bool,
    pub seed: u64,
    pub spec_sha256: Option<String>,
}

/// Column order of [`ConvergenceReport::to_csv`].
pub const CSV_COLUMNS: [&str; 6] = ["h", "dofs", "err_u_H1w", "rate_u", "err_p_L2w", "rate_p"];

impl ConvergenceReport {
    /// One row per level after a `# spec_sha256=… seed=…` line and a header.
    /// Undefined rates are written as `NA`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# spec_sha256={} seed={}",
            self.spec_sha256.as_deref().unwrap_or("none"),
            self.seed
        );
        out.push_str(&CSV_COLUMNS.join(","));
        out.push('\n');
        let rate = |r: Option<f64>| r.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for l in &self.levels {
            let _ = writeln!(
                out,
                "{:.10e},{},{:.10e},{},{:.10e},{}",
                l.h,
                l.velocity_dofs + l.pressure_dofs,
                l.err_u_h1w,
                rate(l.rate_u),
                l.err_p_l2w,
                rate(l.rate_p)
            );
        }
        out
    }

    pub fn velocity_errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.err_u_h1w).collect()
    }

    pub fn pressure_errors(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.err_p_l2w).collect()
    }

    pub fn last_rate_u(&self) -> Option<f64> {
        self.levels.last().and_then(|l| l.rate_u)
    }

    pub fn last_rate_p(&self) -> Option<f64> {
        self.levels.last().and_then(|l| l.rate_p)
    }
}

/// Weighted velocity H¹ and quotient pressure errors of `field` against `exact`.
pub fn field_errors(
    field: &FEField,
    weight: &Weight,
    exact: impl Fn(Point) -> PointValue,
) -> (f64, f64) {
    let space = field.space();
    let q = space.weighted_quadrature(weight, 10);
    let (mut eu, mut dp, mut wsum) = (0.0, 0.0, 0.0);
    let mut pdiff = Vec::new();
    for k in 0..space.mesh().num_cells() {
        for qp in q.cell(k) {
            let h = field.eval_local(k, qp.bary);
            let e = exact(qp.x);
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let d = h.grad[i][j] - e.grad[i][j];
                    s += d * d;
                }
            }
            eu += qp.w * s;
            let d = h.pressure - e.pressure;
            dp += qp.w * d;
            wsum += qp.w;
            pdiff.push((qp.w, d));
        }
    }
    let mean = dp / wsum;
    let ep: f64 = pdiff.iter().map(|(w, d)| w * (d - mean) * (d - mean)).sum();
    (eu.nonneg().sqrt(), ep.nonneg().sqrt())
}

/// Errors of a coarse field against a fine reference, after nodal transfer
/// onto the reference space.
pub fn reference_errors(
    coarse: &FEField,
    reference: &FEField,
    weight: &Weight,
) -> Result<(f64, f64), StudyError> {
    let diff = coarse
        .transfer_to(reference.space())
        .map_err(SolverError::from)?
        .add_scaled(-1.0, reference);
    let k = reference.space().weighted_stiffness(weight);
    let eu = k.quadratic_form(&diff.velocity).nonneg().sqrt();
    Ok((eu, diff.quotient_pressure_norm(weight)))
}

struct LevelSolve {
    space: Arc<TaylorHoodSpace>,
    field: FEField,
    iterations: usize,
    converged: bool,
    problem: PicardProblem,
}

fn solve_level(
    mesh: TriMesh,
    opts: &SolveOptions,
    forcing: &ForcingSpec,
    weight: &Weight,
) -> Result<LevelSolve, StudyError> {
    let space = TaylorHoodSpace::new(mesh);
    let problem = PicardProblem::new(&space, opts, forcing, weight)?;
    let r = picard_with(&problem, opts, FEField::zeros(space.clone()))?;
    Ok(LevelSolve {
        space,
        iterations: r.trace.iterations(),
        converged: r.converged(),
        field: r.field,
        problem,
    })
}

/// Runs the sweep described by `config`.
pub fn run_convergence(config: &StudyConfig) -> Result<ConvergenceReport, StudyError> {
    if config.levels < MIN_LEVELS {
        return Err(StudyError::TooFewLevels {
            min: MIN_LEVELS,
            got: config.levels,
        });
    }
    let mut meshes = vec![config.mesh.build(&config.domain)?];
    for _ in 1..config.levels {
        let next = uniform_refine(meshes.last().expect("non-empty"));
        meshes.push(next);
    }

    let (nu, constants) = match config.nu {
        NuChoice::Fixed(nu) => (nu, None),
        NuChoice::Smallness { target } => {
            let coarse = TaylorHoodSpace::new(meshes[0].clone());
            let unit = SolveOptions {
                nu: 1.0,
                ..config.opts.clone()
            };
            let probe = smallness_indicator(
                &coarse,
                &unit,
                &config.problem.forcing(1.0),
                &config.weight,
                &config.estimators,
            )?;
            let nu = probe.nu_for_smallness(target);
            let nu = if nu > 0.0 && nu.is_finite() { nu } else { 1.0 };
            (nu, Some(probe.with_nu(nu)))
        }
    };
    let opts = SolveOptions {
        nu,
        ..config.opts.clone()
    };
    let forcing = config.problem.forcing(nu);

    let mut levels = Vec::new();
    let mut solves = Vec::new();
    let mut complete = true;
    for mesh in &meshes {
        let h = mesh.h_max();
        let s = solve_level(mesh.clone(), &opts, &forcing, &config.weight)?;
        let row = LevelResult {
            h,
            velocity_dofs: s.space.n_velocity_dofs(),
            pressure_dofs: s.space.n_pressure_dofs(),
            err_u_h1w: f64::NAN,
            err_p_l2w: f64::NAN,
            rate_u: None,
            rate_p: None,
            picard_iterations: s.iterations,
            converged: s.converged,
            projection_error: None,
            discrete_error: None,
            interpolation_error: None,
        };
        levels.push(row);
        let converged = s.converged;
        solves.push(s);
        if !converged {
            complete = false;
            break;
        }
    }

    let reference = match &config.problem {
        StudyProblem::Manufactured { case } => {
            for (row, s) in levels.iter_mut().zip(&solves) {
                let exact = |x: Point| case.point_value(x);
                let (eu, ep) = field_errors(&s.field, &config.weight, exact);
                row.err_u_h1w = eu;
                row.err_p_l2w = ep;
                let proj =
                    stokes_projection_with(s.problem.solver(), |_, qp| case.point_value(qp.x))?;
                row.projection_error = Some(field_errors(&proj, &config.weight, exact).0);
                row.discrete_error = Some(
                    s.problem
                        .velocity_norm(&proj.add_scaled(-1.0, &s.field).velocity),
                );
                let interp = s
                    .space
                    .interpolate(|x| case.velocity(x), |x| case.pressure(x), true)
                    .map_err(SolverError::from)?;
                row.interpolation_error = Some(field_errors(&interp, &config.weight, exact).0);
            }
            "exact".to_string()
        }
        StudyProblem::Forcing { .. } => {
            let fine = uniform_refine(&uniform_refine(meshes.last().expect("non-empty")));
            let label = format!("richardson ({} cells)", fine.num_cells());
            if complete {
                let r = solve_level(fine, &opts, &forcing, &config.weight)?;
                if !r.converged {
                    complete = false;
                }
                for (row, s) in levels.iter_mut().zip(&solves) {
                    let (eu, ep) = reference_errors(&s.field, &r.field, &config.weight)?;
                    row.err_u_h1w = eu;
                    row.err_p_l2w = ep;
                }
            }
            label
        }
    };

    let ru = rate_estimate(&levels.iter().map(|l| l.err_u_h1w).collect::<Vec<_>>());
    let rp = rate_estimate(&levels.iter().map(|l| l.err_p_l2w).collect::<Vec<_>>());
    for (i, row) in levels.iter_mut().enumerate().skip(1) {
        row.rate_u = ru[i - 1];
        row.rate_p = rp[i - 1];
    }

    Ok(ConvergenceReport {
        levels,
        weight: config.weight.describe(),
        forcing: forcing.describe(),
        nu,
        reference,
        constants,
        complete,
        seed: config.estimators.seed,
        spec_sha256: None,
    })
}

/// Nodal transfer of a coarse solution to every finer space in turn.
pub fn prolongate(
    field: &FEField,
    targets: &[Arc<TaylorHoodSpace>],
) -> Result<Vec<FEField>, StudyError> {
    targets
        .iter()
        .map(|t| {
            field
                .transfer_to(t)
                .map_err(|e| StudyError::Solver(e.into()))
        })
        .collect()
}
