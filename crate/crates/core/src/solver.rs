//! Saddle-point solves, the Picard driver and the estimators behind the
//! smallness condition `η = C42² ‖S⁻¹‖² ‖f‖ / ν² < 1/6`.
//!
//! Norm conventions: velocities are measured in `‖∇v‖_{L²(ω)}`, pressures in
//! the quotient norm of `L²(ω)/ℝ`, and forcing functionals in the dual of
//! `H¹₀(ω⁻¹)`, i.e. `‖g‖_* = (gᵀ K_{ω⁻¹}⁻¹ g)^{1/2}`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{
    assemble_convection, assemble_forcing, assemble_stokes, AssemblyError, ForcingSpec,
    SaddleSystem,
};
use crate::femspace::{
    p2_gradients, p2_values, DualNorm, FEField, FemError, PointValue, TaylorHoodSpace,
};
use crate::quadrature::WeightedPoint;
use crate::sparse::NonNeg;
use crate::sparse::{dot, norm2, CsrMatrix, FactorError, Factorization};
use crate::weights::Weight;

/// Threshold of the smallness condition.
pub const SMALLNESS_THRESHOLD: f64 = 1.0 / 6.0;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solve options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("linear solve stalled at relative residual {achieved:e} (target {target:e})")]
    Breakdown { achieved: f64, target: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub nu: f64,
    pub linear_tol: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            nu: 1.0,
            linear_tol: 1e-10,
            picard_tol: 1e-8,
            max_iters: 100,
            damping: 1.0,
        }
    }
}

impl SolveOptions {
    pub fn with_nu(nu: f64) -> Self {
        Self {
            nu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SolverError::InvalidOptions(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        positive("nu", self.nu)?;
        positive("linear_tol", self.linear_tol)?;
        positive("picard_tol", self.picard_tol)?;
        positive("damping", self.damping)?;
        if self.damping > 1.0 {
            return Err(SolverError::InvalidOptions(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidOptions(
                "max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Stokes solver: Schur-complement conjugate gradients on the pressure with a
/// sparse Cholesky factorization of the velocity block and the P1 mass matrix
/// as preconditioner, wrapped in iterative refinement on the full bordered
/// system.
pub struct StokesSolver {
    system: SaddleSystem,
    matrix: CsrMatrix,
    a_factor: Factorization,
    mass_factor: Factorization,
    linear_tol: f64,
}

impl std::fmt::Debug for StokesSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StokesSolver")
            .field("size", &self.matrix.nrows())
            .field("linear_tol", &self.linear_tol)
            .finish()
    }
}

const MAX_REFINEMENT_STEPS: usize = 10;

impl StokesSolver {
    pub fn new(system: SaddleSystem, linear_tol: f64) -> Result<Self, SolverError> {
        let matrix = system.bordered_matrix();
        let a_factor = Factorization::cholesky(system.a())?;
        let mass = system.space().weighted_pressure_mass(&Weight::one());
        let mass_factor = Factorization::cholesky(&mass)?;
        Ok(Self {
            system,
            matrix,
            a_factor,
            mass_factor,
            linear_tol,
        })
    }

    pub fn system(&self) -> &SaddleSystem {
        &self.system
    }

    pub fn space(&self) -> &Arc<TaylorHoodSpace> {
        self.system.space()
    }

    /// Preconditioned CG for the singular but consistent system
    /// `B A⁻¹ Bᵀ p = rhs` (kernel: constants).
    fn schur_cg(&self, rhs: &[f64], tol: f64) -> Vec<f64> {
        let b = self.system.b();
        let schur = |p: &[f64]| b.matvec(&self.a_factor.solve(&b.matvec_transpose(p)));
        let np = rhs.len();
        let mut x = vec![0.0; np];
        let mut r = rhs.to_vec();
        let target = tol * norm2(rhs);
        let mut z = self.mass_factor.solve(&r);
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..(2 * np + 50) {
            if norm2(&r) <= target {
                break;
            }
            let sd = schur(&d);
            let dsd = dot(&d, &sd);
            if !(dsd > 0.0) {
                break;
            }
            let alpha = rz / dsd;
            x.iter_mut().zip(&d).for_each(|(xi, di)| *xi += alpha * di);
            r.iter_mut().zip(&sd).for_each(|(ri, si)| *ri -= alpha * si);
            z = self.mass_factor.solve(&r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            d.iter_mut()
                .zip(&z)
                .for_each(|(di, zi)| *di = zi + beta * *di);
        }
        x
    }

    /// One block elimination of the bordered system for `b = (f, g, h)`.
    fn eliminate(&self, b: &[f64], cg_tol: f64) -> Vec<f64> {
        let sys = &self.system;
        let nf = sys.a().nrows();
        let np = sys.b().nrows();
        let (f, g, h) = (&b[..nf], &b[nf..nf + np], b[nf + np]);
        let m = sys.mean_row();
        let total: f64 = m.iter().sum();
        // Summing the pressure rows isolates the multiplier since 1ᵀB = 0.
        let lambda = g.iter().sum::<f64>() / total;
        let a_inv_f = self.a_factor.solve(f);
        let b_a_inv_f = sys.b().matvec(&a_inv_f);
        let rhs: Vec<f64> = (0..np)
            .map(|i| -(g[i] - m[i] * lambda) - b_a_inv_f[i])
            .collect();
        let mut p = self.schur_cg(&rhs, cg_tol);
        let shift = (h - dot(m, &p)) / total;
        p.iter_mut().for_each(|v| *v += shift);
        let bt_p = sys.b().matvec_transpose(&p);
        let rhs_u: Vec<f64> = f.iter().zip(&bt_p).map(|(a, c)| a + c).collect();
        let mut x = self.a_factor.solve(&rhs_u);
        x.extend_from_slice(&p);
        x.push(lambda);
        x
    }

    /// Solves with a free-dof velocity right-hand side and a pressure
    /// right-hand side; returns (free velocity, pressure) with `∫ p = 0`.
    pub fn solve_general(
        &self,
        rhs_u: &[f64],
        rhs_p: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
        let nf = self.system.a().nrows();
        let np = self.system.b().nrows();
        let mut b = Vec::with_capacity(nf + np + 1);
        b.extend_from_slice(rhs_u);
        b.extend_from_slice(rhs_p);
        b.push(0.0);
        let bnorm = norm2(&b);
        if bnorm == 0.0 {
            return Ok((vec![0.0; nf], vec![0.0; np]));
        }
        let cg_tol = (1e-2 * self.linear_tol).max(1e-15);
        let mut x = self.eliminate(&b, cg_tol);
        let mut rel = f64::INFINITY;
        for _ in 0..MAX_REFINEMENT_STEPS {
            let r: Vec<f64> = b
                .iter()
                .zip(self.matrix.matvec(&x))
                .map(|(bi, ai)| bi - ai)
                .collect();
            rel = norm2(&r) / bnorm;
            if rel <= self.linear_tol {
                break;
            }
            let dx = self.eliminate(&r, cg_tol);
            x.iter_mut().zip(dx).for_each(|(xi, di)| *xi += di);
        }
        if !(rel <= self.linear_tol) {
            return Err(SolverError::Breakdown {
                achieved: rel,
                target: self.linear_tol,
            });
        }
        let p = x[nf..nf + np].to_vec();
        x.truncate(nf);
        Ok((x, p))
    }

    /// Discrete Stokes solution for a full-length velocity functional.
    pub fn solve(&self, rhs: &[f64]) -> Result<FEField, SolverError> {
        let space = self.space();
        let (u, p) = self.solve_general(
            &space.restrict_free(rhs),
            &vec![0.0; space.n_pressure_dofs()],
        )?;
        Ok(FEField::from_parts(
            space.clone(),
            space.extend_free(&u),
            p,
        )?)
    }
}

/// One-shot convenience wrapper around [`StokesSolver`].
pub fn solve_saddle(
    system: &SaddleSystem,
    rhs: &[f64],
    linear_tol: f64,
) -> Result<FEField, SolverError> {
    StokesSolver::new(system.clone(), linear_tol)?.solve(rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardStep {
    pub iteration: usize,
    /// `‖∇(u^{k+1} − u^k)‖_{L²(ω)}`.
    pub increment: f64,
    /// `‖∇u^{k+1}‖_{L²(ω)}`.
    pub solution_norm: f64,
    /// Ratio of consecutive increments (undefined for the first step or a
    /// vanishing previous increment).
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub steps: Vec<PicardStep>,
    pub damping: f64,
    pub converged: bool,
    /// Dual-norm momentum residual of the returned iterate.
    pub residual: f64,
    /// Set when the first attempt failed and the driver retried with damping 0.5.
    pub retried: bool,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Increment ratios after the first iteration.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.steps.iter().skip(1).filter_map(|s| s.ratio).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub field: FEField,
    pub trace: PicardTrace,
}

impl PicardResult {
    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// Everything the fixed-point loop needs, assembled once per problem.
pub struct PicardProblem {
    solver: StokesSolver,
    forcing: Vec<f64>,
    stiffness_w: CsrMatrix,
    residual_norm: DualNorm,
}

impl std::fmt::Debug for PicardProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PicardProblem")
            .field("solver", &self.solver)
            .finish()
    }
}

impl PicardProblem {
    pub fn new(
        space: &Arc<TaylorHoodSpace>,
        opts: &SolveOptions,
        forcing: &ForcingSpec,
        weight: &Weight,
    ) -> Result<Self, SolverError> {
        opts.validate()?;
        let forcing = assemble_forcing(space, &forcing.clone().with_default_nu(opts.nu))?;
        Ok(Self {
            solver: StokesSolver::new(assemble_stokes(space, opts.nu)?, opts.linear_tol)?,
            forcing,
            stiffness_w: space.weighted_stiffness(weight),
            residual_norm: DualNorm::new(space, &weight.inverse())?,
        })
    }

    pub fn space(&self) -> &Arc<TaylorHoodSpace> {
        self.solver.space()
    }

    pub fn solver(&self) -> &StokesSolver {
        &self.solver
    }

    pub fn forcing(&self) -> &[f64] {
        &self.forcing
    }

    /// `‖∇v‖_{L²(ω)}` of a velocity coefficient vector.
    pub fn velocity_norm(&self, velocity: &[f64]) -> f64 {
        self.stiffness_w.quadratic_form(velocity).nonneg().sqrt()
    }

    /// Dual norm of `F − N(u) − ν K u + Bᵀ p` on the free dofs.
    pub fn momentum_residual(&self, field: &FEField) -> f64 {
        let space = self.space();
        let n = assemble_convection(space, field);
        let sys = self.solver.system();
        let au = sys.a_full().matvec(&field.velocity);
        let btp = sys.b_full().matvec_transpose(&field.pressure);
        let r: Vec<f64> = (0..field.velocity.len())
            .map(|i| self.forcing[i] - n[i] - au[i] + btp[i])
            .collect();
        self.residual_norm.norm(&r)
    }

    /// Fixed-point iteration from `initial` with fixed damping.
    pub fn iterate(
        &self,
        opts: &SolveOptions,
        initial: FEField,
    ) -> Result<PicardResult, SolverError> {
        let mut u = initial;
        u.apply_mask();
        let mut steps = Vec::new();
        let mut prev_inc: Option<f64> = None;
        let mut residual = f64::NAN;
        let mut converged = false;
        for iteration in 1..=opts.max_iters {
            let conv = assemble_convection(self.space(), &u);
            let rhs: Vec<f64> = self.forcing.iter().zip(&conv).map(|(f, n)| f - n).collect();
            let solved = if rhs.iter().all(|v| v.is_finite()) {
                match self.solver.solve(&rhs) {
                    Err(SolverError::Breakdown { achieved, .. }) if !achieved.is_finite() => None,
                    other => Some(other?),
                }
            } else {
                None
            };
            let Some(target) = solved else {
                steps.push(PicardStep {
                    iteration,
                    increment: f64::INFINITY,
                    solution_norm: f64::INFINITY,
                    ratio: None,
                });
                break;
            };
            let next = if opts.damping == 1.0 {
                target
            } else {
                u.scaled(1.0 - opts.damping)
                    .add_scaled(opts.damping, &target)
            };
            let diff: Vec<f64> = next
                .velocity
                .iter()
                .zip(&u.velocity)
                .map(|(a, b)| a - b)
                .collect();
            let increment = self.velocity_norm(&diff);
            let ratio = prev_inc.filter(|&p| p > 0.0).map(|p| increment / p);
            steps.push(PicardStep {
                iteration,
                increment,
                solution_norm: self.velocity_norm(&next.velocity),
                ratio,
            });
            prev_inc = Some(increment);
            u = next;
            if !increment.is_finite() {
                break;
            }
            if increment <= opts.picard_tol {
                residual = self.momentum_residual(&u);
                if residual <= 10.0 * opts.picard_tol {
                    converged = true;
                    break;
                }
            }
        }
        if !converged {
            residual = self.momentum_residual(&u);
        }
        Ok(PicardResult {
            field: u,
            trace: PicardTrace {
                steps,
                damping: opts.damping,
                converged,
                residual,
                retried: false,
            },
        })
    }
}

/// Picard iteration `u^{k+1} = S⁻¹[F − N(u^k)]` from the zero field. If it
/// fails with full steps, one retry with damping 0.5 is made; a
/// non-converged result is returned (not an error) carrying its trace.
pub fn picard(
    space: &Arc<TaylorHoodSpace>,
    opts: &SolveOptions,
    forcing: &ForcingSpec,
    weight: &Weight,
) -> Result<PicardResult, SolverError> {
    let problem = PicardProblem::new(space, opts, forcing, weight)?;
    picard_with(&problem, opts, FEField::zeros(space.clone()))
}

/// As [`picard`] but with a prepared problem and an explicit initial guess.
pub fn picard_with(
    problem: &PicardProblem,
    opts: &SolveOptions,
    initial: FEField,
) -> Result<PicardResult, SolverError> {
    let first = problem.iterate(opts, initial)?;
    if first.converged() || opts.damping <= 0.5 {
        return Ok(first);
    }
    let damped = SolveOptions {
        damping: 0.5,
        ..opts.clone()
    };
    let mut second = problem.iterate(&damped, FEField::zeros(problem.space().clone()))?;
    second.trace.retried = true;
    Ok(second)
}

/// Precomputed `∫ ω |v|⁴` machinery on the free velocity dofs.
struct L4Functional {
    nodes: Vec<[usize; 6]>,
    /// (cell, weight, P2 values) per quadrature point.
    points: Vec<(usize, f64, [f64; 6])>,
    n_nodes: usize,
}

impl L4Functional {
    fn new(space: &TaylorHoodSpace, weight: &Weight) -> Self {
        let q = space.weighted_quadrature(weight, 8);
        let n_cells = space.mesh().num_cells();
        let mut points = Vec::new();
        for k in 0..n_cells {
            points.extend(q.cell(k).iter().map(|qp| (k, qp.w, p2_values(qp.bary))));
        }
        Self {
            nodes: (0..n_cells).map(|k| space.cell_nodes(k)).collect(),
            points,
            n_nodes: space.n_nodes(),
        }
    }

    fn value_at(&self, v: &[f64], cell: usize, phi: &[f64; 6]) -> [f64; 2] {
        let nodes = &self.nodes[cell];
        let mut out = [0.0; 2];
        for i in 0..6 {
            out[0] += v[nodes[i]] * phi[i];
            out[1] += v[self.n_nodes + nodes[i]] * phi[i];
        }
        out
    }

    fn phi(&self, v: &[f64]) -> f64 {
        self.points
            .iter()
            .map(|(k, w, phi)| {
                let u = self.value_at(v, *k, phi);
                let s = u[0] * u[0] + u[1] * u[1];
                w * s * s
            })
            .sum()
    }

    /// `∂Φ/∂v_i = 4 ∫ ω |v|² v · φ_i` over all velocity dofs.
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; v.len()];
        for (k, w, phi) in &self.points {
            let u = self.value_at(v, *k, phi);
            let s = 4.0 * w * (u[0] * u[0] + u[1] * u[1]);
            let nodes = &self.nodes[*k];
            for i in 0..6 {
                g[nodes[i]] += s * u[0] * phi[i];
                g[self.n_nodes + nodes[i]] += s * u[1] * phi[i];
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
pub struct C42Estimate {
    /// Lower bound for `sup ‖v‖_{L⁴(ω)} / ‖∇v‖_{L²(ω)}` over the discrete space.
    pub value: f64,
    /// Velocity field attaining `value`.
    pub maximizer: FEField,
}

const C42_MAX_STEPS: usize = 200;
const C42_STEP_TOL: f64 = 1e-10;

/// Embedding constant estimate with the default deterministic start plus
/// `restarts − 1` seeded random starts.
pub fn estimate_c42(
    space: &Arc<TaylorHoodSpace>,
    weight: &Weight,
    restarts: usize,
    seed: u64,
) -> Result<C42Estimate, SolverError> {
    estimate_c42_from(space, weight, restarts, seed, None)
}

/// As [`estimate_c42`] with an additional warm start (typically a coarse
/// maximizer transferred to this mesh), making the estimate monotone under
/// nested refinement.
pub fn estimate_c42_from(
    space: &Arc<TaylorHoodSpace>,
    weight: &Weight,
    restarts: usize,
    seed: u64,
    warm: Option<&FEField>,
) -> Result<C42Estimate, SolverError> {
    let stiffness = space.weighted_stiffness(weight);
    let nf = space.n_free();
    let k_free = stiffness.restrict(space.free_index(), nf, space.free_index(), nf);
    let factor = Factorization::cholesky(&k_free)?;
    let l4 = L4Functional::new(space, weight);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        starts.push(space.restrict_free(&w.transfer_to(space)?.velocity));
    }
    let domain_bump = {
        let mesh = space.mesh();
        let pts = mesh.points();
        let edges = mesh.boundary_edges();
        space.interpolate(
            |x| {
                let d = edges
                    .iter()
                    .map(|e| crate::geometry::dist_to_segment(x, pts[e.a], pts[e.b]))
                    .fold(f64::INFINITY, f64::min);
                [d, d]
            },
            |_| 0.0,
            true,
        )?
    };
    starts.push(space.restrict_free(&domain_bump.velocity));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 1..restarts.max(1) {
        starts.push((0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }

    let ratio = |v: &[f64]| -> f64 {
        let full = space.extend_free(v);
        let den = k_free.quadratic_form(v).nonneg().sqrt();
        if den == 0.0 {
            0.0
        } else {
            l4.phi(&full).nonneg().powf(0.25) / den
        }
    };
    let mut best = (0.0, vec![0.0; nf]);
    for start in starts {
        let mut v = start;
        let mut value = ratio(&v);
        if value == 0.0 {
            continue;
        }
        for _ in 0..C42_MAX_STEPS {
            let g = space.restrict_free(&l4.gradient(&space.extend_free(&v)));
            let mut next = factor.solve(&g);
            let s = k_free.quadratic_form(&next).sqrt();
            if !(s > 0.0) {
                break;
            }
            next.iter_mut().for_each(|x| *x /= s);
            let nv = ratio(&next);
            let done = nv - value <= C42_STEP_TOL * value;
            if nv >= value {
                v = next;
                value = nv;
            }
            if done {
                break;
            }
        }
        if value > best.0 {
            best = (value, v);
        }
    }
    let maximizer = FEField::from_parts(
        space.clone(),
        space.extend_free(&best.1),
        vec![0.0; space.n_pressure_dofs()],
    )?;
    Ok(C42Estimate {
        value: best.0,
        maximizer,
    })
}

/// Power-iteration estimate of `‖S_h⁻¹‖` (ν = 1) from velocity functionals in
/// the dual of `H¹₀(ω⁻¹)` to `H¹₀(ω) × L²(ω)/ℝ`. Returns the largest
/// Rayleigh quotient seen, a lower bound for the operator norm.
pub fn estimate_sinv_norm(
    space: &Arc<TaylorHoodSpace>,
    weight: &Weight,
    iters: usize,
    seed: u64,
) -> Result<f64, SolverError> {
    let ops = SinvOperators::new(space, weight)?;
    let nf = space.n_free();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y: Vec<f64> = (0..nf).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut best: f64 = 0.0;
    for _ in 0..iters.max(1) {
        let ky = ops.k_dual.matvec(&y);
        let yn = dot(&y, &ky).sqrt();
        if !(yn > 0.0) {
            break;
        }
        y.iter_mut().for_each(|v| *v /= yn);
        let ky: Vec<f64> = ky.iter().map(|v| v / yn).collect();
        let (u, p) = ops
            .solver
            .solve_general(&ky, &vec![0.0; space.n_pressure_dofs()])?;
        let a = ops.k_w.matvec(&u);
        let b = ops.pressure_quotient(&p);
        best = best.max(dot(&u, &a) + dot(&p, &b));
        y = ops.solver.solve_general(&a, &b)?.0;
    }
    Ok(best.sqrt())
}

/// Matrices shared by the `‖S⁻¹‖` estimator and its dense test oracle.
pub(crate) struct SinvOperators {
    pub solver: StokesSolver,
    /// `K_ω` on free dofs.
    pub k_w: CsrMatrix,
    /// `K_{ω⁻¹}` on free dofs.
    pub k_dual: CsrMatrix,
    pub mass_w: CsrMatrix,
    pub mass_one: Vec<f64>,
}

impl SinvOperators {
    pub fn new(space: &Arc<TaylorHoodSpace>, weight: &Weight) -> Result<Self, SolverError> {
        let nf = space.n_free();
        let fi = space.free_index();
        let mass_w = space.weighted_pressure_mass(weight);
        let mass_one = mass_w.matvec(&vec![1.0; space.n_pressure_dofs()]);
        Ok(Self {
            solver: StokesSolver::new(assemble_stokes(space, 1.0)?, 1e-12)?,
            k_w: space.weighted_stiffness(weight).restrict(fi, nf, fi, nf),
            k_dual: space
                .weighted_stiffness(&weight.inverse())
                .restrict(fi, nf, fi, nf),
            mass_w,
            mass_one,
        })
    }

    /// `X_p p` with `X_p = M_ω − (M_ω 1)(M_ω 1)ᵀ / (1ᵀ M_ω 1)`.
    pub fn pressure_quotient(&self, p: &[f64]) -> Vec<f64> {
        let total: f64 = self.mass_one.iter().sum();
        let c = dot(&self.mass_one, p) / total;
        self.mass_w
            .matvec(p)
            .iter()
            .zip(&self.mass_one)
            .map(|(mp, m)| mp - c * m)
            .collect()
    }
}

/// Dual norm of the forcing functional, `‖F‖` in the dual of `H¹₀(ω⁻¹)`.
pub fn forcing_dual_norm(
    space: &Arc<TaylorHoodSpace>,
    forcing: &ForcingSpec,
    weight: &Weight,
    nu: f64,
) -> Result<f64, SolverError> {
    let f = assemble_forcing(space, &forcing.clone().with_default_nu(nu))?;
    if f.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(DualNorm::new(space, &weight.inverse())?.norm(&f))
}

/// Effort spent by the constant estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub c42_restarts: usize,
    pub sinv_iters: usize,
    pub seed: u64,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            c42_restarts: 3,
            sinv_iters: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    #[serde(rename = "C42")]
    pub c42: f64,
    #[serde(rename = "Sinv_norm")]
    pub sinv_norm: f64,
    pub f_dual_norm: f64,
    pub nu: f64,
    /// `η = C42² ‖S⁻¹‖² ‖f‖ / ν²`.
    pub smallness: f64,
    /// `A = ν / (3 C42² ‖S⁻¹‖)`.
    pub ball_radius: f64,
    pub threshold: f64,
    pub is_small: bool,
}

impl ConstantsReport {
    pub fn from_estimates(c42: f64, sinv_norm: f64, f_dual_norm: f64, nu: f64) -> Self {
        let smallness = c42 * c42 * sinv_norm * sinv_norm * f_dual_norm / (nu * nu);
        let ball_radius = nu / (3.0 * c42 * c42 * sinv_norm);
        Self {
            c42,
            sinv_norm,
            f_dual_norm,
            nu,
            smallness,
            ball_radius,
            threshold: SMALLNESS_THRESHOLD,
            is_small: smallness < SMALLNESS_THRESHOLD,
        }
    }

    /// Same estimates at another viscosity.
    pub fn with_nu(&self, nu: f64) -> Self {
        Self::from_estimates(self.c42, self.sinv_norm, self.f_dual_norm, nu)
    }

    /// Viscosity at which `η` equals `target`.
    pub fn nu_for_smallness(&self, target: f64) -> f64 {
        (self.c42 * self.c42 * self.sinv_norm * self.sinv_norm * self.f_dual_norm / target).sqrt()
    }
}

/// Estimates all three constants and assembles `η` and `A`.
pub fn smallness_indicator(
    space: &Arc<TaylorHoodSpace>,
    opts: &SolveOptions,
    forcing: &ForcingSpec,
    weight: &Weight,
    settings: &EstimatorSettings,
) -> Result<ConstantsReport, SolverError> {
    opts.validate()?;
    let c42 = estimate_c42(space, weight, settings.c42_restarts, settings.seed)?.value;
    let sinv = estimate_sinv_norm(space, weight, settings.sinv_iters, settings.seed)?;
    let fdual = forcing_dual_norm(space, forcing, weight, opts.nu)?;
    Ok(ConstantsReport::from_estimates(c42, sinv, fdual, opts.nu))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriCheck {
    pub holds: bool,
    /// `‖∇u_h‖_{L²(ω)}`.
    pub lhs: f64,
    /// `1.5 ‖S⁻¹‖ ‖f‖ / ν`.
    pub bound: f64,
    pub margin: f64,
    pub diagnostic: Option<String>,
}

pub fn apriori_bound_check(
    solution: &FEField,
    report: &ConstantsReport,
    weight: &Weight,
) -> AprioriCheck {
    let lhs = solution
        .space()
        .weighted_stiffness(weight)
        .quadratic_form(&solution.velocity)
        .nonneg()
        .sqrt();
    let bound = 1.5 * report.sinv_norm * report.f_dual_norm / report.nu;
    let margin = bound - lhs;
    let holds = margin >= 0.0;
    let diagnostic = (!holds).then(|| {
        format!("a priori bound violated: |grad u|_w = {lhs:e} exceeds 1.5*Sinv*|f|/nu = {bound:e}")
    });
    AprioriCheck {
        holds,
        lhs,
        bound,
        margin,
        diagnostic,
    }
}

/// Discrete Stokes projection of a target pair: the solution of the discrete
/// Stokes problem whose data is the Stokes residual pairing of the target,
/// `v ↦ ν ∫ ∇u : ∇v − ∫ p div v` and `q ↦ −∫ q div u`. `target` receives the
/// cell index and the quadrature point.
pub fn stokes_projection(
    space: &Arc<TaylorHoodSpace>,
    nu: f64,
    linear_tol: f64,
    target: impl Fn(usize, &WeightedPoint) -> PointValue,
) -> Result<FEField, SolverError> {
    let solver = StokesSolver::new(assemble_stokes(space, nu)?, linear_tol)?;
    stokes_projection_with(&solver, target)
}

/// As [`stokes_projection`] with a prepared solver.
pub fn stokes_projection_with(
    solver: &StokesSolver,
    target: impl Fn(usize, &WeightedPoint) -> PointValue,
) -> Result<FEField, SolverError> {
    let space = solver.space().clone();
    let nu = solver.system().nu();
    let nn = space.n_nodes();
    let mut rhs_u = vec![0.0; 2 * nn];
    let mut rhs_p = vec![0.0; space.n_pressure_dofs()];
    let q = space.weighted_quadrature(&Weight::one(), 10);
    for k in 0..space.mesh().num_cells() {
        let nodes = space.cell_nodes(k);
        let verts = space.mesh().cells()[k];
        let gl = space.grad_lambda(k);
        for qp in q.cell(k) {
            let t = target(k, qp);
            let g = p2_gradients(qp.bary, gl);
            let div = t.grad[0][0] + t.grad[1][1];
            for i in 0..6 {
                for c in 0..2 {
                    let val = nu * (t.grad[c][0] * g[i][0] + t.grad[c][1] * g[i][1])
                        - t.pressure * g[i][c];
                    rhs_u[c * nn + nodes[i]] += qp.w * val;
                }
            }
            for j in 0..3 {
                rhs_p[verts[j]] -= qp.w * qp.bary[j] * div;
            }
        }
    }
    let (u, p) = solver.solve_general(&space.restrict_free(&rhs_u), &rhs_p)?;
    Ok(FEField::from_parts(
        space.clone(),
        space.extend_free(&u),
        p,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::AnalyticBuiltin;
    use crate::mesh::{generate_uniform, uniform_refine, Polygon};
    use nalgebra::DMatrix;

    fn space(n: usize) -> Arc<TaylorHoodSpace> {
        TaylorHoodSpace::new(generate_uniform(&Polygon::unit_square(), n).unwrap())
    }

    #[test]
    fn options_validation() {
        assert!(SolveOptions::default().validate().is_ok());
        assert!(SolveOptions {
            damping: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolveOptions {
            nu: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolveOptions {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let o: SolveOptions = serde_json::from_str(r#"{"nu": 2.0}"#).unwrap();
        assert_eq!(o.max_iters, 100);
        assert_eq!(o.linear_tol, 1e-10);
    }

    #[test]
    fn saddle_solve_zero_linear_and_divergence_free() {
        let s = space(6);
        let sys = assemble_stokes(&s, 1.0).unwrap();
        let solver = StokesSolver::new(sys.clone(), 1e-10).unwrap();
        let zero = solver.solve(&vec![0.0; s.n_velocity_dofs()]).unwrap();
        assert!(zero
            .velocity
            .iter()
            .chain(&zero.pressure)
            .all(|&v| v == 0.0));

        let g = assemble_forcing(&s, &ForcingSpec::analytic(AnalyticBuiltin::Gravity)).unwrap();
        let sol = solver.solve(&g).unwrap();
        let div = sys.divergence_residual(&sol);
        assert!(div.iter().all(|v| v.abs() <= 1e-10));
        // Pure gravity is a gradient: the velocity vanishes, the pressure is −y + c.
        assert!(sol.velocity.iter().all(|v| v.abs() < 1e-10));
        let p = sol.eval([0.3, 0.2]).unwrap().pressure - sol.eval([0.3, 0.7]).unwrap().pressure;
        assert!((p - 0.5).abs() < 1e-10);

        let d = assemble_forcing(&s, &ForcingSpec::dirac([0.41, 0.53], [0.3, -1.0])).unwrap();
        let both: Vec<f64> = g.iter().zip(&d).map(|(a, b)| a + b).collect();
        let s1 = solver.solve(&g).unwrap();
        let s2 = solver.solve(&d).unwrap();
        let s12 = solver.solve(&both).unwrap();
        let sum = s1.add_scaled(1.0, &s2);
        for (a, b) in sum
            .velocity
            .iter()
            .chain(&sum.pressure)
            .zip(s12.velocity.iter().chain(&s12.pressure))
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn picard_zero_forcing_returns_zero() {
        let s = space(4);
        let r = picard(
            &s,
            &SolveOptions::default(),
            &ForcingSpec::zero(),
            &Weight::one(),
        )
        .unwrap();
        assert!(r.converged());
        assert_eq!(r.trace.iterations(), 1);
        assert!(r.field.velocity.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn picard_small_data_contracts() {
        let s = space(6);
        let f = ForcingSpec::dirac([0.5, 0.5], [1.0, 0.0]);
        let w = Weight::radial([0.5, 0.5], 1.0).unwrap();
        let opts = SolveOptions::with_nu(0.5);
        let r = picard(&s, &opts, &f, &w).unwrap();
        assert!(r.converged(), "{:?}", r.trace);
        assert!(r.trace.residual <= 10.0 * opts.picard_tol);
        let sys = assemble_stokes(&s, opts.nu).unwrap();
        let dmax = sys
            .divergence_residual(&r.field)
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(dmax <= 1e-10);
        let damped = picard(
            &s,
            &SolveOptions {
                damping: 0.5,
                ..opts.clone()
            },
            &f,
            &w,
        )
        .unwrap();
        let diff = r.field.add_scaled(-1.0, &damped.field);
        assert!(diff.seminorm_h1w(&w) < 1e-6);
    }

    #[test]
    fn picard_reports_divergence_as_nonconvergence() {
        let s = space(6);
        let opts = SolveOptions::with_nu(0.05);
        let r = picard(
            &s,
            &opts,
            &ForcingSpec::dirac([0.5, 0.5], [1.0, 0.0]),
            &Weight::one(),
        )
        .unwrap();
        assert!(!r.converged());
        assert!(r.trace.retried);
    }

    #[test]
    fn picard_reports_nonconvergence() {
        let s = space(3);
        let opts = SolveOptions {
            max_iters: 2,
            ..SolveOptions::with_nu(1e-3)
        };
        let r = picard(
            &s,
            &opts,
            &ForcingSpec::dirac([0.5, 0.5], [50.0, 0.0]),
            &Weight::one(),
        )
        .unwrap();
        assert!(!r.converged());
        assert!(r.trace.retried);
        assert!(r.trace.iterations() <= opts.max_iters);
    }

    #[test]
    fn c42_scaling_and_refinement() {
        let s = space(3);
        let w = Weight::one();
        let base = estimate_c42(&s, &w, 2, 7).unwrap();
        assert!(base.value > 0.0);
        let scaled = estimate_c42(&s, &Weight::constant(16.0).unwrap(), 2, 7).unwrap();
        assert!((scaled.value - base.value * 0.5).abs() < 1e-9 * base.value);
        let fine = TaylorHoodSpace::new(uniform_refine(s.mesh()));
        let refined = estimate_c42_from(&fine, &w, 1, 7, Some(&base.maximizer)).unwrap();
        assert!(refined.value >= base.value * (1.0 - 1e-12));
    }

    /// Dense generalized eigenproblem `(R K_d)ᵀ X (R K_d) y = λ K_d y`.
    fn dense_sinv(space: &Arc<TaylorHoodSpace>, weight: &Weight) -> f64 {
        let ops = SinvOperators::new(space, weight).unwrap();
        let nf = space.n_free();
        let np = space.n_pressure_dofs();
        let dense = |m: &CsrMatrix| {
            let mut d = DMatrix::zeros(m.nrows(), m.ncols());
            for (r, c, v) in m.triplets() {
                d[(r, c)] += v;
            }
            d
        };
        let kd = dense(&ops.k_dual);
        let kw = dense(&ops.k_w);
        let mut rk = DMatrix::zeros(nf + np, nf);
        for j in 0..nf {
            let col: Vec<f64> = (0..nf).map(|i| kd[(i, j)]).collect();
            let (u, p) = ops.solver.solve_general(&col, &vec![0.0; np]).unwrap();
            for i in 0..nf {
                rk[(i, j)] = u[i];
            }
            for i in 0..np {
                rk[(nf + i, j)] = p[i];
            }
        }
        let mut x = DMatrix::zeros(nf + np, nf + np);
        x.view_mut((0, 0), (nf, nf)).copy_from(&kw);
        for j in 0..np {
            let mut e = vec![0.0; np];
            e[j] = 1.0;
            let col = ops.pressure_quotient(&e);
            for i in 0..np {
                x[(nf + i, nf + j)] = col[i];
            }
        }
        let m = rk.transpose() * x * &rk;
        let l = kd.cholesky().unwrap().l();
        let linv = l.try_inverse().unwrap();
        let sym = &linv * m * linv.transpose();
        let sym = (&sym + sym.transpose()) * 0.5;
        sym.symmetric_eigen().eigenvalues.max().sqrt()
    }

    #[test]
    fn sinv_matches_dense_oracle() {
        for (n, w) in [
            (2, Weight::one()),
            (3, Weight::one()),
            (3, Weight::radial([0.5, 0.5], 1.5).unwrap()),
        ] {
            let s = space(n);
            let oracle = dense_sinv(&s, &w);
            let est = estimate_sinv_norm(&s, &w, 60, 1).unwrap();
            assert!(est > 0.0);
            assert!(est <= oracle * (1.0 + 1e-9), "n={n}: {est} > {oracle}");
            assert!(
                (est - oracle).abs() <= 0.02 * oracle,
                "n={n}: {est} vs {oracle}"
            );
        }
    }

    #[test]
    fn smallness_formula() {
        let r = ConstantsReport::from_estimates(0.5, 2.0, 0.3, 1.0);
        assert!((r.smallness - 0.25 * 4.0 * 0.3).abs() < 1e-15);
        assert!((r.ball_radius - 1.0 / (3.0 * 0.25 * 2.0)).abs() < 1e-15);
        let doubled = ConstantsReport::from_estimates(0.5, 2.0, 0.6, 1.0);
        assert_eq!(doubled.smallness, 2.0 * r.smallness);
        assert!(r.with_nu(10.0).smallness < r.smallness);
        let nu = r.nu_for_smallness(0.1);
        assert!((r.with_nu(nu).smallness - 0.1).abs() < 1e-14);
        let zero = ConstantsReport::from_estimates(0.5, 2.0, 0.0, 1.0);
        assert_eq!(zero.smallness, 0.0);
        assert!(zero.is_small);
    }

    #[test]
    fn apriori_check_flags_violation() {
        let s = space(3);
        let report = ConstantsReport::from_estimates(0.3, 0.1, 1.0, 1.0);
        let zero = FEField::zeros(s.clone());
        assert!(apriori_bound_check(&zero, &report, &Weight::one()).holds);
        let big = s
            .interpolate(
                |x| [x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * 100.0, 0.0],
                |_| 0.0,
                true,
            )
            .unwrap();
        let check = apriori_bound_check(&big, &report, &Weight::one());
        assert!(!check.holds);
        assert!(check.margin < 0.0 && check.diagnostic.is_some());
    }

    #[test]
    fn stokes_projection_is_idempotent() {
        let s = space(4);
        let solver = StokesSolver::new(assemble_stokes(&s, 1.0).unwrap(), 1e-12).unwrap();
        let rhs = assemble_forcing(&s, &ForcingSpec::dirac([0.3, 0.6], [1.0, 1.0])).unwrap();
        let discrete = solver.solve(&rhs).unwrap();
        let proj =
            stokes_projection_with(&solver, |k, qp| discrete.eval_local(k, qp.bary)).unwrap();
        let diff = proj.add_scaled(-1.0, &discrete);
        let scale = discrete.seminorm_h1w(&Weight::one());
        assert!(diff.seminorm_h1w(&Weight::one()) <= 1e-9 * scale);
        assert!(diff.quotient_pressure_norm(&Weight::one()) <= 1e-9 * scale);
    }
}
