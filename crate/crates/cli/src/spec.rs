//! Problem-spec JSON accepted by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wns_core::mesh::{generate_graded, generate_uniform, MeshError};
use wns_core::solver::{EstimatorSettings, SolveOptions};
use wns_core::study::{MeshMode, NuChoice};
use wns_core::{ForcingSpec, Point, Polygon, TriMesh, Weight};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub mesh: MeshMode,
    pub weight: Weight,
    pub forcing: ForcingSpec,
    pub nu: Viscosity,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub estimators: EstimatorSection,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Domain {
    Named(NamedDomain),
    Polygon { vertices: Vec<Point> },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedDomain {
    UnitSquare,
}

impl Domain {
    pub fn polygon(&self) -> Result<Polygon, MeshError> {
        match self {
            Domain::Named(NamedDomain::UnitSquare) => Ok(Polygon::unit_square()),
            Domain::Polygon { vertices } => Polygon::new(vertices.clone()),
        }
    }
}

/// A number fixes `ν`; `{"smallness": {"target": η}}` picks it from the
/// estimated constants on the spec mesh.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Viscosity {
    Value(f64),
    Choice(NuChoice),
}

impl Viscosity {
    pub fn choice(self) -> NuChoice {
        match self {
            Viscosity::Value(nu) => NuChoice::Fixed(nu),
            Viscosity::Choice(c) => c,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub linear_tol: f64,
    pub picard_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            linear_tol: d.linear_tol,
            picard_tol: d.picard_tol,
            max_iters: d.max_iters,
            damping: d.damping,
        }
    }
}

impl SolveSection {
    pub fn options(&self, nu: f64) -> SolveOptions {
        SolveOptions {
            nu,
            linear_tol: self.linear_tol,
            picard_tol: self.picard_tol,
            max_iters: self.max_iters,
            damping: self.damping,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub c42_restarts: usize,
    pub sinv_iters: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let d = EstimatorSettings::default();
        Self {
            c42_restarts: d.c42_restarts,
            sinv_iters: d.sinv_iters,
        }
    }
}

impl EstimatorSection {
    pub fn settings(&self, seed: u64) -> EstimatorSettings {
        EstimatorSettings {
            c42_restarts: self.c42_restarts,
            sinv_iters: self.sinv_iters,
            seed,
        }
    }
}

/// Artifact paths, relative to the directory holding the spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub solution: PathBuf,
    pub trace: PathBuf,
    pub constants: PathBuf,
    pub convergence_csv: PathBuf,
    pub convergence_json: PathBuf,
    pub weights: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            solution: "solution.json".into(),
            trace: "trace.json".into(),
            constants: "constants.json".into(),
            convergence_csv: "convergence.csv".into(),
            convergence_json: "convergence.json".into(),
            weights: "weights.json".into(),
        }
    }
}

impl ProblemSpec {
    pub fn build_mesh(&self, domain: &Polygon) -> Result<TriMesh, MeshError> {
        match &self.mesh {
            MeshMode::Uniform { n } => generate_uniform(domain, *n),
            MeshMode::Graded { grading } => generate_graded(domain, grading),
        }
    }
}

/// A parsed spec together with where it came from.
#[derive(Debug)]
pub struct LoadedSpec {
    pub spec: ProblemSpec,
    pub dir: PathBuf,
    pub sha256: String,
}

impl LoadedSpec {
    pub fn output(&self, path: &Path) -> PathBuf {
        self.dir.join(path)
    }
}

/// Reads and parses a spec; the error string is `path:line:column: message`
/// for JSON and schema errors.
pub fn load(path: &Path) -> Result<LoadedSpec, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let spec: ProblemSpec = serde_json::from_slice(&bytes)
        .map_err(|e| format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedSpec { spec, dir, sha256 })
}
