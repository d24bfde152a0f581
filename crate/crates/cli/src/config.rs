use std::path::{Path, PathBuf};

use korn_shell::buckling::{ElasticTensor, StressField, StressSource};
use korn_shell::mesh::{check_thickness, Grading};
use korn_shell::operators::DisplacementField;
use korn_shell::solver::SolverOptions;
use korn_shell::surface::{make_surface, SurfaceKind, SurfaceParams, SurfacePatch, Vec3};
use korn_shell::mesh::ShellMesh;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub surface: SurfaceBlock,
    #[serde(default)]
    pub mesh: MeshBlock,
    pub sweep: SweepBlock,
    pub solver: SolverBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub stress: Option<StressBlock>,
    /// Relative paths resolve against the working directory.
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceBlock {
    pub kind: SurfaceKind,
    #[serde(default)]
    pub params: SurfaceParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshPolicy {
    /// The same resolution at every thickness.
    Fixed,
    /// In-plane resolution scaled by `reference_h / h`.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshBlock {
    #[serde(default = "default_policy")]
    pub policy: MeshPolicy,
    /// Cells along theta, z and thickness.
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 3],
    /// Thickness at which `resolution` applies; defaults to the first h.
    #[serde(default)]
    pub reference_h: Option<f64>,
    /// Density multiplier inside `2 h^{1/4}` of the flat point; 1 disables.
    #[serde(default = "one")]
    pub grading_factor: f64,
}

fn default_policy() -> MeshPolicy {
    MeshPolicy::Proportional
}

fn default_resolution() -> [usize; 3] {
    [16, 32, 2]
}

fn one() -> f64 {
    1.0
}

impl Default for MeshBlock {
    fn default() -> Self {
        Self { policy: default_policy(), resolution: default_resolution(), reference_h: None, grading_factor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    /// Strictly decreasing thicknesses.
    pub h: Vec<f64>,
    /// Optional meridional band lengths; each one repeats the sweep on
    /// `[z1, z1 + length]`.
    #[serde(default)]
    pub band_lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_accept")]
    pub accept: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_krylov")]
    pub krylov_dim: usize,
    #[serde(default = "default_keep")]
    pub keep: usize,
}

fn default_tol() -> f64 {
    SolverOptions::default().tol
}

fn default_accept() -> f64 {
    SolverOptions::default().accept
}

fn default_max_iter() -> usize {
    SolverOptions::default().max_iter
}

fn default_krylov() -> usize {
    SolverOptions::default().krylov_dim
}

fn default_keep() -> usize {
    SolverOptions::default().keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Localization radii are `c h^{1/4}`.
    #[serde(default = "default_c_values")]
    pub c_values: Vec<f64>,
    /// Weight exponent of the identity audit.
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_audit_fields")]
    pub audit_fields: usize,
    #[serde(default = "default_audit_order")]
    pub audit_order: usize,
    #[serde(default = "default_audit_pieces")]
    pub audit_pieces: usize,
    /// Bounds for the surface hypothesis checks.
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_density")]
    pub sample_density: usize,
    /// Localization center when the surface has no flat point.
    #[serde(default)]
    pub center: Option<[f64; 2]>,
}

fn default_c_values() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

fn default_audit_fields() -> usize {
    5
}

fn default_audit_order() -> usize {
    8
}

fn default_audit_pieces() -> usize {
    4
}

fn default_c1() -> f64 {
    100.0
}

fn default_c2() -> f64 {
    100.0
}

fn default_density() -> usize {
    64
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            c_values: default_c_values(),
            lambda: 1.0,
            audit_fields: default_audit_fields(),
            audit_order: default_audit_order(),
            audit_pieces: default_audit_pieces(),
            c1: default_c1(),
            c2: default_c2(),
            sample_density: default_density(),
            center: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressKind {
    Uniform,
    Uniaxial,
    Meridional,
}

/// Pre-stress for the buckling quotient. Without this block the run uses
/// `sigma = -I` and `lambda = mu = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressBlock {
    #[serde(default = "default_source")]
    pub source: StressSource,
    #[serde(default = "default_stress_kind")]
    pub kind: StressKind,
    #[serde(default)]
    pub sigma: Option<[[f64; 3]; 3]>,
    #[serde(default)]
    pub direction: Option<[f64; 3]>,
    /// Negative values compress.
    #[serde(default = "minus_one")]
    pub magnitude: f64,
    /// Lame constants `[lambda, mu]` of the reference tensor.
    #[serde(default = "default_lame")]
    pub lame: [f64; 2],
}

fn default_source() -> StressSource {
    StressSource::Config
}

fn default_stress_kind() -> StressKind {
    StressKind::Uniform
}

fn minus_one() -> f64 {
    -1.0
}

fn default_lame() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for StressBlock {
    fn default() -> Self {
        Self {
            source: StressSource::Config,
            kind: StressKind::Uniform,
            sigma: None,
            direction: None,
            magnitude: -1.0,
            lame: default_lame(),
        }
    }
}

impl StressBlock {
    pub fn tensor(&self) -> Result<ElasticTensor, CliError> {
        Ok(ElasticTensor::new(self.lame[0], self.lame[1])?)
    }

    fn axis(&self) -> Vec3 {
        self.direction.map_or(Vec3::new(0.0, 1.0, 0.0), Vec3::from)
    }

    /// Stress on a mesh. `from-displacement` uses the uniform axial
    /// shortening `u = magnitude (x . a) a` along `direction`.
    pub fn field(&self, mesh: &ShellMesh) -> Result<StressField, CliError> {
        match self.source {
            StressSource::FromDisplacement => {
                let a = self.axis().normalize();
                let u = DisplacementField::interpolate(mesh, |n| self.magnitude * n.x.dot(&a) * a);
                Ok(StressField::from_displacement(&u, mesh, &self.tensor()?)?)
            }
            StressSource::Config => match self.kind {
                StressKind::Uniform => {
                    let m = match self.sigma {
                        Some(rows) => nalgebra::Matrix3::from_fn(|i, j| rows[i][j]),
                        None => self.magnitude * nalgebra::Matrix3::identity(),
                    };
                    Ok(StressField::uniform(m)?)
                }
                StressKind::Uniaxial => Ok(StressField::uniaxial(self.axis(), self.magnitude)?),
                StressKind::Meridional => Ok(StressField::meridional(self.magnitude)),
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn surface_patch(&self) -> Result<SurfacePatch, CliError> {
        Ok(make_surface(self.surface.kind, &self.surface.params)?)
    }

    /// The same surface on `[z1, z1 + length]`.
    pub fn with_band_length(&self, length: f64) -> Result<Self, CliError> {
        let surface = self.surface_patch()?;
        let z1 = surface.band().0;
        let mut c = self.clone();
        c.surface.params.insert("band".into(), korn_shell::surface::ParamValue::List(vec![z1, z1 + length]));
        c.sweep.band_lengths.clear();
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let surface = self.surface_patch()?;
        let h = &self.sweep.h;
        if h.is_empty() {
            return Err(CliError::Config("sweep.h is empty".into()));
        }
        if h.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CliError::Config("sweep.h must be strictly decreasing".into()));
        }
        for &v in h {
            check_thickness(&surface, v)?;
        }
        if self.sweep.band_lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(CliError::Config("band lengths must be positive".into()));
        }
        if self.solver.seed.is_none() {
            return Err(CliError::Config("solver.seed is required".into()));
        }
        if self.solver.keep == 0 || self.solver.keep >= self.solver.krylov_dim {
            return Err(CliError::Config("solver needs 0 < keep < krylov_dim".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.accept < self.solver.tol {
            return Err(CliError::Config("solver needs 0 < tol <= accept".into()));
        }
        if self.mesh.resolution[0] < 8 || self.mesh.resolution[1] < 8 || self.mesh.resolution[2] < 2 {
            return Err(CliError::Config(format!("mesh resolution {:?} below [8, 8, 2]", self.mesh.resolution)));
        }
        if !(self.mesh.grading_factor >= 1.0) {
            return Err(CliError::Config("mesh.grading_factor must be >= 1".into()));
        }
        if let Some(r) = self.mesh.reference_h {
            if !(r > 0.0) {
                return Err(CliError::Config("mesh.reference_h must be positive".into()));
            }
        }
        if self.analysis.c_values.is_empty() || self.analysis.c_values.iter().any(|&c| !(c > 0.0)) {
            return Err(CliError::Config("analysis.c_values must be positive".into()));
        }
        if self.analysis.audit_fields == 0 || self.analysis.audit_order == 0 || self.analysis.audit_pieces == 0 {
            return Err(CliError::Config("audit fields, order and pieces must be positive".into()));
        }
        if let Some(s) = &self.stress {
            s.tensor()?;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.solver.seed.unwrap_or(korn_shell::solver::DEFAULT_SEED)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            seed: self.seed(),
            krylov_dim: self.solver.krylov_dim,
            keep: self.solver.keep,
            accept: self.solver.accept,
        }
    }

    /// Mesh resolution at thickness `h` under the configured policy.
    pub fn resolution_at(&self, h: f64) -> (usize, usize, usize) {
        let [nt, nz, nl] = self.mesh.resolution;
        match self.mesh.policy {
            MeshPolicy::Fixed => (nt, nz, nl),
            MeshPolicy::Proportional => {
                let r = self.mesh.reference_h.unwrap_or(self.sweep.h[0]) / h;
                let scale = |n: usize| ((n as f64 * r).round() as usize).max(8);
                (scale(nt), scale(nz), nl)
            }
        }
    }

    pub fn grading_at(&self, surface: &SurfacePatch, h: f64) -> Option<Grading> {
        if self.mesh.grading_factor <= 1.0 {
            return None;
        }
        let fp = surface.flat_points().first()?;
        Some(Grading { center: (fp.theta, fp.z), radius: 2.0 * h.powf(0.25), factor: self.mesh.grading_factor, z_only: fp.polar })
    }

    /// Center for the localization ratios: the first flat point, then the
    /// configured center, then the start of the band at theta = 0.
    pub fn localization_center(&self, surface: &SurfacePatch) -> (f64, f64) {
        if let Some(fp) = surface.flat_points().first() {
            return (fp.theta, fp.z);
        }
        if let Some([t, z]) = self.analysis.center {
            return (t, z);
        }
        (0.0, surface.band().0)
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[surface]\nkind = \"quartic-cap\"\n[sweep]\nh = [0.2, 0.1, 0.05]\n[solver]\nseed = 3\n";

    #[test]
    fn proportional_resolution_follows_h() {
        let c = RunConfig::from_toml(BASE).unwrap();
        assert_eq!(c.resolution_at(0.2), (16, 32, 2));
        assert_eq!(c.resolution_at(0.05), (64, 128, 2));
        let f = RunConfig::from_toml(&BASE.replace("[solver]", "[mesh]\npolicy = \"fixed\"\n[solver]")).unwrap();
        assert_eq!(f.resolution_at(0.05), (16, 32, 2));
    }

    #[test]
    fn hash_ignores_output_but_not_content() {
        let a = RunConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.solver.seed = Some(4);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn band_length_rewrites_band() {
        let c = RunConfig::from_toml(BASE).unwrap().with_band_length(1.5).unwrap();
        assert_eq!(c.surface_patch().unwrap().band(), (0.0, 1.5));
    }

    #[test]
    fn localization_center_falls_back() {
        let c = RunConfig::from_toml(&BASE.replace("quartic-cap", "sphere-cap")).unwrap();
        assert_eq!(c.localization_center(&c.surface_patch().unwrap()), (0.0, 0.0));
        let d = RunConfig::from_toml(&BASE.replace("quartic-cap", "sphere-cap").replace("[solver]", "[analysis]\ncenter = [0.5, 0.3]\n[solver]"))
            .unwrap();
        assert_eq!(d.localization_center(&d.surface_patch().unwrap()), (0.5, 0.3));
    }
}
