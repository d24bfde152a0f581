//! Linearized buckling quotient `inf <L0 e, e> / -<sigma, grad^T grad>` over
//! the destabilizing cone.

use crate::analysis::{fit_scaling_exponent, localization_ratio, LocalizationReport, ScalingFit};
use crate::mesh::{DofMap, QuadPoint, ShellMesh};
use crate::operators::{assemble_kernels, field_norms, sym, AssemblyOptions, DisplacementField, FormId, FormPencil, Kernel, SparseSym};
use crate::solver::{min_quotient_matrices, QuotientResult, SolverOptions};
use crate::surface::Vec3;
use crate::{Error, Result};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Isotropic elasticity `L0 xi = 2 mu xi + lambda tr(xi) I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticTensor {
    pub lambda: f64,
    pub mu: f64,
}

impl ElasticTensor {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !(3.0 * lambda + 2.0 * mu > 0.0) {
            return Err(Error::InvalidElasticTensor(format!(
                "need mu > 0 and 3 lambda + 2 mu > 0, got lambda = {lambda}, mu = {mu}"
            )));
        }
        Ok(Self { lambda, mu })
    }

    pub fn apply(&self, xi: &Matrix3<f64>) -> Matrix3<f64> {
        2.0 * self.mu * xi + self.lambda * xi.trace() * Matrix3::identity()
    }

    /// Largest `alpha` with `<L0 xi, xi> >= alpha |xi|^2` on symmetric matrices.
    pub fn coercivity(&self) -> f64 {
        (2.0 * self.mu).min(3.0 * self.lambda + 2.0 * self.mu)
    }

    /// `2 mu |e|^2 + lambda (div u)^2` from an assembled pencil.
    pub fn energy_matrix(&self, pencil: &FormPencil) -> Result<SparseSym> {
        pencil.get(FormId::Strain)?.combine(2.0 * self.mu, pencil.get(FormId::Trace)?, self.lambda)
    }
}

/// Where a stress field came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StressSource {
    Config,
    FromDisplacement,
}

#[derive(Debug, Clone, PartialEq)]
enum StressValues {
    Uniform(Matrix3<f64>),
    /// `magnitude e_z e_z^T` with the local meridian direction.
    Meridional(f64),
    /// Per cell, per quadrature point of the 2x2x2 rule.
    PerPoint(Vec<[Matrix3<f64>; 8]>),
}

/// Symmetric stress at every quadrature point of a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct StressField {
    values: StressValues,
    pub source: StressSource,
}

fn asymmetry(m: &Matrix3<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

impl StressField {
    pub fn uniform(sigma: Matrix3<f64>) -> Result<Self> {
        if asymmetry(&sigma) > 1e-12 {
            return Err(Error::InvalidParameter("stress must be symmetric".into()));
        }
        Ok(Self { values: StressValues::Uniform(sigma), source: StressSource::Config })
    }

    /// `magnitude d d^T` for a unit direction `d`; negative magnitude compresses.
    pub fn uniaxial(direction: Vec3, magnitude: f64) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0) {
            return Err(Error::InvalidParameter("uniaxial direction must be nonzero".into()));
        }
        let d = direction / n;
        Self::uniform(magnitude * d * d.transpose())
    }

    /// Uniaxial stress along the local meridian `e_z`.
    pub fn meridional(magnitude: f64) -> Self {
        Self { values: StressValues::Meridional(magnitude), source: StressSource::Config }
    }

    /// `sigma = L0 e(u)` at each quadrature point.
    pub fn from_displacement(field: &DisplacementField, mesh: &ShellMesh, l0: &ElasticTensor) -> Result<Self> {
        if field.values.len() != mesh.n_nodes() {
            return Err(Error::Dimension { expected: mesh.n_nodes(), found: field.values.len() });
        }
        let per: Vec<[Matrix3<f64>; 8]> = (0..mesh.cells().len())
            .into_par_iter()
            .map(|cell| {
                let c = &mesh.cells()[cell];
                let qps = mesh.cell_quadrature(cell);
                std::array::from_fn(|q| {
                    let mut grad = Matrix3::zeros();
                    for a in 0..8 {
                        grad += field.values[c.nodes[a]] * qps[q].grad[a].transpose();
                    }
                    let s = l0.apply(&sym(&grad));
                    0.5 * (s + s.transpose())
                })
            })
            .collect();
        Ok(Self { values: StressValues::PerPoint(per), source: StressSource::FromDisplacement })
    }

    pub fn scaled(&self, s: f64) -> Self {
        let values = match &self.values {
            StressValues::Uniform(m) => StressValues::Uniform(s * m),
            StressValues::Meridional(a) => StressValues::Meridional(s * a),
            StressValues::PerPoint(v) => StressValues::PerPoint(v.iter().map(|c| c.map(|m| s * m)).collect()),
        };
        Self { values, source: self.source }
    }

    pub fn at(&self, cell: usize, q: usize, qp: &QuadPoint) -> Matrix3<f64> {
        match &self.values {
            StressValues::Uniform(m) => *m,
            StressValues::Meridional(a) => *a * qp.e_z * qp.e_z.transpose(),
            StressValues::PerPoint(v) => v[cell][q],
        }
    }

    /// Largest entry asymmetry over the stored values.
    pub fn max_asymmetry(&self) -> f64 {
        match &self.values {
            StressValues::Uniform(m) => asymmetry(m),
            StressValues::Meridional(_) => 0.0,
            StressValues::PerPoint(v) => v.iter().flat_map(|c| c.iter()).map(asymmetry).fold(0.0, f64::max),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.values {
            StressValues::Uniform(m) => m.iter().all(|v| *v == 0.0),
            StressValues::Meridional(a) => *a == 0.0,
            StressValues::PerPoint(v) => v.iter().flat_map(|c| c.iter()).all(|m| m.iter().all(|x| *x == 0.0)),
        }
    }
}

/// Assembles `<sigma, grad(u)^T grad(v)>` on the free dofs of a pencil.
pub fn geometric_matrix(mesh: &ShellMesh, dofs: &DofMap, pencil: &FormPencil, sigma: &StressField) -> Result<SparseSym> {
    if let StressValues::PerPoint(v) = &sigma.values {
        if v.len() != mesh.cells().len() {
            return Err(Error::Dimension { expected: mesh.cells().len(), found: v.len() });
        }
    }
    let f = |cell: usize, q: usize, qp: &QuadPoint| sigma.at(cell, q, qp);
    let mut mats = assemble_kernels(mesh, dofs, pencil.pattern(), &[Kernel::Geometric(&f)], &AssemblyOptions::default())?;
    Ok(mats.remove(0))
}

/// `int <sigma, grad(phi)^T grad(phi)>` by direct quadrature, and whether it
/// is negative.
pub fn is_destabilizing(field: &DisplacementField, sigma: &StressField, mesh: &ShellMesh) -> (f64, bool) {
    let value: f64 = (0..mesh.cells().len())
        .into_par_iter()
        .map(|cell| {
            let c = &mesh.cells()[cell];
            mesh.cell_quadrature(cell)
                .iter()
                .enumerate()
                .map(|(q, qp)| {
                    let mut grad = Matrix3::zeros();
                    for a in 0..8 {
                        grad += field.values[c.nodes[a]] * qp.grad[a].transpose();
                    }
                    let gram = grad.transpose() * grad;
                    qp.weight * sigma.at(cell, q, qp).component_mul(&gram).sum()
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    (value, value < 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucklingResult {
    /// Smallest energy-to-destabilization ratio (stress units).
    pub value: f64,
    /// Minimizing variation on the free dofs.
    pub field: Vec<f64>,
    /// `<sigma, grad^T grad>` of the minimizer, negative.
    pub denominator: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Minimizes `<L0 e(phi), e(phi)> / -<sigma, grad(phi)^T grad(phi)>` over
/// variations with a negative denominator.
pub fn lambda_cl(
    pencil: &FormPencil,
    sigma: &StressField,
    l0: &ElasticTensor,
    mesh: &ShellMesh,
    dofs: &DofMap,
    opts: &SolverOptions,
) -> Result<BucklingResult> {
    if sigma.is_zero() {
        return Err(Error::EmptyCone);
    }
    let a = l0.energy_matrix(pencil)?;
    let g = geometric_matrix(mesh, dofs, pencil, sigma)?;
    let b = g.scaled(-1.0);
    let r = solve_indefinite(&a, &b, opts)?;
    let denominator = g.quad(&r.field);
    Ok(BucklingResult { value: r.value, field: r.field, denominator, residual: r.residual, iterations: r.iterations })
}

fn solve_indefinite(a: &SparseSym, b: &SparseSym, opts: &SolverOptions) -> Result<QuotientResult> {
    match min_quotient_matrices(a, b, opts) {
        Err(Error::NotPositiveDefinite) => {
            Err(Error::Breakdown("elastic energy is not positive definite on the free dofs".into()))
        }
        other => other,
    }
}

/// `lambda_cl^2 / K(V^h)`.
pub fn validity_ratio(result: &BucklingResult, korn: &QuotientResult) -> f64 {
    result.value * result.value / korn.value
}

/// Strictly decreasing along the sequence.
pub fn is_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// Slope of `|e(u)| / |u_t|` against h, with its distance from 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub fit: ScalingFit,
    pub deviation: f64,
    /// `|deviation| <= 0.1`.
    pub consistent: bool,
    pub localization: Option<LocalizationReport>,
}

/// Checks the law from squared norms `|e(u)|^2` and `|u_t|^2` per h.
pub fn hypothesis_from_norms(h: &[f64], strain: &[f64], normal: &[f64]) -> Result<HypothesisReport> {
    if h.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: h.len() });
    }
    if strain.len() != h.len() || normal.len() != h.len() {
        return Err(Error::Dimension { expected: h.len(), found: strain.len().min(normal.len()) });
    }
    let ratio: Vec<f64> = strain.iter().zip(normal).map(|(e, n)| (e / n).sqrt()).collect();
    let fit = fit_scaling_exponent(h, &ratio)?;
    let deviation = fit.slope - 0.5;
    Ok(HypothesisReport { consistent: deviation.abs() <= 0.1, deviation, fit, localization: None })
}

/// The same check on a family of minimizers, one per mesh, with the mass
/// ratio inside `c h^{1/4}` around `center` when given.
pub fn localization_hypothesis_check(
    family: &[(&ShellMesh, &DisplacementField)],
    center: Option<(f64, f64)>,
    c: f64,
) -> Result<HypothesisReport> {
    if family.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: family.len() });
    }
    let h: Vec<f64> = family.iter().map(|(m, _)| m.thickness()).collect();
    let norms: Vec<_> = family.iter().map(|(m, u)| field_norms(u, m)).collect();
    let strain: Vec<f64> = norms.iter().map(|n| n.strain).collect();
    let normal: Vec<f64> = norms.iter().map(|n| n.normal).collect();
    let mut rep = hypothesis_from_norms(&h, &strain, &normal)?;
    if let Some(center) = center {
        let ratios = family.iter().map(|(m, u)| localization_ratio(u, m, center, c)).collect::<Result<Vec<_>>>()?;
        rep.localization = Some(LocalizationReport::new(c, h, ratios)?);
    }
    Ok(rep)
}
