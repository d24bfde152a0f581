//! Power-law fits, localization of fields around flat points, and a
//! quadrature audit of the integration-by-parts identities behind the
//! lower bound.

use crate::mesh::{subdomain, ShellMesh};
use crate::operators::{simplified_gradient, sym, ComponentJet, DisplacementField, FormId, FormPencil, SimplifiedVariant};
use crate::quadrature::composite;
use crate::surface::{SurfaceKind, SurfacePatch, Vec3};
use crate::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Least-squares fit of `log(value) = slope log(h) + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub h: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `log(value) - fitted` per point.
    pub residuals: Vec<f64>,
}

impl ScalingFit {
    pub fn predict(&self, h: f64) -> f64 {
        (self.intercept + self.slope * h.ln()).exp()
    }
}

pub fn fit_scaling_exponent(h: &[f64], values: &[f64]) -> Result<ScalingFit> {
    if h.len() != values.len() {
        return Err(Error::Dimension { expected: h.len(), found: values.len() });
    }
    if h.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: h.len() });
    }
    if let Some(&bad) = h.iter().chain(values).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositive(bad));
    }
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("fit needs at least two distinct h values".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(&y).map(|(a, b)| b - (intercept + slope * a)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(ScalingFit { h: h.to_vec(), values: values.to_vec(), slope, intercept, r_squared, residuals })
}

/// Weighted L2 mass of a field per cell.
fn cell_masses(field: &DisplacementField, mesh: &ShellMesh) -> Vec<f64> {
    (0..mesh.cells().len())
        .into_par_iter()
        .map(|cell| {
            let c = &mesh.cells()[cell];
            mesh.cell_quadrature(cell)
                .iter()
                .map(|qp| {
                    let u: Vec3 = (0..8).map(|a| qp.shape[a] * field.values[c.nodes[a]]).sum();
                    qp.weight * u.norm_squared()
                })
                .sum()
        })
        .collect()
}

/// Fraction of the field's L2 mass inside the disc of the given radius.
pub fn mass_fraction(field: &DisplacementField, mesh: &ShellMesh, center: (f64, f64), radius: f64) -> Result<f64> {
    if field.is_zero() {
        return Err(Error::ZeroField);
    }
    let masses = cell_masses(field, mesh);
    let total: f64 = masses.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroField);
    }
    let set = subdomain(mesh, center, radius)?;
    let inside: f64 = set.cells.iter().map(|&c| masses[c]).sum();
    Ok((inside / total).clamp(0.0, 1.0))
}

/// Mass fraction inside radius `c h^{1/4}` around `center`.
pub fn localization_ratio(field: &DisplacementField, mesh: &ShellMesh, center: (f64, f64), c: f64) -> Result<f64> {
    mass_fraction(field, mesh, center, c * mesh.thickness().powf(0.25))
}

/// Mass ratios of one family of fields across a decreasing h list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub c: f64,
    pub h: Vec<f64>,
    pub ratios: Vec<f64>,
    /// `ratios[i + 1] - ratios[i]`, along decreasing h.
    pub differences: Vec<f64>,
}

impl LocalizationReport {
    pub fn new(c: f64, h: Vec<f64>, ratios: Vec<f64>) -> Result<Self> {
        if h.len() != ratios.len() {
            return Err(Error::Dimension { expected: h.len(), found: ratios.len() });
        }
        if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::InvalidParameter(format!("mass ratio {bad} outside [0, 1]")));
        }
        let differences = ratios.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { c, h, ratios, differences })
    }

    /// Nondecreasing as h decreases, up to `tol`.
    pub fn is_nondecreasing(&self, tol: f64) -> bool {
        self.differences.iter().all(|d| *d >= -tol)
    }

    /// Largest absolute change between consecutive h values.
    pub fn max_change(&self) -> f64 {
        self.differences.iter().fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// Mid-surface trial field `(u_t, u_theta, u_z)`: a quadratic polynomial in
/// box coordinates `(X, Y)` times the bump `(1 - X^2)^3 (1 - Y^2)^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialField {
    pub center: (f64, f64),
    pub half_width: (f64, f64),
    /// Coefficients of `1, X, Y, X^2, XY, Y^2` per component.
    pub coefficients: [[f64; 6]; 3],
}

fn bump3(x: f64) -> (f64, f64) {
    if x.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - x * x;
    (s * s * s, -6.0 * x * s * s)
}

impl TrialField {
    pub fn zero(center: (f64, f64), half_width: (f64, f64)) -> Self {
        Self { center, half_width, coefficients: [[0.0; 6]; 3] }
    }

    /// A random field whose box keeps a margin from the boundary of `E`.
    pub fn random<R: Rng>(surface: &SurfacePatch, rng: &mut R) -> Self {
        let (z1, z2) = surface.band();
        let l = z2 - z1;
        let wz = l * rng.gen_range(0.08..0.2);
        let margin = 0.05 * l;
        let zc = rng.gen_range(z1 + wz + margin..z2 - wz - margin);
        let wt = rng.gen_range(0.05..0.15);
        let tc = if surface.is_periodic() { rng.gen_range(0.0..1.0) } else { rng.gen_range(wt + 0.02..1.0 - wt - 0.02) };
        let mut coefficients = [[0.0; 6]; 3];
        for comp in coefficients.iter_mut() {
            for c in comp.iter_mut() {
                *c = rng.gen_range(-1.0..1.0);
            }
        }
        Self { center: (tc, zc), half_width: (wt, wz), coefficients }
    }

    /// Whether the closed support box stays inside the open parameter domain.
    pub fn check_support(&self, surface: &SurfacePatch) -> Result<()> {
        let (z1, z2) = surface.band();
        let (tc, zc) = self.center;
        let (wt, wz) = self.half_width;
        if !(wt > 0.0 && wz > 0.0) {
            return Err(Error::InvalidParameter("trial box needs positive half widths".into()));
        }
        let z_ok = zc - wz > z1 && zc + wz < z2;
        let t_ok = if surface.is_periodic() { 2.0 * wt < 1.0 } else { tc - wt > 0.0 && tc + wt < 1.0 };
        if z_ok && t_ok {
            Ok(())
        } else {
            Err(Error::SupportTouchesBoundary)
        }
    }

    /// Values and `theta`, `z` derivatives of the three components.
    pub fn eval(&self, theta: f64, z: f64, periodic: bool) -> ([f64; 3], [f64; 3], [f64; 3]) {
        let mut dt = theta - self.center.0;
        if periodic {
            dt -= dt.round();
        }
        let x = dt / self.half_width.0;
        let y = (z - self.center.1) / self.half_width.1;
        let (bx, bxp) = bump3(x);
        let (by, byp) = bump3(y);
        let mono = [1.0, x, y, x * x, x * y, y * y];
        let mono_x = [0.0, 1.0, 0.0, 2.0 * x, y, 0.0];
        let mono_y = [0.0, 0.0, 1.0, 0.0, x, 2.0 * y];
        let mut u = [0.0; 3];
        let mut ut = [0.0; 3];
        let mut uz = [0.0; 3];
        for c in 0..3 {
            let k = &self.coefficients[c];
            let p: f64 = (0..6).map(|i| k[i] * mono[i]).sum();
            let px: f64 = (0..6).map(|i| k[i] * mono_x[i]).sum();
            let py: f64 = (0..6).map(|i| k[i] * mono_y[i]).sum();
            u[c] = p * bx * by;
            ut[c] = (px * bx + p * bxp) * by / self.half_width.0;
            uz[c] = (py * by + p * byp) * bx / self.half_width.1;
        }
        (u, ut, uz)
    }
}

/// Quadrature used by the identity audit: a tensor Gauss-Legendre rule of
/// the given order on each of `pieces x pieces` sub-boxes of the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Exponent of the weight `exp(lambda z)`.
    pub lambda: f64,
    pub order: usize,
    pub pieces: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { lambda: 1.0, order: 8, pieces: 4 }
    }
}

/// Both sides of an identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityValue {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_residual: f64,
}

impl IdentityValue {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self::with_scale(lhs, rhs, 0.0)
    }

    /// `scale` is a floor for the normalization, used when `lhs` is a
    /// difference of larger terms that may cancel exactly.
    fn with_scale(lhs: f64, rhs: f64, scale: f64) -> Self {
        let scale = (lhs.abs() + rhs.abs()).max(scale);
        let relative_residual = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        Self { lhs, rhs, relative_residual }
    }
}

/// Names used in audit reports.
pub const WEIGHTED_SPLITTING: &str = "weighted-splitting";
pub const DIAGONAL_PRODUCT: &str = "diagonal-product";
pub const OFF_DIAGONAL_PRODUCT: &str = "off-diagonal-product";
pub const CODAZZI_GAUSS: &str = "codazzi-gauss";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldAudit {
    pub field: usize,
    pub center: (f64, f64),
    pub half_width: (f64, f64),
    pub identities: BTreeMap<String, IdentityValue>,
}

/// Empirical constants of the three lower-bound inequalities, as the
/// largest ratio over the sampled fields; `None` when no field gives a
/// finite ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InequalityConstants {
    /// `|sqrt(K) u_t|^2 / (|sqrt(K) u_theta|^2 + |sqrt(K) u_z|^2 + |F^sym|^2)`
    pub normal_by_tangential: Option<f64>,
    /// `|u_z|^2 / (L^2 (|F^sym|^2 + |sqrt(K) u_t|^2 + |u_theta|^2))`
    pub meridional_poincare: Option<f64>,
    /// `(|u_theta| + |u_z|) / |F^sym|`
    pub tangential_by_strain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub surface: SurfaceKind,
    pub options: AuditOptions,
    pub fields: Vec<FieldAudit>,
    pub constants: InequalityConstants,
}

impl AuditReport {
    pub fn max_residual(&self) -> f64 {
        self.fields
            .iter()
            .flat_map(|f| f.identities.values())
            .fold(0.0, |m, v| m.max(v.relative_residual))
    }
}

#[derive(Default, Clone, Copy)]
struct Sums {
    split_lhs: f64,
    split_rhs: f64,
    diag_lhs: f64,
    diag_rhs: f64,
    off_lhs: f64,
    off_rhs: f64,
    gauss_rhs: f64,
    k_ut: f64,
    k_uth: f64,
    k_uz: f64,
    uth: f64,
    uz: f64,
    fsym: f64,
}

fn audit_sums(surface: &SurfacePatch, field: &TrialField, opts: &AuditOptions) -> Result<Sums> {
    let rule = composite(opts.order, opts.pieces, -1.0, 1.0)?;
    let periodic = surface.is_periodic();
    let (wt, wz) = field.half_width;
    let mut s = Sums::default();
    for &(x, wx) in &rule {
        for &(y, wy) in &rule {
            let theta = field.center.0 + wt * x;
            let theta = if periodic { theta.rem_euclid(1.0) } else { theta };
            let z = field.center.1 + wz * y;
            let w = wx * wy * wt * wz;
            let f = surface.eval_frame(theta, z)?;
            let cz = surface.codazzi_terms(theta, z)?;
            let (u, du_t, du_z) = field.eval(theta, z, periodic);
            let jet = ComponentJet { u, d_t: [0.0; 3], d_theta: du_t, d_z: du_z };
            let fm = simplified_gradient(&jet, &f, SimplifiedVariant::F);
            let fs = sym(&fm);
            let (at, az) = (f.a_theta, f.a_z);
            let (at_z, az_t) = (f.da_theta[1], f.da_z[0]);
            let (kt, kz) = (f.kappa_theta, f.kappa_z);
            if !(kt > 0.0) {
                return Err(Error::Precondition(format!("kappa_theta = {kt} <= 0 at ({theta}, {z})")));
            }
            let [ut, uth, uz] = u;
            let area = at * az;

            // Weighted splitting with phi = exp(lambda z) and rho = kappa_z / kappa_theta.
            let phi = (opts.lambda * z).exp();
            let rho = kz / kt;
            let rho_t = (f.dkappa_z[0] * kt - kz * f.dkappa_theta[0]) / (kt * kt);
            let rho_z = (f.dkappa_z[1] * kt - kz * f.dkappa_theta[1]) / (kt * kt);
            s.split_lhs += w * area * ((rho * fs[(1, 1)] - fs[(2, 2)]) * phi * uz + 2.0 * rho * fs[(1, 2)] * phi * uth);
            let dz_phi_at = phi * (opts.lambda * at + at_z);
            let dz_at_phi_rho = phi * (opts.lambda * at * rho + at_z * rho + at * rho_z);
            let dt_phi_az_rho = phi * (az_t * rho + az * rho_t);
            s.split_rhs += w
                * ((phi * at_z * rho + 0.5 * dz_phi_at) * uz * uz
                    - (0.5 * dz_at_phi_rho + at_z * phi * rho) * uth * uth
                    - (dt_phi_az_rho + (1.0 + rho) * phi * az_t) * uth * uz);

            // Products of the u_t-free diagonal and of the off-diagonal entries.
            let diag = (fm[(1, 1)] - kt * ut) * (fm[(2, 2)] - kz * ut);
            let off = fm[(1, 2)] * fm[(2, 1)];
            s.diag_lhs += w * area * diag;
            s.off_lhs += w * area * off;
            let common = du_z[1] * du_t[2] + at_z * az_t / area * uth * uz;
            s.diag_rhs += w * (common - 0.5 * cz.dz_ratio_theta * uz * uz - 0.5 * cz.dtheta_ratio_z * uth * uth);
            s.off_rhs += w * (common + 0.5 * cz.dz_ratio_theta * uth * uth + 0.5 * cz.dtheta_ratio_z * uz * uz);
            s.gauss_rhs += w * 0.5 * area * kt * kz * (uth * uth + uz * uz);

            let kg = kt * kz;
            s.k_ut += w * area * kg * ut * ut;
            s.k_uth += w * area * kg * uth * uth;
            s.k_uz += w * area * kg * uz * uz;
            s.uth += w * area * uth * uth;
            s.uz += w * area * uz * uz;
            s.fsym += w * area * fs.norm_squared();
        }
    }
    Ok(s)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    let r = num / den;
    (den > 0.0 && r.is_finite()).then_some(r)
}

fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Evaluates both sides of each identity on every trial field, with all
/// fields frozen at `t = 0`.
pub fn identity_audit(surface: &SurfacePatch, fields: &[TrialField], opts: &AuditOptions) -> Result<AuditReport> {
    for f in fields {
        f.check_support(surface)?;
    }
    let sums: Vec<Sums> = fields.par_iter().map(|f| audit_sums(surface, f, opts)).collect::<Result<_>>()?;
    let l = surface.z_extent();
    let mut constants = InequalityConstants::default();
    let mut out = Vec::with_capacity(fields.len());
    for (i, (f, s)) in fields.iter().zip(&sums).enumerate() {
        let mut identities = BTreeMap::new();
        identities.insert(WEIGHTED_SPLITTING.to_string(), IdentityValue::new(s.split_lhs, s.split_rhs));
        identities.insert(DIAGONAL_PRODUCT.to_string(), IdentityValue::new(s.diag_lhs, s.diag_rhs));
        identities.insert(OFF_DIAGONAL_PRODUCT.to_string(), IdentityValue::new(s.off_lhs, s.off_rhs));
        identities.insert(CODAZZI_GAUSS.to_string(), IdentityValue::with_scale(s.diag_lhs - s.off_lhs, s.gauss_rhs, s.diag_lhs.abs() + s.off_lhs.abs()));
        out.push(FieldAudit { field: i, center: f.center, half_width: f.half_width, identities });
        constants.normal_by_tangential =
            max_opt(constants.normal_by_tangential, ratio(s.k_ut, s.k_uth + s.k_uz + s.fsym));
        constants.meridional_poincare =
            max_opt(constants.meridional_poincare, ratio(s.uz, l * l * (s.fsym + s.k_ut + s.uth)));
        constants.tangential_by_strain =
            max_opt(constants.tangential_by_strain, ratio(s.uth.sqrt() + s.uz.sqrt(), s.fsym.sqrt()));
    }
    Ok(AuditReport { surface: surface.kind(), options: *opts, fields: out, constants })
}

/// Largest `|grad u|^2 / (|u_t| |e(u)| / h + |u|^2 + |e(u)|^2)` over the
/// given free-dof vectors: an empirical lower bound for the constant of the
/// Korn interpolation inequality.
pub fn interpolation_constant_probe(pencil: &FormPencil, fields: &[Vec<f64>], h: f64) -> Result<f64> {
    if fields.len() < 10 {
        return Err(Error::TooFewSamples { needed: 10, got: fields.len() });
    }
    if !(h > 0.0) {
        return Err(Error::NonPositive(h));
    }
    let mut best: f64 = 0.0;
    for x in fields {
        if x.len() != pencil.n_free() {
            return Err(Error::Dimension { expected: pencil.n_free(), found: x.len() });
        }
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::ZeroField);
        }
        let grad = pencil.quad(FormId::Gradient, x)?;
        let strain = pencil.quad(FormId::Strain, x)?;
        let mass = pencil.quad(FormId::Mass, x)?;
        let normal = pencil.quad(FormId::MassNormal, x)?;
        let den = normal.max(0.0).sqrt() * strain.max(0.0).sqrt() / h + mass + strain;
        best = best.max(grad / den);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_shell_mesh, tag_dirichlet};
    use crate::operators::assemble_forms;
    use crate::surface::{make_surface, ParamValue, SurfaceParams};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere_band() -> SurfacePatch {
        let mut p = SurfaceParams::new();
        p.insert("band".into(), ParamValue::List(vec![0.2, 1.2]));
        make_surface(SurfaceKind::SphereCap, &p).unwrap()
    }

    #[test]
    fn synthetic_power_law() {
        let h = [0.1f64, 0.05, 0.025, 0.0125];
        let v: Vec<f64> = h.iter().map(|x| 7.0 * x.powf(1.5)).collect();
        let fit = fit_scaling_exponent(&h, &v).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        let fit = fit_scaling_exponent(&h, &h).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_scaling_exponent(&[0.1, 0.2], &[1.0, 2.0]), Err(Error::TooFewSamples { .. })));
        assert!(matches!(fit_scaling_exponent(&[0.1, 0.2, 0.3], &[1.0, 0.0, 2.0]), Err(Error::NonPositive(_))));
    }

    #[test]
    fn audit_identities_on_sphere() {
        let s = sphere_band();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fields: Vec<TrialField> = (0..5).map(|_| TrialField::random(&s, &mut rng)).collect();
        let rep = identity_audit(&s, &fields, &AuditOptions::default()).unwrap();
        assert!(rep.max_residual() < 1e-6, "{}", rep.max_residual());
    }

    #[test]
    fn audit_converges_with_order() {
        let s = sphere_band();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fields: Vec<TrialField> = (0..3).map(|_| TrialField::random(&s, &mut rng)).collect();
        let run = |order| identity_audit(&s, &fields, &AuditOptions { order, ..Default::default() }).unwrap().max_residual();
        let (coarse, fine) = (run(4), run(8));
        assert!(fine < 1e-3 * coarse, "{coarse} {fine}");
    }

    #[test]
    fn zero_field_gives_zero_sides() {
        let s = sphere_band();
        let rep = identity_audit(&s, &[TrialField::zero((0.3, 0.7), (0.1, 0.2))], &AuditOptions::default()).unwrap();
        for v in rep.fields[0].identities.values() {
            assert_eq!((v.lhs, v.rhs, v.relative_residual), (0.0, 0.0, 0.0));
        }
        assert_eq!(rep.constants.tangential_by_strain, None);
    }

    #[test]
    fn support_touching_boundary_rejected() {
        let s = sphere_band();
        let f = TrialField::zero((0.3, 0.4), (0.1, 0.2));
        assert!(matches!(identity_audit(&s, &[f], &AuditOptions::default()), Err(Error::SupportTouchesBoundary)));
    }

    #[test]
    fn probe_requires_ten_fields_and_is_finite() {
        let s = sphere_band();
        let m = build_shell_mesh(&s, 0.05, (8, 8, 2)).unwrap();
        let d = tag_dirichlet(&m);
        let p = assemble_forms(&m, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fields: Vec<Vec<f64>> = (0..10).map(|_| (0..d.n_free()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let v = interpolation_constant_probe(&p, &fields, 0.05).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(matches!(interpolation_constant_probe(&p, &fields[..9], 0.05), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn uniform_field_mass_fraction_matches_area() {
        let s = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        let m = build_shell_mesh(&s, 0.01, (60, 60, 2)).unwrap();
        let f = DisplacementField::interpolate(&m, |n| s.frame_unchecked(n.theta, n.z).normal);
        // Flat parameter density on the cylinder: the disc's share of the unit square.
        let r = (0.1 / std::f64::consts::PI).sqrt();
        let ratio = mass_fraction(&f, &m, (0.5, 0.5), r).unwrap();
        assert!((ratio - 0.1).abs() < 0.01, "{ratio}");
        assert!(matches!(mass_fraction(&DisplacementField::zeros(m.n_nodes()), &m, (0.5, 0.5), r), Err(Error::ZeroField)));
    }
}
