//! Localized Kirchhoff trial field `u = f n - t grad_S f` concentrated at
//! scale `c h^alpha` around a flat point, with exact derivatives.

use crate::analysis::{fit_scaling_exponent, ScalingFit};
use crate::mesh::{check_thickness, ShellMesh};
use crate::operators::{curvilinear_gradient, simplified_gradient, sym, ComponentJet, DisplacementField, SimplifiedVariant};
use crate::quadrature::{composite, gauss_legendre};
use crate::surface::{ConditionReport, FlatPoint, FrameSample, SurfacePatch, Vec3};
use crate::{Error, Result};
use nalgebra::{Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

pub const DEFAULT_ALPHA: f64 = 0.25;

/// Tensor bump `f(xi, eta) = g(xi) g(eta)` with `g(x) = (1 - x^2)^power` on
/// `[-1, 1]` and zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bump {
    pub power: i32,
}

impl Default for Bump {
    fn default() -> Self {
        Self { power: 2 }
    }
}

/// Value, gradient and Hessian of a bump.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BumpJet {
    pub f: f64,
    pub f_x: f64,
    pub f_y: f64,
    pub f_xx: f64,
    pub f_xy: f64,
    pub f_yy: f64,
}

impl Bump {
    /// Powers below 2 do not vanish with their first derivatives at the edge.
    pub fn new(power: i32) -> Result<Self> {
        if power < 2 {
            return Err(Error::InvalidParameter(format!("bump power {power} < 2")));
        }
        Ok(Self { power })
    }

    /// Second derivatives are continuous across the edge from power 3 on.
    pub fn is_c2(&self) -> bool {
        self.power >= 3
    }

    fn profile(&self, x: f64) -> (f64, f64, f64) {
        if x.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let p = self.power;
        let pf = p as f64;
        let s = 1.0 - x * x;
        let g = s.powi(p);
        let g1 = -2.0 * pf * x * s.powi(p - 1);
        let g2 = -2.0 * pf * s.powi(p - 1) + 4.0 * pf * (pf - 1.0) * x * x * s.powi(p - 2);
        (g, g1, g2)
    }

    pub fn eval(&self, xi: f64, eta: f64) -> BumpJet {
        let (a, a1, a2) = self.profile(xi);
        let (b, b1, b2) = self.profile(eta);
        BumpJet { f: a * b, f_x: a1 * b, f_y: a * b1, f_xx: a2 * b, f_xy: a1 * b1, f_yy: a * b2 }
    }

    /// `(|f|, |grad f|, |D^2 f|)` in L2 over `[-1, 1]^2`.
    pub fn norms(&self) -> (f64, f64, f64) {
        let rule = composite(8, 4, -1.0, 1.0).expect("fixed rule");
        let (mut n0, mut n1, mut n2) = (0.0, 0.0, 0.0);
        for &(x, wx) in &rule {
            for &(y, wy) in &rule {
                let j = self.eval(x, y);
                let w = wx * wy;
                n0 += w * j.f * j.f;
                n1 += w * (j.f_x * j.f_x + j.f_y * j.f_y);
                n2 += w * (j.f_xx * j.f_xx + 2.0 * j.f_xy * j.f_xy + j.f_yy * j.f_yy);
            }
        }
        (n0.sqrt(), n1.sqrt(), n2.sqrt())
    }
}

/// Parameters of the localized trial field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub center: (f64, f64),
    /// The center is the pole of a polar chart, handled in tangent-plane
    /// coordinates.
    pub polar: bool,
    pub h: f64,
    pub alpha: f64,
    /// Multiplier `c` of the support radius `c h^alpha`.
    pub scale: f64,
    pub amplitude: f64,
    pub bump: Bump,
}

impl AnsatzSpec {
    pub fn at_flat_point(fp: &FlatPoint, h: f64) -> Self {
        Self {
            center: (fp.theta, fp.z),
            polar: fp.polar,
            h,
            alpha: DEFAULT_ALPHA,
            scale: 1.0,
            amplitude: 1.0,
            bump: Bump::default(),
        }
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..*self }
    }

    pub fn radius(&self) -> f64 {
        self.scale * self.h.powf(self.alpha)
    }
}

#[derive(Debug, Clone, Copy)]
enum Geometry {
    Chart,
    Polar { x0: Vec3, n0: Vec3, e1: Vec3, e2: Vec3, psi0: f64, rate: f64 },
}

fn wrap_pi(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Exact evaluator of the trial field on one surface.
#[derive(Debug, Clone)]
pub struct Ansatz<'a> {
    surface: &'a SurfacePatch,
    spec: AnsatzSpec,
    r: f64,
    geom: Geometry,
}

impl<'a> Ansatz<'a> {
    /// Checks that the support lies inside the parameter domain.
    pub fn new(surface: &'a SurfacePatch, spec: AnsatzSpec) -> Result<Self> {
        if !(spec.h > 0.0 && spec.alpha > 0.0 && spec.scale > 0.0) {
            return Err(Error::InvalidParameter("ansatz needs h, alpha and scale positive".into()));
        }
        Bump::new(spec.bump.power)?;
        let r = spec.radius();
        let (z1, z2) = surface.band();
        let (t0, z0) = spec.center;
        if spec.polar {
            if !surface.is_polar() || (z0 - z1).abs() > 1e-12 {
                return Err(Error::Precondition("polar ansatz needs the pole of a polar chart as center".into()));
            }
            let x0 = surface.position(t0, z1);
            let n0 = surface.pole_normal();
            let (e1, e2) = surface.pole_tangents();
            let proj = |th: f64, z: f64| {
                let d = surface.position(th, z) - x0;
                (d.dot(&e1), d.dot(&e2))
            };
            let zr = z1 + 0.25 * (z2 - z1);
            let (a, b) = proj(0.0, zr);
            let (c, d) = proj(0.25, zr);
            let psi0 = b.atan2(a);
            let rate = wrap_pi(d.atan2(c) - psi0) / 0.25;
            // The square support reaches radius r sqrt(2) in the tangent plane.
            let reach = r * 2f64.sqrt();
            for k in 0..64 {
                let (a, b) = proj(k as f64 / 64.0, z2);
                if a.hypot(b) <= reach {
                    return Err(Error::SupportOutsideDomain(format!(
                        "support reach {reach} exceeds the projected band edge {}",
                        a.hypot(b)
                    )));
                }
            }
            return Ok(Self { surface, spec, r, geom: Geometry::Polar { x0, n0, e1, e2, psi0, rate } });
        }
        let z_ok = z0 - r > z1 && z0 + r < z2;
        let t_ok = if surface.is_periodic() { 2.0 * r < 1.0 } else { t0 - r > 0.0 && t0 + r < 1.0 };
        if !(z_ok && t_ok) {
            return Err(Error::SupportOutsideDomain(format!(
                "box of half width {r} around ({t0}, {z0}) leaves the parameter domain"
            )));
        }
        Ok(Self { surface, spec, r, geom: Geometry::Chart })
    }

    pub fn radius(&self) -> f64 {
        self.r
    }

    pub fn spec(&self) -> &AnsatzSpec {
        &self.spec
    }

    fn chart_coords(&self, theta: f64, z: f64) -> (f64, f64) {
        let mut dt = theta - self.spec.center.0;
        if self.surface.is_periodic() {
            dt -= dt.round();
        }
        (dt / self.r, (z - self.spec.center.1) / self.r)
    }

    /// Ambient gradient and Hessian of the extension `F(x) = f(P(x - x0) / r)`.
    fn ambient(&self, x: Vec3) -> (f64, Vec3, Matrix3<f64>) {
        let Geometry::Polar { x0, e1, e2, .. } = self.geom else { unreachable!() };
        let a = self.spec.amplitude;
        let d = x - x0;
        let j = self.spec.bump.eval(d.dot(&e1) / self.r, d.dot(&e2) / self.r);
        let g = a * (j.f_x * e1 + j.f_y * e2) / self.r;
        let hess = a
            * (j.f_xx * e1 * e1.transpose()
                + j.f_xy * (e1 * e2.transpose() + e2 * e1.transpose())
                + j.f_yy * e2 * e2.transpose())
            / (self.r * self.r);
        (a * j.f, g, hess)
    }

    /// Cartesian displacement, valid at the pole.
    pub fn value(&self, theta: f64, z: f64, t: f64) -> Vec3 {
        match self.geom {
            Geometry::Polar { x0, n0, .. } => {
                let (x, n) = if z - self.surface.band().0 < self.surface.guard() {
                    (x0, n0)
                } else {
                    let f = self.surface.frame_unchecked(theta, z);
                    (f.position, f.normal)
                };
                let (ff, g, _) = self.ambient(x);
                ff * n - t * (g - n * n.dot(&g))
            }
            Geometry::Chart => {
                let f = self.surface.frame_unchecked(theta, z);
                let j = self.jet_with_frame(&f, t);
                j.u[0] * f.normal + j.u[1] * f.e_theta + j.u[2] * f.e_z
            }
        }
    }

    fn jet_with_frame(&self, f: &FrameSample, t: f64) -> ComponentJet {
        match self.geom {
            Geometry::Chart => {
                let (xi, eta) = self.chart_coords(f.theta, f.z);
                let b = self.spec.bump.eval(xi, eta);
                let (a, r) = (self.spec.amplitude, self.r);
                let (at, az) = (f.a_theta, f.a_z);
                let (at_t, at_z) = (f.da_theta[0], f.da_theta[1]);
                let (az_t, az_z) = (f.da_z[0], f.da_z[1]);
                let vt = -a * b.f_x / (r * at);
                let vz = -a * b.f_y / (r * az);
                ComponentJet {
                    u: [a * b.f, t * vt, t * vz],
                    d_t: [0.0, vt, vz],
                    d_theta: [
                        a * b.f_x / r,
                        -a * t * (b.f_xx / (r * r * at) - b.f_x * at_t / (r * at * at)),
                        -a * t * (b.f_xy / (r * r * az) - b.f_y * az_t / (r * az * az)),
                    ],
                    d_z: [
                        a * b.f_y / r,
                        -a * t * (b.f_xy / (r * r * at) - b.f_x * at_z / (r * at * at)),
                        -a * t * (b.f_yy / (r * r * az) - b.f_y * az_z / (r * az * az)),
                    ],
                }
            }
            Geometry::Polar { .. } => {
                let (ff, g, hess) = self.ambient(f.position);
                let n = f.normal;
                let ng = n.dot(&g);
                let proj = Matrix3::identity() - n * n.transpose();
                let r_a = [f.a_theta * f.e_theta, f.a_z * f.e_z];
                let du: [Vec3; 3] = std::array::from_fn(|k| {
                    if k == 2 {
                        return -(g - n * ng);
                    }
                    let dn = f.dn[k];
                    let d_pg = proj * (hess * r_a[k]) - dn * ng - n * dn.dot(&g);
                    g.dot(&r_a[k]) * n + ff * dn - t * d_pg
                });
                let u = ff * n - t * (g - n * ng);
                ComponentJet::from_cartesian(f, u, du)
            }
        }
    }

    /// Curvilinear components with exact derivatives at a regular point.
    pub fn jet(&self, theta: f64, z: f64, t: f64) -> (ComponentJet, FrameSample) {
        let f = self.surface.frame_unchecked(theta, z);
        (self.jet_with_frame(&f, t), f)
    }

    /// Gradient matrix in the frame `(n, e_theta, e_z)`.
    pub fn gradient(&self, theta: f64, z: f64, t: f64) -> Result<Matrix3<f64>> {
        let (j, f) = self.jet(theta, z, t);
        curvilinear_gradient(&j, &f, t)
    }

    /// Parameter point with support coordinates `(x, y)` and the area factor
    /// `d(theta, z) / d(x, y)`.
    fn support_point(&self, x: f64, y: f64) -> Result<(f64, f64, f64)> {
        match self.geom {
            Geometry::Chart => {
                let mut theta = self.spec.center.0 + self.r * x;
                if self.surface.is_periodic() {
                    theta = theta.rem_euclid(1.0);
                }
                Ok((theta, self.spec.center.1 + self.r * y, self.r * self.r))
            }
            Geometry::Polar { x0, e1, e2, psi0, rate, .. } => {
                let target = Vector2::new(self.r * x, self.r * y);
                let q = target.norm();
                let mut theta = (wrap_pi(y.atan2(x) - psi0) / rate).rem_euclid(1.0);
                let (z1, z2) = self.surface.band();
                let proj = |th: f64, z: f64| {
                    let d = self.surface.position(th, z) - x0;
                    Vector2::new(d.dot(&e1), d.dot(&e2))
                };
                let (mut lo, mut hi) = (z1, z2);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if proj(theta, mid).norm() < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let mut z = 0.5 * (lo + hi);
                let jac = |th: f64, z: f64| {
                    let j = self.surface.jet(th, z);
                    Matrix2::new(j.r_t.dot(&e1), j.r_z.dot(&e1), j.r_t.dot(&e2), j.r_z.dot(&e2))
                };
                for _ in 0..4 {
                    let res = proj(theta, z) - target;
                    if res.norm() <= 1e-14 * self.r {
                        break;
                    }
                    let step = jac(theta, z).try_inverse().ok_or_else(|| Error::Breakdown("singular tangent-plane Jacobian".into()))? * res;
                    theta -= step[0];
                    z -= step[1];
                }
                let det = jac(theta, z).determinant().abs();
                if !(det > 0.0) || z <= z1 {
                    return Err(Error::NearSingularity { theta, z });
                }
                Ok((theta.rem_euclid(1.0), z, self.r * self.r / det))
            }
        }
    }

    /// Mid-surface quadrature over the support: `(theta, z, weight)` with the
    /// weight in `d theta d z`.
    pub fn support_quadrature(&self, order: usize, pieces: usize) -> Result<Vec<(f64, f64, f64)>> {
        let rule = composite(order, pieces, -1.0, 1.0)?;
        let pts: Vec<(f64, f64, f64)> = rule.iter().flat_map(|&(x, wx)| rule.iter().map(move |&(y, wy)| (x, y, wx * wy))).collect();
        pts.par_iter()
            .map(|&(x, y, w)| self.support_point(x, y).map(|(th, z, jac)| (th, z, w * jac)))
            .collect()
    }
}

/// Checks the support radius against the local mesh spacing.
fn check_resolution(mesh: &ShellMesh, ans: &Ansatz) -> Result<()> {
    let spacing_at = |nodes: &[f64], v: f64| {
        let j = nodes.partition_point(|&x| x <= v).clamp(1, nodes.len() - 1);
        nodes[j] - nodes[j - 1]
    };
    let (t0, z0) = ans.spec.center;
    let dz = spacing_at(mesh.z_nodes(), z0);
    let spacing = if ans.spec.polar { dz } else { dz.max(spacing_at(mesh.theta_nodes(), t0)) };
    if ans.r < 2.0 * spacing {
        return Err(Error::UnderResolved { radius: ans.r, spacing });
    }
    Ok(())
}

/// Nodal interpolant of the trial field on a mesh.
pub fn build_ansatz(spec: &AnsatzSpec, mesh: &ShellMesh) -> Result<DisplacementField> {
    if (spec.h - mesh.thickness()).abs() > 1e-12 * spec.h {
        return Err(Error::Precondition(format!("ansatz h {} differs from mesh h {}", spec.h, mesh.thickness())));
    }
    let ans = Ansatz::new(mesh.surface(), *spec)?;
    check_resolution(mesh, &ans)?;
    Ok(DisplacementField::interpolate(mesh, |n| ans.value(n.theta, n.z, n.t)))
}

/// Labels of the tabulated quantities, in the order of the scaling table.
pub const QUANTITY_NAMES: [&str; 14] = [
    "grad_11", "grad_22", "grad_23", "grad_32", "grad_33", "grad_12", "grad_13", "grad_21", "grad_31", "grad", "strain",
    "u_t", "u_theta", "u_z",
];

/// Exponents of `h` stated for each tabulated squared norm; the first
/// quantity vanishes identically.
pub const STATED_SLOPES: [Option<f64>; 14] = [
    None,
    Some(2.0),
    Some(2.0),
    Some(2.0),
    Some(2.0),
    Some(0.5),
    Some(0.5),
    Some(0.5),
    Some(0.5),
    Some(0.5),
    Some(2.0),
    Some(1.0),
    Some(2.0),
    Some(2.0),
];

const ENTRY: [(usize, usize); 9] = [(0, 0), (1, 1), (1, 2), (2, 1), (2, 2), (0, 1), (0, 2), (1, 0), (2, 0)];

/// Tensor Gauss-Legendre settings for the exact norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableQuadrature {
    pub order: usize,
    pub pieces: usize,
    pub t_order: usize,
}

impl Default for TableQuadrature {
    fn default() -> Self {
        Self { order: 6, pieces: 8, t_order: 4 }
    }
}

/// Squared norms of the trial field over the shell, divided by the support
/// area `r^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzNorms {
    pub h: f64,
    pub values: [f64; 14],
    /// `|first row of sym F1| / |F1|` over the support.
    pub first_row_residual: f64,
}

impl AnsatzNorms {
    pub fn get(&self, name: &str) -> Option<f64> {
        QUANTITY_NAMES.iter().position(|n| *n == name).map(|i| self.values[i])
    }

    /// `|e(u)|^2 / |grad u|^2`.
    pub fn quotient(&self) -> f64 {
        self.values[10] / self.values[9]
    }
}

/// Exact-derivative norms by quadrature over the support.
pub fn ansatz_norms(surface: &SurfacePatch, spec: &AnsatzSpec, quad: &TableQuadrature) -> Result<AnsatzNorms> {
    check_thickness(surface, spec.h)?;
    let ans = Ansatz::new(surface, *spec)?;
    let pts = ans.support_quadrature(quad.order, quad.pieces)?;
    let trule = gauss_legendre(quad.t_order)?;
    let half = 0.5 * spec.h;
    let partial: Vec<([f64; 16], f64)> = pts
        .par_iter()
        .map(|&(theta, z, w)| -> Result<([f64; 16], f64)> {
            let mut acc = [0.0; 16];
            let mut f1_norm = 0.0;
            for &(s, wt) in &trule {
                let t = half * s;
                let (j, f) = ans.jet(theta, z, t);
                let g = curvilinear_gradient(&j, &f, t)?;
                let dv = w * wt * half * f.a_theta * f.a_z * (1.0 + t * f.kappa_theta) * (1.0 + t * f.kappa_z);
                for (k, &(a, b)) in ENTRY.iter().enumerate() {
                    acc[k] += dv * g[(a, b)].powi(2);
                }
                acc[9] += dv * g.norm_squared();
                acc[10] += dv * sym(&g).norm_squared();
                for c in 0..3 {
                    acc[11 + c] += dv * j.u[c].powi(2);
                }
                let f1 = simplified_gradient(&j, &f, SimplifiedVariant::F1);
                let s1 = sym(&f1);
                acc[14] += dv * (s1[(0, 0)].powi(2) + s1[(0, 1)].powi(2) + s1[(0, 2)].powi(2));
                f1_norm += dv * f1.norm_squared();
            }
            Ok((acc, f1_norm))
        })
        .collect::<Result<_>>()?;
    let mut sums = [0.0; 16];
    let mut f1 = 0.0;
    for (a, n) in &partial {
        for k in 0..16 {
            sums[k] += a[k];
        }
        f1 += n;
    }
    let area = ans.r * ans.r;
    let mut values = [0.0; 14];
    for k in 0..14 {
        values[k] = sums[k] / area;
    }
    let first_row_residual = if f1 > 0.0 { (sums[14] / f1).sqrt() } else { 0.0 };
    Ok(AnsatzNorms { h: spec.h, values, first_row_residual })
}

/// Norms across an h list with per-quantity log-log fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<AnsatzNorms>,
    /// `None` for the vanishing quantity and where a value is not positive.
    pub fits: Vec<Option<ScalingFit>>,
    pub quotient_fit: ScalingFit,
}

impl ScalingTable {
    pub fn h(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.h).collect()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.values[k]).collect()
    }

    /// CSV with a header, one row per h and a final row of fitted slopes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "h,{}", QUANTITY_NAMES.join(","))?;
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{:e},{}", r.h, vals.join(","))?;
        }
        let slopes: Vec<String> =
            self.fits.iter().map(|f| f.as_ref().map_or_else(|| "nan".to_string(), |f| format!("{}", f.slope))).collect();
        writeln!(w, "slope,{}", slopes.join(","))?;
        Ok(())
    }
}

pub fn ansatz_scaling_table(
    surface: &SurfacePatch,
    template: &AnsatzSpec,
    h_list: &[f64],
    quad: &TableQuadrature,
) -> Result<ScalingTable> {
    if h_list.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: h_list.len() });
    }
    let rows: Vec<AnsatzNorms> =
        h_list.iter().map(|&h| ansatz_norms(surface, &template.with_h(h), quad)).collect::<Result<_>>()?;
    let fits = (0..14)
        .map(|k| {
            let col: Vec<f64> = rows.iter().map(|r| r.values[k]).collect();
            if STATED_SLOPES[k].is_some() && col.iter().all(|v| *v > 0.0) {
                fit_scaling_exponent(h_list, &col).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let q: Vec<f64> = rows.iter().map(|r| r.quotient()).collect();
    let quotient_fit = fit_scaling_exponent(h_list, &q)?;
    Ok(ScalingTable { rows, fits, quotient_fit })
}

/// `max(kappa_theta, kappa_z) <= c1 (2 r)^2` on the support.
pub fn curvature_smallness(surface: &SurfacePatch, spec: &AnsatzSpec, c1: f64) -> Result<ConditionReport> {
    let ans = Ansatz::new(surface, *spec)?;
    let pts = ans.support_quadrature(4, 4)?;
    let mut worst = (0.0f64, (f64::NAN, f64::NAN));
    for &(theta, z, _) in &pts {
        let f = surface.frame_unchecked(theta, z);
        let k = f.kappa_theta.max(f.kappa_z);
        if k > worst.0 || worst.1 .0.is_nan() {
            worst = (k, (theta, z));
        }
    }
    let bound = c1 * (2.0 * ans.r).powi(2);
    Ok(ConditionReport {
        condition: "support-curvature".into(),
        pass: worst.0 <= bound,
        worst_point: worst.1,
        measured: worst.0,
        bound,
        samples: pts.len(),
    })
}
