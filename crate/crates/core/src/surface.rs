//! Mid-surface patches given by a single principal-coordinate chart.
//!
//! A patch maps `(theta, z)` in `E = [0, 1] x [z1, z2]` to R^3. Catalog
//! surfaces are surfaces of revolution about the `y` axis with closed-form
//! derivatives; custom surfaces are arbitrary closures differentiated
//! numerically.
//!
//! Sign conventions: the unit normal satisfies `n_theta = kappa_theta r_theta`
//! and `n_z = kappa_z r_z`, so a sphere with the outward normal has positive
//! curvatures. This is the convention of the gradient matrix in
//! [`crate::operators::curvilinear_gradient`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default guard radius around coordinate singularities, in parameter units.
pub const DEFAULT_GUARD: f64 = 1e-6;
/// Default tensor-grid density for sup/inf estimates.
pub const DEFAULT_SAMPLE_DENSITY: usize = 128;

const FD_STEP_FIRST: f64 = 1e-4;
const FD_STEP_SECOND: f64 = 1e-4;
const FD_STEP_THIRD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    SphereCap,
    QuarticCap,
    CylinderStrip,
    CustomAnalytic,
}

impl FromStr for SurfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere-cap" => Ok(Self::SphereCap),
            "quartic-cap" => Ok(Self::QuarticCap),
            "cylinder-strip" => Ok(Self::CylinderStrip),
            "custom-analytic" => Ok(Self::CustomAnalytic),
            other => Err(Error::UnknownSurface(other.to_string())),
        }
    }
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::SphereCap => "sphere-cap",
            Self::QuarticCap => "quartic-cap",
            Self::CylinderStrip => "cylinder-strip",
            Self::CustomAnalytic => "custom-analytic",
        };
        f.write_str(s)
    }
}

/// A scalar or a list of scalars, as found in surface parameter maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    List(Vec<f64>),
}

pub type SurfaceParams = BTreeMap<String, ParamValue>;

fn scalar(params: &SurfaceParams, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(ParamValue::Scalar(v)) => Ok(*v),
        Some(ParamValue::List(_)) => Err(Error::InvalidParameter(format!("`{key}` must be a scalar"))),
    }
}

fn pair(params: &SurfaceParams, key: &str, default: (f64, f64)) -> Result<(f64, f64)> {
    match params.get(key) {
        None => Ok(default),
        Some(ParamValue::List(v)) if v.len() == 2 => Ok((v[0], v[1])),
        Some(_) => Err(Error::InvalidParameter(format!("`{key}` must be a two-element list"))),
    }
}

/// A point where both principal curvatures vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatPoint {
    pub theta: f64,
    pub z: f64,
    /// The point sits on a polar coordinate singularity (apex of a cap chart);
    /// `theta` is then meaningless.
    pub polar: bool,
    /// Chord-distance radius of the neighborhood in which quadratic growth is checked.
    pub neighborhood: f64,
}

/// Position and partial derivatives of the chart up to third order.
#[derive(Debug, Clone, Copy)]
pub struct Jet {
    pub r: Vec3,
    pub r_t: Vec3,
    pub r_z: Vec3,
    pub r_tt: Vec3,
    pub r_tz: Vec3,
    pub r_zz: Vec3,
    pub r_ttt: Vec3,
    pub r_ttz: Vec3,
    pub r_tzz: Vec3,
    pub r_zzz: Vec3,
}

/// Metric and curvature data at one point of the mid-surface.
///
/// Derivative pairs are ordered `[d/dtheta, d/dz]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub theta: f64,
    pub z: f64,
    pub position: Vec3,
    pub normal: Vec3,
    pub e_theta: Vec3,
    pub e_z: Vec3,
    pub a_theta: f64,
    pub a_z: f64,
    pub kappa_theta: f64,
    pub kappa_z: f64,
    /// Normalized mixed second-fundamental-form coefficient; zero in principal charts.
    pub mixed_curvature: f64,
    pub da_theta: [f64; 2],
    pub da_z: [f64; 2],
    pub dkappa_theta: [f64; 2],
    pub dkappa_z: [f64; 2],
    pub dn: [Vec3; 2],
    pub de_theta: [Vec3; 2],
    pub de_z: [Vec3; 2],
}

impl FrameSample {
    /// Gaussian curvature.
    pub fn gauss(&self) -> f64 {
        self.kappa_theta * self.kappa_z
    }
}

/// The two sides of the Codazzi-Gauss identity at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodazziTerms {
    /// d/dz (A_theta,z / A_z)
    pub dz_ratio_theta: f64,
    /// d/dtheta (A_z,theta / A_theta)
    pub dtheta_ratio_z: f64,
    /// A_z A_theta kappa_z kappa_theta
    pub gauss_term: f64,
}

impl CodazziTerms {
    pub fn metric_part(&self) -> f64 {
        self.dz_ratio_theta + self.dtheta_ratio_z
    }

    pub fn residual(&self) -> f64 {
        self.metric_part() + self.gauss_term
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Profile {
    Sphere { radius: f64 },
    Quartic { scale: f64 },
    Cylinder { radius: f64 },
}

impl Profile {
    /// `[rho, rho', rho'', rho''']` and `[y, y', y'', y''']` of the meridian.
    fn eval(&self, z: f64) -> ([f64; 4], [f64; 4]) {
        match *self {
            Profile::Sphere { radius } => {
                let (s, c) = (z / radius).sin_cos();
                (
                    [radius * s, c, -s / radius, -c / (radius * radius)],
                    [radius * (1.0 - c), s, c / radius, -s / (radius * radius)],
                )
            }
            Profile::Quartic { scale } => (
                [z, 1.0, 0.0, 0.0],
                [scale * z.powi(4), 4.0 * scale * z.powi(3), 12.0 * scale * z * z, 24.0 * scale * z],
            ),
            Profile::Cylinder { radius } => ([radius, 0.0, 0.0, 0.0], [z, 1.0, 0.0, 0.0]),
        }
    }
}

pub type ChartFn = Arc<dyn Fn(f64, f64) -> Vec3 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Revolution { profile: Profile, span: f64 },
    Custom(ChartFn),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Revolution { profile, span } => {
                f.debug_struct("Revolution").field("profile", profile).field("span", span).finish()
            }
            Shape::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Options for a custom chart.
#[derive(Debug, Clone)]
pub struct CustomOptions {
    pub band: (f64, f64),
    pub periodic: bool,
    /// `z = z1` is a pole of the chart.
    pub polar: bool,
    pub flat_points: Vec<FlatPoint>,
    /// +1 keeps `r_theta x r_z` as the normal, -1 flips it.
    pub orientation: f64,
}

/// A mid-surface given by one principal-coordinate chart over `E = [0,1] x [z1, z2]`.
#[derive(Debug, Clone)]
pub struct SurfacePatch {
    kind: SurfaceKind,
    shape: Shape,
    band: (f64, f64),
    periodic: bool,
    polar: bool,
    flat_points: Vec<FlatPoint>,
    guard: f64,
    orientation: f64,
}

/// Builds a catalog surface from a parameter map.
///
/// * `sphere-cap`: `radius` (1), `band` ([0, 1]) in meridian arclength from the pole.
/// * `quartic-cap`: surface of revolution of `y = scale * s^4`; `scale` (1),
///   `band` ([0, 1]) in the radial coordinate `s`. A band starting at 0 is a
///   polar cap containing the flat apex.
/// * `cylinder-strip`: `radius` (1), `length` (1), `span` (pi/2) angular width.
/// * `custom-analytic`: surface of revolution of the polynomial
///   `y = sum profile[k] s^k`, differentiated numerically; `band` ([0, 1]).
pub fn make_surface(kind: SurfaceKind, params: &SurfaceParams) -> Result<SurfacePatch> {
    let band_default = (0.0, 1.0);
    match kind {
        SurfaceKind::SphereCap => {
            let radius = scalar(params, "radius", 1.0)?;
            let band = pair(params, "band", band_default)?;
            if radius <= 0.0 {
                return Err(Error::InvalidParameter("radius must be positive".into()));
            }
            check_band(band)?;
            if band.1 >= PI * radius {
                return Err(Error::InvalidParameter("sphere band must stay below the opposite pole".into()));
            }
            Ok(SurfacePatch::revolution(kind, Profile::Sphere { radius }, band, Vec::new()))
        }
        SurfaceKind::QuarticCap => {
            let scale = scalar(params, "scale", 1.0)?;
            let band = pair(params, "band", band_default)?;
            if scale <= 0.0 {
                return Err(Error::InvalidParameter("scale must be positive".into()));
            }
            check_band(band)?;
            let flat = if band.0 == 0.0 {
                vec![FlatPoint { theta: 0.0, z: 0.0, polar: true, neighborhood: f64::INFINITY }]
            } else {
                Vec::new()
            };
            Ok(SurfacePatch::revolution(kind, Profile::Quartic { scale }, band, flat))
        }
        SurfaceKind::CylinderStrip => {
            let radius = scalar(params, "radius", 1.0)?;
            let length = scalar(params, "length", 1.0)?;
            let span = scalar(params, "span", PI / 2.0)?;
            if radius <= 0.0 || span <= 0.0 || span > 2.0 * PI {
                return Err(Error::InvalidParameter("cylinder needs radius > 0 and span in (0, 2pi]".into()));
            }
            check_band((0.0, length))?;
            let mut patch =
                SurfacePatch::revolution(kind, Profile::Cylinder { radius }, (0.0, length), Vec::new());
            patch.shape = Shape::Revolution { profile: Profile::Cylinder { radius }, span };
            patch.periodic = (span - 2.0 * PI).abs() < 1e-12;
            patch.polar = false;
            Ok(patch)
        }
        SurfaceKind::CustomAnalytic => {
            let coeffs = match params.get("profile") {
                Some(ParamValue::List(c)) if !c.is_empty() => c.clone(),
                _ => return Err(Error::InvalidParameter("custom-analytic needs a `profile` coefficient list".into())),
            };
            let band = pair(params, "band", band_default)?;
            check_band(band)?;
            let polar = band.0 == 0.0;
            let flat_apex = polar && coeffs.iter().take(4).skip(1).all(|c| c.abs() < 1e-14);
            let poly = coeffs.clone();
            let chart: ChartFn = Arc::new(move |theta: f64, s: f64| {
                let phi = 2.0 * PI * theta;
                let a = s.abs();
                let y = poly.iter().rev().fold(0.0, |acc, c| acc * a + c);
                Vec3::new(s * phi.cos(), y, s * phi.sin())
            });
            let flat_points = if flat_apex {
                vec![FlatPoint { theta: 0.0, z: 0.0, polar: true, neighborhood: f64::INFINITY }]
            } else {
                Vec::new()
            };
            Ok(SurfacePatch::custom(
                chart,
                CustomOptions { band, periodic: true, polar, flat_points, orientation: -1.0 },
            ))
        }
    }
}

fn check_band(band: (f64, f64)) -> Result<()> {
    if !(band.0 >= 0.0 && band.1 > band.0) || !(band.1 - band.0 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "z-extent [{}, {}] must satisfy 0 <= z1 < z2",
            band.0, band.1
        )));
    }
    Ok(())
}

impl SurfacePatch {
    fn revolution(kind: SurfaceKind, profile: Profile, band: (f64, f64), flat_points: Vec<FlatPoint>) -> Self {
        let polar = band.0 == 0.0 && !matches!(profile, Profile::Cylinder { .. });
        Self {
            kind,
            shape: Shape::Revolution { profile, span: 2.0 * PI },
            band,
            periodic: true,
            polar,
            flat_points,
            guard: DEFAULT_GUARD,
            orientation: -1.0,
        }
    }

    /// A custom chart differentiated with fourth-order central differences.
    pub fn custom(chart: ChartFn, options: CustomOptions) -> Self {
        Self {
            kind: SurfaceKind::CustomAnalytic,
            shape: Shape::Custom(chart),
            band: options.band,
            periodic: options.periodic,
            polar: options.polar,
            flat_points: options.flat_points,
            guard: DEFAULT_GUARD,
            orientation: options.orientation.signum(),
        }
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn kind(&self) -> SurfaceKind {
        self.kind
    }

    pub fn band(&self) -> (f64, f64) {
        self.band
    }

    pub fn z_extent(&self) -> f64 {
        self.band.1 - self.band.0
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn is_polar(&self) -> bool {
        self.polar
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    pub fn flat_points(&self) -> &[FlatPoint] {
        &self.flat_points
    }

    pub fn has_closed_form(&self) -> bool {
        matches!(self.shape, Shape::Revolution { .. })
    }

    /// Embedding of a parameter point; valid everywhere including the pole.
    pub fn position(&self, theta: f64, z: f64) -> Vec3 {
        match &self.shape {
            Shape::Revolution { profile, span } => {
                let (rho, y) = profile.eval(z);
                let (s, c) = (span * theta).sin_cos();
                Vec3::new(rho[0] * c, y[0], rho[0] * s)
            }
            Shape::Custom(f) => f(theta, z),
        }
    }

    /// Unit normal at the pole of a polar chart, where the chart normal is undefined.
    pub fn pole_normal(&self) -> Vec3 {
        // Limit of the normal along the theta = 0 meridian.
        let z = self.band.0 + self.guard.max(1e-9);
        let jet = self.jet(0.0, z);
        let n = jet.r_t.cross(&jet.r_z);
        let n = self.orientation * n / n.norm();
        // The pole normal is rotation invariant, so drop the radial part.
        let axis = self.pole_axis();
        let dir = axis * n.dot(&axis).signum();
        if dir.norm() > 0.0 {
            dir
        } else {
            n
        }
    }

    /// Unit tangent basis at the pole of a polar chart.
    pub fn pole_tangents(&self) -> (Vec3, Vec3) {
        let n = self.pole_normal();
        let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        let e1 = (seed - n * n.dot(&seed)).normalize();
        let e2 = n.cross(&e1);
        (e1, e2)
    }

    fn pole_axis(&self) -> Vec3 {
        match &self.shape {
            Shape::Revolution { .. } => Vec3::y(),
            Shape::Custom(_) => {
                // Average of two opposite chart normals near the pole.
                let z = self.band.0 + 1e-3 * self.z_extent();
                let a = self.jet(0.0, z);
                let b = self.jet(0.5, z);
                let na = a.r_t.cross(&a.r_z).normalize();
                let nb = b.r_t.cross(&b.r_z).normalize();
                (na + nb).normalize()
            }
        }
    }

    fn check_point(&self, theta: f64, z: f64) -> Result<f64> {
        let tol = 1e-12;
        let theta = if self.periodic {
            theta.rem_euclid(1.0)
        } else if (-tol..=1.0 + tol).contains(&theta) {
            theta
        } else {
            return Err(Error::OutsideDomain { theta, z });
        };
        if !(z >= self.band.0 - tol && z <= self.band.1 + tol) {
            return Err(Error::OutsideDomain { theta, z });
        }
        if self.polar && z - self.band.0 < self.guard {
            return Err(Error::NearSingularity { theta, z });
        }
        Ok(theta)
    }

    /// Chart derivatives up to third order, without domain checks.
    pub fn jet(&self, theta: f64, z: f64) -> Jet {
        match &self.shape {
            Shape::Revolution { profile, span } => revolution_jet(profile, *span, theta, z),
            Shape::Custom(f) => fd_jet(f.as_ref(), theta, z),
        }
    }

    /// Metric and curvature data at `(theta, z)`.
    pub fn eval_frame(&self, theta: f64, z: f64) -> Result<FrameSample> {
        let theta = self.check_point(theta, z)?;
        Ok(self.frame_unchecked(theta, z))
    }

    /// Frame evaluation without domain checks (the caller guarantees a regular point).
    pub fn frame_unchecked(&self, theta: f64, z: f64) -> FrameSample {
        frame_from_jet(&self.jet(theta, z), self.orientation, theta, z)
    }

    /// Codazzi-Gauss terms from the chart jet.
    pub fn codazzi_terms(&self, theta: f64, z: f64) -> Result<CodazziTerms> {
        let theta = self.check_point(theta, z)?;
        Ok(codazzi_from_jet(&self.jet(theta, z), self.orientation))
    }

    /// `d_z(A_theta,z / A_z) + d_theta(A_z,theta / A_theta) + A_z A_theta kappa_z kappa_theta`.
    pub fn codazzi_gauss_residual(&self, theta: f64, z: f64) -> Result<f64> {
        Ok(self.codazzi_terms(theta, z)?.residual())
    }

    /// The same residual with the outer derivatives taken by fourth-order
    /// central differences of the frame data at the given step.
    pub fn codazzi_gauss_residual_fd(&self, theta: f64, z: f64, step: f64) -> Result<f64> {
        let theta = self.check_point(theta, z)?;
        let ratio_theta = |zz: f64| {
            let f = self.frame_unchecked(theta, zz);
            f.da_theta[1] / f.a_z
        };
        let ratio_z = |tt: f64| {
            let f = self.frame_unchecked(tt, z);
            f.da_z[0] / f.a_theta
        };
        let f = self.frame_unchecked(theta, z);
        Ok(d1(ratio_theta, z, step) + d1(ratio_z, theta, step) + f.a_z * f.a_theta * f.gauss())
    }

    /// Distance in parameter space from a flat point; for a polar flat point
    /// this is the radial coordinate offset.
    pub fn param_distance(&self, theta: f64, z: f64, center: (f64, f64), polar_center: bool) -> f64 {
        if polar_center {
            return (z - center.1).abs();
        }
        let mut dt = theta - center.0;
        if self.periodic {
            dt -= dt.round();
        }
        (dt * dt + (z - center.1).powi(2)).sqrt()
    }

    /// Embedded position of a flat point.
    pub fn flat_point_position(&self, fp: &FlatPoint) -> Vec3 {
        self.position(fp.theta, fp.z)
    }

    /// Largest principal curvature magnitude over a sample grid of the given density.
    pub fn max_curvature(&self, density: usize) -> f64 {
        let (ts, zs) = self.sample_axes(density);
        let mut kmax: f64 = 0.0;
        for &t in &ts {
            for &z in &zs {
                let f = self.frame_unchecked(t, z);
                kmax = kmax.max(f.kappa_theta.abs()).max(f.kappa_z.abs());
            }
        }
        kmax
    }

    /// Nested tensor-grid sample axes: a larger density always contains the
    /// points of a smaller one.
    pub fn sample_axes(&self, density: usize) -> (Vec<f64>, Vec<f64>) {
        let unit = nested_unit_points(density);
        let ts: Vec<f64> = if self.periodic {
            unit.iter().copied().filter(|&u| u < 1.0).collect()
        } else {
            unit.clone()
        };
        let z_lo = if self.polar { self.band.0 + self.guard.max(1e-4 * self.z_extent()) } else { self.band.0 };
        let zs = unit.iter().map(|u| z_lo + u * (self.band.1 - z_lo)).collect();
        (ts, zs)
    }
}

/// First `n` points of the sequence 0, 1, 1/2, 1/4, 3/4, 1/8, ... (van der Corput order).
fn nested_unit_points(n: usize) -> Vec<f64> {
    let mut pts = Vec::with_capacity(n);
    if n > 0 {
        pts.push(0.0);
    }
    if n > 1 {
        pts.push(1.0);
    }
    let mut k: u32 = 1;
    while pts.len() < n {
        let mut x = 0.0;
        let mut denom = 0.5;
        let mut i = k;
        while i > 0 {
            if i & 1 == 1 {
                x += denom;
            }
            denom *= 0.5;
            i >>= 1;
        }
        pts.push(x);
        k += 1;
    }
    pts
}

fn revolution_jet(profile: &Profile, span: f64, theta: f64, z: f64) -> Jet {
    let (rho, y) = profile.eval(z);
    let (s, c) = (span * theta).sin_cos();
    let w = span;
    let w2 = w * w;
    Jet {
        r: Vec3::new(rho[0] * c, y[0], rho[0] * s),
        r_t: w * Vec3::new(-rho[0] * s, 0.0, rho[0] * c),
        r_z: Vec3::new(rho[1] * c, y[1], rho[1] * s),
        r_tt: w2 * Vec3::new(-rho[0] * c, 0.0, -rho[0] * s),
        r_tz: w * Vec3::new(-rho[1] * s, 0.0, rho[1] * c),
        r_zz: Vec3::new(rho[2] * c, y[2], rho[2] * s),
        r_ttt: w2 * w * Vec3::new(rho[0] * s, 0.0, -rho[0] * c),
        r_ttz: w2 * Vec3::new(-rho[1] * c, 0.0, -rho[1] * s),
        r_tzz: w * Vec3::new(-rho[2] * s, 0.0, rho[2] * c),
        r_zzz: Vec3::new(rho[3] * c, y[3], rho[3] * s),
    }
}

fn d1<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

fn d1v<F: Fn(f64) -> Vec3>(f: F, x: f64, h: f64) -> Vec3 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

fn d2v<F: Fn(f64) -> Vec3>(f: F, x: f64, h: f64) -> Vec3 {
    (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
}

fn d3v<F: Fn(f64) -> Vec3>(f: F, x: f64, h: f64) -> Vec3 {
    (-f(x + 3.0 * h) + 8.0 * f(x + 2.0 * h) - 13.0 * f(x + h) + 13.0 * f(x - h) - 8.0 * f(x - 2.0 * h)
        + f(x - 3.0 * h))
        / (8.0 * h * h * h)
}

fn fd_jet(f: &(dyn Fn(f64, f64) -> Vec3 + Send + Sync), t: f64, z: f64) -> Jet {
    let (h1, h2, h3) = (FD_STEP_FIRST, FD_STEP_SECOND, FD_STEP_THIRD);
    Jet {
        r: f(t, z),
        r_t: d1v(|x| f(x, z), t, h1),
        r_z: d1v(|x| f(t, x), z, h1),
        r_tt: d2v(|x| f(x, z), t, h2),
        r_tz: d1v(|x| d1v(|y| f(x, y), z, h2), t, h2),
        r_zz: d2v(|x| f(t, x), z, h2),
        r_ttt: d3v(|x| f(x, z), t, h3),
        r_ttz: d2v(|x| d1v(|y| f(x, y), z, h3), t, h3),
        r_tzz: d1v(|x| d2v(|y| f(x, y), z, h3), t, h3),
        r_zzz: d3v(|x| f(t, x), z, h3),
    }
}

fn frame_from_jet(j: &Jet, orientation: f64, theta: f64, z: f64) -> FrameSample {
    let a_t = j.r_t.norm();
    let a_z = j.r_z.norm();
    let cross = j.r_t.cross(&j.r_z);
    let n = orientation * cross / cross.norm();
    let e_t = j.r_t / a_t;
    let e_z = j.r_z / a_z;

    let (ee, ff, gg) = (a_t * a_t, j.r_t.dot(&j.r_z), a_z * a_z);
    let (l, m, nn) = (n.dot(&j.r_tt), n.dot(&j.r_tz), n.dot(&j.r_zz));
    let det = ee * gg - ff * ff;
    let n_t = ((m * ff - l * gg) * j.r_t + (l * ff - m * ee) * j.r_z) / det;
    let n_z = ((nn * ff - m * gg) * j.r_t + (m * ff - nn * ee) * j.r_z) / det;

    let k_t = -l / ee;
    let k_z = -nn / gg;

    let da_t = [j.r_t.dot(&j.r_tt) / a_t, j.r_t.dot(&j.r_tz) / a_t];
    let da_z = [j.r_z.dot(&j.r_tz) / a_z, j.r_z.dot(&j.r_zz) / a_z];

    let l_t = n_t.dot(&j.r_tt) + n.dot(&j.r_ttt);
    let l_z = n_z.dot(&j.r_tt) + n.dot(&j.r_ttz);
    let e_dt = 2.0 * j.r_t.dot(&j.r_tt);
    let e_dz = 2.0 * j.r_t.dot(&j.r_tz);
    let nn_t = n_t.dot(&j.r_zz) + n.dot(&j.r_tzz);
    let nn_z = n_z.dot(&j.r_zz) + n.dot(&j.r_zzz);
    let g_dt = 2.0 * j.r_z.dot(&j.r_tz);
    let g_dz = 2.0 * j.r_z.dot(&j.r_zz);

    let dk_t = [-(l_t * ee - l * e_dt) / (ee * ee), -(l_z * ee - l * e_dz) / (ee * ee)];
    let dk_z = [-(nn_t * gg - nn * g_dt) / (gg * gg), -(nn_z * gg - nn * g_dz) / (gg * gg)];

    FrameSample {
        theta,
        z,
        position: j.r,
        normal: n,
        e_theta: e_t,
        e_z,
        a_theta: a_t,
        a_z,
        kappa_theta: k_t,
        kappa_z: k_z,
        mixed_curvature: m / (a_t * a_z),
        da_theta: da_t,
        da_z,
        dkappa_theta: dk_t,
        dkappa_z: dk_z,
        dn: [n_t, n_z],
        de_theta: [(j.r_tt - da_t[0] * e_t) / a_t, (j.r_tz - da_t[1] * e_t) / a_t],
        de_z: [(j.r_tz - da_z[0] * e_z) / a_z, (j.r_zz - da_z[1] * e_z) / a_z],
    }
}

fn codazzi_from_jet(j: &Jet, orientation: f64) -> CodazziTerms {
    let f = frame_from_jet(j, orientation, 0.0, 0.0);
    let (a_t, a_z) = (f.a_theta, f.a_z);
    let (a_t_t, a_t_z) = (f.da_theta[0], f.da_theta[1]);
    let (a_z_t, a_z_z) = (f.da_z[0], f.da_z[1]);
    let rtz2 = j.r_tz.norm_squared();
    let dz_a_t_z = (rtz2 + j.r_t.dot(&j.r_tzz) - a_t_z * a_t_z) / a_t;
    let dt_a_z_t = (rtz2 + j.r_z.dot(&j.r_ttz) - a_z_t * a_z_t) / a_z;
    CodazziTerms {
        dz_ratio_theta: dz_a_t_z / a_z - a_t_z * a_z_z / (a_z * a_z),
        dtheta_ratio_z: dt_a_z_t / a_t - a_z_t * a_t_t / (a_t * a_t),
        gauss_term: a_z * a_t * f.kappa_z * f.kappa_theta,
    }
}

/// Sup/inf bounds of the mid-surface over a sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShellParams {
    pub a_min: f64,
    pub a_max: f64,
    pub b: f64,
    pub k: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl ShellParams {
    /// `0 < a <= A`, `0 < l <= L`, `c1 >= 1`, `c2 >= 0`.
    pub fn is_valid(&self) -> bool {
        self.a_min > 0.0
            && self.a_min <= self.a_max
            && self.a_max.is_finite()
            && self.l_min > 0.0
            && self.l_min <= self.l_max
            && self.c1 >= 1.0
            && self.c2 >= 0.0
    }
}

/// Outcome of a sampled hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub pass: bool,
    pub worst_point: (f64, f64),
    pub measured: f64,
    pub bound: f64,
    pub samples: usize,
}

/// Witness of the quadratic-growth sandwich: the smallest `c1` with
/// `d^2 / c1 <= kappa <= c1 d^2` at every sample, and where it is attained.
fn growth_witness(surface: &SurfacePatch, density: usize) -> Option<(f64, (f64, f64), usize)> {
    if surface.flat_points.is_empty() {
        return None;
    }
    let (ts, zs) = surface.sample_axes(density);
    let mut worst = (1.0, (f64::NAN, f64::NAN));
    let mut count = 0;
    for fp in &surface.flat_points {
        let x0 = surface.flat_point_position(fp);
        for &t in &ts {
            for &z in &zs {
                let f = surface.frame_unchecked(t, z);
                let d2 = (f.position - x0).norm_squared();
                if d2 == 0.0 || d2.sqrt() > fp.neighborhood {
                    continue;
                }
                count += 1;
                for k in [f.kappa_theta, f.kappa_z] {
                    let c = if k <= 0.0 { f64::INFINITY } else { (k / d2).max(d2 / k) };
                    if c > worst.0 {
                        worst = (c, (t, z));
                    }
                }
            }
        }
    }
    Some((worst.0, worst.1, count))
}

/// Gradient magnitude of `kappa_theta / kappa_z` in parameter coordinates.
fn ratio_gradient(f: &FrameSample) -> f64 {
    let kz2 = f.kappa_z * f.kappa_z;
    let gt = (f.dkappa_theta[0] * f.kappa_z - f.kappa_theta * f.dkappa_z[0]) / kz2;
    let gz = (f.dkappa_theta[1] * f.kappa_z - f.kappa_theta * f.dkappa_z[1]) / kz2;
    gt.hypot(gz)
}

/// Estimates the mid-surface parameters on a nested sample grid.
pub fn compute_shell_params(surface: &SurfacePatch, sample_density: usize) -> Result<ShellParams> {
    if sample_density < 16 {
        return Err(Error::Precondition(format!("sample density {sample_density} < 16")));
    }
    let (ts, zs) = surface.sample_axes(sample_density);
    let mut p = ShellParams {
        a_min: f64::INFINITY,
        a_max: 0.0,
        b: 0.0,
        k: 0.0,
        l_min: surface.z_extent(),
        l_max: surface.z_extent(),
        c1: 1.0,
        c2: 0.0,
    };
    for &t in &ts {
        for &z in &zs {
            let f = surface.frame_unchecked(t, z);
            p.a_max = p.a_max.max(f.a_theta + f.a_z);
            p.a_min = p.a_min.min(f.a_theta.min(f.a_z));
            let grad = |g: [f64; 2]| g[0].hypot(g[1]);
            p.b = p.b.max(grad(f.da_theta) + grad(f.da_z));
            p.k = p
                .k
                .max(f.kappa_theta.abs())
                .max(f.kappa_z.abs())
                .max(grad(f.dkappa_theta))
                .max(grad(f.dkappa_z));
            if f.kappa_z > 0.0 {
                let g = ratio_gradient(&f);
                if g.is_finite() {
                    p.c2 = p.c2.max(g);
                }
            }
        }
    }
    if let Some((c1, _, _)) = growth_witness(surface, sample_density) {
        p.c1 = c1;
    }
    Ok(p)
}

/// Checks `(1/c1) |x - x_i|^2 <= kappa_theta, kappa_z <= c1 |x - x_i|^2` on the
/// sample grid, with chord distance to each flat point.
pub fn check_flat_point_growth(surface: &SurfacePatch, c1: f64, sample_density: usize) -> Result<ConditionReport> {
    let (witness, worst, samples) = growth_witness(surface, sample_density).ok_or(Error::NoFlatPoints)?;
    Ok(ConditionReport {
        condition: "flat-point-growth".into(),
        pass: witness <= c1,
        worst_point: worst,
        measured: witness,
        bound: c1,
        samples,
    })
}

/// Checks `|grad(kappa_theta / kappa_z)| <= c2` on the sample grid. At flat
/// points the ratio is extended by its limit, which must agree across
/// approach directions.
pub fn check_curvature_ratio(surface: &SurfacePatch, c2: f64, sample_density: usize) -> Result<ConditionReport> {
    let (ts, zs) = surface.sample_axes(sample_density);
    let flat: Vec<Vec3> = surface.flat_points.iter().map(|fp| surface.flat_point_position(fp)).collect();
    let mut worst = (0.0, (f64::NAN, f64::NAN));
    let mut samples = 0;
    for &t in &ts {
        for &z in &zs {
            let f = surface.frame_unchecked(t, z);
            if flat.iter().any(|x| (f.position - x).norm() < 1e-9) {
                continue;
            }
            if f.kappa_z <= 0.0 {
                return Err(Error::Precondition(format!("kappa_z = {} <= 0 at ({t}, {z})", f.kappa_z)));
            }
            samples += 1;
            let g = ratio_gradient(&f);
            let g = if g.is_finite() { g } else { f64::INFINITY };
            if g > worst.0 || samples == 1 {
                worst = (g, (t, z));
            }
        }
    }
    for fp in &surface.flat_points {
        let spread = ratio_limit_spread(surface, fp);
        if spread > 1e-2 {
            return Err(Error::RatioLimit { theta: fp.theta, z: fp.z, spread });
        }
    }
    Ok(ConditionReport {
        condition: "curvature-ratio".into(),
        pass: worst.0 <= c2,
        worst_point: worst.1,
        measured: worst.0,
        bound: c2,
        samples,
    })
}

/// Relative spread of `kappa_theta / kappa_z` over approach directions at a
/// small distance from a flat point.
fn ratio_limit_spread(surface: &SurfacePatch, fp: &FlatPoint) -> f64 {
    let delta = 1e-3 * surface.z_extent();
    let mut values = Vec::new();
    for k in 0..16 {
        let ang = 2.0 * PI * k as f64 / 16.0;
        let (t, z) = if fp.polar {
            (k as f64 / 16.0, fp.z + delta)
        } else {
            (fp.theta + delta * ang.cos(), fp.z + delta * ang.sin())
        };
        if let Ok(f) = surface.eval_frame(t, z) {
            values.push(f.kappa_theta / f.kappa_z);
        }
    }
    if values.is_empty() {
        return 0.0;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean.abs().max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(entries: &[(&str, ParamValue)]) -> SurfaceParams {
        entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn sphere_band() -> SurfacePatch {
        make_surface(
            SurfaceKind::SphereCap,
            &params(&[("radius", ParamValue::Scalar(1.0)), ("band", ParamValue::List(vec![0.2, 0.8]))]),
        )
        .unwrap()
    }

    fn quartic() -> SurfacePatch {
        make_surface(SurfaceKind::QuarticCap, &params(&[("scale", ParamValue::Scalar(1.0))])).unwrap()
    }

    // Closed forms for y = s^4 rotated about the axis.
    fn quartic_meridional(s: f64) -> f64 {
        12.0 * s * s / (1.0 + 16.0 * s.powi(6)).powf(1.5)
    }

    fn quartic_circumferential(s: f64) -> f64 {
        4.0 * s * s / (1.0 + 16.0 * s.powi(6)).sqrt()
    }

    #[test]
    fn sphere_curvatures_are_unit() {
        let s = sphere_band();
        for &(t, z) in &[(0.1, 0.3), (0.7, 0.55), (0.99, 0.8)] {
            let f = s.eval_frame(t, z).unwrap();
            assert_relative_eq!(f.kappa_theta, 1.0, epsilon = 1e-13);
            assert_relative_eq!(f.kappa_z, 1.0, epsilon = 1e-13);
            assert_relative_eq!(f.a_z, 1.0, epsilon = 1e-13);
            assert_relative_eq!(f.normal.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quartic_curvatures_match_closed_form() {
        let q = quartic();
        let f = q.eval_frame(0.3, 0.1).unwrap();
        assert_relative_eq!(f.kappa_z, 12.0 * 0.01 / (1.0 + 16e-6f64).powf(1.5), max_relative = 1e-12);
        // 0.1199995 quoted as an approximation; the closed form gives 0.1199971
        assert_relative_eq!(f.kappa_z, 0.1199995, epsilon = 5e-6);
        assert_relative_eq!(f.kappa_theta, 0.04, epsilon = 1e-6);
        for s in [0.05, 0.3, 0.77] {
            let f = q.eval_frame(0.1, s).unwrap();
            assert_relative_eq!(f.kappa_z, quartic_meridional(s), max_relative = 1e-12);
            assert_relative_eq!(f.kappa_theta, quartic_circumferential(s), max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_extent_band_rejected() {
        let r = make_surface(SurfaceKind::SphereCap, &params(&[("band", ParamValue::List(vec![0.5, 0.5]))]));
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        assert!(matches!("torus".parse::<SurfaceKind>(), Err(Error::UnknownSurface(_))));
    }

    #[test]
    fn frame_errors() {
        let q = quartic();
        assert!(matches!(q.eval_frame(0.2, 1.5), Err(Error::OutsideDomain { .. })));
        assert!(matches!(q.eval_frame(0.2, 1e-8), Err(Error::NearSingularity { .. })));
        let cyl = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        assert!(matches!(cyl.eval_frame(1.2, 0.5), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn frame_evaluation_is_deterministic() {
        let q = quartic();
        assert_eq!(q.eval_frame(0.37, 0.41).unwrap(), q.eval_frame(0.37, 0.41).unwrap());
    }

    #[test]
    fn principal_chart_has_no_mixed_term() {
        for s in [sphere_band(), quartic()] {
            let f = s.eval_frame(0.21, 0.6).unwrap();
            assert!(f.mixed_curvature.abs() < 1e-14);
        }
    }

    #[test]
    fn curvature_matches_finite_differences_of_embedding() {
        // Normal curvature along each coordinate line from the second derivative of r.
        let q = quartic();
        let (t, z) = (0.13, 0.45);
        let h = 1e-4;
        let f = q.eval_frame(t, z).unwrap();
        let r = |a: f64, b: f64| q.position(a, b);
        let r_tt = (r(t + h, z) - 2.0 * r(t, z) + r(t - h, z)) / (h * h);
        let r_zz = (r(t, z + h) - 2.0 * r(t, z) + r(t, z - h)) / (h * h);
        let k_t = -f.normal.dot(&r_tt) / (f.a_theta * f.a_theta);
        let k_z = -f.normal.dot(&r_zz) / (f.a_z * f.a_z);
        assert_relative_eq!(k_t, f.kappa_theta, max_relative = 1e-5);
        assert_relative_eq!(k_z, f.kappa_z, max_relative = 1e-5);
    }

    #[test]
    fn codazzi_gauss_vanishes_on_catalog() {
        let cyl = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        for s in [sphere_band(), quartic(), cyl] {
            for &(t, z) in &[(0.2, 0.3), (0.6, 0.5), (0.9, 0.7)] {
                assert!(s.codazzi_gauss_residual(t, z).unwrap().abs() < 1e-8);
                assert!(s.codazzi_gauss_residual_fd(t, z, 1e-4).unwrap().abs() < 1e-5);
            }
        }
    }

    #[test]
    fn corrupted_curvature_breaks_codazzi() {
        let q = quartic();
        let terms = q.codazzi_terms(0.4, 0.3).unwrap();
        let corrupted = terms.metric_part() + 2.0 * terms.gauss_term;
        assert!(terms.residual().abs() < 1e-10);
        assert!(corrupted.abs() > 0.1 * terms.gauss_term.abs());
    }

    #[test]
    fn custom_chart_matches_catalog() {
        let poly = make_surface(
            SurfaceKind::CustomAnalytic,
            &params(&[("profile", ParamValue::List(vec![0.0, 0.0, 0.0, 0.0, 1.0]))]),
        )
        .unwrap();
        assert_eq!(poly.flat_points().len(), 1);
        let q = quartic();
        for &(t, z) in &[(0.1, 0.2), (0.45, 0.6)] {
            let a = poly.eval_frame(t, z).unwrap();
            let b = q.eval_frame(t, z).unwrap();
            assert_relative_eq!(a.kappa_theta, b.kappa_theta, max_relative = 1e-5);
            assert_relative_eq!(a.kappa_z, b.kappa_z, max_relative = 1e-5);
            assert_relative_eq!(a.dkappa_z[1], b.dkappa_z[1], max_relative = 1e-3);
            assert!(poly.codazzi_gauss_residual(t, z).unwrap().abs() < 1e-3);
        }
    }

    #[test]
    fn shell_params_sphere_band() {
        let p = compute_shell_params(&sphere_band(), 64).unwrap();
        assert_relative_eq!(p.k, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.l_max, 0.6, epsilon = 1e-12);
        assert!(p.is_valid());
    }

    #[test]
    fn shell_params_cylinder_curvature() {
        let cyl = make_surface(SurfaceKind::CylinderStrip, &params(&[("radius", ParamValue::Scalar(2.5))])).unwrap();
        let p = compute_shell_params(&cyl, 32).unwrap();
        assert_relative_eq!(p.k, 0.4, epsilon = 1e-12);
    }

    #[test]
    fn shell_params_are_monotone_in_density() {
        let q = quartic();
        let coarse = compute_shell_params(&q, 16).unwrap();
        let fine = compute_shell_params(&q, 40).unwrap();
        assert!(fine.a_max >= coarse.a_max && fine.b >= coarse.b && fine.k >= coarse.k);
        assert!(fine.a_min <= coarse.a_min && fine.l_min <= coarse.l_min);
        assert!(compute_shell_params(&q, 8).is_err());
    }

    #[test]
    fn growth_check_on_quartic() {
        let q = quartic();
        let pass = check_flat_point_growth(&q, 20.0, 64).unwrap();
        assert!(pass.pass, "{pass:?}");
        let fail = check_flat_point_growth(&q, 1.0, 64).unwrap();
        assert!(!fail.pass);
        // worst point near the apex, where kappa_z / s^2 -> 12
        assert!(fail.worst_point.1 < 0.2, "{fail:?}");
        let witness = pass.measured;
        assert!(check_flat_point_growth(&q, witness, 64).unwrap().pass);
        assert!(!check_flat_point_growth(&q, 0.49 * witness, 64).unwrap().pass);
        assert!(matches!(check_flat_point_growth(&sphere_band(), 5.0, 64), Err(Error::NoFlatPoints)));
    }

    #[test]
    fn ratio_check() {
        let r = check_curvature_ratio(&sphere_band(), 0.01, 32).unwrap();
        assert!(r.pass && r.measured < 1e-10);
        let q = check_curvature_ratio(&quartic(), 100.0, 64).unwrap();
        assert!(q.pass, "{q:?}");
        assert!(q.measured > 0.0);
    }

    #[test]
    fn ratio_check_fails_on_unbounded_gradient() {
        // y = s^4 + s^4.5: kappa_theta / kappa_z has an s^(-1/2) gradient at the apex.
        let chart: ChartFn = Arc::new(|theta: f64, s: f64| {
            let phi = 2.0 * PI * theta;
            let a = s.abs();
            Vec3::new(s * phi.cos(), a.powi(4) + a.powf(4.5), s * phi.sin())
        });
        let surf = SurfacePatch::custom(
            chart,
            CustomOptions {
                band: (0.0, 1.0),
                periodic: true,
                polar: true,
                flat_points: vec![FlatPoint { theta: 0.0, z: 0.0, polar: true, neighborhood: f64::INFINITY }],
                orientation: -1.0,
            },
        );
        let report = check_curvature_ratio(&surf, 1.0, 64).unwrap();
        assert!(!report.pass, "{report:?}");
    }

    #[test]
    fn nested_points_are_nested() {
        let a = nested_unit_points(9);
        let b = nested_unit_points(20);
        assert_eq!(&b[..9], &a[..]);
        assert_eq!(a, vec![0.0, 1.0, 0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875]);
    }
}
