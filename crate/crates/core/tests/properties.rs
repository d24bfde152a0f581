use std::sync::OnceLock;

use korn_shell::analysis::{fit_scaling_exponent, localization_ratio};
use korn_shell::ansatz::{ansatz_norms, AnsatzSpec, TableQuadrature};
use korn_shell::buckling::{lambda_cl, ElasticTensor, StressField};
use korn_shell::mesh::{build_shell_mesh, tag_dirichlet, DofMap, ShellMesh};
use korn_shell::operators::{assemble_forms, DisplacementField, FormId, FormPencil};
use korn_shell::solver::{rayleigh, SolverOptions};
use korn_shell::surface::{
    check_flat_point_growth, make_surface, ParamValue, SurfaceKind, SurfaceParams, SurfacePatch, Vec3,
};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn params(pairs: &[(&str, ParamValue)]) -> SurfaceParams {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn shallow_quartic() -> SurfacePatch {
    make_surface(
        SurfaceKind::QuarticCap,
        &params(&[("scale", ParamValue::Scalar(0.1)), ("band", ParamValue::List(vec![0.0, 2.0]))]),
    )
    .unwrap()
}

struct Fixture {
    mesh: ShellMesh,
    dofs: DofMap,
    pencil: FormPencil,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mesh = build_shell_mesh(&shallow_quartic(), 0.1, (8, 8, 2)).unwrap();
        let dofs = tag_dirichlet(&mesh);
        let pencil = assemble_forms(&mesh, &dofs).unwrap();
        Fixture { mesh, dofs, pencil }
    })
}

/// Smooth polynomial field in Cartesian coordinates.
fn poly_field(mesh: &ShellMesh, c: &[f64; 9]) -> DisplacementField {
    DisplacementField::interpolate(mesh, |n| {
        let x = n.x;
        Vec3::new(
            c[0] + c[1] * x.y + c[2] * x.z * x.x,
            c[3] * x.x + c[4] * x.z * x.z + c[5] * x.y * x.y,
            c[6] * x.y * x.x + c[7] + c[8] * x.z,
        )
    })
}

fn coeffs() -> impl Strategy<Value = [f64; 9]> {
    prop::array::uniform9(-1.0..1.0f64).prop_filter("nonzero", |c| c.iter().any(|v| v.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn codazzi_gauss_vanishes_on_catalog(
        radius in 0.5..3.0f64,
        scale in 0.05..2.0f64,
        theta in 0.0..1.0f64,
        u in 0.02..0.98f64,
    ) {
        let sphere = make_surface(SurfaceKind::SphereCap, &params(&[("radius", ParamValue::Scalar(radius))])).unwrap();
        let quartic = make_surface(SurfaceKind::QuarticCap, &params(&[("scale", ParamValue::Scalar(scale))])).unwrap();
        let cyl = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        for s in [&sphere, &quartic] {
            let (z1, z2) = s.band();
            let r = s.codazzi_gauss_residual(theta, z1 + u * (z2 - z1)).unwrap();
            prop_assert!(r.abs() < 1e-8, "{:?}: {r}", s.kind());
        }
        let r = cyl.codazzi_gauss_residual(0.02 + 0.96 * theta, u).unwrap();
        prop_assert!(r.abs() < 1e-8);
    }

    #[test]
    fn curvatures_are_nonnegative_on_quartic(scale in 0.05..2.0f64, theta in 0.0..1.0f64, z in 0.01..1.0f64) {
        let q = make_surface(SurfaceKind::QuarticCap, &params(&[("scale", ParamValue::Scalar(scale))])).unwrap();
        let f = q.eval_frame(theta, z).unwrap();
        prop_assert!(f.kappa_theta > 0.0 && f.kappa_z > 0.0);
        prop_assert!((f.normal.norm() - 1.0).abs() < 1e-12);
        prop_assert!(f.normal.dot(&f.e_theta).abs() < 1e-12 && f.normal.dot(&f.e_z).abs() < 1e-12);
    }

    #[test]
    fn growth_check_threshold(scale in 0.2..2.0f64, above in 1.0..10.0f64, below in 0.01..0.499f64) {
        let q = make_surface(SurfaceKind::QuarticCap, &params(&[("scale", ParamValue::Scalar(scale))])).unwrap();
        let witness = check_flat_point_growth(&q, 1.0, 32).unwrap().measured;
        prop_assert!(check_flat_point_growth(&q, witness * above, 32).unwrap().pass);
        prop_assert!(!check_flat_point_growth(&q, witness * below, 32).unwrap().pass);
    }

    #[test]
    fn masked_interpolant_is_in_space(c in coeffs()) {
        let fx = fixture();
        let mut u = poly_field(&fx.mesh, &c);
        u.apply_mask(&fx.dofs);
        prop_assert!(u.in_space(&fx.dofs));
        for node in 0..fx.mesh.n_nodes() {
            if fx.dofs.is_masked(node) {
                prop_assert_eq!(u.values[node], Vec3::zeros());
            }
        }
        let back = DisplacementField::from_free(&fx.dofs, &u.to_free(&fx.dofs));
        prop_assert_eq!(back, u);
    }

    #[test]
    fn quotients_are_scale_invariant(c in coeffs(), s in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64]) {
        let fx = fixture();
        let x = poly_field(&fx.mesh, &c).to_free(&fx.dofs);
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        let xs: Vec<f64> = x.iter().map(|v| s * v).collect();
        let n = fx.pencil.get(FormId::Strain).unwrap();
        for den in [FormId::Gradient, FormId::MassTheta, FormId::MassZ, FormId::Mass] {
            let d = fx.pencil.get(den).unwrap();
            let q0 = rayleigh(n, d, &x).unwrap();
            let q1 = rayleigh(n, d, &xs).unwrap();
            prop_assert!((q0 - q1).abs() <= 1e-12 * q0.abs(), "{den:?}: {q0} vs {q1}");
        }
    }

    #[test]
    fn strain_never_exceeds_gradient(c in coeffs()) {
        let fx = fixture();
        let x = poly_field(&fx.mesh, &c).to_free(&fx.dofs);
        let e = fx.pencil.quad(FormId::Strain, &x).unwrap();
        let g = fx.pencil.quad(FormId::Gradient, &x).unwrap();
        prop_assert!(e >= 0.0 && e <= g * (1.0 + 1e-12));
    }

    #[test]
    fn fit_recovers_exact_power_law(p in -3.0..3.0f64, c in 1e-3..1e3f64, n in 3usize..7) {
        let h: Vec<f64> = (0..n).map(|k| 0.2 * 0.5f64.powi(k as i32)).collect();
        let v: Vec<f64> = h.iter().map(|x| c * x.powf(p)).collect();
        let f = fit_scaling_exponent(&h, &v).unwrap();
        prop_assert!((f.slope - p).abs() < 1e-12, "{} vs {p}", f.slope);
        prop_assert!((f.intercept - c.ln()).abs() < 1e-10);
    }

    #[test]
    fn localization_is_monotone_in_c(c in coeffs(), c1 in 0.1..3.0f64, dc in 0.0..3.0f64) {
        let fx = fixture();
        let u = poly_field(&fx.mesh, &c);
        prop_assume!(!u.is_zero());
        let a = localization_ratio(&u, &fx.mesh, (0.0, 0.0), c1).unwrap();
        let b = localization_ratio(&u, &fx.mesh, (0.0, 0.0), c1 + dc).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && a <= b + 1e-15, "{a} > {b}");
    }

    #[test]
    fn first_normal_gradient_entry_vanishes(h in 0.01..0.2f64, scale in 0.5..2.0f64) {
        let q = make_surface(SurfaceKind::QuarticCap, &params(&[("scale", ParamValue::Scalar(scale))])).unwrap();
        let spec = AnsatzSpec::at_flat_point(&q.flat_points()[0], h);
        let n = ansatz_norms(&q, &spec, &TableQuadrature::default()).unwrap();
        prop_assert!(n.values[0] <= 1e-10, "{}", n.values[0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn buckling_is_homogeneous_and_below_trial_fields(s in 0.1..100.0f64, c in coeffs()) {
        let fx = fixture();
        let l0 = ElasticTensor::new(1.0, 1.0).unwrap();
        let sigma = StressField::uniform(-Matrix3::identity()).unwrap();
        let opts = SolverOptions::default();
        let base = lambda_cl(&fx.pencil, &sigma, &l0, &fx.mesh, &fx.dofs, &opts).unwrap();
        let scaled = lambda_cl(&fx.pencil, &sigma.scaled(s), &l0, &fx.mesh, &fx.dofs, &opts).unwrap();
        prop_assert!((scaled.value * s - base.value).abs() <= 1e-10 * base.value);

        // With sigma = -I every nonzero field destabilizes.
        let x = poly_field(&fx.mesh, &c).to_free(&fx.dofs);
        prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
        let a = l0.energy_matrix(&fx.pencil).unwrap();
        let q = rayleigh(&a, fx.pencil.get(FormId::Gradient).unwrap(), &x).unwrap();
        prop_assert!(base.value <= q * (1.0 + 1e-10));
    }
}
