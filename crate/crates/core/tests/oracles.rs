use korn_shell::analysis::{fit_scaling_exponent, interpolation_constant_probe};
use korn_shell::ansatz::{ansatz_scaling_table, build_ansatz, AnsatzSpec, TableQuadrature, QUANTITY_NAMES};
use korn_shell::buckling::{hypothesis_from_norms, lambda_cl, localization_hypothesis_check, ElasticTensor, StressField};
use korn_shell::mesh::{build_shell_mesh, tag_dirichlet, ShellMesh};
use korn_shell::operators::{assemble_forms, field_norms, DisplacementField, FormId};
use korn_shell::solver::{min_quotient, rayleigh, SolverOptions};
use korn_shell::surface::{make_surface, ParamValue, SurfaceKind, SurfaceParams, SurfacePatch, Vec3};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn surface(kind: SurfaceKind, pairs: &[(&str, ParamValue)]) -> SurfacePatch {
    let p: SurfaceParams = pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    make_surface(kind, &p).unwrap()
}

fn shallow_quartic() -> SurfacePatch {
    surface(
        SurfaceKind::QuarticCap,
        &[("scale", ParamValue::Scalar(0.1)), ("band", ParamValue::List(vec![0.0, 2.0]))],
    )
}

fn random_field(mesh: &ShellMesh, rng: &mut ChaCha8Rng) -> DisplacementField {
    let c: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DisplacementField::interpolate(mesh, |n| {
        let x = n.x;
        Vec3::new(
            c[0] * x.y + c[1] * x.z * x.x + c[2] * (3.0 * x.x).sin(),
            c[3] * x.x + c[4] * x.z * x.z + c[5] * x.y * x.y,
            c[6] * x.y * x.x + c[7] * (2.0 * x.z).cos() + c[8] * x.z,
        )
    })
}

#[test]
fn korn_quotient_does_not_grow_under_refinement() {
    let s = surface(SurfaceKind::CylinderStrip, &[]);
    let k = |res| {
        let m = build_shell_mesh(&s, 0.1, res).unwrap();
        let p = assemble_forms(&m, &tag_dirichlet(&m)).unwrap();
        min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap().value
    };
    let coarse = k((8, 8, 2));
    let fine = k((16, 16, 2));
    assert!(fine <= coarse * (1.0 + 1e-6), "{fine} > {coarse}");
}

#[test]
fn second_korn_constant_is_stable_under_refinement() {
    let s = shallow_quartic();
    let c2 = |res| {
        let m = build_shell_mesh(&s, 0.1, res).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..100)
            .map(|_| {
                let n = field_norms(&random_field(&m, &mut rng), &m);
                n.gradient / (n.strain + n.mass)
            })
            .fold(0.0f64, f64::max)
    };
    let a = c2((8, 16, 2));
    let b = c2((16, 32, 2));
    assert!(a.is_finite() && b.is_finite() && a > 0.0);
    assert!((a / b - 1.0).abs() < 0.2, "C2 {a} vs {b}");
}

#[test]
fn interpolation_probe_is_finite_across_h() {
    let s = shallow_quartic();
    let mut vals = Vec::new();
    for h in [0.2, 0.1, 0.05] {
        let m = build_shell_mesh(&s, h, (8, 16, 2)).unwrap();
        let d = tag_dirichlet(&m);
        let p = assemble_forms(&m, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fields: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let mut u = random_field(&m, &mut rng);
                u.apply_mask(&d);
                u.to_free(&d)
            })
            .collect();
        vals.push(interpolation_constant_probe(&p, &fields, h).unwrap());
    }
    println!("interpolation constant probe over h = 0.2, 0.1, 0.05: {vals:?}");
    assert!(vals.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn buckling_load_below_localized_trial_field() {
    let s = shallow_quartic();
    let h = 0.2;
    let m = build_shell_mesh(&s, h, (16, 32, 2)).unwrap();
    let d = tag_dirichlet(&m);
    let p = assemble_forms(&m, &d).unwrap();
    let l0 = ElasticTensor::new(1.0, 1.0).unwrap();
    let sigma = StressField::uniform(-Matrix3::identity()).unwrap();
    let b = lambda_cl(&p, &sigma, &l0, &m, &d, &SolverOptions::default()).unwrap();
    let u = build_ansatz(&AnsatzSpec::at_flat_point(&s.flat_points()[0], h), &m).unwrap();
    let x = u.to_free(&d);
    let q = rayleigh(&l0.energy_matrix(&p).unwrap(), p.get(FormId::Gradient).unwrap(), &x).unwrap();
    assert!(b.value <= q, "{} > {q}", b.value);
    assert!(b.denominator < 0.0);
}

#[test]
fn localized_family_satisfies_the_half_power_law() {
    let q = surface(SurfaceKind::QuarticCap, &[]);
    let h = [0.1, 0.05, 0.025, 0.0125];
    let t = ansatz_scaling_table(&q, &AnsatzSpec::at_flat_point(&q.flat_points()[0], h[0]), &h, &TableQuadrature::default())
        .unwrap();
    let col = |name: &str| t.column(QUANTITY_NAMES.iter().position(|n| *n == name).unwrap());
    let rep = hypothesis_from_norms(&h, &col("strain"), &col("u_t")).unwrap();
    assert!(rep.consistent, "slope {}", rep.fit.slope);
}

#[test]
fn global_bending_field_is_flagged() {
    // A fixed smooth normal displacement: strain and normal mass both scale
    // with the volume, so the ratio has slope near 0.
    let s = shallow_quartic();
    let meshes: Vec<ShellMesh> = [0.2, 0.1, 0.05].iter().map(|&h| build_shell_mesh(&s, h, (8, 16, 2)).unwrap()).collect();
    let fields: Vec<DisplacementField> = meshes
        .iter()
        .map(|m| {
            let comps: Vec<[f64; 3]> = m.nodes().iter().map(|n| [n.z * n.z, 0.0, 0.0]).collect();
            DisplacementField::from_curvilinear(m, &comps)
        })
        .collect();
    let family: Vec<(&ShellMesh, &DisplacementField)> = meshes.iter().zip(&fields).collect();
    let rep = localization_hypothesis_check(&family, Some((0.0, 0.0)), 2.0).unwrap();
    assert!(!rep.consistent, "slope {}", rep.fit.slope);
    assert!(rep.fit.slope.abs() < 0.2);
    assert!(rep.localization.is_some());
}

#[test]
fn sphere_quotient_decreases_with_thickness() {
    let s = surface(SurfaceKind::SphereCap, &[("band", ParamValue::List(vec![0.0, 2.0]))]);
    let k: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let m = build_shell_mesh(&s, h, (16, 32, 2)).unwrap();
            let p = assemble_forms(&m, &tag_dirichlet(&m)).unwrap();
            min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap().value
        })
        .collect();
    assert!(k.windows(2).all(|w| w[1] < w[0]), "{k:?}");
    let f = fit_scaling_exponent(&[0.2, 0.1, 0.05], &k).unwrap();
    assert!(f.slope > 0.5, "{}", f.slope);
}
