use std::path::{Path, PathBuf};

use korn_shell::analysis::{identity_audit, localization_ratio, AuditOptions, AuditReport, LocalizationReport, TrialField};
use korn_shell::ansatz::{ansatz_scaling_table, build_ansatz, AnsatzSpec, ScalingTable, TableQuadrature, QUANTITY_NAMES};
use korn_shell::analysis::{fit_scaling_exponent, ScalingFit};
use korn_shell::buckling::{is_decreasing, lambda_cl, validity_ratio};
use korn_shell::mesh::{build_graded_mesh, tag_dirichlet, DofMap, ShellMesh};
use korn_shell::operators::{assemble_selected, AssemblyOptions, DisplacementField, FormId, FormPencil};
use korn_shell::solver::{min_quotient, rayleigh, QuotientResult};
use korn_shell::surface::{
    check_curvature_ratio, check_flat_point_growth, compute_shell_params, ConditionReport, ShellParams, SurfacePatch,
};
use korn_shell::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{num, Header, OutDir};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Command {
    VerifySurface,
    /// A single thickness; the first of the sweep list when `None`.
    SolveQuotient { h: Option<f64> },
    Sweep,
    AnsatzEval,
    Localization,
    Buckling,
    AuditIdentities,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

/// Files written by a run, and whether every checked hypothesis held.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub ok: bool,
    pub summary: String,
}

/// `--out`, then `OUTPUT_DIR`, then the config's `output`.
pub fn resolve_out(config: &RunConfig, opts: &RunOptions) -> PathBuf {
    if let Some(p) = &opts.out {
        return p.clone();
    }
    match std::env::var_os("OUTPUT_DIR") {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => config.output.clone(),
    }
}

pub fn run(cmd: &Command, mut config: RunConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    if let Some(seed) = opts.seed {
        config.solver.seed = Some(seed);
    }
    config.validate()?;
    let out_dir = resolve_out(&config, opts);
    let pool = worker_pool(opts.workers)?;
    let out = OutDir::create(&out_dir, Header::new(config.hash()))?;
    match cmd {
        Command::VerifySurface => verify_surface(&config, &out),
        Command::SolveQuotient { h } => solve_quotient(&config, *h, &pool, &out),
        Command::Sweep if config.sweep.band_lengths.is_empty() => sweep(&config, &pool, &out),
        Command::Sweep => {
            let mut files = Vec::new();
            let mut ok = true;
            let mut summary = Vec::new();
            for &l in &config.sweep.band_lengths {
                let c = config.with_band_length(l)?;
                let sub = OutDir::create(&out_dir.join(format!("band-{l}")), Header::new(c.hash()))?;
                let o = sweep(&c, &pool, &sub)?;
                files.extend(o.files);
                ok &= o.ok;
                summary.push(format!("band {l}: {}", o.summary));
            }
            Ok(Outcome { out_dir, files, ok, summary: summary.join("\n") })
        }
        Command::AnsatzEval => ansatz_eval(&config, &out),
        Command::Localization => localization(&config, &pool, &out),
        Command::Buckling => buckling(&config, &pool, &out),
        Command::AuditIdentities => audit_identities(&config, &out),
    }
}

pub fn worker_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

/// Runs `f` for every h on the pool; results come back in h order.
fn per_h<T: Send>(
    pool: &rayon::ThreadPool,
    hs: &[f64],
    f: impl Fn(f64) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    pool.install(|| hs.par_iter().map(|&h| f(h)).collect::<Vec<_>>()).into_iter().collect()
}

/// Mesh, free dofs and assembled forms at one thickness.
pub struct Level {
    pub h: f64,
    pub mesh: ShellMesh,
    pub dofs: DofMap,
    pub pencil: FormPencil,
}

pub fn level(config: &RunConfig, surface: &SurfacePatch, h: f64, forms: &[FormId]) -> Result<Level, CliError> {
    let mesh = build_graded_mesh(surface, h, config.resolution_at(h), config.grading_at(surface, h))?;
    let dofs = tag_dirichlet(&mesh);
    let pencil = assemble_selected(&mesh, &dofs, forms, &AssemblyOptions::default())?;
    Ok(Level { h, mesh, dofs, pencil })
}

fn fit_or_note(name: &str, h: &[f64], values: &[f64]) -> (Option<ScalingFit>, String) {
    match fit_scaling_exponent(h, values) {
        Ok(f) => {
            let line = format!("fit {name} slope={} intercept={} r_squared={}", f.slope, f.intercept, f.r_squared);
            (Some(f), line)
        }
        Err(e) => (None, format!("fit {name} unavailable: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub n_dofs: usize,
    pub korn_quotient: f64,
    pub korn_constant: f64,
    pub kp_theta: f64,
    pub kp_z: f64,
    pub residual: f64,
    pub iters: usize,
    /// Quotient of the interpolated localized trial field, when it fits the mesh.
    pub ansatz_quotient: Option<f64>,
    /// `(c, mass ratio)` of the Korn minimizer.
    pub localization: Vec<(f64, f64)>,
}

/// Korn and Korn-Poincare solves at one thickness.
pub fn sweep_row(config: &RunConfig, surface: &SurfacePatch, h: f64) -> Result<SweepRow, CliError> {
    let lv = level(config, surface, h, &[FormId::Strain, FormId::Gradient, FormId::MassTheta, FormId::MassZ])?;
    let opts = config.solver_options();
    let korn = min_quotient(&lv.pencil, FormId::Strain, FormId::Gradient, &opts)?;
    let kp_theta = min_quotient(&lv.pencil, FormId::Strain, FormId::MassTheta, &opts)?;
    let kp_z = min_quotient(&lv.pencil, FormId::Strain, FormId::MassZ, &opts)?;
    let ansatz_quotient = ansatz_quotient(&lv, surface)?;
    let localization = localization_of(config, surface, &lv, &korn)?;
    Ok(SweepRow {
        h,
        n_dofs: lv.dofs.n_free(),
        korn_quotient: korn.value,
        korn_constant: korn.constant(),
        kp_theta: kp_theta.value,
        kp_z: kp_z.value,
        residual: korn.residual,
        iters: korn.iterations,
        ansatz_quotient,
        localization,
    })
}

fn ansatz_quotient(lv: &Level, surface: &SurfacePatch) -> Result<Option<f64>, CliError> {
    let Some(fp) = surface.flat_points().first() else {
        return Ok(None);
    };
    match build_ansatz(&AnsatzSpec::at_flat_point(fp, lv.h), &lv.mesh) {
        Ok(u) => {
            let x = u.to_free(&lv.dofs);
            Ok(Some(rayleigh(lv.pencil.get(FormId::Strain)?, lv.pencil.get(FormId::Gradient)?, &x)?))
        }
        Err(Error::UnderResolved { .. } | Error::SupportOutsideDomain(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn localization_of(
    config: &RunConfig,
    surface: &SurfacePatch,
    lv: &Level,
    korn: &QuotientResult,
) -> Result<Vec<(f64, f64)>, CliError> {
    let center = config.localization_center(surface);
    let u = DisplacementField::from_free(&lv.dofs, &korn.field);
    config
        .analysis
        .c_values
        .iter()
        .map(|&c| Ok((c, localization_ratio(&u, &lv.mesh, center, c)?)))
        .collect()
}

pub fn sweep_rows(config: &RunConfig, pool: &rayon::ThreadPool) -> Result<Vec<SweepRow>, CliError> {
    let surface = config.surface_patch()?;
    per_h(pool, &config.sweep.h, |h| sweep_row(config, &surface, h))
}

fn sweep(config: &RunConfig, pool: &rayon::ThreadPool, out: &OutDir) -> Result<Outcome, CliError> {
    let rows = sweep_rows(config, pool)?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let cols = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let korn = cols(|r| r.korn_quotient);
    let kpt = cols(|r| r.kp_theta);
    let kpz = cols(|r| r.kp_z);
    let mut footer = Vec::new();
    let (fit, line) = fit_or_note("korn_quotient", &h, &korn);
    footer.push(line);
    footer.push(fit_or_note("kp_theta", &h, &kpt).1);
    footer.push(fit_or_note("kp_z", &h, &kpz).1);
    let mut sharp = true;
    for r in &rows {
        if let Some(q) = r.ansatz_quotient {
            let holds = r.korn_quotient <= q * (1.0 + 1e-12);
            sharp &= holds;
            footer.push(format!("sharpness h={} korn_quotient={} ansatz_quotient={} holds={holds}", num(r.h), num(r.korn_quotient), num(q)));
        }
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.h),
                r.n_dofs.to_string(),
                num(r.korn_quotient),
                num(r.korn_constant),
                num(r.kp_theta),
                num(r.kp_z),
                num(r.residual),
                r.iters.to_string(),
            ]
        })
        .collect();
    let mut files = vec![out.csv(
        "sweep.csv",
        &["h", "n_dofs", "korn_quotient", "korn_constant", "kp_theta", "kp_z", "residual", "iters"],
        &table,
        &footer,
    )?];
    files.push(out.plot("korn_quotient", &h, &korn)?);
    files.push(out.plot("kp_theta", &h, &kpt)?);
    files.push(out.plot("kp_z", &h, &kpz)?);
    let summary = match fit {
        Some(f) => format!("korn_quotient slope {:.4} over {} thicknesses", f.slope, h.len()),
        None => format!("{} thickness(es), no fit", h.len()),
    };
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok: sharp, summary })
}

fn solve_quotient(config: &RunConfig, h: Option<f64>, pool: &rayon::ThreadPool, out: &OutDir) -> Result<Outcome, CliError> {
    let surface = config.surface_patch()?;
    let h = h.unwrap_or(config.sweep.h[0]);
    korn_shell::mesh::check_thickness(&surface, h)?;
    let row = pool.install(|| sweep_row(config, &surface, h))?;
    let ok = row.ansatz_quotient.map_or(true, |q| row.korn_quotient <= q * (1.0 + 1e-12));
    let summary = format!("h={} K={:e} residual={:.2e} iters={}", h, row.korn_quotient, row.residual, row.iters);
    let files = vec![out.json("quotient.json", &row)?];
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok, summary })
}

pub fn ansatz_table(config: &RunConfig) -> Result<ScalingTable, CliError> {
    let surface = config.surface_patch()?;
    let fp = *surface.flat_points().first().ok_or(Error::NoFlatPoints)?;
    let template = AnsatzSpec::at_flat_point(&fp, config.sweep.h[0]);
    Ok(ansatz_scaling_table(&surface, &template, &config.sweep.h, &TableQuadrature::default())?)
}

fn ansatz_eval(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let table = ansatz_table(config)?;
    let mut columns = vec!["h"];
    columns.extend(QUANTITY_NAMES);
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| std::iter::once(num(r.h)).chain(r.values.iter().map(|v| num(*v))).collect())
        .collect();
    let slopes: Vec<String> =
        table.fits.iter().map(|f| f.as_ref().map_or_else(|| "nan".to_string(), |f| f.slope.to_string())).collect();
    let footer = vec![
        format!("slope,{}", slopes.join(",")),
        format!("fit quotient slope={} intercept={} r_squared={}", table.quotient_fit.slope, table.quotient_fit.intercept, table.quotient_fit.r_squared),
    ];
    let mut files = vec![out.csv("ansatz.csv", &columns, &rows, &footer)?];
    let h = table.h();
    for (k, name) in QUANTITY_NAMES.iter().enumerate() {
        if table.fits[k].is_some() {
            files.push(out.plot(&format!("ansatz_{name}"), &h, &table.column(k))?);
        }
    }
    let q: Vec<f64> = table.rows.iter().map(|r| r.quotient()).collect();
    files.push(out.plot("ansatz_quotient", &h, &q)?);
    let summary = format!("Ansatz quotient slope {:.4}", table.quotient_fit.slope);
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok: true, summary })
}

/// Korn minimizer mass ratios, one report per `c`.
pub fn localization_reports(config: &RunConfig, pool: &rayon::ThreadPool) -> Result<Vec<LocalizationReport>, CliError> {
    let surface = config.surface_patch()?;
    let rows = per_h(pool, &config.sweep.h, |h| {
        let lv = level(config, &surface, h, &[FormId::Strain, FormId::Gradient])?;
        let korn = min_quotient(&lv.pencil, FormId::Strain, FormId::Gradient, &config.solver_options())?;
        localization_of(config, &surface, &lv, &korn)
    })?;
    config
        .analysis
        .c_values
        .iter()
        .enumerate()
        .map(|(k, &c)| Ok(LocalizationReport::new(c, config.sweep.h.clone(), rows.iter().map(|r| r[k].1).collect())?))
        .collect()
}

fn localization(config: &RunConfig, pool: &rayon::ThreadPool, out: &OutDir) -> Result<Outcome, CliError> {
    let reports = localization_reports(config, pool)?;
    let mut rows = Vec::new();
    for (i, &h) in config.sweep.h.iter().enumerate() {
        for r in &reports {
            rows.push(vec![num(h), num(r.c), num(r.ratios[i])]);
        }
    }
    let footer: Vec<String> = reports
        .iter()
        .map(|r| format!("trend c={} nondecreasing={} max_change={}", num(r.c), r.is_nondecreasing(0.0), num(r.max_change())))
        .collect();
    let mut files = vec![out.csv("localization.csv", &["h", "c", "mass_ratio"], &rows, &footer)?];
    for r in &reports {
        files.push(out.plot(&format!("localization_c{}", r.c), &r.h, &r.ratios)?);
    }
    let summary = reports.iter().map(|r| format!("c={}: {:?}", r.c, r.ratios)).collect::<Vec<_>>().join("; ");
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok: true, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucklingRow {
    pub h: f64,
    pub n_dofs: usize,
    pub lambda_cl: f64,
    pub korn_quotient: f64,
    pub validity_ratio: f64,
    pub residual: f64,
    pub iters: usize,
}

pub fn buckling_rows(config: &RunConfig, pool: &rayon::ThreadPool) -> Result<Vec<BucklingRow>, CliError> {
    let surface = config.surface_patch()?;
    let stress = config.stress.clone().unwrap_or_default();
    let l0 = stress.tensor()?;
    per_h(pool, &config.sweep.h, |h| {
        let lv = level(config, &surface, h, &[FormId::Strain, FormId::Gradient, FormId::Trace])?;
        let opts = config.solver_options();
        let korn = min_quotient(&lv.pencil, FormId::Strain, FormId::Gradient, &opts)?;
        let sigma = stress.field(&lv.mesh)?;
        let b = lambda_cl(&lv.pencil, &sigma, &l0, &lv.mesh, &lv.dofs, &opts)?;
        Ok(BucklingRow {
            h,
            n_dofs: lv.dofs.n_free(),
            lambda_cl: b.value,
            korn_quotient: korn.value,
            validity_ratio: validity_ratio(&b, &korn),
            residual: b.residual,
            iters: b.iterations,
        })
    })
}

fn buckling(config: &RunConfig, pool: &rayon::ThreadPool, out: &OutDir) -> Result<Outcome, CliError> {
    let rows = buckling_rows(config, pool)?;
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let lam: Vec<f64> = rows.iter().map(|r| r.lambda_cl).collect();
    let ratio: Vec<f64> = rows.iter().map(|r| r.validity_ratio).collect();
    let decreasing = is_decreasing(&ratio);
    let footer = vec![fit_or_note("lambda_cl", &h, &lam).1, format!("validity_ratio decreasing={decreasing}")];
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.h),
                r.n_dofs.to_string(),
                num(r.lambda_cl),
                num(r.korn_quotient),
                num(r.validity_ratio),
                num(r.residual),
                r.iters.to_string(),
            ]
        })
        .collect();
    let files = vec![
        out.csv(
            "buckling.csv",
            &["h", "n_dofs", "lambda_cl", "korn_quotient", "validity_ratio", "residual", "iters"],
            &table,
            &footer,
        )?,
        out.plot("lambda_cl", &h, &lam)?,
        out.plot("validity_ratio", &h, &ratio)?,
    ];
    let summary = format!("lambda_cl {lam:?}, validity ratio decreasing: {decreasing}");
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok: true, summary })
}

/// Random trial fields drawn from the run seed.
pub fn audit_report(config: &RunConfig) -> Result<AuditReport, CliError> {
    let surface = config.surface_patch()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed());
    let fields: Vec<TrialField> =
        (0..config.analysis.audit_fields).map(|_| TrialField::random(&surface, &mut rng)).collect();
    let opts = AuditOptions {
        lambda: config.analysis.lambda,
        order: config.analysis.audit_order,
        pieces: config.analysis.audit_pieces,
    };
    Ok(identity_audit(&surface, &fields, &opts)?)
}

fn audit_identities(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let report = audit_report(config)?;
    let worst = report.max_residual();
    let files = vec![out.json("audit.json", &report)?];
    let summary = format!("{} fields, largest relative residual {worst:.3e}", report.fields.len());
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok: worst < 1e-6, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub applicable: bool,
    pub note: Option<String>,
    pub report: Option<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceVerification {
    pub surface: String,
    pub params: ShellParams,
    pub checks: Vec<CheckEntry>,
    pub codazzi_gauss: ConditionReport,
}

impl SurfaceVerification {
    pub fn all_pass(&self) -> bool {
        self.codazzi_gauss.pass && self.checks.iter().all(|c| !c.applicable || c.report.as_ref().is_some_and(|r| r.pass))
    }
}

fn check_entry(name: &str, r: korn_shell::Result<ConditionReport>) -> Result<CheckEntry, CliError> {
    match r {
        Ok(report) => Ok(CheckEntry { name: name.into(), applicable: true, note: None, report: Some(report) }),
        Err(e @ (Error::NoFlatPoints | Error::Precondition(_))) => {
            Ok(CheckEntry { name: name.into(), applicable: false, note: Some(format!("not-applicable: {e}")), report: None })
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify(config: &RunConfig) -> Result<SurfaceVerification, CliError> {
    let surface = config.surface_patch()?;
    let a = &config.analysis;
    let params = compute_shell_params(&surface, a.sample_density.max(16))?;
    let checks = vec![
        check_entry("flat-point-growth", check_flat_point_growth(&surface, a.c1, a.sample_density))?,
        check_entry("curvature-ratio", check_curvature_ratio(&surface, a.c2, a.sample_density))?,
    ];
    let bound = if surface.has_closed_form() { 1e-8 } else { 1e-5 };
    let (ts, zs) = surface.sample_axes(a.sample_density);
    let mut worst = (0.0f64, (f64::NAN, f64::NAN));
    let mut samples = 0;
    for &t in &ts {
        for &z in &zs {
            match surface.codazzi_gauss_residual(t, z) {
                Ok(r) => {
                    samples += 1;
                    if r.abs() > worst.0 {
                        worst = (r.abs(), (t, z));
                    }
                }
                Err(Error::NearSingularity { .. } | Error::OutsideDomain { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let codazzi_gauss = ConditionReport {
        condition: "codazzi-gauss".into(),
        pass: worst.0 < bound,
        worst_point: worst.1,
        measured: worst.0,
        bound,
        samples,
    };
    Ok(SurfaceVerification { surface: surface.kind().to_string(), params, checks, codazzi_gauss })
}

fn verify_surface(config: &RunConfig, out: &OutDir) -> Result<Outcome, CliError> {
    let v = verify(config)?;
    let ok = v.all_pass();
    let mut summary: Vec<String> = v
        .checks
        .iter()
        .map(|c| match (&c.report, &c.note) {
            (Some(r), _) => format!("{}: {}", c.name, if r.pass { "pass" } else { "FAIL" }),
            (None, Some(n)) => format!("{}: {n}", c.name),
            (None, None) => c.name.clone(),
        })
        .collect();
    summary.push(format!("codazzi-gauss: {} (max {:.2e})", if v.codazzi_gauss.pass { "pass" } else { "FAIL" }, v.codazzi_gauss.measured));
    let files = vec![out.json("verify.json", &v)?];
    Ok(Outcome { out_dir: out.path().to_path_buf(), files, ok, summary: summary.join("\n") })
}

/// Loads, runs and returns the outcome; convenience for tests and the binary.
pub fn run_file(cmd: &Command, config: &Path, opts: &RunOptions) -> Result<Outcome, CliError> {
    run(cmd, RunConfig::load(config)?, opts)
}
