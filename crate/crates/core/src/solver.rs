//! Minimization of Rayleigh quotients `x^T A x / x^T B x` over the free dofs.
//!
//! The numerator `A` is factored once (shift zero) and the largest
//! eigenvalues `mu` of `A^{-1} B` are found by a thick-restart Lanczos
//! iteration in the `A` inner product with explicit Rayleigh-Ritz
//! projection; the minimum quotient is `1 / mu`. This works unchanged when
//! `B` is singular (component masses) or indefinite (geometric forms).

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Col, Side};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{FormId, FormPencil, SparseSym};

/// Seed of the start vector when none is given.
pub const DEFAULT_SEED: u64 = 20_240_417;
/// Free-dof cap of the dense oracle.
pub const ORACLE_CAP: usize = 2000;
/// Ritz values of `A^{-1} B` at or below this are not destabilizing.
pub const POSITIVE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub krylov_dim: usize,
    pub keep: usize,
    /// Residual accepted when the target stalls at the iteration cap.
    pub accept: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, seed: DEFAULT_SEED, krylov_dim: 40, keep: 12, accept: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverTag {
    Iterative,
    DenseOracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuotientResult {
    pub value: f64,
    /// Minimizer on the free dofs, normalized to unit denominator when possible.
    pub field: Vec<f64>,
    /// `|A x - value B x| / |B x|`
    pub residual: f64,
    pub iterations: usize,
    pub tag: SolverTag,
    /// The numerator was singular and `field` is a null direction.
    pub null_witness: bool,
}

impl QuotientResult {
    /// Reciprocal of the quotient, the constant of the matching inequality.
    pub fn constant(&self) -> f64 {
        1.0 / self.value
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct Factor {
    llt: Llt<usize, f64>,
}

impl Factor {
    fn new(a: &SparseSym) -> Result<Self> {
        faer::set_global_parallelism(faer::Par::Seq);
        let m = a.to_faer_lower();
        let llt = m.sp_cholesky(Side::Lower).map_err(|_| Error::NotPositiveDefinite)?;
        Ok(Self { llt })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Col::<f64>::from_fn(b.len(), |i| b[i]);
        self.llt.solve_in_place(x.as_mat_mut());
        (0..b.len()).map(|i| x[i]).collect()
    }
}

/// Ritz pair of `A^{-1} B` with the residual of the pencil.
struct Ritz {
    mu: f64,
    x: Vec<f64>,
    ax: Vec<f64>,
    bx: Vec<f64>,
}

fn pencil_residual(r: &Ritz) -> f64 {
    let lam = 1.0 / r.mu;
    let bn = norm(&r.bx);
    if bn == 0.0 {
        return f64::INFINITY;
    }
    let res: f64 = r.ax.iter().zip(&r.bx).map(|(a, b)| (a - lam * b).powi(2)).sum::<f64>().sqrt();
    res / bn
}

/// Largest positive eigenvalue of `A^{-1} B`, or `None` when every Ritz value
/// stays below [`POSITIVE_FLOOR`].
fn largest_mu(
    a: &SparseSym,
    b: &SparseSym,
    factor: &Factor,
    opts: &SolverOptions,
) -> Result<(Option<Ritz>, f64, usize)> {
    let n = a.dim();
    if b.dim() != n {
        return Err(Error::Dimension { expected: n, found: b.dim() });
    }
    let m = opts.krylov_dim.clamp(2, n.max(2)).min(n);
    let keep = opts.keep.min(m.saturating_sub(2)).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    // One application of the operator puts the start in the range of A^{-1} B.
    let mut w = factor.solve(&b.mul_vec(&start));
    let mut solves = 1;
    if norm(&w) == 0.0 {
        w = start;
    }

    // Basis V (A-orthonormal) with A V and B V.
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut av: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut bv: Vec<Vec<f64>> = Vec::with_capacity(m + 1);

    let mut best: Option<Ritz> = None;
    let mut best_res = f64::INFINITY;

    loop {
        // Orthogonalize w against the basis twice and append it.
        let mut aw = a.mul_vec(&w);
        for _ in 0..2 {
            for (vj, avj) in v.iter().zip(&av) {
                let c = dot(&w, avj);
                axpy(&mut w, -c, vj);
            }
            aw = a.mul_vec(&w);
        }
        let wn = dot(&w, &aw);
        let breakdown = !(wn > 0.0) || wn.sqrt() < 1e-14 * (1.0 + v.len() as f64);
        if !breakdown {
            let s = 1.0 / wn.sqrt();
            w.iter_mut().for_each(|x| *x *= s);
            aw.iter_mut().for_each(|x| *x *= s);
            let bw = b.mul_vec(&w);
            v.push(w.clone());
            av.push(aw);
            bv.push(bw);
        }

        let full = v.len() >= m || breakdown || solves >= opts.max_iter;
        if full || v.len() == n {
            // Rayleigh-Ritz on H = V^T B V.
            let k = v.len();
            let mut h = DMatrix::zeros(k, k);
            for i in 0..k {
                for j in 0..=i {
                    let x = dot(&v[i], &bv[j]);
                    h[(i, j)] = x;
                    h[(j, i)] = x;
                }
            }
            let eig = SymmetricEigen::new(h);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
            let combine = |basis: &Vec<Vec<f64>>, y: &[f64]| {
                let mut out = vec![0.0; n];
                for (c, col) in y.iter().zip(basis) {
                    axpy(&mut out, *c, col);
                }
                out
            };
            let top = order[0];
            let y: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
            let ritz = Ritz { mu: eig.eigenvalues[top], x: combine(&v, &y), ax: combine(&av, &y), bx: combine(&bv, &y) };
            if ritz.mu <= POSITIVE_FLOOR {
                // Nothing positive in this subspace; a Krylov space of full
                // size or a breakdown means nothing positive at all.
                if breakdown || v.len() == n || solves >= opts.max_iter {
                    return Ok((None, f64::INFINITY, solves));
                }
            } else {
                let res = pencil_residual(&ritz);
                if res < best_res {
                    best_res = res;
                    best = Some(Ritz { mu: ritz.mu, x: ritz.x.clone(), ax: ritz.ax.clone(), bx: ritz.bx.clone() });
                }
                if res <= opts.tol || breakdown || v.len() == n || solves >= opts.max_iter {
                    return Ok((best, best_res, solves));
                }
            }
            // Thick restart: keep the leading Ritz vectors; continue from the
            // last basis vector's image.
            // The continuation vector is the residual direction of the whole
            // old basis, which keeps the restarted space Krylov.
            let mut next = factor.solve(&b.mul_vec(v.last().unwrap()));
            solves += 1;
            for _ in 0..2 {
                for (vj, avj) in v.iter().zip(&av) {
                    let c = dot(&next, avj);
                    axpy(&mut next, -c, vj);
                }
            }
            let kept: Vec<usize> = order.iter().copied().take(keep).collect();
            let ys: Vec<Vec<f64>> = kept.iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
            let nv: Vec<Vec<f64>> = ys.iter().map(|y| combine(&v, y)).collect();
            let nav: Vec<Vec<f64>> = ys.iter().map(|y| combine(&av, y)).collect();
            let nbv: Vec<Vec<f64>> = ys.iter().map(|y| combine(&bv, y)).collect();
            v = nv;
            av = nav;
            bv = nbv;
            w = next;
            continue;
        }
        let last = v.last().unwrap();
        w = factor.solve(&b.mul_vec(last));
        solves += 1;
    }
}

/// Smallest quotient `x^T A x / x^T B x` over vectors with `x^T B x > 0`.
///
/// `A` must be positive semidefinite; when its factorization fails the
/// pencil is shifted by a small multiple of `B`, and a vanishing shifted
/// quotient is reported as value 0 with a null-direction witness.
pub fn min_quotient_matrices(a: &SparseSym, b: &SparseSym, opts: &SolverOptions) -> Result<QuotientResult> {
    let (factor, shift) = match Factor::new(a) {
        Ok(f) => (f, 0.0),
        Err(_) => {
            let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let bscale = b.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let eps = 1e-8 * scale / bscale;
            let shifted = regularize(&a.combine(1.0, b, eps)?, 1e-10 * scale);
            (Factor::new(&shifted)?, eps)
        }
    };
    if shift > 0.0 {
        let scale = a.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let shifted = regularize(&a.combine(1.0, b, shift)?, 1e-10 * scale);
        let (ritz, _, iters) = largest_mu(&shifted, b, &factor, opts)?;
        let ritz = ritz.ok_or(Error::EmptyCone)?;
        let value = (1.0 / ritz.mu - shift).max(0.0);
        let ax = a.mul_vec(&ritz.x);
        let quot = dot(&ritz.x, &ax) / dot(&ritz.x, &ritz.bx);
        let null = quot.abs() <= 1e3 * shift;
        let residual = norm(&ax.iter().zip(&ritz.bx).map(|(p, q)| p - value * q).collect::<Vec<_>>()) / norm(&ritz.bx);
        return Ok(QuotientResult {
            value: if null { 0.0 } else { value },
            field: normalize_b(ritz.x, &ritz.bx),
            residual,
            iterations: iters,
            tag: SolverTag::Iterative,
            null_witness: null,
        });
    }
    let (ritz, res, iters) = largest_mu(a, b, &factor, opts)?;
    let ritz = ritz.ok_or(Error::EmptyCone)?;
    if res > opts.accept {
        return Err(Error::NoConvergence { iterations: iters, residual: res });
    }
    Ok(QuotientResult {
        value: 1.0 / ritz.mu,
        field: normalize_b(ritz.x, &ritz.bx),
        residual: res,
        iterations: iters,
        tag: SolverTag::Iterative,
        null_witness: false,
    })
}

/// Adds `delta` to the diagonal so that directions null for both forms stay
/// invertible.
fn regularize(a: &SparseSym, delta: f64) -> SparseSym {
    a.add_diagonal(delta)
}

/// Scales to unit `x^T B x` and fixes the sign by the largest entry.
fn normalize_b(mut x: Vec<f64>, bx: &[f64]) -> Vec<f64> {
    let q = dot(&x, bx);
    let s = if q > 0.0 { 1.0 / q.sqrt() } else { 1.0 / norm(&x).max(f64::MIN_POSITIVE) };
    let pivot = x.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    let s = if pivot < 0.0 { -s } else { s };
    x.iter_mut().for_each(|v| *v *= s);
    x
}

/// Minimizes `numerator / denominator` over the free dofs of the pencil.
pub fn min_quotient(pencil: &FormPencil, numerator: FormId, denominator: FormId, opts: &SolverOptions) -> Result<QuotientResult> {
    min_quotient_matrices(pencil.get(numerator)?, pencil.get(denominator)?, opts)
}

/// Full dense solve of the same problem.
pub fn dense_oracle_matrices(a: &SparseSym, b: &SparseSym) -> Result<QuotientResult> {
    let n = a.dim();
    if n > ORACLE_CAP {
        return Err(Error::OracleTooLarge { size: n, cap: ORACLE_CAP });
    }
    let ad = a.to_dense();
    let bd = b.to_dense();
    let chol = ad.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // C = L^{-1} B L^{-T}
    let linv_b = l.solve_lower_triangular(&bd).ok_or(Error::NotPositiveDefinite)?;
    let c = l.solve_lower_triangular(&linv_b.transpose()).ok_or(Error::NotPositiveDefinite)?;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let (imax, mu) = eig.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if !(mu > POSITIVE_FLOOR) {
        return Err(Error::EmptyCone);
    }
    let y = eig.eigenvectors.column(imax).into_owned();
    let x: DVector<f64> = l.transpose().solve_upper_triangular(&y).ok_or(Error::NotPositiveDefinite)?;
    let value = 1.0 / mu;
    let ax = &ad * &x;
    let bx = &bd * &x;
    let residual = (&ax - value * &bx).norm() / bx.norm();
    Ok(QuotientResult {
        value,
        field: normalize_b(x.iter().copied().collect(), bx.as_slice()),
        residual,
        iterations: 0,
        tag: SolverTag::DenseOracle,
        null_witness: false,
    })
}

pub fn dense_oracle(pencil: &FormPencil, numerator: FormId, denominator: FormId) -> Result<QuotientResult> {
    dense_oracle_matrices(pencil.get(numerator)?, pencil.get(denominator)?)
}

/// `(|u_theta|^2 / |e(u)|^2, |u_z|^2 / |e(u)|^2)` for a free-dof vector.
pub fn korn_poincare_ratios(pencil: &FormPencil, field: &[f64]) -> Result<(f64, f64)> {
    let e = pencil.quad(FormId::Strain, field)?;
    if e == 0.0 || field.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroField);
    }
    Ok((pencil.quad(FormId::MassTheta, field)? / e, pencil.quad(FormId::MassZ, field)? / e))
}

/// Quotient of a given vector.
pub fn rayleigh(a: &SparseSym, b: &SparseSym, x: &[f64]) -> Result<f64> {
    let den = b.quad(x);
    if den == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(a.quad(x) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_shell_mesh, tag_dirichlet, DofMap};
    use crate::operators::{assemble_forms, assemble_selected, AssemblyOptions};
    use crate::surface::{make_surface, ParamValue, SurfaceKind, SurfaceParams};
    use approx::assert_relative_eq;

    fn cylinder_pencil() -> FormPencil {
        let s = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        let mesh = build_shell_mesh(&s, 0.1, (8, 8, 2)).unwrap();
        assemble_forms(&mesh, &tag_dirichlet(&mesh)).unwrap()
    }

    #[test]
    fn iterative_matches_dense_on_small_mesh() {
        let p = cylinder_pencil();
        assert!(p.n_free() <= ORACLE_CAP);
        for den in [FormId::Gradient, FormId::MassTheta, FormId::MassZ] {
            let it = min_quotient(&p, FormId::Strain, den, &SolverOptions::default()).unwrap();
            let de = dense_oracle(&p, FormId::Strain, den).unwrap();
            assert_relative_eq!(it.value, de.value, max_relative = 1e-8);
            assert!(it.residual <= 1e-8, "{den:?} {}", it.residual);
            assert!(it.value > 0.0);
        }
    }

    #[test]
    fn identical_forms_give_one() {
        let p = cylinder_pencil();
        let n = p.get(FormId::Strain).unwrap();
        let r = dense_oracle_matrices(n, n).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
        let r = min_quotient_matrices(n, n, &SolverOptions::default()).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn quotient_below_trial_fields() {
        let p = cylinder_pencil();
        let r = min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..p.n_free()).map(|_| rng.gen::<f64>() - 0.5).collect();
            let q = rayleigh(p.get(FormId::Strain).unwrap(), p.get(FormId::Gradient).unwrap(), &x).unwrap();
            assert!(r.value <= q);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let p = cylinder_pencil();
        let a = min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap();
        let b = min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unconstrained_mesh_reports_null_direction() {
        let mut params = SurfaceParams::new();
        params.insert("band".into(), ParamValue::List(vec![0.3, 0.9]));
        let s = make_surface(SurfaceKind::SphereCap, &params).unwrap();
        let mesh = build_shell_mesh(&s, 0.1, (8, 8, 2)).unwrap();
        let dofs = DofMap::unconstrained(&mesh);
        let p = assemble_selected(&mesh, &dofs, &[FormId::Strain, FormId::Gradient], &AssemblyOptions::default()).unwrap();
        let r = min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap();
        assert!(r.null_witness);
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn poincare_ratios_reject_zero() {
        let p = cylinder_pencil();
        assert!(matches!(korn_poincare_ratios(&p, &vec![0.0; p.n_free()]), Err(Error::ZeroField)));
        let r = min_quotient(&p, FormId::Strain, FormId::Gradient, &SolverOptions::default()).unwrap();
        let (a, b) = korn_poincare_ratios(&p, &r.field).unwrap();
        assert!(a > 0.0 && b > 0.0);
    }

    #[test]
    fn oracle_size_cap() {
        let s = make_surface(SurfaceKind::CylinderStrip, &SurfaceParams::new()).unwrap();
        let mesh = build_shell_mesh(&s, 0.1, (16, 16, 2)).unwrap();
        let p = assemble_selected(&mesh, &tag_dirichlet(&mesh), &[FormId::Strain, FormId::Gradient], &AssemblyOptions::default()).unwrap();
        assert!(matches!(dense_oracle(&p, FormId::Strain, FormId::Gradient), Err(Error::OracleTooLarge { .. })));
    }
}
