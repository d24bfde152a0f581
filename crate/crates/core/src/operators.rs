//! Displacement fields, curvilinear gradients and assembled quadratic forms.
//!
//! Energies are assembled from Cartesian components of the displacement, so
//! the polar apex needs no special handling. The curvilinear gradient matrix
//! and its simplified variants are exposed as point evaluators.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, SMatrix};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{DofMap, QuadPoint, ShellMesh};
use crate::surface::{FrameSample, Vec3};

/// Default cap on the memory used by assembled matrices.
pub const DEFAULT_MEMORY_CAP: usize = 6 << 30;

const CELL_CHUNK: usize = 512;

type ElemMat = SMatrix<f64, 24, 24>;

/// Nodal displacement vectors in Cartesian components.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub values: Vec<Vec3>,
}

/// The orthonormal frame `(n, e_theta, e_z)` at a node; pole nodes use a
/// fixed tangent basis since `e_theta` has no limit there.
pub fn node_frame(mesh: &ShellMesh, node: usize) -> [Vec3; 3] {
    let nd = &mesh.nodes()[node];
    let s = mesh.surface();
    if s.is_polar() && (nd.z - s.band().0).abs() < 1e-14 {
        let (e1, e2) = s.pole_tangents();
        return [s.pole_normal(), e1, e2];
    }
    let f = s.frame_unchecked(nd.theta, nd.z);
    [f.normal, f.e_theta, f.e_z]
}

impl DisplacementField {
    pub fn zeros(n_nodes: usize) -> Self {
        Self { values: vec![Vec3::zeros(); n_nodes] }
    }

    /// Nodal interpolation of a Cartesian field given at node positions.
    pub fn interpolate<F: Fn(&crate::mesh::Node) -> Vec3>(mesh: &ShellMesh, f: F) -> Self {
        Self { values: mesh.nodes().iter().map(f).collect() }
    }

    /// Field from curvilinear components `(u_t, u_theta, u_z)` per node.
    pub fn from_curvilinear(mesh: &ShellMesh, comps: &[[f64; 3]]) -> Self {
        let values = comps
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let q = node_frame(mesh, i);
                c[0] * q[0] + c[1] * q[1] + c[2] * q[2]
            })
            .collect();
        Self { values }
    }

    /// Curvilinear components `(u_t, u_theta, u_z)` per node.
    pub fn curvilinear(&self, mesh: &ShellMesh) -> Vec<[f64; 3]> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let q = node_frame(mesh, i);
                [q[0].dot(u), q[1].dot(u), q[2].dot(u)]
            })
            .collect()
    }

    /// Free-dof coefficient vector.
    pub fn to_free(&self, dofs: &DofMap) -> Vec<f64> {
        let mut out = vec![0.0; dofs.n_free()];
        for (i, u) in self.values.iter().enumerate() {
            if let Some(d) = dofs.node_dof(i) {
                out[d..d + 3].copy_from_slice(u.as_slice());
            }
        }
        out
    }

    /// Field with zeros on clamped nodes from a free-dof vector.
    pub fn from_free(dofs: &DofMap, x: &[f64]) -> Self {
        let values = (0..dofs.n_nodes())
            .map(|i| match dofs.node_dof(i) {
                Some(d) => Vec3::new(x[d], x[d + 1], x[d + 2]),
                None => Vec3::zeros(),
            })
            .collect();
        Self { values }
    }

    /// Zeroes the clamped nodes.
    pub fn apply_mask(&mut self, dofs: &DofMap) {
        for (i, u) in self.values.iter_mut().enumerate() {
            if dofs.is_masked(i) {
                *u = Vec3::zeros();
            }
        }
    }

    /// True when every clamped node carries an exact zero.
    pub fn in_space(&self, dofs: &DofMap) -> bool {
        self.values.iter().enumerate().all(|(i, u)| !dofs.is_masked(i) || *u == Vec3::zeros())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|u| *u == Vec3::zeros())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { values: self.values.iter().map(|u| u * s).collect() }
    }

    /// Cartesian value and parameter derivatives `[d/dtheta, d/dz, d/dt]` at a
    /// reference point of a cell.
    pub fn cell_jet(&self, mesh: &ShellMesh, cell: usize, xi: [f64; 3]) -> (Vec3, [Vec3; 3]) {
        let c = &mesh.cells()[cell];
        let half = [0.5 * (c.theta.1 - c.theta.0), 0.5 * (c.z.1 - c.z.0), 0.5 * (c.t.1 - c.t.0)];
        let (n, dn) = crate::mesh::trilinear(xi);
        let mut u = Vec3::zeros();
        let mut du = [Vec3::zeros(); 3];
        for a in 0..8 {
            let v = self.values[c.nodes[a]];
            u += n[a] * v;
            for k in 0..3 {
                du[k] += (dn[a][k] / half[k]) * v;
            }
        }
        (u, du)
    }

    /// Curvilinear components and their parameter derivatives at a reference
    /// point of a cell, differentiating the projected interpolant exactly.
    pub fn component_jet(&self, mesh: &ShellMesh, cell: usize, xi: [f64; 3]) -> (ComponentJet, FrameSample, f64) {
        let c = &mesh.cells()[cell];
        let theta = 0.5 * (c.theta.0 + c.theta.1) + 0.5 * (c.theta.1 - c.theta.0) * xi[0];
        let z = 0.5 * (c.z.0 + c.z.1) + 0.5 * (c.z.1 - c.z.0) * xi[1];
        let t = 0.5 * (c.t.0 + c.t.1) + 0.5 * (c.t.1 - c.t.0) * xi[2];
        let f = mesh.surface().frame_unchecked(theta, z);
        let (u, du) = self.cell_jet(mesh, cell, xi);
        (ComponentJet::from_cartesian(&f, u, du), f, t)
    }
}

/// Curvilinear components `(u_t, u_theta, u_z)` with their partials in
/// `t`, `theta` and `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentJet {
    pub u: [f64; 3],
    pub d_t: [f64; 3],
    pub d_theta: [f64; 3],
    pub d_z: [f64; 3],
}

impl ComponentJet {
    /// Projects a Cartesian value with derivatives `[d/dtheta, d/dz, d/dt]` on the frame.
    pub fn from_cartesian(f: &FrameSample, u: Vec3, du: [Vec3; 3]) -> Self {
        let q = [f.normal, f.e_theta, f.e_z];
        let dq = [[f.dn[0], f.de_theta[0], f.de_z[0]], [f.dn[1], f.de_theta[1], f.de_z[1]]];
        let mut out = ComponentJet { u: [0.0; 3], d_t: [0.0; 3], d_theta: [0.0; 3], d_z: [0.0; 3] };
        for c in 0..3 {
            out.u[c] = q[c].dot(&u);
            out.d_theta[c] = q[c].dot(&du[0]) + dq[0][c].dot(&u);
            out.d_z[c] = q[c].dot(&du[1]) + dq[1][c].dot(&u);
            out.d_t[c] = q[c].dot(&du[2]);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        [self.u, self.d_t, self.d_theta, self.d_z].iter().all(|v| v.iter().all(|x| *x == 0.0))
    }
}

fn shift(t: f64, kappa: f64) -> Result<f64> {
    let s = 1.0 + t * kappa;
    if s <= 0.0 {
        return Err(Error::NonPositiveShift(s));
    }
    Ok(s)
}

/// The gradient matrix in the frame `(n, e_theta, e_z)`: row = component,
/// column = direction, with the thickness shifts `1 + t kappa`.
pub fn curvilinear_gradient(jet: &ComponentJet, f: &FrameSample, t: f64) -> Result<Matrix3<f64>> {
    let st = shift(t, f.kappa_theta)?;
    let sz = shift(t, f.kappa_z)?;
    Ok(gradient_with_shifts(jet, f, st, sz))
}

fn gradient_with_shifts(jet: &ComponentJet, f: &FrameSample, st: f64, sz: f64) -> Matrix3<f64> {
    let (at, az) = (f.a_theta, f.a_z);
    let (at_z, az_t) = (f.da_theta[1], f.da_z[0]);
    let (kt, kz) = (f.kappa_theta, f.kappa_z);
    let [ut, uth, uz] = jet.u;
    let [ut_t, uth_t, uz_t] = jet.d_theta;
    let [ut_z, uth_z, uz_z] = jet.d_z;
    Matrix3::new(
        jet.d_t[0],
        (ut_t - at * kt * uth) / (at * st),
        (ut_z - az * kz * uz) / (az * sz),
        jet.d_t[1],
        (az * uth_t + az * at * kt * ut + at_z * uz) / (az * at * st),
        (at * uth_z - az_t * uz) / (az * at * sz),
        jet.d_t[2],
        (az * uz_t - at_z * uth) / (az * at * st),
        (at * uz_z + az * at * kz * ut + az_t * uth) / (az * at * sz),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SimplifiedVariant {
    /// Shifts frozen at `t = 0`.
    F,
    /// Shifts frozen and undifferentiated tangential terms dropped.
    F1,
}

pub fn simplified_gradient(jet: &ComponentJet, f: &FrameSample, variant: SimplifiedVariant) -> Matrix3<f64> {
    match variant {
        SimplifiedVariant::F => gradient_with_shifts(jet, f, 1.0, 1.0),
        SimplifiedVariant::F1 => {
            let (at, az) = (f.a_theta, f.a_z);
            let ut = jet.u[0];
            Matrix3::new(
                jet.d_t[0],
                jet.d_theta[0] / at,
                jet.d_z[0] / az,
                jet.d_t[1],
                jet.d_theta[1] / at + f.kappa_theta * ut,
                jet.d_z[1] / az,
                jet.d_t[2],
                jet.d_theta[2] / at,
                jet.d_z[2] / az + f.kappa_z * ut,
            )
        }
    }
}

/// Symmetric part of a matrix.
pub fn sym(m: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (m + m.transpose())
}

/// `(|F - grad u|, h |grad u|)` in the weighted L2 norm of the shell.
pub fn gradient_consistency_gap(field: &DisplacementField, mesh: &ShellMesh) -> Result<(f64, f64)> {
    let g = [-crate::mesh::GAUSS_G, crate::mesh::GAUSS_G];
    let mut gap = 0.0;
    let mut grad = 0.0;
    for cell in 0..mesh.cells().len() {
        let qps = mesh.cell_quadrature(cell);
        for (q, qp) in qps.iter().enumerate() {
            let xi = [g[q % 2], g[(q / 2) % 2], g[q / 4]];
            let (jet, f, t) = field.component_jet(mesh, cell, xi);
            let full = curvilinear_gradient(&jet, &f, t)?;
            let simple = simplified_gradient(&jet, &f, SimplifiedVariant::F);
            gap += qp.weight * (simple - full).norm_squared();
            grad += qp.weight * full.norm_squared();
        }
    }
    Ok((gap.sqrt(), mesh.thickness() * grad.sqrt()))
}

/// Symmetric sparse matrix in compressed rows with both triangles stored.
#[derive(Debug, Clone)]
pub struct SparseSym {
    n: usize,
    row_ptr: Arc<Vec<usize>>,
    col_idx: Arc<Vec<usize>>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(p) => self.values[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`, rows in parallel.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(1024).enumerate().for_each(|(chunk, ys)| {
            for (k, yi) in ys.iter_mut().enumerate() {
                let i = chunk * 1024 + k;
                let mut s = 0.0;
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.values[p] * x[self.col_idx[p]];
                }
                *yi = s;
            }
        });
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        let y = self.mul_vec(x);
        y.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `a * self + b * other` on a shared pattern.
    pub fn combine(&self, a: f64, other: &SparseSym, b: f64) -> Result<SparseSym> {
        if !Arc::ptr_eq(&self.row_ptr, &other.row_ptr) && (self.row_ptr != other.row_ptr || self.col_idx != other.col_idx) {
            return Err(Error::Dimension { expected: self.nnz(), found: other.nnz() });
        }
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(SparseSym { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values })
    }

    pub fn add_diagonal(&self, delta: f64) -> SparseSym {
        let mut out = self.clone();
        for i in 0..self.n {
            let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
            if let Ok(p) = row.binary_search(&i) {
                out.values[self.row_ptr[i] + p] += delta;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> SparseSym {
        SparseSym {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] = self.values[p];
            }
        }
        m
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                worst = worst.max((self.values[p] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// Lower triangle as a faer column-major matrix (upper triangle of the
    /// row-major storage).
    pub fn to_faer_lower(&self) -> faer::sparse::SparseColMat<usize, f64> {
        // Row i of the symmetric matrix equals column i; keep entries with row index >= i.
        let mut col_ptr = Vec::with_capacity(self.n + 1);
        let mut row_idx = Vec::new();
        let mut vals = Vec::new();
        col_ptr.push(0);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                if j >= i {
                    row_idx.push(j);
                    vals.push(self.values[p]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let sym = faer::sparse::SymbolicSparseColMat::new_checked(self.n, self.n, col_ptr, None, row_idx);
        faer::sparse::SparseColMat::new(sym, vals)
    }

    /// Coordinate text export: a MatrixMarket header and the lower triangle
    /// as 1-based `row col value` lines.
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> Result<()> {
        let lower: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .filter(move |&p| self.col_idx[p] <= i)
                    .map(move |p| (i, self.col_idx[p], self.values[p]))
            })
            .collect();
        writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
        writeln!(w, "{} {} {}", self.n, self.n, lower.len())?;
        for (i, j, v) in lower {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Block sparsity of the free dofs: one 3x3 block per pair of nodes sharing a cell.
#[derive(Debug, Clone)]
pub struct Pattern {
    n: usize,
    row_ptr: Arc<Vec<usize>>,
    col_idx: Arc<Vec<usize>>,
}

impl Pattern {
    pub fn build(mesh: &ShellMesh, dofs: &DofMap) -> Self {
        let n_nodes = mesh.n_nodes();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for c in mesh.cells() {
            for &a in &c.nodes {
                if dofs.is_masked(a) {
                    continue;
                }
                for &b in &c.nodes {
                    if !dofs.is_masked(b) {
                        adj[a].push(b);
                    }
                }
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        for (node, list) in adj.iter_mut().enumerate() {
            let Some(_) = dofs.node_dof(node) else { continue };
            list.sort_unstable();
            list.dedup();
            let cols: Vec<usize> = list.iter().map(|&b| dofs.node_dof(b).unwrap()).collect();
            for _ in 0..3 {
                for &c in &cols {
                    col_idx.extend_from_slice(&[c, c + 1, c + 2]);
                }
                row_ptr.push(col_idx.len());
            }
        }
        Self { n: dofs.n_free(), row_ptr: Arc::new(row_ptr), col_idx: Arc::new(col_idx) }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn empty(&self) -> SparseSym {
        SparseSym { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values: vec![0.0; self.nnz()] }
    }

    /// Value offset of block `(row_dof, col_dof)` in the first row of the block.
    fn block_offset(&self, row_dof: usize, col_dof: usize) -> usize {
        let start = self.row_ptr[row_dof];
        let row = &self.col_idx[start..self.row_ptr[row_dof + 1]];
        start + row.binary_search(&col_dof).expect("block outside pattern")
    }
}

/// Identifier of an assembled form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormId {
    /// `|e(u)|^2`
    Strain,
    /// `|grad u|^2`
    Gradient,
    /// `|u|^2`
    Mass,
    /// `|u_t|^2`
    MassNormal,
    /// `|u_theta|^2`
    MassTheta,
    /// `|u_z|^2`
    MassZ,
    /// `(div u)^2`
    Trace,
}

impl FormId {
    pub const ALL: [FormId; 7] = [
        FormId::Strain,
        FormId::Gradient,
        FormId::Mass,
        FormId::MassNormal,
        FormId::MassTheta,
        FormId::MassZ,
        FormId::Trace,
    ];
}

impl std::str::FromStr for FormId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "strain" | "N" => FormId::Strain,
            "gradient" | "D" => FormId::Gradient,
            "mass" | "M" => FormId::Mass,
            "mass-normal" | "Mt" => FormId::MassNormal,
            "mass-theta" | "Mtheta" => FormId::MassTheta,
            "mass-z" | "Mz" => FormId::MassZ,
            "trace" => FormId::Trace,
            other => return Err(Error::InvalidParameter(format!("unknown form `{other}`"))),
        })
    }
}

/// Which weight the volume integrals carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Full volume element `A_theta A_z (1 + t kappa_theta)(1 + t kappa_z)`.
    #[default]
    Volume,
    /// Thickness-independent `A_theta A_z`.
    Midsurface,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    pub weighting: Weighting,
    pub memory_cap: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { weighting: Weighting::Volume, memory_cap: DEFAULT_MEMORY_CAP }
    }
}

/// Integrand of a form at one quadrature point.
pub enum Kernel<'a> {
    Form(FormId),
    /// `<sigma, grad(u)^T grad(v)>` with the stress at (cell, quadrature point).
    Geometric(&'a (dyn Fn(usize, usize, &QuadPoint) -> Matrix3<f64> + Sync)),
}

impl Kernel<'_> {
    fn accumulate(&self, cell: usize, q: usize, qp: &QuadPoint, w: f64, m: &mut ElemMat) {
        let g = &qp.grad;
        match self {
            Kernel::Form(FormId::Gradient) => {
                for a in 0..8 {
                    for b in 0..8 {
                        let v = w * g[a].dot(&g[b]);
                        for i in 0..3 {
                            m[(3 * a + i, 3 * b + i)] += v;
                        }
                    }
                }
            }
            Kernel::Form(FormId::Strain) => {
                for a in 0..8 {
                    for b in 0..8 {
                        let d = 0.5 * w * g[a].dot(&g[b]);
                        for i in 0..3 {
                            m[(3 * a + i, 3 * b + i)] += d;
                            for k in 0..3 {
                                m[(3 * a + i, 3 * b + k)] += 0.5 * w * g[a][k] * g[b][i];
                            }
                        }
                    }
                }
            }
            Kernel::Form(FormId::Trace) => {
                for a in 0..8 {
                    for b in 0..8 {
                        for i in 0..3 {
                            for k in 0..3 {
                                m[(3 * a + i, 3 * b + k)] += w * g[a][i] * g[b][k];
                            }
                        }
                    }
                }
            }
            Kernel::Form(FormId::Mass) => {
                for a in 0..8 {
                    for b in 0..8 {
                        let v = w * qp.shape[a] * qp.shape[b];
                        for i in 0..3 {
                            m[(3 * a + i, 3 * b + i)] += v;
                        }
                    }
                }
            }
            Kernel::Form(id @ (FormId::MassNormal | FormId::MassTheta | FormId::MassZ)) => {
                let c = match id {
                    FormId::MassNormal => qp.normal,
                    FormId::MassTheta => qp.e_theta,
                    _ => qp.e_z,
                };
                let cc = c * c.transpose();
                for a in 0..8 {
                    for b in 0..8 {
                        let v = w * qp.shape[a] * qp.shape[b];
                        for i in 0..3 {
                            for k in 0..3 {
                                m[(3 * a + i, 3 * b + k)] += v * cc[(i, k)];
                            }
                        }
                    }
                }
            }
            Kernel::Geometric(stress) => {
                let s = stress(cell, q, qp);
                for a in 0..8 {
                    let sg = s * g[a];
                    for b in 0..8 {
                        let v = w * sg.dot(&g[b]);
                        for i in 0..3 {
                            m[(3 * a + i, 3 * b + i)] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Bytes needed to hold `forms` matrices on a pattern.
pub fn assembly_bytes(pattern: &Pattern, forms: usize) -> usize {
    pattern.nnz() * (8 * forms + 8) + 8 * (pattern.dim() + 1)
}

/// Assembles several forms over the free dofs. Element matrices are computed
/// in parallel and scattered in cell order, so the result does not depend on
/// the thread count.
pub fn assemble_kernels(
    mesh: &ShellMesh,
    dofs: &DofMap,
    pattern: &Pattern,
    kernels: &[Kernel<'_>],
    options: &AssemblyOptions,
) -> Result<Vec<SparseSym>> {
    if dofs.n_nodes() != mesh.n_nodes() {
        return Err(Error::Dimension { expected: mesh.n_nodes(), found: dofs.n_nodes() });
    }
    let needed = assembly_bytes(pattern, kernels.len());
    if needed > options.memory_cap {
        return Err(Error::MemoryBudget { needed, cap: options.memory_cap });
    }
    let mut out: Vec<SparseSym> = kernels.iter().map(|_| pattern.empty()).collect();
    let n_cells = mesh.cells().len();
    for start in (0..n_cells).step_by(CELL_CHUNK * rayon::current_num_threads().max(1)) {
        let end = (start + CELL_CHUNK * rayon::current_num_threads().max(1)).min(n_cells);
        let blocks: Vec<Vec<Box<ElemMat>>> = (start..end)
            .into_par_iter()
            .map(|cell| {
                let qps = mesh.cell_quadrature(cell);
                kernels
                    .iter()
                    .map(|k| {
                        let mut m = Box::new(ElemMat::zeros());
                        for (q, qp) in qps.iter().enumerate() {
                            let w = match options.weighting {
                                Weighting::Volume => qp.weight,
                                Weighting::Midsurface => qp.mid_weight,
                            };
                            k.accumulate(cell, q, qp, w, &mut m);
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        for (offset, mats) in blocks.iter().enumerate() {
            let cell = &mesh.cells()[start + offset];
            scatter(pattern, dofs, &cell.nodes, mats, &mut out);
        }
    }
    Ok(out)
}

fn scatter(pattern: &Pattern, dofs: &DofMap, nodes: &[usize; 8], mats: &[Box<ElemMat>], out: &mut [SparseSym]) {
    let free: [Option<usize>; 8] = std::array::from_fn(|a| dofs.node_dof(nodes[a]));
    for a in 0..8 {
        let Some(ra) = free[a] else { continue };
        for b in 0..8 {
            let Some(rb) = free[b] else { continue };
            let base = pattern.block_offset(ra, rb);
            for i in 0..3 {
                let row_start = pattern.row_ptr[ra + i];
                let pos = row_start + (base - pattern.row_ptr[ra]);
                for k in 0..3 {
                    for (m, mat) in out.iter_mut().zip(mats) {
                        m.values[pos + k] += mat[(3 * a + i, 3 * b + k)];
                    }
                }
            }
        }
    }
}

/// The assembled quadratic forms of one mesh.
#[derive(Debug, Clone)]
pub struct FormPencil {
    forms: BTreeMap<FormId, SparseSym>,
    pattern: Pattern,
    pub quadrature_order: usize,
    pub n_cells: usize,
    pub thickness: f64,
}

impl FormPencil {
    pub fn get(&self, id: FormId) -> Result<&SparseSym> {
        self.forms.get(&id).ok_or_else(|| Error::Precondition(format!("form {id:?} was not assembled")))
    }

    pub fn n_free(&self) -> usize {
        self.pattern.dim()
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn ids(&self) -> impl Iterator<Item = FormId> + '_ {
        self.forms.keys().copied()
    }

    /// Value of a form on a free-dof vector.
    pub fn quad(&self, id: FormId, x: &[f64]) -> Result<f64> {
        Ok(self.get(id)?.quad(x))
    }

    /// Pencil with a single numerator/denominator pair, for tests and oracles.
    pub fn from_forms(pattern: Pattern, forms: BTreeMap<FormId, SparseSym>) -> Self {
        Self { forms, pattern, quadrature_order: 2, n_cells: 0, thickness: 0.0 }
    }

    pub fn insert(&mut self, id: FormId, m: SparseSym) {
        self.forms.insert(id, m);
    }
}

/// Assembles every form over the free dofs.
pub fn assemble_forms(mesh: &ShellMesh, dofs: &DofMap) -> Result<FormPencil> {
    assemble_selected(mesh, dofs, &FormId::ALL, &AssemblyOptions::default())
}

pub fn assemble_selected(mesh: &ShellMesh, dofs: &DofMap, ids: &[FormId], options: &AssemblyOptions) -> Result<FormPencil> {
    let pattern = Pattern::build(mesh, dofs);
    let kernels: Vec<Kernel> = ids.iter().map(|&id| Kernel::Form(id)).collect();
    let mats = assemble_kernels(mesh, dofs, &pattern, &kernels, options)?;
    Ok(FormPencil {
        forms: ids.iter().copied().zip(mats).collect(),
        pattern,
        quadrature_order: 2,
        n_cells: mesh.cells().len(),
        thickness: mesh.thickness(),
    })
}

/// Weighted L2 norms of a field evaluated directly by quadrature, independent
/// of the assembled matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldNorms {
    pub strain: f64,
    pub gradient: f64,
    pub mass: f64,
    pub normal: f64,
    pub theta: f64,
    pub z: f64,
}

pub fn field_norms(field: &DisplacementField, mesh: &ShellMesh) -> FieldNorms {
    let per_cell: Vec<FieldNorms> = (0..mesh.cells().len())
        .into_par_iter()
        .map(|cell| {
            let c = &mesh.cells()[cell];
            let mut acc = FieldNorms::default();
            for qp in mesh.cell_quadrature(cell).iter() {
                let mut u = Vec3::zeros();
                let mut grad = Matrix3::zeros();
                for a in 0..8 {
                    let v = field.values[c.nodes[a]];
                    u += qp.shape[a] * v;
                    grad += v * qp.grad[a].transpose();
                }
                let w = qp.weight;
                acc.gradient += w * grad.norm_squared();
                acc.strain += w * sym(&grad).norm_squared();
                acc.mass += w * u.norm_squared();
                acc.normal += w * qp.normal.dot(&u).powi(2);
                acc.theta += w * qp.e_theta.dot(&u).powi(2);
                acc.z += w * qp.e_z.dot(&u).powi(2);
            }
            acc
        })
        .collect();
    per_cell.iter().fold(FieldNorms::default(), |mut s, c| {
        s.strain += c.strain;
        s.gradient += c.gradient;
        s.mass += c.mass;
        s.normal += c.normal;
        s.theta += c.theta;
        s.z += c.z;
        s
    })
}
