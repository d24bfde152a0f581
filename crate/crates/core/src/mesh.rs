//! Structured hexahedral discretization of the shell `{x + t n(x)}`.
//!
//! Cells are boxes in `(theta, z, t)` parameter space. The physical map is the
//! exact shell map `r(theta, z) + t n(theta, z)`; shape functions are
//! trilinear in the parameters. At a polar chart the `z = z1` nodes collapse
//! to one node per thickness layer and the adjacent cells degenerate to wedges.

use std::io::Write;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::surface::{SurfacePatch, Vec3};

/// Reference coordinate of the two-point Gauss rule.
pub const GAUSS_G: f64 = 0.577_350_269_189_625_8;

/// Local node order: bit 0 selects theta, bit 1 selects z, bit 2 selects t.
const CORNERS: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [-1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// How shape-function gradients are mapped to Cartesian coordinates.
///
/// Quadrature weights always use the exact shell map. With `Isoparametric`
/// the gradients come from the trilinear interpolant of the nodal positions,
/// so interpolated rigid motions are strain free; with `Exact` they come from
/// the exact shell map, matching the curvilinear gradient formula pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMap {
    #[default]
    Isoparametric,
    Exact,
}

/// Local refinement of the in-plane grid around a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grading {
    pub center: (f64, f64),
    pub radius: f64,
    /// Density multiplier inside the radius (2 doubles the resolution).
    pub factor: f64,
    /// Grade only the `z` axis, used for polar centers.
    pub z_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub theta: f64,
    pub z: f64,
    pub t: f64,
    pub x: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Global node ids in local order (may repeat at a pole).
    pub nodes: [usize; 8],
    pub theta: (f64, f64),
    pub z: (f64, f64),
    pub t: (f64, f64),
}

impl Cell {
    pub fn center(&self) -> (f64, f64, f64) {
        (
            0.5 * (self.theta.0 + self.theta.1),
            0.5 * (self.z.0 + self.z.1),
            0.5 * (self.t.0 + self.t.1),
        )
    }
}

/// Data at one quadrature point of a cell.
#[derive(Debug, Clone, Copy)]
pub struct QuadPoint {
    pub theta: f64,
    pub z: f64,
    pub t: f64,
    pub x: Vec3,
    /// Quadrature weight times the volume Jacobian.
    pub weight: f64,
    /// Quadrature weight with the thickness-independent factor `A_theta A_z`.
    pub mid_weight: f64,
    pub shape: [f64; 8],
    /// Cartesian gradients of the shape functions.
    pub grad: [Vec3; 8],
    pub normal: Vec3,
    pub e_theta: Vec3,
    pub e_z: Vec3,
    /// `A_theta A_z`, the weight of the mid-surface inner product.
    pub area_factor: f64,
    pub kappa: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct ShellMesh {
    surface: SurfacePatch,
    h: f64,
    resolution: (usize, usize, usize),
    theta_nodes: Vec<f64>,
    z_nodes: Vec<f64>,
    t_nodes: Vec<f64>,
    nodes: Vec<Node>,
    cells: Vec<Cell>,
    grading: Option<Grading>,
    gradient_map: GradientMap,
}

/// Checks the thickness against the curvature bound `h max(kappa) / 2 < 1`.
pub fn check_thickness(surface: &SurfacePatch, h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("thickness {h} must be positive")));
    }
    let ratio = 0.5 * h * surface.max_curvature(64);
    if ratio >= 1.0 {
        return Err(Error::ThicknessTooLarge { h, ratio });
    }
    Ok(())
}

pub fn build_shell_mesh(surface: &SurfacePatch, h: f64, resolution: (usize, usize, usize)) -> Result<ShellMesh> {
    build_graded_mesh(surface, h, resolution, None)
}

/// Builds the mesh with optional local in-plane refinement.
pub fn build_graded_mesh(
    surface: &SurfacePatch,
    h: f64,
    resolution: (usize, usize, usize),
    grading: Option<Grading>,
) -> Result<ShellMesh> {
    let (nt, nz, nl) = resolution;
    if nt < 8 || nz < 8 || nl < 2 {
        return Err(Error::ResolutionTooSmall(resolution));
    }
    check_thickness(surface, h)?;
    let (z1, z2) = surface.band();

    let (theta_nodes, z_nodes) = match grading {
        Some(g) if g.factor > 1.0 && g.radius > 0.0 => {
            let zs = graded_axis(z1, z2, nz, g.center.1 - g.radius, g.center.1 + g.radius, g.factor);
            let ts = if g.z_only {
                uniform_axis(0.0, 1.0, nt)
            } else if surface.is_periodic() {
                periodic_graded_axis(nt, g.center.0, g.radius, g.factor)
            } else {
                graded_axis(0.0, 1.0, nt, g.center.0 - g.radius, g.center.0 + g.radius, g.factor)
            };
            (ts, zs)
        }
        _ => (uniform_axis(0.0, 1.0, nt), uniform_axis(z1, z2, nz)),
    };
    let t_nodes = uniform_axis(-0.5 * h, 0.5 * h, nl);

    let periodic = surface.is_periodic();
    let polar = surface.is_polar();
    let n_theta_nodes = if periodic { nt } else { nt + 1 };

    let mut index = vec![usize::MAX; n_theta_nodes * (nz + 1) * (nl + 1)];
    let key = |i: usize, j: usize, k: usize| (i * (nz + 1) + j) * (nl + 1) + k;
    let mut nodes = Vec::new();
    let pole = if polar { Some((surface.position(0.0, z1), surface.pole_normal())) } else { None };

    for i in 0..n_theta_nodes {
        for j in 0..=nz {
            for k in 0..=nl {
                let t = t_nodes[k];
                if j == 0 {
                    if let Some((p, n)) = pole {
                        if i > 0 {
                            index[key(i, j, k)] = index[key(0, j, k)];
                            continue;
                        }
                        index[key(i, j, k)] = nodes.len();
                        nodes.push(Node { theta: 0.0, z: z1, t, x: p + t * n });
                        continue;
                    }
                }
                let (th, z) = (theta_nodes[i], z_nodes[j]);
                let f = surface.frame_unchecked(th, z);
                index[key(i, j, k)] = nodes.len();
                nodes.push(Node { theta: th, z, t, x: f.position + t * f.normal });
            }
        }
    }

    let mut cells = Vec::with_capacity(nt * nz * nl);
    for i in 0..nt {
        let i1 = if periodic { (i + 1) % nt } else { i + 1 };
        let th1 = if periodic && i + 1 == nt { 1.0 } else { theta_nodes[i + 1] };
        for j in 0..nz {
            for k in 0..nl {
                let mut ids = [0; 8];
                for (a, id) in ids.iter_mut().enumerate() {
                    let ii = if a & 1 == 0 { i } else { i1 };
                    let jj = j + ((a >> 1) & 1);
                    let kk = k + ((a >> 2) & 1);
                    *id = index[key(ii, jj, kk)];
                }
                cells.push(Cell {
                    nodes: ids,
                    theta: (theta_nodes[i], th1),
                    z: (z_nodes[j], z_nodes[j + 1]),
                    t: (t_nodes[k], t_nodes[k + 1]),
                });
            }
        }
    }

    Ok(ShellMesh {
        surface: surface.clone(),
        h,
        resolution,
        theta_nodes,
        z_nodes,
        t_nodes,
        nodes,
        cells,
        grading,
        gradient_map: GradientMap::default(),
    })
}

fn uniform_axis(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}

/// Nodes on `[a, b]` whose density is `factor` times higher on `[lo, hi]`.
fn graded_axis(a: f64, b: f64, n: usize, lo: f64, hi: f64, factor: f64) -> Vec<f64> {
    let lo = lo.clamp(a, b);
    let hi = hi.clamp(a, b);
    // Piecewise-constant density; nodes at equal increments of its integral.
    let segs = [(a, lo, 1.0), (lo, hi, factor), (hi, b, 1.0)];
    let total: f64 = segs.iter().map(|(x0, x1, d)| (x1 - x0) * d).sum();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i == n {
            out.push(b);
            continue;
        }
        let mut target = total * i as f64 / n as f64;
        let mut x = b;
        for &(x0, x1, d) in &segs {
            let mass = (x1 - x0) * d;
            if target <= mass && mass > 0.0 {
                x = x0 + target / d;
                break;
            }
            target -= mass;
        }
        out.push(x);
    }
    out
}

fn periodic_graded_axis(n: usize, center: f64, radius: f64, factor: f64) -> Vec<f64> {
    // Grade on a window centered at 0.5, then shift so the window sits at `center`.
    let shift = center - 0.5;
    let local = graded_axis(0.0, 1.0, n, 0.5 - radius, 0.5 + radius, factor);
    let mut pts: Vec<f64> = local[..n].iter().map(|x| (x + shift).rem_euclid(1.0)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.push(1.0);
    pts
}

/// Trilinear shape values and reference derivatives at `xi`.
pub fn trilinear(xi: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut n = [0.0; 8];
    let mut dn = [[0.0; 3]; 8];
    for a in 0..8 {
        let c = CORNERS[a];
        let f = [0.5 * (1.0 + c[0] * xi[0]), 0.5 * (1.0 + c[1] * xi[1]), 0.5 * (1.0 + c[2] * xi[2])];
        n[a] = f[0] * f[1] * f[2];
        dn[a] = [0.5 * c[0] * f[1] * f[2], 0.5 * c[1] * f[0] * f[2], 0.5 * c[2] * f[0] * f[1]];
    }
    (n, dn)
}

impl ShellMesh {
    pub fn surface(&self) -> &SurfacePatch {
        &self.surface
    }

    pub fn thickness(&self) -> f64 {
        self.h
    }

    pub fn resolution(&self) -> (usize, usize, usize) {
        self.resolution
    }

    pub fn with_gradient_map(mut self, map: GradientMap) -> Self {
        self.gradient_map = map;
        self
    }

    pub fn gradient_map(&self) -> GradientMap {
        self.gradient_map
    }

    pub fn grading(&self) -> Option<Grading> {
        self.grading
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn theta_nodes(&self) -> &[f64] {
        &self.theta_nodes
    }

    pub fn z_nodes(&self) -> &[f64] {
        &self.z_nodes
    }

    pub fn t_nodes(&self) -> &[f64] {
        &self.t_nodes
    }

    /// Largest in-plane parameter spacing.
    pub fn max_spacing(&self) -> f64 {
        let dz = self.z_nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let dt = self.theta_nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        dz.max(dt)
    }

    /// In-plane spacing in `z` near a parameter value.
    pub fn z_spacing_at(&self, z: f64) -> f64 {
        let j = self.z_nodes.partition_point(|&v| v <= z).clamp(1, self.z_nodes.len() - 1);
        self.z_nodes[j] - self.z_nodes[j - 1]
    }

    /// Min and max over cells of (longest edge / thickness-layer height), in physical lengths.
    pub fn aspect_ratios(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let layer = self.h / self.resolution.2 as f64;
        for c in &self.cells {
            let x = |a: usize| self.nodes[c.nodes[a]].x;
            let e1 = (x(1) - x(0)).norm().max((x(3) - x(2)).norm());
            let e2 = (x(2) - x(0)).norm().max((x(3) - x(1)).norm());
            let r = e1.max(e2) / layer;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    }

    /// Quadrature data on a cell with the 2x2x2 Gauss rule.
    pub fn cell_quadrature(&self, cell: usize) -> [QuadPoint; 8] {
        self.cell_quadrature_with(cell, &[(-GAUSS_G, 1.0), (GAUSS_G, 1.0)])
    }

    /// Quadrature data on a cell with a tensor rule given as (point, weight) on [-1, 1].
    pub fn cell_quadrature_with<const N: usize>(&self, cell: usize, rule: &[(f64, f64)]) -> [QuadPoint; N] {
        let c = &self.cells[cell];
        let half = [0.5 * (c.theta.1 - c.theta.0), 0.5 * (c.z.1 - c.z.0), 0.5 * (c.t.1 - c.t.0)];
        let mid = [0.5 * (c.theta.1 + c.theta.0), 0.5 * (c.z.1 + c.z.0), 0.5 * (c.t.1 + c.t.0)];
        let m = rule.len();
        assert_eq!(m * m * m, N, "rule size does not match output length");
        std::array::from_fn(|q| {
            let (a, b, d) = (q % m, (q / m) % m, q / (m * m));
            let xi = [rule[a].0, rule[b].0, rule[d].0];
            let w = rule[a].1 * rule[b].1 * rule[d].1;
            let theta = mid[0] + half[0] * xi[0];
            let z = mid[1] + half[1] * xi[1];
            let t = mid[2] + half[2] * xi[2];
            let f = self.surface.frame_unchecked(theta, z);
            let col0 = f.a_theta * f.e_theta + t * f.dn[0];
            let col1 = f.a_z * f.e_z + t * f.dn[1];
            let jac = Matrix3::from_columns(&[col0, col1, f.normal]);
            let det = jac.determinant();
            let (shape, dref) = trilinear(xi);
            let map = match self.gradient_map {
                GradientMap::Exact => jac,
                GradientMap::Isoparametric => {
                    let mut m = Matrix3::zeros();
                    for a in 0..8 {
                        let x = self.nodes[c.nodes[a]].x;
                        let dp = Vec3::new(dref[a][0] / half[0], dref[a][1] / half[1], dref[a][2] / half[2]);
                        m += x * dp.transpose();
                    }
                    m
                }
            };
            let inv_t = map.try_inverse().expect("singular shell map").transpose();
            let grad = std::array::from_fn(|i| {
                let dp = Vec3::new(dref[i][0] / half[0], dref[i][1] / half[1], dref[i][2] / half[2]);
                inv_t * dp
            });
            QuadPoint {
                theta,
                z,
                t,
                x: f.position + t * f.normal,
                weight: w * det.abs() * half[0] * half[1] * half[2],
                mid_weight: w * f.a_theta * f.a_z * half[0] * half[1] * half[2],
                shape,
                grad,
                normal: f.normal,
                e_theta: f.e_theta,
                e_z: f.e_z,
                area_factor: f.a_theta * f.a_z,
                kappa: (f.kappa_theta, f.kappa_z),
            }
        })
    }

    /// Total weighted volume with the 2x2x2 rule.
    pub fn volume(&self) -> f64 {
        (0..self.cells.len()).map(|c| self.cell_quadrature(c).iter().map(|q| q.weight).sum::<f64>()).sum()
    }

    /// Writes the node and cell tables as whitespace-separated text.
    ///
    /// Nodes: `id theta z t x y z`. Cells: `id n0 .. n7` in local order
    /// (bit 0 theta, bit 1 z, bit 2 t).
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# nodes {}: id theta z t x y z", self.nodes.len())?;
        for (i, n) in self.nodes.iter().enumerate() {
            writeln!(w, "{i} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}", n.theta, n.z, n.t, n.x.x, n.x.y, n.x.z)?;
        }
        writeln!(w, "# cells {}: id n0 n1 n2 n3 n4 n5 n6 n7", self.cells.len())?;
        for (i, c) in self.cells.iter().enumerate() {
            let ids: Vec<String> = c.nodes.iter().map(|n| n.to_string()).collect();
            writeln!(w, "{i} {}", ids.join(" "))?;
        }
        Ok(())
    }

    /// Whether a node lies on the clamped lateral boundary.
    fn on_lateral_boundary(&self, node: &Node) -> bool {
        let (z1, z2) = self.surface.band();
        let tol = 1e-12;
        let z_edge = (node.z - z2).abs() < tol || (!self.surface.is_polar() && (node.z - z1).abs() < tol);
        let theta_edge = !self.surface.is_periodic() && (node.theta < tol || (node.theta - 1.0).abs() < tol);
        z_edge || theta_edge
    }
}

/// Degree-of-freedom numbering with the clamped lateral boundary removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DofMap {
    /// First dof of each node, or `None` when the node is clamped.
    node_dof: Vec<Option<usize>>,
    n_free: usize,
}

impl DofMap {
    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_nodes(&self) -> usize {
        self.node_dof.len()
    }

    pub fn node_dof(&self, node: usize) -> Option<usize> {
        self.node_dof[node]
    }

    pub fn is_masked(&self, node: usize) -> bool {
        self.node_dof[node].is_none()
    }

    pub fn masked_count(&self) -> usize {
        self.node_dof.iter().filter(|d| d.is_none()).count()
    }

    /// Every node free, as for rigid-motion checks.
    pub fn unconstrained(mesh: &ShellMesh) -> Self {
        Self { node_dof: (0..mesh.n_nodes()).map(|i| Some(3 * i)).collect(), n_free: 3 * mesh.n_nodes() }
    }
}

/// Clamps every node whose `(theta, z)` lies on the boundary of the parameter domain.
pub fn tag_dirichlet(mesh: &ShellMesh) -> DofMap {
    let mut next = 0;
    let node_dof = mesh
        .nodes
        .iter()
        .map(|n| {
            if mesh.on_lateral_boundary(n) {
                None
            } else {
                next += 3;
                Some(next - 3)
            }
        })
        .collect();
    DofMap { node_dof, n_free: next }
}

/// Cells whose parameter-space center lies in a closed disc.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSet {
    pub cells: Vec<usize>,
    pub center: (f64, f64),
    pub radius: f64,
}

impl CellSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }
}

/// Cells of the shell over the disc of the given radius; a polar center
/// measures distance along `z` only.
pub fn subdomain(mesh: &ShellMesh, center: (f64, f64), radius: f64) -> Result<CellSet> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("subdomain radius {radius} must be positive")));
    }
    let polar = mesh.surface.is_polar() && (center.1 - mesh.surface.band().0).abs() < 1e-12;
    let cells = mesh
        .cells
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let (th, z, _) = c.center();
            mesh.surface.param_distance(th, z, center, polar) <= radius
        })
        .map(|(i, _)| i)
        .collect();
    Ok(CellSet { cells, center, radius })
}
