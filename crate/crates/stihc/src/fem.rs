//! Mass and stiffness matrices of the linear finite-element basis and the
//! squared-Laplacian roughness penalty built from them.
//!
//! Piecewise-linear elements have zero Laplacian inside each triangle, so the
//! curvature functional is discretized through a mixed formulation: the
//! Laplacian of the field is recovered weakly from the stiffness matrix and
//! integrated against itself through the mass matrix. The weak identity
//! `integral(g v) = -integral(grad f . grad v)` holds without a boundary-flux
//! term only for test functions vanishing on the boundary, so the recovery is
//! restricted to interior nodes:
//!
//! `P = B' M^-1 B + tau R1`
//!
//! where `B` collects the interior rows of the stiffness matrix R1, `M` is the
//! interior block of the mass matrix R0, and `tau R1` is a gradient ridge with
//! a weight that vanishes under mesh refinement. The ridge pins the null space
//! of P to the constant fields (discretely harmonic fields would otherwise be
//! penalty-free), while the first term converges to the true curvature
//! integral for smooth fields.

use std::io::Write;

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::SymSolver;
use crate::mesh::Mesh;

/// Largest node count for which the penalty is materialized densely.
/// Covers the scales this crate targets (a few thousand spots).
pub const MAX_DENSE_NODES: usize = 4000;

/// Symmetric sparse matrix in compressed-row form (full storage).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseSym {
    fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> SparseSym {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0usize; n + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                last = Some((i, j));
            }
            indptr[i + 1] = indices.len();
        }
        // Rows with no entries inherit the previous offset.
        for i in 0..n {
            indptr[i + 1] = indptr[i + 1].max(indptr[i]);
        }
        SparseSym { n, indptr, indices, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Value at (i, j); zero if the entry is not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        match self.indices[lo..hi].binary_search(&j) {
            Ok(k) => self.data[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
        y
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[k])] = self.data[k];
            }
        }
        m
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.indptr[i]..self.indptr[i + 1]).map(move |k| (i, self.indices[k], self.data[k]))
        })
    }

    /// Write in MatrixMarket coordinate format (general symmetric entries,
    /// full storage).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n, self.n, self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

fn triangle_geometry(mesh: &Mesh, t: usize) -> ([usize; 3], f64, [f64; 3], [f64; 3]) {
    let tri = mesh.triangles()[t];
    let p: Vec<_> = tri.iter().map(|&v| mesh.nodes()[v]).collect();
    let area = 0.5 * mesh.double_area(t);
    // Gradient coefficients of the barycentric coordinates:
    // grad(phi_i) = (b_i, c_i) / (2 area), indices cyclic.
    let b = [p[1].y - p[2].y, p[2].y - p[0].y, p[0].y - p[1].y];
    let c = [p[2].x - p[1].x, p[0].x - p[2].x, p[1].x - p[0].x];
    (tri, area, b, c)
}

fn check_degenerate(mesh: &Mesh) -> Result<f64> {
    let total = mesh.area();
    for t in 0..mesh.triangle_count() {
        let area = 0.5 * mesh.double_area(t);
        if area < 1e-12 * total {
            return Err(Error::DegenerateTriangle { index: t, area });
        }
    }
    Ok(total)
}

/// Mass matrix R0 with entries `integral(phi_i phi_j)`.
///
/// Element contribution for a triangle of area A is
/// `A/12 * [[2,1,1],[1,2,1],[1,1,2]]` scattered to its vertices.
pub fn assemble_mass(mesh: &Mesh) -> Result<SparseSym> {
    check_degenerate(mesh)?;
    let mut triplets = Vec::with_capacity(9 * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let (tri, area, _, _) = triangle_geometry(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                let v = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(SparseSym::from_triplets(mesh.node_count(), triplets))
}

/// Stiffness matrix R1 with entries `integral(grad(phi_i) . grad(phi_j))`.
pub fn assemble_stiffness(mesh: &Mesh) -> Result<SparseSym> {
    check_degenerate(mesh)?;
    let mut triplets = Vec::with_capacity(9 * mesh.triangle_count());
    for t in 0..mesh.triangle_count() {
        let (tri, area, b, c) = triangle_geometry(mesh, t);
        for i in 0..3 {
            for j in 0..3 {
                let v = (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(SparseSym::from_triplets(mesh.node_count(), triplets))
}

/// Nodes lying on the mesh boundary (incident to an edge with no twin).
pub fn boundary_nodes(mesh: &Mesh) -> Vec<bool> {
    let mut boundary = vec![false; mesh.node_count()];
    for (t, nbrs) in mesh.neighbors().iter().enumerate() {
        for k in 0..3 {
            if nbrs[k].is_none() {
                let tri = mesh.triangles()[t];
                boundary[tri[k]] = true;
                boundary[tri[(k + 1) % 3]] = true;
            }
        }
    }
    boundary
}

/// Gradient-ridge weight: mean triangle area over squared domain area, so the
/// ridge contribution vanishes under refinement.
pub fn penalty_ridge(mesh: &Mesh) -> f64 {
    let area = mesh.area();
    2.0 / (mesh.triangle_count() as f64 * area)
}

/// Squared-Laplacian penalty, materialized densely and symmetrized against
/// rounding. See the module docs for the construction.
pub fn assemble_penalty(mesh: &Mesh, mass: &SparseSym, stiffness: &SparseSym) -> Result<Mat<f64>> {
    let k = mass.n();
    if k > MAX_DENSE_NODES {
        return Err(Error::InvalidConfig(format!(
            "penalty assembly supports up to {MAX_DENSE_NODES} nodes, got {k}"
        )));
    }
    let boundary = boundary_nodes(mesh);
    let interior: Vec<usize> = (0..k).filter(|&i| !boundary[i]).collect();
    let tau = penalty_ridge(mesh);
    let mut p = Mat::zeros(k, k);
    if !interior.is_empty() {
        let m = interior.len();
        let mut mass_ii = Mat::zeros(m, m);
        for (a, &i) in interior.iter().enumerate() {
            for (b, &j) in interior.iter().enumerate() {
                mass_ii[(a, b)] = mass.get(i, j);
            }
        }
        let solver = SymSolver::new(&mass_ii).ok_or(Error::SingularMass)?;
        let mut b_rows = Mat::zeros(m, k);
        for (a, &i) in interior.iter().enumerate() {
            for j in 0..k {
                b_rows[(a, j)] = stiffness.get(i, j);
            }
        }
        let x = solver.solve_mat(&b_rows);
        p = b_rows.transpose() * &x;
    }
    for (i, j, v) in stiffness.entries() {
        p[(i, j)] += tau * v;
    }
    let mut sym = Mat::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            sym[(i, j)] = 0.5 * (p[(i, j)] + p[(j, i)]);
        }
    }
    Ok(sym)
}

/// The assembled trio used throughout the fitting step.
pub struct PenaltyMatrices {
    pub mass: SparseSym,
    pub stiffness: SparseSym,
    penalty: Mat<f64>,
    interior: Vec<usize>,
    interior_mass_solver: Option<SymSolver>,
    ridge: f64,
}

impl PenaltyMatrices {
    pub fn assemble(mesh: &Mesh) -> Result<PenaltyMatrices> {
        let mass = assemble_mass(mesh)?;
        let stiffness = assemble_stiffness(mesh)?;
        let penalty = assemble_penalty(mesh, &mass, &stiffness)?;
        let boundary = boundary_nodes(mesh);
        let interior: Vec<usize> =
            (0..mesh.node_count()).filter(|&i| !boundary[i]).collect();
        let interior_mass_solver = if interior.is_empty() {
            None
        } else {
            let m = interior.len();
            let mut mass_ii = Mat::zeros(m, m);
            for (a, &i) in interior.iter().enumerate() {
                for (b, &j) in interior.iter().enumerate() {
                    mass_ii[(a, b)] = mass.get(i, j);
                }
            }
            Some(SymSolver::new(&mass_ii).ok_or(Error::SingularMass)?)
        };
        let ridge = penalty_ridge(mesh);
        Ok(PenaltyMatrices { mass, stiffness, penalty, interior, interior_mass_solver, ridge })
    }

    pub fn node_count(&self) -> usize {
        self.mass.n()
    }

    pub fn penalty(&self) -> &Mat<f64> {
        &self.penalty
    }

    pub fn penalty_trace(&self) -> f64 {
        (0..self.mass.n()).map(|i| self.penalty[(i, i)]).sum()
    }

    /// Apply P through the interior mass factorization instead of the dense
    /// matrix.
    pub fn apply_penalty_factored(&self, c: &[f64]) -> Vec<f64> {
        let r1c = self.stiffness.matvec(c);
        let mut out: Vec<f64> = r1c.iter().map(|v| self.ridge * v).collect();
        if let Some(solver) = &self.interior_mass_solver {
            let rhs: Vec<f64> = self.interior.iter().map(|&i| r1c[i]).collect();
            let g = solver.solve_vec(&rhs);
            // Scatter B' g back to the full node set.
            let k = self.mass.n();
            let mut g_full = vec![0.0; k];
            for (a, &i) in self.interior.iter().enumerate() {
                g_full[i] = g[a];
            }
            let bt_g = self.stiffness.matvec(&g_full);
            for (o, v) in out.iter_mut().zip(&bt_g) {
                *o += v;
            }
        }
        out
    }

    /// Quadratic form `c' P c` through the interior mass factorization.
    pub fn penalty_quad_form_factored(&self, c: &[f64]) -> f64 {
        let r1c = self.stiffness.matvec(c);
        let mut acc = self.ridge * r1c.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        if let Some(solver) = &self.interior_mass_solver {
            let rhs: Vec<f64> = self.interior.iter().map(|&i| r1c[i]).collect();
            let g = solver.solve_vec(&rhs);
            acc += rhs.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    /// Quadratic form `c' P c` through the dense penalty.
    pub fn penalty_quad_form(&self, c: &[f64]) -> f64 {
        let k = self.mass.n();
        let mut acc = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += self.penalty[(i, j)] * c[j];
            }
            acc += row * c[i];
        }
        acc
    }
}
