//! P1 finite elements on the structured unit-square meshes: stiffness and
//! mass assembly, Nitsche boundary forms, the normal-gradient jump penalty,
//! a boundary H^{1/2} surrogate, the nonlinear energy
//! `E(v) = \int 1/2 (1 + v^2) |grad v|^2` with its exact gradient, and a
//! damped Newton solver that serves as the reference solution operator.
//!
//! All element integrals use a 6-point triangle rule exact for degree-4
//! integrands, so quadrature never shows up as an error term in the
//! finite-difference gradient checks or the validation norms.

use crate::linalg::{self, LinalgError, SparseMatrix};
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("field has {got} DoFs but mesh with n={mesh_n} needs {expected}")]
    FieldSizeMismatch { mesh_n: usize, expected: usize, got: usize },
    #[error("boundary data has {got} values, mesh has {expected} boundary nodes")]
    BoundarySizeMismatch { expected: usize, got: usize },
    #[error("element subset is empty")]
    EmptyElementSubset,
    #[error("penalty parameter must be positive, got {0}")]
    BadPenalty(f64),
    #[error("Newton line search failed to decrease the energy (iteration {iteration})")]
    LineSearchFailure { iteration: usize },
    #[error("Newton did not reach tolerance {tol:.3e} in {max_iter} iterations (gradient norm {grad_norm:.3e})")]
    NewtonNonConvergence { tol: f64, max_iter: usize, grad_norm: f64 },
    #[error("meshes are not nested: fine n={fine} is not a multiple of coarse n={coarse}")]
    NotNested { coarse: usize, fine: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Finite element function: one value per mesh node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Field {
    pub mesh_n: usize,
    pub dofs: Vec<f64>,
}

impl Field {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            mesh_n: mesh.n_cells_per_side,
            dofs: vec![0.0; mesh.node_count()],
        }
    }

    /// Nodal interpolation of an analytic function.
    pub fn from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            mesh_n: mesh.n_cells_per_side,
            dofs: mesh.nodes.iter().map(|&[x, y]| f(x, y)).collect(),
        }
    }

    pub fn check(&self, mesh: &Mesh) -> Result<(), FemError> {
        if self.mesh_n != mesh.n_cells_per_side || self.dofs.len() != mesh.node_count() {
            return Err(FemError::FieldSizeMismatch {
                mesh_n: mesh.n_cells_per_side,
                expected: mesh.node_count(),
                got: self.dofs.len(),
            });
        }
        Ok(())
    }
}

/// Boundary nodal values of a field, ordered like `mesh.boundary_nodes`.
pub fn boundary_trace(mesh: &Mesh, field: &Field) -> Vec<f64> {
    mesh.boundary_nodes.iter().map(|&id| field.dofs[id]).collect()
}

/// Sample an analytic function at the boundary nodes (boundary order).
pub fn boundary_values_from_fn(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    mesh.boundary_nodes
        .iter()
        .map(|&id| f(mesh.nodes[id][0], mesh.nodes[id][1]))
        .collect()
}

/// 6-point triangle quadrature, exact for polynomials of degree 4.
/// Barycentric coordinates with weights summing to 1.
pub(crate) const QUAD_POINTS: [([f64; 3], f64); 6] = [
    (
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        0.223381589678011,
    ),
    (
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
        0.109951743655322,
    ),
];

/// Laplace stiffness matrix (pure `(grad v, grad w)` over the whole domain).
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let all: Vec<usize> = (0..mesh.triangle_count()).collect();
    assemble_subdomain_stiffness(mesh, &all)
}

/// Stiffness restricted to a set of elements.
pub fn assemble_subdomain_stiffness(mesh: &Mesh, elements: &[usize]) -> SparseMatrix {
    let n = mesh.node_count();
    let mut triplets = Vec::with_capacity(elements.len() * 9);
    for &t in elements {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Exact P1 mass matrix over a set of elements: `(v, w)` on omega.
pub fn assemble_subdomain_mass(mesh: &Mesh, elements: &[usize]) -> Result<SparseMatrix, FemError> {
    if elements.is_empty() {
        return Err(FemError::EmptyElementSubset);
    }
    let n = mesh.node_count();
    let mut triplets = Vec::with_capacity(elements.len() * 9);
    for &t in elements {
        let area = mesh.triangle_area(t);
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area / 12.0 * if i == j { 2.0 } else { 1.0 };
                triplets.push((tri[i], tri[j], v));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, n, &triplets))
}

/// Normal-gradient jump penalty `s_h(v, w) = sum_F h ([grad v] . n_F, [grad w] . n_F)_F`
/// over the interior faces.
pub fn assemble_jump_penalty(mesh: &Mesh) -> SparseMatrix {
    let n = mesh.node_count();
    let mut triplets = Vec::new();
    for face in &mesh.interior_faces {
        let [a, b] = face.nodes;
        let pa = mesh.nodes[a];
        let pb = mesh.nodes[b];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let nf = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
        // Jump coefficients: gradient contribution from the left triangle
        // minus the right one; the sign convention cancels in the product.
        let mut nodes: Vec<usize> = Vec::with_capacity(4);
        let mut coeffs: Vec<f64> = Vec::with_capacity(4);
        let add = |node: usize, c: f64, nodes: &mut Vec<usize>, coeffs: &mut Vec<f64>| {
            if let Some(pos) = nodes.iter().position(|&x| x == node) {
                coeffs[pos] += c;
            } else {
                nodes.push(node);
                coeffs.push(c);
            }
        };
        let (grads_l, _) = mesh.p1_gradients(face.left_tri);
        for (k, &node) in mesh.triangles[face.left_tri].iter().enumerate() {
            add(node, grads_l[k][0] * nf[0] + grads_l[k][1] * nf[1], &mut nodes, &mut coeffs);
        }
        let (grads_r, _) = mesh.p1_gradients(face.right_tri);
        for (k, &node) in mesh.triangles[face.right_tri].iter().enumerate() {
            add(node, -(grads_r[k][0] * nf[0] + grads_r[k][1] * nf[1]), &mut nodes, &mut coeffs);
        }
        let w = mesh.h * len;
        for i in 0..nodes.len() {
            for j in 0..nodes.len() {
                let v = w * coeffs[i] * coeffs[j];
                if v != 0.0 {
                    triplets.push((nodes[i], nodes[j], v));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Nitsche bilinear form and the operator that turns boundary data into the
/// matching right-hand side.
#[derive(Debug, Clone)]
pub struct NitscheForms {
    /// `a_h(v,w) = (grad v, grad w) - (dn v, w)_bnd - (v, dn w)_bnd + beta/h (v,w)_bnd`.
    pub a: SparseMatrix,
    /// Maps boundary data (embedded in a full DoF vector) to the load vector
    /// `l_{h,g}(v) = -(g, dn v)_bnd + beta/h (g, v)_bnd`.
    pub boundary_rhs: SparseMatrix,
    pub beta: f64,
}

pub fn assemble_nitsche(mesh: &Mesh, beta: f64) -> Result<NitscheForms, FemError> {
    if beta <= 0.0 {
        return Err(FemError::BadPenalty(beta));
    }
    let n = mesh.node_count();
    let mut a_triplets = Vec::new();
    let mut rhs_triplets = Vec::new();

    // Volume part.
    for t in 0..mesh.triangle_count() {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                let v = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                a_triplets.push((tri[i], tri[j], v));
            }
        }
    }

    // Boundary terms, edge by edge. Edge basis integrals for P1:
    // int_F phi = |F|/2, edge mass = |F| [[1/3, 1/6], [1/6, 1/3]].
    let penalty = beta / mesh.h;
    for edge in &mesh.boundary_edges {
        let [ea, eb] = edge.nodes;
        let pa = mesh.nodes[ea];
        let pb = mesh.nodes[eb];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let tri = mesh.triangles[edge.tri];
        let (grads, _) = mesh.p1_gradients(edge.tri);
        let dn: Vec<f64> = (0..3)
            .map(|k| grads[k][0] * edge.normal[0] + grads[k][1] * edge.normal[1])
            .collect();
        let edge_nodes = [ea, eb];
        // Consistency terms (both transposes) and penalty.
        for k in 0..3 {
            for &j in &edge_nodes {
                let v = dn[k] * len / 2.0;
                // -(dn v, w): trial v = hat at tri[k], test w = hat at j.
                a_triplets.push((j, tri[k], -v));
                // -(v, dn w): trial v = hat at j, test w = hat at tri[k].
                a_triplets.push((tri[k], j, -v));
                // RHS: -(g, dn w) with g carried by node j.
                rhs_triplets.push((tri[k], j, -v));
            }
        }
        for (li, &i) in edge_nodes.iter().enumerate() {
            for (lj, &j) in edge_nodes.iter().enumerate() {
                let m = len * if li == lj { 1.0 / 3.0 } else { 1.0 / 6.0 };
                a_triplets.push((i, j, penalty * m));
                rhs_triplets.push((i, j, penalty * m));
            }
        }
    }

    Ok(NitscheForms {
        a: SparseMatrix::from_triplets(n, n, &a_triplets),
        boundary_rhs: SparseMatrix::from_triplets(n, n, &rhs_triplets),
        beta,
    })
}

const NITSCHE_CG_TOL: f64 = 1e-12;

/// Solve the Nitsche system for Dirichlet data `g` given at the boundary
/// nodes (in `mesh.boundary_nodes` order).
pub fn nitsche_solve(forms: &NitscheForms, mesh: &Mesh, g: &[f64]) -> Result<Field, FemError> {
    if g.len() != mesh.boundary_node_count() {
        return Err(FemError::BoundarySizeMismatch {
            expected: mesh.boundary_node_count(),
            got: g.len(),
        });
    }
    let mut g_emb = vec![0.0; mesh.node_count()];
    for (pos, &id) in mesh.boundary_nodes.iter().enumerate() {
        g_emb[id] = g[pos];
    }
    let rhs = forms.boundary_rhs.matvec(&g_emb);
    let max_iter = 200 * mesh.n_cells_per_side + 2000;
    let dofs = linalg::cg_solve(&forms.a, &rhs, NITSCHE_CG_TOL, max_iter)?;
    Ok(Field { mesh_n: mesh.n_cells_per_side, dofs })
}

/// Boundary H^{1/2} surrogate applied to two boundary difference vectors
/// (discrete trace minus exact data, sampled at the boundary nodes):
/// `h^{-1} (d_a, d_b)_bnd + h (dT d_a, dT d_b)_bnd` with piecewise linear
/// interpolation along the boundary polygon.
pub fn boundary_stab_pair(mesh: &Mesh, diff_a: &[f64], diff_b: &[f64]) -> Result<f64, FemError> {
    let m = mesh.boundary_node_count();
    if diff_a.len() != m || diff_b.len() != m {
        return Err(FemError::BoundarySizeMismatch {
            expected: m,
            got: if diff_a.len() != m { diff_a.len() } else { diff_b.len() },
        });
    }
    let mut mass_term = 0.0;
    let mut tangent_term = 0.0;
    for k in 0..m {
        let k1 = (k + 1) % m;
        let pa = mesh.nodes[mesh.boundary_nodes[k]];
        let pb = mesh.nodes[mesh.boundary_nodes[k1]];
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let (a0, a1) = (diff_a[k], diff_a[k1]);
        let (b0, b1) = (diff_b[k], diff_b[k1]);
        mass_term += len / 6.0 * (2.0 * a0 * b0 + a0 * b1 + a1 * b0 + 2.0 * a1 * b1);
        tangent_term += (a1 - a0) * (b1 - b0) / len;
    }
    Ok(mass_term / mesh.h + mesh.h * tangent_term)
}

fn subset_scale(mesh: &Mesh, elements: Option<&[usize]>) -> Result<(Vec<usize>, f64), FemError> {
    match elements {
        None => Ok(((0..mesh.triangle_count()).collect(), 1.0)),
        Some([]) => Err(FemError::EmptyElementSubset),
        Some(list) => Ok((
            list.to_vec(),
            mesh.triangle_count() as f64 / list.len() as f64,
        )),
    }
}

/// Nonlinear energy `E(v) = int 1/2 (1 + v^2) |grad v|^2`. With an element
/// subset the sum is rescaled by (total elements)/(subset size), making the
/// subsampled value an unbiased estimator of the full energy under uniform
/// element draws.
pub fn nonlinear_energy(mesh: &Mesh, v: &Field, elements: Option<&[usize]>) -> Result<f64, FemError> {
    v.check(mesh)?;
    let (list, scale) = subset_scale(mesh, elements)?;
    let mut energy = 0.0;
    for &t in &list {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        let vals = [v.dofs[tri[0]], v.dofs[tri[1]], v.dofs[tri[2]]];
        let gx = vals[0] * grads[0][0] + vals[1] * grads[1][0] + vals[2] * grads[2][0];
        let gy = vals[0] * grads[0][1] + vals[1] * grads[1][1] + vals[2] * grads[2][1];
        let grad_sq = gx * gx + gy * gy;
        let mut acc = 0.0;
        for (bary, w) in QUAD_POINTS {
            let vq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
            acc += w * 0.5 * (1.0 + vq * vq) * grad_sq;
        }
        energy += area * acc;
    }
    Ok(scale * energy)
}

/// Exact gradient of [`nonlinear_energy`] with respect to every DoF, using
/// the same quadrature rule (so finite differences of the energy match it to
/// rounding).
pub fn nonlinear_energy_grad(
    mesh: &Mesh,
    v: &Field,
    elements: Option<&[usize]>,
) -> Result<Vec<f64>, FemError> {
    v.check(mesh)?;
    let (list, scale) = subset_scale(mesh, elements)?;
    let mut grad = vec![0.0; mesh.node_count()];
    for &t in &list {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        let vals = [v.dofs[tri[0]], v.dofs[tri[1]], v.dofs[tri[2]]];
        let gx = vals[0] * grads[0][0] + vals[1] * grads[1][0] + vals[2] * grads[2][0];
        let gy = vals[0] * grads[0][1] + vals[1] * grads[1][1] + vals[2] * grads[2][1];
        let grad_sq = gx * gx + gy * gy;
        let mut half_one_plus_vsq = 0.0; // sum_q w_q (1 + vq^2)/2
        for (bary, w) in QUAD_POINTS {
            let vq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
            half_one_plus_vsq += w * 0.5 * (1.0 + vq * vq);
            for k in 0..3 {
                grad[tri[k]] += scale * area * w * vq * bary[k] * grad_sq;
            }
        }
        for k in 0..3 {
            let dg = gx * grads[k][0] + gy * grads[k][1];
            grad[tri[k]] += scale * area * half_one_plus_vsq * 2.0 * dg;
        }
    }
    Ok(grad)
}

/// Hessian of the nonlinear energy (full domain), for the Newton solver.
fn nonlinear_energy_hessian(mesh: &Mesh, v: &Field) -> SparseMatrix {
    let n = mesh.node_count();
    let mut triplets = Vec::with_capacity(mesh.triangle_count() * 9);
    for t in 0..mesh.triangle_count() {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        let vals = [v.dofs[tri[0]], v.dofs[tri[1]], v.dofs[tri[2]]];
        let gx = vals[0] * grads[0][0] + vals[1] * grads[1][0] + vals[2] * grads[2][0];
        let gy = vals[0] * grads[0][1] + vals[1] * grads[1][1] + vals[2] * grads[2][1];
        let grad_sq = gx * gx + gy * gy;
        let dg: Vec<f64> = (0..3).map(|k| gx * grads[k][0] + gy * grads[k][1]).collect();
        let mut local = [[0.0f64; 3]; 3];
        for (bary, w) in QUAD_POINTS {
            let vq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
            let one_plus = 1.0 + vq * vq;
            for i in 0..3 {
                for j in 0..3 {
                    local[i][j] += w
                        * (bary[i] * bary[j] * grad_sq
                            + 2.0 * vq * (bary[i] * dg[j] + bary[j] * dg[i])
                            + one_plus * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]));
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], area * local[i][j]));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &triplets)
}

/// Linear harmonic extension of boundary data: strong Dirichlet Laplace solve.
/// Used as the Newton starting guess and as a competitor field in tests.
pub fn harmonic_extension(mesh: &Mesh, g: &[f64]) -> Result<Field, FemError> {
    if g.len() != mesh.boundary_node_count() {
        return Err(FemError::BoundarySizeMismatch {
            expected: mesh.boundary_node_count(),
            got: g.len(),
        });
    }
    let stiffness = assemble_stiffness(mesh);
    let mut dofs = vec![0.0; mesh.node_count()];
    for (pos, &id) in mesh.boundary_nodes.iter().enumerate() {
        dofs[id] = g[pos];
    }
    let interior = mesh.interior_nodes();
    if !interior.is_empty() {
        let coupled = stiffness.matvec(&dofs);
        let rhs: Vec<f64> = interior.iter().map(|&i| -coupled[i]).collect();
        let a_ii = stiffness.restrict(&interior);
        let x = linalg::cg_solve(&a_ii, &rhs, 1e-12, 200 * mesh.n_cells_per_side + 2000)?;
        for (k, &i) in interior.iter().enumerate() {
            dofs[i] = x[k];
        }
    }
    Ok(Field { mesh_n: mesh.n_cells_per_side, dofs })
}

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 30;

/// Minimize the nonlinear energy over interior DoFs with the boundary DoFs
/// fixed to `g` (boundary order). Damped Newton with CG inner solves and a
/// halving line search on the energy; converged when the interior gradient
/// norm drops to `tol`.
pub fn newton_solve_nonlinear(mesh: &Mesh, g: &[f64], tol: f64) -> Result<Field, FemError> {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut v = harmonic_extension(mesh, g)?;
    let interior = mesh.interior_nodes();
    let mut grad_norm = f64::INFINITY;
    for iteration in 0..NEWTON_MAX_ITER {
        let grad = nonlinear_energy_grad(mesh, &v, None)?;
        let g_int: Vec<f64> = interior.iter().map(|&i| grad[i]).collect();
        grad_norm = linalg::norm2(&g_int);
        if grad_norm <= tol {
            return Ok(v);
        }
        let hessian = nonlinear_energy_hessian(mesh, &v).restrict(&interior);
        let neg_g: Vec<f64> = g_int.iter().map(|x| -x).collect();
        let mut dir = match linalg::cg_solve(&hessian, &neg_g, 1e-10, 20 * interior.len() + 200) {
            Ok(d) => d,
            // Indefinite or ill-conditioned Hessian: fall back to steepest descent.
            Err(_) => neg_g.clone(),
        };
        if linalg::dot(&dir, &g_int) >= 0.0 {
            dir = neg_g.clone();
        }
        let e0 = nonlinear_energy(mesh, &v, None)?;
        // Once the predicted decrease drops to the rounding floor of the
        // energy, the line search cannot resolve it; take the full Newton
        // step (quadratic convergence regime).
        let predicted = -linalg::dot(&g_int, &dir);
        if predicted <= 1e-14 * e0.abs().max(1e-30) {
            for (k, &i) in interior.iter().enumerate() {
                v.dofs[i] += dir[k];
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let mut trial = v.clone();
            for (k, &i) in interior.iter().enumerate() {
                trial.dofs[i] += alpha * dir[k];
            }
            let e1 = nonlinear_energy(mesh, &trial, None)?;
            if e1 < e0 {
                v = trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(FemError::LineSearchFailure { iteration });
        }
    }
    Err(FemError::NewtonNonConvergence {
        tol,
        max_iter: NEWTON_MAX_ITER,
        grad_norm,
    })
}

/// L2 norm and H1 seminorm of a field over a region.
#[derive(Debug, Clone, Copy)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
}

impl Norms {
    /// Full H1 norm sqrt(l2^2 + |v|_1^2).
    pub fn h1_full(&self) -> f64 {
        (self.l2 * self.l2 + self.h1_semi * self.h1_semi).sqrt()
    }
}

/// Exact P1 quadrature of the L2 norm and H1 seminorm over the whole domain
/// (`region = None`) or a subset of elements.
pub fn norms(mesh: &Mesh, v: &Field, region: Option<&[usize]>) -> Norms {
    v.check(mesh).expect("field/mesh mismatch");
    let list: Vec<usize> = match region {
        None => (0..mesh.triangle_count()).collect(),
        Some(r) => r.to_vec(),
    };
    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    for &t in &list {
        let (grads, area) = mesh.p1_gradients(t);
        let tri = mesh.triangles[t];
        let vals = [v.dofs[tri[0]], v.dofs[tri[1]], v.dofs[tri[2]]];
        let gx = vals[0] * grads[0][0] + vals[1] * grads[1][0] + vals[2] * grads[2][0];
        let gy = vals[0] * grads[0][1] + vals[1] * grads[1][1] + vals[2] * grads[2][1];
        h1_sq += area * (gx * gx + gy * gy);
        for (bary, w) in QUAD_POINTS {
            let vq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
            l2_sq += area * w * vq * vq;
        }
    }
    Norms {
        l2: l2_sq.sqrt(),
        h1_semi: h1_sq.sqrt(),
    }
}

/// Evaluate a P1 field at an arbitrary point of the unit square.
pub fn eval_field_at(mesh: &Mesh, v: &Field, x: f64, y: f64) -> f64 {
    let n = mesh.n_cells_per_side;
    let h = mesh.h;
    let fx = ((x + 0.5) / h).floor().clamp(0.0, (n - 1) as f64);
    let fy = ((y + 0.5) / h).floor().clamp(0.0, (n - 1) as f64);
    let j = fx as usize;
    let i = fy as usize;
    let xi = ((x + 0.5) / h - fx).clamp(0.0, 1.0);
    let eta = ((y + 0.5) / h - fy).clamp(0.0, 1.0);
    let np = n + 1;
    let ll = v.dofs[i * np + j];
    let lr = v.dofs[i * np + j + 1];
    let ul = v.dofs[(i + 1) * np + j];
    let ur = v.dofs[(i + 1) * np + j + 1];
    if xi >= eta {
        // Lower triangle (ll, lr, ur).
        ll + (lr - ll) * xi + (ur - lr) * eta
    } else {
        // Upper triangle (ll, ur, ul).
        ll + (ur - ul) * xi + (ul - ll) * eta
    }
}

/// Exact nodal transfer of a coarse field onto a nested finer mesh (the
/// coarse P1 space is a subspace of the fine one when the cell counts divide).
pub fn prolongate(coarse_mesh: &Mesh, v: &Field, fine_mesh: &Mesh) -> Result<Field, FemError> {
    v.check(coarse_mesh)?;
    if fine_mesh.n_cells_per_side % coarse_mesh.n_cells_per_side != 0 {
        return Err(FemError::NotNested {
            coarse: coarse_mesh.n_cells_per_side,
            fine: fine_mesh.n_cells_per_side,
        });
    }
    let dofs = fine_mesh
        .nodes
        .iter()
        .map(|&[x, y]| eval_field_at(coarse_mesh, v, x, y))
        .collect();
    Ok(Field {
        mesh_n: fine_mesh.n_cells_per_side,
        dofs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use crate::rng::SplitMix64;

    fn random_field(mesh: &Mesh, seed: u64, amp: f64) -> Field {
        let mut rng = SplitMix64::new(seed);
        Field {
            mesh_n: mesh.n_cells_per_side,
            dofs: (0..mesh.node_count()).map(|_| rng.uniform(-amp, amp)).collect(),
        }
    }

    #[test]
    fn stiffness_kernel_contains_constants() {
        let mesh = build_unit_square_mesh(5).unwrap();
        let a = assemble_stiffness(&mesh);
        let ones = vec![1.0; mesh.node_count()];
        let av = a.matvec(&ones);
        for (i, v) in av.iter().enumerate() {
            assert!(v.abs() < 1e-13, "row {i}: {v}");
        }
    }

    #[test]
    fn stiffness_center_diagonal_is_four() {
        // Classic five-point value for P1 on the right-angled uniform split.
        let mesh = build_unit_square_mesh(2).unwrap();
        let a = assemble_stiffness(&mesh);
        let center = mesh.interior_nodes()[0];
        assert!((a.get(center, center) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn stiffness_energy_of_linear_function() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let a = assemble_stiffness(&mesh);
        let v = Field::from_fn(&mesh, |x, _| x);
        let e = a.bilinear(&v.dofs, &v.dofs);
        assert!((e - 1.0).abs() < 1e-13, "Dirichlet energy {e}");
    }

    #[test]
    fn nitsche_interior_entries_match_stiffness() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let a = assemble_stiffness(&mesh);
        let forms = assemble_nitsche(&mesh, 10.0).unwrap();
        for &i in &mesh.interior_nodes() {
            for &j in &mesh.interior_nodes() {
                assert!(
                    (forms.a.get(i, j) - a.get(i, j)).abs() < 1e-13,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn nitsche_boundary_diagonal_matches_hand_quadrature() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let beta = 10.0;
        let forms = assemble_nitsche(&mesh, beta).unwrap();
        // Pick a boundary node away from the corners (middle of the bottom edge).
        let b = *mesh
            .boundary_nodes
            .iter()
            .find(|&&id| {
                let [x, y] = mesh.nodes[id];
                (y + 0.5).abs() < 1e-12 && x.abs() < 0.2
            })
            .unwrap();
        // Hand assembly of a_h(phi_b, phi_b) over its support, term by term.
        let mut stiff = 0.0;
        for t in 0..mesh.triangle_count() {
            let tri = mesh.triangles[t];
            if let Some(k) = tri.iter().position(|&v| v == b) {
                let (grads, area) = mesh.p1_gradients(t);
                stiff += area * (grads[k][0] * grads[k][0] + grads[k][1] * grads[k][1]);
            }
        }
        let mut consistency = 0.0;
        let mut penalty = 0.0;
        for edge in &mesh.boundary_edges {
            if !edge.nodes.contains(&b) {
                continue;
            }
            let len = mesh.h;
            let (grads, _) = mesh.p1_gradients(edge.tri);
            let k = mesh.triangles[edge.tri].iter().position(|&v| v == b).unwrap();
            let dn = grads[k][0] * edge.normal[0] + grads[k][1] * edge.normal[1];
            // (dn phi_b, phi_b)_F with int_F phi_b = |F|/2.
            consistency += dn * len / 2.0;
            // (phi_b, phi_b)_F = |F|/3 when b is an edge endpoint.
            penalty += beta / mesh.h * len / 3.0;
        }
        let expected = stiff - 2.0 * consistency + penalty;
        assert!(
            (forms.a.get(b, b) - expected).abs() < 1e-12,
            "assembled {} vs hand {}",
            forms.a.get(b, b),
            expected
        );
    }

    #[test]
    fn nitsche_matrix_is_symmetric() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let forms = assemble_nitsche(&mesh, 10.0).unwrap();
        assert!(forms.a.max_asymmetry() < 1e-12);
    }

    #[test]
    fn nitsche_solve_zero_data() {
        let mesh = build_unit_square_mesh(8).unwrap();
        let forms = assemble_nitsche(&mesh, 10.0).unwrap();
        let g = vec![0.0; mesh.boundary_node_count()];
        let sol = nitsche_solve(&forms, &mesh, &g).unwrap();
        assert!(sol.dofs.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn nitsche_solve_reproduces_linears() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let forms = assemble_nitsche(&mesh, 10.0).unwrap();
        let g = boundary_values_from_fn(&mesh, |x, y| x + y);
        let sol = nitsche_solve(&forms, &mesh, &g).unwrap();
        let exact = Field::from_fn(&mesh, |x, y| x + y);
        let worst = sol
            .dofs
            .iter()
            .zip(&exact.dofs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-10, "max nodal error {worst}");
    }

    #[test]
    fn nitsche_solve_linearity_for_betas() {
        // Exactness on linears for the betas the analysis sweeps over.
        for beta in [5.0, 10.0, 50.0] {
            let mesh = build_unit_square_mesh(8).unwrap();
            let forms = assemble_nitsche(&mesh, beta).unwrap();
            let g = boundary_values_from_fn(&mesh, |x, y| 2.0 * x - 0.5 * y + 1.0);
            let sol = nitsche_solve(&forms, &mesh, &g).unwrap();
            let exact = Field::from_fn(&mesh, |x, y| 2.0 * x - 0.5 * y + 1.0);
            let worst = sol
                .dofs
                .iter()
                .zip(&exact.dofs)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-10, "beta={beta}: max nodal error {worst}");
        }
    }

    #[test]
    fn nitsche_solve_is_linear_in_data() {
        let mesh = build_unit_square_mesh(8).unwrap();
        let forms = assemble_nitsche(&mesh, 10.0).unwrap();
        let mut rng = SplitMix64::new(4);
        let g1: Vec<f64> = (0..mesh.boundary_node_count()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let g2: Vec<f64> = (0..mesh.boundary_node_count()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (alpha, beta) = (0.7, -1.3);
        let combo: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| alpha * a + beta * b).collect();
        let s1 = nitsche_solve(&forms, &mesh, &g1).unwrap();
        let s2 = nitsche_solve(&forms, &mesh, &g2).unwrap();
        let sc = nitsche_solve(&forms, &mesh, &combo).unwrap();
        let scale = norms(&mesh, &sc, None).l2.max(1.0);
        for i in 0..mesh.node_count() {
            let lin = alpha * s1.dofs[i] + beta * s2.dofs[i];
            assert!(
                (sc.dofs[i] - lin).abs() < 1e-8 * scale,
                "superposition defect at node {i}"
            );
        }
    }

    #[test]
    fn nitsche_convergence_second_order_l2() {
        // g = trace of x^2 - y^2 (harmonic); compare against the analytic
        // solution with exact degree-4 quadrature of the squared error.
        let mut errors = Vec::new();
        for n in [10usize, 20, 40] {
            let mesh = build_unit_square_mesh(n).unwrap();
            let forms = assemble_nitsche(&mesh, 10.0).unwrap();
            let g = boundary_values_from_fn(&mesh, |x, y| x * x - y * y);
            let sol = nitsche_solve(&forms, &mesh, &g).unwrap();
            let mut err_sq = 0.0;
            for t in 0..mesh.triangle_count() {
                let tri = mesh.triangles[t];
                let area = mesh.triangle_area(t);
                let vals = [sol.dofs[tri[0]], sol.dofs[tri[1]], sol.dofs[tri[2]]];
                for (bary, w) in QUAD_POINTS {
                    let mut x = 0.0;
                    let mut y = 0.0;
                    for k in 0..3 {
                        x += bary[k] * mesh.nodes[tri[k]][0];
                        y += bary[k] * mesh.nodes[tri[k]][1];
                    }
                    let vh = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
                    let u = x * x - y * y;
                    err_sq += area * w * (vh - u) * (vh - u);
                }
            }
            errors.push(err_sq.sqrt());
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!(
            (1.8..=2.2).contains(&rate1) && (1.8..=2.2).contains(&rate2),
            "L2 rates {rate1:.2}, {rate2:.2} (errors {errors:?})"
        );
    }

    #[test]
    fn jump_penalty_vanishes_on_linears_and_is_psd() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let s = assemble_jump_penalty(&mesh);
        let v = Field::from_fn(&mesh, |x, y| 3.0 * x - 2.0 * y + 0.5);
        let q = s.bilinear(&v.dofs, &v.dofs);
        assert!(q.abs() < 1e-12, "linear field jump energy {q}");
        let mut rng = SplitMix64::new(12);
        for _ in 0..100 {
            let v: Vec<f64> = (0..mesh.node_count()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            assert!(s.bilinear(&v, &v) >= -1e-12);
        }
    }

    #[test]
    fn jump_penalty_hat_matches_face_star_computation() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let s = assemble_jump_penalty(&mesh);
        let node = mesh.interior_nodes()[1];
        let mut hat = Field::zeros(&mesh);
        hat.dofs[node] = 1.0;
        // Independent computation: loop faces, form the normal jump of the
        // hat's piecewise-constant gradient directly.
        let mut expected = 0.0;
        for face in &mesh.interior_faces {
            let [a, b] = face.nodes;
            let pa = mesh.nodes[a];
            let pb = mesh.nodes[b];
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            let nf = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
            let grad_on = |t: usize| -> [f64; 2] {
                let tri = mesh.triangles[t];
                match tri.iter().position(|&v| v == node) {
                    Some(k) => mesh.p1_gradients(t).0[k],
                    None => [0.0, 0.0],
                }
            };
            let gl = grad_on(face.left_tri);
            let gr = grad_on(face.right_tri);
            let jump = (gl[0] - gr[0]) * nf[0] + (gl[1] - gr[1]) * nf[1];
            expected += mesh.h * len * jump * jump;
        }
        let got = s.bilinear(&hat.dofs, &hat.dofs);
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert!(expected > 0.0);
    }

    #[test]
    fn subdomain_mass_areas_and_moments() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let all: Vec<usize> = (0..mesh.triangle_count()).collect();
        let m = assemble_subdomain_mass(&mesh, &all).unwrap();
        let ones = vec![1.0; mesh.node_count()];
        assert!((m.bilinear(&ones, &ones) - 1.0).abs() < 1e-13);

        let half: Vec<usize> = (0..100).collect();
        let mh = assemble_subdomain_mass(&mesh, &half).unwrap();
        assert!((mh.bilinear(&ones, &ones) - 0.5).abs() < 1e-13);

        let x = Field::from_fn(&mesh, |x, _| x);
        assert!((m.bilinear(&x.dofs, &x.dofs) - 1.0 / 12.0).abs() < 1e-13);

        assert!(matches!(
            assemble_subdomain_mass(&mesh, &[]),
            Err(FemError::EmptyElementSubset)
        ));
    }

    #[test]
    fn boundary_stab_zero_constant_and_sawtooth() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let m = mesh.boundary_node_count();
        let zero = vec![0.0; m];
        assert_eq!(boundary_stab_pair(&mesh, &zero, &zero).unwrap(), 0.0);

        let c = 0.75;
        let constant = vec![c; m];
        let got = boundary_stab_pair(&mesh, &constant, &constant).unwrap();
        let expected = 4.0 * c * c / mesh.h;
        assert!((got - expected).abs() < 1e-11, "constant: {got} vs {expected}");

        // Alternating +-c: every boundary edge sees endpoints (c, -c), so
        // int_F d^2 = |F| c^2 / 3 and the tangent slope is 2c/h.
        let saw: Vec<f64> = (0..m).map(|k| if k % 2 == 0 { c } else { -c }).collect();
        let got = boundary_stab_pair(&mesh, &saw, &saw).unwrap();
        let n_edges = m as f64;
        let mass = (1.0 / mesh.h) * n_edges * mesh.h * c * c / 3.0;
        let tangent = mesh.h * n_edges * (2.0 * c) * (2.0 * c) / mesh.h;
        assert!(
            (got - (mass + tangent)).abs() < 1e-10,
            "sawtooth: {got} vs {}",
            mass + tangent
        );
        assert!(tangent > 10.0 * mass);

        assert!(boundary_stab_pair(&mesh, &zero[1..], &zero).is_err());
    }

    #[test]
    fn energy_trivial_cases_and_linear_field_value() {
        let mesh = build_unit_square_mesh(8).unwrap();
        let zero = Field::zeros(&mesh);
        assert_eq!(nonlinear_energy(&mesh, &zero, None).unwrap(), 0.0);

        let constant = Field::from_fn(&mesh, |_, _| 2.5);
        assert!(nonlinear_energy(&mesh, &constant, None).unwrap().abs() < 1e-15);

        // v = x: E = 1/2 int (1 + x^2) = 1/2 (1 + 1/12) = 13/24.
        let v = Field::from_fn(&mesh, |x, _| x);
        let e = nonlinear_energy(&mesh, &v, None).unwrap();
        assert!((e - 13.0 / 24.0).abs() < 1e-14, "E = {e}");
    }

    #[test]
    fn energy_gradient_matches_central_differences() {
        for n in [4usize, 10] {
            let mesh = build_unit_square_mesh(n).unwrap();
            let v = random_field(&mesh, 100 + n as u64, 0.8);
            for subset in [None, Some((0..mesh.triangle_count() / 3).collect::<Vec<_>>())] {
                let grad = nonlinear_energy_grad(&mesh, &v, subset.as_deref()).unwrap();
                let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1.0);
                let step = 1e-5;
                let mut worst = 0.0f64;
                for i in 0..mesh.node_count() {
                    let mut vp = v.clone();
                    vp.dofs[i] += step;
                    let mut vm = v.clone();
                    vm.dofs[i] -= step;
                    let fd = (nonlinear_energy(&mesh, &vp, subset.as_deref()).unwrap()
                        - nonlinear_energy(&mesh, &vm, subset.as_deref()).unwrap())
                        / (2.0 * step);
                    worst = worst.max((fd - grad[i]).abs() / scale);
                }
                assert!(
                    worst < 1e-6,
                    "n={n}, subset={}: FD mismatch {worst:.2e}",
                    subset.is_some()
                );
            }
        }
    }

    #[test]
    fn energy_gradient_zero_field_and_subset_locality() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let zero = Field::zeros(&mesh);
        let g = nonlinear_energy_grad(&mesh, &zero, None).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let v = random_field(&mesh, 9, 1.0);
        let subset = [3usize, 10, 19, 30, 44];
        let g = nonlinear_energy_grad(&mesh, &v, Some(&subset)).unwrap();
        let mut support = vec![false; mesh.node_count()];
        for &t in &subset {
            for &node in &mesh.triangles[t] {
                support[node] = true;
            }
        }
        for (i, gi) in g.iter().enumerate() {
            if !support[i] {
                assert_eq!(*gi, 0.0, "gradient leaked outside subset at node {i}");
            }
        }
        // Subset energies are plain element sums times (total / subset size).
        let e_subset = nonlinear_energy(&mesh, &v, Some(&subset)).unwrap();
        let mut raw_sum = 0.0;
        for &t in &subset {
            raw_sum +=
                nonlinear_energy(&mesh, &v, Some(&[t])).unwrap() / mesh.triangle_count() as f64;
        }
        let expected = raw_sum * mesh.triangle_count() as f64 / subset.len() as f64;
        assert!((e_subset - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn newton_trivial_boundary_data() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let zero = vec![0.0; mesh.boundary_node_count()];
        let sol = newton_solve_nonlinear(&mesh, &zero, 1e-12).unwrap();
        assert!(sol.dofs.iter().all(|v| v.abs() < 1e-13));

        let c = 1.5;
        let constant = vec![c; mesh.boundary_node_count()];
        let sol = newton_solve_nonlinear(&mesh, &constant, 1e-12).unwrap();
        for v in &sol.dofs {
            assert!((v - c).abs() < 1e-10, "constant minimizer violated: {v}");
        }
        assert!(nonlinear_energy(&mesh, &sol, None).unwrap() < 1e-20);
    }

    #[test]
    fn newton_beats_harmonic_extension_and_competitors() {
        let mesh = build_unit_square_mesh(10).unwrap();
        // Small-amplitude Fourier-style trace.
        let g: Vec<f64> = mesh
            .boundary_arclength
            .iter()
            .map(|&s| {
                0.3 * (2.0 * std::f64::consts::PI * s / 4.0).sin()
                    + 0.2 * (4.0 * std::f64::consts::PI * s / 4.0).cos()
            })
            .collect();
        let sol = newton_solve_nonlinear(&mesh, &g, 1e-10).unwrap();
        let grad = nonlinear_energy_grad(&mesh, &sol, None).unwrap();
        let g_int: Vec<f64> = mesh.interior_nodes().iter().map(|&i| grad[i]).collect();
        assert!(linalg::norm2(&g_int) < 1e-10);

        let e_star = nonlinear_energy(&mesh, &sol, None).unwrap();
        let harmonic = harmonic_extension(&mesh, &g).unwrap();
        assert!(e_star <= nonlinear_energy(&mesh, &harmonic, None).unwrap() + 1e-14);

        let mut rng = SplitMix64::new(77);
        for _ in 0..20 {
            let mut competitor = sol.clone();
            for &i in &mesh.interior_nodes() {
                competitor.dofs[i] += rng.uniform(-0.05, 0.05);
            }
            let e_c = nonlinear_energy(&mesh, &competitor, None).unwrap();
            assert!(e_c >= e_star - 1e-12, "competitor beat Newton: {e_c} < {e_star}");
        }
    }

    #[test]
    fn norms_analytic_and_oracle() {
        let mesh = build_unit_square_mesh(9).unwrap();
        let ones = Field::from_fn(&mesh, |_, _| 1.0);
        let n1 = norms(&mesh, &ones, None);
        assert!((n1.l2 - 1.0).abs() < 1e-13 && n1.h1_semi.abs() < 1e-13);

        let vx = Field::from_fn(&mesh, |x, _| x);
        let nx = norms(&mesh, &vx, None);
        assert!((nx.l2 - (1.0f64 / 12.0).sqrt()).abs() < 1e-13);
        assert!((nx.h1_semi - 1.0).abs() < 1e-13);

        // Independent oracle: exact element mass matrix for the L2 part,
        // direct constant-gradient sums for H1.
        let v = random_field(&mesh, 55, 2.0);
        let got = norms(&mesh, &v, None);
        let mut l2_sq = 0.0;
        let mut h1_sq = 0.0;
        for t in 0..mesh.triangle_count() {
            let tri = mesh.triangles[t];
            let area = mesh.triangle_area(t);
            let vals = [v.dofs[tri[0]], v.dofs[tri[1]], v.dofs[tri[2]]];
            for i in 0..3 {
                for j in 0..3 {
                    l2_sq += area / 12.0 * if i == j { 2.0 } else { 1.0 } * vals[i] * vals[j];
                }
            }
            let (grads, _) = mesh.p1_gradients(t);
            let gx: f64 = (0..3).map(|k| vals[k] * grads[k][0]).sum();
            let gy: f64 = (0..3).map(|k| vals[k] * grads[k][1]).sum();
            h1_sq += area * (gx * gx + gy * gy);
        }
        assert!((got.l2 - l2_sq.sqrt()).abs() < 1e-12);
        assert!((got.h1_semi - h1_sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn prolongation_reproduces_linears_exactly() {
        let coarse = build_unit_square_mesh(10).unwrap();
        let fine = build_unit_square_mesh(40).unwrap();
        let v = Field::from_fn(&coarse, |x, y| 2.0 * x - y + 0.3);
        let p = prolongate(&coarse, &v, &fine).unwrap();
        let exact = Field::from_fn(&fine, |x, y| 2.0 * x - y + 0.3);
        for i in 0..fine.node_count() {
            assert!((p.dofs[i] - exact.dofs[i]).abs() < 1e-13);
        }
        assert!(prolongate(&coarse, &v, &build_unit_square_mesh(15).unwrap()).is_err());
    }
}
