//! Solvers for the inverse problem of recovering a field in the whole domain
//! from an observation on a subdomain, with boundary data known only to lie
//! in the span of a POD basis.
//!
//! Three routes:
//! * the stabilized projection onto the discrete reduced basis (Nitsche
//!   extensions of the POD modes, Gram matrix `m_h = (.,.)_omega + s_bnd + s_h`),
//! * the plain (unstabilized) subdomain-mass projection, whose Gram matrix
//!   is allowed to be numerically singular (that failure mode is what the
//!   stabilization removes),
//! * Adam-driven optimization over the coefficient or latent space through
//!   the operator network, where the boundary constraint holds by
//!   construction.
//!
//! Also here: the analytic stability constants on the unit disc and the mesh
//! convergence study against a fine-mesh realization of the exact projection.

use crate::fem::{self, Field, FemError};
use crate::linalg::{self, DenseMatrix, LinalgError, SparseMatrix};
use crate::mesh::{self, DiscSpec, Mesh, MeshError};
use crate::neural::{
    adam_step, AdamState, Mlp, NeuralError, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::pod::{self, PodBasis, PodError};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InverseError {
    #[error("basis lives on mesh {basis:?}, expected mesh {expected}")]
    MeshMismatch { expected: usize, basis: Option<usize> },
    #[error("observation does not match the basis (mesh {obs_mesh} vs {basis_mesh}, omega center {obs_center:?} r={obs_radius} vs {basis_center:?} r={basis_radius})")]
    ObservationMismatch {
        obs_mesh: usize,
        basis_mesh: usize,
        obs_center: [f64; 2],
        obs_radius: f64,
        basis_center: [f64; 2],
        basis_radius: f64,
    },
    #[error("Gram matrix is singular to working precision (min eigenvalue {min_eigenvalue:.3e})")]
    SingularGram { min_eigenvalue: f64 },
    #[error("objective became non-finite at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },
    #[error("start point has length {got}, solver expects {expected}")]
    StartPointMismatch { expected: usize, got: usize },
    #[error("radius {0} must lie strictly between 0 and 1")]
    BadDiscRadius(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("file error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Interior measurement: field values at every node of the subdomain's
/// elements. `noise_std` records the absolute per-node deviation that was
/// added (0 for clean observations).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub omega: DiscSpec,
    pub mesh_n: usize,
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    pub noise_std: f64,
    pub provenance: String,
}

impl Observation {
    /// Restrict a field to the subdomain (noise-free).
    pub fn from_field(
        mesh: &Mesh,
        field: &Field,
        omega: &DiscSpec,
        provenance: impl Into<String>,
    ) -> Result<Self, InverseError> {
        field.check(mesh)?;
        let elements = mesh::subdomain_elements(mesh, omega)?;
        let mut seen = vec![false; mesh.node_count()];
        for &t in &elements {
            for &v in &mesh.triangles[t] {
                seen[v] = true;
            }
        }
        let nodes: Vec<usize> = (0..mesh.node_count()).filter(|&i| seen[i]).collect();
        let values = nodes.iter().map(|&i| field.dofs[i]).collect();
        Ok(Self {
            omega: *omega,
            mesh_n: mesh.n_cells_per_side,
            nodes,
            values,
            noise_std: 0.0,
            provenance: provenance.into(),
        })
    }

    /// Add Gaussian noise with deviation `rel_std` times the RMS of the
    /// observed values. Returns the absolute deviation used (also recorded
    /// in `noise_std`).
    pub fn add_relative_noise(&mut self, rel_std: f64, rng: &mut SplitMix64) -> f64 {
        let rms = (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt();
        let std = rel_std * rms;
        for v in &mut self.values {
            *v += rng.normal(0.0, std);
        }
        self.noise_std = std;
        std
    }

    /// Values embedded into a full DoF vector (zero away from the subdomain).
    pub fn embed(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.node_count()];
        for (&node, &v) in self.nodes.iter().zip(&self.values) {
            out[node] = v;
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), InverseError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, InverseError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Discrete reduced basis: Nitsche extensions of the POD boundary modes with
/// the Gram matrices of the stabilized and plain subdomain products.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    pub mesh_n: usize,
    pub pod: PodBasis,
    pub fields: Vec<Field>,
    /// `m_h` on the basis: subdomain mass + boundary surrogate + jump penalty.
    pub gram_mh: DenseMatrix,
    /// Subdomain mass term only.
    pub gram_omega: DenseMatrix,
    pub omega: DiscSpec,
    pub omega_elements: Vec<usize>,
    pub subdomain_mass: SparseMatrix,
    pub beta: f64,
}

/// Build the reduced basis: one Nitsche solve per POD mode (spread over
/// `threads` workers; results are identical for any thread count), then the
/// Gram matrices on the subdomain.
///
/// The boundary surrogate uses the exact POD mode as the boundary data each
/// discrete trace is compared against.
pub fn build_reduced_basis(
    mesh: &Mesh,
    basis: &PodBasis,
    beta: f64,
    omega: &DiscSpec,
    threads: usize,
) -> Result<ReducedBasis, InverseError> {
    if basis.mesh_n != Some(mesh.n_cells_per_side) {
        return Err(InverseError::MeshMismatch {
            expected: mesh.n_cells_per_side,
            basis: basis.mesh_n,
        });
    }
    let n_modes = basis.n_modes;
    let omega_elements = mesh::subdomain_elements(mesh, omega)?;
    let forms = fem::assemble_nitsche(mesh, beta)?;

    let modes: Vec<Vec<f64>> = (0..n_modes).map(|k| basis.modes.column(k)).collect();
    let fields = solve_modes(&forms, mesh, &modes, threads)?;

    let mass = fem::assemble_subdomain_mass(mesh, &omega_elements)?;
    let jump = fem::assemble_jump_penalty(mesh);

    let mass_applied: Vec<Vec<f64>> = fields.iter().map(|f| mass.matvec(&f.dofs)).collect();
    let jump_applied: Vec<Vec<f64>> = fields.iter().map(|f| jump.matvec(&f.dofs)).collect();
    let trace_diffs: Vec<Vec<f64>> = fields
        .iter()
        .zip(&modes)
        .map(|(f, g)| {
            fem::boundary_trace(mesh, f)
                .iter()
                .zip(g)
                .map(|(t, e)| t - e)
                .collect()
        })
        .collect();

    let mut gram_omega = DenseMatrix::zeros(n_modes, n_modes);
    let mut gram_mh = DenseMatrix::zeros(n_modes, n_modes);
    for m in 0..n_modes {
        for n in m..n_modes {
            let mass_term = linalg::dot(&fields[m].dofs, &mass_applied[n]);
            let jump_term = linalg::dot(&fields[m].dofs, &jump_applied[n]);
            let bnd_term = fem::boundary_stab_pair(mesh, &trace_diffs[m], &trace_diffs[n])?;
            gram_omega.set(m, n, mass_term);
            gram_omega.set(n, m, mass_term);
            let total = mass_term + jump_term + bnd_term;
            gram_mh.set(m, n, total);
            gram_mh.set(n, m, total);
        }
    }

    Ok(ReducedBasis {
        mesh_n: mesh.n_cells_per_side,
        pod: basis.clone(),
        fields,
        gram_mh,
        gram_omega,
        omega: *omega,
        omega_elements,
        subdomain_mass: mass,
        beta,
    })
}

fn solve_modes(
    forms: &fem::NitscheForms,
    mesh: &Mesh,
    modes: &[Vec<f64>],
    threads: usize,
) -> Result<Vec<Field>, InverseError> {
    if threads <= 1 || modes.len() <= 1 {
        return modes
            .iter()
            .map(|g| fem::nitsche_solve(forms, mesh, g).map_err(Into::into))
            .collect();
    }
    let workers = threads.min(modes.len());
    let mut results: Vec<Option<Result<Field, FemError>>> = (0..modes.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(modes.len().div_ceil(workers));
        for (chunk_idx, chunk) in chunks.enumerate() {
            let start = chunk_idx * modes.len().div_ceil(workers);
            let modes = &modes;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(fem::nitsche_solve(forms, mesh, &modes[start + k]));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("worker filled slot").map_err(Into::into))
        .collect()
}

/// Outcome of any inverse solve: recovered coefficients (or latent point),
/// the reconstructed field, and the objective history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InverseResult {
    pub coefficients: Vec<f64>,
    pub field: Field,
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub final_objective: f64,
}

impl InverseResult {
    pub fn save(&self, path: &Path) -> Result<(), InverseError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, InverseError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn check_observation(basis: &ReducedBasis, obs: &Observation) -> Result<(), InverseError> {
    let same_omega = obs.omega.center == basis.omega.center && obs.omega.radius == basis.omega.radius;
    if obs.mesh_n != basis.mesh_n || !same_omega {
        return Err(InverseError::ObservationMismatch {
            obs_mesh: obs.mesh_n,
            basis_mesh: basis.mesh_n,
            obs_center: obs.omega.center,
            obs_radius: obs.omega.radius,
            basis_center: basis.omega.center,
            basis_radius: basis.omega.radius,
        });
    }
    Ok(())
}

fn combine_fields(mesh: &Mesh, fields: &[Field], coeffs: &[f64]) -> Field {
    let mut out = Field::zeros(mesh);
    for (c, f) in coeffs.iter().zip(fields) {
        for (o, v) in out.dofs.iter_mut().zip(&f.dofs) {
            *o += c * v;
        }
    }
    out
}

fn solve_gram(gram: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>, InverseError> {
    match linalg::lu_solve_dense(gram, rhs) {
        Ok(x) => Ok(x),
        Err(LinalgError::Singular { .. }) => {
            let min_eigenvalue = linalg::symmetric_eig(gram)
                .map(|(vals, _)| *vals.last().unwrap())
                .unwrap_or(f64::NAN);
            Err(InverseError::SingularGram { min_eigenvalue })
        }
        Err(e) => Err(e.into()),
    }
}

fn projection_solve(
    mesh: &Mesh,
    basis: &ReducedBasis,
    obs: &Observation,
    stabilized: bool,
) -> Result<InverseResult, InverseError> {
    check_observation(basis, obs)?;
    let u0 = obs.embed(mesh);
    let mass_u0 = basis.subdomain_mass.matvec(&u0);
    let rhs: Vec<f64> = basis
        .fields
        .iter()
        .map(|f| linalg::dot(&f.dofs, &mass_u0))
        .collect();
    let gram = if stabilized { &basis.gram_mh } else { &basis.gram_omega };
    let coeffs = solve_gram(gram, &rhs)?;
    let field = combine_fields(mesh, &basis.fields, &coeffs);
    let residual: Vec<f64> = u0.iter().zip(&field.dofs).map(|(a, b)| a - b).collect();
    let objective = 0.5 * basis.subdomain_mass.bilinear(&residual, &residual);
    Ok(InverseResult {
        coefficients: coeffs,
        field,
        loss_trace: vec![objective],
        iterations: 1,
        final_objective: objective,
    })
}

/// The stabilized projection: solve `gram_mh c = (u_0, phi_m)_omega` and
/// assemble the recovered field.
pub fn stabilized_projection(
    mesh: &Mesh,
    basis: &ReducedBasis,
    obs: &Observation,
) -> Result<InverseResult, InverseError> {
    projection_solve(mesh, basis, obs, true)
}

/// Superposition solve over the reduced basis. With `stabilized` unset this
/// is the plain subdomain-mass projection, which is expected to fail (or
/// amplify weak modes) once the basis outgrows what the subdomain can see.
pub fn linear_superposition_solve(
    mesh: &Mesh,
    basis: &ReducedBasis,
    obs: &Observation,
    stabilized: bool,
) -> Result<InverseResult, InverseError> {
    projection_solve(mesh, basis, obs, stabilized)
}

/// Smallest eigenvalue of the chosen Gram matrix: the discrete stability
/// constant of the finite-dimensional inverse problem.
pub fn rayleigh_min(basis: &ReducedBasis, stabilized: bool) -> Result<f64, InverseError> {
    let gram = if stabilized { &basis.gram_mh } else { &basis.gram_omega };
    let (vals, _) = linalg::symmetric_eig(gram)?;
    Ok(*vals.last().unwrap())
}

/// Data-fit norm for the latent solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitNorm {
    L2,
    H1,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatentOpts {
    pub lr: f64,
    pub iterations: usize,
    pub norm: FitNorm,
}

impl Default for LatentOpts {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            iterations: 2000,
            norm: FitNorm::L2,
        }
    }
}

/// Minimize `1/2 || u_0 - field(z) ||^2` over the latent (or coefficient)
/// space with Adam, differentiating through the operator network, the POD
/// decoding of the boundary trace, and optionally a decoder in front of
/// both. Returns the best iterate by objective.
///
/// Without a decoder, `z` is the coefficient vector itself.
pub fn latent_inverse_solve(
    net: &Mlp,
    decoder: Option<&Mlp>,
    basis: &PodBasis,
    mesh: &Mesh,
    obs: &Observation,
    z0: &[f64],
    opts: &LatentOpts,
) -> Result<InverseResult, InverseError> {
    let z_dim = decoder.map_or(basis.n_modes, Mlp::input_dim);
    if z0.len() != z_dim {
        return Err(InverseError::StartPointMismatch {
            expected: z_dim,
            got: z0.len(),
        });
    }
    let omega_elements = mesh::subdomain_elements(mesh, &obs.omega)?;
    let mass = fem::assemble_subdomain_mass(mesh, &omega_elements)?;
    let stiffness = (opts.norm == FitNorm::H1)
        .then(|| fem::assemble_subdomain_stiffness(mesh, &omega_elements));
    let u0 = obs.embed(mesh);
    let interior = mesh.interior_nodes();

    let mut z = z0.to_vec();
    let mut adam = AdamState::new(z_dim);
    let mut loss_trace = Vec::with_capacity(opts.iterations + 1);
    let mut best: Option<(f64, Vec<f64>, Field)> = None;

    for iteration in 0..=opts.iterations {
        // Forward pass and objective at the current point.
        let dec_cache = decoder.map(|d| d.forward_cached(&z)).transpose()?;
        let coeffs: Vec<f64> = match &dec_cache {
            Some(c) => c.output().to_vec(),
            None => z.to_vec(),
        };
        let boundary = pod::pod_decode(basis, &coeffs)?;
        let net_cache = net.forward_cached(&coeffs)?;
        let mut field = Field::zeros(mesh);
        for (pos, &node) in mesh.boundary_nodes.iter().enumerate() {
            field.dofs[node] = boundary[pos];
        }
        for (k, &node) in interior.iter().enumerate() {
            field.dofs[node] = net_cache.output()[k];
        }
        let residual: Vec<f64> = field.dofs.iter().zip(&u0).map(|(a, b)| a - b).collect();
        let mut du = mass.matvec(&residual);
        if let Some(k) = &stiffness {
            let kr = k.matvec(&residual);
            for (a, b) in du.iter_mut().zip(&kr) {
                *a += b;
            }
        }
        let objective = 0.5 * linalg::dot(&residual, &du);
        if !objective.is_finite() {
            return Err(InverseError::NonFiniteObjective { iteration });
        }
        loss_trace.push(objective);
        if best.as_ref().map_or(true, |(b, _, _)| objective < *b) {
            best = Some((objective, z.clone(), field));
        }
        if iteration == opts.iterations {
            break;
        }

        // Reverse pass: dJ/du -> dJ/dcoeffs -> dJ/dz.
        let cot_interior: Vec<f64> = interior.iter().map(|&node| du[node]).collect();
        let (_, net_input_grad) = net.backward(&net_cache, &cot_interior)?;
        let cot_boundary: Vec<f64> = mesh.boundary_nodes.iter().map(|&node| du[node]).collect();
        let boundary_coeff_grad = pod::pod_encode(basis, &cot_boundary)?;
        let coeff_grad: Vec<f64> = net_input_grad
            .iter()
            .zip(&boundary_coeff_grad)
            .map(|(a, b)| a + b)
            .collect();
        let z_grad = match (&dec_cache, decoder) {
            (Some(cache), Some(d)) => d.backward(cache, &coeff_grad)?.1,
            _ => coeff_grad,
        };
        if z_grad.iter().any(|g| !g.is_finite()) {
            return Err(InverseError::NonFiniteObjective { iteration });
        }
        adam_step(&mut z, &z_grad, &mut adam, opts.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
    }

    let (final_objective, coefficients, field) = best.expect("at least one evaluation");
    Ok(InverseResult {
        coefficients,
        field,
        loss_trace,
        iterations: opts.iterations,
        final_objective,
    })
}

/// Stability constant of the n-th harmonic mode `r^n cos(n theta)` on the
/// unit disc observed from the concentric disc of radius `r_omega`:
/// the closed-form norm ratio `||phi||_{L2(unit disc)} / ||phi||_{L2(omega)}`,
/// which evaluates to `r_omega^-(n+1)`.
pub fn disc_stability_constant(n: usize, r_omega: f64) -> Result<f64, InverseError> {
    if !(0.0 < r_omega && r_omega < 1.0) {
        return Err(InverseError::BadDiscRadius(r_omega));
    }
    // \int_0^R r^{2n+1} dr * \int_0^{2pi} cos^2(n t) dt; the angular factor
    // (2 pi for n = 0, pi otherwise) cancels in the ratio.
    let norm_sq = |radius: f64| -> f64 {
        let angular = if n == 0 { 2.0 * std::f64::consts::PI } else { std::f64::consts::PI };
        angular * radius.powi(2 * n as i32 + 2) / (2.0 * n as f64 + 2.0)
    };
    Ok((norm_sq(1.0) / norm_sq(r_omega)).sqrt())
}

/// Least-squares slope of log(y) against log(x).
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// One row of the convergence study: mesh parameter and H1(Omega) distance
/// between the fine-mesh exact projection and the coarse stabilized one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub mesh_n: usize,
    pub h: f64,
    pub h1_error: f64,
}

/// Mesh convergence of the stabilized projection for a fixed problem built
/// from `coefficients` over the first `n_modes` trigonometric boundary modes.
///
/// The reference is the unstabilized projection on the fine mesh (the
/// exact-mode projection realized numerically); each coarse solution is
/// prolongated onto the fine mesh and compared in the full H1 norm.
pub fn convergence_study(
    mesh_sizes: &[usize],
    ref_mesh_n: usize,
    coefficients: &[f64],
    omega: &DiscSpec,
    beta: f64,
    threads: usize,
) -> Result<Vec<ConvergenceRow>, InverseError> {
    let n_modes = coefficients.len();
    let fine = mesh::build_unit_square_mesh(ref_mesh_n)?;
    let fine_modes = pod::fourier_mode_basis(&fine, n_modes);
    let fine_basis = build_reduced_basis(&fine, &fine_modes, beta, omega, threads)?;
    let u_ref = combine_fields(&fine, &fine_basis.fields, coefficients);
    let obs_fine = Observation::from_field(&fine, &u_ref, omega, "convergence-study reference")?;
    let exact_projection = linear_superposition_solve(&fine, &fine_basis, &obs_fine, false)?;

    let mut rows = Vec::with_capacity(mesh_sizes.len());
    for &n in mesh_sizes {
        let coarse = mesh::build_unit_square_mesh(n)?;
        let coarse_modes = pod::fourier_mode_basis(&coarse, n_modes);
        let coarse_basis = build_reduced_basis(&coarse, &coarse_modes, beta, omega, threads)?;
        let u0 = Field::from_fn(&coarse, |x, y| fem::eval_field_at(&fine, &u_ref, x, y));
        let obs = Observation::from_field(&coarse, &u0, omega, "convergence-study sample")?;
        let solution = stabilized_projection(&coarse, &coarse_basis, &obs)?;
        let prolonged = fem::prolongate(&coarse, &solution.field, &fine)?;
        let diff = Field {
            mesh_n: ref_mesh_n,
            dofs: prolonged
                .dofs
                .iter()
                .zip(&exact_projection.field.dofs)
                .map(|(a, b)| a - b)
                .collect(),
        };
        let err = fem::norms(&fine, &diff, None);
        rows.push(ConvergenceRow {
            mesh_n: n,
            h: coarse.h,
            h1_error: err.h1_full(),
        });
    }
    Ok(rows)
}
