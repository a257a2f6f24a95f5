//! Reconstruction of PDE solutions from interior observations when boundary
//! conditions are unknown but a large set of boundary-data samples is available.
//!
//! The pipeline:
//!
//! 1. [`datagen`] produces synthetic boundary datasets (Fourier traces on the
//!    unit square, polynomial and Gaussian-bump coefficient families).
//! 2. [`pod`] compresses the collective boundary data into an orthonormal
//!    basis via PCA of the snapshot Gram matrix.
//! 3. [`fem`] provides P1 finite elements on structured meshes of the unit
//!    square: Nitsche boundary forms, jump penalties, a nonlinear energy
//!    functional and a damped-Newton solver for it.
//! 4. [`neural`] trains from-scratch MLPs: an autoencoder that finds a latent
//!    parametrization of the coefficient data, and an operator network mapping
//!    coefficients to interior finite element DoFs by minimizing the expected
//!    energy.
//! 5. [`inverse`] solves the inverse problem: stabilized projection onto the
//!    reduced basis in the linear case, and Adam-driven optimization over the
//!    latent/coefficient space through the operator network in the nonlinear
//!    case.
//!
//! Everything is deterministic given seeds; random numbers come from the
//! portable generator in [`rng`].

pub mod datagen;
pub mod fem;
pub mod inverse;
pub mod linalg;
pub mod mesh;
pub mod neural;
pub mod pod;
pub mod rng;
