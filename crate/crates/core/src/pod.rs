//! POD compression of the collective boundary data: an orthonormal basis of
//! boundary-node vectors from the eigendecomposition of the snapshot Gram
//! matrix `X^T X` (no mean centering), plus the encode/decode maps between
//! boundary traces and coefficient vectors.

use crate::datagen::Dataset;
use crate::linalg::{self, DenseMatrix, LinalgError};
use crate::mesh::Mesh;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("cannot keep {requested} modes, dataset supports at most {available}")]
    TooManyModes { requested: usize, available: usize },
    #[error("degenerate data: largest eigenvalue of X^T X is zero")]
    DegenerateData,
    #[error("vector has length {got}, basis expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("basis file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("basis file error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Relative eigenvalue cutoff used when the caller does not fix the mode count.
const AUTO_REL_TOL: f64 = 1e-8;

/// Orthonormal boundary modes with the full singular spectrum of the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PodBasis {
    /// Columns are orthonormal boundary-node vectors, strongest mode first.
    pub modes: DenseMatrix,
    /// All eigenvalues of `X^T X`, descending (not truncated to `n_modes`).
    pub spectrum: Vec<f64>,
    pub n_modes: usize,
    /// Mesh whose boundary nodes the modes live on; `None` for bases fitted
    /// on raw coefficient rows.
    pub mesh_n: Option<usize>,
}

/// Fit a POD basis from dataset rows. `n_keep = None` keeps every mode whose
/// eigenvalue is at least 1e-8 times the largest.
pub fn fit_pod(data: &Dataset, n_keep: Option<usize>) -> Result<PodBasis, PodError> {
    fit_pod_matrix(&data.samples, n_keep, data.mesh_n)
}

pub fn fit_pod_matrix(
    samples: &DenseMatrix,
    n_keep: Option<usize>,
    mesh_n: Option<usize>,
) -> Result<PodBasis, PodError> {
    let width = samples.n_cols();
    if let Some(k) = n_keep {
        if k == 0 || k > width {
            return Err(PodError::TooManyModes {
                requested: k,
                available: width,
            });
        }
    }
    let gram = samples.gram();
    let (spectrum, vectors) = linalg::symmetric_eig(&gram)?;
    let max = spectrum[0];
    if max <= 0.0 {
        return Err(PodError::DegenerateData);
    }
    let kept = match n_keep {
        Some(k) => k,
        None => spectrum.iter().take_while(|&&l| l >= AUTO_REL_TOL * max).count().max(1),
    };
    let mut modes = DenseMatrix::zeros(width, kept);
    for c in 0..kept {
        for r in 0..width {
            modes.set(r, c, vectors.get(r, c));
        }
    }
    Ok(PodBasis {
        modes,
        spectrum,
        n_modes: kept,
        mesh_n,
    })
}

/// Coefficients of a boundary vector in the POD basis:
/// `c_n = <g, mode_n>` (plain Euclidean product over boundary nodes).
pub fn pod_encode(basis: &PodBasis, g: &[f64]) -> Result<Vec<f64>, PodError> {
    if g.len() != basis.modes.n_rows() {
        return Err(PodError::LengthMismatch {
            expected: basis.modes.n_rows(),
            got: g.len(),
        });
    }
    Ok(basis.modes.matvec_transposed(g))
}

/// Boundary vector for a coefficient vector: the linear combination of modes.
pub fn pod_decode(basis: &PodBasis, coeffs: &[f64]) -> Result<Vec<f64>, PodError> {
    if coeffs.len() != basis.n_modes {
        return Err(PodError::LengthMismatch {
            expected: basis.n_modes,
            got: coeffs.len(),
        });
    }
    Ok(basis.modes.matvec(coeffs))
}

/// Mean squared reconstruction error per sample when `kept` modes are used:
/// the tail eigenvalue sum of `X^T X` divided by the sample count. This is
/// the floor any reconstruction (in particular an autoencoder) competes with.
pub fn pod_tail_residual(spectrum: &[f64], n_samples: usize, kept: usize) -> f64 {
    spectrum.iter().skip(kept).sum::<f64>() / n_samples as f64
}

/// Orthonormalized trigonometric boundary modes: the constant followed by
/// sin/cos pairs of increasing frequency, sampled at the boundary nodes and
/// passed through Gram-Schmidt. Spans are nested in the mode count, which the
/// stability studies rely on. The synthetic spectrum stores the squared norms
/// of the raw samples.
pub fn fourier_mode_basis(mesh: &Mesh, n_modes: usize) -> PodBasis {
    let m = mesh.boundary_node_count();
    assert!(n_modes >= 1 && n_modes <= m, "mode count {n_modes} out of range");
    let l = 4.0;
    let mut raw: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for k in 0..n_modes {
        let values: Vec<f64> = mesh
            .boundary_arclength
            .iter()
            .map(|&s| {
                if k == 0 {
                    1.0
                } else {
                    let freq = k.div_ceil(2) as f64;
                    let angle = 2.0 * freq * std::f64::consts::PI * s / l;
                    if k % 2 == 1 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                }
            })
            .collect();
        raw.push(values);
    }
    let mut spectrum: Vec<f64> = raw.iter().map(|v| linalg::dot(v, v)).collect();
    spectrum.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Modified Gram-Schmidt; the sampled trig functions are far from
    // dependent on these meshes, so no re-orthogonalization pass is needed.
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(n_modes);
    for mut v in raw {
        for q in &ortho {
            let proj = linalg::dot(&v, q);
            for i in 0..m {
                v[i] -= proj * q[i];
            }
        }
        let norm = linalg::norm2(&v);
        assert!(norm > 1e-10, "trigonometric samples became dependent");
        for x in &mut v {
            *x /= norm;
        }
        ortho.push(v);
    }
    let mut modes = DenseMatrix::zeros(m, n_modes);
    for (c, v) in ortho.iter().enumerate() {
        for r in 0..m {
            modes.set(r, c, v[r]);
        }
    }
    PodBasis {
        modes,
        spectrum,
        n_modes,
        mesh_n: Some(mesh.n_cells_per_side),
    }
}

impl PodBasis {
    pub fn boundary_len(&self) -> usize {
        self.modes.n_rows()
    }

    /// Largest deviation of `modes^T modes` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n_modes {
            let ci = self.modes.column(i);
            for j in i..self.n_modes {
                let d = linalg::dot(&ci, &self.modes.column(j)) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn save(&self, path: &Path) -> Result<(), PodError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PodError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{sample_fourier_dataset, Dataset, DatasetKind, DatasetParams};
    use crate::mesh::build_unit_square_mesh;
    use crate::rng::SplitMix64;

    fn coeff_dataset(samples: DenseMatrix) -> Dataset {
        Dataset {
            kind: DatasetKind::RawCoefficients,
            mesh_n: None,
            num_coeffs: samples.n_cols(),
            samples,
            seed: 0,
            noise_std: 0.0,
            params: DatasetParams::None,
        }
    }

    #[test]
    fn rank_one_data_gives_single_normalized_mode() {
        let v = vec![1.0, 2.0, 2.0];
        let rows: Vec<Vec<f64>> = (0..10).map(|_| v.clone()).collect();
        let basis = fit_pod(&coeff_dataset(DenseMatrix::from_rows(&rows)), None).unwrap();
        assert_eq!(basis.n_modes, 1);
        let norm = 3.0;
        for i in 0..3 {
            // Sign of the eigenvector is arbitrary.
            assert!((basis.modes.get(i, 0).abs() - v[i] / norm).abs() < 1e-10);
        }
        assert!(basis.spectrum[1].abs() < 1e-10 * basis.spectrum[0]);
    }

    #[test]
    fn fourier_dataset_keeps_exactly_n_modes_in_auto() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let data = sample_fourier_dataset(&mesh, 9, 300, 21, 0.15).unwrap();
        let basis = fit_pod(&data, None).unwrap();
        assert_eq!(basis.n_modes, 9, "significant eigenvalue count");
        assert!(basis.orthonormality_defect() < 1e-8);
    }

    #[test]
    fn kept_modes_reconstruct_low_rank_data() {
        // Random rank-3 matrix: 40 rows spanned by 3 fixed vectors.
        let mut rng = SplitMix64::new(13);
        let span: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let mut rows = Vec::new();
        for _ in 0..40 {
            let c: Vec<f64> = (0..3).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let row: Vec<f64> = (0..12)
                .map(|i| c[0] * span[0][i] + c[1] * span[1][i] + c[2] * span[2][i])
                .collect();
            rows.push(row);
        }
        let data = coeff_dataset(DenseMatrix::from_rows(&rows));
        let basis = fit_pod(&data, Some(3)).unwrap();
        for r in 0..data.n_samples() {
            let row = data.samples.row(r);
            let rec = pod_decode(&basis, &pod_encode(&basis, row).unwrap()).unwrap();
            for i in 0..12 {
                assert!((rec[i] - row[i]).abs() < 1e-8, "row {r} component {i}");
            }
        }
    }

    #[test]
    fn encode_decode_identities() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let data = sample_fourier_dataset(&mesh, 5, 100, 3, 0.15).unwrap();
        let basis = fit_pod(&data, Some(5)).unwrap();

        // Encoding a mode gives a unit coordinate vector.
        let mode0 = basis.modes.column(0);
        let e = pod_encode(&basis, &mode0).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-10);
        for v in &e[1..] {
            assert!(v.abs() < 1e-10);
        }

        // decode(e_k) = mode_k, decode(0) = 0.
        let mut ek = vec![0.0; 5];
        ek[3] = 1.0;
        let dec = pod_decode(&basis, &ek).unwrap();
        let mode3 = basis.modes.column(3);
        for i in 0..dec.len() {
            assert!((dec[i] - mode3[i]).abs() < 1e-12);
        }
        assert!(pod_decode(&basis, &vec![0.0; 5]).unwrap().iter().all(|&v| v == 0.0));

        // encode . decode = identity on coefficients.
        let mut rng = SplitMix64::new(5);
        let c: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let roundtrip = pod_encode(&basis, &pod_decode(&basis, &c).unwrap()).unwrap();
        for i in 0..5 {
            assert!((roundtrip[i] - c[i]).abs() < 1e-12);
        }

        // Orthogonal complement encodes to zero: build one by deflating a
        // random vector.
        let mut g: Vec<f64> = (0..basis.boundary_len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        for k in 0..5 {
            let col = basis.modes.column(k);
            let proj = linalg::dot(&g, &col);
            for i in 0..g.len() {
                g[i] -= proj * col[i];
            }
        }
        let e = pod_encode(&basis, &g).unwrap();
        assert!(e.iter().all(|&v| v.abs() < 1e-10));

        // Projection idempotence for in-span vectors.
        let in_span = pod_decode(&basis, &c).unwrap();
        let twice = pod_decode(&basis, &pod_encode(&basis, &in_span).unwrap()).unwrap();
        for i in 0..in_span.len() {
            assert!((twice[i] - in_span[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn training_rows_project_onto_kept_modes() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let data = sample_fourier_dataset(&mesh, 9, 250, 77, 0.15).unwrap();
        let basis = fit_pod(&data, Some(9)).unwrap();
        for r in 0..data.n_samples() {
            let row = data.samples.row(r);
            let rec = pod_decode(&basis, &pod_encode(&basis, row).unwrap()).unwrap();
            let residual: f64 = row
                .iter()
                .zip(&rec)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(residual < 1e-8, "row {r} residual {residual:e}");
        }
    }

    #[test]
    fn spectrum_invariant_under_row_permutation() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let data = sample_fourier_dataset(&mesh, 5, 60, 9, 0.15).unwrap();
        let basis = fit_pod(&data, Some(5)).unwrap();
        // Reverse the rows.
        let rows: Vec<Vec<f64>> = (0..data.n_samples())
            .rev()
            .map(|r| data.samples.row(r).to_vec())
            .collect();
        let permuted = coeff_dataset(DenseMatrix::from_rows(&rows));
        let basis2 = fit_pod(&permuted, Some(5)).unwrap();
        for (a, b) in basis.spectrum.iter().zip(&basis2.spectrum) {
            let rel = (a - b).abs() / basis.spectrum[0];
            assert!(rel < 1e-8, "spectrum moved under permutation: {a} vs {b}");
        }
    }

    #[test]
    fn degenerate_data_is_rejected() {
        let rows = vec![vec![0.0; 4]; 5];
        assert!(matches!(
            fit_pod(&coeff_dataset(DenseMatrix::from_rows(&rows)), None),
            Err(PodError::DegenerateData)
        ));
    }

    #[test]
    fn fourier_mode_basis_is_orthonormal_and_nested() {
        let mesh = build_unit_square_mesh(10).unwrap();
        let b5 = fourier_mode_basis(&mesh, 5);
        let b9 = fourier_mode_basis(&mesh, 9);
        assert!(b5.orthonormality_defect() < 1e-12);
        assert!(b9.orthonormality_defect() < 1e-12);
        // First five columns agree: nested construction.
        for c in 0..5 {
            for r in 0..mesh.boundary_node_count() {
                assert!((b5.modes.get(r, c) - b9.modes.get(r, c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let basis = fourier_mode_basis(&mesh, 3);
        let dir = std::env::temp_dir().join("uclat_pod_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("basis.json");
        basis.save(&path).unwrap();
        let loaded = PodBasis::load(&path).unwrap();
        assert_eq!(loaded.n_modes, 3);
        assert_eq!(loaded.mesh_n, Some(4));
        assert_eq!(loaded.modes.values(), basis.modes.values());
    }
}
