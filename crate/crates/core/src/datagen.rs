//! Synthetic boundary-data families: perturbed truncated Fourier traces on
//! the unit square, and the two parametric coefficient families (polynomial
//! and Gaussian bumps) whose low-dimensional structure the autoencoder is
//! supposed to discover.
//!
//! Sampling is reproducible by construction: dataset row `i` draws from
//! stream `i + 1` of the dataset seed (stream 0 is reserved for per-dataset
//! setup like the polynomial coefficient matrices), so the same (kind,
//! parameters, seed) triple always produces bit-identical samples, row by
//! row, regardless of generation order.

use crate::linalg::{self, DenseMatrix};
use crate::mesh::Mesh;
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("Fourier coefficient count must be odd, got {0}")]
    EvenCoefficientCount(usize),
    #[error("expected {expected} values for {what}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("unknown parametric case '{0}'")]
    UnknownCase(String),
    #[error("dataset file error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset manifest error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Fourier,
    Polynomial,
    Gaussian,
    RawCoefficients,
}

/// Kind-specific generation parameters, recorded so a manifest fully
/// reproduces its samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DatasetParams {
    None,
    Polynomial {
        linear_term: DenseMatrix,
        quadratic_term: DenseMatrix,
        n_params: usize,
        x_range: [f64; 2],
    },
    Gaussian {
        n_params: usize,
        n_bumps: usize,
        gamma: f64,
        centers: Vec<f64>,
        x_range: [f64; 2],
    },
}

/// A matrix of samples plus everything needed to regenerate it.
///
/// Rows are boundary nodal values for the Fourier kind and coefficient
/// vectors for the parametric kinds; `mesh_n` is only set when rows live on
/// mesh boundary nodes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub mesh_n: Option<usize>,
    pub num_coeffs: usize,
    pub samples: DenseMatrix,
    pub seed: u64,
    pub noise_std: f64,
    pub params: DatasetParams,
}

/// Evaluate the perturbed truncated Fourier series
/// `g(x) = (c0 + d0) + sum_m (c_{2m-1} + d_{2m-1}) sin(2 m pi x / l)
///                   + (c_{2m} + d_{2m}) cos(2 m pi x / l)`
/// at every boundary node of the mesh, with `x` the boundary arc length and
/// `l = 4` the circumference.
pub fn fourier_boundary(
    mesh: &Mesh,
    n_coeffs: usize,
    coeffs: &[f64],
    noise: &[f64],
) -> Result<Vec<f64>, DatagenError> {
    if n_coeffs % 2 == 0 {
        return Err(DatagenError::EvenCoefficientCount(n_coeffs));
    }
    for (what, v) in [("coeffs", coeffs), ("noise", noise)] {
        if v.len() != n_coeffs {
            return Err(DatagenError::ShapeMismatch {
                what,
                expected: n_coeffs,
                got: v.len(),
            });
        }
    }
    let l = 4.0;
    let values = mesh
        .boundary_arclength
        .iter()
        .map(|&x| {
            let mut acc = coeffs[0] + noise[0];
            for m in 1..=(n_coeffs - 1) / 2 {
                let angle = 2.0 * m as f64 * std::f64::consts::PI * x / l;
                acc += (coeffs[2 * m - 1] + noise[2 * m - 1]) * angle.sin();
                acc += (coeffs[2 * m] + noise[2 * m]) * angle.cos();
            }
            acc
        })
        .collect();
    Ok(values)
}

/// Fourier dataset: unperturbed coefficients uniform on (-1, 1), perturbations
/// normal with the given standard deviation, one boundary-trace row per sample.
pub fn sample_fourier_dataset(
    mesh: &Mesh,
    n_coeffs: usize,
    count: usize,
    seed: u64,
    noise_std: f64,
) -> Result<Dataset, DatagenError> {
    if count == 0 {
        return Err(DatagenError::EmptyDataset);
    }
    if n_coeffs % 2 == 0 {
        return Err(DatagenError::EvenCoefficientCount(n_coeffs));
    }
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = SplitMix64::stream(seed, i as u64 + 1);
        let coeffs: Vec<f64> = (0..n_coeffs).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let noise: Vec<f64> = (0..n_coeffs).map(|_| rng.normal(0.0, noise_std)).collect();
        rows.push(fourier_boundary(mesh, n_coeffs, &coeffs, &noise)?);
    }
    Ok(Dataset {
        kind: DatasetKind::Fourier,
        mesh_n: Some(mesh.n_cells_per_side),
        num_coeffs: n_coeffs,
        samples: DenseMatrix::from_rows(&rows),
        seed,
        noise_std,
        params: DatasetParams::None,
    })
}

/// Polynomial coefficient map `a = A x + B (x .* x) + delta`.
pub fn polynomial_coeffs(
    a: &DenseMatrix,
    b: &DenseMatrix,
    x: &[f64],
    delta: &[f64],
) -> Result<Vec<f64>, DatagenError> {
    if a.n_rows() != b.n_rows() || a.n_cols() != b.n_cols() {
        return Err(DatagenError::ShapeMismatch {
            what: "quadratic term matrix",
            expected: a.n_rows() * a.n_cols(),
            got: b.n_rows() * b.n_cols(),
        });
    }
    if x.len() != a.n_cols() {
        return Err(DatagenError::ShapeMismatch {
            what: "parameter vector",
            expected: a.n_cols(),
            got: x.len(),
        });
    }
    if delta.len() != a.n_rows() {
        return Err(DatagenError::ShapeMismatch {
            what: "perturbation vector",
            expected: a.n_rows(),
            got: delta.len(),
        });
    }
    let x_sq: Vec<f64> = x.iter().map(|v| v * v).collect();
    let lin = a.matvec(x);
    let quad = b.matvec(&x_sq);
    Ok((0..a.n_rows()).map(|j| lin[j] + quad[j] + delta[j]).collect())
}

/// Gaussian-bump coefficient map: `a_j = exp(-gamma (x_k - x0_l)^2) + delta_j`
/// with `l = j mod n_bumps` and `k = j mod n_params`.
pub fn gaussian_coeffs(
    n_params: usize,
    n_bumps: usize,
    gamma: f64,
    x: &[f64],
    centers: &[f64],
    delta: &[f64],
    n_out: usize,
) -> Result<Vec<f64>, DatagenError> {
    if x.len() != n_params {
        return Err(DatagenError::ShapeMismatch {
            what: "parameter vector",
            expected: n_params,
            got: x.len(),
        });
    }
    if centers.len() != n_bumps {
        return Err(DatagenError::ShapeMismatch {
            what: "bump centers",
            expected: n_bumps,
            got: centers.len(),
        });
    }
    if delta.len() != n_out {
        return Err(DatagenError::ShapeMismatch {
            what: "perturbation vector",
            expected: n_out,
            got: delta.len(),
        });
    }
    Ok((0..n_out)
        .map(|j| {
            let l = j % n_bumps;
            let k = j % n_params;
            let d = x[k] - centers[l];
            (-gamma * d * d).exp() + delta[j]
        })
        .collect())
}

/// The named coefficient-family cases used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParametricCase {
    PolynomialLinear,
    PolynomialQuadratic,
    /// (n_params, n_bumps); supported: (2,5), (3,6), (3,7), (4,8).
    Gaussian(usize, usize),
}

impl ParametricCase {
    pub fn parse(s: &str) -> Result<Self, DatagenError> {
        match s {
            "polynomial-linear" => Ok(Self::PolynomialLinear),
            "polynomial-quadratic" => Ok(Self::PolynomialQuadratic),
            other => {
                if let Some(pair) = other.strip_prefix("gaussian-") {
                    if let Some((a, b)) = pair.split_once(',') {
                        let nx: usize = a.trim().parse().map_err(|_| DatagenError::UnknownCase(s.into()))?;
                        let l: usize = b.trim().parse().map_err(|_| DatagenError::UnknownCase(s.into()))?;
                        let case = Self::Gaussian(nx, l);
                        if case.gaussian_setup().is_some() {
                            return Ok(case);
                        }
                    }
                }
                Err(DatagenError::UnknownCase(s.into()))
            }
        }
    }

    /// Bump centers and parameter range for the supported Gaussian cases.
    fn gaussian_setup(&self) -> Option<(Vec<f64>, [f64; 2])> {
        match self {
            Self::Gaussian(2, 5) => Some(((0..5).map(|l| 4.0 * l as f64).collect(), [-2.0, 18.0])),
            Self::Gaussian(3, 6) => Some(((0..6).map(|l| 2.0 * l as f64).collect(), [-2.0, 12.0])),
            Self::Gaussian(3, 7) => Some(((0..7).map(|l| 2.0 * l as f64).collect(), [-2.0, 14.0])),
            Self::Gaussian(4, 8) => Some(((0..8).map(|l| 2.0 * l as f64).collect(), [-2.0, 16.0])),
            _ => None,
        }
    }
}

const POLY_COEFF_COUNT: usize = 9;
const POLY_PARAM_COUNT: usize = 3;
const GAUSSIAN_GAMMA: f64 = 2.0;
const GAUSSIAN_NOISE_STD: f64 = 0.15;

/// Sample a dataset of coefficient rows for one of the named cases.
///
/// Polynomial cases: |J| = 9 coefficients from n_X = 3 parameters, matrix
/// entries uniform on (-1, 1) drawn once from the setup stream (the linear
/// case zeroes the quadratic matrix after drawing, so both cases share A
/// under one seed), x uniform on (-2, 2), perturbations standard normal.
/// Gaussian cases: gamma = 2, equidistant bump centers, |J| = n_X * L,
/// perturbations with standard deviation 0.15.
pub fn sample_parametric_dataset(
    case: ParametricCase,
    count: usize,
    seed: u64,
) -> Result<Dataset, DatagenError> {
    if count == 0 {
        return Err(DatagenError::EmptyDataset);
    }
    match case {
        ParametricCase::PolynomialLinear | ParametricCase::PolynomialQuadratic => {
            let mut setup = SplitMix64::stream(seed, 0);
            let mut draw_matrix = |rows: usize, cols: usize| {
                let mut m = DenseMatrix::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        m.set(r, c, setup.uniform(-1.0, 1.0));
                    }
                }
                m
            };
            let a = draw_matrix(POLY_COEFF_COUNT, POLY_PARAM_COUNT);
            let mut b = draw_matrix(POLY_COEFF_COUNT, POLY_PARAM_COUNT);
            if case == ParametricCase::PolynomialLinear {
                b = DenseMatrix::zeros(POLY_COEFF_COUNT, POLY_PARAM_COUNT);
            }
            let mut rows = Vec::with_capacity(count);
            for i in 0..count {
                let mut rng = SplitMix64::stream(seed, i as u64 + 1);
                let x: Vec<f64> = (0..POLY_PARAM_COUNT).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let delta: Vec<f64> = (0..POLY_COEFF_COUNT).map(|_| rng.normal(0.0, 1.0)).collect();
                rows.push(polynomial_coeffs(&a, &b, &x, &delta)?);
            }
            Ok(Dataset {
                kind: DatasetKind::Polynomial,
                mesh_n: None,
                num_coeffs: POLY_COEFF_COUNT,
                samples: DenseMatrix::from_rows(&rows),
                seed,
                noise_std: 1.0,
                params: DatasetParams::Polynomial {
                    linear_term: a,
                    quadratic_term: b,
                    n_params: POLY_PARAM_COUNT,
                    x_range: [-2.0, 2.0],
                },
            })
        }
        ParametricCase::Gaussian(n_params, n_bumps) => {
            let (centers, x_range) = case
                .gaussian_setup()
                .ok_or_else(|| DatagenError::UnknownCase(format!("gaussian-{n_params},{n_bumps}")))?;
            let n_out = n_params * n_bumps;
            let mut rows = Vec::with_capacity(count);
            for i in 0..count {
                let mut rng = SplitMix64::stream(seed, i as u64 + 1);
                let x: Vec<f64> = (0..n_params).map(|_| rng.uniform(x_range[0], x_range[1])).collect();
                let delta: Vec<f64> = (0..n_out).map(|_| rng.normal(0.0, GAUSSIAN_NOISE_STD)).collect();
                rows.push(gaussian_coeffs(
                    n_params, n_bumps, GAUSSIAN_GAMMA, &x, &centers, &delta, n_out,
                )?);
            }
            Ok(Dataset {
                kind: DatasetKind::Gaussian,
                mesh_n: None,
                num_coeffs: n_out,
                samples: DenseMatrix::from_rows(&rows),
                seed,
                noise_std: GAUSSIAN_NOISE_STD,
                params: DatasetParams::Gaussian {
                    n_params,
                    n_bumps,
                    gamma: GAUSSIAN_GAMMA,
                    centers,
                    x_range,
                },
            })
        }
    }
}

/// Noise floor for significance counting on the singular values of an
/// `n_samples x n_cols` data matrix with iid noise of deviation `noise_std`:
/// one third of the asymptotic largest noise singular value
/// `noise_std (sqrt(S) + sqrt(J))`, so a cut at three floors sits exactly at
/// the noise bulk edge.
pub fn noise_floor(n_samples: usize, n_cols: usize, noise_std: f64) -> f64 {
    noise_std * ((n_samples as f64).sqrt() + (n_cols as f64).sqrt()) / 3.0
}

/// Number of singular values above three times the noise floor.
pub fn significant_rank(singular_values: &[f64], floor: f64) -> usize {
    singular_values.iter().filter(|&&s| s > 3.0 * floor).count()
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.samples.n_rows()
    }

    pub fn row_len(&self) -> usize {
        self.samples.n_cols()
    }

    /// Singular values of the sample matrix (descending), computed to high
    /// relative accuracy.
    pub fn singular_values(&self) -> Vec<f64> {
        linalg::singular_values(&self.samples)
    }

    /// Write the JSON manifest to `path` and the samples to a sibling `.csv`.
    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        let csv_path = path.with_extension("csv");
        let manifest = DatasetManifest {
            kind: self.kind,
            mesh_n: self.mesh_n,
            num_coeffs: self.num_coeffs,
            count: self.n_samples(),
            seed: self.seed,
            noise_std: self.noise_std,
            params: self.params.clone(),
            csv: csv_path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        let mut csv = String::new();
        for r in 0..self.samples.n_rows() {
            let row: Vec<String> = self.samples.row(r).iter().map(|&v| format_f64_full(v)).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(csv_path, csv)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let csv_path = path
            .parent()
            .map(|p| p.join(&manifest.csv))
            .unwrap_or_else(|| Path::new(&manifest.csv).to_path_buf());
        let text = std::fs::read_to_string(csv_path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|tok| tok.trim().parse::<f64>()).collect();
            rows.push(row.map_err(|e| DatagenError::Csv {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        if rows.len() != manifest.count {
            return Err(DatagenError::Csv {
                line: 0,
                message: format!("manifest promises {} rows, csv has {}", manifest.count, rows.len()),
            });
        }
        Ok(Dataset {
            kind: manifest.kind,
            mesh_n: manifest.mesh_n,
            num_coeffs: manifest.num_coeffs,
            samples: DenseMatrix::from_rows(&rows),
            seed: manifest.seed,
            noise_std: manifest.noise_std,
            params: manifest.params,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    kind: DatasetKind,
    mesh_n: Option<usize>,
    num_coeffs: usize,
    count: usize,
    seed: u64,
    noise_std: f64,
    params: DatasetParams,
    csv: String,
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn format_f64_full(x: f64) -> String {
    format!("{x:.16e}")
}
