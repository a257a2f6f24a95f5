//! Training loops: autoencoder on coefficient rows (reconstruction MSE) and
//! the operator network that maps POD coefficients to interior finite
//! element DoFs, trained by minimizing the expected nonlinear energy of the
//! assembled field. Validation compares the operator against the damped
//! Newton solver on fresh draws.

use crate::fem::{self, Field};
use crate::linalg;
use crate::mesh::Mesh;
use crate::pod::{self, PodBasis};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::mlp::{adam_step, mlp_init, AdamState, Mlp, MlpGrads, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use super::NeuralError;

/// Shared knobs for both trainers. The learning rate follows a staircase:
/// `lr = lr_initial * lr_decay_factor^(iteration / lr_decay_every)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr_initial: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    /// Energy evaluation on a random element subset of this size (unbiased,
    /// rescaled); `None` uses every element.
    pub element_subsample: Option<usize>,
    /// Standard deviation of the coefficient draws fed to the operator
    /// network during training and validation.
    pub input_coeff_std: f64,
}

impl TrainConfig {
    /// Desk-scale protocol: small enough for CI, same structure as the full
    /// one (staircase keeps four decay steps over the run).
    pub fn desk(seed: u64) -> Self {
        Self {
            batch_size: 32,
            iterations: 50_000,
            lr_initial: 1e-3,
            lr_decay_factor: 0.5,
            lr_decay_every: 12_500,
            seed,
            element_subsample: None,
            input_coeff_std: 0.3,
        }
    }

    /// Full protocol for a given mesh: one million Adam iterations starting
    /// at 1e-4, halved every 250k; batch sizes and element subsampling per
    /// mesh size (subsampling only on the finest mesh, 3k elements for 9
    /// coefficients and 4k for 21).
    pub fn full(mesh_n: usize, n_coeffs: usize, seed: u64) -> Self {
        let batch_size = match mesh_n {
            10 => 32,
            28 => 64,
            82 => 64,
            244 => 96,
            _ => 64,
        };
        let element_subsample = if mesh_n >= 244 {
            Some(if n_coeffs <= 9 { 3000 } else { 4000 })
        } else {
            None
        };
        Self {
            batch_size,
            iterations: 1_000_000,
            lr_initial: 1e-4,
            lr_decay_factor: 0.5,
            lr_decay_every: 250_000,
            seed,
            element_subsample,
            input_coeff_std: 0.3,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let ok = self.batch_size > 0
            && self.iterations > 0
            && self.lr_initial > 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_factor <= 1.0
            && self.lr_decay_every > 0
            && self.input_coeff_std > 0.0
            && self.element_subsample.map_or(true, |m| m > 0);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::BadConfig(format!("{self:?}")))
        }
    }

    fn lr_at(&self, iteration: usize) -> f64 {
        self.lr_initial * self.lr_decay_factor.powi((iteration / self.lr_decay_every) as i32)
    }
}

/// Hidden width of the operator network for a given mesh size.
pub fn operator_width(mesh_n: usize) -> usize {
    match mesh_n {
        10 => 64,
        28 => 256,
        82 => 512,
        244 => 1024,
        _ => 64,
    }
}

/// Encoder/decoder pair with a latent bottleneck.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Autoencoder {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
}

impl Autoencoder {
    pub fn reconstruct(&self, row: &[f64]) -> Result<Vec<f64>, NeuralError> {
        self.decoder.forward(&self.encoder.forward(row)?)
    }

    /// Mean squared reconstruction error per sample (squared vector norm).
    pub fn reconstruction_mse(&self, samples: &crate::linalg::DenseMatrix) -> Result<f64, NeuralError> {
        let mut total = 0.0;
        for r in 0..samples.n_rows() {
            let row = samples.row(r);
            let rec = self.reconstruct(row)?;
            total += row
                .iter()
                .zip(&rec)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        Ok(total / samples.n_rows() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub autoencoder: Autoencoder,
    /// Train-set reconstruction MSE after the last iteration.
    pub final_mse: f64,
    /// Batch loss per iteration.
    pub loss_trace: Vec<f64>,
}

/// Train an autoencoder on the rows of a coefficient dataset.
///
/// Architecture: encoder (N, width, latent), decoder (latent, width, N),
/// ELU on hidden layers, affine at the latent and output layers. Minibatches
/// are drawn with replacement; Adam with the staircase learning rate.
pub fn train_autoencoder(
    data: &crate::datagen::Dataset,
    latent_dim: usize,
    hidden_width: usize,
    config: &TrainConfig,
) -> Result<TrainedAutoencoder, NeuralError> {
    config.validate()?;
    let n = data.row_len();
    if latent_dim == 0 || latent_dim >= n {
        return Err(NeuralError::BadLatentDim {
            latent: latent_dim,
            coeffs: n,
        });
    }
    let mut sub = SplitMix64::stream(config.seed, 0);
    let mut encoder = mlp_init(&[n, hidden_width, latent_dim], sub.next_u64())?;
    let mut decoder = mlp_init(&[latent_dim, hidden_width, n], sub.next_u64())?;
    let n_enc = encoder.param_count();
    let n_dec = decoder.param_count();
    let mut params = encoder.params_flat();
    params.extend(decoder.params_flat());
    let mut adam = AdamState::new(params.len());
    let mut batch_rng = SplitMix64::stream(config.seed, 1);
    let n_samples = data.n_samples();
    let mut loss_trace = Vec::with_capacity(config.iterations);
    let mut flat_enc = Vec::new();
    let mut flat_dec = Vec::new();
    let mut flat = vec![0.0; params.len()];

    for iteration in 0..config.iterations {
        let mut grads_enc = MlpGrads::zeros_like(&encoder);
        let mut grads_dec = MlpGrads::zeros_like(&decoder);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let row = data.samples.row((batch_rng.next_u64() % n_samples as u64) as usize);
            let enc_cache = encoder.forward_cached(row)?;
            let dec_cache = decoder.forward_cached(enc_cache.output())?;
            let out = dec_cache.output();
            let mut cotangent = vec![0.0; n];
            let mut sample_loss = 0.0;
            for i in 0..n {
                let r = out[i] - row[i];
                sample_loss += r * r;
                cotangent[i] = 2.0 * r / config.batch_size as f64;
            }
            batch_loss += sample_loss / config.batch_size as f64;
            let (g_dec, latent_grad) = decoder.backward(&dec_cache, &cotangent)?;
            let (g_enc, _) = encoder.backward(&enc_cache, &latent_grad)?;
            grads_dec.accumulate(&g_dec);
            grads_enc.accumulate(&g_enc);
        }
        if !batch_loss.is_finite() {
            return Err(NeuralError::TrainingDiverged { iteration });
        }
        loss_trace.push(batch_loss);
        grads_enc.write_flat(&mut flat_enc);
        grads_dec.write_flat(&mut flat_dec);
        flat[..n_enc].copy_from_slice(&flat_enc);
        flat[n_enc..].copy_from_slice(&flat_dec);
        adam_step(
            &mut params,
            &flat,
            &mut adam,
            config.lr_at(iteration),
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        );
        encoder.set_params_flat(&params[..n_enc]);
        decoder.set_params_flat(&params[n_enc..n_enc + n_dec]);
    }

    let autoencoder = Autoencoder {
        encoder,
        decoder,
        latent_dim,
    };
    let final_mse = autoencoder.reconstruction_mse(&data.samples)?;
    Ok(TrainedAutoencoder {
        autoencoder,
        final_mse,
        loss_trace,
    })
}

/// Assemble the full finite element field the operator represents for a
/// coefficient vector: boundary DoFs from the decoded POD trace, interior
/// DoFs from the network output. The network never touches the boundary.
pub fn operator_field(
    net: &Mlp,
    mesh: &Mesh,
    basis: &PodBasis,
    coeffs: &[f64],
) -> Result<Field, NeuralError> {
    check_operator_setup(net, mesh, basis)?;
    let boundary = pod::pod_decode(basis, coeffs)?;
    let interior_values = net.forward(coeffs)?;
    Ok(assemble_field(mesh, &boundary, &interior_values))
}

fn assemble_field(mesh: &Mesh, boundary: &[f64], interior_values: &[f64]) -> Field {
    let mut field = Field::zeros(mesh);
    for (pos, &node) in mesh.boundary_nodes.iter().enumerate() {
        field.dofs[node] = boundary[pos];
    }
    for (k, &node) in mesh.interior_nodes().iter().enumerate() {
        field.dofs[node] = interior_values[k];
    }
    field
}

fn check_operator_setup(net: &Mlp, mesh: &Mesh, basis: &PodBasis) -> Result<(), NeuralError> {
    if basis.mesh_n != Some(mesh.n_cells_per_side) {
        return Err(NeuralError::MeshMismatch {
            expected: mesh.n_cells_per_side,
            got: basis.mesh_n,
        });
    }
    if net.input_dim() != basis.n_modes || net.output_dim() != mesh.interior_node_count() {
        return Err(NeuralError::BadOperatorShape {
            input: net.input_dim(),
            output: net.output_dim(),
            n_modes: basis.n_modes,
            interior: mesh.interior_node_count(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainedOperator {
    pub net: Mlp,
    /// Batch loss (mean energy) per iteration.
    pub loss_trace: Vec<f64>,
}

/// Train the operator network with the expected-energy loss.
///
/// Each iteration draws a batch of coefficient vectors (componentwise normal
/// with `input_coeff_std`), decodes them to boundary traces, assembles full
/// fields with the network's interior DoFs, and takes the batch-mean
/// nonlinear energy as the loss. With `element_subsample` set, a fresh
/// element subset is drawn for every input vector and the energy rescaled to
/// keep the estimator unbiased.
pub fn train_operator(
    mesh: &Mesh,
    basis: &PodBasis,
    hidden_width: usize,
    config: &TrainConfig,
) -> Result<TrainedOperator, NeuralError> {
    config.validate()?;
    let n_modes = basis.n_modes;
    let interior = mesh.interior_nodes();
    let dims = [
        n_modes,
        hidden_width,
        hidden_width,
        hidden_width,
        hidden_width,
        interior.len(),
    ];
    let mut sub = SplitMix64::stream(config.seed, 0);
    let mut net = mlp_init(&dims, sub.next_u64())?;
    check_operator_setup(&net, mesh, basis)?;
    let mut params = net.params_flat();
    let mut adam = AdamState::new(params.len());
    let mut draw_rng = SplitMix64::stream(config.seed, 1);
    let n_triangles = mesh.triangle_count();
    let mut loss_trace = Vec::with_capacity(config.iterations);
    let mut flat = Vec::new();
    let inv_batch = 1.0 / config.batch_size as f64;

    for iteration in 0..config.iterations {
        let mut grads = MlpGrads::zeros_like(&net);
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let coeffs: Vec<f64> = (0..n_modes)
                .map(|_| draw_rng.normal(0.0, config.input_coeff_std))
                .collect();
            let subset = config
                .element_subsample
                .map(|m| draw_rng.sample_indices(n_triangles, m));
            let boundary = pod::pod_decode(basis, &coeffs)?;
            let cache = net.forward_cached(&coeffs)?;
            let field = assemble_field(mesh, &boundary, cache.output());
            let energy = fem::nonlinear_energy(mesh, &field, subset.as_deref())?;
            batch_loss += energy * inv_batch;
            let energy_grad = fem::nonlinear_energy_grad(mesh, &field, subset.as_deref())?;
            let cotangent: Vec<f64> = interior
                .iter()
                .map(|&node| energy_grad[node] * inv_batch)
                .collect();
            let (g, _) = net.backward(&cache, &cotangent)?;
            grads.accumulate(&g);
        }
        if !batch_loss.is_finite() {
            return Err(NeuralError::TrainingDiverged { iteration });
        }
        loss_trace.push(batch_loss);
        grads.write_flat(&mut flat);
        adam_step(
            &mut params,
            &flat,
            &mut adam,
            config.lr_at(iteration),
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        );
        net.set_params_flat(&params);
    }

    Ok(TrainedOperator { net, loss_trace })
}

/// Energy of the operator's field for the all-zero coefficient vector. The
/// exact solution operator returns the zero field, so this is a cheap
/// well-trainedness proxy (0 for a perfect operator).
pub fn zero_energy_check(net: &Mlp, mesh: &Mesh, basis: &PodBasis) -> Result<f64, NeuralError> {
    let field = operator_field(net, mesh, basis, &vec![0.0; basis.n_modes])?;
    Ok(fem::nonlinear_energy(mesh, &field, None)?)
}

const VALIDATION_NEWTON_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidationStats {
    /// Average H1-seminorm difference against the Newton solution.
    pub h1_abs: f64,
    /// Average of per-problem relative H1-seminorm differences.
    pub h1_rel: f64,
    pub l2_abs: f64,
    pub l2_rel: f64,
    pub n_problems: usize,
    /// Draws skipped because the Newton oracle failed.
    pub n_skipped: usize,
}

/// Compare the operator network against the Newton solver on `n_problems`
/// fresh coefficient draws (componentwise N(0, 0.09), matching training).
pub fn validate_operator(
    net: &Mlp,
    mesh: &Mesh,
    basis: &PodBasis,
    n_problems: usize,
    seed: u64,
) -> Result<ValidationStats, NeuralError> {
    check_operator_setup(net, mesh, basis)?;
    let mut h1_abs = 0.0;
    let mut h1_rel = 0.0;
    let mut l2_abs = 0.0;
    let mut l2_rel = 0.0;
    let mut skipped = 0;
    let mut evaluated = 0;
    for k in 0..n_problems {
        let mut rng = SplitMix64::stream(seed, k as u64);
        let coeffs: Vec<f64> = (0..basis.n_modes).map(|_| rng.normal(0.0, 0.3)).collect();
        let boundary = pod::pod_decode(basis, &coeffs)?;
        let reference = match fem::newton_solve_nonlinear(mesh, &boundary, VALIDATION_NEWTON_TOL) {
            Ok(f) => f,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let approx = operator_field(net, mesh, basis, &coeffs)?;
        let diff = Field {
            mesh_n: mesh.n_cells_per_side,
            dofs: approx
                .dofs
                .iter()
                .zip(&reference.dofs)
                .map(|(a, b)| a - b)
                .collect(),
        };
        let err = fem::norms(mesh, &diff, None);
        let reference_norms = fem::norms(mesh, &reference, None);
        h1_abs += err.h1_semi;
        l2_abs += err.l2;
        h1_rel += err.h1_semi / reference_norms.h1_semi;
        l2_rel += err.l2 / reference_norms.l2;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(NeuralError::NoValidationProblems);
    }
    let m = evaluated as f64;
    Ok(ValidationStats {
        h1_abs: h1_abs / m,
        h1_rel: h1_rel / m,
        l2_abs: l2_abs / m,
        l2_rel: l2_rel / m,
        n_problems: evaluated,
        n_skipped: skipped,
    })
}

/// Everything needed to reproduce a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub config: TrainConfig,
    pub pod_file_hash: Option<String>,
    pub hidden_width: usize,
    pub mesh_n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    model: Mlp,
    manifest: TrainingManifest,
}

pub fn save_model(path: &Path, net: &Mlp, manifest: &TrainingManifest) -> Result<(), NeuralError> {
    let file = ModelFile {
        model: net.clone(),
        manifest: manifest.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Mlp, TrainingManifest), NeuralError> {
    let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok((file.model, file.manifest))
}

/// FNV-1a 64-bit content hash, hex-encoded; used to pin input files inside
/// manifests.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
