use std::time::Instant;
use uclat_core::datagen::sample_fourier_dataset;
use uclat_core::mesh::build_unit_square_mesh;
use uclat_core::neural::*;
use uclat_core::pod::fit_pod;

fn main() {
    let mesh = build_unit_square_mesh(10).unwrap();
    let data = sample_fourier_dataset(&mesh, 9, 1000, 42, 0.15).unwrap();
    let basis = fit_pod(&data, None).unwrap();

    for (lr, every) in [(1e-3, 12_500usize), (3e-3, 10_000)] {
        let cfg = TrainConfig {
            batch_size: 32,
            iterations: 50_000,
            lr_initial: lr,
            lr_decay_factor: 0.5,
            lr_decay_every: every,
            seed: 7,
            element_subsample: None,
            input_coeff_std: 0.3,
        };
        let t0 = Instant::now();
        let trained = train_operator(&mesh, &basis, 64, &cfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let ze = zero_energy_check(&trained.net, &mesh, &basis).unwrap();
        let stats = validate_operator(&trained.net, &mesh, &basis, 100, 123).unwrap();
        println!(
            "lr={lr:.0e}/{every}: {dt:.0}s, E(0)={ze:.3e}, h1_rel={:.2}% l2_rel={:.2}% h1_abs={:.2e} l2_abs={:.2e}",
            stats.h1_rel * 100.0, stats.l2_rel * 100.0, stats.h1_abs, stats.l2_abs
        );
    }
}
