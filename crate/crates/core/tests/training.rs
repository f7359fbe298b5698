//! Training oracle: flow matching on point-mass couplings must recover the
//! closed-form optimal velocity field.

use five_bench::latent::{LatentTensor, Shape};
use five_bench::rf_core::{
    train_toy_model, Condition, MlpConfig, TrainConfig, VelocityField,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// With `x1 = mu_c` always, the optimal flow-matching field is exactly
/// `(mu_c - x) / (1 - t)`; a trained toy MLP must approximate it on
/// held-out points away from the `t -> 1` blow-up region.
#[test]
fn trained_model_approximates_point_mass_field() {
    let shape = Shape::new(1, 1, 1, 2);
    let modes: [(&str, [f64; 2]); 2] = [("a", [0.8, -0.4]), ("b", [-0.6, 0.5])];
    let conds: Vec<(Condition, [f64; 2])> = modes
        .iter()
        .map(|(label, mu)| (Condition::from_label(label, 4), *mu))
        .collect();

    let config = MlpConfig {
        latent_shape: shape,
        embed_dim: 4,
        history_len: 0,
        hidden: (48, 48),
        seed: 17,
    };
    let train = TrainConfig {
        steps: 3000,
        batch_size: 32,
        learning_rate: 4e-3,
        seed: 23,
        loss_threshold: 0.02,
        t_max: 0.85,
    };
    let conds_for_sampler = conds.clone();
    let report = train_toy_model(
        config,
        move |rng: &mut ChaCha8Rng| {
            let (cond, mu) = &conds_for_sampler[rng.random_range(0..2)];
            let x0 = LatentTensor::randn(shape, rng);
            let x1 = LatentTensor::new(shape, mu.to_vec()).unwrap();
            (x0, x1, cond.clone())
        },
        &train,
    )
    .expect("training converges below the loss threshold");
    assert!(report.final_loss < report.initial_loss);

    // held-out probe points: moderate t, states near the data region; a
    // model missing the 1/(1-t) structure errs here by O(1)
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let mut total = 0.0f64;
    let mut n = 0usize;
    for _ in 0..50 {
        let t: f64 = 0.15 + 0.45 * rng.random::<f64>();
        let x = LatentTensor::new(
            shape,
            vec![rng.random::<f64>() * 1.6 - 0.8, rng.random::<f64>() * 1.6 - 0.8],
        )
        .unwrap();
        let (cond, mu) = &conds[rng.random_range(0..2)];
        let got = report.model.velocity(&x, t, cond).unwrap();
        for c in 0..2 {
            let exact = (mu[c] - x.data()[c]) / (1.0 - t);
            let err = (got.data()[c] - exact).abs();
            worst = worst.max(err);
            total += err;
            n += 1;
        }
    }
    let mean = total / n as f64;
    assert!(mean < 0.15, "mean field error {mean}");
    assert!(worst < 0.5, "worst field error {worst}");
}
