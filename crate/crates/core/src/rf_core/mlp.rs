//! Toy feed-forward velocity model: a two-hidden-layer MLP over
//! `[flattened latent, t, condition embedding, history summaries]` with
//! hand-rolled backprop and Adam, small enough to gradient-check.

use crate::error::{Error, Result};
use crate::latent::{LatentTensor, Shape};
use crate::rf_core::{Condition, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub latent_shape: Shape,
    pub embed_dim: usize,
    /// Number of prior-frame history summaries consumed (each one is a
    /// per-channel mean, `channels` wide). Missing entries are zero-padded.
    pub history_len: usize,
    pub hidden: (usize, usize),
    pub seed: u64,
}

impl MlpConfig {
    pub fn latent_dim(&self) -> usize {
        self.latent_shape.len()
    }

    pub fn history_dim(&self) -> usize {
        self.history_len * self.latent_shape.channels
    }

    pub fn input_dim(&self) -> usize {
        self.latent_dim() + 1 + self.embed_dim + self.history_dim()
    }

    pub fn param_count(&self) -> usize {
        let (h1, h2) = self.hidden;
        let n_in = self.input_dim();
        let n_out = self.latent_dim();
        n_in * h1 + h1 + h1 * h2 + h2 + h2 * n_out + n_out
    }
}

/// The network parameters, stored as one flat vector in the fixed order
/// `[w1, b1, w2, b2, w3, b3]` (weights row-major, `[out][in]`).
#[derive(Clone, Debug)]
pub struct MlpVelocityModel {
    config: MlpConfig,
    params: Vec<f64>,
}

impl MlpVelocityModel {
    /// Fresh model with seeded `N(0, 1/fan_in)` weights and zero biases.
    pub fn init(config: MlpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (h1, h2) = config.hidden;
        let n_in = config.input_dim();
        let n_out = config.latent_dim();
        let mut params = Vec::with_capacity(config.param_count());
        let mut layer = |rows: usize, cols: usize, params: &mut Vec<f64>| {
            let scale = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                params.push(rng.sample::<f64, _>(StandardNormal) * scale);
            }
            for _ in 0..rows {
                params.push(0.0);
            }
        };
        layer(h1, n_in, &mut params);
        layer(h2, h1, &mut params);
        layer(n_out, h2, &mut params);
        MlpVelocityModel { config, params }
    }

    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != config.param_count() {
            return Err(Error::InvalidModel(format!(
                "expected {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(MlpVelocityModel { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn slices(&self) -> (usize, usize, usize, usize, usize) {
        let (h1, h2) = self.config.hidden;
        let n_in = self.config.input_dim();
        let n_out = self.config.latent_dim();
        let w1_end = h1 * n_in;
        let b1_end = w1_end + h1;
        let w2_end = b1_end + h2 * h1;
        let b2_end = w2_end + h2;
        let w3_end = b2_end + n_out * h2;
        (w1_end, b1_end, w2_end, b2_end, w3_end)
    }

    fn build_input(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<Vec<f64>> {
        if x.shape() != self.config.latent_shape {
            return Err(Error::shape_mismatch(self.config.latent_shape, x.shape()));
        }
        if cond.embedding.len() != self.config.embed_dim {
            return Err(Error::InvalidModel(format!(
                "condition embedding has {} dims, model expects {}",
                cond.embedding.len(),
                self.config.embed_dim
            )));
        }
        let channels = self.config.latent_shape.channels;
        let mut input = Vec::with_capacity(self.config.input_dim());
        input.extend_from_slice(x.data());
        input.push(t);
        input.extend_from_slice(&cond.embedding);
        for slot in 0..self.config.history_len {
            match cond.history.get(slot) {
                Some(summary) => {
                    for c in 0..channels {
                        input.push(summary.get(c).copied().unwrap_or(0.0));
                    }
                }
                None => input.extend(std::iter::repeat(0.0).take(channels)),
            }
        }
        Ok(input)
    }

    /// Forward pass; returns `(z1, z2, out)` so the backward pass can reuse
    /// the activations.
    fn forward(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (h1, h2) = self.config.hidden;
        let n_in = self.config.input_dim();
        let n_out = self.config.latent_dim();
        let (w1_end, b1_end, w2_end, b2_end, w3_end) = self.slices();
        let w1 = &self.params[..w1_end];
        let b1 = &self.params[w1_end..b1_end];
        let w2 = &self.params[b1_end..w2_end];
        let b2 = &self.params[w2_end..b2_end];
        let w3 = &self.params[b2_end..w3_end];
        let b3 = &self.params[w3_end..];

        let mut z1 = vec![0.0; h1];
        for (i, z) in z1.iter_mut().enumerate() {
            let row = &w1[i * n_in..(i + 1) * n_in];
            let a: f64 = row.iter().zip(input).map(|(w, u)| w * u).sum::<f64>() + b1[i];
            *z = a.tanh();
        }
        let mut z2 = vec![0.0; h2];
        for (i, z) in z2.iter_mut().enumerate() {
            let row = &w2[i * h1..(i + 1) * h1];
            let a: f64 = row.iter().zip(&z1).map(|(w, u)| w * u).sum::<f64>() + b2[i];
            *z = a.tanh();
        }
        let mut out = vec![0.0; n_out];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &w3[i * h2..(i + 1) * h2];
            *o = row.iter().zip(&z2).map(|(w, u)| w * u).sum::<f64>() + b3[i];
        }
        (z1, z2, out)
    }

    /// Flow-matching loss and its analytic gradient w.r.t. every parameter,
    /// with the same per-entry-mean normalization as `flow_matching_loss`.
    pub fn flow_matching_grad(
        &self,
        batch: &[(LatentTensor, LatentTensor, Condition)],
        times: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.len() != times.len() {
            return Err(Error::InvalidModel(format!(
                "batch has {} items but {} times",
                batch.len(),
                times.len()
            )));
        }
        let (h1, h2) = self.config.hidden;
        let n_in = self.config.input_dim();
        let n_out = self.config.latent_dim();
        let (w1_end, b1_end, w2_end, b2_end, w3_end) = self.slices();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let norm = 1.0 / (batch.len() * n_out) as f64;

        for ((x0, x1, cond), &t) in batch.iter().zip(times) {
            let xt = x0.lerp(x1, t)?;
            let target = x1.sub(x0)?;
            let input = self.build_input(&xt, t, cond)?;
            let (z1, z2, out) = self.forward(&input);

            let mut dout = vec![0.0; n_out];
            for j in 0..n_out {
                let diff = out[j] - target.data()[j];
                loss += diff * diff * norm;
                dout[j] = 2.0 * diff * norm;
            }

            // layer 3
            let w3 = &self.params[b2_end..w3_end];
            let mut dz2 = vec![0.0; h2];
            for j in 0..n_out {
                for k in 0..h2 {
                    grad[b2_end + j * h2 + k] += dout[j] * z2[k];
                    dz2[k] += dout[j] * w3[j * h2 + k];
                }
                grad[w3_end + j] += dout[j];
            }
            // layer 2
            let w2 = &self.params[b1_end..w2_end];
            let mut dz1 = vec![0.0; h1];
            for k in 0..h2 {
                let da2 = dz2[k] * (1.0 - z2[k] * z2[k]);
                for l in 0..h1 {
                    grad[b1_end + k * h1 + l] += da2 * z1[l];
                    dz1[l] += da2 * w2[k * h1 + l];
                }
                grad[w2_end + k] += da2;
            }
            // layer 1
            for l in 0..h1 {
                let da1 = dz1[l] * (1.0 - z1[l] * z1[l]);
                for m in 0..n_in {
                    grad[l * n_in + m] += da1 * input[m];
                }
                grad[w1_end + l] += da1;
            }
        }
        Ok((loss, grad))
    }
}

impl VelocityField for MlpVelocityModel {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor> {
        let input = self.build_input(x, t, cond)?;
        let (_, _, out) = self.forward(&input);
        LatentTensor::new(self.config.latent_shape, out)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Training fails with `NonConvergence` if the held-out loss stays above
    /// this after the full budget.
    pub loss_threshold: f64,
    /// Path times are sampled uniformly in `[0, t_max]`.
    pub t_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            learning_rate: 5e-3,
            seed: 0,
            loss_threshold: 0.05,
            t_max: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct TrainReport {
    pub model: MlpVelocityModel,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
}

/// Train a toy MLP with Adam on couplings drawn from `sampler`. Fully
/// deterministic given the seeds in the configs.
pub fn train_toy_model<S>(
    model_config: MlpConfig,
    mut sampler: S,
    train: &TrainConfig,
) -> Result<TrainReport>
where
    S: FnMut(&mut ChaCha8Rng) -> (LatentTensor, LatentTensor, Condition),
{
    let mut model = MlpVelocityModel::init(model_config);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let draw_batch = |rng: &mut ChaCha8Rng,
                          sampler: &mut S|
     -> (Vec<(LatentTensor, LatentTensor, Condition)>, Vec<f64>) {
        let mut batch = Vec::with_capacity(train.batch_size);
        let mut times = Vec::with_capacity(train.batch_size);
        for _ in 0..train.batch_size {
            batch.push(sampler(rng));
            times.push(rng.random::<f64>() * train.t_max);
        }
        (batch, times)
    };

    // held-out evaluation batch, drawn from an independent stream
    let mut eval_rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_0e1a);
    let (eval_batch, eval_times) = draw_batch(&mut eval_rng, &mut sampler);
    let initial_loss = crate::rf_core::flow_matching_loss(&model, &eval_batch, &eval_times)?;

    let n = model.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut loss_history = Vec::with_capacity(train.steps);
    for step in 1..=train.steps {
        let (batch, times) = draw_batch(&mut rng, &mut sampler);
        let (loss, grad) = model.flow_matching_grad(&batch, &times)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "training loss".into(),
                step: Some(step),
            });
        }
        loss_history.push(loss);
        let bc1 = 1.0 - beta1.powi(step as i32);
        let bc2 = 1.0 - beta2.powi(step as i32);
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            model.params[i] -= train.learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }

    let final_loss = crate::rf_core::flow_matching_loss(&model, &eval_batch, &eval_times)?;
    if final_loss > train.loss_threshold {
        return Err(Error::NonConvergence {
            final_loss,
            threshold: train.loss_threshold,
        });
    }
    Ok(TrainReport {
        model,
        initial_loss,
        final_loss,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rf_core::flow_matching_loss;

    fn tiny_config() -> MlpConfig {
        MlpConfig {
            latent_shape: Shape::new(1, 1, 1, 1),
            embed_dim: 1,
            history_len: 0,
            hidden: (1, 2),
            seed: 3,
        }
    }

    #[test]
    fn param_count_matches_layout() {
        let cfg = tiny_config();
        // input = 1 + 1 + 1 = 3; w1 3x1 + b1 1 + w2 1x2 + b2 2 + w3 2x1 + b3 1 = 11
        assert_eq!(cfg.param_count(), 11);
        let model = MlpVelocityModel::init(cfg);
        assert_eq!(model.params().len(), 11);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = tiny_config();
        let model = MlpVelocityModel::init(cfg.clone());
        let batch: Vec<_> = (0..4)
            .map(|_| {
                (
                    LatentTensor::randn(cfg.latent_shape, &mut rng),
                    LatentTensor::randn(cfg.latent_shape, &mut rng),
                    Condition::from_label("a", 1),
                )
            })
            .collect();
        let times: Vec<f64> = (0..4).map(|i| 0.1 + 0.2 * i as f64).collect();
        let (loss, grad) = model.flow_matching_grad(&batch, &times).unwrap();
        let generic = flow_matching_loss(&model, &batch, &times).unwrap();
        assert!((loss - generic).abs() < 1e-12);

        let h = 1e-6;
        for i in 0..model.params().len() {
            let mut plus = model.clone();
            plus.params_mut()[i] += h;
            let mut minus = model.clone();
            minus.params_mut()[i] -= h;
            let lp = flow_matching_loss(&plus, &batch, &times).unwrap();
            let lm = flow_matching_loss(&minus, &batch, &times).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                ((fd - grad[i]) / denom).abs() < 1e-4,
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn training_is_bit_deterministic() {
        let cfg = MlpConfig {
            latent_shape: Shape::new(1, 1, 1, 2),
            embed_dim: 2,
            history_len: 0,
            hidden: (8, 8),
            seed: 11,
        };
        let train = TrainConfig {
            steps: 40,
            batch_size: 8,
            loss_threshold: f64::INFINITY,
            ..TrainConfig::default()
        };
        let sampler = |rng: &mut ChaCha8Rng| {
            let x0 = LatentTensor::randn(Shape::new(1, 1, 1, 2), rng);
            let x1 = LatentTensor::filled(Shape::new(1, 1, 1, 2), 1.0);
            (x0, x1, Condition::from_label("a", 2))
        };
        let a = train_toy_model(cfg.clone(), sampler, &train).unwrap();
        let b = train_toy_model(cfg, sampler, &train).unwrap();
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn training_descends() {
        let cfg = MlpConfig {
            latent_shape: Shape::new(1, 1, 1, 2),
            embed_dim: 2,
            history_len: 0,
            hidden: (16, 16),
            seed: 5,
        };
        let train = TrainConfig {
            steps: 300,
            batch_size: 16,
            loss_threshold: f64::INFINITY,
            ..TrainConfig::default()
        };
        let sampler = |rng: &mut ChaCha8Rng| {
            let x0 = LatentTensor::randn(Shape::new(1, 1, 1, 2), rng);
            let x1 = LatentTensor::new(Shape::new(1, 1, 1, 2), vec![0.5, -0.5]).unwrap();
            (x0, x1, Condition::from_label("a", 2))
        };
        let report = train_toy_model(cfg, sampler, &train).unwrap();
        assert!(report.final_loss < report.initial_loss);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let model = MlpVelocityModel::init(tiny_config());
        let bad = LatentTensor::zeros(Shape::new(1, 1, 2, 2));
        assert!(model
            .velocity(&bad, 0.5, &Condition::from_label("a", 1))
            .is_err());
        let bad_cond = Condition::from_label("a", 3);
        let ok_x = LatentTensor::zeros(Shape::new(1, 1, 1, 1));
        assert!(model.velocity(&ok_x, 0.5, &bad_cond).is_err());
    }
}
