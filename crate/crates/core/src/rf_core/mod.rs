//! Toy rectified-flow core: linear paths, flow-matching loss, classifier-free
//! guidance, and explicit Euler ODE sampling.
//!
//! Time runs from 0 (noise) to 1 (data). Velocities are always evaluated at
//! the left endpoint of a step, so a valid grid never queries a field at
//! exactly t = 1.

pub mod checkpoint;
pub mod fields;
pub mod mlp;

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::util::hash_unit;
use serde::{Deserialize, Serialize};

pub use fields::{PointMassField, RelaxationField, StageBank, StageModel, VelocityField};
pub use mlp::{train_toy_model, MlpConfig, MlpVelocityModel, TrainConfig};

/// Reserved id for the unconditional branch of classifier-free guidance.
pub const NULL_CONDITION_ID: &str = "<null>";

/// A toy "prompt": a discrete label, its embedding vector, and optional
/// per-frame history summaries for autoregressive conditioning, ordered most
/// recent first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub embedding: Vec<f64>,
    pub history: Vec<Vec<f64>>,
}

impl Condition {
    pub fn new(id: impl Into<String>, embedding: Vec<f64>) -> Self {
        Condition {
            id: id.into(),
            embedding,
            history: Vec::new(),
        }
    }

    /// Deterministic embedding derived from the label text, so arbitrary
    /// prompt strings map to stable condition vectors.
    pub fn from_label(label: &str, dim: usize) -> Self {
        let embedding = (0..dim)
            .map(|i| 2.0 * hash_unit(format!("cond:{label}:{i}").as_bytes()) - 1.0)
            .collect();
        Condition::new(label, embedding)
    }

    /// The reserved null condition with a zero embedding.
    pub fn null(dim: usize) -> Self {
        Condition::new(NULL_CONDITION_ID, vec![0.0; dim])
    }

    /// Null counterpart of `self`: same history, null id and zero embedding.
    /// CFG drops the text condition but keeps autoregressive context.
    pub fn to_null(&self) -> Self {
        Condition {
            id: NULL_CONDITION_ID.to_string(),
            embedding: vec![0.0; self.embedding.len()],
            history: self.history.clone(),
        }
    }

    pub fn is_null(&self) -> bool {
        self.id == NULL_CONDITION_ID
    }

    pub fn with_history(mut self, history: Vec<Vec<f64>>) -> Self {
        self.history = history;
        self
    }
}

/// Strictly increasing times `t_0 < ... < t_N` in [0, 1] plus the number of
/// initial steps the edit loop skips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    skip_count: usize,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>, skip_count: usize) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidGrid("need at least two time points".into()));
        }
        for w in times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidGrid(format!(
                    "times not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        let (first, last) = (times[0], *times.last().unwrap());
        if !(0.0..=1.0).contains(&first) || !(0.0..=1.0).contains(&last) {
            return Err(Error::InvalidGrid("endpoints must lie in [0, 1]".into()));
        }
        let steps = times.len() - 1;
        if skip_count >= steps {
            return Err(Error::InvalidGrid(format!(
                "skip_count {skip_count} must be < step count {steps}"
            )));
        }
        Ok(TimeGrid { times, skip_count })
    }

    /// `steps` uniform intervals over [0, 1].
    pub fn uniform(steps: usize, skip_count: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("zero steps".into()));
        }
        let times = (0..=steps).map(|i| i as f64 / steps as f64).collect();
        TimeGrid::new(times, skip_count)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn step_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn skip_count(&self) -> usize {
        self.skip_count
    }

    /// Steps that actually run: `(step index, t, dt)` for the skipped-prefix
    /// tail of the grid.
    pub fn retained_steps(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (self.skip_count..self.step_count())
            .map(|i| (i, self.times[i], self.times[i + 1] - self.times[i]))
    }

    /// Time at which the edit loop starts.
    pub fn start_time(&self) -> f64 {
        self.times[self.skip_count]
    }
}

fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) || !t.is_finite() {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    Ok(())
}

/// Linear path `(1-t) x0 + t x1`.
pub fn interpolate_path(x0: &LatentTensor, x1: &LatentTensor, t: f64) -> Result<LatentTensor> {
    check_unit_time(t)?;
    x0.lerp(x1, t)
}

/// The constant target vector field of the linear path: `x1 - x0`.
pub fn target_velocity(x0: &LatentTensor, x1: &LatentTensor) -> Result<LatentTensor> {
    x1.sub(x0)
}

/// Mean squared flow-matching residual, averaged over the batch and over
/// latent entries.
pub fn flow_matching_loss(
    model: &dyn VelocityField,
    batch: &[(LatentTensor, LatentTensor, Condition)],
    times: &[f64],
) -> Result<f64> {
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
    let mut total = 0.0;
    let mut entries = 0usize;
    for ((x0, x1, cond), &t) in batch.iter().zip(times) {
        check_unit_time(t)?;
        let xt = interpolate_path(x0, x1, t)?;
        let target = target_velocity(x0, x1)?;
        let out = model.velocity(&xt, t, cond)?;
        if !out.is_finite() {
            return Err(Error::NonFinite {
                what: "model output".into(),
                step: None,
            });
        }
        let diff = out.sub(&target)?;
        total += diff.data().iter().map(|v| v * v).sum::<f64>();
        entries += diff.shape().len();
    }
    Ok(total / entries as f64)
}

/// Classifier-free guidance: `v_null + scale * (v_cond - v_null)`.
/// `scale == 1` short-circuits to the conditional branch alone, so an
/// unguided evaluation costs a single model call.
pub fn guided_velocity(
    model: &dyn VelocityField,
    x: &LatentTensor,
    t: f64,
    cond: &Condition,
    scale: f64,
) -> Result<LatentTensor> {
    if !(scale >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "guidance scale must be >= 0, got {scale}"
        )));
    }
    let v = if scale == 1.0 {
        model.velocity(x, t, cond)?
    } else {
        let v_null = model.velocity(x, t, &cond.to_null())?;
        let v_cond = model.velocity(x, t, cond)?;
        v_null.add_scaled(&v_cond.sub(&v_null)?, scale)?
    };
    if !v.is_finite() {
        return Err(Error::NonFinite {
            what: "guided velocity".into(),
            step: None,
        });
    }
    Ok(v)
}

/// Explicit Euler integration of `dx = v dt` over the grid, with guidance.
/// Returns the state at the final grid time.
pub fn sample_ode(
    model: &dyn VelocityField,
    x0: &LatentTensor,
    cond: &Condition,
    grid: &TimeGrid,
    scale: f64,
) -> Result<LatentTensor> {
    if !x0.is_finite() {
        return Err(Error::NonFinite {
            what: "initial state".into(),
            step: None,
        });
    }
    let mut x = x0.clone();
    for (i, t, dt) in grid.retained_steps() {
        let v = guided_velocity(model, &x, t, cond, scale).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { what, step: Some(i) },
            other => other,
        })?;
        x = x.add_scaled(&v, dt)?;
        if !x.is_finite() {
            return Err(Error::NonFinite {
                what: "ode state".into(),
                step: Some(i),
            });
        }
    }
    Ok(x)
}

/// Wrapper that counts model evaluations, for call-budget checks.
pub struct CallCountingField<'a> {
    inner: &'a dyn VelocityField,
    calls: std::cell::Cell<usize>,
}

impl<'a> CallCountingField<'a> {
    pub fn new(inner: &'a dyn VelocityField) -> Self {
        CallCountingField {
            inner,
            calls: std::cell::Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl VelocityField for CallCountingField<'_> {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(x, t, cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;

    struct ExactField;
    impl VelocityField for ExactField {
        fn velocity(&self, _x: &LatentTensor, _t: f64, _c: &Condition) -> Result<LatentTensor> {
            // stands in for a perfect predictor on the all-ones displacement
            Ok(LatentTensor::filled(Shape::new(1, 1, 2, 2), 1.0))
        }
    }

    struct ZeroField(Shape);
    impl VelocityField for ZeroField {
        fn velocity(&self, _x: &LatentTensor, _t: f64, _c: &Condition) -> Result<LatentTensor> {
            Ok(LatentTensor::zeros(self.0))
        }
    }

    fn cond() -> Condition {
        Condition::from_label("a", 3)
    }

    #[test]
    fn path_endpoints() {
        let x0 = LatentTensor::filled(Shape::new(1, 1, 2, 2), -1.5);
        let x1 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 3.25);
        assert_eq!(interpolate_path(&x0, &x1, 0.0).unwrap(), x0);
        assert_eq!(interpolate_path(&x0, &x1, 1.0).unwrap(), x1);
    }

    #[test]
    fn path_quarter_point() {
        let x0 = LatentTensor::zeros(Shape::new(1, 1, 2, 2));
        let x1 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 2.0);
        let p = interpolate_path(&x0, &x1, 0.25).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn path_rejects_bad_inputs() {
        let x0 = LatentTensor::zeros(Shape::new(1, 1, 2, 2));
        let x1 = LatentTensor::zeros(Shape::new(1, 1, 2, 3));
        assert!(interpolate_path(&x0, &x0, 1.5).is_err());
        assert!(interpolate_path(&x0, &x1, 0.5).is_err());
    }

    #[test]
    fn target_velocity_values() {
        let x0 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let x1 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 3.0);
        let v = target_velocity(&x0, &x1).unwrap();
        assert!(v.data().iter().all(|&x| x == 2.0));
        let zero = target_velocity(&x0, &x0).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));
        // anti-symmetry
        let vr = target_velocity(&x1, &x0).unwrap();
        assert_eq!(v.scale(-1.0), vr);
    }

    #[test]
    fn loss_zero_for_perfect_predictor() {
        let x0 = LatentTensor::zeros(Shape::new(1, 1, 2, 2));
        let x1 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let batch = vec![(x0, x1, cond())];
        let loss = flow_matching_loss(&ExactField, &batch, &[0.3]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_is_per_entry_mean() {
        // zero model, displacement all-ones, D = 4 entries -> per-entry mean 1
        let x0 = LatentTensor::zeros(Shape::new(1, 1, 2, 2));
        let x1 = LatentTensor::filled(Shape::new(1, 1, 2, 2), 1.0);
        let batch = vec![(x0, x1, cond())];
        let loss = flow_matching_loss(&ZeroField(Shape::new(1, 1, 2, 2)), &batch, &[0.5]).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn loss_invariant_to_batch_order() {
        let shape = Shape::new(1, 1, 2, 2);
        let a = (
            LatentTensor::zeros(shape),
            LatentTensor::filled(shape, 1.0),
            cond(),
        );
        let b = (
            LatentTensor::filled(shape, 0.5),
            LatentTensor::filled(shape, -2.0),
            cond(),
        );
        let fwd =
            flow_matching_loss(&ZeroField(shape), &[a.clone(), b.clone()], &[0.1, 0.9]).unwrap();
        let rev = flow_matching_loss(&ZeroField(shape), &[b, a], &[0.9, 0.1]).unwrap();
        assert!((fwd - rev).abs() < 1e-15);
    }

    #[test]
    fn loss_rejects_empty_batch() {
        assert!(matches!(
            flow_matching_loss(&ExactField, &[], &[]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn guidance_endpoints_and_extrapolation() {
        let shape = Shape::new(1, 1, 1, 1);
        let field = PointMassField::with_modes([
            ("a", vec![2.0]),
            (NULL_CONDITION_ID, vec![1.0]),
        ]);
        let x = LatentTensor::zeros(shape);
        let c = Condition::from_label("a", 2);
        // at t=0: v_null = 1, v_cond = 2
        let v0 = guided_velocity(&field, &x, 0.0, &c, 0.0).unwrap();
        assert!((v0.data()[0] - 1.0).abs() < 1e-15);
        let v1 = guided_velocity(&field, &x, 0.0, &c, 1.0).unwrap();
        assert!((v1.data()[0] - 2.0).abs() < 1e-15);
        let v5 = guided_velocity(&field, &x, 0.0, &c, 5.0).unwrap();
        assert!((v5.data()[0] - 6.0).abs() < 1e-12);
        assert!(guided_velocity(&field, &x, 0.0, &c, -0.5).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5], 0).is_err());
        assert!(TimeGrid::new(vec![0.0, 1.2], 0).is_err());
        assert!(TimeGrid::uniform(10, 10).is_err());
        let g = TimeGrid::uniform(50, 15).unwrap();
        assert_eq!(g.step_count(), 50);
        assert!((g.start_time() - 0.3).abs() < 1e-15);
        assert_eq!(g.retained_steps().count(), 35);
    }

    #[test]
    fn ode_stationary_under_zero_field() {
        let shape = Shape::new(1, 1, 2, 2);
        let x0 = LatentTensor::filled(shape, 0.7);
        let grid = TimeGrid::uniform(20, 0).unwrap();
        let out = sample_ode(&ZeroField(shape), &x0, &cond(), &grid, 1.0).unwrap();
        assert_eq!(out, x0);
    }

    #[test]
    fn ode_point_mass_reaches_mode() {
        // exact field (mu - x)/(1 - t) follows the straight line (1-t) x0 + t mu
        let shape = Shape::new(1, 2, 1, 1);
        let field = PointMassField::with_modes([("g", vec![2.0, -1.0])]);
        let x0 = LatentTensor::zeros(shape);
        let c = Condition::from_label("g", 2);
        let grid = TimeGrid::uniform(100, 0).unwrap();
        let out = sample_ode(&field, &x0, &c, &grid, 1.0).unwrap();
        assert!((out.at(0, 0, 0, 0) - 2.0).abs() < 1e-12);
        assert!((out.at(0, 1, 0, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn call_counter_counts_cfg_branches() {
        let shape = Shape::new(1, 1, 1, 1);
        let field = PointMassField::with_modes([
            ("a", vec![1.0]),
            (NULL_CONDITION_ID, vec![0.0]),
        ]);
        let counter = CallCountingField::new(&field);
        let x = LatentTensor::zeros(shape);
        let c = Condition::from_label("a", 1);
        guided_velocity(&counter, &x, 0.2, &c, 1.0).unwrap();
        assert_eq!(counter.calls(), 1);
        guided_velocity(&counter, &x, 0.2, &c, 3.0).unwrap();
        assert_eq!(counter.calls(), 3);
    }
}
