//! Velocity fields: the model interface plus closed-form analytic fields used
//! as oracles in editing tests.

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::rf_core::{Condition, NULL_CONDITION_ID};
use std::collections::BTreeMap;

/// A (possibly guided) velocity model `v(x, t, condition)`.
///
/// Evaluation must be deterministic given its inputs. Implementations may
/// reject latent shapes they were not built for.
pub trait VelocityField {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor>;
}

impl<T: VelocityField + ?Sized> VelocityField for &T {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor> {
        (**self).velocity(x, t, cond)
    }
}

impl<T: VelocityField + ?Sized> VelocityField for Box<T> {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor> {
        (**self).velocity(x, t, cond)
    }
}

/// Exact velocity field of a rectified flow whose target distribution is a
/// point mass per condition label: `v(x, t) = (mu_c - x) / (1 - t)`.
///
/// Modes are per-frame, per-channel constants broadcast over space; a single
/// frame row broadcasts over all frames, so the same field works at every
/// pyramid resolution. An optional history coupling shifts the mode by the
/// latest history summary, which makes autoregressive conditioning testable
/// in closed form.
#[derive(Clone, Debug)]
pub struct PointMassField {
    modes: BTreeMap<String, Vec<Vec<f64>>>,
    history_coupling: f64,
}

impl PointMassField {
    pub fn new() -> Self {
        PointMassField {
            modes: BTreeMap::new(),
            history_coupling: 0.0,
        }
    }

    /// Build from `(label, per-channel mode)` pairs broadcast over frames.
    pub fn with_modes<I, S>(modes: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut f = PointMassField::new();
        for (label, mode) in modes {
            f.insert_mode(label, vec![mode]);
        }
        f
    }

    /// Register a per-frame mode table: `per_frame[f][c]`.
    pub fn insert_mode(&mut self, label: impl Into<String>, per_frame: Vec<Vec<f64>>) {
        self.modes.insert(label.into(), per_frame);
    }

    pub fn set_history_coupling(&mut self, coupling: f64) {
        self.history_coupling = coupling;
    }

    pub fn history_coupling(&self) -> f64 {
        self.history_coupling
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.modes.keys().map(|s| s.as_str())
    }

    /// Per-channel mode for `label`, averaged over all registered modes when
    /// the null condition has no entry of its own.
    fn mode_rows(&self, label: &str) -> Result<Vec<Vec<f64>>> {
        if let Some(rows) = self.modes.get(label) {
            return Ok(rows.clone());
        }
        if label == NULL_CONDITION_ID && !self.modes.is_empty() {
            // unconditional branch defaults to the mean of all modes
            let frames = self.modes.values().map(|r| r.len()).max().unwrap();
            let channels = self.modes.values().next().unwrap()[0].len();
            let mut mean = vec![vec![0.0; channels]; frames];
            for rows in self.modes.values() {
                for (f, row) in mean.iter_mut().enumerate() {
                    let src = &rows[f.min(rows.len() - 1)];
                    for (c, v) in row.iter_mut().enumerate() {
                        *v += src[c];
                    }
                }
            }
            let n = self.modes.len() as f64;
            for row in &mut mean {
                for v in row.iter_mut() {
                    *v /= n;
                }
            }
            return Ok(mean);
        }
        Err(Error::InvalidModel(format!(
            "no point-mass mode registered for label {label:?}"
        )))
    }

    /// The effective target mean at `(frame, channel)` for a condition,
    /// including the history shift.
    pub fn effective_mode(&self, cond: &Condition, frame: usize, channel: usize) -> Result<f64> {
        let rows = self.mode_rows(&cond.id)?;
        let row = &rows[frame.min(rows.len() - 1)];
        if channel >= row.len() {
            return Err(Error::InvalidModel(format!(
                "mode for {:?} has {} channels, asked for {channel}",
                cond.id,
                row.len()
            )));
        }
        let mut mu = row[channel];
        if self.history_coupling != 0.0 {
            // history is ordered most recent first
            if let Some(latest) = cond.history.first() {
                if channel < latest.len() {
                    mu += self.history_coupling * latest[channel];
                }
            }
        }
        Ok(mu)
    }
}

impl Default for PointMassField {
    fn default() -> Self {
        PointMassField::new()
    }
}

impl VelocityField for PointMassField {
    fn velocity(&self, x: &LatentTensor, t: f64, cond: &Condition) -> Result<LatentTensor> {
        if t >= 1.0 - 1e-12 {
            return Err(Error::TimeOutOfRange {
                t,
                lo: 0.0,
                hi: 1.0 - 1e-12,
            });
        }
        let shape = x.shape();
        let inv = 1.0 / (1.0 - t);
        let mut out = LatentTensor::zeros(shape);
        for f in 0..shape.frames {
            for c in 0..shape.channels {
                let mu = self.effective_mode(cond, f, c)?;
                for y in 0..shape.height {
                    for xx in 0..shape.width {
                        out.set(f, c, y, xx, (mu - x.at(f, c, y, xx)) * inv);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Curved analytic field `v(x, t) = mu - x` with exact solution
/// `x(t) = mu + (x0 - mu) e^{-t}`.
///
/// Euler integration of this field has a genuine first-order truncation
/// error, so it is the one used to measure convergence slopes; point-mass
/// fields follow straight lines that explicit Euler reproduces exactly.
#[derive(Clone, Debug)]
pub struct RelaxationField {
    pub target_per_channel: Vec<f64>,
}

impl VelocityField for RelaxationField {
    fn velocity(&self, x: &LatentTensor, _t: f64, _cond: &Condition) -> Result<LatentTensor> {
        let shape = x.shape();
        let mut out = LatentTensor::zeros(shape);
        for f in 0..shape.frames {
            for c in 0..shape.channels {
                let mu = self
                    .target_per_channel
                    .get(c)
                    .copied()
                    .unwrap_or_else(|| *self.target_per_channel.last().unwrap());
                for y in 0..shape.height {
                    for xx in 0..shape.width {
                        out.set(f, c, y, xx, mu - x.at(f, c, y, xx));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per-stage dispatch for pyramid runs: stage `k` (0 = full resolution) may be
/// served by a resolution-specific model.
pub trait StageModel {
    fn stage_field(&self, k: usize) -> &dyn VelocityField;
}

/// Any single resolution-agnostic field serves all stages.
impl<T: VelocityField> StageModel for T {
    fn stage_field(&self, _k: usize) -> &dyn VelocityField {
        self
    }
}

/// One field per stage, for resolution-fixed models such as the toy MLP.
pub struct StageBank {
    fields: Vec<Box<dyn VelocityField>>,
}

impl StageBank {
    pub fn new(fields: Vec<Box<dyn VelocityField>>) -> Self {
        StageBank { fields }
    }
}

impl StageModel for StageBank {
    fn stage_field(&self, k: usize) -> &dyn VelocityField {
        self.fields[k.min(self.fields.len() - 1)].as_ref()
    }
}
