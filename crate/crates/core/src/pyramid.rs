//! Pyramidal multi-resolution rectified flow and its windowed editing loop.
//!
//! Flow time [0, 1] is decomposed into K windows, each processed at
//! resolution `full / 2^k` (k = 0 is full resolution). Within a window the
//! ordinary FlowEdit update runs against the window's own source endpoint as
//! anchor; between windows the end state is upsampled, re-noised with a
//! variance-matching coefficient, and the next window's edit endpoint is
//! estimated from the source path.
//!
//! Frames are processed autoregressively: each frame's source velocity is
//! conditioned on summaries of prior clean source latents and its target
//! velocity on summaries of prior edited latents.

use crate::error::{Error, Result};
use crate::flowedit::StepDiag;
use crate::latent::LatentTensor;
use crate::rf_core::{guided_velocity, Condition, StageModel, TimeGrid};
use crate::rf_core::VelocityField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The K stage windows, indexed by stage `k` (0 = full resolution). Window
/// `k` covers times `[s_k, e_k]`; stage `k` runs at resolution divided by
/// `2^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSchedule {
    windows: Vec<(f64, f64)>,
}

impl StageSchedule {
    pub fn new(windows: Vec<(f64, f64)>) -> Result<Self> {
        let schedule = StageSchedule { windows };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Default three-stage schedule: windows [0, 1/3], [0.30, 2/3],
    /// [0.60, 1] from lowest to full resolution (transition ratio 0.9).
    pub fn default_three_stage() -> Self {
        StageSchedule {
            windows: vec![(0.60, 1.0), (0.30, 2.0 / 3.0), (0.0, 1.0 / 3.0)],
        }
    }

    /// Single full-resolution window covering [0, 1]; degenerates to plain
    /// FlowEdit.
    pub fn single_stage() -> Self {
        StageSchedule {
            windows: vec![(0.0, 1.0)],
        }
    }

    pub fn stages(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, k: usize) -> (f64, f64) {
        self.windows[k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.windows.is_empty() {
            return Err(Error::InvalidSchedule("no stages".into()));
        }
        for (k, &(s, e)) in self.windows.iter().enumerate() {
            if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&e) || s >= e {
                return Err(Error::InvalidSchedule(format!(
                    "window {k} = [{s}, {e}] must satisfy 0 <= s < e <= 1"
                )));
            }
        }
        if (self.windows[0].1 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSchedule(format!(
                "full-resolution window must end at 1, ends at {}",
                self.windows[0].1
            )));
        }
        for k in 1..self.windows.len() {
            self.alpha(k)?;
        }
        Ok(())
    }

    /// Corrective-noise coefficient for the transition from stage `k` to
    /// `k - 1`: `sqrt((1 - s_{k-1})^2 - (s_{k-1}/e_k)^2 (1 - e_k)^2)`,
    /// chosen so per-entry marginal variance is continuous across the
    /// transition.
    pub fn alpha(&self, k: usize) -> Result<f64> {
        if k == 0 || k >= self.windows.len() {
            return Err(Error::InvalidSchedule(format!(
                "transition index {k} out of range"
            )));
        }
        let s_next = self.windows[k - 1].0;
        let e_k = self.windows[k].1;
        let ratio = s_next / e_k;
        let alpha_sq = (1.0 - s_next).powi(2) - (ratio * (1.0 - e_k)).powi(2);
        if alpha_sq < -1e-12 {
            return Err(Error::InvalidSchedule(format!(
                "transition {k} -> {} has negative corrective variance {alpha_sq}",
                k - 1
            )));
        }
        Ok(alpha_sq.max(0.0).sqrt())
    }

    /// Mean-rescaling coefficient `s_{k-1} / e_k` of the same transition.
    pub fn transition_ratio(&self, k: usize) -> Result<f64> {
        if k == 0 || k >= self.windows.len() {
            return Err(Error::InvalidSchedule(format!(
                "transition index {k} out of range"
            )));
        }
        Ok(self.windows[k - 1].0 / self.windows[k].1)
    }
}

/// Per-stage step budget: `steps[k]` Euler steps in window `k`, of which the
/// first `skips[k]` are skipped. `skips[k] >= steps[k]` skips the window
/// entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub steps: Vec<usize>,
    pub skips: Vec<usize>,
}

impl StagePlan {
    pub fn uniform(stages: usize, steps: usize) -> Self {
        StagePlan {
            steps: vec![steps; stages],
            skips: vec![0; stages],
        }
    }

    /// Spec default: skip every step of the lowest-resolution stage.
    pub fn skip_lowest_stage(mut self) -> Self {
        if let (Some(skip), Some(&steps)) = (self.skips.last_mut(), self.steps.last()) {
            *skip = steps;
        }
        self
    }

    pub fn validate(&self, stages: usize) -> Result<()> {
        if self.steps.len() != stages || self.skips.len() != stages {
            return Err(Error::InvalidSchedule(format!(
                "plan covers {} stages, schedule has {stages}",
                self.steps.len()
            )));
        }
        if self.steps.iter().any(|&s| s == 0) {
            return Err(Error::InvalidSchedule("zero steps in a stage".into()));
        }
        Ok(())
    }
}

/// Schedule file: windows plus step plans, validated on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub stages: usize,
    pub windows: Vec<(f64, f64)>,
    pub plan_first_frame: StagePlan,
    pub plan_later_frames: StagePlan,
}

impl ScheduleFile {
    pub fn parse(text: &str) -> Result<(StageSchedule, StagePlan, StagePlan)> {
        let file: ScheduleFile = serde_json::from_str(text)?;
        if file.windows.len() != file.stages {
            return Err(Error::InvalidSchedule(format!(
                "file declares {} stages but lists {} windows",
                file.stages,
                file.windows.len()
            )));
        }
        let schedule = StageSchedule::new(file.windows)?;
        file.plan_first_frame.validate(schedule.stages())?;
        file.plan_later_frames.validate(schedule.stages())?;
        Ok((schedule, file.plan_first_frame, file.plan_later_frames))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(StageSchedule, StagePlan, StagePlan)> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Self::parse(&text)
    }
}

/// Rescaled window time `(t - s_k) / (e_k - s_k)`, 0 at the window start and
/// 1 at its end.
pub fn rescaled_time(t: f64, s_k: f64, e_k: f64) -> Result<f64> {
    if !(s_k..=e_k).contains(&t) {
        return Err(Error::TimeOutOfRange { t, lo: s_k, hi: e_k });
    }
    Ok((t - s_k) / (e_k - s_k))
}

/// Window endpoints of the stage-k source path for a given noise draw:
/// start `(1-s_k) x0 + s_k Up(Down(x1, 2^{k+1}))` and end
/// `(1-e_k) x0 + e_k Down(x1, 2^k)`, both at stage-k resolution.
pub fn window_endpoints(
    x0: &LatentTensor,
    x1: &LatentTensor,
    k: usize,
    schedule: &StageSchedule,
) -> Result<(LatentTensor, LatentTensor)> {
    let (s_k, e_k) = schedule.window(k);
    let down_k = x1.downsample(1 << k)?;
    x0.check_same_shape(&down_k)?;
    let start = if s_k == 0.0 {
        x0.clone()
    } else {
        let up_prev = x1.downsample(1 << (k + 1))?.upsample(2);
        x0.lerp(&up_prev, s_k)?
    };
    let end = if e_k == 1.0 {
        down_k
    } else {
        x0.lerp(&down_k, e_k)?
    };
    Ok((start, end))
}

/// Stage transition with a caller-supplied standard-normal draw at the
/// target resolution: `(s_{k-1}/e_k) Up(x_e) + alpha * noise`.
pub fn stage_transition_with_noise(
    x_e: &LatentTensor,
    schedule: &StageSchedule,
    k: usize,
    noise: &LatentTensor,
) -> Result<LatentTensor> {
    let ratio = schedule.transition_ratio(k)?;
    let alpha = schedule.alpha(k)?;
    let up = x_e.upsample(2).scale(ratio);
    up.add_scaled(noise, alpha)
}

/// Stage transition from stage `k` to `k - 1`; corrective noise restores the
/// marginal noise level after upsampling. Deterministic given the rng state.
pub fn stage_transition(
    x_e: &LatentTensor,
    schedule: &StageSchedule,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LatentTensor> {
    let shape = x_e.shape();
    let up_shape = crate::latent::Shape::new(
        shape.frames,
        shape.channels,
        shape.height * 2,
        shape.width * 2,
    );
    let noise = LatentTensor::randn(up_shape, rng);
    stage_transition_with_noise(x_e, schedule, k, &noise)
}

/// Estimate of the window's edited endpoint: the edited start latent plus
/// the source path's start-to-end displacement.
pub fn estimate_edit_endpoint(
    x_s_edit: &LatentTensor,
    x_s_src: &LatentTensor,
    x_e_src: &LatentTensor,
) -> Result<LatentTensor> {
    x_s_edit.add(&x_e_src.sub(x_s_src)?)
}

/// Mutable per-stage state of a pyramid edit: the window anchor (source
/// endpoint), the edit state living in the window's clean space, and the
/// data part of the window's start endpoint.
#[derive(Clone, Debug)]
pub struct StageState {
    pub k: usize,
    /// Source endpoint of the window, the FlowEdit anchor for this stage.
    pub anchor: LatentTensor,
    pub x_edit: LatentTensor,
    /// `Up(Down(x1, 2^{k+1}))`, absent when `s_k == 0`.
    pub up_prev: Option<LatentTensor>,
}

/// Prompt/guidance parameters of one window run.
pub struct WindowParams<'a> {
    pub steps: usize,
    pub skip: usize,
    pub c_src: &'a Condition,
    pub c_tgt: &'a Condition,
    pub cfg_src: f64,
    pub cfg_tgt: f64,
    pub n_avg: usize,
}

/// Run the FlowEdit loop inside window `k`, anchored at the window's source
/// endpoint rather than the clean latent. Updates `state.x_edit` in place.
pub fn pyramid_edit_window(
    model: &dyn VelocityField,
    schedule: &StageSchedule,
    params: &WindowParams,
    state: &mut StageState,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<StepDiag>> {
    if params.skip >= params.steps {
        return Ok(Vec::new()); // window fully skipped
    }
    let (s_k, _e_k) = schedule.window(state.k);
    let grid = TimeGrid::uniform(params.steps, params.skip)?;
    let shape = state.anchor.shape();
    let mut diags = Vec::new();
    for (i, tau, dtau) in grid.retained_steps() {
        let mut vd_sum: Option<LatentTensor> = None;
        let mut src_norm = 0.0;
        let mut hat_norm = 0.0;
        for _ in 0..params.n_avg {
            let noise = LatentTensor::randn(shape, rng);
            let x_bar_s = match &state.up_prev {
                None => noise,
                Some(up_prev) => noise.lerp(up_prev, s_k)?,
            };
            let x_src = x_bar_s.lerp(&state.anchor, tau)?;
            let x_hat = crate::flowedit::target_estimate(&state.x_edit, &x_src, &state.anchor)?;
            let v_tgt = guided_velocity(model, &x_hat, tau, params.c_tgt, params.cfg_tgt)?;
            let v_src = guided_velocity(model, &x_src, tau, params.c_src, params.cfg_src)?;
            let vd = v_tgt.sub(&v_src)?;
            if !vd.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("stage {} velocity difference", state.k),
                    step: Some(i),
                });
            }
            src_norm += x_src.norm();
            hat_norm += x_hat.norm();
            vd_sum = Some(match vd_sum {
                None => vd,
                Some(acc) => acc.add(&vd)?,
            });
        }
        let inv = 1.0 / params.n_avg as f64;
        let vd = vd_sum.unwrap().scale(inv);
        state.x_edit = state.x_edit.add_scaled(&vd, dtau)?;
        if !state.x_edit.is_finite() {
            return Err(Error::NonFinite {
                what: format!("stage {} edit state", state.k),
                step: Some(i),
            });
        }
        diags.push(StepDiag {
            step: i,
            t: tau,
            dt: dtau,
            x_src_norm: src_norm * inv,
            x_hat_norm: hat_norm * inv,
            v_delta_norm: vd.norm(),
        });
    }
    Ok(diags)
}

/// A full pyramid editing session over an F-frame latent.
#[derive(Clone, Debug)]
pub struct PyramidSession {
    /// Clean source latent at full resolution; frames are edited one by one.
    pub x1_src: LatentTensor,
    pub c_src: Condition,
    pub c_tgt: Condition,
    pub schedule: StageSchedule,
    pub plan_first: StagePlan,
    pub plan_rest: StagePlan,
    pub cfg_src_first: f64,
    pub cfg_src_rest: f64,
    pub cfg_tgt: f64,
    pub seed: u64,
    pub n_avg: usize,
    /// Prior-frame summaries fed to the model, most recent first.
    pub history_len: usize,
}

impl PyramidSession {
    /// Session with the default three-stage schedule: 20 steps per stage on
    /// the first frame, 10 thereafter, lowest stage fully skipped, CFG 7/5
    /// (first/rest) and 10.
    pub fn new(x1_src: LatentTensor, c_src: Condition, c_tgt: Condition) -> Self {
        let schedule = StageSchedule::default_three_stage();
        let stages = schedule.stages();
        PyramidSession {
            x1_src,
            c_src,
            c_tgt,
            schedule,
            plan_first: StagePlan::uniform(stages, 20).skip_lowest_stage(),
            plan_rest: StagePlan::uniform(stages, 10).skip_lowest_stage(),
            cfg_src_first: 7.0,
            cfg_src_rest: 5.0,
            cfg_tgt: 10.0,
            seed: 0,
            n_avg: 1,
            history_len: 1,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let stages = self.schedule.stages();
        self.plan_first.validate(stages)?;
        self.plan_rest.validate(stages)?;
        let shape = self.x1_src.shape();
        let factor = 1usize << (stages - 1);
        if shape.height % factor != 0 || shape.width % factor != 0 {
            return Err(Error::shape_mismatch(
                format!("spatial dims divisible by {factor} for {stages} stages"),
                shape,
            ));
        }
        if !self.x1_src.is_finite() {
            return Err(Error::NonFinite {
                what: "source latent".into(),
                step: None,
            });
        }
        Ok(())
    }
}

/// Boundary values and window diagnostics of one stage of one frame.
#[derive(Clone, Debug)]
pub struct StageDiag {
    pub k: usize,
    pub anchor: LatentTensor,
    pub edit_init: LatentTensor,
    pub edit_end: LatentTensor,
    pub steps: Vec<StepDiag>,
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub final_latent: LatentTensor,
    pub stages: Vec<StageDiag>,
}

#[derive(Clone, Debug)]
pub struct PyramidRun {
    pub frames: Vec<FrameResult>,
}

impl PyramidRun {
    /// Edited frames restacked into one full-resolution latent.
    pub fn stacked(&self) -> Result<LatentTensor> {
        LatentTensor::stack_frames(
            &self
                .frames
                .iter()
                .map(|f| f.final_latent.clone())
                .collect::<Vec<_>>(),
        )
    }
}

/// Run the pyramid editor over all frames, autoregressively. Source history
/// summaries condition the source velocity and edited history summaries the
/// target velocity.
pub fn pyramid_edit_run(model: &dyn StageModel, session: &PyramidSession) -> Result<PyramidRun> {
    session.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(session.seed);
    let stages = session.schedule.stages();
    let frames = session.x1_src.shape().frames;
    let mut src_history: Vec<Vec<f64>> = Vec::new();
    let mut edit_history: Vec<Vec<f64>> = Vec::new();
    let mut results = Vec::with_capacity(frames);

    for frame_idx in 0..frames {
        let x1 = session.x1_src.frame(frame_idx);
        let (plan, cfg_src) = if frame_idx == 0 {
            (&session.plan_first, session.cfg_src_first)
        } else {
            (&session.plan_rest, session.cfg_src_rest)
        };
        let take = session.history_len.min(src_history.len());
        let c_src = session
            .c_src
            .clone()
            .with_history(src_history[..take].to_vec());
        let c_tgt = session
            .c_tgt
            .clone()
            .with_history(edit_history[..take].to_vec());

        let mut stage_diags = Vec::with_capacity(stages);
        let k_low = stages - 1;
        let down_low = x1.downsample(1 << k_low)?;
        let (s_low, e_low) = session.schedule.window(k_low);
        // The lowest stage's effective noise; a draw is only needed when the
        // endpoint actually mixes noise (e_k < 1), which keeps the K = 1
        // noise stream identical to plain FlowEdit.
        let anchor = if e_low == 1.0 {
            down_low
        } else {
            let x0_init = LatentTensor::randn(down_low.shape(), &mut rng);
            x0_init.lerp(&down_low, e_low)?
        };
        let up_prev = if s_low == 0.0 {
            None
        } else {
            Some(x1.downsample(1 << (k_low + 1))?.upsample(2))
        };
        let mut state = StageState {
            k: k_low,
            anchor,
            x_edit: LatentTensor::zeros(down_low_shape(&x1, k_low)?),
            up_prev,
        };
        state.x_edit = state.anchor.clone();

        for k in (0..stages).rev() {
            let params = WindowParams {
                steps: plan.steps[k],
                skip: plan.skips[k],
                c_src: &c_src,
                c_tgt: &c_tgt,
                cfg_src,
                cfg_tgt: session.cfg_tgt,
                n_avg: session.n_avg,
            };
            let edit_init = state.x_edit.clone();
            let steps = pyramid_edit_window(
                model.stage_field(k),
                &session.schedule,
                &params,
                &mut state,
                &mut rng,
            )?;
            stage_diags.push(StageDiag {
                k,
                anchor: state.anchor.clone(),
                edit_init,
                edit_end: state.x_edit.clone(),
                steps,
            });

            if k > 0 {
                // transition to stage k - 1 with one shared corrective draw
                let up_shape = state.anchor.upsample(2).shape();
                let noise = LatentTensor::randn(up_shape, &mut rng);
                let src_start =
                    stage_transition_with_noise(&state.anchor, &session.schedule, k, &noise)?;
                let edit_start =
                    stage_transition_with_noise(&state.x_edit, &session.schedule, k, &noise)?;

                let k_next = k - 1;
                let (s_next, e_next) = session.schedule.window(k_next);
                let down_next = x1.downsample(1 << k_next)?;
                let up_prev_next = x1.downsample(1 << (k_next + 1))?.upsample(2);
                // effective stage noise implied by the transitioned source state
                let x0_eff = src_start
                    .sub(&up_prev_next.scale(s_next))?
                    .scale(1.0 / (1.0 - s_next));
                let anchor_next = if e_next == 1.0 {
                    down_next
                } else {
                    x0_eff.lerp(&down_next, e_next)?
                };
                let x_edit_next = estimate_edit_endpoint(&edit_start, &src_start, &anchor_next)?;
                state = StageState {
                    k: k_next,
                    anchor: anchor_next,
                    x_edit: x_edit_next,
                    up_prev: if s_next == 0.0 { None } else { Some(up_prev_next) },
                };
            }
        }

        src_history.insert(0, x1.channel_means());
        edit_history.insert(0, state.x_edit.channel_means());
        results.push(FrameResult {
            final_latent: state.x_edit,
            stages: stage_diags,
        });
    }
    Ok(PyramidRun { frames: results })
}

fn down_low_shape(x1: &LatentTensor, k: usize) -> Result<crate::latent::Shape> {
    x1.shape().downsampled(1 << k)
}
