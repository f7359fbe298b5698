//! Inversion-free editing: the FlowEdit update loop over a single latent and
//! the joint multi-frame mode that runs the same update on a whole stacked
//! sequence at once.
//!
//! The edit state starts at the clean source latent and is nudged each step
//! by the difference between a target-conditioned and a source-conditioned
//! velocity. The source's noise latent is never reconstructed: the source
//! path is re-sampled from fresh noise at every step.

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::rf_core::{guided_velocity, Condition, TimeGrid, VelocityField};
use crate::util::encode_le64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// One editing run's full state: source latent, prompt pair, schedule,
/// guidance scales and noise policy.
#[derive(Clone, Debug)]
pub struct EditSession {
    /// Clean source latent; the edit state is initialized here.
    pub x1_src: LatentTensor,
    pub c_src: Condition,
    pub c_tgt: Condition,
    pub grid: TimeGrid,
    pub cfg_src: f64,
    pub cfg_tgt: f64,
    pub seed: u64,
    /// Noise draws averaged per step when estimating the velocity difference.
    pub n_avg: usize,
}

impl EditSession {
    pub fn new(
        x1_src: LatentTensor,
        c_src: Condition,
        c_tgt: Condition,
        grid: TimeGrid,
    ) -> Result<Self> {
        if !x1_src.is_finite() {
            return Err(Error::NonFinite {
                what: "source latent".into(),
                step: None,
            });
        }
        Ok(EditSession {
            x1_src,
            c_src,
            c_tgt,
            grid,
            cfg_src: 5.0,
            cfg_tgt: 12.0,
            seed: 0,
            n_avg: 1,
        })
    }

    pub fn with_cfg(mut self, cfg_src: f64, cfg_tgt: f64) -> Self {
        self.cfg_src = cfg_src;
        self.cfg_tgt = cfg_tgt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_n_avg(mut self, n_avg: usize) -> Self {
        self.n_avg = n_avg.max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.cfg_src < 0.0 || self.cfg_tgt < 0.0 {
            return Err(Error::Config("guidance scales must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics kept alongside the retained states: norms of the
/// source-path sample, the target estimate, and the velocity difference.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepDiag {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub x_src_norm: f64,
    pub x_hat_norm: f64,
    pub v_delta_norm: f64,
}

/// Retained edit states: `states[0]` is the source latent, `states.last()`
/// the edited result at t = 1.
#[derive(Clone, Debug)]
pub struct EditTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<LatentTensor>,
    pub steps: Vec<StepDiag>,
}

impl EditTrajectory {
    pub fn final_state(&self) -> &LatentTensor {
        self.states.last().expect("trajectory has at least one state")
    }
}

/// Source path sample `(1 - t) * noise + t * x1_src`.
pub fn source_latent_at(x1_src: &LatentTensor, t: f64, noise: &LatentTensor) -> Result<LatentTensor> {
    noise.lerp(x1_src, t)
}

/// Estimated target-path latent: previous edit state shifted onto the source
/// path, `x_edit_prev + x_src_t - x1_src`.
pub fn target_estimate(
    x_edit_prev: &LatentTensor,
    x_src_t: &LatentTensor,
    x1_src: &LatentTensor,
) -> Result<LatentTensor> {
    x_edit_prev.add(x_src_t)?.sub(x1_src)
}

/// The velocity difference driving the edit at time `t` for one noise draw,
/// plus the norms of the two evaluation points.
fn v_delta(
    model: &dyn VelocityField,
    session: &EditSession,
    x_edit_prev: &LatentTensor,
    t: f64,
    noise: &LatentTensor,
) -> Result<(LatentTensor, f64, f64)> {
    let x_src = source_latent_at(&session.x1_src, t, noise)?;
    let x_hat = target_estimate(x_edit_prev, &x_src, &session.x1_src)?;
    let v_tgt = guided_velocity(model, &x_hat, t, &session.c_tgt, session.cfg_tgt)?;
    let v_src = guided_velocity(model, &x_src, t, &session.c_src, session.cfg_src)?;
    let vd = v_tgt.sub(&v_src)?;
    if !vd.is_finite() {
        return Err(Error::NonFinite {
            what: "velocity difference".into(),
            step: None,
        });
    }
    Ok((vd, x_src.norm(), x_hat.norm()))
}

/// One Euler update of the edit state from `t` to `t + dt` with a single
/// noise draw.
pub fn flowedit_step(
    model: &dyn VelocityField,
    session: &EditSession,
    x_edit_prev: &LatentTensor,
    t: f64,
    dt: f64,
    noise: &LatentTensor,
) -> Result<LatentTensor> {
    let (vd, _, _) = v_delta(model, session, x_edit_prev, t, noise)?;
    x_edit_prev.add_scaled(&vd, dt)
}

/// Run the full edit loop: initialize at the source latent, skip the grid's
/// prefix, and Euler-step the velocity difference to t = 1.
pub fn flowedit_run(model: &dyn VelocityField, session: &EditSession) -> Result<EditTrajectory> {
    session.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(session.seed);
    flowedit_run_with_rng(model, session, &mut rng)
}

/// As [`flowedit_run`] but drawing noise from a caller-owned stream, so
/// composite pipelines can share one seeded sequence.
pub fn flowedit_run_with_rng(
    model: &dyn VelocityField,
    session: &EditSession,
    rng: &mut ChaCha8Rng,
) -> Result<EditTrajectory> {
    session.validate()?;
    let shape = session.x1_src.shape();
    let mut x_edit = session.x1_src.clone();
    let mut times = vec![session.grid.start_time()];
    let mut states = vec![x_edit.clone()];
    let mut steps = Vec::new();

    for (i, t, dt) in session.grid.retained_steps() {
        let mut vd_sum: Option<LatentTensor> = None;
        let mut src_norm = 0.0;
        let mut hat_norm = 0.0;
        for _ in 0..session.n_avg {
            let noise = LatentTensor::randn(shape, rng);
            let (vd, xs, xh) =
                v_delta(model, session, &x_edit, t, &noise).map_err(|e| match e {
                    Error::NonFinite { what, .. } => Error::NonFinite { what, step: Some(i) },
                    other => other,
                })?;
            src_norm += xs;
            hat_norm += xh;
            vd_sum = Some(match vd_sum {
                None => vd,
                Some(acc) => acc.add(&vd)?,
            });
        }
        let inv = 1.0 / session.n_avg as f64;
        let vd = vd_sum.unwrap().scale(inv);
        x_edit = x_edit.add_scaled(&vd, dt)?;
        if !x_edit.is_finite() {
            return Err(Error::NonFinite {
                what: "edit state".into(),
                step: Some(i),
            });
        }
        steps.push(StepDiag {
            step: i,
            t,
            dt,
            x_src_norm: src_norm * inv,
            x_hat_norm: hat_norm * inv,
            v_delta_norm: vd.norm(),
        });
        times.push(t + dt);
        states.push(x_edit.clone());
    }
    Ok(EditTrajectory { times, states, steps })
}

/// Joint multi-frame edit: the identical update applied to the stacked
/// F-frame latent, so all frames move simultaneously through one model call
/// per velocity. With F = 1 this is exactly [`flowedit_run`].
pub fn joint_edit_run(model: &dyn VelocityField, session: &EditSession) -> Result<EditTrajectory> {
    flowedit_run(model, session)
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    step: usize,
    t: f64,
    dt: f64,
    x_src_norm: f64,
    x_hat_norm: f64,
    v_delta_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    state_le64: Option<&'a str>,
}

/// Dump a trajectory as JSON lines: one record per retained step with the
/// velocity-difference norm, plus the full state in the checkpoint float
/// encoding when `include_states` is set.
pub fn write_trajectory_jsonl(
    trajectory: &EditTrajectory,
    path: impl AsRef<Path>,
    include_states: bool,
) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for (i, diag) in trajectory.steps.iter().enumerate() {
        let encoded = if include_states {
            Some(encode_le64(trajectory.states[i + 1].data()))
        } else {
            None
        };
        let line = TrajectoryLine {
            step: diag.step,
            t: diag.t,
            dt: diag.dt,
            x_src_norm: diag.x_src_norm,
            x_hat_norm: diag.x_hat_norm,
            v_delta_norm: diag.v_delta_norm,
            state_le64: encoded.as_deref(),
        };
        serde_json::to_writer(&mut w, &line)?;
        writeln!(w).map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;
    use crate::rf_core::{CallCountingField, PointMassField, NULL_CONDITION_ID};

    fn point_mass_session(
        mu_src: Vec<f64>,
        steps: usize,
        skip: usize,
    ) -> (PointMassField, EditSession) {
        let channels = mu_src.len();
        let field = PointMassField::with_modes([
            ("src", mu_src.clone()),
            ("tgt", vec![2.0, -1.0]),
            (NULL_CONDITION_ID, vec![0.0, 0.0]),
        ]);
        let shape = Shape::new(1, channels, 1, 1);
        let x1 = LatentTensor::from_fn(shape, |_, c, _, _| mu_src[c]);
        let session = EditSession::new(
            x1,
            Condition::from_label("src", 2),
            Condition::from_label("tgt", 2),
            TimeGrid::uniform(steps, skip).unwrap(),
        )
        .unwrap()
        .with_cfg(1.0, 1.0)
        .with_seed(77);
        (field, session)
    }

    #[test]
    fn source_latent_endpoints() {
        let shape = Shape::new(1, 1, 2, 2);
        let x1 = LatentTensor::filled(shape, 4.0);
        let noise = LatentTensor::zeros(shape);
        assert_eq!(source_latent_at(&x1, 1.0, &noise).unwrap(), x1);
        assert_eq!(source_latent_at(&x1, 0.0, &noise).unwrap(), noise);
        let mid = source_latent_at(&x1, 0.5, &noise).unwrap();
        assert!(mid.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn target_estimate_arithmetic() {
        let shape = Shape::new(1, 1, 1, 1);
        let prev = LatentTensor::filled(shape, 3.0);
        let src_t = LatentTensor::filled(shape, 2.0);
        let x1 = LatentTensor::filled(shape, 1.0);
        let est = target_estimate(&prev, &src_t, &x1).unwrap();
        assert_eq!(est.data()[0], 4.0);
        // collapses to the source path when the edit state sits at x1
        let est2 = target_estimate(&x1, &src_t, &x1).unwrap();
        assert_eq!(est2.data()[0], 2.0);
        // algebraic inverse round-trip
        let back = est.sub(&src_t).unwrap().add(&x1).unwrap();
        assert_eq!(back, prev);
    }

    #[test]
    fn all_steps_skipped_returns_source() {
        // skip_count must stay < steps, so "skip everything" is expressed as
        // a grid whose retained tail has zero measure: use skip = steps - 1
        // and a zero-velocity-difference session (identity prompts).
        let (field, mut session) = point_mass_session(vec![0.0, 0.0], 10, 9);
        session.c_tgt = session.c_src.clone();
        let traj = flowedit_run(&field, &session).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert!(traj.final_state().max_abs_diff(&session.x1_src).unwrap() < 1e-12);
    }

    #[test]
    fn identity_prompts_keep_source() {
        let (field, mut session) = point_mass_session(vec![0.3, -0.7], 50, 15);
        session.c_tgt = session.c_src.clone();
        session.cfg_src = 7.0;
        session.cfg_tgt = 7.0;
        let traj = flowedit_run(&field, &session).unwrap();
        assert!(traj.final_state().max_abs_diff(&session.x1_src).unwrap() < 1e-6);
    }

    #[test]
    fn point_mass_edit_follows_closed_form() {
        // mu_src = (0,0), mu_tgt = (2,-1): trajectory is the straight line
        // (1-t) mu_src + t mu_tgt when no steps are skipped.
        let (field, session) = point_mass_session(vec![0.0, 0.0], 200, 0);
        let traj = flowedit_run(&field, &session).unwrap();
        let f = traj.final_state();
        assert!((f.at(0, 0, 0, 0) - 2.0).abs() < 1e-3);
        assert!((f.at(0, 1, 0, 0) + 1.0).abs() < 1e-3);
        // state at t = 0.5 is (1, -0.5)
        let mid_idx = traj.times.iter().position(|&t| (t - 0.5).abs() < 1e-9).unwrap();
        let mid = &traj.states[mid_idx];
        assert!((mid.at(0, 0, 0, 0) - 1.0).abs() < 1e-2);
        assert!((mid.at(0, 1, 0, 0) + 0.5).abs() < 1e-2);
    }

    #[test]
    fn euler_step_is_linear_in_dt_on_constant_field() {
        // On a field constant in x and t, stepping dt twice equals one 2*dt step.
        struct ConstField;
        impl VelocityField for ConstField {
            fn velocity(&self, x: &LatentTensor, _t: f64, cond: &Condition) -> Result<LatentTensor> {
                let v = if cond.id == "tgt" { 1.5 } else { 0.5 };
                Ok(LatentTensor::filled(x.shape(), v))
            }
        }
        let shape = Shape::new(1, 1, 1, 1);
        let x1 = LatentTensor::zeros(shape);
        let session = EditSession::new(
            x1.clone(),
            Condition::from_label("src", 2),
            Condition::from_label("tgt", 2),
            TimeGrid::uniform(10, 0).unwrap(),
        )
        .unwrap()
        .with_cfg(1.0, 1.0);
        let noise = LatentTensor::zeros(shape);
        let one = flowedit_step(&ConstField, &session, &x1, 0.2, 0.1, &noise).unwrap();
        let two = flowedit_step(&ConstField, &session, &one, 0.3, 0.1, &noise).unwrap();
        let big = flowedit_step(&ConstField, &session, &x1, 0.2, 0.2, &noise).unwrap();
        assert!(two.max_abs_diff(&big).unwrap() < 1e-15);
    }

    #[test]
    fn joint_run_with_one_frame_matches_single() {
        let (field, session) = point_mass_session(vec![0.1, 0.2], 30, 5);
        let a = flowedit_run(&field, &session).unwrap();
        let b = joint_edit_run(&field, &session).unwrap();
        assert_eq!(a.final_state(), b.final_state());
    }

    #[test]
    fn joint_run_per_frame_modes_converge_independently() {
        let mut field = PointMassField::new();
        field.insert_mode("src", vec![vec![0.0], vec![0.0], vec![0.0], vec![0.0]]);
        field.insert_mode(
            "tgt",
            vec![vec![1.0], vec![-2.0], vec![0.5], vec![3.0]],
        );
        let shape = Shape::new(4, 1, 1, 1);
        let session = EditSession::new(
            LatentTensor::zeros(shape),
            Condition::from_label("src", 2),
            Condition::from_label("tgt", 2),
            TimeGrid::uniform(400, 0).unwrap(),
        )
        .unwrap()
        .with_cfg(1.0, 1.0)
        .with_seed(3);
        let traj = joint_edit_run(&field, &session).unwrap();
        let f = traj.final_state();
        for (i, mu) in [1.0, -2.0, 0.5, 3.0].iter().enumerate() {
            assert!(
                (f.at(i, 0, 0, 0) - mu).abs() < 1e-3,
                "frame {i}: {} vs {mu}",
                f.at(i, 0, 0, 0)
            );
        }
    }

    #[test]
    fn identity_joint_run_keeps_all_frames() {
        let field = PointMassField::with_modes([("p", vec![0.4])]);
        let shape = Shape::new(4, 1, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = LatentTensor::randn(shape, &mut rng);
        let session = EditSession::new(
            x1.clone(),
            Condition::from_label("p", 2),
            Condition::from_label("p", 2),
            TimeGrid::uniform(50, 15).unwrap(),
        )
        .unwrap()
        .with_cfg(5.0, 5.0);
        let traj = joint_edit_run(&field, &session).unwrap();
        assert!(traj.final_state().max_abs_diff(&x1).unwrap() < 1e-6);
    }

    #[test]
    fn shift_equivariance_of_analytic_edit() {
        // Adding b to x1_src and to both modes shifts the output by exactly b.
        let b = 1.7;
        let (field, session) = point_mass_session(vec![0.0, 0.0], 100, 10);
        let out = flowedit_run(&field, &session).unwrap();

        let shifted_field = PointMassField::with_modes([
            ("src", vec![b, b]),
            ("tgt", vec![2.0 + b, -1.0 + b]),
            (NULL_CONDITION_ID, vec![b, b]),
        ]);
        let mut shifted_session = session.clone();
        shifted_session.x1_src = session
            .x1_src
            .add(&LatentTensor::filled(session.x1_src.shape(), b))
            .unwrap();
        let out_shifted = flowedit_run(&shifted_field, &shifted_session).unwrap();
        let diff = out_shifted
            .final_state()
            .sub(out.final_state())
            .unwrap();
        assert!(diff.data().iter().all(|v| (v - b).abs() < 1e-9));
    }

    #[test]
    fn model_call_budget_is_exactly_two_per_step_without_cfg() {
        let (field, session) = point_mass_session(vec![0.0, 0.0], 50, 15);
        let counter = CallCountingField::new(&field);
        flowedit_run(&counter, &session).unwrap();
        // cfg = 1 on both branches: 2 calls per retained step, nothing more
        assert_eq!(counter.calls(), 2 * (50 - 15));
    }

    #[test]
    fn model_call_budget_doubles_with_cfg() {
        let (field, mut session) = point_mass_session(vec![0.0, 0.0], 50, 15);
        session.cfg_src = 5.0;
        session.cfg_tgt = 12.0;
        let counter = CallCountingField::new(&field);
        flowedit_run(&counter, &session).unwrap();
        assert_eq!(counter.calls(), 2 * (50 - 15) * 2);
    }

    #[test]
    fn trajectory_initialization_contract() {
        let (field, session) = point_mass_session(vec![0.0, 0.0], 50, 15);
        let traj = flowedit_run(&field, &session).unwrap();
        assert_eq!(traj.states[0], session.x1_src);
        assert!((traj.times[0] - 0.3).abs() < 1e-12);
        assert_eq!(traj.states.len(), 36);
        assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn n_avg_equals_one_noise_mean() {
        // With the analytic point-mass field the velocity difference is
        // noise-free, so any n_avg gives the same trajectory.
        let (field, session) = point_mass_session(vec![0.0, 0.0], 40, 0);
        let one = flowedit_run(&field, &session).unwrap();
        let many = flowedit_run(&field, &session.clone().with_n_avg(4)).unwrap();
        assert!(one
            .final_state()
            .max_abs_diff(many.final_state())
            .unwrap()
            < 1e-12);
    }

    #[test]
    fn jsonl_dump_round_trips_states() {
        let (field, session) = point_mass_session(vec![0.0, 0.0], 10, 0);
        let traj = flowedit_run(&field, &session).unwrap();
        let dir = std::env::temp_dir().join("five_bench_traj_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("traj.jsonl");
        write_trajectory_jsonl(&traj, &path, true).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), traj.steps.len());
        let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        let decoded =
            crate::util::decode_le64(last["state_le64"].as_str().unwrap()).unwrap();
        assert_eq!(decoded, traj.final_state().data());
    }
}
