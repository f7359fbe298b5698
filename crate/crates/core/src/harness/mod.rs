//! End-to-end orchestration: run an editor over a manifest, evaluate the
//! metric suite and FiVE-Acc over the outputs, and merge runs into combined
//! reports.
//!
//! Frames are mean-pooled to the model's latent size before editing and
//! nearest-neighbor upscaled back afterward. Every output except
//! `timing.json` is a deterministic function of (manifest, config, seed,
//! mock answers).

pub mod report;

use crate::bench::{frame_path, load_manifest, load_masks, load_tracklets_csv, EditRecord, Manifest, VideoEntry};
use crate::error::{Error, Result};
use crate::five_acc::{
    self, aggregate, build_questions, judge_item, vlm::QuestionKind, AccuracyReport, AnswerRecord,
    HttpVlm, ItemOutcome, MockVlm, VlmClient, VlmQuestion,
};
use crate::flowedit::{flowedit_run_with_rng, EditSession, EditTrajectory};
use crate::imgio;
use crate::latent::{LatentTensor, Shape};
use crate::metrics::{
    clip_similarity, masked_mse, masked_psnr, masked_ssim_default, motion_fidelity, niqe_score,
    perceptual_distance, runtime_per_frame, sample_frames, structure_distance, BuiltinProvider,
    FeatureProvider, FrameImage, HttpProvider, NiqeModel, Tracklet,
};
use crate::pyramid::{pyramid_edit_run, PyramidSession, StagePlan, StageSchedule};
use crate::rf_core::{checkpoint, Condition, PointMassField, TimeGrid, VelocityField};
use crate::util::{fnv1a, hash_unit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub use report::{accuracy_csv, aggregate_items, ItemMetrics, MetricKind, MetricValue, RunReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EditMethod {
    Flowedit,
    PyramidEdit,
    WanEdit,
}

impl EditMethod {
    pub fn id(&self) -> &'static str {
        match self {
            EditMethod::Flowedit => "flowedit",
            EditMethod::PyramidEdit => "pyramid-edit",
            EditMethod::WanEdit => "wan-edit",
        }
    }

    pub fn parse(text: &str) -> Result<EditMethod> {
        match text {
            "flowedit" => Ok(EditMethod::Flowedit),
            "pyramid-edit" => Ok(EditMethod::PyramidEdit),
            "wan-edit" => Ok(EditMethod::WanEdit),
            _ => Err(Error::Config(format!("unknown method {text:?}"))),
        }
    }
}

/// Velocity model specification: a closed-form point-mass field with
/// hash-derived or explicit per-prompt modes, or a trained MLP checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    AnalyticHash { scale: f64, seed: u64 },
    AnalyticTable { modes: BTreeMap<String, Vec<f64>> },
    Checkpoint { path: String },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::AnalyticHash { scale: 0.5, seed: 0 }
    }
}

fn default_latent_downsample() -> usize {
    4
}
fn default_frame_cap() -> usize {
    41
}
fn default_steps() -> usize {
    50
}
fn default_skip() -> usize {
    15
}
fn default_cfg_src() -> f64 {
    5.0
}
fn default_cfg_tgt() -> f64 {
    12.0
}
fn default_n_avg() -> usize {
    1
}

/// Pyramid-specific settings; the defaults mirror the standard three-stage
/// configuration (20/10 steps first/later frames, lowest stage skipped,
/// CFG 7/5 and 10).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidSettings {
    pub windows: Vec<(f64, f64)>,
    pub plan_first: StagePlan,
    pub plan_rest: StagePlan,
    pub cfg_src_first: f64,
    pub cfg_src_rest: f64,
    pub cfg_tgt: f64,
}

impl Default for PyramidSettings {
    fn default() -> Self {
        let schedule = StageSchedule::default_three_stage();
        let stages = schedule.stages();
        PyramidSettings {
            windows: (0..stages).map(|k| schedule.window(k)).collect(),
            plan_first: StagePlan::uniform(stages, 20).skip_lowest_stage(),
            plan_rest: StagePlan::uniform(stages, 10).skip_lowest_stage(),
            cfg_src_first: 7.0,
            cfg_src_rest: 5.0,
            cfg_tgt: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub method: EditMethod,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default = "default_latent_downsample")]
    pub latent_downsample: usize,
    #[serde(default = "default_frame_cap")]
    pub frame_cap: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_avg")]
    pub n_avg: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_skip")]
    pub skip: usize,
    #[serde(default = "default_cfg_src")]
    pub cfg_src: f64,
    #[serde(default = "default_cfg_tgt")]
    pub cfg_tgt: f64,
    #[serde(default)]
    pub pyramid: PyramidSettings,
}

impl RunConfig {
    pub fn new(method: EditMethod) -> Self {
        serde_json::from_value(serde_json::json!({"method": method.id()}))
            .expect("default config is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn config_hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        Ok(format!("{:016x}", fnv1a(canonical.as_bytes())))
    }
}

#[derive(Serialize, Deserialize)]
struct RunConfigFile {
    tool_version: String,
    config_hash: String,
    config: RunConfig,
}

#[derive(Serialize, Deserialize, Default)]
struct TimingFile {
    per_record: BTreeMap<String, TimingEntry>,
    total_seconds: f64,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
struct TimingEntry {
    seconds: f64,
    frames: usize,
}

enum ResolvedModel {
    Analytic(PointMassField),
    Mlp(crate::rf_core::MlpVelocityModel),
}

impl ResolvedModel {
    fn field(&self) -> &dyn VelocityField {
        match self {
            ResolvedModel::Analytic(f) => f,
            ResolvedModel::Mlp(m) => m,
        }
    }

    fn embed_dim(&self) -> usize {
        match self {
            ResolvedModel::Analytic(_) => 8,
            ResolvedModel::Mlp(m) => m.config().embed_dim,
        }
    }
}

/// Build the velocity model for a run. Analytic specs register one mode per
/// prompt appearing in the manifest (and the null fallback is their mean).
fn resolve_model(
    spec: &ModelSpec,
    manifest: &Manifest,
    channels: usize,
    config_dir: &Path,
) -> Result<ResolvedModel> {
    match spec {
        ModelSpec::AnalyticHash { scale, seed } => {
            let mut field = PointMassField::new();
            let mut labels: Vec<&str> = Vec::new();
            for edit in &manifest.edits {
                labels.push(&edit.source_prompt);
                labels.push(&edit.target_prompt);
            }
            for label in labels {
                let mode: Vec<f64> = (0..channels)
                    .map(|c| {
                        scale * (2.0 * hash_unit(format!("mode:{seed}:{label}:{c}").as_bytes()) - 1.0)
                    })
                    .collect();
                field.insert_mode(label, vec![mode]);
            }
            Ok(ResolvedModel::Analytic(field))
        }
        ModelSpec::AnalyticTable { modes } => {
            let mut field = PointMassField::new();
            for (label, mode) in modes {
                if mode.len() != channels {
                    return Err(Error::Config(format!(
                        "mode for {label:?} has {} channels, expected {channels}",
                        mode.len()
                    )));
                }
                field.insert_mode(label, vec![mode.clone()]);
            }
            Ok(ResolvedModel::Analytic(field))
        }
        ModelSpec::Checkpoint { path } => {
            let full = if Path::new(path).is_absolute() {
                PathBuf::from(path)
            } else {
                config_dir.join(path)
            };
            Ok(ResolvedModel::Mlp(checkpoint::load_checkpoint(full)?))
        }
    }
}

/// Per-prompt mode the analytic-hash model drives each channel toward;
/// exposed so tests can verify edited latents against the closed form.
pub fn analytic_hash_mode(scale: f64, seed: u64, label: &str, channels: usize) -> Vec<f64> {
    (0..channels)
        .map(|c| scale * (2.0 * hash_unit(format!("mode:{seed}:{label}:{c}").as_bytes()) - 1.0))
        .collect()
}

/// Mean-pool frames into the `(F, C, h, w)` latent the editors work on.
pub fn encode_video(frames: &[FrameImage], downsample: usize) -> Result<LatentTensor> {
    if frames.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_frame: Vec<LatentTensor> = frames
        .iter()
        .map(|f| {
            let shape = Shape::new(1, f.channels(), f.height(), f.width());
            LatentTensor::new(shape, f.data().to_vec())?.downsample(downsample)
        })
        .collect::<Result<_>>()?;
    LatentTensor::stack_frames(&per_frame)
}

/// Nearest-neighbor upscale of an edited latent back to frames, clamped to
/// [0, 1].
pub fn decode_latent(latent: &LatentTensor, upsample: usize) -> Vec<FrameImage> {
    let full = latent.upsample(upsample);
    let s = full.shape();
    (0..s.frames)
        .map(|f| {
            FrameImage::from_fn(s.channels, s.height, s.width, 1.0, |c, y, x| {
                full.at(f, c, y, x).clamp(0.0, 1.0)
            })
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EditOutcome {
    pub ok: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn capped_frames(video: &VideoEntry, cap: usize) -> usize {
    video.num_frames.min(cap.max(1))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Run the configured editor over every record of the manifest, writing
/// edited frames, trajectory dumps, the resolved config, a per-record status
/// log, and wall-clock timings under `out_dir`. Failures are isolated per
/// record; records may run on up to `workers` threads, with results folded
/// in manifest order so outputs do not depend on scheduling.
pub fn cmd_edit(
    manifest_path: impl AsRef<Path>,
    config: &RunConfig,
    out_dir: impl AsRef<Path>,
    workers: usize,
) -> Result<EditOutcome> {
    let (manifest, base) = load_manifest(manifest_path.as_ref())?;
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out.join("edited")).map_err(|e| Error::io("edited", e))?;
    std::fs::create_dir_all(out.join("trajectories"))
        .map_err(|e| Error::io("trajectories", e))?;
    let config_dir = manifest_path
        .as_ref()
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let model = resolve_model(&config.model, &manifest, 3, &config_dir)?;

    let run_start = Instant::now();
    let results = crate::util::ordered_parallel_map(
        manifest.edits.iter().collect::<Vec<_>>(),
        workers,
        |record| {
            let started = Instant::now();
            let video = manifest
                .video(&record.video_id)
                .expect("validated manifest");
            let frames_used = capped_frames(video, config.frame_cap);
            let result = edit_record(&model, config, &base, video, record, out);
            (
                record.id.clone(),
                result,
                started.elapsed().as_secs_f64(),
                frames_used,
            )
        },
    );

    let mut outcome = EditOutcome::default();
    let mut log: BTreeMap<String, String> = BTreeMap::new();
    let mut timing = TimingFile::default();
    for (id, result, seconds, frames) in results {
        match result {
            Ok(()) => {
                outcome.ok.push(id.clone());
                log.insert(id.clone(), "ok".into());
            }
            Err(e) => {
                outcome.failed.push((id.clone(), e.to_string()));
                log.insert(id.clone(), format!("failed: {e}"));
            }
        }
        timing.per_record.insert(id, TimingEntry { seconds, frames });
    }
    timing.total_seconds = run_start.elapsed().as_secs_f64();

    write_json(
        &out.join("run_config.json"),
        &RunConfigFile {
            tool_version: TOOL_VERSION.into(),
            config_hash: config.config_hash()?,
            config: config.clone(),
        },
    )?;
    write_json(&out.join("edit_log.json"), &log)?;
    write_json(&out.join("timing.json"), &timing)?;
    Ok(outcome)
}

fn edit_record(
    model: &ResolvedModel,
    config: &RunConfig,
    base: &Path,
    video: &VideoEntry,
    record: &EditRecord,
    out: &Path,
) -> Result<()> {
    let frames_used = capped_frames(video, config.frame_cap);
    let frames: Vec<FrameImage> = (0..frames_used)
        .map(|i| imgio::load_frame_png(frame_path(base, &video.frames_dir, i)))
        .collect::<Result<_>>()?;
    let latent = encode_video(&frames, config.latent_downsample)?;
    let c_src = Condition::from_label(&record.source_prompt, model.embed_dim());
    let c_tgt = Condition::from_label(&record.target_prompt, model.embed_dim());
    let record_seed = config.seed ^ fnv1a(record.id.as_bytes());

    let mut traj_lines: Vec<serde_json::Value> = Vec::new();
    let edited = match config.method {
        EditMethod::WanEdit => {
            let session = EditSession::new(latent, c_src, c_tgt, TimeGrid::uniform(config.steps, config.skip)?)?
                .with_cfg(config.cfg_src, config.cfg_tgt)
                .with_seed(record_seed)
                .with_n_avg(config.n_avg);
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed);
            let traj = flowedit_run_with_rng(model.field(), &session, &mut rng)?;
            push_flowedit_lines(&mut traj_lines, None, &traj);
            traj.final_state().clone()
        }
        EditMethod::Flowedit => {
            // frame-by-frame, independent per-frame sessions on one stream
            let mut rng = ChaCha8Rng::seed_from_u64(record_seed);
            let mut outputs = Vec::new();
            for f in 0..latent.shape().frames {
                let session = EditSession::new(
                    latent.frame(f),
                    c_src.clone(),
                    c_tgt.clone(),
                    TimeGrid::uniform(config.steps, config.skip)?,
                )?
                .with_cfg(config.cfg_src, config.cfg_tgt)
                .with_n_avg(config.n_avg);
                let traj = flowedit_run_with_rng(model.field(), &session, &mut rng)?;
                push_flowedit_lines(&mut traj_lines, Some(f), &traj);
                outputs.push(traj.final_state().clone());
            }
            LatentTensor::stack_frames(&outputs)?
        }
        EditMethod::PyramidEdit => {
            let schedule = StageSchedule::new(config.pyramid.windows.clone())?;
            let session = PyramidSession {
                x1_src: latent,
                c_src,
                c_tgt,
                schedule,
                plan_first: config.pyramid.plan_first.clone(),
                plan_rest: config.pyramid.plan_rest.clone(),
                cfg_src_first: config.pyramid.cfg_src_first,
                cfg_src_rest: config.pyramid.cfg_src_rest,
                cfg_tgt: config.pyramid.cfg_tgt,
                seed: record_seed,
                n_avg: config.n_avg,
                history_len: 1,
            };
            let run = pyramid_edit_run(&model.field(), &session)?;
            for (f, frame) in run.frames.iter().enumerate() {
                for stage in &frame.stages {
                    for step in &stage.steps {
                        traj_lines.push(serde_json::json!({
                            "frame": f,
                            "stage": stage.k,
                            "step": step.step,
                            "t": step.t,
                            "dt": step.dt,
                            "x_src_norm": step.x_src_norm,
                            "x_hat_norm": step.x_hat_norm,
                            "v_delta_norm": step.v_delta_norm,
                        }));
                    }
                }
            }
            run.stacked()?
        }
    };

    let edited_frames = decode_latent(&edited, config.latent_downsample);
    let dir = out.join("edited").join(&record.id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, frame) in edited_frames.iter().enumerate() {
        imgio::save_frame_png(frame, dir.join(format!("frame_{i:04}.png")))?;
    }
    let traj_path = out.join("trajectories").join(format!("{}.jsonl", record.id));
    let file = std::fs::File::create(&traj_path)
        .map_err(|e| Error::io(traj_path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in &traj_lines {
        serde_json::to_writer(&mut w, line)?;
        writeln!(w).map_err(|e| Error::io(traj_path.display().to_string(), e))?;
    }
    Ok(())
}

fn push_flowedit_lines(
    lines: &mut Vec<serde_json::Value>,
    frame: Option<usize>,
    traj: &EditTrajectory,
) {
    for step in &traj.steps {
        let mut line = serde_json::json!({
            "step": step.step,
            "t": step.t,
            "dt": step.dt,
            "x_src_norm": step.x_src_norm,
            "x_hat_norm": step.x_hat_norm,
            "v_delta_norm": step.v_delta_norm,
        });
        if let Some(f) = frame {
            line["frame"] = serde_json::json!(f);
        }
        lines.push(line);
    }
}

#[derive(Clone, Debug)]
pub enum ProviderChoice {
    Builtin,
    Http(String),
}

impl ProviderChoice {
    pub fn parse(text: &str) -> Result<ProviderChoice> {
        if text == "builtin" {
            Ok(ProviderChoice::Builtin)
        } else if let Some(url) = text.strip_prefix("http:") {
            // accept both "http:URL" and a plain http(s) URL
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else {
                url.to_string()
            };
            Ok(ProviderChoice::Http(url))
        } else {
            Err(Error::Config(format!(
                "provider must be 'builtin' or 'http:URL', got {text:?}"
            )))
        }
    }

    fn build(&self) -> (Box<dyn FeatureProvider>, String) {
        match self {
            ProviderChoice::Builtin => (Box::new(BuiltinProvider::default()), "builtin".into()),
            ProviderChoice::Http(url) => (Box::new(HttpProvider::new(url.clone())), url.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub metrics: Vec<MetricKind>,
    pub provider: ProviderChoice,
    pub stride: usize,
    pub niqe_model: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metrics: MetricKind::default_set(),
            provider: ProviderChoice::Builtin,
            stride: 8,
            niqe_model: None,
        }
    }
}

fn load_edited_frames(run_dir: &Path, record_id: &str, count: usize) -> Result<Vec<FrameImage>> {
    let dir = run_dir.join("edited").join(record_id);
    if !dir.join("frame_0000.png").exists() {
        return Err(Error::MissingAsset(format!(
            "edited frames for {record_id} at {}",
            dir.display()
        )));
    }
    (0..count)
        .map(|i| imgio::load_frame_png(dir.join(format!("frame_{i:04}.png"))))
        .collect()
}

fn truncate_tracklets(tracks: &[Tracklet], frames: usize) -> Vec<Tracklet> {
    tracks
        .iter()
        .filter_map(|t| {
            let take = t.points.len().min(frames.max(2));
            Tracklet::new(t.points[..take].to_vec()).ok()
        })
        .collect()
}

/// Evaluate the selected metrics over a finished edit run. Per-record and
/// per-metric failures degrade to `unavailable` entries rather than aborting
/// the run.
pub fn cmd_eval(
    run_dir: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    options: &EvalOptions,
) -> Result<RunReport> {
    let run_dir = run_dir.as_ref();
    let (manifest, base) = load_manifest(manifest_path.as_ref())?;
    let run_file: RunConfigFile = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("run_config.json"))
            .map_err(|e| Error::io(run_dir.join("run_config.json").display().to_string(), e))?,
    )?;
    let (provider, provider_id) = options.provider.build();
    let mut notes = Vec::new();

    // pristine NIQE statistics: explicit file, benchmark default, or fitted
    // on the fly from the first video's source frames
    let niqe_model = if let Some(path) = &options.niqe_model {
        Some(NiqeModel::load(path)?)
    } else {
        let default_path = base.join("niqe_pristine.json");
        if default_path.exists() {
            Some(NiqeModel::load(default_path)?)
        } else if let Some(video) = manifest.videos.first() {
            let sampled: Vec<FrameImage> = sample_frames(video.num_frames, options.stride)?
                .into_iter()
                .map(|i| imgio::load_frame_png(frame_path(&base, &video.frames_dir, i)))
                .collect::<Result<_>>()?;
            notes.push("niqe model fitted from source frames".into());
            Some(NiqeModel::fit(&sampled, 16)?)
        } else {
            None
        }
    };

    let timing: Option<TimingFile> = std::fs::read_to_string(run_dir.join("timing.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());

    let mut items = Vec::new();
    for record in &manifest.edits {
        let video = manifest.video(&record.video_id).expect("validated");
        let count = capped_frames(video, run_file.config.frame_cap);
        let mut metrics: BTreeMap<MetricKind, MetricValue> = BTreeMap::new();
        let put = |m: MetricKind, r: Result<f64>, metrics: &mut BTreeMap<_, _>| {
            metrics.insert(
                m,
                match r {
                    Ok(value) => MetricValue::Ok { value },
                    Err(e) => MetricValue::Unavailable {
                        reason: e.to_string(),
                    },
                },
            );
        };

        match load_edited_frames(run_dir, &record.id, count) {
            Err(e) => {
                for m in &options.metrics {
                    metrics.insert(
                        *m,
                        MetricValue::Unavailable {
                            reason: e.to_string(),
                        },
                    );
                }
            }
            Ok(edited_all) => {
                let src_all: Vec<FrameImage> = (0..count)
                    .map(|i| imgio::load_frame_png(frame_path(&base, &video.frames_dir, i)))
                    .collect::<Result<_>>()?;
                let indices = sample_frames(count, options.stride)?;
                let src: Vec<FrameImage> = indices.iter().map(|&i| src_all[i].clone()).collect();
                let edited: Vec<FrameImage> =
                    indices.iter().map(|&i| edited_all[i].clone()).collect();
                let masks = load_masks(&base, record, &indices);

                for metric in &options.metrics {
                    match metric {
                        MetricKind::StructureDistance => put(
                            *metric,
                            structure_distance(&src, &edited, provider.as_ref()),
                            &mut metrics,
                        ),
                        MetricKind::Psnr | MetricKind::Mse | MetricKind::Ssim | MetricKind::Lpips => {
                            let result = masks.as_ref().map_err(|e| e.to_string()).and_then(|ms| {
                                let mut total = 0.0;
                                for ((s, e), m) in src.iter().zip(&edited).zip(ms) {
                                    let v = match metric {
                                        MetricKind::Psnr => masked_psnr(s, e, m, 1.0),
                                        MetricKind::Mse => masked_mse(s, e, m),
                                        MetricKind::Ssim => masked_ssim_default(s, e, m),
                                        MetricKind::Lpips => {
                                            perceptual_distance(s, e, m, provider.as_ref())
                                        }
                                        _ => unreachable!(),
                                    }
                                    .map_err(|e| e.to_string())?;
                                    total += v;
                                }
                                Ok(total / src.len() as f64)
                            });
                            metrics.insert(
                                *metric,
                                match result {
                                    Ok(value) => MetricValue::Ok { value },
                                    Err(reason) => MetricValue::Unavailable { reason },
                                },
                            );
                        }
                        MetricKind::Clipsim => put(
                            *metric,
                            clip_similarity(&edited, &record.target_prompt, provider.as_ref(), None)
                                .map(|c| c.value),
                            &mut metrics,
                        ),
                        MetricKind::ClipsimEdit => {
                            let result = masks.as_ref().map_err(|e| Error::Mask(e.to_string())).and_then(|ms| {
                                clip_similarity(
                                    &edited,
                                    &record.target_prompt,
                                    provider.as_ref(),
                                    Some(ms),
                                )
                                .map(|c| c.value)
                            });
                            put(*metric, result, &mut metrics);
                        }
                        MetricKind::Niqe => {
                            let result = match &niqe_model {
                                Some(model) => niqe_score(&edited_all, model, 16),
                                None => Err(Error::Metric("no pristine model".into())),
                            };
                            put(*metric, result, &mut metrics);
                        }
                        MetricKind::MotionFidelity => {
                            let result = (|| {
                                let src_path = video.tracklets.as_ref().ok_or_else(|| {
                                    Error::MissingAsset(format!(
                                        "tracklets for video {}",
                                        video.id
                                    ))
                                })?;
                                let src_tracks =
                                    truncate_tracklets(&load_tracklets_csv(base.join(src_path))?, count);
                                let edit_tracks = match &record.edit_tracklets {
                                    Some(p) => {
                                        truncate_tracklets(&load_tracklets_csv(base.join(p))?, count)
                                    }
                                    None => src_tracks.clone(),
                                };
                                motion_fidelity(&src_tracks, &edit_tracks, false)
                            })();
                            put(*metric, result, &mut metrics);
                        }
                        MetricKind::TimePerFrame => {
                            let result = timing
                                .as_ref()
                                .and_then(|t| t.per_record.get(&record.id))
                                .ok_or_else(|| Error::MissingAsset("timing entry".into()))
                                .and_then(|entry| runtime_per_frame(entry.seconds, entry.frames));
                            put(*metric, result, &mut metrics);
                        }
                    }
                }
            }
        }
        items.push(ItemMetrics {
            edit_id: record.id.clone(),
            edit_type: record.edit_type,
            metrics,
        });
    }

    let (per_type, overall) = aggregate_items(&items, &options.metrics);
    let report = RunReport {
        tool_version: TOOL_VERSION.into(),
        method: run_file.config.method.id().into(),
        config_hash: run_file.config_hash,
        provider_id,
        stride: options.stride,
        requested: options.metrics.clone(),
        items,
        per_type,
        overall,
        notes,
    };
    write_json(&run_dir.join("report.json"), &report)?;
    std::fs::write(run_dir.join("report.csv"), report.to_csv())
        .map_err(|e| Error::io("report.csv", e))?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub enum VlmChoice {
    Mock(PathBuf),
    Http(String),
}

impl VlmChoice {
    pub fn parse(text: &str) -> Result<VlmChoice> {
        if let Some(path) = text.strip_prefix("mock:") {
            Ok(VlmChoice::Mock(PathBuf::from(path)))
        } else if let Some(url) = text.strip_prefix("http:") {
            let url = if url.starts_with("//") {
                format!("http:{url}")
            } else {
                url.to_string()
            };
            Ok(VlmChoice::Http(url))
        } else {
            Err(Error::Config(format!(
                "vlm must be 'mock:FILE' or 'http:URL', got {text:?}"
            )))
        }
    }

    fn build(&self) -> Result<Box<dyn VlmClient>> {
        Ok(match self {
            VlmChoice::Mock(path) => Box::new(MockVlm::load(path)?),
            VlmChoice::Http(url) => Box::new(HttpVlm::new(url.clone())),
        })
    }
}

#[derive(Clone, Debug)]
pub struct AccOptions {
    pub vlm: VlmChoice,
    pub stride: usize,
}

/// Run the FiVE-Acc protocol over a finished edit run: build questions,
/// sample frames, query the judge, parse, judge, and aggregate. Unparseable
/// answers and endpoint failures invalidate only their own item.
pub fn cmd_acc(
    run_dir: impl AsRef<Path>,
    manifest_path: impl AsRef<Path>,
    options: &AccOptions,
) -> Result<AccuracyReport> {
    let run_dir = run_dir.as_ref();
    let (manifest, _base) = load_manifest(manifest_path.as_ref())?;
    let run_file: RunConfigFile = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("run_config.json"))
            .map_err(|e| Error::io(run_dir.join("run_config.json").display().to_string(), e))?,
    )?;
    let client = options.vlm.build()?;
    let provenance = client.provenance();

    let answers_path = run_dir.join("vlm_answers.jsonl");
    let answers_file = std::fs::File::create(&answers_path)
        .map_err(|e| Error::io(answers_path.display().to_string(), e))?;
    let mut answers_log = std::io::BufWriter::new(answers_file);

    let mut items = Vec::new();
    for record in &manifest.edits {
        let video = manifest.video(&record.video_id).expect("validated");
        let count = capped_frames(video, run_file.config.frame_cap);
        let outcome = (|| -> Result<ItemOutcome> {
            let questions = build_questions(record, run_file.config.seed)?;
            let edited_all = load_edited_frames(run_dir, &record.id, count)?;
            let indices = sample_frames(count, options.stride)?;
            let frames: Vec<FrameImage> =
                indices.into_iter().map(|i| edited_all[i].clone()).collect();

            let mut ask = |qid: &str, text: &str, kind: QuestionKind, opts: Option<[String; 2]>| {
                let question = VlmQuestion {
                    key: format!("{}:{qid}", record.id),
                    text: text.to_string(),
                    kind,
                    options: opts,
                };
                let answer = client.ask(&frames, &question)?;
                serde_json::to_writer(
                    &mut answers_log,
                    &serde_json::json!({
                        "key": question.key,
                        "question": question.text,
                        "answer": answer,
                    }),
                )?;
                writeln!(answers_log).map_err(|e| Error::io("vlm_answers.jsonl", e))?;
                Ok::<String, Error>(answer)
            };

            let yn_src = five_acc::parse_yes_no(&ask(
                "yn_source",
                &questions.yn_source,
                QuestionKind::Yn,
                None,
            )?)?;
            let yn_tgt = five_acc::parse_yes_no(&ask(
                "yn_target",
                &questions.yn_target,
                QuestionKind::Yn,
                None,
            )?)?;
            let mc_raw = ask(
                "mc",
                &questions.mc,
                QuestionKind::Mc,
                Some(questions.options.clone()),
            )?;
            let mc = five_acc::parse_multi_choice(&mc_raw, &questions.options)?;
            let answer = AnswerRecord {
                yn_source_ans: yn_src,
                yn_target_ans: yn_tgt,
                mc_ans: mc,
                provenance: provenance.clone(),
            };
            Ok(ItemOutcome {
                edit_id: record.id.clone(),
                edit_type: record.edit_type,
                judgment: Some(judge_item(&answer, &questions)),
                error: None,
            })
        })();
        items.push(match outcome {
            Ok(item) => item,
            Err(e) => ItemOutcome {
                edit_id: record.id.clone(),
                edit_type: record.edit_type,
                judgment: None,
                error: Some(e.to_string()),
            },
        });
    }
    drop(answers_log);

    let report = aggregate(items)?;
    write_json(&run_dir.join("acc_report.json"), &report)?;
    std::fs::write(
        run_dir.join("acc_report.csv"),
        accuracy_csv(run_file.config.method.id(), &report),
    )
    .map_err(|e| Error::io("acc_report.csv", e))?;
    Ok(report)
}

/// One run's worth of data in a combined report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CombinedRun {
    pub run_dir: String,
    pub method: String,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CombinedReport {
    pub tool_version: String,
    pub version_mismatch: bool,
    pub runs: Vec<CombinedRun>,
}

/// Merge finished run directories into one table keyed by method, with
/// per-type breakdowns. `columns` restricts the metric columns of the CSV.
pub fn cmd_report(run_dirs: &[PathBuf], columns: Option<&[String]>) -> Result<CombinedReport> {
    if run_dirs.is_empty() {
        return Err(Error::Config("need at least one run dir".into()));
    }
    let mut runs = Vec::new();
    for dir in run_dirs {
        let run_file: RunConfigFile = serde_json::from_str(
            &std::fs::read_to_string(dir.join("run_config.json"))
                .map_err(|e| Error::io(dir.join("run_config.json").display().to_string(), e))?,
        )?;
        let metrics: Option<RunReport> = std::fs::read_to_string(dir.join("report.json"))
            .ok()
            .map(|t| serde_json::from_str(&t))
            .transpose()?;
        let accuracy: Option<AccuracyReport> =
            std::fs::read_to_string(dir.join("acc_report.json"))
                .ok()
                .map(|t| serde_json::from_str(&t))
                .transpose()?;
        runs.push(CombinedRun {
            run_dir: dir.display().to_string(),
            method: run_file.config.method.id().into(),
            tool_version: run_file.tool_version,
            metrics,
            accuracy,
        });
    }
    let version_mismatch = runs
        .windows(2)
        .any(|w| w[0].tool_version != w[1].tool_version);
    let _ = columns; // column filtering applies to the CSV rendering below
    Ok(CombinedReport {
        tool_version: TOOL_VERSION.into(),
        version_mismatch,
        runs,
    })
}

impl CombinedReport {
    /// Combined CSV: metric columns (optionally filtered) then the FiVE-Acc
    /// columns, one row per (run, edit type) plus per-run overall rows.
    pub fn to_csv(&self, columns: Option<&[String]>) -> String {
        let metric_cols: Vec<MetricKind> = MetricKind::ALL
            .into_iter()
            .filter(|m| match columns {
                None => true,
                Some(cols) => cols.iter().any(|c| c == m.id()),
            })
            .collect();
        let acc_cols = ["five_yn", "five_mc", "five_union", "five_inter", "five_acc"];
        let keep_acc: Vec<&str> = acc_cols
            .into_iter()
            .filter(|c| match columns {
                None => true,
                Some(cols) => cols.iter().any(|x| x == c),
            })
            .collect();
        let mut out = String::from("run,method,edit_type");
        for m in &metric_cols {
            out.push(',');
            out.push_str(m.id());
        }
        for c in &keep_acc {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');

        for run in &self.runs {
            let mut types: Vec<crate::bench::EditType> = Vec::new();
            if let Some(m) = &run.metrics {
                types.extend(m.per_type.keys().copied());
            }
            if let Some(a) = &run.accuracy {
                for ty in a.per_type.keys() {
                    if !types.contains(ty) {
                        types.push(*ty);
                    }
                }
            }
            types.sort();
            let rows: Vec<(String, bool)> = types
                .iter()
                .map(|t| (t.id().to_string(), false))
                .chain([("overall".to_string(), true)])
                .collect();
            for (ty_id, is_overall) in rows {
                let mut line = format!("{},{},{}", run.run_dir, run.method, ty_id);
                for m in &metric_cols {
                    let value = run.metrics.as_ref().and_then(|r| {
                        let table = if is_overall {
                            Some(&r.overall)
                        } else {
                            r.per_type
                                .iter()
                                .find(|(t, _)| t.id() == ty_id)
                                .map(|(_, v)| v)
                        };
                        table.and_then(|t| t.get(m)).and_then(|v| v.ok())
                    });
                    match value {
                        Some(v) => {
                            let _ = write!(line, ",{v:.2}");
                        }
                        None => line.push(','),
                    }
                }
                for c in &keep_acc {
                    let row = run.accuracy.as_ref().and_then(|a| {
                        if is_overall {
                            Some(a.overall)
                        } else {
                            a.per_type
                                .iter()
                                .find(|(t, _)| t.id() == ty_id)
                                .map(|(_, v)| *v)
                        }
                    });
                    match row {
                        Some(r) => {
                            let v = match *c {
                                "five_yn" => r.yn,
                                "five_mc" => r.mc,
                                "five_union" => r.union,
                                "five_inter" => r.inter,
                                _ => r.five_acc,
                            };
                            let _ = write!(line, ",{v:.2}");
                        }
                        None => line.push(','),
                    }
                }
                out.push_str(&line);
                out.push('\n');
            }
        }
        out
    }
}

