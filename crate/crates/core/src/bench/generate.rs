//! Synthetic desk-scale benchmark: moving geometric primitives on a textured
//! background, rendered with pixel-exact masks, ground-truth tracklets,
//! oracle edited videos for every record, a pristine NIQE model, and a
//! scripted mock VLM answer table. Byte-identical for a given seed.

use crate::bench::{
    frame_path, save_manifest, save_tracklets_csv, EditRecord, EditType, Manifest, VideoEntry,
    VideoSource, MANIFEST_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::imgio;
use crate::metrics::{EditMask, FrameImage, NiqeModel, Tracklet};
use crate::util::hash_unit;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyBenchConfig {
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: u32,
}

impl Default for ToyBenchConfig {
    fn default() -> Self {
        ToyBenchConfig {
            num_frames: 40,
            width: 64,
            height: 48,
            fps: 8,
        }
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Square { side: f64 },
    Circle { radius: f64 },
    /// Circle whose radius oscillates over time (non-rigid deformation).
    Pulsing { base: f64, amp: f64, period: f64 },
}

#[derive(Clone, Copy)]
enum Fill {
    Solid([f64; 3]),
    Checker([f64; 3], [f64; 3], usize),
}

#[derive(Clone)]
struct MovingObject {
    kind: Kind,
    fill: Fill,
    start: (f64, f64),
    vel: (f64, f64),
}

impl MovingObject {
    fn center(&self, frame: usize) -> (f64, f64) {
        (
            self.start.0 + self.vel.0 * frame as f64,
            self.start.1 + self.vel.1 * frame as f64,
        )
    }

    fn radius_at(&self, frame: usize) -> f64 {
        match self.kind {
            Kind::Square { side } => side / 2.0,
            Kind::Circle { radius } => radius,
            Kind::Pulsing { base, amp, period } => {
                base + amp * (2.0 * std::f64::consts::PI * frame as f64 / period).sin()
            }
        }
    }

    fn covers(&self, frame: usize, x: usize, y: usize) -> bool {
        let (cx, cy) = self.center(frame);
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match self.kind {
            Kind::Square { side } => {
                let h = side / 2.0;
                px >= cx - h && px < cx + h && py >= cy - h && py < cy + h
            }
            Kind::Circle { .. } | Kind::Pulsing { .. } => {
                let r = self.radius_at(frame);
                (px - cx).powi(2) + (py - cy).powi(2) <= r * r
            }
        }
    }

    fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        match self.fill {
            Fill::Solid(c) => c,
            Fill::Checker(a, b, cell) => {
                if (x / cell + y / cell) % 2 == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Ground-truth tracklets: the center plus four interior points that
    /// scale with the object's radius, so deformation shows up in motion.
    fn tracklets(&self, frames: usize) -> Vec<Tracklet> {
        let base_r = self.radius_at(0).max(1.0);
        let offsets = [(0.0, 0.0), (0.4, 0.0), (-0.4, 0.0), (0.0, 0.4), (0.0, -0.4)];
        offsets
            .iter()
            .map(|&(ox, oy)| {
                let points = (0..frames)
                    .map(|f| {
                        let (cx, cy) = self.center(f);
                        let scale = self.radius_at(f) / base_r;
                        (cx + ox * base_r * scale, cy + oy * base_r * scale)
                    })
                    .collect();
                Tracklet::new(points).expect("frames >= 2")
            })
            .collect()
    }
}

struct Background {
    // per-channel wave parameters derived from the seed
    params: [[f64; 5]; 3],
}

impl Background {
    fn new(seed: u64, video: &str) -> Self {
        let mut params = [[0.0; 5]; 3];
        for (c, row) in params.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = hash_unit(format!("bg:{seed}:{video}:{c}:{i}").as_bytes());
            }
        }
        Background { params }
    }

    fn at(&self, c: usize, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let p = &self.params[c];
        let tau = 2.0 * std::f64::consts::PI;
        let u = x as f64 / w as f64;
        let v = y as f64 / h as f64;
        let wave = (tau * (u * (2.0 + 2.0 * p[0]) + v * (1.0 + 2.0 * p[1]) + p[2])).sin();
        let ripple = (tau * (u * (5.0 + 3.0 * p[3]) + p[4])).sin();
        (0.45 + 0.18 * wave + 0.08 * ripple).clamp(0.0, 1.0)
    }
}

struct Scene<'a> {
    background: &'a Background,
    objects: Vec<&'a MovingObject>,
}

impl Scene<'_> {
    fn render(&self, frame: usize, w: usize, h: usize) -> FrameImage {
        FrameImage::from_fn(3, h, w, 1.0, |c, y, x| {
            for obj in self.objects.iter().rev() {
                if obj.covers(frame, x, y) {
                    return obj.color_at(x, y)[c];
                }
            }
            self.background.at(c, x, y, w, h)
        })
    }
}

fn write_scene_frames(
    scene: &Scene,
    dir: &Path,
    rel: &str,
    frames: usize,
    w: usize,
    h: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir.join(rel)).map_err(|e| Error::io(rel, e))?;
    for f in 0..frames {
        imgio::save_frame_png(&scene.render(f, w, h), frame_path(dir, rel, f))?;
    }
    Ok(())
}

fn write_masks(
    objects: &[&MovingObject],
    dir: &Path,
    rel: &str,
    frames: usize,
    w: usize,
    h: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir.join(rel)).map_err(|e| Error::io(rel, e))?;
    for f in 0..frames {
        let mask = EditMask::from_fn(h, w, |y, x| objects.iter().any(|o| o.covers(f, x, y)));
        imgio::save_mask_png(&mask, frame_path(dir, rel, f))?;
    }
    Ok(())
}

fn static_background_tracklets(frames: usize, w: usize, h: usize) -> Vec<Tracklet> {
    [(4.0, 4.0), (w as f64 - 4.0, 4.0), (4.0, h as f64 - 4.0), (
        w as f64 - 4.0,
        h as f64 - 4.0,
    )]
    .iter()
    .map(|&(x, y)| Tracklet::new(vec![(x, y); frames]).expect("frames >= 2"))
    .collect()
}

const RED: [f64; 3] = [0.85, 0.15, 0.15];
const DARK_RED: [f64; 3] = [0.55, 0.08, 0.08];
const BLUE: [f64; 3] = [0.15, 0.25, 0.85];
const GREEN: [f64; 3] = [0.15, 0.75, 0.25];
const ORANGE: [f64; 3] = [0.95, 0.55, 0.10];
const YELLOW: [f64; 3] = [0.92, 0.88, 0.20];

/// Render the complete toy benchmark under `out_dir`: two source videos,
/// six edit records (one per edit type) with pixel-exact masks, ground-truth
/// oracle edits, tracklets, a pristine NIQE model, and a scripted mock VLM
/// answer table. Returns the manifest, which is also written to
/// `out_dir/manifest.json`.
pub fn generate_toy_benchmark(
    config: &ToyBenchConfig,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = out_dir.as_ref();
    let (w, h, frames) = (config.width, config.height, config.num_frames);
    if frames < 2 {
        return Err(Error::Config("need at least 2 frames".into()));
    }
    if w < 48 || h < 32 {
        return Err(Error::Config("canvas must be at least 48x32".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    // motion budget: objects must stay inside the canvas for every frame
    let span = frames as f64;
    let red_square = MovingObject {
        kind: Kind::Square { side: 12.0 },
        fill: Fill::Solid(RED),
        start: (10.0, h as f64 / 2.0),
        vel: ((w as f64 - 20.0 - 12.0) / span, 0.0),
    };
    let blue_square = MovingObject {
        kind: Kind::Square { side: 10.0 },
        fill: Fill::Solid(BLUE),
        start: (9.0, 12.0),
        vel: ((w as f64 - 18.0 - 10.0) / span, 8.0 / span),
    };
    let checker_square = MovingObject {
        fill: Fill::Checker(RED, DARK_RED, 3),
        ..red_square.clone()
    };
    let green_circle = MovingObject {
        kind: Kind::Circle { radius: 6.5 },
        fill: Fill::Solid(GREEN),
        ..red_square.clone()
    };
    let pulsing_blob = MovingObject {
        kind: Kind::Pulsing {
            base: 6.5,
            amp: 2.0,
            period: 12.0,
        },
        fill: Fill::Solid(ORANGE),
        ..red_square.clone()
    };
    let yellow_circle = MovingObject {
        kind: Kind::Circle { radius: 5.0 },
        fill: Fill::Solid(YELLOW),
        start: (w as f64 - 12.0, h as f64 - 14.0),
        vel: (-(w as f64 - 24.0) / span, 0.0),
    };
    let recolored_square = blue_sq_like(&red_square);

    let bg_a = Background::new(seed, "vid_slide");
    let bg_b = Background::new(seed, "vid_two");

    // source videos
    write_scene_frames(
        &Scene { background: &bg_a, objects: vec![&red_square] },
        dir,
        "videos/vid_slide",
        frames,
        w,
        h,
    )?;
    write_scene_frames(
        &Scene { background: &bg_b, objects: vec![&blue_square] },
        dir,
        "videos/vid_two",
        frames,
        w,
        h,
    )?;

    // source tracklets
    std::fs::create_dir_all(dir.join("tracklets"))
        .map_err(|e| Error::io("tracklets", e))?;
    let mut slide_tracks = red_square.tracklets(frames);
    slide_tracks.extend(static_background_tracklets(frames, w, h));
    save_tracklets_csv(&slide_tracks, dir.join("tracklets/vid_slide.csv"))?;
    let mut two_tracks = blue_square.tracklets(frames);
    two_tracks.extend(static_background_tracklets(frames, w, h));
    save_tracklets_csv(&two_tracks, dir.join("tracklets/vid_two.csv"))?;

    struct RecordSpec<'a> {
        id: &'a str,
        video: &'a str,
        edit_type: EditType,
        background: &'a Background,
        target_objects: Vec<&'a MovingObject>,
        mask_objects: Vec<&'a MovingObject>,
        tracked: Vec<&'a MovingObject>,
        source_prompt: &'a str,
        target_prompt: &'a str,
        source_object: &'a str,
        target_object: &'a str,
        instruction: &'a str,
    }

    let slide_src = "a red square slides across a striped background";
    let two_src = "a blue square drifts across a striped background";
    let specs = vec![
        RecordSpec {
            id: "edit_color",
            video: "vid_slide",
            edit_type: EditType::Color,
            background: &bg_a,
            target_objects: vec![&recolored_square],
            mask_objects: vec![&red_square],
            tracked: vec![&red_square],
            source_prompt: slide_src,
            target_prompt: "a blue square slides across a striped background",
            source_object: "red square",
            target_object: "blue square",
            instruction: "turn the red square blue",
        },
        RecordSpec {
            id: "edit_material",
            video: "vid_slide",
            edit_type: EditType::Material,
            background: &bg_a,
            target_objects: vec![&checker_square],
            mask_objects: vec![&red_square],
            tracked: vec![&checker_square],
            source_prompt: slide_src,
            target_prompt: "a checkered red square slides across a striped background",
            source_object: "plain red square",
            target_object: "checkered red square",
            instruction: "give the red square a checkered texture",
        },
        RecordSpec {
            id: "edit_object_rigid",
            video: "vid_slide",
            edit_type: EditType::ObjectRigid,
            background: &bg_a,
            target_objects: vec![&green_circle],
            mask_objects: vec![&red_square, &green_circle],
            tracked: vec![&green_circle],
            source_prompt: slide_src,
            target_prompt: "a green circle slides across a striped background",
            source_object: "red square",
            target_object: "green circle",
            instruction: "replace the red square with a green circle",
        },
        RecordSpec {
            id: "edit_object_nonrigid",
            video: "vid_slide",
            edit_type: EditType::ObjectNonrigid,
            background: &bg_a,
            target_objects: vec![&pulsing_blob],
            mask_objects: vec![&red_square, &pulsing_blob],
            tracked: vec![&pulsing_blob],
            source_prompt: slide_src,
            target_prompt: "a pulsing orange blob slides across a striped background",
            source_object: "red square",
            target_object: "pulsing orange blob",
            instruction: "replace the red square with a pulsing orange blob",
        },
        RecordSpec {
            id: "edit_add",
            video: "vid_two",
            edit_type: EditType::Add,
            background: &bg_b,
            target_objects: vec![&blue_square, &yellow_circle],
            mask_objects: vec![&yellow_circle],
            tracked: vec![&blue_square, &yellow_circle],
            source_prompt: two_src,
            target_prompt: "a blue square drifts past while a yellow circle rolls in",
            source_object: "lone blue square",
            target_object: "yellow circle",
            instruction: "add a yellow circle rolling across the scene",
        },
        RecordSpec {
            id: "edit_remove",
            video: "vid_two",
            edit_type: EditType::Remove,
            background: &bg_b,
            target_objects: vec![],
            mask_objects: vec![&blue_square],
            tracked: vec![],
            source_prompt: two_src,
            target_prompt: "an empty striped background",
            source_object: "blue square",
            target_object: "plain striped background",
            instruction: "remove the blue square from the scene",
        },
    ];

    let mut edits = Vec::with_capacity(specs.len());
    let mut mock_answers: BTreeMap<String, String> = BTreeMap::new();
    for spec in &specs {
        let mask_rel = format!("masks/{}", spec.id);
        write_masks(&spec.mask_objects, dir, &mask_rel, frames, w, h)?;
        let oracle_rel = format!("oracle/{}", spec.id);
        write_scene_frames(
            &Scene {
                background: spec.background,
                objects: spec.target_objects.clone(),
            },
            dir,
            &oracle_rel,
            frames,
            w,
            h,
        )?;
        let mut edit_tracks: Vec<Tracklet> = spec
            .tracked
            .iter()
            .flat_map(|o| o.tracklets(frames))
            .collect();
        edit_tracks.extend(static_background_tracklets(frames, w, h));
        let tracks_rel = format!("tracklets/{}_edit.csv", spec.id);
        save_tracklets_csv(&edit_tracks, dir.join(&tracks_rel))?;

        // scripted mock answers: non-rigid trips the source-object check,
        // remove fails outright, everything else succeeds
        let (yn_src, yn_tgt, mc) = match spec.edit_type {
            EditType::ObjectNonrigid => ("Yes", "Yes", spec.target_object),
            EditType::Remove => ("Yes", "No", spec.source_object),
            _ => ("No", "Yes", spec.target_object),
        };
        mock_answers.insert(format!("{}:yn_source", spec.id), yn_src.to_string());
        mock_answers.insert(format!("{}:yn_target", spec.id), yn_tgt.to_string());
        mock_answers.insert(format!("{}:mc", spec.id), mc.to_string());

        edits.push(EditRecord {
            id: spec.id.to_string(),
            video_id: spec.video.to_string(),
            edit_type: spec.edit_type,
            source_prompt: spec.source_prompt.to_string(),
            target_prompt: spec.target_prompt.to_string(),
            source_object: spec.source_object.to_string(),
            target_object: spec.target_object.to_string(),
            instruction: spec.instruction.to_string(),
            mask_dir: mask_rel,
            oracle_edit_dir: Some(oracle_rel),
            edit_tracklets: Some(tracks_rel),
        });
    }

    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        videos: vec![
            VideoEntry {
                id: "vid_slide".into(),
                frames_dir: "videos/vid_slide".into(),
                num_frames: frames,
                fps: config.fps,
                caption: slide_src.into(),
                source: VideoSource::Generated,
                non_rigid: false,
                tracklets: Some("tracklets/vid_slide.csv".into()),
            },
            VideoEntry {
                id: "vid_two".into(),
                frames_dir: "videos/vid_two".into(),
                num_frames: frames,
                fps: config.fps,
                caption: two_src.into(),
                source: VideoSource::Generated,
                non_rigid: false,
                tracklets: Some("tracklets/vid_two.csv".into()),
            },
        ],
        edits,
    };

    // pristine NIQE statistics fitted on clean source frames
    let sampled: Vec<FrameImage> = (0..frames)
        .step_by(8)
        .map(|f| {
            imgio::load_frame_png(frame_path(dir, "videos/vid_slide", f))
        })
        .collect::<Result<_>>()?;
    NiqeModel::fit(&sampled, 16)?.save(dir.join("niqe_pristine.json"))?;

    let mock_json = serde_json::to_string_pretty(&mock_answers)?;
    std::fs::write(dir.join("mock_vlm.json"), mock_json)
        .map_err(|e| Error::io("mock_vlm.json", e))?;

    save_manifest(&manifest, dir.join("manifest.json"))?;
    Ok(manifest)
}

/// The color edit keeps the source geometry and motion, only the fill
/// changes.
fn blue_sq_like(src: &MovingObject) -> MovingObject {
    MovingObject {
        fill: Fill::Solid(BLUE),
        ..src.clone()
    }
}
