//! Benchmark data model: the manifest of videos and edit records, mask and
//! tracklet loading, and the synthetic desk-scale benchmark generator.

pub mod generate;

use crate::error::{Error, Result};
use crate::imgio;
use crate::metrics::{EditMask, FrameImage, Tracklet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub use generate::{generate_toy_benchmark, ToyBenchConfig};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// The six fine-grained edit types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditType {
    ObjectRigid,
    ObjectNonrigid,
    Color,
    Material,
    Add,
    Remove,
}

impl EditType {
    pub const ALL: [EditType; 6] = [
        EditType::ObjectRigid,
        EditType::ObjectNonrigid,
        EditType::Color,
        EditType::Material,
        EditType::Add,
        EditType::Remove,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            EditType::ObjectRigid => "object_rigid",
            EditType::ObjectNonrigid => "object_nonrigid",
            EditType::Color => "color",
            EditType::Material => "material",
            EditType::Add => "add",
            EditType::Remove => "remove",
        }
    }
}

impl std::fmt::Display for EditType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoSource {
    Real,
    Generated,
}

/// One benchmark video: a directory of zero-padded PNG frames plus metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub frames_dir: String,
    pub num_frames: usize,
    pub fps: u32,
    pub caption: String,
    pub source: VideoSource,
    pub non_rigid: bool,
    /// Ground-truth tracklets CSV (frame,x,y,track_id), if available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracklets: Option<String>,
}

/// One editing task: prompt pair, object words, instruction and mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: String,
    pub video_id: String,
    pub edit_type: EditType,
    pub source_prompt: String,
    pub target_prompt: String,
    pub source_object: String,
    pub target_object: String,
    pub instruction: String,
    pub mask_dir: String,
    /// Ground-truth edited frames rendered by the generator, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_edit_dir: Option<String>,
    /// Tracklets of the ground-truth edited video, when they differ from the
    /// source's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_tracklets: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub videos: Vec<VideoEntry>,
    pub edits: Vec<EditRecord>,
}

impl Manifest {
    pub fn video(&self, id: &str) -> Option<&VideoEntry> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Semantic validation against the manifest's base directory:
    /// referential integrity, frame existence, and mask/frame dimension
    /// agreement. Errors carry JSON-pointer-style paths.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Manifest {
                pointer: "/schema_version".into(),
                message: format!(
                    "unsupported schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                    self.schema_version
                ),
            });
        }
        let mut video_ids = BTreeSet::new();
        for (i, video) in self.videos.iter().enumerate() {
            let ptr = format!("/videos/{i}");
            if video.num_frames == 0 {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/num_frames"),
                    message: "must be >= 1".into(),
                });
            }
            if !video_ids.insert(video.id.clone()) {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/id"),
                    message: format!("duplicate video id {:?}", video.id),
                });
            }
            let first = frame_path(base, &video.frames_dir, 0);
            if !first.exists() {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/frames_dir"),
                    message: format!("first frame {} missing", first.display()),
                });
            }
        }
        let mut edit_ids = BTreeSet::new();
        for (i, edit) in self.edits.iter().enumerate() {
            let ptr = format!("/edits/{i}");
            if !edit_ids.insert(edit.id.clone()) {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/id"),
                    message: format!("duplicate edit id {:?}", edit.id),
                });
            }
            let Some(video) = self.video(&edit.video_id) else {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/video_id"),
                    message: format!("references unknown video {:?}", edit.video_id),
                });
            };
            for (field, value) in [
                ("source_prompt", &edit.source_prompt),
                ("target_prompt", &edit.target_prompt),
                ("source_object", &edit.source_object),
                ("target_object", &edit.target_object),
            ] {
                if value.trim().is_empty() {
                    return Err(Error::Manifest {
                        pointer: format!("{ptr}/{field}"),
                        message: "must be non-empty".into(),
                    });
                }
            }
            let mask0 = frame_path(base, &edit.mask_dir, 0);
            if !mask0.exists() {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/mask_dir"),
                    message: format!("first mask {} missing", mask0.display()),
                });
            }
            let frame0 = frame_path(base, &video.frames_dir, 0);
            let frame_dims = imgio::png_dimensions(&frame0)?;
            let mask_dims = imgio::png_dimensions(&mask0)?;
            if frame_dims != mask_dims {
                return Err(Error::Manifest {
                    pointer: format!("{ptr}/mask_dir"),
                    message: format!(
                        "mask dims {mask_dims:?} do not match frame dims {frame_dims:?}"
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Path of frame `index` inside `dir`, using the zero-padded naming scheme.
pub fn frame_path(base: &Path, dir: &str, index: usize) -> PathBuf {
    base.join(dir).join(format!("frame_{index:04}.png"))
}

/// Parse and validate a manifest; paths inside it are relative to the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        pointer: "/".into(),
        message: e.to_string(),
    })?;
    let base = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    manifest.validate(&base)?;
    Ok((manifest, base))
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path.as_ref(), json)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

/// Load all frames of a video, normalized to [0, 1] RGB.
pub fn load_video_frames(base: &Path, video: &VideoEntry) -> Result<Vec<FrameImage>> {
    (0..video.num_frames)
        .map(|i| imgio::load_frame_png(frame_path(base, &video.frames_dir, i)))
        .collect()
}

/// Load the per-frame binary masks of an edit record for the given frame
/// indices, reporting every missing file at once.
pub fn load_masks(base: &Path, record: &EditRecord, indices: &[usize]) -> Result<Vec<EditMask>> {
    let missing: Vec<String> = indices
        .iter()
        .filter_map(|&i| {
            let p = frame_path(base, &record.mask_dir, i);
            (!p.exists()).then(|| p.display().to_string())
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAsset(format!(
            "masks for record {}: {}",
            record.id,
            missing.join(", ")
        )));
    }
    indices
        .iter()
        .map(|&i| imgio::load_mask_png(frame_path(base, &record.mask_dir, i)))
        .collect()
}

/// Tracklets CSV: `frame,x,y,track_id` rows, one point per frame per track.
pub fn load_tracklets_csv(path: impl AsRef<Path>) -> Result<Vec<Tracklet>> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let mut tracks: std::collections::BTreeMap<u64, Vec<(usize, f64, f64)>> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("frame")) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Manifest {
                pointer: format!("{}:{}", path.as_ref().display(), lineno + 1),
                message: format!("expected 4 CSV fields, got {}", parts.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|e| Error::Manifest {
                pointer: format!("{}:{}", path.as_ref().display(), lineno + 1),
                message: format!("bad number {s:?}: {e}"),
            })
        };
        let frame = parse(parts[0])? as usize;
        let x = parse(parts[1])?;
        let y = parse(parts[2])?;
        let track = parse(parts[3])? as u64;
        tracks.entry(track).or_default().push((frame, x, y));
    }
    tracks
        .into_values()
        .map(|mut pts| {
            pts.sort_by_key(|p| p.0);
            Tracklet::new(pts.into_iter().map(|(_, x, y)| (x, y)).collect())
        })
        .collect()
}

pub fn save_tracklets_csv(tracklets: &[Tracklet], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("frame,x,y,track_id\n");
    for (tid, t) in tracklets.iter().enumerate() {
        for (frame, (x, y)) in t.points.iter().enumerate() {
            out.push_str(&format!("{frame},{x},{y},{tid}\n"));
        }
    }
    std::fs::write(path.as_ref(), out)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}
