//! Metric kernels for edited-video evaluation: masked background
//! preservation (MSE, PSNR, SSIM, a perceptual-feature distance), structure
//! distance, text-video similarity, NIQE, motion fidelity from point
//! tracklets, and per-frame runtime.
//!
//! Every kernel is a pure function; background-preservation metrics are
//! bit-exactly independent of pixel values inside the edit mask.

pub mod niqe;
pub mod provider;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub use niqe::{niqe_score, NiqeModel};
pub use provider::{BuiltinProvider, FeatureProvider, HttpProvider};

/// PSNR reported for a bit-identical background.
pub const PSNR_CAP_DB: f64 = 100.0;

/// One video frame: `(channels, height, width)` real pixels with a declared
/// maximum value (1.0 for normalized data, 255.0 for 8-bit).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    max_val: f64,
}

impl FrameImage {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        max_val: f64,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Metric("empty frame".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape_mismatch(
                format!("{} pixels", channels * height * width),
                format!("{}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "frame pixels".into(),
                step: None,
            });
        }
        Ok(FrameImage {
            channels,
            height,
            width,
            data,
            max_val,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        max_val: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FrameImage {
            channels,
            height,
            width,
            data,
            max_val,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        FrameImage::from_fn(channels, height, width, 1.0, |_, _, _| value)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn max_val(&self) -> f64 {
        self.max_val
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let idx = (c * self.height + y) * self.width + x;
        self.data[idx] = v;
    }

    pub fn same_dims(&self, other: &FrameImage) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Mean over channels, as a flat `height * width` gray image.
    pub fn to_gray(&self) -> Vec<f64> {
        let mut gray = vec![0.0; self.height * self.width];
        for c in 0..self.channels {
            for i in 0..gray.len() {
                gray[i] += self.data[c * gray.len() + i];
            }
        }
        for g in &mut gray {
            *g /= self.channels as f64;
        }
        gray
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<FrameImage> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(Error::Metric(format!(
                "crop ({x0},{y0},{w},{h}) outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(FrameImage::from_fn(
            self.channels,
            h,
            w,
            self.max_val,
            |c, y, x| self.at(c, y0 + y, x0 + x),
        ))
    }

    /// Copy with all pixels inside the mask set to zero, so downstream
    /// features cannot depend on masked content.
    pub fn zero_masked(&self, mask: &EditMask) -> Result<FrameImage> {
        mask.check_dims(self.height, self.width)?;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if mask.at(y, x) {
                    for c in 0..self.channels {
                        out.set(c, y, x, 0.0);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per-frame binary edit mask; `true` marks the edited region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl EditMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Mask(format!(
                "mask data has {} entries for {height}x{width}",
                data.len()
            )));
        }
        Ok(EditMask {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        EditMask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        EditMask {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        let idx = y * self.width + x;
        self.data[idx] = v;
    }

    pub fn count_masked(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::Mask(format!(
                "mask is {}x{}, frame is {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Bounding box `(x0, y0, w, h)` of the masked region, if any.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut min_x, mut min_y) = (usize::MAX, usize::MAX);
        let (mut max_x, mut max_y) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(y, x) {
                    any = true;
                    min_x = min_x.min(x);
                    min_y = min_y.min(y);
                    max_x = max_x.max(x);
                    max_y = max_y.max(y);
                }
            }
        }
        any.then(|| (min_x, min_y, max_x - min_x + 1, max_y - min_y + 1))
    }
}

/// A tracked point's sub-pixel trajectory, one `(x, y)` per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub points: Vec<(f64, f64)>,
}

impl Tracklet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Metric(format!(
                "tracklet needs >= 2 points, got {}",
                points.len()
            )));
        }
        Ok(Tracklet { points })
    }

    fn displacements(&self) -> Vec<(f64, f64)> {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
            .collect()
    }
}

/// Frame indices sampled every `stride` frames, always including frame 0.
pub fn sample_frames(num_frames: usize, stride: usize) -> Result<Vec<usize>> {
    if num_frames == 0 {
        return Err(Error::Metric("empty video".into()));
    }
    if stride == 0 {
        return Err(Error::Metric("stride must be >= 1".into()));
    }
    Ok((0..num_frames).step_by(stride).collect())
}

fn check_pair(src: &FrameImage, edit: &FrameImage, mask: &EditMask) -> Result<()> {
    if !src.same_dims(edit) {
        return Err(Error::shape_mismatch(
            format!("{}x{}x{}", src.channels, src.height, src.width),
            format!("{}x{}x{}", edit.channels, edit.height, edit.width),
        ));
    }
    mask.check_dims(src.height, src.width)?;
    if mask.count_masked() == mask.height * mask.width {
        return Err(Error::Metric("mask covers the whole frame, no background".into()));
    }
    Ok(())
}

/// Mean squared pixel difference outside the mask.
pub fn masked_mse(src: &FrameImage, edit: &FrameImage, mask: &EditMask) -> Result<f64> {
    check_pair(src, edit, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..src.height {
        for x in 0..src.width {
            if mask.at(y, x) {
                continue;
            }
            for c in 0..src.channels {
                let d = src.at(c, y, x) - edit.at(c, y, x);
                sum += d * d;
            }
            count += src.channels;
        }
    }
    Ok(sum / count as f64)
}

/// Background PSNR in dB: `10 log10(max^2 / mse)`, capped at
/// [`PSNR_CAP_DB`] for identical backgrounds.
pub fn masked_psnr(src: &FrameImage, edit: &FrameImage, mask: &EditMask, max_val: f64) -> Result<f64> {
    let mse = masked_mse(src, edit, mask)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Mean local SSIM over square windows lying fully outside the mask.
pub fn masked_ssim(
    src: &FrameImage,
    edit: &FrameImage,
    mask: &EditMask,
    window: usize,
    c1: f64,
    c2: f64,
) -> Result<f64> {
    check_pair(src, edit, mask)?;
    if window == 0 || window > src.height || window > src.width {
        return Err(Error::Metric(format!(
            "window {window} does not fit {}x{}",
            src.height, src.width
        )));
    }
    if c1 <= 0.0 || c2 <= 0.0 {
        return Err(Error::Metric("ssim constants must be positive".into()));
    }
    let n = (window * window) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=(src.height - window) {
        'pos: for x0 in 0..=(src.width - window) {
            for dy in 0..window {
                for dx in 0..window {
                    if mask.at(y0 + dy, x0 + dx) {
                        continue 'pos;
                    }
                }
            }
            for c in 0..src.channels {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..window {
                    for dx in 0..window {
                        let a = src.at(c, y0 + dy, x0 + dx);
                        let b = edit.at(c, y0 + dy, x0 + dx);
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let mx = sx / n;
                let my = sy / n;
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cov = sxy / n - mx * my;
                let ssim = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                total += ssim;
            }
            windows += src.channels;
        }
    }
    if windows == 0 {
        return Err(Error::Metric("no windows fully outside the mask".into()));
    }
    Ok(total / windows as f64)
}

/// SSIM with the standard constants `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2` and
/// a 7x7 uniform window.
pub fn masked_ssim_default(src: &FrameImage, edit: &FrameImage, mask: &EditMask) -> Result<f64> {
    let l = src.max_val();
    masked_ssim(src, edit, mask, 7, (0.01 * l).powi(2), (0.03 * l).powi(2))
}

/// Perceptual-feature distance outside the mask: both frames are zeroed
/// inside the mask, then the mean L2 distance between corresponding patch
/// features is returned.
pub fn perceptual_distance(
    src: &FrameImage,
    edit: &FrameImage,
    mask: &EditMask,
    provider: &dyn FeatureProvider,
) -> Result<f64> {
    check_pair(src, edit, mask)?;
    let src_bg = src.zero_masked(mask)?;
    let edit_bg = edit.zero_masked(mask)?;
    let fa = provider.patch_features(&src_bg)?;
    let fb = provider.patch_features(&edit_bg)?;
    if fa.len() != fb.len() || fa.is_empty() {
        return Err(Error::Provider(format!(
            "patch feature counts differ or empty: {} vs {}",
            fa.len(),
            fb.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in fa.iter().zip(&fb) {
        let d2: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += d2.sqrt();
    }
    Ok(total / fa.len() as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-15 && nb < 1e-15 {
        return 1.0;
    }
    if na < 1e-15 || nb < 1e-15 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn self_similarity(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = features.len();
    let mut s = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            s[i][j] = cosine(&features[i], &features[j]);
        }
    }
    s
}

/// Structure distance between frame sequences: the Frobenius distance of
/// cosine self-similarity matrices of patch features, normalized by the
/// patch count and averaged over frames.
pub fn structure_distance(
    src_frames: &[FrameImage],
    edit_frames: &[FrameImage],
    provider: &dyn FeatureProvider,
) -> Result<f64> {
    if src_frames.is_empty() || src_frames.len() != edit_frames.len() {
        return Err(Error::Metric(format!(
            "frame counts differ: {} vs {}",
            src_frames.len(),
            edit_frames.len()
        )));
    }
    let mut total = 0.0;
    for (src, edit) in src_frames.iter().zip(edit_frames) {
        let fs = provider.patch_features(src)?;
        let fe = provider.patch_features(edit)?;
        if fs.len() != fe.len() || fs.is_empty() {
            return Err(Error::Provider("patch feature counts differ".into()));
        }
        let ss = self_similarity(&fs);
        let se = self_similarity(&fe);
        let mut frob = 0.0;
        for i in 0..ss.len() {
            for j in 0..ss.len() {
                let d = ss[i][j] - se[i][j];
                frob += d * d;
            }
        }
        total += frob.sqrt() / fs.len() as f64;
    }
    Ok(total / src_frames.len() as f64)
}

/// Result of a text-video similarity evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSim {
    pub value: f64,
    /// Frames whose mask had no positive pixels and fell back to the full
    /// frame.
    pub empty_mask_fallbacks: usize,
}

/// Mean cosine similarity between frame embeddings and the text embedding.
/// With masks, each frame is cropped to its mask's bounding box padded by
/// 10% per side; an empty mask falls back to the full frame and is counted.
pub fn clip_similarity(
    frames: &[FrameImage],
    text: &str,
    provider: &dyn FeatureProvider,
    masks: Option<&[EditMask]>,
) -> Result<ClipSim> {
    if frames.is_empty() {
        return Err(Error::Metric("no frames".into()));
    }
    if let Some(masks) = masks {
        if masks.len() != frames.len() {
            return Err(Error::Mask(format!(
                "{} masks for {} frames",
                masks.len(),
                frames.len()
            )));
        }
    }
    let text_emb = provider.text_embed(text)?;
    let mut total = 0.0;
    let mut fallbacks = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let view = match masks.map(|m| &m[i]) {
            None => frame.clone(),
            Some(mask) => match mask.bounding_box() {
                None => {
                    fallbacks += 1;
                    frame.clone()
                }
                Some((x0, y0, w, h)) => {
                    let pad_x = (w as f64 * 0.1).ceil() as usize;
                    let pad_y = (h as f64 * 0.1).ceil() as usize;
                    let cx0 = x0.saturating_sub(pad_x);
                    let cy0 = y0.saturating_sub(pad_y);
                    let cw = (w + pad_x + (x0 - cx0)).min(frame.width() - cx0);
                    let ch = (h + pad_y + (y0 - cy0)).min(frame.height() - cy0);
                    frame.crop(cx0, cy0, cw, ch)?
                }
            },
        };
        let emb = provider.image_embed(&view)?;
        total += cosine(&emb, &text_emb);
    }
    Ok(ClipSim {
        value: total / frames.len() as f64,
        empty_mask_fallbacks: fallbacks,
    })
}

fn tracklet_correlation(a: &Tracklet, b: &Tracklet) -> f64 {
    let da = a.displacements();
    let db = b.displacements();
    let n = da.len().min(db.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        dot += da[i].0 * db[i].0 + da[i].1 * db[i].1;
        na += da[i].0 * da[i].0 + da[i].1 * da[i].1;
        nb += db[i].0 * db[i].0 + db[i].1 * db[i].1;
    }
    let (na, nb) = (na.sqrt(), nb.sqrt());
    if na < 1e-12 && nb < 1e-12 {
        return 1.0; // two static points move identically
    }
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Motion fidelity: for each edited tracklet, the best displacement
/// correlation against all source tracklets, averaged; the symmetric mode
/// averages both directions.
pub fn motion_fidelity(
    src_tracklets: &[Tracklet],
    edit_tracklets: &[Tracklet],
    symmetric: bool,
) -> Result<f64> {
    if src_tracklets.is_empty() || edit_tracklets.is_empty() {
        return Err(Error::Metric("empty tracklet set".into()));
    }
    let directed = |from: &[Tracklet], against: &[Tracklet]| -> f64 {
        let mut total = 0.0;
        for e in from {
            let best = against
                .iter()
                .map(|s| tracklet_correlation(e, s))
                .fold(f64::NEG_INFINITY, f64::max);
            total += best;
        }
        total / from.len() as f64
    };
    let fwd = directed(edit_tracklets, src_tracklets);
    Ok(if symmetric {
        0.5 * (fwd + directed(src_tracklets, edit_tracklets))
    } else {
        fwd
    })
}

/// Wall-clock seconds per processed frame.
pub fn runtime_per_frame(elapsed_seconds: f64, frames: usize) -> Result<f64> {
    if frames == 0 {
        return Err(Error::Metric("zero frames in run log".into()));
    }
    Ok(elapsed_seconds / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_mask_corner() -> EditMask {
        // 2x2 mask marking only the top-left pixel
        EditMask::from_fn(2, 2, |y, x| y == 0 && x == 0)
    }

    #[test]
    fn sampling_indices() {
        assert_eq!(sample_frames(40, 8).unwrap(), vec![0, 8, 16, 24, 32]);
        assert_eq!(sample_frames(3, 8).unwrap(), vec![0]);
        assert_eq!(sample_frames(4, 1).unwrap(), vec![0, 1, 2, 3]);
        assert!(sample_frames(0, 8).is_err());
        assert!(sample_frames(5, 0).is_err());
    }

    #[test]
    fn masked_mse_hand_case() {
        // edit differs by 2 only at top-right; mask covers top-left
        let src = FrameImage::filled(1, 2, 2, 0.0);
        let mut edit = src.clone();
        edit.set(0, 0, 1, 2.0);
        let mse = masked_mse(&src, &edit, &uniform_mask_corner()).unwrap();
        assert!((mse - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_mse_ignores_in_mask_changes() {
        let src = FrameImage::filled(1, 2, 2, 0.5);
        let mut edit = src.clone();
        edit.set(0, 0, 0, 123.0); // inside mask
        let mse = masked_mse(&src, &edit, &uniform_mask_corner()).unwrap();
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn masked_mse_rejects_full_mask() {
        let src = FrameImage::filled(1, 2, 2, 0.0);
        let full = EditMask::from_fn(2, 2, |_, _| true);
        assert!(masked_mse(&src, &src, &full).is_err());
    }

    #[test]
    fn psnr_values() {
        let src = FrameImage::from_fn(1, 4, 4, 255.0, |_, _, _| 10.0);
        let edit = FrameImage::from_fn(1, 4, 4, 255.0, |_, _, _| 11.0);
        let mask = EditMask::empty(4, 4);
        let psnr = masked_psnr(&src, &edit, &mask, 255.0).unwrap();
        assert!((psnr - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((psnr - 48.1308).abs() < 1e-4);
        assert_eq!(masked_psnr(&src, &src, &mask, 255.0).unwrap(), PSNR_CAP_DB);
        // max 1, mse 0.01 -> 20 dB
        let a = FrameImage::filled(1, 4, 4, 0.0);
        let b = FrameImage::filled(1, 4, 4, 0.1);
        assert!((masked_psnr(&a, &b, &mask, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_identity_and_constant_case() {
        let src = FrameImage::filled(1, 8, 8, 0.5);
        let mask = EditMask::empty(8, 8);
        assert!((masked_ssim_default(&src, &src, &mask).unwrap() - 1.0).abs() < 1e-12);

        let edit = FrameImage::filled(1, 8, 8, 0.25);
        let got = masked_ssim(&src, &edit, &mask, 7, 1e-4, 9e-4).unwrap();
        let expected = (2.0 * 0.125 + 1e-4) / (0.25 + 0.0625 + 1e-4);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.8001).abs() < 1e-4);
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = FrameImage::from_fn(1, 8, 8, 1.0, |_, y, x| ((y * 3 + x) % 7) as f64 / 7.0);
        let b = FrameImage::from_fn(1, 8, 8, 1.0, |_, y, x| ((y + x * 2) % 5) as f64 / 5.0);
        let mask = EditMask::empty(8, 8);
        let ab = masked_ssim_default(&a, &b, &mask).unwrap();
        let ba = masked_ssim_default(&b, &a, &mask).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn ssim_errors_without_valid_windows() {
        let src = FrameImage::filled(1, 7, 7, 0.5);
        // single masked pixel in the middle kills the only 7x7 window
        let mask = EditMask::from_fn(7, 7, |y, x| y == 3 && x == 3);
        assert!(masked_ssim_default(&src, &src, &mask).is_err());
    }

    #[test]
    fn structure_distance_zero_for_identical_and_scaled() {
        let provider = BuiltinProvider::default();
        let frames: Vec<FrameImage> = (0..2)
            .map(|i| {
                FrameImage::from_fn(1, 16, 16, 1.0, |_, y, x| {
                    ((x + y * 2 + i * 3) % 9) as f64 / 9.0
                })
            })
            .collect();
        let d = structure_distance(&frames, &frames, &provider).unwrap();
        assert_eq!(d, 0.0);
        // global brightness scaling leaves cosine self-similarity unchanged
        let scaled: Vec<FrameImage> = frames
            .iter()
            .map(|f| {
                FrameImage::new(
                    1,
                    16,
                    16,
                    f.data().iter().map(|v| v * 0.5).collect(),
                    1.0,
                )
                .unwrap()
            })
            .collect();
        let d2 = structure_distance(&frames, &scaled, &provider).unwrap();
        assert!(d2 < 1e-12);
    }

    #[test]
    fn structure_distance_two_patch_hand_case() {
        // provider stub with two hand-set patch features per frame
        struct TwoPatch(Vec<Vec<f64>>);
        impl FeatureProvider for TwoPatch {
            fn image_embed(&self, _f: &FrameImage) -> Result<Vec<f64>> {
                Ok(vec![1.0])
            }
            fn text_embed(&self, _t: &str) -> Result<Vec<f64>> {
                Ok(vec![1.0])
            }
            fn patch_features(&self, f: &FrameImage) -> Result<Vec<Vec<f64>>> {
                // switch on a marker pixel
                if f.at(0, 0, 0) > 0.5 {
                    Ok(vec![vec![1.0, 0.0], vec![0.0, 1.0]]) // orthogonal
                } else {
                    Ok(self.0.clone())
                }
            }
        }
        let provider = TwoPatch(vec![vec![1.0, 0.0], vec![1.0, 0.0]]); // identical
        let src = FrameImage::filled(1, 2, 2, 0.0); // -> identical features
        let edit = FrameImage::filled(1, 2, 2, 1.0); // -> orthogonal features
        // S_src = [[1,1],[1,1]], S_edit = [[1,0],[0,1]]; ||diff||_F = sqrt(2), / P=2
        let d = structure_distance(&[src], &[edit], &provider).unwrap();
        assert!((d - 2f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn clip_similarity_degenerate_provider_is_one() {
        struct Constant;
        impl FeatureProvider for Constant {
            fn image_embed(&self, _f: &FrameImage) -> Result<Vec<f64>> {
                Ok(vec![0.6, 0.8])
            }
            fn text_embed(&self, _t: &str) -> Result<Vec<f64>> {
                Ok(vec![0.6, 0.8])
            }
            fn patch_features(&self, _f: &FrameImage) -> Result<Vec<Vec<f64>>> {
                Ok(vec![vec![1.0]])
            }
        }
        let frames = vec![FrameImage::filled(1, 4, 4, 0.2)];
        let sim = clip_similarity(&frames, "anything", &Constant, None).unwrap();
        assert!((sim.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_similarity_full_mask_equals_unmasked() {
        let provider = BuiltinProvider::default();
        let frames = vec![FrameImage::from_fn(3, 8, 8, 1.0, |c, y, x| {
            ((c + y + x) % 5) as f64 / 5.0
        })];
        let full = vec![EditMask::from_fn(8, 8, |_, _| true)];
        let a = clip_similarity(&frames, "a red square", &provider, None).unwrap();
        let b = clip_similarity(&frames, "a red square", &provider, Some(&full)).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(b.empty_mask_fallbacks, 0);
    }

    #[test]
    fn clip_similarity_empty_mask_flagged() {
        let provider = BuiltinProvider::default();
        let frames = vec![FrameImage::filled(1, 8, 8, 0.3)];
        let empty = vec![EditMask::empty(8, 8)];
        let sim = clip_similarity(&frames, "t", &provider, Some(&empty)).unwrap();
        assert_eq!(sim.empty_mask_fallbacks, 1);
    }

    #[test]
    fn motion_fidelity_identity_negation_and_superset() {
        let t1 = Tracklet::new(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)]).unwrap();
        let t2 = Tracklet::new(vec![(5.0, 5.0), (5.5, 5.0), (6.5, 4.0)]).unwrap();
        let src = vec![t1.clone(), t2.clone()];
        assert!((motion_fidelity(&src, &src, false).unwrap() - 1.0).abs() < 1e-12);

        let negated = Tracklet::new(vec![(0.0, 0.0), (-1.0, -1.0), (-2.0, -3.0)]).unwrap();
        let mf = motion_fidelity(&[t1.clone()], &[negated], false).unwrap();
        assert!((mf + 1.0).abs() < 1e-12);

        // duplicating a source tracklet never decreases the score
        let base = motion_fidelity(&src, &[t1.clone()], false).unwrap();
        let mut more = src.clone();
        more.push(t2);
        let better = motion_fidelity(&more, &[t1], false).unwrap();
        assert!(better >= base);
    }

    #[test]
    fn static_tracklets_score_one() {
        let s = Tracklet::new(vec![(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]).unwrap();
        assert!((motion_fidelity(&[s.clone()], &[s], true).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perceptual_distance_hand_case() {
        // single 2x2 patch with unit-impulse frames: normalized features are
        // the impulses themselves, so the distance is sqrt(2)
        let provider = BuiltinProvider {
            patch_size: 2,
            text_dim: 8,
        };
        let src = FrameImage::new(1, 2, 2, vec![1.0, 0.0, 0.0, 0.0], 1.0).unwrap();
        let edit = FrameImage::new(1, 2, 2, vec![0.0, 1.0, 0.0, 0.0], 1.0).unwrap();
        let mask = EditMask::empty(2, 2);
        let d = perceptual_distance(&src, &edit, &mask, &provider).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(perceptual_distance(&src, &src, &mask, &provider).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_distance_grows_with_noise() {
        use rand::{Rng, SeedableRng};
        let provider = BuiltinProvider::default();
        let src = FrameImage::from_fn(1, 16, 16, 1.0, |_, y, x| ((y * 5 + x * 3) % 9) as f64 / 9.0);
        let mask = EditMask::from_fn(16, 16, |y, x| y < 4 && x < 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut means = Vec::new();
        for sigma in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let mut total = 0.0;
            let repeats = 8;
            for _ in 0..repeats {
                let mut noisy = src.clone();
                for y in 0..16 {
                    for x in 0..16 {
                        let n: f64 = rng.sample(rand_distr::StandardNormal);
                        let v = noisy.at(0, y, x) + sigma * n;
                        noisy.set(0, y, x, v);
                    }
                }
                total += perceptual_distance(&src, &noisy, &mask, &provider).unwrap();
            }
            means.push(total / repeats as f64);
        }
        for w in means.windows(2) {
            assert!(w[1] >= w[0], "distance not monotone over sigma: {means:?}");
        }
    }

    #[test]
    fn stride_one_equals_mean_of_per_frame_scores() {
        let provider = BuiltinProvider::default();
        let src: Vec<FrameImage> = (0..3)
            .map(|i| {
                FrameImage::from_fn(1, 16, 16, 1.0, |_, y, x| ((y + x * 2 + i) % 7) as f64 / 7.0)
            })
            .collect();
        let edit: Vec<FrameImage> = (0..3)
            .map(|i| {
                FrameImage::from_fn(1, 16, 16, 1.0, |_, y, x| ((y * 3 + x + i) % 5) as f64 / 5.0)
            })
            .collect();
        let all = structure_distance(&src, &edit, &provider).unwrap();
        let per_frame: f64 = src
            .iter()
            .zip(&edit)
            .map(|(s, e)| {
                structure_distance(
                    std::slice::from_ref(s),
                    std::slice::from_ref(e),
                    &provider,
                )
                .unwrap()
            })
            .sum::<f64>()
            / 3.0;
        assert!((all - per_frame).abs() <= 1e-9);

        let sim_all = clip_similarity(&edit, "text", &provider, None).unwrap().value;
        let sim_each: f64 = edit
            .iter()
            .map(|f| {
                clip_similarity(std::slice::from_ref(f), "text", &provider, None)
                    .unwrap()
                    .value
            })
            .sum::<f64>()
            / 3.0;
        assert!((sim_all - sim_each).abs() <= 1e-9);
    }

    #[test]
    fn runtime_division() {
        assert!((runtime_per_frame(123.0, 41).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(runtime_per_frame(7.5, 1).unwrap(), 7.5);
        assert!(runtime_per_frame(1.0, 0).is_err());
    }

    #[test]
    fn tracklet_too_short_rejected() {
        assert!(Tracklet::new(vec![(0.0, 0.0)]).is_err());
    }
}
