//! No-reference image quality: a Mahalanobis-type distance between the
//! Gaussian fit of local normalized-luminance statistics on test frames and a
//! pristine model.

use crate::error::{Error, Result};
use crate::metrics::FrameImage;
use serde::{Deserialize, Serialize};
use std::path::Path;

const FEATURE_DIM: usize = 6;
/// Relative ridge added to a singular pooled covariance before solving.
const RIDGE: f64 = 1e-6;

/// Pristine natural-scene-statistics model: feature mean and covariance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NiqeModel {
    pub nu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

impl NiqeModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        let model: NiqeModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), json)
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
    }

    fn validate(&self) -> Result<()> {
        let d = self.nu.len();
        if d == 0 || self.sigma.len() != d || self.sigma.iter().any(|r| r.len() != d) {
            return Err(Error::Metric("niqe model dimensions inconsistent".into()));
        }
        Ok(())
    }

    /// Fit the model on the pooled patches of a set of pristine frames.
    pub fn fit(frames: &[FrameImage], patch: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Metric("no frames to fit".into()));
        }
        let mut all = Vec::new();
        for frame in frames {
            all.extend(nss_features(frame, patch));
        }
        let (nu, sigma) = gaussian_fit(&all)?;
        Ok(NiqeModel { nu, sigma })
    }

    /// `sqrt((nu1 - nu2)^T ((sigma1 + sigma2)/2)^-1 (nu1 - nu2))`.
    pub fn distance(&self, nu2: &[f64], sigma2: &[Vec<f64>]) -> Result<f64> {
        self.validate()?;
        let d = self.nu.len();
        if nu2.len() != d || sigma2.len() != d {
            return Err(Error::Metric("niqe fit dimensions differ from model".into()));
        }
        let mut pooled = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                pooled[i][j] = 0.5 * (self.sigma[i][j] + sigma2[i][j]);
            }
        }
        let diff: Vec<f64> = self.nu.iter().zip(nu2).map(|(a, b)| a - b).collect();
        let solved = solve_spd(&pooled, &diff)?;
        let q: f64 = diff.iter().zip(&solved).map(|(a, b)| a * b).sum();
        Ok(q.max(0.0).sqrt())
    }
}

/// Mean and (biased) covariance of a set of feature vectors.
fn gaussian_fit(features: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if features.is_empty() {
        return Err(Error::Metric("no patches to fit".into()));
    }
    let d = features[0].len();
    let n = features.len() as f64;
    let mut nu = vec![0.0; d];
    for f in features {
        for (i, v) in f.iter().enumerate() {
            nu[i] += v;
        }
    }
    for v in &mut nu {
        *v /= n;
    }
    let mut sigma = vec![vec![0.0; d]; d];
    for f in features {
        for i in 0..d {
            for j in 0..d {
                sigma[i][j] += (f[i] - nu[i]) * (f[j] - nu[j]);
            }
        }
    }
    for row in &mut sigma {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Ok((nu, sigma))
}

/// Cholesky solve of `A x = b` for symmetric positive-definite `A`; retries
/// with an escalating relative ridge when the factorization fails.
fn solve_spd(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let d = b.len();
    let trace: f64 = (0..d).map(|i| a[i][i]).sum();
    let base = (trace / d as f64).abs().max(1e-12);
    let mut ridge = 0.0;
    for _ in 0..8 {
        if let Some(x) = try_cholesky_solve(a, b, ridge) {
            return Ok(x);
        }
        ridge = if ridge == 0.0 { RIDGE * base } else { ridge * 10.0 };
    }
    Err(Error::Metric("pooled covariance not invertible".into()))
}

fn try_cholesky_solve(a: &[Vec<f64>], b: &[f64], ridge: f64) -> Option<Vec<f64>> {
    let d = b.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i][j] + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i][k] * y[k];
        }
        y[i] = sum / l[i][i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in i + 1..d {
            sum -= l[k][i] * x[k];
        }
        x[i] = sum / l[i][i];
    }
    Some(x)
}

/// Locally normalized luminance (MSCN-style) of the gray frame, with a 7x7
/// uniform local window and clamped borders.
fn mscn(frame: &FrameImage) -> Vec<f64> {
    let gray = frame.to_gray();
    let (h, w) = (frame.height(), frame.width());
    let half = 3isize;
    let stabilizer = frame.max_val() / 255.0;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut n = 0.0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let v = gray[yy * w + xx];
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            let mu = sum / n;
            let var = (sq / n - mu * mu).max(0.0);
            out[y * w + x] = (gray[y * w + x] - mu) / (var.sqrt() + stabilizer);
        }
    }
    out
}

/// Per-patch statistics of the normalized luminance: mean, variance, mean
/// absolute value, and horizontal / vertical / diagonal neighbor products.
pub fn nss_features(frame: &FrameImage, patch: usize) -> Vec<Vec<f64>> {
    let coeffs = mscn(frame);
    let (h, w) = (frame.height(), frame.width());
    let p = patch.min(h).min(w).max(2);
    let rows = (h / p).max(1);
    let cols = (w / p).max(1);
    let mut features = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (y0, x0) = (r * p, c * p);
            let mut f = vec![0.0; FEATURE_DIM];
            let mut n = 0.0;
            let mut pair_h = (0.0f64, 0.0f64);
            let mut pair_v = (0.0f64, 0.0f64);
            let mut pair_d = (0.0f64, 0.0f64);
            for dy in 0..p {
                for dx in 0..p {
                    let v = coeffs[(y0 + dy) * w + (x0 + dx)];
                    f[0] += v;
                    f[1] += v * v;
                    f[2] += v.abs();
                    n += 1.0;
                    if dx + 1 < p {
                        pair_h.0 += v * coeffs[(y0 + dy) * w + (x0 + dx + 1)];
                        pair_h.1 += 1.0;
                    }
                    if dy + 1 < p {
                        pair_v.0 += v * coeffs[(y0 + dy + 1) * w + (x0 + dx)];
                        pair_v.1 += 1.0;
                    }
                    if dx + 1 < p && dy + 1 < p {
                        pair_d.0 += v * coeffs[(y0 + dy + 1) * w + (x0 + dx + 1)];
                        pair_d.1 += 1.0;
                    }
                }
            }
            let mean = f[0] / n;
            f[0] = mean;
            f[1] = (f[1] / n - mean * mean).max(0.0);
            f[2] /= n;
            f[3] = pair_h.0 / pair_h.1.max(1.0);
            f[4] = pair_v.0 / pair_v.1.max(1.0);
            f[5] = pair_d.0 / pair_d.1.max(1.0);
            features.push(f);
        }
    }
    features
}

/// NIQE score of a frame sequence against a pristine model: per-frame
/// Gaussian fit and distance, averaged over frames.
pub fn niqe_score(frames: &[FrameImage], model: &NiqeModel, patch: usize) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::Metric("no frames".into()));
    }
    let mut total = 0.0;
    for frame in frames {
        let feats = nss_features(frame, patch);
        let (nu2, sigma2) = gaussian_fit(&feats)?;
        total += model.distance(&nu2, &sigma2)?;
    }
    Ok(total / frames.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured_frame(seed: usize) -> FrameImage {
        FrameImage::from_fn(1, 32, 32, 1.0, |_, y, x| {
            let a = ((x * 7 + y * 13 + seed * 5) % 23) as f64 / 23.0;
            let b = ((x * 3 + y * 11) % 17) as f64 / 17.0;
            0.5 * a + 0.5 * b
        })
    }

    #[test]
    fn one_dimensional_formula_case() {
        let model = NiqeModel {
            nu: vec![0.0],
            sigma: vec![vec![1.0]],
        };
        let d = model.distance(&[2.0], &[vec![1.0]]).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_statistics_score_zero() {
        let frames = vec![textured_frame(1)];
        let model = NiqeModel::fit(&frames, 8).unwrap();
        let score = niqe_score(&frames, &model, 8).unwrap();
        assert!(score.abs() < 1e-6, "score {score}");
    }

    #[test]
    fn score_is_nonnegative_and_order_invariant() {
        let frames = vec![textured_frame(1), textured_frame(2), textured_frame(3)];
        let model = NiqeModel::fit(&frames[..1].to_vec(), 8).unwrap();
        let fwd = niqe_score(&frames, &model, 8).unwrap();
        let mut rev = frames.clone();
        rev.reverse();
        let bwd = niqe_score(&rev, &model, 8).unwrap();
        assert!(fwd >= 0.0);
        assert!((fwd - bwd).abs() < 1e-12);
    }

    #[test]
    fn singular_covariance_is_regularized() {
        // constant frames give zero covariance; ridge must keep this finite
        let flat = vec![FrameImage::filled(1, 16, 16, 0.5)];
        let model = NiqeModel::fit(&flat, 8).unwrap();
        let frames = vec![textured_frame(4)];
        let score = niqe_score(&frames, &model, 8).unwrap();
        assert!(score.is_finite() && score >= 0.0);
    }

    #[test]
    fn model_file_round_trip() {
        let model = NiqeModel {
            nu: vec![0.1, -0.2],
            sigma: vec![vec![1.0, 0.1], vec![0.1, 2.0]],
        };
        let dir = std::env::temp_dir().join("five_bench_niqe");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pristine.json");
        model.save(&path).unwrap();
        let back = NiqeModel::load(&path).unwrap();
        assert_eq!(back.nu, model.nu);
        assert_eq!(back.sigma, model.sigma);
    }
}
