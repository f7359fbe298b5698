//! Feature providers: the pluggable stand-in for perceptual backbones.
//!
//! The built-in provider is fully deterministic and self-contained: patch
//! features are normalized raw pixels, text embeddings are hashed character
//! trigrams, image embeddings are pooled patch statistics. The HTTP provider
//! forwards the same three operations to an external service for real
//! backbones.

use crate::error::{Error, Result};
use crate::metrics::FrameImage;
use crate::util::fnv1a;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Deterministic embedding and patch-feature extraction over frames and text.
pub trait FeatureProvider {
    /// Unit-norm embedding of a frame.
    fn image_embed(&self, frame: &FrameImage) -> Result<Vec<f64>>;
    /// Unit-norm embedding of a text string.
    fn text_embed(&self, text: &str) -> Result<Vec<f64>>;
    /// `P x d` patch feature matrix of a frame.
    fn patch_features(&self, frame: &FrameImage) -> Result<Vec<Vec<f64>>>;
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-15 {
        // all-zero input: deterministic unit fallback
        if !v.is_empty() {
            v[0] = 1.0;
        }
        return v;
    }
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Self-contained deterministic provider used by all tests and the default
/// evaluation path.
#[derive(Clone, Debug)]
pub struct BuiltinProvider {
    /// Square patch edge for `patch_features`.
    pub patch_size: usize,
    /// Number of hash bins in text embeddings.
    pub text_dim: usize,
}

impl Default for BuiltinProvider {
    fn default() -> Self {
        BuiltinProvider {
            patch_size: 8,
            text_dim: 32,
        }
    }
}

impl BuiltinProvider {
    fn pooled_gray(&self, frame: &FrameImage, cells: usize) -> Vec<f64> {
        let gray = frame.to_gray();
        let (h, w) = (frame.height(), frame.width());
        let mut out = Vec::with_capacity(cells * cells);
        for cy in 0..cells {
            for cx in 0..cells {
                let y0 = cy * h / cells;
                let y1 = (((cy + 1) * h) / cells).max(y0 + 1).min(h);
                let x0 = cx * w / cells;
                let x1 = (((cx + 1) * w) / cells).max(x0 + 1).min(w);
                let (y0, x0) = (y0.min(h - 1), x0.min(w - 1));
                let mut sum = 0.0;
                let mut n = 0usize;
                for y in y0..y1.max(y0 + 1) {
                    for x in x0..x1.max(x0 + 1) {
                        sum += gray[y * w + x];
                        n += 1;
                    }
                }
                out.push(sum / n as f64);
            }
        }
        out
    }
}

impl FeatureProvider for BuiltinProvider {
    fn image_embed(&self, frame: &FrameImage) -> Result<Vec<f64>> {
        let mut v = Vec::new();
        let area = (frame.height() * frame.width()) as f64;
        for c in 0..frame.channels() {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for y in 0..frame.height() {
                for x in 0..frame.width() {
                    let p = frame.at(c, y, x);
                    sum += p;
                    sq += p * p;
                }
            }
            let mean = sum / area;
            v.push(mean);
            v.push((sq / area - mean * mean).max(0.0).sqrt());
        }
        v.extend(self.pooled_gray(frame, 4));
        Ok(normalize(v))
    }

    fn text_embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut bins = vec![0.0; self.text_dim];
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        if chars.len() < 3 {
            let h = fnv1a(text.to_lowercase().as_bytes());
            bins[(h % self.text_dim as u64) as usize] += 1.0;
        } else {
            for tri in chars.windows(3) {
                let s: String = tri.iter().collect();
                let h = fnv1a(s.as_bytes());
                bins[(h % self.text_dim as u64) as usize] += 1.0;
            }
        }
        Ok(normalize(bins))
    }

    fn patch_features(&self, frame: &FrameImage) -> Result<Vec<Vec<f64>>> {
        let p = self.patch_size;
        let rows = (frame.height() / p).max(1);
        let cols = (frame.width() / p).max(1);
        let ph = if frame.height() >= p { p } else { frame.height() };
        let pw = if frame.width() >= p { p } else { frame.width() };
        let mut features = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut f = Vec::with_capacity(frame.channels() * ph * pw);
                for ch in 0..frame.channels() {
                    for dy in 0..ph {
                        for dx in 0..pw {
                            f.push(frame.at(ch, r * ph + dy, c * pw + dx));
                        }
                    }
                }
                features.push(normalize(f));
            }
        }
        Ok(features)
    }
}

/// Wire format of a provider request: images travel as base64 PNG, text as
/// UTF-8.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub op: String,
    pub payload: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProviderResponse {
    #[serde(default)]
    pub vector: Option<Vec<f64>>,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    pub provider_id: String,
    pub version: String,
}

/// Client for an external feature service speaking the JSON protocol above.
pub struct HttpProvider {
    url: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>) -> Self {
        HttpProvider {
            url: url.into(),
            agent: ureq::Agent::new_with_defaults(),
        }
    }

    fn call(&self, op: &str, payload: String) -> Result<ProviderResponse> {
        let request = ProviderRequest {
            op: op.to_string(),
            payload,
        };
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(&request)
            .map_err(|e| Error::Provider(format!("{op}: {e}")))?;
        response
            .body_mut()
            .read_json::<ProviderResponse>()
            .map_err(|e| Error::Provider(format!("{op}: bad response: {e}")))
    }

    fn image_payload(frame: &FrameImage) -> Result<String> {
        Ok(B64.encode(crate::imgio::frame_to_png_bytes(frame)?))
    }
}

impl FeatureProvider for HttpProvider {
    fn image_embed(&self, frame: &FrameImage) -> Result<Vec<f64>> {
        self.call("image_embed", Self::image_payload(frame)?)?
            .vector
            .ok_or_else(|| Error::Provider("image_embed: response missing vector".into()))
    }

    fn text_embed(&self, text: &str) -> Result<Vec<f64>> {
        self.call("text_embed", text.to_string())?
            .vector
            .ok_or_else(|| Error::Provider("text_embed: response missing vector".into()))
    }

    fn patch_features(&self, frame: &FrameImage) -> Result<Vec<Vec<f64>>> {
        self.call("patch_features", Self::image_payload(frame)?)?
            .matrix
            .ok_or_else(|| Error::Provider("patch_features: response missing matrix".into()))
    }
}
