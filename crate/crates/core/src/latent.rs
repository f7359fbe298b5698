//! Latent tensors: the real-valued `(frames, channels, height, width)` arrays
//! that all editing math operates on.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Dimensions of a latent tensor, `(frames, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial dimensions divided by `factor` (both must divide exactly).
    pub fn downsampled(&self, factor: usize) -> Result<Shape> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::shape_mismatch(
                format!("spatial dims divisible by {factor}"),
                *self,
            ));
        }
        Ok(Shape {
            frames: self.frames,
            channels: self.channels,
            height: self.height / factor,
            width: self.width / factor,
        })
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.frames, self.channels, self.height, self.width
        )
    }
}

/// Dense row-major `(F, C, H, W)` tensor of `f64` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.frames == 0 || shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::shape_mismatch("all dims >= 1", shape));
        }
        if data.len() != shape.len() {
            return Err(Error::shape_mismatch(
                format!("{} entries", shape.len()),
                format!("{} entries", data.len()),
            ));
        }
        Ok(LatentTensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        LatentTensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        LatentTensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Standard-normal tensor drawn entry by entry in row-major order.
    pub fn randn<R: Rng>(shape: Shape, rng: &mut R) -> Self {
        let data = (0..shape.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        LatentTensor { shape, data }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for fr in 0..shape.frames {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(fr, c, y, x));
                    }
                }
            }
        }
        LatentTensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, frame: usize, channel: usize, y: usize, x: usize) -> f64 {
        let s = &self.shape;
        self.data[((frame * s.channels + channel) * s.height + y) * s.width + x]
    }

    pub fn set(&mut self, frame: usize, channel: usize, y: usize, x: usize, v: f64) {
        let s = &self.shape;
        let idx = ((frame * s.channels + channel) * s.height + y) * s.width + x;
        self.data[idx] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape_mismatch(self.shape, other.shape));
        }
        Ok(())
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &LatentTensor) -> Result<LatentTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(LatentTensor {
            shape: self.shape,
            data,
        })
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &LatentTensor) -> Result<LatentTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(LatentTensor {
            shape: self.shape,
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> LatentTensor {
        LatentTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self + factor * other`, the Euler-update primitive.
    pub fn add_scaled(&self, other: &LatentTensor, factor: f64) -> Result<LatentTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + factor * b)
            .collect();
        Ok(LatentTensor {
            shape: self.shape,
            data,
        })
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &LatentTensor, t: f64) -> Result<LatentTensor> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        Ok(LatentTensor {
            shape: self.shape,
            data,
        })
    }

    /// Maximum absolute entry difference; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &LatentTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Per-channel spatial mean over all frames' pixels of that channel.
    pub fn channel_means(&self) -> Vec<f64> {
        let s = self.shape;
        let per = s.frames * s.height * s.width;
        let mut sums = vec![0.0; s.channels];
        for fr in 0..s.frames {
            for c in 0..s.channels {
                for y in 0..s.height {
                    for x in 0..s.width {
                        sums[c] += self.at(fr, c, y, x);
                    }
                }
            }
        }
        sums.iter().map(|v| v / per as f64).collect()
    }

    /// Extract a single frame as an `(1, C, H, W)` tensor.
    pub fn frame(&self, index: usize) -> LatentTensor {
        let s = self.shape;
        let per = s.channels * s.height * s.width;
        let data = self.data[index * per..(index + 1) * per].to_vec();
        LatentTensor {
            shape: Shape::new(1, s.channels, s.height, s.width),
            data,
        }
    }

    /// Stack single-frame tensors along the frame axis.
    pub fn stack_frames(frames: &[LatentTensor]) -> Result<LatentTensor> {
        if frames.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let s0 = frames[0].shape;
        let mut data = Vec::with_capacity(frames.len() * s0.len());
        for f in frames {
            f.check_same_shape(&frames[0])?;
            data.extend_from_slice(&f.data);
        }
        Ok(LatentTensor {
            shape: Shape::new(
                frames.len() * s0.frames,
                s0.channels,
                s0.height,
                s0.width,
            ),
            data,
        })
    }

    /// Mean-pool by `factor` in both spatial directions. `factor == 1` is the identity.
    pub fn downsample(&self, factor: usize) -> Result<LatentTensor> {
        if factor == 1 {
            return Ok(self.clone());
        }
        let out_shape = self.shape.downsampled(factor)?;
        let mut out = LatentTensor::zeros(out_shape);
        let inv = 1.0 / (factor * factor) as f64;
        for fr in 0..out_shape.frames {
            for c in 0..out_shape.channels {
                for y in 0..out_shape.height {
                    for x in 0..out_shape.width {
                        let mut sum = 0.0;
                        for dy in 0..factor {
                            for dx in 0..factor {
                                sum += self.at(fr, c, y * factor + dy, x * factor + dx);
                            }
                        }
                        out.set(fr, c, y, x, sum * inv);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Nearest-neighbor replication by `factor` in both spatial directions.
    pub fn upsample(&self, factor: usize) -> LatentTensor {
        if factor == 1 {
            return self.clone();
        }
        let s = self.shape;
        let out_shape = Shape::new(s.frames, s.channels, s.height * factor, s.width * factor);
        let mut out = LatentTensor::zeros(out_shape);
        for fr in 0..s.frames {
            for c in 0..s.channels {
                for y in 0..out_shape.height {
                    for x in 0..out_shape.width {
                        out.set(fr, c, y, x, self.at(fr, c, y / factor, x / factor));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_len_and_indexing() {
        let t = LatentTensor::from_fn(Shape::new(2, 3, 4, 5), |f, c, y, x| {
            (f * 1000 + c * 100 + y * 10 + x) as f64
        });
        assert_eq!(t.shape().len(), 120);
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
    }

    #[test]
    fn downsample_mean_pools() {
        // 4x4 checkerboard of {0, 2} pools to all-ones at 2x2.
        let t = LatentTensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, x| {
            if (y + x) % 2 == 0 {
                0.0
            } else {
                2.0
            }
        });
        let d = t.downsample(2).unwrap();
        assert_eq!(d.shape(), Shape::new(1, 1, 2, 2));
        assert!(d.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn upsample_replicates() {
        let t = LatentTensor::new(Shape::new(1, 1, 1, 2), vec![3.0, 7.0]).unwrap();
        let u = t.upsample(2);
        assert_eq!(u.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(u.at(0, 0, 1, 0), 3.0);
        assert_eq!(u.at(0, 0, 0, 3), 7.0);
    }

    #[test]
    fn down_up_identity_at_factor_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = LatentTensor::randn(Shape::new(1, 2, 4, 4), &mut rng);
        assert_eq!(t.downsample(1).unwrap(), t);
        assert_eq!(t.upsample(1), t);
    }

    #[test]
    fn indivisible_downsample_rejected() {
        let t = LatentTensor::zeros(Shape::new(1, 1, 3, 4));
        assert!(t.downsample(2).is_err());
    }

    #[test]
    fn channel_means_match_hand_value() {
        let t = LatentTensor::from_fn(Shape::new(2, 2, 1, 2), |f, c, _, x| {
            (f + c + x) as f64
        });
        // channel 0 entries: f0: 0,1  f1: 1,2 -> mean 1.0; channel 1: 1,2,2,3 -> 2.0
        assert_eq!(t.channel_means(), vec![1.0, 2.0]);
    }

    #[test]
    fn stack_and_slice_frames_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = LatentTensor::randn(Shape::new(1, 2, 2, 2), &mut rng);
        let b = LatentTensor::randn(Shape::new(1, 2, 2, 2), &mut rng);
        let s = LatentTensor::stack_frames(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape().frames, 2);
        assert_eq!(s.frame(0), a);
        assert_eq!(s.frame(1), b);
    }
}
