//! Images, saliency maps and pixel rankings.
//!
//! A [`SaliencyMap`] always carries one score per spatial location. Methods
//! that produce per-channel attributions go through [`reduce_to_spatial`]
//! first, which takes the mean absolute value over channels.

use std::io::Cursor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error("grid must have nonzero width and height (got {width}x{height})")]
    EmptyGrid { width: usize, height: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("image value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("png: {0}")]
    Png(String),
}

/// A row-major, channel-interleaved image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, SaliencyError> {
        if width == 0 || height == 0 {
            return Err(SaliencyError::EmptyGrid { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(SaliencyError::Channels(channels));
        }
        let expected = width * height * channels;
        if values.len() != expected {
            return Err(SaliencyError::LengthMismatch {
                expected,
                got: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(SaliencyError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(SaliencyError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self, SaliencyError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial locations.
    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Total number of scalar inputs (pixels times channels).
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub(crate) fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Decodes an 8-bit grayscale or RGB PNG.
    pub fn from_png(bytes: &[u8]) -> Result<Self, SaliencyError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| SaliencyError::Png(e.to_string()))?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let (channels, raw) = match img {
            image::DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
            image::DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        let values = raw.into_iter().map(|v| f64::from(v) / 255.0).collect();
        Self::new(width, height, channels, values)
    }

    /// Encodes as an 8-bit PNG, rounding each intensity to the nearest level.
    pub fn to_png(&self) -> Result<Vec<u8>, SaliencyError> {
        let raw: Vec<u8> = self
            .values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &raw,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| SaliencyError::Png(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// One finite importance score per spatial location of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    scores: Vec<f32>,
    pub method_id: String,
    pub image_id: String,
}

impl SaliencyMap {
    pub fn new(
        width: usize,
        height: usize,
        scores: Vec<f32>,
        method_id: impl Into<String>,
        image_id: impl Into<String>,
    ) -> Result<Self, SaliencyError> {
        if width == 0 || height == 0 {
            return Err(SaliencyError::EmptyGrid { width, height });
        }
        if scores.len() != width * height {
            return Err(SaliencyError::LengthMismatch {
                expected: width * height,
                got: scores.len(),
            });
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(SaliencyError::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            scores,
            method_id: method_id.into(),
            image_id: image_id.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.scores.len()
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }
}

/// A permutation of spatial indices, most important first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelRanking {
    order: Vec<usize>,
}

impl PixelRanking {
    /// Wraps an explicit order, checking that it is a permutation of `0..n`.
    pub fn from_order(order: Vec<usize>) -> Option<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return None;
            }
        }
        Some(Self { order })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Collapses a per-channel attribution grid (row-major, channel-interleaved)
/// into a spatial map: each location scores the mean absolute value of its
/// channels.
pub fn reduce_to_spatial(
    width: usize,
    height: usize,
    channels: usize,
    raw: &[f64],
    method_id: &str,
    image_id: &str,
) -> Result<SaliencyMap, SaliencyError> {
    if width == 0 || height == 0 {
        return Err(SaliencyError::EmptyGrid { width, height });
    }
    if channels == 0 || raw.len() != width * height * channels {
        return Err(SaliencyError::LengthMismatch {
            expected: width * height * channels.max(1),
            got: raw.len(),
        });
    }
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite { index });
    }
    let scores = raw
        .chunks_exact(channels)
        .map(|px| (px.iter().map(|v| v.abs()).sum::<f64>() / channels as f64) as f32)
        .collect();
    SaliencyMap::new(width, height, scores, method_id, image_id)
}

/// Sorts locations by descending score; equal scores keep row-major order.
pub fn rank_pixels(map: &SaliencyMap) -> PixelRanking {
    let mut order: Vec<usize> = (0..map.scores.len()).collect();
    // sort_by is stable, so ties stay in ascending index order.
    order.sort_by(|&a, &b| map.scores[b].total_cmp(&map.scores[a]));
    PixelRanking { order }
}

pub const RANDOM_METHOD_ID: &str = "random";

/// Random baseline: independent uniform scores from a seeded generator.
pub fn generate_random_saliency(
    width: usize,
    height: usize,
    seed: u64,
    image_id: &str,
) -> Result<SaliencyMap, SaliencyError> {
    if width == 0 || height == 0 {
        return Err(SaliencyError::EmptyGrid { width, height });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..width * height).map(|_| rng.random::<f32>()).collect();
    SaliencyMap::new(width, height, scores, RANDOM_METHOD_ID, image_id)
}
