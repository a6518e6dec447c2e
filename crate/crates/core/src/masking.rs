//! Exposure-rate masking: which pixels a ranking reveals at a given rate, and
//! how the hidden ones are painted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::saliency::{ImageTensor, PixelRanking};

#[derive(Debug, Error, PartialEq)]
pub enum MaskError {
    #[error("exposure rate {0} outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("schedule must be nonempty")]
    EmptySchedule,
    #[error("schedule rates must be strictly ascending (at position {0})")]
    NotAscending(usize),
    #[error("schedule must end at 1.0 (got {0})")]
    MissingFullExposure(f64),
    #[error("game schedule must start above 0")]
    ZeroStart,
    #[error("pixel index {index} out of range for {n_pixels} pixels")]
    IndexOutOfRange { index: usize, n_pixels: usize },
    #[error("ranking covers {ranking} pixels but image has {image}")]
    RankingSize { ranking: usize, image: usize },
    #[error("fill value {0} outside [0, 1]")]
    FillOutOfRange(f64),
    #[error("fill has {fill} channel values but image has {image} channels")]
    FillChannels { fill: usize, image: usize },
}

/// The default game schedule.
pub const DEFAULT_RATES: [f64; 8] = [0.05, 0.10, 0.15, 0.20, 0.30, 0.50, 0.75, 1.0];

/// Ascending exposure rates ending at full exposure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ExposureSchedule {
    rates: Vec<f64>,
}

impl ExposureSchedule {
    pub fn new(rates: Vec<f64>) -> Result<Self, MaskError> {
        let last = *rates.last().ok_or(MaskError::EmptySchedule)?;
        for (i, &r) in rates.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                return Err(MaskError::RateOutOfRange(r));
            }
            if i > 0 && r <= rates[i - 1] {
                return Err(MaskError::NotAscending(i));
            }
        }
        if last != 1.0 {
            return Err(MaskError::MissingFullExposure(last));
        }
        Ok(Self { rates })
    }

    /// A schedule usable for the game: additionally requires a nonzero start.
    pub fn for_game(rates: Vec<f64>) -> Result<Self, MaskError> {
        let s = Self::new(rates)?;
        if s.rates[0] <= 0.0 {
            return Err(MaskError::ZeroStart);
        }
        Ok(s)
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// The rates with a leading 0.0, as used for accuracy curves.
    pub fn metric_axis(&self) -> Vec<f64> {
        let mut axis = Vec::with_capacity(self.rates.len() + 1);
        if self.rates[0] > 0.0 {
            axis.push(0.0);
        }
        axis.extend_from_slice(&self.rates);
        axis
    }
}

impl Default for ExposureSchedule {
    fn default() -> Self {
        Self {
            rates: DEFAULT_RATES.to_vec(),
        }
    }
}

impl TryFrom<Vec<f64>> for ExposureSchedule {
    type Error = MaskError;
    fn try_from(rates: Vec<f64>) -> Result<Self, MaskError> {
        Self::new(rates)
    }
}

impl From<ExposureSchedule> for Vec<f64> {
    fn from(s: ExposureSchedule) -> Self {
        s.rates
    }
}

/// Number of pixels revealed at `rate` out of `n_pixels`: `ceil(rate * n)`.
///
/// Rates are decimal fractions; a product within 1e-9 of an integer is taken
/// as that integer so that e.g. `0.15 * 100` yields 15 rather than 16.
pub fn reveal_count(rate: f64, n_pixels: usize) -> Result<usize, MaskError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(MaskError::RateOutOfRange(rate));
    }
    let x = rate * n_pixels as f64;
    let nearest = x.round();
    let k = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    Ok((k as usize).min(n_pixels))
}

/// The pixels exposed at one rate: a prefix of the ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RevealSet {
    pub rate: f64,
    indices: Vec<usize>,
}

impl RevealSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Membership mask over `n_pixels` locations.
    pub fn membership(&self, n_pixels: usize) -> Vec<bool> {
        let mut m = vec![false; n_pixels];
        for &i in &self.indices {
            if i < n_pixels {
                m[i] = true;
            }
        }
        m
    }
}

pub fn reveal_set(ranking: &PixelRanking, rate: f64, n_pixels: usize) -> Result<RevealSet, MaskError> {
    if ranking.len() != n_pixels {
        return Err(MaskError::RankingSize {
            ranking: ranking.len(),
            image: n_pixels,
        });
    }
    let k = reveal_count(rate, n_pixels)?;
    Ok(RevealSet {
        rate,
        indices: ranking.order()[..k].to_vec(),
    })
}

/// How hidden pixels are painted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FillStrategy {
    ConstantBlack,
    ConstantGray { value: f64 },
    ChannelMean { means: Vec<f64> },
}

impl FillStrategy {
    /// Per-channel mean over a set of images (all of the same shape).
    pub fn dataset_mean<'a>(images: impl IntoIterator<Item = &'a ImageTensor>) -> Option<Self> {
        let mut sums: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for img in images {
            if sums.is_empty() {
                sums = vec![0.0; img.channels()];
            }
            for px in img.values().chunks_exact(img.channels()) {
                for (s, v) in sums.iter_mut().zip(px) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return None;
        }
        Some(FillStrategy::ChannelMean {
            means: sums.into_iter().map(|s| s / count as f64).collect(),
        })
    }

    fn pixel_value(&self, channels: usize) -> Result<Vec<f64>, MaskError> {
        let px = match self {
            FillStrategy::ConstantBlack => vec![0.0; channels],
            FillStrategy::ConstantGray { value } => vec![*value; channels],
            FillStrategy::ChannelMean { means } => {
                if means.len() != channels {
                    return Err(MaskError::FillChannels {
                        fill: means.len(),
                        image: channels,
                    });
                }
                means.clone()
            }
        };
        if let Some(&bad) = px.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MaskError::FillOutOfRange(bad));
        }
        Ok(px)
    }
}

/// Keeps the revealed locations and fills every other location.
pub fn apply_mask(image: &ImageTensor, reveal: &RevealSet, fill: &FillStrategy) -> Result<ImageTensor, MaskError> {
    let n = image.n_pixels();
    if let Some(&index) = reveal.indices.iter().find(|&&i| i >= n) {
        return Err(MaskError::IndexOutOfRange { index, n_pixels: n });
    }
    let keep = reveal.membership(n);
    paint(image, |i| !keep[i], fill)
}

/// Fills the given locations and keeps every other one; the complement of
/// [`apply_mask`] for the same reveal set.
pub fn remove_pixels(image: &ImageTensor, removed: &RevealSet, fill: &FillStrategy) -> Result<ImageTensor, MaskError> {
    let n = image.n_pixels();
    if let Some(&index) = removed.indices.iter().find(|&&i| i >= n) {
        return Err(MaskError::IndexOutOfRange { index, n_pixels: n });
    }
    let hit = removed.membership(n);
    paint(image, |i| hit[i], fill)
}

fn paint(image: &ImageTensor, hide: impl Fn(usize) -> bool, fill: &FillStrategy) -> Result<ImageTensor, MaskError> {
    let fill_px = fill.pixel_value(image.channels())?;
    let mut out = image.clone();
    for i in (0..image.n_pixels()).filter(|&i| hide(i)) {
        out.pixel_mut(i).copy_from_slice(&fill_px);
    }
    Ok(out)
}

/// One masked image per schedule rate, in schedule order.
pub fn render_series(
    image: &ImageTensor,
    ranking: &PixelRanking,
    schedule: &ExposureSchedule,
    fill: &FillStrategy,
) -> Result<Vec<ImageTensor>, MaskError> {
    schedule
        .rates()
        .iter()
        .map(|&r| {
            let reveal = reveal_set(ranking, r, image.n_pixels())?;
            apply_mask(image, &reveal, fill)
        })
        .collect()
}
