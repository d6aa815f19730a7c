//! Thermal attention: the thermal V channel raised to a power `γ`.

use alloc::vec::Vec;

use crate::image::{nearest_source, rgb_to_hsv_v, RasterImage};
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 2.0;

/// Spatial weights in `[0, 1]`, row-major, tagged with the exponent that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    gamma: f64,
}

impl AttentionMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, gamma: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if values.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SampleOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            values,
            gamma,
        })
    }

    /// Every weight equal to `value`; `gamma` recorded as 1.
    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, alloc::vec![value; width * height], 1.0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Resamples to `width` × `height`: block mean when both axes shrink by
    /// an exact integer factor, nearest neighbour otherwise.
    pub fn resampled(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let exact = self.width.is_multiple_of(width) && self.height.is_multiple_of(height);
        let values = if exact {
            let (fx, fy) = (self.width / width, self.height / height);
            let scale = 1.0 / (fx * fy) as f64;
            let mut out = Vec::with_capacity(width * height);
            for r in 0..height {
                for c in 0..width {
                    let mut sum = 0.0;
                    for rr in r * fy..(r + 1) * fy {
                        for cc in c * fx..(c + 1) * fx {
                            sum += self.values[rr * self.width + cc];
                        }
                    }
                    out.push((sum * scale).min(1.0));
                }
            }
            out
        } else {
            let mut out = Vec::with_capacity(width * height);
            for r in 0..height {
                let sr = nearest_source(r, self.height, height);
                for c in 0..width {
                    let sc = nearest_source(c, self.width, width);
                    out.push(self.values[sr * self.width + sc]);
                }
            }
            out
        };
        Self::new(width, height, values, self.gamma)
    }
}

/// `V(thermal)^γ`. One-channel thermal frames are taken as V directly.
pub fn build_attention(thermal: &RasterImage, gamma: f64) -> Result<AttentionMap> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
        });
    }
    let v = match thermal.channels() {
        1 => thermal.clone(),
        _ => rgb_to_hsv_v(thermal)?,
    };
    let values = v
        .data()
        .iter()
        .map(|&x| if x <= 0.0 { 0.0 } else { libm::pow(x, gamma).min(1.0) })
        .collect();
    AttentionMap::new(thermal.width(), thermal.height(), values, gamma)
}

/// One resampled copy of `att` per requested `(width, height)`.
pub fn attention_pyramid(att: &AttentionMap, sizes: &[(usize, usize)]) -> Result<Vec<AttentionMap>> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter {
            name: "pyramid levels",
            value: 0.0,
        });
    }
    sizes.iter().map(|&(w, h)| att.resampled(w, h)).collect()
}
