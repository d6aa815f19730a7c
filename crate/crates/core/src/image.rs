//! Planar raster images of unit-interval samples.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A row/column pixel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelIndex {
    pub row: usize,
    pub col: usize,
}

impl PixelIndex {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Row-major linear index for an image of the given width.
    pub fn linear(self, width: usize) -> usize {
        self.row * width + self.col
    }
}

/// An H×W×C image with samples in `[0, 1]`.
///
/// Samples are stored channel-planar: all of channel 0 in row-major order,
/// then channel 1, and so on. The image is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl RasterImage {
    /// Validates dimensions, buffer length and sample range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                actual: channels,
            });
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SampleOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from per-channel planes.
    pub fn from_planes(width: usize, height: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * planes.len());
        for plane in planes {
            if plane.len() != width * height {
                return Err(Error::BufferLength {
                    expected: width * height,
                    actual: plane.len(),
                });
            }
            data.extend_from_slice(plane);
        }
        Self::new(width, height, planes.len(), data)
    }

    /// Every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(row, col, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for r in 0..height {
                for col in 0..width {
                    data.push(f(r, col, c));
                }
            }
        }
        Self::new(width, height, channels, data)
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

    /// Number of pixels (not samples).
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Contiguous row-major samples of one channel.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[channel * self.pixel_count() + row * self.width + col]
    }

    pub fn at(&self, p: PixelIndex, channel: usize) -> f64 {
        self.get(p.row, p.col, channel)
    }

    pub fn same_size(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels != expected {
            return Err(Error::ChannelCount {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }

    pub(crate) fn require_same_size(&self, other: &RasterImage) -> Result<()> {
        if !self.same_size(other) {
            return Err(Error::SizeMismatch {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            });
        }
        Ok(())
    }

    /// Per-pixel maximum over channels (identity on 1-channel images).
    pub fn channel_max(&self) -> Vec<f64> {
        let n = self.pixel_count();
        let mut out = self.plane(0).to_vec();
        for c in 1..self.channels {
            for (o, &v) in out.iter_mut().zip(&self.data[c * n..(c + 1) * n]) {
                if v > *o {
                    *o = v;
                }
            }
        }
        out
    }
}

/// The HSV value component: per-pixel maximum of the three channels.
pub fn rgb_to_hsv_v(img: &RasterImage) -> Result<RasterImage> {
    img.require_channels(3)?;
    RasterImage::new(img.width, img.height, 1, img.channel_max())
}

/// Source coordinate sampled by output coordinate `dst` when resampling
/// `src_len` samples onto `dst_len` (pixel-centre alignment).
pub(crate) fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    ((2 * dst + 1) * src_len / (2 * dst_len)).min(src_len - 1)
}

/// Nearest-neighbour resampling to `new_width` × `new_height`.
pub fn resize_nearest(img: &RasterImage, new_width: usize, new_height: usize) -> Result<RasterImage> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::ZeroDimension {
            width: new_width,
            height: new_height,
        });
    }
    let cols: Vec<usize> = (0..new_width)
        .map(|c| nearest_source(c, img.width, new_width))
        .collect();
    let rows: Vec<usize> = (0..new_height)
        .map(|r| nearest_source(r, img.height, new_height))
        .collect();
    let mut data = Vec::with_capacity(new_width * new_height * img.channels);
    for ch in 0..img.channels {
        let plane = img.plane(ch);
        for &r in &rows {
            data.extend(cols.iter().map(|&c| plane[r * img.width + c]));
        }
    }
    RasterImage::new(new_width, new_height, img.channels, data)
}
