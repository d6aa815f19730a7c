//! Bright channel, ambient light and the coarse illumination map.
//!
//! Image formation follows `I = t·J + (1 − t)·A`. Assuming every patch of
//! the well-exposed scene `J` holds a sample at full intensity, the
//! illumination over a patch is `max_{c,q} (I^c_q − A^c) / (1 − A^c)`,
//! written here in its equivalent form `1 − min_{c,q} (1 − I^c_q) / (1 − A^c)`.

use alloc::vec::Vec;

use crate::image::RasterImage;
use crate::{Error, Result};

pub const DEFAULT_PATCH_RADIUS: usize = 7;
pub const DEFAULT_AMBIENT_FRACTION: f64 = 0.001;
pub const DEFAULT_AMBIENT_EPSILON: f64 = 1e-3;
pub const DEFAULT_T_MIN: f64 = 0.05;

/// Square patch of side `2·radius + 1`, clipped at the image border.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub radius: usize,
}

impl PatchSpec {
    pub fn new(radius: usize) -> Self {
        Self { radius }
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            radius: DEFAULT_PATCH_RADIUS,
        }
    }
}

/// Per-channel ambient light. Components lie in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbientLight {
    value: [f64; 3],
}

impl AmbientLight {
    pub fn new(value: [f64; 3]) -> Result<Self> {
        for &v in &value {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    name: "ambient",
                    value: v,
                });
            }
        }
        Ok(Self { value })
    }

    pub fn value(&self) -> [f64; 3] {
        self.value
    }

    pub fn channel(&self, c: usize) -> f64 {
        self.value[c]
    }
}

/// Scalar illumination field over the image grid, row-major.
///
/// Maps handed to [`crate::enhance::recover`] must lie in `[t_min, 1]`; use
/// [`IlluminationMap::clamped`] to project raw estimates into that range.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl IlluminationMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if values.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("illumination map"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, alloc::vec![value; width * height])
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Projects every value into `[t_min, 1]`.
    pub fn clamped(&self, t_min: f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| v.clamp(t_min, 1.0)).collect(),
        }
    }

    /// Number of values a projection into `[t_min, 1]` would change, as
    /// `(below, above)`.
    pub fn clamp_counts(&self, t_min: f64) -> (usize, usize) {
        let below = self.values.iter().filter(|&&v| v < t_min).count();
        let above = self.values.iter().filter(|&&v| v > 1.0).count();
        (below, above)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn validate_t_min(t_min: f64) -> Result<()> {
    if !(t_min > 0.0 && t_min < 1.0) {
        return Err(Error::InvalidParameter {
            name: "t_min",
            value: t_min,
        });
    }
    Ok(())
}

/// Separable square-window reduction with windows clipped at the border.
/// `pick(a, b)` must be associative and commutative (max or min).
pub(crate) fn patch_reduce(
    values: &[f64],
    width: usize,
    height: usize,
    radius: usize,
    pick: fn(f64, f64) -> f64,
) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let mut horizontal = alloc::vec![0.0; values.len()];
    let row_pass = |r: usize, out: &mut [f64]| {
        let row = &values[r * width..(r + 1) * width];
        for (c, o) in out.iter_mut().enumerate() {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(width - 1);
            *o = row[lo + 1..=hi].iter().fold(row[lo], |acc, &v| pick(acc, v));
        }
    };
    for_each_row(&mut horizontal, width, row_pass);

    let mut out = alloc::vec![0.0; values.len()];
    let col_pass = |r: usize, out_row: &mut [f64]| {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(height - 1);
        out_row.copy_from_slice(&horizontal[lo * width..(lo + 1) * width]);
        for rr in lo + 1..=hi {
            let src = &horizontal[rr * width..(rr + 1) * width];
            for (o, &v) in out_row.iter_mut().zip(src) {
                *o = pick(*o, v);
            }
        }
    };
    for_each_row(&mut out, width, col_pass);
    out
}

#[cfg(feature = "parallel")]
fn for_each_row(buf: &mut [f64], width: usize, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    use rayon::prelude::*;
    buf.par_chunks_mut(width)
        .enumerate()
        .for_each(|(r, row)| f(r, row));
}

#[cfg(not(feature = "parallel"))]
fn for_each_row(buf: &mut [f64], width: usize, f: impl Fn(usize, &mut [f64])) {
    for (r, row) in buf.chunks_mut(width).enumerate() {
        f(r, row);
    }
}

/// Maximum over the patch and over the three channels, per pixel.
pub fn bright_channel(img: &RasterImage, patch: PatchSpec) -> Result<RasterImage> {
    img.require_channels(3)?;
    let values = patch_reduce(
        &img.channel_max(),
        img.width(),
        img.height(),
        patch.radius,
        f64::max,
    );
    RasterImage::new(img.width(), img.height(), 1, values)
}

/// Linear indices of the `⌈fraction·N⌉` pixels with the smallest channel
/// maximum, ties broken by row-major order. Returned in ascending index order.
pub fn darkest_pixels(img: &RasterImage, fraction: f64) -> Result<Vec<usize>> {
    img.require_channels(3)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "ambient fraction",
            value: fraction,
        });
    }
    let n = img.pixel_count();
    let k = (libm::ceil(fraction * n as f64) as usize).clamp(1, n);
    let key = img.channel_max();
    let mut order: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| key[*a].total_cmp(&key[*b]).then(a.cmp(b));
    if k < n {
        order.select_nth_unstable_by(k - 1, cmp);
    }
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Ambient light as the mean colour of the darkest pixels, each component
/// clamped to at most `1 − 1e-3`.
pub fn estimate_ambient(img: &RasterImage, fraction: f64) -> Result<AmbientLight> {
    estimate_ambient_with(img, fraction, DEFAULT_AMBIENT_EPSILON)
}

pub fn estimate_ambient_with(img: &RasterImage, fraction: f64, epsilon: f64) -> Result<AmbientLight> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter {
            name: "ambient epsilon",
            value: epsilon,
        });
    }
    let selected = darkest_pixels(img, fraction)?;
    let mut value = [0.0; 3];
    for (c, slot) in value.iter_mut().enumerate() {
        let plane = img.plane(c);
        let sum: f64 = selected.iter().map(|&i| plane[i]).sum();
        *slot = (sum / selected.len() as f64).min(1.0 - epsilon);
    }
    AmbientLight::new(value)
}

/// Unclamped illumination estimate `1 − min_{c, q∈Ω(p)} (1 − I^c_q) / (1 − A^c)`.
pub fn initial_illumination_raw(
    img: &RasterImage,
    ambient: &AmbientLight,
    patch: PatchSpec,
) -> Result<IlluminationMap> {
    img.require_channels(3)?;
    let n = img.pixel_count();
    let mut ratio = alloc::vec![f64::INFINITY; n];
    for c in 0..3 {
        let denom = 1.0 - ambient.channel(c);
        for (r, &v) in ratio.iter_mut().zip(img.plane(c)) {
            *r = r.min((1.0 - v) / denom);
        }
    }
    let reduced = patch_reduce(&ratio, img.width(), img.height(), patch.radius, f64::min);
    IlluminationMap::new(
        img.width(),
        img.height(),
        reduced.into_iter().map(|m| 1.0 - m).collect(),
    )
}

/// Coarse illumination map, clamped into `[t_min, 1]`.
pub fn initial_illumination(
    img: &RasterImage,
    ambient: &AmbientLight,
    patch: PatchSpec,
    t_min: f64,
) -> Result<IlluminationMap> {
    validate_t_min(t_min)?;
    Ok(initial_illumination_raw(img, ambient, patch)?.clamped(t_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn brute_bright(img: &RasterImage, radius: usize) -> Vec<f64> {
        let (w, h) = (img.width() as isize, img.height() as isize);
        let r = radius as isize;
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let mut m = f64::NEG_INFINITY;
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        for c in 0..3 {
                            m = m.max(img.get(yy as usize, xx as usize, c));
                        }
                    }
                }
                out.push(m);
            }
        }
        out
    }

    #[test]
    fn bright_channel_of_constant_is_constant() {
        let img = RasterImage::filled(6, 4, 3, 0.37).unwrap();
        for radius in [0, 1, 3, 10] {
            let b = bright_channel(&img, PatchSpec::new(radius)).unwrap();
            assert!(b.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn bright_channel_radius_zero_is_channel_max() {
        let img = RasterImage::from_planes(1, 1, &[&[0.2], &[0.5], &[0.3]]).unwrap();
        assert_eq!(bright_channel(&img, PatchSpec::new(0)).unwrap().data(), &[0.5]);
    }

    #[test]
    fn bright_channel_spreads_single_peak() {
        let img = RasterImage::from_fn(3, 3, 3, |r, c, _| if (r, c) == (1, 1) { 0.9 } else { 0.1 }).unwrap();
        let b = bright_channel(&img, PatchSpec::new(1)).unwrap();
        assert_eq!(b.data().to_vec(), brute_bright(&img, 1));
        assert!(b.data().iter().all(|&v| v == 0.9));
    }

    #[test]
    fn bright_channel_matches_brute_force_on_irregular_image() {
        let mut s = 12345u64;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let img = RasterImage::from_fn(9, 7, 3, |_, _, _| next()).unwrap();
        for radius in [0, 1, 2, 4, 9] {
            let b = bright_channel(&img, PatchSpec::new(radius)).unwrap();
            assert_eq!(b.data().to_vec(), brute_bright(&img, radius), "radius {radius}");
        }
    }

    #[test]
    fn ambient_of_constant_image() {
        let img = RasterImage::filled(5, 5, 3, 0.1).unwrap();
        let a = estimate_ambient(&img, 0.001).unwrap();
        assert_eq!(a.value(), [0.1, 0.1, 0.1]);
    }

    #[test]
    fn ambient_full_fraction_is_image_mean() {
        let img = RasterImage::from_fn(4, 2, 3, |r, c, ch| ((r * 4 + c) as f64 + ch as f64) / 20.0).unwrap();
        let a = estimate_ambient(&img, 1.0).unwrap();
        for c in 0..3 {
            let mean = img.plane(c).iter().sum::<f64>() / 8.0;
            assert!((a.channel(c) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn ambient_picks_single_darkest_pixel() {
        let img = RasterImage::from_fn(40, 25, 3, |r, c, _| if (r, c) == (13, 17) { 0.0 } else { 0.5 }).unwrap();
        assert_eq!(darkest_pixels(&img, 0.001).unwrap(), vec![13 * 40 + 17]);
        assert_eq!(estimate_ambient(&img, 0.001).unwrap().value(), [0.0; 3]);
    }

    #[test]
    fn ambient_ties_break_row_major() {
        let img = RasterImage::filled(10, 10, 3, 0.4).unwrap();
        assert_eq!(darkest_pixels(&img, 0.03).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn ambient_is_clamped_below_one() {
        let img = RasterImage::filled(3, 3, 3, 1.0).unwrap();
        let a = estimate_ambient(&img, 0.5).unwrap();
        assert_eq!(a.value(), [1.0 - DEFAULT_AMBIENT_EPSILON; 3]);
        assert!(estimate_ambient(&img, 0.0).is_err());
        assert!(estimate_ambient(&img, 1.5).is_err());
    }

    #[test]
    fn illumination_of_mid_gray_with_black_ambient() {
        let img = RasterImage::filled(6, 6, 3, 0.5).unwrap();
        let a = AmbientLight::new([0.0; 3]).unwrap();
        for radius in [0, 2, 7] {
            let t = initial_illumination(&img, &a, PatchSpec::new(radius), 0.05).unwrap();
            assert!(t.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn illumination_equal_to_ambient_hits_floor() {
        let a = AmbientLight::new([0.2, 0.3, 0.1]).unwrap();
        let img = RasterImage::from_fn(4, 4, 3, |_, _, c| a.channel(c)).unwrap();
        let raw = initial_illumination_raw(&img, &a, PatchSpec::new(1)).unwrap();
        assert!(raw.values().iter().all(|&v| v.abs() < 1e-15));
        let t = initial_illumination(&img, &a, PatchSpec::new(1), 0.05).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.05));
    }

    #[test]
    fn illumination_rejects_bad_floor() {
        let img = RasterImage::filled(2, 2, 3, 0.5).unwrap();
        let a = AmbientLight::new([0.0; 3]).unwrap();
        assert!(initial_illumination(&img, &a, PatchSpec::new(0), 0.0).is_err());
        assert!(initial_illumination(&img, &a, PatchSpec::new(0), 1.0).is_err());
    }

    #[test]
    fn illumination_inverts_forward_model() {
        // Every pixel of the scene has one channel at full intensity, so
        // the prior holds exactly at any radius.
        let a = AmbientLight::new([0.05, 0.08, 0.03]).unwrap();
        let (w, h) = (7, 6);
        let t_true: Vec<f64> = (0..w * h).map(|i| 0.2 + 0.6 * ((i * 7) % 11) as f64 / 10.0).collect();
        let scene = |r: usize, c: usize, ch: usize| {
            if ch == (r + c) % 3 {
                1.0
            } else {
                0.1 + 0.3 * ((r * c + ch) % 4) as f64 / 3.0
            }
        };
        let img = RasterImage::from_fn(w, h, 3, |r, c, ch| {
            let t = t_true[r * w + c];
            t * scene(r, c, ch) + (1.0 - t) * a.channel(ch)
        })
        .unwrap();
        let raw = initial_illumination_raw(&img, &a, PatchSpec::new(0)).unwrap();
        for (got, want) in raw.values().iter().zip(&t_true) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn brighter_input_gives_larger_illumination() {
        let a = AmbientLight::new([0.1; 3]).unwrap();
        let dim = RasterImage::from_fn(5, 5, 3, |r, c, ch| 0.2 + 0.02 * (r + c + ch) as f64).unwrap();
        let bright = RasterImage::from_fn(5, 5, 3, |r, c, ch| dim.get(r, c, ch) + 0.1).unwrap();
        let p = PatchSpec::new(1);
        let t_dim = initial_illumination_raw(&dim, &a, p).unwrap();
        let t_bright = initial_illumination_raw(&bright, &a, p).unwrap();
        for (d, b) in t_dim.values().iter().zip(t_bright.values()) {
            assert!(b > d);
        }
    }
}
