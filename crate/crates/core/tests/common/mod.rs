#![allow(dead_code)]

use bcpnet_core::{AttentionMap, IlluminationMap, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, channels: usize) -> RasterImage {
    RasterImage::from_fn(w, h, channels, |_, _, _| rng.random_range(0.0..=1.0)).unwrap()
}

pub fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> IlluminationMap {
    IlluminationMap::new(w, h, (0..w * h).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

pub fn random_attention(rng: &mut ChaCha8Rng, w: usize, h: usize) -> AttentionMap {
    AttentionMap::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect(), 1.0).unwrap()
}

/// Relative error with an absolute floor on the denominator, so that two
/// numerically-zero derivatives compare equal.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for gradient comparisons: components more than five
/// orders of magnitude below the largest one are compared on that scale,
/// since a central difference cannot resolve them.
pub fn gradient_floor(grad: &[f64]) -> f64 {
    1e-5 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12)
}

/// Central finite difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += step;
    let fp = f(&xp);
    xp[i] = x[i] - step;
    let fm = f(&xp);
    (fp - fm) / (2.0 * step)
}

/// Dense matting Laplacian evaluated straight from the per-window formula,
/// with a textbook 3×3 inverse through nalgebra.
pub fn dense_matting_laplacian(img: &RasterImage, eps: f64) -> nalgebra::DMatrix<f64> {
    use nalgebra::{Matrix3, Vector3};
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut lap = nalgebra::DMatrix::<f64>::zeros(n, n);
    let color = |r: usize, c: usize| Vector3::new(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2));
    for kr in 1..h - 1 {
        for kc in 1..w - 1 {
            let pixels: Vec<(usize, usize)> = (0..9).map(|a| (kr + a / 3 - 1, kc + a % 3 - 1)).collect();
            let mean = pixels.iter().map(|&(r, c)| color(r, c)).sum::<Vector3<f64>>() / 9.0;
            let mut cov = Matrix3::<f64>::zeros();
            for &(r, c) in &pixels {
                let d = color(r, c) - mean;
                cov += d * d.transpose();
            }
            cov /= 9.0;
            let inv = (cov + Matrix3::identity() * (eps / 9.0)).try_inverse().unwrap();
            for &(ri, ci) in &pixels {
                for &(rj, cj) in &pixels {
                    let i = ri * w + ci;
                    let j = rj * w + cj;
                    let di = color(ri, ci) - mean;
                    let dj = color(rj, cj) - mean;
                    let delta = if i == j { 1.0 } else { 0.0 };
                    lap[(i, j)] += delta - (1.0 + (di.transpose() * inv * dj)[(0, 0)]) / 9.0;
                }
            }
        }
    }
    lap
}
