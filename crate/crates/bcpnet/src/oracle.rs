//! Straightforward reference implementations and generators used by the
//! self-test and the test suites. Nothing here shares code with the
//! optimized paths in `bcpnet_core`.

use bcpnet_core::{AmbientLight, IlluminationMap, RasterImage};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
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

pub fn random_ambient(rng: &mut ChaCha8Rng) -> AmbientLight {
    AmbientLight::new([0; 3].map(|_| rng.random_range(0.0..0.9))).unwrap()
}

/// Scene where every pixel has one channel at exactly 1 and the others
/// random in `[0, 1)`.
pub fn unit_channel_scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RasterImage {
    let n = w * h;
    let bright: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut data = vec![0.0; 3 * n];
    for c in 0..3 {
        for p in 0..n {
            data[c * n + p] = if bright[p] == c { 1.0 } else { rng.random_range(0.0..1.0) };
        }
    }
    RasterImage::new(w, h, 3, data).unwrap()
}

/// `I = t·J + (1 − t)·A` evaluated pixel by pixel.
pub fn forward_model(j: &RasterImage, t: &IlluminationMap, a: &AmbientLight) -> RasterImage {
    RasterImage::from_fn(j.width(), j.height(), 3, |r, c, ch| {
        let tp = t.get(r, c);
        tp * j.get(r, c, ch) + (1.0 - tp) * a.channel(ch)
    })
    .unwrap()
}

/// Channel max over the clipped square window, by exhaustive search.
pub fn bright_channel(img: &RasterImage, radius: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let mut m = f64::NEG_INFINITY;
            for qr in r.saturating_sub(radius)..=(r + radius).min(h - 1) {
                for qc in c.saturating_sub(radius)..=(c + radius).min(w - 1) {
                    for ch in 0..img.channels() {
                        m = m.max(img.get(qr, qc, ch));
                    }
                }
            }
            out.push(m);
        }
    }
    out
}

/// Ambient light by fully sorting `(channel max, row-major index)` and
/// averaging the first `⌈fraction·N⌉` entries.
pub fn ambient_by_sort(img: &RasterImage, fraction: f64, epsilon: f64) -> [f64; 3] {
    let n = img.pixel_count();
    let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut keyed: Vec<(f64, usize)> = (0..n)
        .map(|p| {
            let (r, c) = (p / img.width(), p % img.width());
            let v = (0..3).map(|ch| img.get(r, c, ch)).fold(f64::NEG_INFINITY, f64::max);
            (v, p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..k].iter().map(|&(_, p)| p).collect();
    chosen.sort_unstable();
    [0, 1, 2].map(|ch| {
        let sum: f64 = chosen
            .iter()
            .map(|&p| img.get(p / img.width(), p % img.width(), ch))
            .sum();
        (sum / k as f64).min(1.0 - epsilon)
    })
}

/// Dense matting Laplacian assembled window by window from the closed
/// form, with a generic 3×3 inverse.
pub fn dense_matting_laplacian(img: &RasterImage, eps: f64) -> DMatrix<f64> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    let mut lap = DMatrix::<f64>::zeros(n, n);
    let color = |r: usize, c: usize| Vector3::new(img.get(r, c, 0), img.get(r, c, 1), img.get(r, c, 2));
    for kr in 1..h.saturating_sub(1) {
        for kc in 1..w.saturating_sub(1) {
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
                    let di = color(ri, ci) - mean;
                    let dj = color(rj, cj) - mean;
                    let delta = if (ri, ci) == (rj, cj) { 1.0 } else { 0.0 };
                    lap[(ri * w + ci, rj * w + cj)] += delta - (1.0 + (di.transpose() * inv * dj)[(0, 0)]) / 9.0;
                }
            }
        }
    }
    lap
}

/// Solves `(diag(weights) + λL) t = weights ⊙ t̃` by dense LU.
pub fn dense_refine(t_tilde: &[f64], lap: &DMatrix<f64>, weights: &[f64], lambda: f64) -> Vec<f64> {
    let n = t_tilde.len();
    let system = DMatrix::from_diagonal(&DVector::from_column_slice(weights)) + lap * lambda;
    let rhs = DVector::from_iterator(n, weights.iter().zip(t_tilde).map(|(a, t)| a * t));
    system.lu().solve(&rhs).expect("singular refinement system").as_slice().to_vec()
}

/// `(Σ a (t − t̃)² + λ tᵀLt) / N` with a dense Laplacian.
pub fn dense_loss(t: &[f64], t_tilde: &[f64], lap: &DMatrix<f64>, lambda: f64, weights: &[f64]) -> f64 {
    let n = t.len() as f64;
    let data: f64 = t
        .iter()
        .zip(t_tilde)
        .zip(weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    let tv = DVector::from_column_slice(t);
    let smooth = (tv.transpose() * lap * &tv)[(0, 0)];
    (data + lambda * smooth) / n
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] = x[i] + step;
    let fp = f(&xp);
    xp[i] = x[i] - step;
    let fm = f(&xp);
    (fp - fm) / (2.0 * step)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for gradient comparisons: five orders of magnitude
/// below the largest component.
pub fn gradient_floor(grad: &[f64]) -> f64 {
    1e-5 * grad.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-12)
}

/// Largest relative error between `analytic` and central differences of
/// `f` at `x`, over the coordinates in `coords`.
pub fn gradient_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    step: f64,
) -> f64 {
    let floor = gradient_floor(analytic);
    coords
        .into_iter()
        .map(|i| rel_err(analytic[i], central_difference(&mut f, x, i, step), floor))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// A 16×16 pair whose coarse illumination is the constant `t`: one unit
/// channel per pixel, one ambient-coloured pixel, uniform thermal.
pub fn constant_target_pair(t: f64, seed: u64) -> (RasterImage, RasterImage, AmbientLight) {
    let mut rng = rng(seed);
    let a = AmbientLight::new([0.02, 0.03, 0.01]).unwrap();
    let mut j = unit_channel_scene(&mut rng, 16, 16);
    let mut data = j.data().to_vec();
    // one pixel equal to A fixes the ambient estimate
    for c in 0..3 {
        data[c * 256] = a.channel(c);
    }
    j = RasterImage::new(16, 16, 3, data).unwrap();
    let tmap = IlluminationMap::constant(16, 16, t).unwrap();
    let visible = forward_model(&j, &tmap, &a);
    (visible, RasterImage::filled(16, 16, 1, 1.0).unwrap(), a)
}

/// Dark synthetic visible/thermal pair: a unit-channel scene under a smooth
/// illumination field in `[0.15, 0.5]`, and a thermal frame with a few warm
/// blobs.
pub fn low_light_pair(w: usize, h: usize, seed: u64) -> (RasterImage, RasterImage) {
    let mut rng = rng(seed);
    let scene = unit_channel_scene(&mut rng, w, h);
    let a = AmbientLight::new([0.02, 0.03, 0.04]).unwrap();
    let (fw, fh) = (w as f64, h as f64);
    let t = IlluminationMap::new(
        w,
        h,
        (0..w * h)
            .map(|p| {
                let (y, x) = ((p / w) as f64 / fh, (p % w) as f64 / fw);
                0.325 + 0.175 * (3.0 * x).sin() * (2.0 * y + 0.5).cos()
            })
            .collect(),
    )
    .unwrap();
    let visible = forward_model(&scene, &t, &a);
    let blobs: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.0..fw), rng.random_range(0.0..fh), rng.random_range(0.05..0.2) * fw))
        .collect();
    let thermal = RasterImage::from_fn(w, h, 1, |r, c, _| {
        let heat: f64 = blobs
            .iter()
            .map(|&(bx, by, s)| {
                let d2 = (c as f64 - bx).powi(2) + (r as f64 - by).powi(2);
                (-d2 / (2.0 * s * s)).exp()
            })
            .sum();
        (0.2 + heat).min(1.0)
    })
    .unwrap();
    (visible, thermal)
}
