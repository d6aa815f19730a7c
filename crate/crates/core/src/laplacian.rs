//! Closed-form matting Laplacian over 3×3 windows and the unsupervised
//! illumination loss built on it.
//!
//! For every window `k` lying fully inside the image, with colour mean `μ_k`
//! and covariance `Σ_k`, the window contributes
//!
//! ```text
//! L(i, j) += δ_ij − (1 + (I_i − μ_k)ᵀ (Σ_k + ε/9 · Id)⁻¹ (I_j − μ_k)) / 9
//! ```
//!
//! for each pixel pair `i, j` of the window. The resulting matrix is
//! symmetric, positive semidefinite and annihilates constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::AttentionMap;
use crate::image::RasterImage;
use crate::prior::IlluminationMap;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_LAMBDA: f64 = 1e-2;

const WINDOW: usize = 9;
const STENCIL: usize = 25;

/// Symmetric sparse matrix in compressed-row form. Column indices within a
/// row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    dimension: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAffinity {
    /// Assembles from `(row, col, weight)` triplets; duplicates are summed.
    /// The caller supplies both halves of a symmetric matrix.
    pub fn from_triplets(dimension: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &sorted {
            let bad = i.max(j);
            if bad >= dimension {
                return Err(Error::DimensionMismatch {
                    what: "triplet index",
                    left: bad,
                    right: dimension,
                });
            }
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; dimension + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += w;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(w);
        }
        for i in 0..dimension {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            dimension,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and weights of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// All stored `(i, j, weight)` entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dimension).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &w)| (i, j, w))
        })
    }

    /// Stored weight at `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map(|k| vals[k]).unwrap_or(0.0)
    }

    /// `y = L·x`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dimension);
        debug_assert_eq!(y.len(), self.dimension);
        let row = |i: usize| {
            let span = self.row_ptr[i]..self.row_ptr[i + 1];
            self.col_idx[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&j, &w)| w * x[j])
                .sum::<f64>()
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            y.par_iter_mut().enumerate().for_each(|(i, yi)| *yi = row(i));
        }
        #[cfg(not(feature = "parallel"))]
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = row(i);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dimension];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ L x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let lx = self.matvec(x);
        x.iter().zip(&lx).map(|(a, b)| a * b).sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dimension)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    /// Largest `|L(i,j) − L(j,i)|` over stored entries.
    pub fn symmetry_defect(&self) -> f64 {
        self.entries()
            .map(|(i, j, w)| libm::fabs(w - self.get(j, i)))
            .fold(0.0, f64::max)
    }

    /// Row-major dense copy; intended for small instances.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dimension;
        let mut dense = vec![0.0; n * n];
        for (i, j, w) in self.entries() {
            dense[i * n + j] = w;
        }
        dense
    }

    /// The matrix `P L Pᵀ` where `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                what: "permutation length",
                left: perm.len(),
                right: self.dimension,
            });
        }
        let triplets: Vec<_> = self
            .entries()
            .map(|(i, j, w)| (perm[i], perm[j], w))
            .collect();
        Self::from_triplets(self.dimension, &triplets)
    }
}

fn invert_symmetric3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv_det = 1.0 / det;
    let c11 = m[0][0] * m[2][2] - m[0][2] * m[2][0];
    let c12 = m[0][2] * m[1][0] - m[0][0] * m[1][2];
    let c22 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [c00 * inv_det, c01 * inv_det, c02 * inv_det],
        [c01 * inv_det, c11 * inv_det, c12 * inv_det],
        [c02 * inv_det, c12 * inv_det, c22 * inv_det],
    ]
}

/// Per-window contribution `G[a][b]` for the nine pixels of the window
/// centred at `(kr, kc)`, in row-major window order.
fn window_block(img: &RasterImage, kr: usize, kc: usize, epsilon: f64) -> [[f64; WINDOW]; WINDOW] {
    let mut colors = [[0.0; 3]; WINDOW];
    for (a, px) in colors.iter_mut().enumerate() {
        let (r, c) = (kr + a / 3 - 1, kc + a % 3 - 1);
        for (ch, v) in px.iter_mut().enumerate() {
            *v = img.get(r, c, ch);
        }
    }
    let mut mean = [0.0; 3];
    for px in &colors {
        for ch in 0..3 {
            mean[ch] += px[ch];
        }
    }
    for m in &mut mean {
        *m /= WINDOW as f64;
    }
    let mut centered = [[0.0; 3]; WINDOW];
    for (d, px) in centered.iter_mut().zip(&colors) {
        for ch in 0..3 {
            d[ch] = px[ch] - mean[ch];
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for d in &centered {
        for x in 0..3 {
            for y in 0..3 {
                cov[x][y] += d[x] * d[y];
            }
        }
    }
    for (x, row) in cov.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= WINDOW as f64;
        }
        row[x] += epsilon / WINDOW as f64;
    }
    let inv = invert_symmetric3(cov);
    let mut projected = [[0.0; 3]; WINDOW];
    for (p, d) in projected.iter_mut().zip(&centered) {
        for x in 0..3 {
            p[x] = inv[x][0] * d[0] + inv[x][1] * d[1] + inv[x][2] * d[2];
        }
    }
    let mut block = [[0.0; WINDOW]; WINDOW];
    for a in 0..WINDOW {
        for b in 0..WINDOW {
            let dot: f64 = (0..3).map(|x| centered[a][x] * projected[b][x]).sum();
            let delta = if a == b { 1.0 } else { 0.0 };
            block[a][b] = delta - (1.0 + dot) / WINDOW as f64;
        }
    }
    block
}

/// Matting Laplacian of an RGB image using all fully interior 3×3 windows.
pub fn build_matting_laplacian(img: &RasterImage, epsilon: f64) -> Result<SparseAffinity> {
    img.require_channels(3)?;
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
        });
    }
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let n = w * h;
    // Each pixel's neighbours within a 5×5 stencil; a slot is occupied once
    // the pair shares a window.
    let mut stencil = vec![[0.0f64; STENCIL]; n];
    let mut occupied = vec![0u32; n];
    for kr in 1..h - 1 {
        for kc in 1..w - 1 {
            let block = window_block(img, kr, kc, epsilon);
            for a in 0..WINDOW {
                let (ar, ac) = (kr + a / 3 - 1, kc + a % 3 - 1);
                let i = ar * w + ac;
                for b in 0..WINDOW {
                    let dr = b / 3 + 2 - a / 3;
                    let dc = b % 3 + 2 - a % 3;
                    let slot = dr * 5 + dc;
                    stencil[i][slot] += block[a][b];
                    occupied[i] |= 1 << slot;
                }
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::with_capacity(n * STENCIL);
    let mut values = Vec::with_capacity(n * STENCIL);
    for i in 0..n {
        let (r, c) = (i / w, i % w);
        // Slots run in row-major offset order, so columns come out sorted.
        for slot in 0..STENCIL {
            if occupied[i] & (1 << slot) != 0 {
                let rr = r + slot / 5 - 2;
                let cc = c + slot % 5 - 2;
                col_idx.push(rr * w + cc);
                values.push(stencil[i][slot]);
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SparseAffinity {
        dimension: n,
        row_ptr,
        col_idx,
        values,
    })
}

/// The Laplacian quadratic form `tᵀ L t`.
pub fn smoothness_energy(lap: &SparseAffinity, t: &IlluminationMap) -> Result<f64> {
    check_dim("illumination vs laplacian", t.len(), lap.dimension())?;
    Ok(lap.quadratic_form(t.values()))
}

/// Terms of the unsupervised illumination loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// `Σ_p a_p (t_p − t̃_p)²`
    pub data_term: f64,
    /// `tᵀ L t`
    pub smoothness_term: f64,
    /// `(data_term + lambda · smoothness_term) / N`
    pub total: f64,
    pub lambda: f64,
    pub pixels: usize,
}

pub(crate) fn check_dim(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::DimensionMismatch { what, left, right });
    }
    Ok(())
}

fn check_loss_inputs(
    t: &IlluminationMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    lambda: f64,
    attention: Option<&AttentionMap>,
) -> Result<()> {
    check_dim("illumination vs laplacian", t.len(), lap.dimension())?;
    check_dim("illumination vs target", t.len(), t_tilde.len())?;
    if let Some(att) = attention {
        check_dim("illumination vs attention", t.len(), att.len())?;
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    Ok(())
}

/// `(1/N) Σ_p { a_p (t_p − t̃_p)² } + (λ/N) tᵀ L t`, with `a_p = 1` when no
/// attention map is given.
pub fn bcp_loss(
    t: &IlluminationMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    lambda: f64,
    attention: Option<&AttentionMap>,
) -> Result<LossBreakdown> {
    check_loss_inputs(t, t_tilde, lap, lambda, attention)?;
    Ok(loss_from_slices(
        t.values(),
        t_tilde.values(),
        lap,
        lambda,
        attention.map(AttentionMap::values),
    ))
}

pub(crate) fn loss_from_slices(
    t: &[f64],
    t_tilde: &[f64],
    lap: &SparseAffinity,
    lambda: f64,
    weights: Option<&[f64]>,
) -> LossBreakdown {
    let data_term: f64 = match weights {
        Some(a) => t
            .iter()
            .zip(t_tilde)
            .zip(a)
            .map(|((t, s), a)| a * (t - s) * (t - s))
            .sum(),
        None => t.iter().zip(t_tilde).map(|(t, s)| (t - s) * (t - s)).sum(),
    };
    let smoothness_term = lap.quadratic_form(t);
    let pixels = t.len();
    LossBreakdown {
        data_term,
        smoothness_term,
        total: (data_term + lambda * smoothness_term) / pixels as f64,
        lambda,
        pixels,
    }
}

/// Gradient of [`bcp_loss`] with respect to `t`:
/// `(2/N) (a ⊙ (t − t̃) + λ L t)`.
pub fn bcp_loss_gradient(
    t: &IlluminationMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    lambda: f64,
    attention: Option<&AttentionMap>,
) -> Result<Vec<f64>> {
    check_loss_inputs(t, t_tilde, lap, lambda, attention)?;
    Ok(gradient_from_slices(
        t.values(),
        t_tilde.values(),
        lap,
        lambda,
        attention.map(AttentionMap::values),
    ))
}

pub(crate) fn gradient_from_slices(
    t: &[f64],
    t_tilde: &[f64],
    lap: &SparseAffinity,
    lambda: f64,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let scale = 2.0 / t.len() as f64;
    let mut grad = lap.matvec(t);
    for (p, g) in grad.iter_mut().enumerate() {
        let a = weights.map_or(1.0, |a| a[p]);
        *g = scale * (a * (t[p] - t_tilde[p]) + lambda * *g);
    }
    grad
}
