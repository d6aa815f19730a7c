//! Coupling point for a downstream detector loss.
//!
//! The total objective is `L = L_bcp + β · L_det`. A real detector plugs in
//! through [`DetectorLossProvider`]; [`StubDetector`] is a differentiable
//! stand-in that rewards local contrast inside a target mask.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{build_attention, DEFAULT_GAMMA};
use crate::image::RasterImage;
use crate::laplacian::LossBreakdown;
use crate::{Error, Result};

pub const DEFAULT_BETA: f64 = 0.1;
pub const MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorEvaluation {
    /// Finite and non-negative.
    pub loss: f64,
    /// `∂loss/∂enhanced`, laid out like the enhanced image's samples.
    pub gradient: Option<Vec<f64>>,
}

/// A detector seen as a differentiable loss on `(enhanced, thermal)`.
/// Implementations must be safe to call concurrently on distinct inputs.
pub trait DetectorLossProvider {
    fn evaluate(&self, enhanced: &RasterImage, thermal: &RasterImage) -> Result<DetectorEvaluation>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub bcp: LossBreakdown,
    pub detector: f64,
    pub beta: f64,
    pub total: f64,
}

/// `bcp.total + beta · detector_loss`.
pub fn total_loss(bcp: LossBreakdown, detector_loss: f64, beta: f64) -> Result<TotalLoss> {
    if !(beta >= 0.0) {
        return Err(Error::NegativeLoss {
            name: "beta",
            value: beta,
        });
    }
    if !(detector_loss >= 0.0) {
        return Err(Error::NegativeLoss {
            name: "detector_loss",
            value: detector_loss,
        });
    }
    Ok(TotalLoss {
        bcp,
        detector: detector_loss,
        beta,
        total: bcp.total + beta * detector_loss,
    })
}

/// Contrast-seeking stand-in for a trained detector.
///
/// Local contrast at `p` is twice the standard deviation of the enhanced V
/// channel over the border-clipped 3×3 window around `p` (twice, so the
/// maximum possible value is 1). The loss is the mean of `(1 − contrast)²`
/// over mask pixels. Without an explicit mask, thermal attention above
/// [`MASK_THRESHOLD`] is used.
#[derive(Debug, Clone, PartialEq)]
pub struct StubDetector {
    pub gamma: f64,
    pub target_mask: Option<RasterImage>,
}

impl Default for StubDetector {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            target_mask: None,
        }
    }
}

impl DetectorLossProvider for StubDetector {
    fn evaluate(&self, enhanced: &RasterImage, thermal: &RasterImage) -> Result<DetectorEvaluation> {
        enhanced.require_same_size(thermal)?;
        let mask: Vec<bool> = match &self.target_mask {
            Some(m) => {
                enhanced.require_same_size(m)?;
                m.channel_max().iter().map(|&v| v > MASK_THRESHOLD).collect()
            }
            None => build_attention(thermal, self.gamma)?
                .values()
                .iter()
                .map(|&v| v > MASK_THRESHOLD)
                .collect(),
        };
        let (loss, gradient) = contrast_loss(enhanced, &mask);
        Ok(DetectorEvaluation {
            loss,
            gradient: Some(gradient),
        })
    }
}

/// Loss and input gradient of [`StubDetector`] with the default exponent.
pub fn stub_detector(
    enhanced: &RasterImage,
    thermal: &RasterImage,
    target_mask: Option<&RasterImage>,
) -> Result<(f64, Vec<f64>)> {
    let det = StubDetector {
        gamma: DEFAULT_GAMMA,
        target_mask: target_mask.cloned(),
    };
    let eval = det.evaluate(enhanced, thermal)?;
    Ok((eval.loss, eval.gradient.unwrap_or_default()))
}

fn window(center: usize, len: usize) -> core::ops::RangeInclusive<usize> {
    center.saturating_sub(1)..=(center + 1).min(len - 1)
}

fn contrast_loss(enhanced: &RasterImage, mask: &[bool]) -> (f64, Vec<f64>) {
    let (w, h) = (enhanced.width(), enhanced.height());
    let mut gradient = vec![0.0; enhanced.data().len()];
    let positives = mask.iter().filter(|&&m| m).count();
    if positives == 0 {
        return (0.0, gradient);
    }
    let v = enhanced.channel_max();
    let mut grad_v = vec![0.0; w * h];
    let mut loss = 0.0;
    let scale = 1.0 / positives as f64;
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            let mut n = 0.0;
            let mut sum = 0.0;
            for rr in window(r, h) {
                for cc in window(c, w) {
                    sum += v[rr * w + cc];
                    n += 1.0;
                }
            }
            let mean = sum / n;
            let mut var = 0.0;
            for rr in window(r, h) {
                for cc in window(c, w) {
                    let d = v[rr * w + cc] - mean;
                    var += d * d;
                }
            }
            var /= n;
            let std = libm::sqrt(var);
            let contrast = 2.0 * std;
            loss += (1.0 - contrast) * (1.0 - contrast);
            if std > 0.0 {
                // d/dv_q (1 − 2s)² = −4 (1 − 2s) (v_q − μ) / (n s)
                let outer = -4.0 * scale * (1.0 - contrast) / (n * std);
                for rr in window(r, h) {
                    for cc in window(c, w) {
                        grad_v[rr * w + cc] += outer * (v[rr * w + cc] - mean);
                    }
                }
            }
        }
    }
    loss *= scale;
    // V is the channel max; route each pixel's gradient to its first maximal channel.
    let n = w * h;
    for p in 0..n {
        let mut best = 0;
        for ch in 1..enhanced.channels() {
            if enhanced.data()[ch * n + p] > enhanced.data()[best * n + p] {
                best = ch;
            }
        }
        gradient[best * n + p] = grad_v[p];
    }
    (loss, gradient)
}
