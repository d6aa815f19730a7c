//! Inverting the image formation model and the end-to-end pipeline.

use alloc::vec::Vec;

use crate::attention::{build_attention, AttentionMap, DEFAULT_GAMMA};
use crate::image::RasterImage;
use crate::laplacian::{
    bcp_loss, build_matting_laplacian, LossBreakdown, DEFAULT_EPSILON, DEFAULT_LAMBDA,
};
use crate::net::{self, NetworkParams, TrainConfig};
use crate::prior::{
    estimate_ambient, initial_illumination, AmbientLight, IlluminationMap, PatchSpec,
    DEFAULT_AMBIENT_FRACTION, DEFAULT_T_MIN,
};
use crate::solver::{
    refine_illumination_detailed, SolverConfig, DEFAULT_ATTENTION_FLOOR, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
};
use crate::{Error, Result};

fn require_map_size(img: &RasterImage, t: &IlluminationMap) -> Result<()> {
    if img.width() != t.width() || img.height() != t.height() {
        return Err(Error::SizeMismatch {
            left_width: img.width(),
            left_height: img.height(),
            right_width: t.width(),
            right_height: t.height(),
        });
    }
    Ok(())
}

/// `J = (I − A) / t + A`, clamped to `[0, 1]`. Also returns how many
/// samples the clamp changed.
pub fn recover_counting(
    visible: &RasterImage,
    t: &IlluminationMap,
    ambient: &AmbientLight,
    t_min: f64,
) -> Result<(RasterImage, usize)> {
    visible.require_channels(3)?;
    require_map_size(visible, t)?;
    if let Some((index, &value)) = t
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= t_min))
    {
        return Err(Error::IlluminationBelowFloor {
            index,
            value,
            floor: t_min,
        });
    }
    let mut clamped = 0;
    let mut data = Vec::with_capacity(visible.data().len());
    for c in 0..3 {
        let a = ambient.channel(c);
        for (&i, &tp) in visible.plane(c).iter().zip(t.values()) {
            let j = (i - a) / tp + a;
            let jc = j.clamp(0.0, 1.0);
            if jc != j {
                clamped += 1;
            }
            data.push(jc);
        }
    }
    Ok((RasterImage::new(visible.width(), visible.height(), 3, data)?, clamped))
}

/// `J = (I − A) / t + A`, clamped to `[0, 1]`. Every `t` must be at least
/// `t_min`.
pub fn recover(
    visible: &RasterImage,
    t: &IlluminationMap,
    ambient: &AmbientLight,
    t_min: f64,
) -> Result<RasterImage> {
    recover_counting(visible, t, ambient, t_min).map(|(img, _)| img)
}

/// Forward model `I = t·J + (1 − t)·A`.
pub fn resynthesize(j: &RasterImage, t: &IlluminationMap, ambient: &AmbientLight) -> Result<RasterImage> {
    j.require_channels(3)?;
    require_map_size(j, t)?;
    let mut data = Vec::with_capacity(j.data().len());
    for c in 0..3 {
        let a = ambient.channel(c);
        for (&jp, &tp) in j.plane(c).iter().zip(t.values()) {
            // convex combination; the clamp only absorbs rounding
            data.push((tp * jp + (1.0 - tp) * a).clamp(0.0, 1.0));
        }
    }
    RasterImage::new(j.width(), j.height(), 3, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    DirectQuadratic,
    LearnedNetwork,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub patch: PatchSpec,
    pub ambient_fraction: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub t_min: f64,
    /// Matting Laplacian regularizer.
    pub epsilon: f64,
    pub solver_choice: SolverChoice,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub attention_floor: f64,
    /// Weight the direct solver's data term by the attention map.
    pub attention_in_data_term: bool,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub gate_output: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch: PatchSpec::default(),
            ambient_fraction: DEFAULT_AMBIENT_FRACTION,
            lambda: DEFAULT_LAMBDA,
            gamma: DEFAULT_GAMMA,
            t_min: DEFAULT_T_MIN,
            epsilon: DEFAULT_EPSILON,
            solver_choice: SolverChoice::DirectQuadratic,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            attention_floor: DEFAULT_ATTENTION_FLOOR,
            attention_in_data_term: true,
            learning_rate: 0.05,
            steps: 500,
            seed: 0,
            gate_output: true,
        }
    }
}

impl PipelineConfig {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lambda: self.lambda,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            t_min: self.t_min,
            attention_floor: self.attention_floor,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            lambda: self.lambda,
            seed: self.seed,
            gamma: self.gamma,
            patch: self.patch,
            ambient_fraction: self.ambient_fraction,
            t_min: self.t_min,
            epsilon: self.epsilon,
            gate_output: self.gate_output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver_config().validate()?;
        self.train_config().validate()?;
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: self.gamma,
            });
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
            });
        }
        Ok(())
    }
}

/// How the refined illumination was obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RefinementTrace {
    Direct {
        iterations: usize,
        relative_residual: f64,
        /// Objective at the unprojected solution.
        unclamped_loss: LossBreakdown,
    },
    Network {
        history: Vec<LossBreakdown>,
        params: NetworkParams,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub enhanced: RasterImage,
    /// Final illumination map in `[t_min, 1]`.
    pub illumination: IlluminationMap,
    /// Coarse prior estimate in `[t_min, 1]`.
    pub initial: IlluminationMap,
    pub ambient: AmbientLight,
    pub attention: AttentionMap,
    /// Objective evaluated at the initial map.
    pub initial_loss: LossBreakdown,
    /// Objective evaluated at the final map.
    pub loss: LossBreakdown,
    pub trace: RefinementTrace,
    /// Illumination values moved by the `[t_min, 1]` projection.
    pub illumination_clamped: usize,
    /// Enhanced samples moved by the `[0, 1]` clamp.
    pub enhanced_clamped: usize,
}

/// Pipeline stages, reported to an observer as each one completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ambient,
    InitialIllumination,
    Laplacian,
    Attention,
    Refine,
    Recover,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ambient => "ambient",
            Stage::InitialIllumination => "initial_illumination",
            Stage::Laplacian => "laplacian",
            Stage::Attention => "attention",
            Stage::Refine => "refine",
            Stage::Recover => "recover",
        }
    }
}

/// Runs ambient estimation, the illumination prior, the matting Laplacian,
/// thermal attention, refinement and recovery on an aligned pair.
pub fn enhance_pair(
    visible: &RasterImage,
    thermal: &RasterImage,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    enhance_pair_observed(visible, thermal, cfg, |_| {})
}

/// [`enhance_pair`], calling `on_stage` after each stage finishes.
pub fn enhance_pair_observed(
    visible: &RasterImage,
    thermal: &RasterImage,
    cfg: &PipelineConfig,
    mut on_stage: impl FnMut(Stage),
) -> Result<PipelineOutput> {
    cfg.validate()?;
    visible.require_channels(3)?;
    visible.require_same_size(thermal)?;
    let ambient = estimate_ambient(visible, cfg.ambient_fraction)?;
    on_stage(Stage::Ambient);
    let initial = initial_illumination(visible, &ambient, cfg.patch, cfg.t_min)?;
    on_stage(Stage::InitialIllumination);
    let lap = build_matting_laplacian(visible, cfg.epsilon)?;
    on_stage(Stage::Laplacian);
    let attention = build_attention(thermal, cfg.gamma)?;
    on_stage(Stage::Attention);

    let (illumination, trace, weights, illumination_clamped) = match cfg.solver_choice {
        SolverChoice::DirectQuadratic => {
            let weights = cfg.attention_in_data_term.then_some(&attention);
            let refined = refine_illumination_detailed(&initial, &lap, weights, &cfg.solver_config())?;
            let unclamped_loss = bcp_loss(&refined.unclamped, &initial, &lap, cfg.lambda, weights)?;
            let (lo, hi) = refined.unclamped.clamp_counts(cfg.t_min);
            let trace = RefinementTrace::Direct {
                iterations: refined.iterations,
                relative_residual: refined.relative_residual,
                unclamped_loss,
            };
            (refined.illumination, trace, weights, lo + hi)
        }
        SolverChoice::LearnedNetwork => {
            let train_cfg = cfg.train_config();
            let mut params = NetworkParams::init(cfg.seed);
            params.gate_output = cfg.gate_output;
            let history = net::fit(&mut params, visible, &attention, &initial, &lap, &train_cfg)?;
            let raw = net::forward(&params, visible, &attention)?;
            let (lo, hi) = raw.clamp_counts(cfg.t_min);
            let trace = RefinementTrace::Network { history, params };
            (raw.clamped(cfg.t_min), trace, None, lo + hi)
        }
    };
    on_stage(Stage::Refine);
    let initial_loss = bcp_loss(&initial, &initial, &lap, cfg.lambda, weights)?;
    let loss = bcp_loss(&illumination, &initial, &lap, cfg.lambda, weights)?;
    let (enhanced, enhanced_clamped) = recover_counting(visible, &illumination, &ambient, cfg.t_min)?;
    on_stage(Stage::Recover);
    Ok(PipelineOutput {
        enhanced,
        illumination,
        initial,
        ambient,
        attention,
        initial_loss,
        loss,
        trace,
        illumination_clamped,
        enhanced_clamped,
    })
}
