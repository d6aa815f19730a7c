//! JSON run reports. Field order is fixed by declaration order.

use std::fs;
use std::path::Path;

use bcpnet_core::LossBreakdown;
use serde::Serialize;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub report_version: u32,
    pub command: String,
    /// `ok`, `not_converged`, `diverged` or `failed`.
    pub status: String,
    pub config: ConfigEcho,
    pub inputs: Inputs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ambient: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_counts: Option<ClampCounts>,
    pub outputs: Vec<OutputFile>,
    /// Wall-clock milliseconds per stage; only present with `--timings`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<Vec<StageTime>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl RunReport {
    pub fn new(command: &str, config: ConfigEcho, inputs: Inputs) -> Self {
        Self {
            report_version: REPORT_VERSION,
            command: command.into(),
            status: "ok".into(),
            config,
            inputs,
            ambient: None,
            loss: None,
            solver: None,
            detector: None,
            clamp_counts: None,
            outputs: Vec::new(),
            timings_ms: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_json())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub solver: String,
    pub lambda: f64,
    pub gamma: f64,
    pub patch_radius: usize,
    pub t_min: f64,
    pub epsilon: f64,
    pub ambient_fraction: f64,
    pub beta: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub attention_floor: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inputs {
    pub visible: String,
    pub thermal: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Loss {
    pub data_term: f64,
    pub smoothness_term: f64,
    pub total: f64,
    pub lambda: f64,
    pub pixels: usize,
}

impl From<LossBreakdown> for Loss {
    fn from(l: LossBreakdown) -> Self {
        Self {
            data_term: l.data_term,
            smoothness_term: l.smoothness_term,
            total: l.total,
            lambda: l.lambda,
            pixels: l.pixels,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossSummary {
    pub initial: Loss,
    #[serde(rename = "final")]
    pub final_: Loss,
    /// Objective at the solver's solution before projection into `[t_min, 1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unclamped: Option<Loss>,
    pub objective_non_increasing: bool,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSummary {
    Direct {
        iterations: usize,
        relative_residual: f64,
    },
    Network {
        steps: usize,
        learning_rate: f64,
        /// Total loss before each update.
        history: Vec<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        diverged_at_step: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DetectorSummary {
    pub name: &'static str,
    pub loss: f64,
    pub beta: f64,
    /// `loss.final.total + beta · loss`.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClampCounts {
    /// Illumination values projected into `[t_min, 1]`.
    pub illumination: usize,
    /// Enhanced samples clamped into `[0, 1]`.
    pub enhanced: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub role: String,
    pub path: String,
    /// Stored byte = round(clamp(value · scale + offset, 0, 255)).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}
