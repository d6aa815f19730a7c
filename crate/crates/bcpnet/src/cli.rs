//! `bcpnet enhance | train | selftest`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bcpnet_core::detector::{total_loss, DetectorLossProvider, StubDetector, DEFAULT_BETA};
use bcpnet_core::enhance::RefinementTrace;
use bcpnet_core::net::{self, TrainConfig};
use bcpnet_core::prior::bright_channel;
use bcpnet_core::{
    enhance_pair_observed, Error, IlluminationMap, PatchSpec, PipelineConfig, RasterImage, SolverChoice,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::{load_image, save_image, IoError};
use crate::report::{
    ClampCounts, ConfigEcho, DetectorSummary, ErrorInfo, Inputs, LossSummary, OutputFile, RunReport,
    SolverSummary, StageTime,
};
use crate::{checkpoint, selftest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_SELFTEST: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "bcpnet", version, about = "Thermal-guided low-light enhancement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance an aligned visible/thermal pair.
    Enhance(EnhanceArgs),
    /// Train the illumination network on one pair and save a checkpoint.
    Train(TrainArgs),
    /// Run the embedded property suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Direct,
    Network,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = bcpnet_core::laplacian::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Attention exponent applied to the thermal V channel.
    #[arg(long, default_value_t = bcpnet_core::attention::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = bcpnet_core::prior::DEFAULT_PATCH_RADIUS)]
    pub patch_radius: usize,
    #[arg(long, default_value_t = bcpnet_core::prior::DEFAULT_T_MIN)]
    pub t_min: f64,
    /// Matting Laplacian regularizer.
    #[arg(long, default_value_t = bcpnet_core::laplacian::DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Fraction of darkest pixels averaged into the ambient light.
    #[arg(long, default_value_t = bcpnet_core::prior::DEFAULT_AMBIENT_FRACTION)]
    pub ambient_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub visible: PathBuf,
    #[arg(long)]
    pub thermal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverArg::Direct)]
    pub solver: SolverArg,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Weight of the detector term in the reported total loss.
    #[arg(long, default_value_t = DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = bcpnet_core::solver::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = bcpnet_core::solver::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
    /// Training steps for the network solver.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long)]
    pub dump_intermediates: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include per-stage wall-clock times in the report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub visible: PathBuf,
    #[arg(long)]
    pub thermal: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the trained network's enhancement of the visible frame.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            kind: "io",
            message: message.into(),
        }
    }

    fn info(&self) -> ErrorInfo {
        ErrorInfo {
            kind: self.kind.into(),
            message: self.message.clone(),
        }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::io(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotConverged { .. } => Self {
                code: EXIT_SOLVER,
                kind: "not_converged",
                message: e.to_string(),
            },
            Error::Diverged { .. } => Self {
                code: EXIT_SOLVER,
                kind: "diverged",
                message: e.to_string(),
            },
            Error::NonFinite(_) => Self {
                code: EXIT_SOLVER,
                kind: "non_finite",
                message: e.to_string(),
            },
            _ => Failure::usage(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Enhance(a) => cmd_enhance(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Selftest(a) => Ok(cmd_selftest(&a)),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Loads the pair, replicating a grayscale visible frame to three channels.
fn load_pair(visible: &Path, thermal: &Path) -> Result<(RasterImage, RasterImage), Failure> {
    let mut vis = load_image(visible)?;
    let th = load_image(thermal)?;
    if vis.channels() == 1 {
        let plane = vis.plane(0).to_vec();
        vis = RasterImage::from_planes(vis.width(), vis.height(), &[&plane, &plane, &plane])?;
    }
    if !vis.same_size(&th) {
        return Err(Failure::usage(format!(
            "size mismatch: visible {} is {}x{} but thermal {} is {}x{}",
            visible.display(),
            vis.width(),
            vis.height(),
            thermal.display(),
            th.width(),
            th.height()
        )));
    }
    Ok((vis, th))
}

fn map_image(t: &IlluminationMap) -> RasterImage {
    RasterImage::new(t.width(), t.height(), 1, t.values().to_vec()).expect("map dimensions are valid")
}

fn write_output(
    report: &mut RunReport,
    role: &str,
    img: &RasterImage,
    path: &Path,
) -> Result<(), Failure> {
    save_image(img, path)?;
    report.outputs.push(OutputFile {
        role: role.into(),
        path: path_string(path),
        scale: Some(255.0),
        offset: Some(0.0),
    });
    Ok(())
}

fn finish_report(report: &RunReport, path: Option<&Path>) -> Result<(), Failure> {
    if let Some(path) = path {
        report
            .write(path)
            .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn pipeline_config(a: &EnhanceArgs) -> PipelineConfig {
    PipelineConfig {
        patch: PatchSpec::new(a.model.patch_radius),
        ambient_fraction: a.model.ambient_fraction,
        lambda: a.model.lambda,
        gamma: a.model.gamma,
        t_min: a.model.t_min,
        epsilon: a.model.epsilon,
        solver_choice: match a.solver {
            SolverArg::Direct => SolverChoice::DirectQuadratic,
            SolverArg::Network => SolverChoice::LearnedNetwork,
        },
        tolerance: a.tolerance,
        max_iterations: a.max_iterations,
        learning_rate: a.lr,
        steps: a.steps,
        seed: a.model.seed,
        ..PipelineConfig::default()
    }
}

fn echo(cfg: &PipelineConfig, solver: &str, beta: f64) -> ConfigEcho {
    ConfigEcho {
        solver: solver.into(),
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        patch_radius: cfg.patch.radius,
        t_min: cfg.t_min,
        epsilon: cfg.epsilon,
        ambient_fraction: cfg.ambient_fraction,
        beta,
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_iterations,
        attention_floor: cfg.attention_floor,
        learning_rate: cfg.learning_rate,
        steps: cfg.steps,
        seed: cfg.seed,
    }
}

struct StageClock {
    last: Instant,
    times: Vec<StageTime>,
}

impl StageClock {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            times: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        let ms = (now - self.last).as_secs_f64() * 1e3;
        self.last = now;
        self.times.push(StageTime {
            stage: stage.into(),
            ms,
        });
    }
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<i32, Failure> {
    let cfg = pipeline_config(a);
    cfg.validate()?;
    if a.beta.is_nan() || a.beta < 0.0 {
        return Err(Failure::usage(format!("beta must be non-negative, got {}", a.beta)));
    }
    let solver_name = match a.solver {
        SolverArg::Direct => "direct",
        SolverArg::Network => "network",
    };
    let mut report = RunReport::new(
        "enhance",
        echo(&cfg, solver_name, a.beta),
        Inputs {
            visible: path_string(&a.visible),
            thermal: path_string(&a.thermal),
            width: None,
            height: None,
        },
    );
    let mut clock = StageClock::new();
    let (visible, thermal) = load_pair(&a.visible, &a.thermal)?;
    clock.lap("load");
    report.inputs.width = Some(visible.width());
    report.inputs.height = Some(visible.height());

    let out = match enhance_pair_observed(&visible, &thermal, &cfg, |s| clock.lap(s.name())) {
        Ok(out) => out,
        Err(e) => {
            let failure = Failure::from(e);
            if failure.code == EXIT_SOLVER {
                report.status = failure.kind.into();
                report.error = Some(failure.info());
                if a.timings {
                    report.timings_ms = Some(clock.times);
                }
                finish_report(&report, a.report.as_deref())?;
            }
            return Err(failure);
        }
    };

    write_output(&mut report, "enhanced", &out.enhanced, &a.out)?;
    if let Some(dir) = &a.dump_intermediates {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
        write_output(&mut report, "illumination", &map_image(&out.illumination), &dir.join("t.png"))?;
        write_output(&mut report, "initial_illumination", &map_image(&out.initial), &dir.join("t_initial.png"))?;
        let att = RasterImage::new(visible.width(), visible.height(), 1, out.attention.values().to_vec())?;
        write_output(&mut report, "attention", &att, &dir.join("attention.png"))?;
        write_output(
            &mut report,
            "bright_channel",
            &bright_channel(&visible, cfg.patch)?,
            &dir.join("bright_channel.png"),
        )?;
    }
    clock.lap("write");

    let detector = StubDetector {
        gamma: cfg.gamma,
        target_mask: None,
    }
    .evaluate(&out.enhanced, &thermal)?;
    let total = total_loss(out.loss, detector.loss, a.beta)?;
    clock.lap("detector");

    report.ambient = Some(out.ambient.value());
    let (unclamped, solver) = match &out.trace {
        RefinementTrace::Direct {
            iterations,
            relative_residual,
            unclamped_loss,
        } => (
            Some((*unclamped_loss).into()),
            SolverSummary::Direct {
                iterations: *iterations,
                relative_residual: *relative_residual,
            },
        ),
        RefinementTrace::Network { history, .. } => (
            None,
            SolverSummary::Network {
                steps: cfg.steps,
                learning_rate: cfg.learning_rate,
                history: history.iter().map(|l| l.total).collect(),
                diverged_at_step: None,
            },
        ),
    };
    report.loss = Some(LossSummary {
        initial: out.initial_loss.into(),
        final_: out.loss.into(),
        unclamped,
        objective_non_increasing: out.loss.total <= out.initial_loss.total,
    });
    report.solver = Some(solver);
    report.detector = Some(DetectorSummary {
        name: "stub_contrast",
        loss: detector.loss,
        beta: a.beta,
        total: total.total,
    });
    report.clamp_counts = Some(ClampCounts {
        illumination: out.illumination_clamped,
        enhanced: out.enhanced_clamped,
    });
    if a.timings {
        for t in &clock.times {
            eprintln!("{:>22}  {:>10.2} ms", t.stage, t.ms);
        }
        report.timings_ms = Some(clock.times);
    }
    finish_report(&report, a.report.as_deref())?;
    println!(
        "wrote {} (loss {:.6e} -> {:.6e})",
        a.out.display(),
        out.initial_loss.total,
        out.loss.total
    );
    Ok(EXIT_OK)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32, Failure> {
    let cfg = TrainConfig {
        learning_rate: a.lr,
        steps: a.steps,
        lambda: a.model.lambda,
        seed: a.model.seed,
        gamma: a.model.gamma,
        patch: PatchSpec::new(a.model.patch_radius),
        ambient_fraction: a.model.ambient_fraction,
        t_min: a.model.t_min,
        epsilon: a.model.epsilon,
        gate_output: true,
    };
    cfg.validate()?;
    let pipeline = PipelineConfig {
        patch: cfg.patch,
        ambient_fraction: cfg.ambient_fraction,
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        t_min: cfg.t_min,
        epsilon: cfg.epsilon,
        solver_choice: SolverChoice::LearnedNetwork,
        learning_rate: cfg.learning_rate,
        steps: cfg.steps,
        seed: cfg.seed,
        ..PipelineConfig::default()
    };
    pipeline.validate()?;
    let mut report = RunReport::new(
        "train",
        echo(&pipeline, "network", 0.0),
        Inputs {
            visible: path_string(&a.visible),
            thermal: path_string(&a.thermal),
            width: None,
            height: None,
        },
    );
    let mut clock = StageClock::new();
    let (visible, thermal) = load_pair(&a.visible, &a.thermal)?;
    clock.lap("load");
    report.inputs.width = Some(visible.width());
    report.inputs.height = Some(visible.height());

    let outcome = match net::train(&visible, &thermal, &cfg) {
        Ok(o) => o,
        Err(e) => {
            let failure = Failure::from(e.clone());
            if failure.code == EXIT_SOLVER {
                report.status = failure.kind.into();
                report.error = Some(failure.info());
                if let Error::Diverged { step } = e {
                    report.solver = Some(SolverSummary::Network {
                        steps: cfg.steps,
                        learning_rate: cfg.learning_rate,
                        history: Vec::new(),
                        diverged_at_step: Some(step),
                    });
                }
                finish_report(&report, a.report.as_deref())?;
            }
            return Err(failure);
        }
    };
    clock.lap("train");

    checkpoint::save(&outcome.params, &a.checkpoint).map_err(|e| Failure::io(e.to_string()))?;
    report.outputs.push(OutputFile {
        role: "checkpoint".into(),
        path: path_string(&a.checkpoint),
        scale: None,
        offset: None,
    });
    if let Some(out) = &a.out {
        let enhanced = bcpnet_core::recover(&visible, &outcome.illumination, &outcome.ambient, cfg.t_min)?;
        write_output(&mut report, "enhanced", &enhanced, out)?;
    }
    clock.lap("write");

    let first = outcome.history[0];
    let last = *outcome.history.last().expect("at least one step");
    report.ambient = Some(outcome.ambient.value());
    report.loss = Some(LossSummary {
        initial: first.into(),
        final_: last.into(),
        unclamped: None,
        objective_non_increasing: last.total <= first.total,
    });
    report.solver = Some(SolverSummary::Network {
        steps: cfg.steps,
        learning_rate: cfg.learning_rate,
        history: outcome.history.iter().map(|l| l.total).collect(),
        diverged_at_step: None,
    });
    if a.timings {
        report.timings_ms = Some(clock.times);
    }
    finish_report(&report, a.report.as_deref())?;
    println!(
        "trained {} steps (loss {:.6e} -> {:.6e}), checkpoint {}",
        cfg.steps,
        first.total,
        last.total,
        a.checkpoint.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_selftest(a: &SelftestArgs) -> i32 {
    let results = selftest::run(a.inject_fault);
    print!("{}", selftest::format_table(&results));
    if results.iter().all(|r| r.passed) {
        EXIT_OK
    } else {
        EXIT_SELFTEST
    }
}
