//! Run configuration: JSON layout, loading and whole-file validation.
//!
//! Validation parses every referenced file, so a configuration that validates reaches the
//! solver when run. Relative paths (keyframe files, stored frames, the output directory) are
//! resolved against the directory that holds the configuration file.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use wspline_core::io::load_density;
use wspline_core::optimizer::OptimizerConfig;
use wspline_core::spline::{problem_violations, BoundaryCondition, SplineTermKind};

/// What `run` computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Entropic spline of grid densities.
    Grid,
    /// Closed-form E-spline of diagonal Gaussians.
    Gaussian,
    /// Spline of equal-size point clouds.
    Pointcloud,
    /// T-spline baseline of one-dimensional keyframes.
    Tspline,
    /// Energies of stored grid frames.
    Energy,
    /// Temporal extension of a knot tuple.
    Extend,
}

/// Grid used to rasterize inline Gaussian keyframes.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
}

/// One keyframe: a density or point file, an inline Gaussian, or inline points.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeSpec {
    pub t: f64,
    pub file: Option<PathBuf>,
    pub mean: Option<Vec<f64>>,
    /// Diagonal of the standard-deviation matrix.
    pub std: Option<Vec<f64>>,
    pub points: Option<Vec<Vec<f64>>>,
}

/// Keyframes and discretization.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    #[serde(rename = "K")]
    pub k: Option<usize>,
    #[serde(default)]
    pub delta: f64,
    /// Final entropic ε; overrides `optimizer.eps` when given.
    pub eps: Option<f64>,
    #[serde(default)]
    pub bc: BoundaryCondition,
    #[serde(default)]
    pub keyframes: Vec<KeyframeSpec>,
    pub grid: Option<GridSpec>,
    /// Stored frame files for `energy` mode.
    pub frames: Option<Vec<PathBuf>>,
    /// Knot vectors for `extend` mode.
    pub knots: Option<Vec<Vec<f64>>>,
    /// Sample count of the T-spline, or evaluation points per knot interval of the extension.
    pub samples: Option<usize>,
    /// Positivity floor of Gaussian eigenvalue splines.
    pub lambda_min: Option<f64>,
    /// Spline term used by `energy` mode.
    #[serde(default)]
    pub term: SplineTermKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Pgm,
}

/// Where and how artifacts are written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
    pub summary: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![Format::Csv],
            summary: true,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub problem: ProblemBlock,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputBlock,
}

/// A configuration problem, tied to the key it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl Violation {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// A parsed configuration with its base directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }

    /// The optimizer settings with `problem.eps` applied.
    pub fn optimizer(&self) -> OptimizerConfig {
        let mut o = self.config.optimizer.clone();
        if let Some(eps) = self.config.problem.eps {
            o.eps = eps;
        }
        o
    }
}

/// Reads and parses a configuration file. Parse errors name the offending key where serde can.
pub fn load(path: &Path) -> Result<Loaded, Violation> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Violation::new("config", format!("cannot read {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
        let message = e.to_string();
        let key = field_in(&message).unwrap_or_else(|| "config".to_string());
        Violation::new(key, message)
    })?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Loaded { config, base })
}

/// The first backquoted name in a serde message such as ``missing field `K` ``.
fn field_in(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

/// Reads one point per line; blank lines and lines starting with `#` are skipped.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        let point = record
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("row {}: {e}", line + 1))?;
        points.push(point);
    }
    Ok(points)
}

fn keyframe_key(i: usize, field: &str) -> String {
    format!("problem.keyframes[{i}].{field}")
}

/// Every violation of a parsed configuration, without running anything.
pub fn violations(loaded: &Loaded) -> Vec<Violation> {
    let c = &loaded.config;
    let p = &c.problem;
    let mut out = Vec::new();
    let needs_k = !matches!(c.mode, Mode::Extend | Mode::Energy);
    if needs_k && p.k.is_none() {
        out.push(Violation::new("problem.K", format!("required in {:?} mode", c.mode).to_lowercase()));
    }
    if !(p.delta >= 0.0) {
        out.push(Violation::new("problem.delta", "must be nonnegative"));
    }
    if let Some(eps) = p.eps {
        if !(eps > 0.0) {
            out.push(Violation::new("problem.eps", "must be positive"));
        }
    }
    if let Err(e) = loaded.optimizer().validate() {
        let msg = e.to_string();
        let detail = msg.strip_prefix("invalid input: ").unwrap_or(&msg).to_string();
        out.push(Violation::new(format!("optimizer.{}", detail.split(':').next().unwrap_or("")), detail));
    }
    if c.output.formats.is_empty() {
        out.push(Violation::new("output.formats", "at least one format is required"));
    }

    match c.mode {
        Mode::Grid | Mode::Gaussian | Mode::Pointcloud | Mode::Tspline => {
            if let Some(k) = p.k {
                let times: Vec<f64> = p.keyframes.iter().map(|f| f.t).collect();
                let delta = if c.mode == Mode::Tspline { 0.0 } else { p.delta };
                let bc = if c.mode == Mode::Tspline {
                    BoundaryCondition::Natural
                } else {
                    p.bc
                };
                for v in problem_violations(k, &times, bc, delta) {
                    out.push(Violation::new("problem.keyframes", v));
                }
            }
            for (i, f) in p.keyframes.iter().enumerate() {
                out.extend(keyframe_violations(loaded, i, f));
            }
        }
        Mode::Energy => match &p.frames {
            None => out.push(Violation::new("problem.frames", "required in energy mode")),
            Some(frames) => {
                if frames.len() < 3 {
                    out.push(Violation::new("problem.frames", "at least three frames are required"));
                }
                for (i, f) in frames.iter().enumerate() {
                    let path = loaded.resolve(f);
                    if !path.is_file() {
                        out.push(Violation::new(
                            format!("problem.frames[{i}]"),
                            format!("file {} not found", path.display()),
                        ));
                    } else if let Err(e) = load_density(&path) {
                        out.push(Violation::new(format!("problem.frames[{i}]"), e.to_string()));
                    }
                }
            }
        },
        Mode::Extend => match &p.knots {
            None => out.push(Violation::new("problem.knots", "required in extend mode")),
            Some(knots) => {
                if knots.len() < 3 {
                    out.push(Violation::new("problem.knots", "at least three knots are required"));
                }
                if knots.iter().any(|k| k.is_empty() || k.len() != knots[0].len()) {
                    out.push(Violation::new("problem.knots", "knots must be non-empty and of equal length"));
                }
            }
        },
    }
    if c.mode == Mode::Energy && p.eps.is_none() {
        out.push(Violation::new("problem.eps", "required in energy mode"));
    }
    if c.mode == Mode::Tspline {
        let gaussians = p.keyframes.iter().filter(|f| f.mean.is_some()).count();
        if gaussians != 0 && gaussians != p.keyframes.len() {
            out.push(Violation::new(
                "problem.keyframes",
                "tspline keyframes must be all Gaussians or all point sets",
            ));
        }
    }
    if c.mode != Mode::Grid && c.output.formats.contains(&Format::Pgm) {
        out.push(Violation::new("output.formats", "pgm frames are written only in grid mode"));
    }
    out
}

fn keyframe_violations(loaded: &Loaded, i: usize, f: &KeyframeSpec) -> Vec<Violation> {
    let mode = loaded.config.mode;
    let mut out = Vec::new();
    let gaussian = f.mean.is_some() || f.std.is_some();
    if gaussian && (f.mean.is_none() || f.std.is_none()) {
        out.push(Violation::new(keyframe_key(i, "std"), "inline Gaussians need both mean and std"));
    }
    if let (Some(m), Some(s)) = (&f.mean, &f.std) {
        if m.is_empty() || m.len() != s.len() {
            out.push(Violation::new(keyframe_key(i, "std"), "mean and std need equal non-zero length"));
        }
        if s.iter().any(|v| !(*v > 0.0)) {
            out.push(Violation::new(keyframe_key(i, "std"), "standard deviations must be positive"));
        }
    }
    if let Some(file) = &f.file {
        let path = loaded.resolve(file);
        if !path.is_file() {
            out.push(Violation::new(
                keyframe_key(i, "file"),
                format!("file {} not found", path.display()),
            ));
        } else {
            let parsed = match mode {
                Mode::Grid => load_density(&path).map(|_| ()).map_err(|e| e.to_string()),
                _ => read_points(&path).map(|_| ()),
            };
            if let Err(e) = parsed {
                out.push(Violation::new(keyframe_key(i, "file"), e));
            }
        }
    }
    let sources = [f.file.is_some(), gaussian, f.points.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if sources != 1 {
        out.push(Violation::new(
            format!("problem.keyframes[{i}]"),
            "give exactly one of file, mean/std or points",
        ));
        return out;
    }
    match mode {
        Mode::Grid => {
            if f.points.is_some() {
                out.push(Violation::new(keyframe_key(i, "points"), "grid mode takes files or Gaussians"));
            }
            if gaussian {
                if loaded.config.problem.grid.is_none() {
                    out.push(Violation::new("problem.grid", "required to rasterize inline Gaussians"));
                }
                if f.mean.as_ref().is_some_and(|m| m.len() != 2) {
                    out.push(Violation::new(keyframe_key(i, "mean"), "grid Gaussians are two-dimensional"));
                }
            }
        }
        Mode::Gaussian => {
            if !gaussian {
                out.push(Violation::new(keyframe_key(i, "mean"), "gaussian mode takes inline Gaussians"));
            }
        }
        Mode::Pointcloud => {
            if gaussian {
                out.push(Violation::new(keyframe_key(i, "points"), "pointcloud mode takes points or point files"));
            }
        }
        Mode::Tspline => {
            if f.file.is_some() {
                out.push(Violation::new(keyframe_key(i, "file"), "tspline mode takes Gaussians or points"));
            }
            if f.mean.as_ref().is_some_and(|m| m.len() != 1)
                || f.points.as_ref().is_some_and(|p| p.iter().any(|x| x.len() != 1))
            {
                out.push(Violation::new(format!("problem.keyframes[{i}]"), "tspline keyframes are one-dimensional"));
            }
        }
        Mode::Energy | Mode::Extend => {}
    }
    out
}
