//! Experiment configuration: JSON with a versioned schema, validated before any work.

use std::path::{Path, PathBuf};

use kclab::weights::WeightMode;
use kclab::{build_domain, build_grid, Grid, ObservationSet, PiecewiseDomain};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Beta,
    Carleman,
    Observability,
    Control,
    Trajectory,
    Inverse,
    Sweep,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Simulate => "simulate",
            Task::Beta => "beta",
            Task::Carleman => "carleman",
            Task::Observability => "observability",
            Task::Control => "control",
            Task::Trajectory => "trajectory",
            Task::Inverse => "inverse",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(rename = "L")]
    pub l: f64,
    pub gamma: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub omega: (f64, f64),
    pub omega0: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: f64,
    pub nt: usize,
    #[serde(rename = "T")]
    pub t: f64,
}

/// Geometric range start·factor^i, i < count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeomRange {
    pub start: f64,
    #[serde(default = "two")]
    pub factor: f64,
    pub count: usize,
}

impl GeomRange {
    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start * self.factor.powi(i as i32)).collect()
    }
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSpec {
    pub kappa: f64,
    /// Absolute λ; when absent λ = lambda_factor·κ²/‖β‖.
    pub lambda: Option<f64>,
    pub lambda_factor: f64,
    /// λ multiples scanned by the carleman task.
    pub lambda_factors: Vec<f64>,
    pub s: f64,
    pub s_range: Option<GeomRange>,
    pub mode: WeightMode,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            kappa: 1.5,
            lambda: None,
            lambda_factor: 1.0,
            lambda_factors: vec![1.0, 2.0, 4.0],
            s: 1e-3,
            s_range: None,
            mode: WeightMode::OneParameter,
        }
    }
}

/// Initial profiles on [0, L].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// a·sin²(πx/L), times (1 − x/L) when `ramp`.
    Sin2 { amplitude: f64, #[serde(default)] ramp: bool },
    /// a·sin(kπx/L).
    Sine { amplitude: f64, k: f64 },
    /// a·exp(−((x − c)/w)²).
    Gaussian { amplitude: f64, center: f64, width: f64 },
}

impl Profile {
    pub fn sample(&self, grid: &Grid, l: f64) -> Vec<f64> {
        use std::f64::consts::PI;
        grid.nodes
            .iter()
            .map(|&x| match *self {
                Profile::Sin2 { amplitude, ramp } => {
                    amplitude * (PI * x / l).sin().powi(2) * if ramp { 1.0 - x / l } else { 1.0 }
                }
                Profile::Sine { amplitude, k } => amplitude * (k * PI * x / l).sin(),
                Profile::Gaussian { amplitude, center, width } => amplitude * (-((x - center) / width).powi(2)).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub seed: u64,
    pub samples: usize,
    pub eps: f64,
    pub tol: f64,
    pub max_outer: usize,
    /// Relative size of the trajectory perturbation.
    pub delta: f64,
    pub reg: f64,
    pub m: f64,
    pub nonlinear: bool,
    pub y0: Option<Profile>,
    pub perturbation: Option<Profile>,
    /// Inverse task: base potential a·cos(2πx/L) and perturbations b·cos(2πkx/L), k = 1..=count.
    pub potential_amplitude: f64,
    pub perturbation_amplitude: f64,
    pub perturbations: usize,
    pub core: Option<(f64, f64)>,
    pub y0_support: Option<(f64, f64)>,
    pub y0_amplitude: f64,
    pub noise: f64,
    pub recover: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            seed: 0,
            samples: 20,
            eps: 1e-6,
            tol: 1e-3,
            max_outer: 10,
            delta: 0.01,
            reg: 1e-6,
            m: 1.0,
            nonlinear: false,
            y0: None,
            perturbation: None,
            potential_amplitude: 0.2,
            perturbation_amplitude: 0.01,
            perturbations: 20,
            core: None,
            y0_support: None,
            y0_amplitude: 0.5,
            noise: 0.0,
            recover: true,
        }
    }
}

/// One run per value; each value replaces the config entry at the JSON pointer `param`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub task: Task,
    pub param: String,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub task: Option<Task>,
    pub domain: DomainSpec,
    #[serde(default)]
    pub observation: Option<ObservationSpec>,
    pub grid: GridSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Validated geometry shared by every task.
#[derive(Debug, Clone)]
pub struct Setup {
    pub dom: PiecewiseDomain,
    pub obs: Option<ObservationSet>,
    pub grid: Grid,
}

pub fn load(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse(value: serde_json::Value) -> Result<ExperimentConfig, String> {
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version));
    }
    Ok(cfg)
}

fn positive(name: &str, v: f64) -> Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

/// Builds the geometry and checks the task's parameters; nothing is written before this passes.
pub fn validate(cfg: &ExperimentConfig, task: Task) -> Result<Setup, String> {
    if let Some(t) = cfg.task {
        if t != task {
            return Err(format!("config is for task {}, invoked as {}", t.name(), task.name()));
        }
    }
    let d = &cfg.domain;
    let dom = build_domain(d.l, &d.gamma, &d.p).map_err(|e| format!("domain: {e}"))?;
    let obs = match &cfg.observation {
        Some(o) => Some(ObservationSet::new(&dom, o.omega, o.omega0).map_err(|e| format!("observation: {e}"))?),
        None => None,
    };
    let grid = build_grid(&dom, cfg.grid.h, cfg.grid.nt, cfg.grid.t).map_err(|e| format!("grid: {e}"))?;
    let w = &cfg.weights;
    positive("weights.kappa", w.kappa)?;
    positive("weights.s", w.s)?;
    positive("weights.lambda_factor", w.lambda_factor)?;
    if let Some(l) = w.lambda {
        positive("weights.lambda", l)?;
    }
    let p = &cfg.params;
    let needs_obs = match task {
        Task::Beta => w.mode != WeightMode::BoundaryObs,
        Task::Carleman => w.mode != WeightMode::BoundaryObs,
        Task::Observability | Task::Control | Task::Trajectory | Task::Inverse => true,
        Task::Simulate | Task::Sweep => false,
    };
    if needs_obs && obs.is_none() {
        return Err(format!("task {} needs an observation block", task.name()));
    }
    match task {
        Task::Carleman | Task::Observability => {
            let r = w.s_range.as_ref().ok_or("weights.s_range is required for scans")?;
            positive("weights.s_range.start", r.start)?;
            if r.count == 0 || r.factor <= 1.0 {
                return Err("weights.s_range needs count ≥ 1 and factor > 1".into());
            }
            if p.samples == 0 {
                return Err("params.samples must be at least 1".into());
            }
            if task == Task::Carleman && w.mode != WeightMode::BoundaryObs && w.lambda_factors.is_empty() {
                return Err("weights.lambda_factors is empty".into());
            }
        }
        Task::Control => positive("params.eps", p.eps)?,
        Task::Trajectory => {
            positive("params.eps", p.eps)?;
            positive("params.tol", p.tol)?;
            positive("params.delta", p.delta)?;
            if p.max_outer == 0 {
                return Err("params.max_outer must be at least 1".into());
            }
        }
        Task::Inverse => {
            positive("params.m", p.m)?;
            if p.reg < 0.0 || p.noise < 0.0 {
                return Err("params.reg and params.noise must be non-negative".into());
            }
            if p.perturbations == 0 {
                return Err("params.perturbations must be at least 1".into());
            }
        }
        Task::Sweep => {
            let s = cfg.sweep.as_ref().ok_or("task sweep needs a sweep block")?;
            if s.task == Task::Sweep {
                return Err("sweeps cannot nest".into());
            }
        }
        Task::Simulate | Task::Beta => {}
    }
    Ok(Setup { dom, obs, grid })
}
