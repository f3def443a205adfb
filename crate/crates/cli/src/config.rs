//! Experiment configuration: JSON file, defaults, and command-line overrides.

use std::path::{Path, PathBuf};

use clap::Args;
use koopgen_core::{Dictionary, FlowSettings, GenConfig, Observable, Quadrature, SampleMode, SamplePlan, VectorField};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RUN_FORMAT: &str = "koopgen-run/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovOptions {
    /// Right-hand side of the fit; `|x|^2` when absent.
    #[serde(default)]
    pub target: Option<Observable>,
    #[serde(default = "default_puncture")]
    pub puncture_radius: f64,
    /// Points per axis of the verification grid.
    #[serde(default = "default_eval_per_axis")]
    pub verify_per_axis: usize,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            target: None,
            puncture_radius: default_puncture(),
            verify_per_axis: default_eval_per_axis(),
        }
    }
}

fn default_puncture() -> f64 {
    0.05
}

fn default_eval_per_axis() -> usize {
    50
}

/// Everything needed to re-run an experiment. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `vanderpol`, `vanderpol-reversed`, `linear:a=<rate>`, `linear-reversed:a=<rate>`.
    pub field: String,
    /// `monomials2d:max_i=<i>,max_j=<j>` or `monomials1d:degrees=<d1>;<d2>;...`.
    pub dictionary: String,
    pub plan: SamplePlan,
    pub gen: GenConfig,
    pub flow: FlowSettings,
    /// Sampling time of the Koopman-log baseline; no baseline when absent.
    pub baseline_s: Option<f64>,
    pub output: PathBuf,
    /// Seed of random sample plans.
    pub seed: u64,
    /// Drop failing samples instead of aborting.
    pub lenient: bool,
    /// Points per axis of the identification error grid.
    pub eval_per_axis: usize,
    pub lyapunov: LyapunovOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            field: "vanderpol".into(),
            dictionary: "monomials2d:max_i=3,max_j=2".into(),
            plan: SamplePlan::unit_box(2, 100),
            gen: GenConfig::new(1e6, 1.0),
            flow: FlowSettings::default(),
            baseline_s: Some(0.5),
            output: PathBuf::from("koopgen-out"),
            seed: 0,
            lenient: false,
            eval_per_axis: default_eval_per_axis(),
            lyapunov: LyapunovOptions::default(),
        }
    }
}

/// Resolved objects of a validated configuration.
pub struct Setup {
    pub field: VectorField,
    pub dict: Dictionary,
    pub plan: SamplePlan,
}

impl ExperimentConfig {
    /// Reads a config file, or the `config` echo inside a run manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{} is not valid JSON: {e}", path.display())))?;
        let value = match value.get("format").and_then(|f| f.as_str()) {
            Some(RUN_FORMAT) => value
                .get("config")
                .cloned()
                .ok_or_else(|| CliError::config("run manifest has no config".into()))?,
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<Setup, CliError> {
        let field: VectorField = self.field.parse().map_err(CliError::from)?;
        let dict: Dictionary = self.dictionary.parse().map_err(CliError::from)?;
        if field.dimension() != dict.dimension() {
            return Err(CliError::config(format!(
                "field {} has dimension {} but dictionary {} has dimension {}",
                self.field,
                field.dimension(),
                self.dictionary,
                dict.dimension()
            )));
        }
        let mut plan = self.plan.clone();
        plan.seed = self.seed;
        plan.validate()?;
        if plan.dimension() != dict.dimension() {
            return Err(CliError::config(format!(
                "sample plan has dimension {} but the dictionary needs {}",
                plan.dimension(),
                dict.dimension()
            )));
        }
        self.gen.validate()?;
        self.flow.validate()?;
        if let Some(s) = self.baseline_s {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::config(format!("baseline_s must be positive, got {s}")));
            }
        }
        if self.eval_per_axis == 0 || self.lyapunov.verify_per_axis == 0 {
            return Err(CliError::config("evaluation grids need at least one point per axis".into()));
        }
        if self.lyapunov.puncture_radius.is_nan() || self.lyapunov.puncture_radius < 0.0 {
            return Err(CliError::config("puncture_radius must be non-negative".into()));
        }
        if let Some(t) = &self.lyapunov.target {
            if t.dimension() != dict.dimension() {
                return Err(CliError::config("lyapunov target dimension differs from the dictionary".into()));
            }
        }
        Ok(Setup { field, dict, plan })
    }

    pub fn lyapunov_target(&self, dim: usize) -> Observable {
        self.lyapunov.target.clone().unwrap_or_else(|| Observable::squared_norm(dim))
    }

    /// Plan with the same box as the training plan and `per_axis` grid points.
    pub fn eval_plan(&self, per_axis: usize) -> SamplePlan {
        SamplePlan::grid(self.plan.domain.clone(), per_axis)
    }
}

/// Flags shared by all subcommands; each overrides the corresponding file value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Experiment configuration (JSON), or a run manifest to re-run.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub dictionary: Option<String>,
    /// Sample points per axis.
    #[arg(long)]
    pub per_axis: Option<usize>,
    /// Sample layout: grid, cell-centered or random.
    #[arg(long, value_parser = parse_mode)]
    pub sample_mode: Option<SampleMode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Label quadrature: augmented-ode or snapshot-quadrature.
    #[arg(long, value_parser = parse_quadrature)]
    pub quadrature: Option<Quadrature>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop samples whose trajectories fail instead of aborting.
    #[arg(long)]
    pub lenient: bool,
}

fn parse_mode(s: &str) -> Result<SampleMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown sample mode {s:?}"))
}

fn parse_quadrature(s: &str) -> Result<Quadrature, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown quadrature {s:?}"))
}

/// Parses `s=<time>`.
pub fn parse_baseline(s: &str) -> Result<f64, String> {
    let v = s.strip_prefix("s=").ok_or_else(|| format!("expected s=<time>, got {s:?}"))?;
    v.parse::<f64>().map_err(|_| format!("bad sampling time {v:?}"))
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        if let Some(f) = &self.field {
            cfg.field = f.clone();
        }
        if let Some(d) = &self.dictionary {
            cfg.dictionary = d.clone();
        }
        if let Some(p) = self.per_axis {
            cfg.plan.per_axis = p;
        }
        if let Some(m) = self.sample_mode {
            cfg.plan.mode = m;
        }
        if let Some(l) = self.lambda {
            cfg.gen.lambda = l;
        }
        if let Some(t) = self.tau {
            cfg.gen.tau = t;
        }
        if let Some(q) = self.quadrature {
            cfg.gen.quadrature = q;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.lenient {
            cfg.lenient = true;
        }
    }
}
