//! Feature/label generation for the truncated-resolvent generator estimate.
//!
//! For each sample `x` the label row is
//! `lambda^2 int_0^tau e^{-lambda s} Z_N(phi(s, x)) ds - lambda Z_N(x)`.
//! The weight `lambda^2 e^{-lambda s}` concentrates in a boundary layer of
//! width `O(1/lambda)`, so the augmented system is integrated on
//! `[0, min(tau, layer_width/lambda)]` only. Inside the layer the integrator
//! tracks the displacement `x(s) - x` and the deviation
//! `z_i(x(s)) - z_i(x)`; the constant part of the integral is added in closed
//! form. The label is then an `O(1)` quantity obtained without subtracting two
//! `O(lambda)` numbers.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::{Dictionary, DictionaryManifest};
use crate::dynamics::{Flow, FlowSettings, SemigroupGrowthEstimate};
use crate::error::{KoopError, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Per-axis linspace including both box edges.
    Grid,
    /// Per-axis cell midpoints (strictly inside the box).
    CellCentered,
    /// `per_axis^n` uniform random points from a seeded ChaCha8 stream.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlan {
    /// `[lo, hi]` per axis.
    pub domain: Vec<[f64; 2]>,
    pub per_axis: usize,
    pub mode: SampleMode,
    #[serde(default)]
    pub seed: u64,
}

impl SamplePlan {
    pub fn grid(domain: Vec<[f64; 2]>, per_axis: usize) -> Self {
        Self {
            domain,
            per_axis,
            mode: SampleMode::Grid,
            seed: 0,
        }
    }

    /// Uniform grid on the symmetric box `[-1, 1]^n`.
    pub fn unit_box(n: usize, per_axis: usize) -> Self {
        Self::grid(vec![[-1.0, 1.0]; n], per_axis)
    }

    pub fn dimension(&self) -> usize {
        self.domain.len()
    }

    pub fn sample_count(&self) -> usize {
        self.per_axis.pow(self.domain.len() as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.is_empty() {
            return Err(KoopError::InvalidInput("sample plan has an empty domain".into()));
        }
        if self.per_axis == 0 {
            return Err(KoopError::InvalidInput("sample plan has zero points per axis".into()));
        }
        for [lo, hi] in &self.domain {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KoopError::InvalidInput(format!("invalid domain interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn axis_points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let p = self.per_axis;
        match self.mode {
            SampleMode::Grid if p == 1 => vec![0.5 * (lo + hi)],
            SampleMode::Grid => (0..p)
                .map(|k| {
                    if k == p - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * k as f64 / (p - 1) as f64
                    }
                })
                .collect(),
            SampleMode::CellCentered => (0..p)
                .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / p as f64)
                .collect(),
            SampleMode::Random => unreachable!(),
        }
    }

    /// Sample points, first axis varying fastest.
    pub fn samples(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let n = self.dimension();
        let m = self.sample_count();
        if self.mode == SampleMode::Random {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            return Ok((0..m)
                .map(|_| {
                    self.domain
                        .iter()
                        .map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
                        .collect()
                })
                .collect());
        }
        let axes: Vec<Vec<f64>> = self.domain.iter().map(|[lo, hi]| self.axis_points(*lo, *hi)).collect();
        Ok((0..m)
            .map(|mut idx| {
                (0..n)
                    .map(|d| {
                        let k = idx % self.per_axis;
                        idx /= self.per_axis;
                        axes[d][k]
                    })
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    AugmentedOde,
    SnapshotQuadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub lambda: f64,
    pub tau: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature: Quadrature,
    /// Number of snapshots in snapshot-quadrature mode.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Integration window is `min(tau, layer_width / lambda)`.
    #[serde(default = "default_layer_width")]
    pub layer_width: f64,
}

fn default_quadrature() -> Quadrature {
    Quadrature::AugmentedOde
}

fn default_snapshots() -> usize {
    2000
}

fn default_layer_width() -> f64 {
    40.0
}

impl GenConfig {
    pub fn new(lambda: f64, tau: f64) -> Self {
        Self {
            lambda,
            tau,
            quadrature: Quadrature::AugmentedOde,
            snapshots: default_snapshots(),
            layer_width: default_layer_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(KoopError::InvalidInput(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(KoopError::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.layer_width > 0.0 && self.layer_width.is_finite()) {
            return Err(KoopError::InvalidInput("layer_width must be positive".into()));
        }
        if self.quadrature == Quadrature::SnapshotQuadrature && self.snapshots < 3 {
            return Err(KoopError::InvalidInput("snapshot quadrature needs at least 3 snapshots".into()));
        }
        Ok(())
    }

    /// Right end of the integration window.
    pub fn horizon(&self) -> f64 {
        self.tau.min(self.layer_width / self.lambda)
    }

    /// `e^{-lambda tau} < 1e-30`: the truncation term is below any double-precision effect.
    pub fn fully_truncated(&self) -> bool {
        self.lambda * self.tau > 30.0 * std::f64::consts::LN_10
    }

    /// Informational notes; the `lambda > omega` check needs a growth estimate.
    pub fn diagnostics(&self, growth: Option<&SemigroupGrowthEstimate>) -> Vec<String> {
        let mut notes = Vec::new();
        if self.fully_truncated() {
            notes.push(format!(
                "fully truncated: exp(-lambda*tau) = exp(-{:.3e}) < 1e-30",
                self.lambda * self.tau
            ));
        }
        if let Some(g) = growth {
            if self.lambda <= g.omega_hat {
                notes.push(format!(
                    "warning: lambda = {} does not exceed the estimated growth rate {}",
                    self.lambda, g.omega_hat
                ));
            }
        }
        notes
    }
}

/// Result of integrating the augmented system from one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventIntegral {
    pub state_at_tau: Vec<f64>,
    /// Right end `T` of the integrated window.
    pub horizon: f64,
    /// `lambda^2 int_0^T e^{-lambda s} (z_i(phi(s,x)) - z_i(x)) ds`.
    pub deviation: Vec<f64>,
    /// `Z_N(x)`.
    pub features: Vec<f64>,
    /// Bound on the neglected `[T, tau]` part of each integral.
    pub tail_bound: f64,
    lambda: f64,
    tau: f64,
}

impl ResolventIntegral {
    /// `lambda^2 int_0^tau e^{-lambda s} z_i(phi(s, x)) ds`, the constant part
    /// in closed form and the deviation truncated at `T`.
    pub fn integral(&self) -> Vec<f64> {
        let decay = -(-self.lambda * self.tau).exp_m1();
        self.features
            .iter()
            .zip(&self.deviation)
            .map(|(z, d)| self.lambda * z * decay + d)
            .collect()
    }

    /// `lambda^2 T_tau z_i(x) - lambda z_i(x)`, assembled without cancellation.
    pub fn label(&self) -> Vec<f64> {
        let w = self.lambda * (-self.lambda * self.tau).exp();
        self.features
            .iter()
            .zip(&self.deviation)
            .map(|(z, d)| d - w * z)
            .collect()
    }
}

/// Integrates `x' = f(x)` jointly with the exponentially weighted dictionary
/// integrals, then continues the state alone to `tau`.
pub fn truncated_resolvent_integral(
    flow: &Flow,
    dict: &Dictionary,
    x: &[f64],
    cfg: &GenConfig,
) -> Result<ResolventIntegral> {
    cfg.validate()?;
    flow.check_state(x)?;
    dict.check_state(x)?;
    let lambda = cfg.lambda;
    let horizon = cfg.horizon();
    let features = dict.evaluate(x);

    let (state_at_horizon, deviation) = match cfg.quadrature {
        Quadrature::AugmentedOde => augmented_layer(flow, dict, x, &features, lambda, horizon)?,
        Quadrature::SnapshotQuadrature => {
            snapshot_layer(flow, dict, x, &features, lambda, horizon, cfg.snapshots)?
        }
    };

    let state_at_tau = if horizon < cfg.tau {
        flow.flow_to(&state_at_horizon, cfg.tau - horizon)?
    } else {
        state_at_horizon.clone()
    };

    let tail_bound = if horizon < cfg.tau {
        let z_end = dict.evaluate(&state_at_horizon);
        let sup = features
            .iter()
            .chain(&z_end)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        lambda * ((-lambda * horizon).exp() - (-lambda * cfg.tau).exp()) * sup
    } else {
        0.0
    };

    Ok(ResolventIntegral {
        state_at_tau,
        horizon,
        deviation,
        features,
        tail_bound,
        lambda,
        tau: cfg.tau,
    })
}

fn augmented_layer(
    flow: &Flow,
    dict: &Dictionary,
    x: &[f64],
    z0: &[f64],
    lambda: f64,
    horizon: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let n_obs = dict.len();
    let field = flow.field();
    let lambda2 = lambda * lambda;
    // y = [x(s) - x, J_0 .. J_{N-1}]
    let mut y = vec![0.0; n + n_obs];
    let mut xs = vec![0.0; n];
    let mut zs = vec![0.0; n_obs];
    let mut solver = flow.solver();
    solver.first_step = Some(1e-2 / lambda);
    solver.integrate(
        |s, y, dy| {
            for k in 0..n {
                xs[k] = x[k] + y[k];
            }
            field.eval_into(&xs, &mut dy[..n]);
            dict.evaluate_into(&xs, &mut zs);
            let w = lambda2 * (-lambda * s).exp();
            for i in 0..n_obs {
                dy[n + i] = w * (zs[i] - z0[i]);
            }
        },
        0.0,
        horizon,
        &mut y,
        |t, y| {
            let shifted: Vec<f64> = x.iter().zip(&y[..n]).map(|(a, b)| a + b).collect();
            flow.guard(t, &shifted)
        },
    )?;
    let state: Vec<f64> = x.iter().zip(&y[..n]).map(|(a, b)| a + b).collect();
    Ok((state, y[n..].to_vec()))
}

/// `(1 - e^{-q}(1 + q))`, accurate for small `q`.
fn first_moment_factor(q: f64) -> f64 {
    if q < 0.1 {
        // sum_{k>=2} (-1)^k (k-1) q^k / k!
        let mut term = q * q / 2.0;
        let mut sum = 0.0;
        for k in 2..20 {
            sum += (k as f64 - 1.0) * term;
            term *= -q / (k as f64 + 1.0);
        }
        sum
    } else {
        1.0 - (-q).exp() * (1.0 + q)
    }
}

/// Piecewise-linear interpolation of the deviation between log-spaced
/// snapshots, integrated exactly against the exponential weight.
#[allow(clippy::too_many_arguments)]
fn snapshot_layer(
    flow: &Flow,
    dict: &Dictionary,
    x: &[f64],
    z0: &[f64],
    lambda: f64,
    horizon: f64,
    snapshots: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let s_min = horizon * 1e-6;
    let ratio = (horizon / s_min).ln();
    let mut times = Vec::with_capacity(snapshots);
    times.push(0.0);
    for k in 0..snapshots - 1 {
        let frac = k as f64 / (snapshots - 2) as f64;
        times.push(if k == snapshots - 2 { horizon } else { s_min * (ratio * frac).exp() });
    }
    let states = flow.flow_through(x, &times)?;
    let devs: Vec<Vec<f64>> = states
        .iter()
        .map(|s| dict.evaluate(s).iter().zip(z0).map(|(a, b)| a - b).collect())
        .collect();
    let mut acc = vec![0.0; dict.len()];
    for k in 0..times.len() - 1 {
        let (a, b) = (times[k], times[k + 1]);
        let h = b - a;
        if h <= 0.0 {
            continue;
        }
        let q = lambda * h;
        let e0 = -(-q).exp_m1() / lambda;
        let e1 = first_moment_factor(q) / (lambda * lambda);
        let scale = lambda * lambda * (-lambda * a).exp();
        let wa = scale * (e0 - e1 / h);
        let wb = scale * e1 / h;
        for i in 0..acc.len() {
            acc[i] += wa * devs[k][i] + wb * devs[k + 1][i];
        }
    }
    Ok((states.last().cloned().unwrap_or_else(|| x.to_vec()), acc))
}

/// Label row `L~_lambda Z_N(x)`.
pub fn label_row(flow: &Flow, dict: &Dictionary, x: &[f64], cfg: &GenConfig) -> Result<Vec<f64>> {
    Ok(truncated_resolvent_integral(flow, dict, x, cfg)?.label())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureMode {
    /// Any failed sample fails the whole generation.
    #[default]
    Strict,
    /// Failed samples are dropped and recorded.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub index: usize,
    pub point: Vec<f64>,
    pub reason: String,
}

/// Where a training set came from; echoed into its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub field: String,
    pub flow: FlowSettings,
    pub plan: SamplePlan,
}

/// Stacked features `X` (M x N) and labels `Y` (M x N).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: DMatrix<f64>,
    pub labels: DMatrix<f64>,
    pub samples: Vec<Vec<f64>>,
    pub dropped: Vec<DroppedSample>,
    pub config: GenConfig,
    pub basis_id: String,
    pub provenance: Provenance,
}

/// Runs the sample loop. Rows keep sample order; output does not depend on
/// the size of the rayon pool.
pub fn generate(
    flow: &Flow,
    dict: &Dictionary,
    plan: &SamplePlan,
    cfg: &GenConfig,
    mode: FailureMode,
) -> Result<TrainingSet> {
    cfg.validate()?;
    if plan.dimension() != dict.dimension() || plan.dimension() != flow.field().dimension() {
        return Err(KoopError::InvalidInput(format!(
            "dimension mismatch: plan {}, dictionary {}, field {}",
            plan.dimension(),
            dict.dimension(),
            flow.field().dimension()
        )));
    }
    let points = plan.samples()?;
    let rows: Vec<Result<ResolventIntegral>> = points
        .par_iter()
        .map(|x| truncated_resolvent_integral(flow, dict, x, cfg))
        .collect();

    let mut kept = Vec::with_capacity(rows.len());
    let mut dropped = Vec::new();
    let mut first_failure: Option<(usize, KoopError)> = None;
    for (index, (point, row)) in points.iter().zip(rows).enumerate() {
        match row {
            Ok(r) => kept.push((point.clone(), r)),
            Err(e) => {
                if first_failure.is_none() {
                    first_failure = Some((index, e.clone()));
                }
                dropped.push(DroppedSample {
                    index,
                    point: point.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if let Some((first_index, first_error)) = first_failure {
        if mode == FailureMode::Strict || kept.is_empty() {
            return Err(KoopError::SampleFailures {
                failed: dropped.len(),
                total: points.len(),
                first_index,
                first_error: Box::new(first_error),
            });
        }
    }

    let m = kept.len();
    let n_obs = dict.len();
    let mut features = DMatrix::zeros(m, n_obs);
    let mut labels = DMatrix::zeros(m, n_obs);
    for (r, (_, ri)) in kept.iter().enumerate() {
        let y = ri.label();
        for c in 0..n_obs {
            features[(r, c)] = ri.features[c];
            labels[(r, c)] = y[c];
        }
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(KoopError::InvalidInput("generated labels contain non-finite values".into()));
    }
    Ok(TrainingSet {
        features,
        labels,
        samples: kept.into_iter().map(|(p, _)| p).collect(),
        dropped,
        config: *cfg,
        basis_id: dict.basis_id().to_string(),
        provenance: Provenance {
            field: flow.field().spec_string(),
            flow: flow.settings,
            plan: plan.clone(),
        },
    })
}

pub const DATASET_FORMAT: &str = "koopgen-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHashes {
    #[serde(rename = "X.csv")]
    pub x: String,
    #[serde(rename = "Y.csv")]
    pub y: String,
    #[serde(rename = "samples.csv")]
    pub samples: String,
}

/// `manifest.json` of a persisted training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub provenance: Provenance,
    pub gen: GenConfig,
    pub dictionary: DictionaryManifest,
    pub rows: usize,
    pub columns: usize,
    pub dropped: Vec<DroppedSample>,
    pub hashes: FileHashes,
    /// Free-form echo of the experiment configuration.
    #[serde(default)]
    pub experiment: serde_json::Value,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    /// Writes `X.csv`, `Y.csv`, `samples.csv` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path, dict: &Dictionary, experiment: serde_json::Value) -> Result<DatasetManifest> {
        if dict.basis_id() != self.basis_id {
            return Err(KoopError::BasisMismatch {
                expected: self.basis_id.clone(),
                found: dict.basis_id().to_string(),
            });
        }
        fs::create_dir_all(dir)?;
        io::write_matrix_csv(&dir.join("X.csv"), &self.features)?;
        io::write_matrix_csv(&dir.join("Y.csv"), &self.labels)?;
        io::write_rows_csv(&dir.join("samples.csv"), None, &self.samples)?;
        let manifest = DatasetManifest {
            format: DATASET_FORMAT.into(),
            provenance: self.provenance.clone(),
            gen: self.config,
            dictionary: dict.manifest(),
            rows: self.len(),
            columns: dict.len(),
            dropped: self.dropped.clone(),
            hashes: FileHashes {
                x: io::sha256_file(&dir.join("X.csv"))?,
                y: io::sha256_file(&dir.join("Y.csv"))?,
                samples: io::sha256_file(&dir.join("samples.csv"))?,
            },
            experiment,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    /// Loads a dataset directory, verifying content hashes and shapes.
    pub fn load(dir: &Path) -> Result<(Self, Dictionary, DatasetManifest)> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| KoopError::Integrity(format!("malformed manifest: {e}")))?;
        if manifest.format != DATASET_FORMAT {
            return Err(KoopError::Integrity(format!("unknown dataset format {:?}", manifest.format)));
        }
        for (name, expected) in [
            ("X.csv", &manifest.hashes.x),
            ("Y.csv", &manifest.hashes.y),
            ("samples.csv", &manifest.hashes.samples),
        ] {
            let found = io::sha256_file(&dir.join(name))?;
            if &found != expected {
                return Err(KoopError::Integrity(format!("{name} hash {found} does not match manifest")));
            }
        }
        let dict = Dictionary::from_manifest(&manifest.dictionary)?;
        let features = io::read_matrix_csv(&dir.join("X.csv"))?;
        let labels = io::read_matrix_csv(&dir.join("Y.csv"))?;
        let samples = io::read_rows_csv(&dir.join("samples.csv"), false)?;
        let shape = (manifest.rows, manifest.columns);
        if features.shape() != shape || labels.shape() != shape || samples.len() != manifest.rows {
            return Err(KoopError::Integrity("dataset shapes do not match manifest".into()));
        }
        let ts = TrainingSet {
            features,
            labels,
            samples,
            dropped: manifest.dropped.clone(),
            config: manifest.gen,
            basis_id: dict.basis_id().to_string(),
            provenance: manifest.provenance.clone(),
        };
        Ok((ts, dict, manifest))
    }
}
