//! Benchmark vector fields, their flow maps, and a growth diagnostic.

pub mod integrator;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{KoopError, Result};
use integrator::Dopri5;

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
enum FieldKind {
    VanDerPol,
    Linear1d { rate: f64 },
    Custom(Arc<FieldFn>),
}

/// Right-hand side `f` of an autonomous system `x' = f(x)`.
#[derive(Clone)]
pub struct VectorField {
    name: String,
    dim: usize,
    kind: FieldKind,
    reversed: bool,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("reversed", &self.reversed)
            .finish()
    }
}

/// Van der Pol oscillator with unit damping: `[x2, -x1 + (1 - x1^2) x2]`.
pub fn vanderpol() -> VectorField {
    VectorField {
        name: "vanderpol".into(),
        dim: 2,
        kind: FieldKind::VanDerPol,
        reversed: false,
    }
}

/// Scalar linear field `x' = a x`.
pub fn linear_1d(rate: f64) -> VectorField {
    VectorField {
        name: format!("linear:a={rate:?}"),
        dim: 1,
        kind: FieldKind::Linear1d { rate },
        reversed: false,
    }
}

/// Time reversal: negates the field and toggles the reversed flag.
pub fn reverse(field: &VectorField) -> VectorField {
    VectorField {
        reversed: !field.reversed,
        ..field.clone()
    }
}

impl VectorField {
    /// Wraps an arbitrary closed-form field. `eval` must be deterministic.
    pub fn custom<F>(name: impl Into<String>, dim: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            kind: FieldKind::Custom(Arc::new(eval)),
            reversed: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// Canonical spec string, parseable by [`FromStr`].
    pub fn spec_string(&self) -> String {
        let (base, arg) = match self.name.split_once(':') {
            Some((b, a)) => (b, Some(a)),
            None => (self.name.as_str(), None),
        };
        let base = if self.reversed {
            format!("{base}-reversed")
        } else {
            base.to_string()
        };
        match arg {
            Some(a) => format!("{base}:{a}"),
            None => base,
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.kind {
            FieldKind::VanDerPol => {
                out[0] = x[1];
                out[1] = -x[0] + (1.0 - x[0] * x[0]) * x[1];
            }
            FieldKind::Linear1d { rate } => out[0] = rate * x[0],
            FieldKind::Custom(f) => f(x, out),
        }
        if self.reversed {
            for v in out.iter_mut() {
                *v = -*v;
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }
}

impl FromStr for VectorField {
    type Err = KoopError;

    /// Accepts `vanderpol`, `vanderpol-reversed`, `linear:a=<float>` and
    /// `linear-reversed:a=<float>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let (base, reversed) = match head.strip_suffix("-reversed") {
            Some(b) => (b, true),
            None => (head, false),
        };
        let field = match (base, args) {
            ("vanderpol", None) => vanderpol(),
            ("linear", Some(args)) => {
                let a = args
                    .strip_prefix("a=")
                    .ok_or_else(|| KoopError::InvalidInput(format!("expected a=<float> in {s:?}")))?;
                let rate: f64 = a
                    .parse()
                    .map_err(|_| KoopError::InvalidInput(format!("bad rate {a:?} in {s:?}")))?;
                if !rate.is_finite() {
                    return Err(KoopError::InvalidInput(format!("rate must be finite in {s:?}")));
                }
                linear_1d(rate)
            }
            _ => return Err(KoopError::InvalidInput(format!("unknown vector field {s:?}"))),
        };
        Ok(if reversed { reverse(&field) } else { field })
    }
}

/// Integrator settings of a [`Flow`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Largest admissible step; unbounded when absent.
    #[serde(default)]
    pub max_step: Option<f64>,
    /// Trajectories whose Euclidean norm exceeds this bound are reported as `BlowUp`.
    #[serde(default = "default_blowup")]
    pub blowup_bound: f64,
}

fn default_blowup() -> f64 {
    1e6
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: None,
            blowup_bound: default_blowup(),
        }
    }
}

impl FlowSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.rel_tol.is_finite()
            && self.abs_tol.is_finite()
            && self.blowup_bound > 0.0
            && self.max_step.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(KoopError::InvalidInput(format!("invalid flow settings {self:?}")))
        }
    }
}

/// Flow map `phi(t, x)` of a vector field.
#[derive(Debug, Clone)]
pub struct Flow {
    field: VectorField,
    pub settings: FlowSettings,
}

impl Flow {
    pub fn new(field: VectorField) -> Self {
        Self {
            field,
            settings: FlowSettings::default(),
        }
    }

    pub fn with_settings(field: VectorField, settings: FlowSettings) -> Self {
        Self { field, settings }
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub(crate) fn solver(&self) -> Dopri5 {
        let mut s = Dopri5::new(self.settings.rel_tol, self.settings.abs_tol);
        if let Some(h) = self.settings.max_step {
            s.max_step = h;
        }
        s
    }

    pub(crate) fn check_state(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.field.dim {
            return Err(KoopError::InvalidInput(format!(
                "state has length {}, field {} has dimension {}",
                x0.len(),
                self.field.name,
                self.field.dim
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(KoopError::InvalidInput("state has non-finite entries".into()));
        }
        Ok(())
    }

    /// Norm check applied after every accepted step.
    pub(crate) fn guard(&self, t: f64, x: &[f64]) -> Result<()> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > self.settings.blowup_bound {
            Err(KoopError::BlowUp { t, norm })
        } else {
            Ok(())
        }
    }

    /// `phi(t, x0)` for `t >= 0`.
    pub fn flow_to(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_state(x0)?;
        if !t.is_finite() || t < 0.0 {
            return Err(KoopError::InvalidInput(format!("flow time must be finite and >= 0, got {t}")));
        }
        let mut x = x0.to_vec();
        if t == 0.0 {
            return Ok(x);
        }
        self.solver().integrate(
            |_, y, dy| self.field.eval_into(y, dy),
            0.0,
            t,
            &mut x,
            |t, y| self.guard(t, y),
        )?;
        Ok(x)
    }

    /// States at each of the non-decreasing `times`, integrated in one sweep.
    pub fn flow_through(&self, x0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_state(x0)?;
        if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|t| *t < 0.0) {
            return Err(KoopError::InvalidInput("snapshot times must be non-negative and sorted".into()));
        }
        let solver = self.solver();
        let mut x = x0.to_vec();
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            solver.integrate(
                |_, y, dy| self.field.eval_into(y, dy),
                t,
                target,
                &mut x,
                |t, y| self.guard(t, y),
            )?;
            t = target;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Fitted envelope `sup |z(phi(t,x))| <= M e^{omega t} sup |z(x)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemigroupGrowthEstimate {
    pub m_hat: f64,
    pub omega_hat: f64,
    pub sample_count: usize,
}

const GROWTH_TIME_POINTS: usize = 21;

/// Log-linear least-squares fit of the sup-norm growth of the dictionary
/// along trajectories started at `samples`. Informational only.
pub fn estimate_growth(
    flow: &Flow,
    dict: &Dictionary,
    samples: &[Vec<f64>],
    horizon: f64,
) -> Result<SemigroupGrowthEstimate> {
    if samples.is_empty() {
        return Err(KoopError::InvalidInput("growth estimate needs at least one sample".into()));
    }
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(KoopError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let times: Vec<f64> = (0..GROWTH_TIME_POINTS)
        .map(|k| horizon * k as f64 / (GROWTH_TIME_POINTS - 1) as f64)
        .collect();
    let n_obs = dict.len();
    // sup over samples of |z_i(phi(t_k, x))|, per time and observable
    let mut sup = vec![vec![0.0f64; n_obs]; times.len()];
    for x in samples {
        let states = flow.flow_through(x, &times)?;
        for (k, state) in states.iter().enumerate() {
            for (i, v) in dict.evaluate(state).into_iter().enumerate() {
                sup[k][i] = sup[k][i].max(v.abs());
            }
        }
    }
    let ratios: Vec<f64> = sup
        .iter()
        .map(|row| {
            row.iter()
                .zip(&sup[0])
                .filter(|(_, s0)| **s0 > 0.0)
                .map(|(v, s0)| v / s0)
                .fold(0.0, f64::max)
        })
        .collect();
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&ratios)
        .filter(|(_, r)| **r > 0.0)
        .map(|(t, r)| (*t, r.ln()))
        .collect();
    let omega_hat = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        sxy / sxx
    };
    let m_hat = times
        .iter()
        .zip(&ratios)
        .map(|(t, r)| r * (-omega_hat * t).exp())
        .fold(1.0, f64::max);
    Ok(SemigroupGrowthEstimate {
        m_hat,
        omega_hat,
        sample_count: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;

    #[test]
    fn vanderpol_values() {
        let f = vanderpol();
        assert_eq!(f.eval(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(f.eval(&[1.0, 1.0]), vec![1.0, -1.0]);
        assert_eq!(f.eval(&[0.5, 0.0]), vec![0.0, -0.5]);
    }

    #[test]
    fn linear_values() {
        assert_eq!(linear_1d(1.0).eval(&[2.0]), vec![2.0]);
        assert_eq!(linear_1d(0.0).eval(&[5.0]), vec![0.0]);
        assert_eq!(linear_1d(-3.0).eval(&[2.0]), vec![-6.0]);
    }

    #[test]
    fn reverse_negates_and_is_an_involution() {
        let r = reverse(&vanderpol());
        assert!(r.is_reversed());
        assert_eq!(r.eval(&[1.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(reverse(&linear_1d(1.0)).eval(&[2.0]), vec![-2.0]);
        let rr = reverse(&r);
        assert!(!rr.is_reversed());
        for x in [[0.3, -0.2], [1.5, 2.0], [-0.9, 0.1]] {
            assert_eq!(rr.eval(&x), vanderpol().eval(&x));
        }
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in ["vanderpol", "vanderpol-reversed", "linear:a=1.0", "linear-reversed:a=-2.5"] {
            let f: VectorField = s.parse().unwrap();
            assert_eq!(f.spec_string(), s);
        }
        assert_eq!(reverse(&vanderpol()).spec_string(), "vanderpol-reversed");
        assert!("lorenz".parse::<VectorField>().is_err());
        assert!("linear:b=1".parse::<VectorField>().is_err());
        assert!("linear:a=inf".parse::<VectorField>().is_err());
    }

    #[test]
    fn flow_at_zero_is_identity() {
        let flow = Flow::new(vanderpol());
        let x0 = [0.123456789, -0.987654321];
        assert_eq!(flow.flow_to(&x0, 0.0).unwrap(), x0.to_vec());
    }

    #[test]
    fn flow_rejects_bad_inputs() {
        let flow = Flow::new(vanderpol());
        assert!(flow.flow_to(&[0.1], 1.0).is_err());
        assert!(flow.flow_to(&[0.1, 0.2], -1.0).is_err());
        assert!(flow.flow_to(&[0.1, 0.2], f64::NAN).is_err());
    }

    #[test]
    fn unit_rate_example() {
        let flow = Flow::new(linear_1d(1.0));
        let x = flow.flow_to(&[0.5], 1.0).unwrap()[0];
        let exact = 0.5 * 1f64.exp();
        assert!((x - exact).abs() <= 1e-10 * exact + 1e-12, "{x} vs {exact}");
    }

    #[test]
    fn blow_up_is_reported() {
        let flow = Flow::new(linear_1d(30.0));
        let err = flow.flow_to(&[0.5], 1.0).unwrap_err();
        assert!(matches!(err, KoopError::BlowUp { .. }));
    }

    #[test]
    fn flow_through_matches_flow_to() {
        let flow = Flow::new(vanderpol());
        let x0 = [0.5, 0.5];
        let states = flow.flow_through(&x0, &[0.25, 0.5, 1.0]).unwrap();
        let direct = flow.flow_to(&x0, 1.0).unwrap();
        for k in 0..2 {
            assert!((states[2][k] - direct[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn growth_rate_of_unit_linear_field() {
        let dict = Dictionary::monomials_1d(&[1]).unwrap();
        let samples: Vec<Vec<f64>> = (0..5).map(|k| vec![-1.0 + 0.5 * k as f64]).collect();
        let g = estimate_growth(&Flow::new(linear_1d(1.0)), &dict, &samples, 1.0).unwrap();
        assert!((g.omega_hat - 1.0).abs() < 0.05, "{g:?}");
        assert!(g.m_hat >= 1.0);

        let g0 = estimate_growth(&Flow::new(linear_1d(0.0)), &dict, &samples, 1.0).unwrap();
        assert!(g0.omega_hat.abs() < 1e-9);

        let gr = estimate_growth(&Flow::new(reverse(&linear_1d(1.0))), &dict, &samples, 1.0).unwrap();
        assert!(gr.omega_hat <= 0.05);
        assert!((gr.m_hat - 1.0).abs() < 1e-6);
        assert_eq!(gr.sample_count, 5);
    }

    #[test]
    fn growth_rejects_empty_samples() {
        let dict = Dictionary::monomials_1d(&[1]).unwrap();
        assert!(estimate_growth(&Flow::new(linear_1d(1.0)), &dict, &[], 1.0).is_err());
        assert!(estimate_growth(&Flow::new(linear_1d(1.0)), &dict, &[vec![0.5]], 0.0).is_err());
    }
}
