//! Dormand–Prince 5(4) with PI step-size control.
//!
//! The stepper works on flat `&mut [f64]` states so that the plain flow and
//! the augmented resolvent system share one implementation.

use crate::error::{KoopError, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Step statistics of one integration call.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Outcome {
    pub accepted: usize,
    pub rejected: usize,
    pub last_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dopri5 {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Initial step; chosen by the standard starting-step heuristic when `None`.
    pub first_step: Option<f64>,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            max_step: f64::INFINITY,
            first_step: None,
            max_steps: 1_000_000,
        }
    }

    fn error_scale(&self, a: f64, b: f64) -> f64 {
        self.abs_tol + self.rel_tol * a.abs().max(b.abs())
    }

    /// Integrates `y' = rhs(t, y)` from `t0` to `t1 >= t0`, overwriting `y`.
    ///
    /// `monitor` is called after every accepted step and may abort the
    /// integration by returning an error.
    pub fn integrate<F, M>(
        &self,
        mut rhs: F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        mut monitor: M,
    ) -> Result<Outcome>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        M: FnMut(f64, &[f64]) -> Result<()>,
    {
        if !t0.is_finite() || !t1.is_finite() || t1 < t0 {
            return Err(KoopError::InvalidInput(format!(
                "integration interval [{t0}, {t1}] is not a finite forward interval"
            )));
        }
        let mut outcome = Outcome::default();
        if t1 == t0 {
            return Ok(outcome);
        }

        let n = y.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut stage = vec![0.0; n];
        let mut y_new = vec![0.0; n];

        let span = t1 - t0;
        let h_max = self.max_step.min(span);
        let mut t = t0;
        rhs(t, y, &mut k1);
        let mut h = match self.first_step {
            Some(h0) => h0.min(h_max),
            None => self.initial_step(&mut rhs, t0, y, &k1, h_max, &mut stage, &mut k2),
        };
        let mut fac_old: f64 = 1e-4;
        let mut last_rejected = false;

        loop {
            if outcome.accepted + outcome.rejected >= self.max_steps {
                return Err(KoopError::TooManySteps {
                    max_steps: self.max_steps,
                    target: t1,
                });
            }
            if h < 16.0 * f64::EPSILON * t.abs().max(span) || h < f64::MIN_POSITIVE {
                return Err(KoopError::StepUnderflow { t, h });
            }
            let last = t + h >= t1 || (t1 - t - h) <= 16.0 * f64::EPSILON * t1.abs();
            if last {
                h = t1 - t;
            }

            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            rhs(t + C2 * h, &stage, &mut k2);
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + C3 * h, &stage, &mut k3);
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * h, &stage, &mut k4);
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * h, &stage, &mut k5);
            for i in 0..n {
                stage[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + h, &stage, &mut k6);
            for i in 0..n {
                y_new[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let t_new = if last { t1 } else { t + h };
            rhs(t_new, &y_new, &mut k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i]
                        + E7 * k7[i]);
                let r = e / self.error_scale(y[i], y_new[i]);
                err += r * r;
            }
            err = (err / n.max(1) as f64).sqrt();
            if !err.is_finite() {
                outcome.rejected += 1;
                h *= FAC_MIN;
                last_rejected = true;
                continue;
            }

            let fac11 = err.powf(0.2 - BETA * 0.75);
            if err <= 1.0 {
                let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
                let mut h_new = (h / fac).min(h_max);
                if last_rejected {
                    h_new = h_new.min(h);
                }
                fac_old = err.max(1e-4);
                y.copy_from_slice(&y_new);
                std::mem::swap(&mut k1, &mut k7);
                t = t_new;
                outcome.accepted += 1;
                outcome.last_step = h;
                last_rejected = false;
                monitor(t, y)?;
                if last {
                    return Ok(outcome);
                }
                h = h_new;
            } else {
                outcome.rejected += 1;
                h /= (fac11 / SAFETY).min(1.0 / FAC_MIN);
                last_rejected = true;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn initial_step<F>(
        &self,
        rhs: &mut F,
        t0: f64,
        y0: &[f64],
        f0: &[f64],
        h_max: f64,
        scratch: &mut [f64],
        f1: &mut [f64],
    ) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y0.len().max(1) as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..y0.len() {
            let sk = self.abs_tol + self.rel_tol * y0[i].abs();
            d0 += (y0[i] / sk).powi(2);
            d1 += (f0[i] / sk).powi(2);
        }
        d0 = (d0 / n).sqrt();
        d1 = (d1 / n).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(h_max);
        for i in 0..y0.len() {
            scratch[i] = y0[i] + h0 * f0[i];
        }
        rhs(t0 + h0, scratch, f1);
        let mut d2 = 0.0;
        for i in 0..y0.len() {
            let sk = self.abs_tol + self.rel_tol * y0[i].abs();
            d2 += ((f1[i] - f0[i]) / sk).powi(2);
        }
        d2 = (d2 / n).sqrt() / h0;
        let der = d1.max(d2);
        let h1 = if der <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / der).powf(0.2)
        };
        (100.0 * h0).min(h1).min(h_max)
    }
}
