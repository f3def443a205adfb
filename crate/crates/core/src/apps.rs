//! Uses of a learned generator: recovering the vector field from the
//! coordinate observables, and fitting/verifying a polynomial Lyapunov
//! function for the time-reversed system.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::datagen::SamplePlan;
use crate::dictionary::{analytic_generator_apply, Dictionary, Observable, WeightVector};
use crate::dynamics::VectorField;
use crate::edmd::linalg::{lstsq, RCOND};
use crate::edmd::{apply_matrix_to_weights, log_baseline, GeneratorMatrix, KoopmanMatrix, LogDiagnostics, LogPolicy, WeightOperator};
use crate::error::{KoopError, Result};
use crate::io::format_f64;

/// Weights below this magnitude are shown as zero in human-readable output.
pub const DISPLAY_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LogFree,
    LogBaseline,
}

/// Weights laid out as the `(i, j)` grid of the 2-D monomial family, or as a
/// single column for other dictionaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<Vec<f64>>,
}

impl WeightTable {
    pub fn from_weights(dict: &Dictionary, values: &[f64]) -> Self {
        match dict.table_shape() {
            Some((rows, cols)) => Self {
                row_labels: (0..rows).map(|i| format!("i={i}")).collect(),
                col_labels: (0..cols).map(|j| format!("j={j}")).collect(),
                cells: (0..rows)
                    .map(|i| (0..cols).map(|j| values[j * rows + i]).collect())
                    .collect(),
            },
            None => Self {
                row_labels: dict.entries().iter().map(Observable::label).collect(),
                col_labels: vec!["weight".into()],
                cells: values.iter().map(|v| vec![*v]).collect(),
            },
        }
    }

    /// Cell at `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i][j]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        let mut header = vec!["z_ij".to_string()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let col_labels = r.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut cells = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            row_labels.push(rec.get(0).unwrap_or_default().to_string());
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|s| s.parse::<f64>().map_err(|_| KoopError::Integrity(format!("bad cell {s:?}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            row_labels,
            col_labels,
            cells,
        })
    }

    /// Plain-text rendering with tiny weights shown as 0.
    pub fn render(&self) -> String {
        let mut out = format!("{:>6}", "");
        for c in &self.col_labels {
            out.push_str(&format!(" {c:>12}"));
        }
        out.push('\n');
        for (label, row) in self.row_labels.iter().zip(&self.cells) {
            out.push_str(&format!("{label:>6}"));
            for v in row {
                let shown = if v.abs() < DISPLAY_THRESHOLD { 0.0 } else { *v };
                out.push_str(&format!(" {shown:>12.3e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateFit {
    /// 0-based coordinate `k` of `f_k`.
    pub coordinate: usize,
    pub dict_index: usize,
    pub weights: WeightVector,
    pub table_re: WeightTable,
    pub table_im: WeightTable,
    /// `max |Re(Z_N(x) w) - f_k(x)|` over the evaluation grid.
    pub max_error: f64,
    pub rms_error: f64,
    /// `max |Im(Z_N(x) w)|` over the evaluation grid.
    pub max_imag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub method: Method,
    pub coordinates: Vec<CoordinateFit>,
    pub grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_diagnostics: Option<LogDiagnostics>,
}

impl IdentificationReport {
    pub fn max_error(&self) -> f64 {
        self.coordinates.iter().map(|c| c.max_error).fold(0.0, f64::max)
    }
}

fn identify_with<A: WeightOperator + ?Sized>(
    op: &A,
    method: Method,
    dict: &Dictionary,
    coordinate_indices: &[usize],
    reference: &VectorField,
    eval_plan: &SamplePlan,
) -> Result<Vec<CoordinateFit>> {
    let points = eval_plan.samples()?;
    let rows: Vec<Vec<f64>> = points.iter().map(|x| dict.evaluate(x)).collect();
    coordinate_indices
        .iter()
        .enumerate()
        .map(|(k, &idx)| {
            if dict.coordinate_index(k) != Some(idx) {
                return Err(KoopError::CoordinateNotInDictionary { coordinate: k + 1 });
            }
            let weights = apply_matrix_to_weights(op, &WeightVector::unit(dict, idx)?)?;
            let coord = dict.entry(idx).expect("index checked");
            let mut max_error = 0.0f64;
            let mut sq = 0.0;
            let mut max_imag = 0.0f64;
            for (x, z) in points.iter().zip(&rows) {
                let fit: Complex64 = z.iter().zip(&weights.coefficients).map(|(a, w)| w * a).sum();
                let truth = analytic_generator_apply(reference, coord, x);
                let e = (fit.re - truth).abs();
                max_error = max_error.max(e);
                sq += e * e;
                max_imag = max_imag.max(fit.im.abs());
            }
            let _ = method;
            Ok(CoordinateFit {
                coordinate: k,
                dict_index: idx,
                table_re: WeightTable::from_weights(dict, &weights.real_parts()),
                table_im: WeightTable::from_weights(dict, &weights.imag_parts()),
                weights,
                max_error,
                rms_error: (sq / points.len() as f64).sqrt(),
                max_imag,
            })
        })
        .collect()
}

/// Reads `f_k ~ Z_N (L e_{idx(k)})` off the log-free generator matrix and
/// scores it against `reference` on `eval_plan`.
pub fn identify_field(
    l: &GeneratorMatrix,
    dict: &Dictionary,
    coordinate_indices: &[usize],
    reference: &VectorField,
    eval_plan: &SamplePlan,
) -> Result<IdentificationReport> {
    Ok(IdentificationReport {
        method: Method::LogFree,
        coordinates: identify_with(l, Method::LogFree, dict, coordinate_indices, reference, eval_plan)?,
        grid_points: eval_plan.sample_count(),
        log_diagnostics: None,
    })
}

/// Same read-out through `log(K)/s`.
pub fn identify_field_log_baseline(
    km: &KoopmanMatrix,
    policy: LogPolicy,
    dict: &Dictionary,
    coordinate_indices: &[usize],
    reference: &VectorField,
    eval_plan: &SamplePlan,
) -> Result<IdentificationReport> {
    let lg = log_baseline(km, policy)?;
    Ok(IdentificationReport {
        method: Method::LogBaseline,
        coordinates: identify_with(&lg, Method::LogBaseline, dict, coordinate_indices, reference, eval_plan)?,
        grid_points: eval_plan.sample_count(),
        log_diagnostics: Some(lg.diagnostics),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LieGridReport {
    pub max: f64,
    pub argmax: Vec<f64>,
    pub min: f64,
    pub argmin: Vec<f64>,
}

/// Polynomial Lyapunov candidate `V(x) = Z_N(x) theta`.
///
/// `L` is learned on the forward field and `theta` solves `Z_N L theta ~ g`
/// (target `g = |x|^2`). The reversed dynamics then have Lie derivative
/// `-Z_N L theta ~ -g`, which is what `reversed_lie` and `value_at_origin`
/// report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCandidate {
    pub theta: WeightVector,
    /// `||X L theta - g||_2` over the sample grid.
    pub fit_residual: f64,
    pub rank_used: usize,
    /// Dictionary index of the constant observable, pinned to zero.
    pub pinned_index: Option<usize>,
    /// Extremes of `-Z_N(x) L theta` over the sample grid.
    pub reversed_lie: LieGridReport,
    /// `-Z_N(0) L theta`: the reversed-dynamics Lie derivative at the origin.
    pub value_at_origin: f64,
    /// `Z_N(0) L theta`.
    pub forward_lie_at_origin: f64,
}

fn real_weights(w: &WeightVector) -> Vec<f64> {
    w.real_parts()
}

fn lie_weights(l: &GeneratorMatrix, theta: &[f64]) -> Vec<f64> {
    let v = &l.matrix * DVector::from_column_slice(theta);
    v.iter().cloned().collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least-squares fit of `Z_N(x) L theta = target(x)` over the samples of `plan`.
pub fn fit_lyapunov(
    l: &GeneratorMatrix,
    dict: &Dictionary,
    plan: &SamplePlan,
    target: &Observable,
) -> Result<LyapunovCandidate> {
    if l.basis_id != dict.basis_id() || l.dim() != dict.len() {
        return Err(KoopError::BasisMismatch {
            expected: dict.basis_id().to_string(),
            found: l.basis_id.clone(),
        });
    }
    if target.dimension() != dict.dimension() {
        return Err(KoopError::InvalidInput("target dimension differs from dictionary".into()));
    }
    let points = plan.samples()?;
    let n = dict.len();
    let m = points.len();
    let mut x = DMatrix::zeros(m, n);
    let mut g = DMatrix::zeros(m, 1);
    for (r, p) in points.iter().enumerate() {
        x.row_mut(r).copy_from_slice(&dict.evaluate(p));
        g[(r, 0)] = target.eval(p);
    }
    let a = &x * &l.matrix;
    let pinned = dict.constant_index();
    let keep: Vec<usize> = (0..n).filter(|c| Some(*c) != pinned).collect();
    if keep.is_empty() {
        return Err(KoopError::InvalidInput("dictionary has no non-constant observables".into()));
    }
    let reduced = a.select_columns(&keep);
    let (sol, rank_used) = lstsq(&reduced, &g, RCOND)?;
    let mut theta = vec![0.0; n];
    for (k, &c) in keep.iter().enumerate() {
        theta[c] = sol[(k, 0)];
    }
    let lie = &a * DVector::from_column_slice(&theta);
    let fit_residual = (&lie - g.column(0)).norm();

    let mut report = LieGridReport {
        max: f64::NEG_INFINITY,
        argmax: vec![],
        min: f64::INFINITY,
        argmin: vec![],
    };
    for (p, v) in points.iter().zip(lie.iter()) {
        let rev = -v;
        if rev > report.max {
            report.max = rev;
            report.argmax = p.clone();
        }
        if rev < report.min {
            report.min = rev;
            report.argmin = p.clone();
        }
    }
    let origin = vec![0.0; dict.dimension()];
    let forward_lie_at_origin = dot(&dict.evaluate(&origin), &lie_weights(l, &theta));
    Ok(LyapunovCandidate {
        theta: WeightVector::real(&theta, dict.basis_id()),
        fit_residual,
        rank_used,
        pinned_index: pinned,
        reversed_lie: report,
        value_at_origin: -forward_lie_at_origin,
        forward_lie_at_origin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub pass: bool,
    pub positive_definite: bool,
    pub decreasing: bool,
    pub puncture_radius: f64,
    pub points_checked: usize,
    /// `min V` over the punctured grid.
    pub min_value: f64,
    pub min_value_at: Vec<f64>,
    /// `max (-Z_N L theta)` over the punctured grid.
    pub max_reversed_lie: f64,
    pub max_reversed_lie_at: Vec<f64>,
    pub positivity_violations: usize,
    pub decrease_violations: usize,
}

/// Checks `V > 0` and `-Z_N L theta < 0` on `plan` minus a ball around the origin.
pub fn verify_candidate(
    cand: &LyapunovCandidate,
    l: &GeneratorMatrix,
    dict: &Dictionary,
    plan: &SamplePlan,
    puncture_radius: f64,
) -> Result<Verdict> {
    cand.theta.check_basis(dict.basis_id(), dict.len())?;
    if l.basis_id != dict.basis_id() {
        return Err(KoopError::BasisMismatch {
            expected: dict.basis_id().to_string(),
            found: l.basis_id.clone(),
        });
    }
    let theta = real_weights(&cand.theta);
    let lie_w = lie_weights(l, &theta);
    let mut v = Verdict {
        pass: false,
        positive_definite: true,
        decreasing: true,
        puncture_radius,
        points_checked: 0,
        min_value: f64::INFINITY,
        min_value_at: vec![],
        max_reversed_lie: f64::NEG_INFINITY,
        max_reversed_lie_at: vec![],
        positivity_violations: 0,
        decrease_violations: 0,
    };
    for p in plan.samples()? {
        if p.iter().map(|c| c * c).sum::<f64>().sqrt() <= puncture_radius {
            continue;
        }
        v.points_checked += 1;
        let z = dict.evaluate(&p);
        let value = dot(&z, &theta);
        let rev = -dot(&z, &lie_w);
        if value <= 0.0 {
            v.positivity_violations += 1;
        }
        if rev >= 0.0 {
            v.decrease_violations += 1;
        }
        if value < v.min_value {
            v.min_value = value;
            v.min_value_at = p.clone();
        }
        if rev > v.max_reversed_lie {
            v.max_reversed_lie = rev;
            v.max_reversed_lie_at = p;
        }
    }
    v.positive_definite = v.positivity_violations == 0 && v.points_checked > 0;
    v.decreasing = v.decrease_violations == 0 && v.points_checked > 0;
    v.pass = v.positive_definite && v.decreasing;
    Ok(v)
}

/// `(x, V(x), -Z_N(x) L theta)` on every point of `plan`.
pub fn lyapunov_grid(
    theta: &WeightVector,
    l: &GeneratorMatrix,
    dict: &Dictionary,
    plan: &SamplePlan,
) -> Result<Vec<(Vec<f64>, f64, f64)>> {
    theta.check_basis(dict.basis_id(), dict.len())?;
    let th = real_weights(theta);
    let lie_w = lie_weights(l, &th);
    Ok(plan
        .samples()?
        .into_iter()
        .map(|p| {
            let z = dict.evaluate(&p);
            let value = dot(&z, &th);
            let rev = -dot(&z, &lie_w);
            (p, value, rev)
        })
        .collect())
}

/// Human-readable `V`, e.g. `1.39·x1^2 - 1.56·x1·x2`; terms below
/// [`DISPLAY_THRESHOLD`] are dropped.
pub fn polynomial_string(dict: &Dictionary, theta: &WeightVector) -> String {
    let mut out = String::new();
    for (obs, c) in dict.entries().iter().zip(theta.real_parts()) {
        if c.abs() < DISPLAY_THRESHOLD {
            continue;
        }
        let mag = if c.abs() >= 0.01 {
            format!("{:.2}", c.abs())
        } else {
            format!("{:.2e}", c.abs())
        };
        let label = obs.label().replace('*', "·");
        let term = if label == "1" { mag } else { format!("{mag}·{label}") };
        if out.is_empty() {
            if c < 0.0 {
                out.push('-');
            }
            out.push_str(&term);
        } else {
            out.push_str(if c < 0.0 { " - " } else { " + " });
            out.push_str(&term);
        }
    }
    if out.is_empty() {
        "0".into()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linear_1d;

    #[test]
    fn table_layout_follows_monomial_grid() {
        let d = Dictionary::monomials_2d(3, 2);
        let values: Vec<f64> = (0..12).map(|k| k as f64).collect();
        let t = WeightTable::from_weights(&d, &values);
        assert_eq!(t.cells.len(), 4);
        assert_eq!(t.cells[0].len(), 3);
        // z_{0,1} is index 4, z_{2,1} is index 6, z_{3,2} is index 11
        assert_eq!(t.get(0, 1), 4.0);
        assert_eq!(t.get(2, 1), 6.0);
        assert_eq!(t.get(3, 2), 11.0);
    }

    #[test]
    fn table_csv_round_trip() {
        let d = Dictionary::monomials_2d(3, 2);
        let values: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        let t = WeightTable::from_weights(&d, &values);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(WeightTable::read_csv(&p).unwrap(), t);
    }

    #[test]
    fn exact_linear_generator_identification() {
        let d = Dictionary::monomials_1d(&[1, 2, 3]).unwrap();
        let l = GeneratorMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0])), d.basis_id())
            .unwrap();
        let r = identify_field(&l, &d, &[0], &linear_1d(1.0), &SamplePlan::unit_box(1, 50)).unwrap();
        assert_eq!(r.coordinates[0].weights.real_parts(), vec![1.0, 0.0, 0.0]);
        assert!(r.max_error() < 1e-15);
        assert_eq!(r.coordinates[0].table_im.cells.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())), 0.0);
    }

    #[test]
    fn missing_coordinate_is_reported() {
        let d = Dictionary::monomials_1d(&[0, 2]).unwrap();
        let l = GeneratorMatrix::from_matrix(DMatrix::identity(2, 2), d.basis_id()).unwrap();
        let err = identify_field(&l, &d, &[1], &linear_1d(1.0), &SamplePlan::unit_box(1, 5)).unwrap_err();
        assert_eq!(err, KoopError::CoordinateNotInDictionary { coordinate: 1 });
    }

    #[test]
    fn exact_system_lyapunov_fit() {
        // x' = -x on {x, x^2}: L = diag(-1, -2), so L theta = x^2 gives theta = (0, -1/2)
        let d = Dictionary::monomials_1d(&[1, 2]).unwrap();
        let l = GeneratorMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0])), d.basis_id())
            .unwrap();
        let target = Observable::monomial(vec![2]);
        let c = fit_lyapunov(&l, &d, &SamplePlan::unit_box(1, 21), &target).unwrap();
        let th = c.theta.real_parts();
        assert!(th[0].abs() < 1e-12 && (th[1] + 0.5).abs() < 1e-12);
        assert!(c.fit_residual < 1e-12);
        assert_eq!(c.pinned_index, None);
        let _ = linear_1d(-1.0);
    }

    #[test]
    fn verdicts_for_trivial_candidates() {
        let d = Dictionary::monomials_2d(2, 2);
        // generator of the linear system x' = -x restricted to the quadratics
        let mut lm = DMatrix::zeros(d.len(), d.len());
        for (k, obs) in d.entries().iter().enumerate() {
            if let Observable::Monomial { exponents } = obs {
                lm[(k, k)] = -((exponents[0] + exponents[1]) as f64);
            }
        }
        // forward field is x' = +x so its generator is -lm
        let l = GeneratorMatrix::from_matrix(-lm, d.basis_id()).unwrap();
        let plan = SamplePlan::unit_box(2, 21);
        let zero = LyapunovCandidate {
            theta: WeightVector::real(&vec![0.0; d.len()], d.basis_id()),
            fit_residual: 0.0,
            rank_used: 0,
            pinned_index: Some(0),
            reversed_lie: LieGridReport {
                max: 0.0,
                argmax: vec![],
                min: 0.0,
                argmin: vec![],
            },
            value_at_origin: 0.0,
            forward_lie_at_origin: 0.0,
        };
        let v = verify_candidate(&zero, &l, &d, &plan, 0.05).unwrap();
        assert!(!v.pass && !v.positive_definite);

        let mut neg = zero.clone();
        let mut w = vec![0.0; d.len()];
        w[d.index_of_monomial(&[2, 0]).unwrap()] = -1.0;
        w[d.index_of_monomial(&[0, 2]).unwrap()] = -1.0;
        neg.theta = WeightVector::real(&w, d.basis_id());
        assert!(!verify_candidate(&neg, &l, &d, &plan, 0.05).unwrap().positive_definite);

        let mut pos = neg.clone();
        pos.theta = WeightVector::real(&w.iter().map(|v| -v).collect::<Vec<_>>(), d.basis_id());
        let v = verify_candidate(&pos, &l, &d, &plan, 0.05).unwrap();
        assert!(v.pass, "{v:?}");
    }

    #[test]
    fn polynomial_rendering() {
        let d = Dictionary::monomials_2d(1, 1);
        let w = WeightVector::real(&[1e-12, 1.391, -1.559, 0.004], d.basis_id());
        assert_eq!(polynomial_string(&d, &w), "1.39·x1 - 1.56·x2 + 4.00e-3·x1·x2");
        let z = WeightVector::real(&[0.0; 4], d.basis_id());
        assert_eq!(polynomial_string(&d, &z), "0");
    }
}
