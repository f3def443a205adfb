//! Ordered dictionaries of polynomial observables.
//!
//! Indices are 0-based throughout: in the 2-D monomial family of degree
//! (3, 2), `x1` sits at index 1 and `x2` at index 4.

use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::VectorField;
use crate::error::{KoopError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coefficient: f64,
    pub exponents: Vec<u32>,
}

/// A closed-form, continuously differentiable observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Observable {
    Monomial { exponents: Vec<u32> },
    CustomPolynomial { terms: Vec<Term> },
}

fn monomial_value(exponents: &[u32], x: &[f64]) -> f64 {
    exponents
        .iter()
        .zip(x)
        .map(|(&e, &v)| v.powi(e as i32))
        .product()
}

fn monomial_partial(exponents: &[u32], x: &[f64], k: usize) -> f64 {
    let ek = exponents[k];
    if ek == 0 {
        return 0.0;
    }
    let mut d = ek as f64;
    for (m, (&e, &v)) in exponents.iter().zip(x).enumerate() {
        let p = if m == k { e - 1 } else { e };
        d *= v.powi(p as i32);
    }
    d
}

fn monomial_label(exponents: &[u32]) -> String {
    let factors: Vec<String> = exponents
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(k, &e)| {
            if e == 1 {
                format!("x{}", k + 1)
            } else {
                format!("x{}^{}", k + 1, e)
            }
        })
        .collect();
    if factors.is_empty() {
        "1".into()
    } else {
        factors.join("*")
    }
}

impl Observable {
    pub fn monomial(exponents: Vec<u32>) -> Self {
        Observable::Monomial { exponents }
    }

    /// `sum_k x_k^2` in `n` dimensions.
    pub fn squared_norm(n: usize) -> Self {
        let terms = (0..n)
            .map(|k| {
                let mut exponents = vec![0; n];
                exponents[k] = 2;
                Term {
                    coefficient: 1.0,
                    exponents,
                }
            })
            .collect();
        Observable::CustomPolynomial { terms }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Observable::Monomial { exponents } => exponents.len(),
            Observable::CustomPolynomial { terms } => terms.first().map_or(0, |t| t.exponents.len()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Observable::Monomial { exponents } => monomial_label(exponents),
            Observable::CustomPolynomial { terms } => {
                let mut s = String::new();
                for (k, t) in terms.iter().enumerate() {
                    if k > 0 {
                        s.push_str(if t.coefficient < 0.0 { " - " } else { " + " });
                    } else if t.coefficient < 0.0 {
                        s.push('-');
                    }
                    let _ = write!(s, "{}*{}", t.coefficient.abs(), monomial_label(&t.exponents));
                }
                s
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Monomial { exponents } => monomial_value(exponents, x),
            Observable::CustomPolynomial { terms } => terms
                .iter()
                .map(|t| t.coefficient * monomial_value(&t.exponents, x))
                .sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|k| match self {
                Observable::Monomial { exponents } => monomial_partial(exponents, x, k),
                Observable::CustomPolynomial { terms } => terms
                    .iter()
                    .map(|t| t.coefficient * monomial_partial(&t.exponents, x, k))
                    .sum(),
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let dims_ok = match self {
            Observable::Monomial { exponents } => !exponents.is_empty(),
            Observable::CustomPolynomial { terms } => {
                !terms.is_empty()
                    && terms.iter().all(|t| {
                        t.coefficient.is_finite() && t.exponents.len() == terms[0].exponents.len()
                    })
            }
        };
        if dims_ok && self.dimension() > 0 {
            Ok(())
        } else {
            Err(KoopError::InvalidInput(format!("malformed observable {self:?}")))
        }
    }
}

/// Exact Lie derivative `grad z(x) . f(x)` of a polynomial observable.
pub fn analytic_generator_apply(field: &VectorField, obs: &Observable, x: &[f64]) -> f64 {
    let fx = field.eval(x);
    obs.gradient(x).iter().zip(&fx).map(|(g, f)| g * f).sum()
}

#[derive(Debug, Clone, PartialEq)]
enum Family {
    Monomials2d { max_i: u32, max_j: u32 },
    Monomials1d { degrees: Vec<u32> },
    Custom,
}

/// Ordered list `[z_0, ..., z_{N-1}]` of observables on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    dim: usize,
    entries: Vec<Observable>,
    family: Family,
    basis_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryManifest {
    pub index: usize,
    pub label: String,
    pub observable: Observable,
}

/// On-disk description of a dictionary; `basis_id` is derived from the entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryManifest {
    pub spec: String,
    pub dimension: usize,
    pub size: usize,
    pub basis_id: String,
    pub entries: Vec<EntryManifest>,
}

fn compute_basis_id(dim: usize, entries: &[Observable]) -> String {
    let payload = serde_json::to_vec(&(dim, entries)).expect("observables serialize");
    let digest = Sha256::digest(&payload);
    hex::encode(&digest[..8])
}

impl Dictionary {
    fn build(dim: usize, entries: Vec<Observable>, family: Family) -> Result<Self> {
        if entries.is_empty() {
            return Err(KoopError::InvalidInput("dictionary must have at least one entry".into()));
        }
        for e in &entries {
            e.validate()?;
            if e.dimension() != dim {
                return Err(KoopError::InvalidInput(format!(
                    "observable {} has dimension {}, expected {dim}",
                    e.label(),
                    e.dimension()
                )));
            }
        }
        let basis_id = compute_basis_id(dim, &entries);
        Ok(Self {
            dim,
            entries,
            family,
            basis_id,
        })
    }

    /// `x1^i x2^j` for `i <= max_i`, `j <= max_j`, ordered with `i` varying fastest.
    pub fn monomials_2d(max_i: u32, max_j: u32) -> Self {
        let entries = (0..=max_j)
            .flat_map(|j| (0..=max_i).map(move |i| Observable::monomial(vec![i, j])))
            .collect();
        Self::build(2, entries, Family::Monomials2d { max_i, max_j }).expect("monomial family is valid")
    }

    /// `x^d` for each listed degree, in the given order.
    pub fn monomials_1d(degrees: &[u32]) -> Result<Self> {
        let entries = degrees.iter().map(|&d| Observable::monomial(vec![d])).collect();
        Self::build(
            1,
            entries,
            Family::Monomials1d {
                degrees: degrees.to_vec(),
            },
        )
    }

    pub fn custom(dim: usize, entries: Vec<Observable>) -> Result<Self> {
        Self::build(dim, entries, Family::Custom)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[Observable] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Option<&Observable> {
        self.entries.get(index)
    }

    pub fn basis_id(&self) -> &str {
        &self.basis_id
    }

    pub fn spec_string(&self) -> String {
        match &self.family {
            Family::Monomials2d { max_i, max_j } => format!("monomials2d:max_i={max_i},max_j={max_j}"),
            Family::Monomials1d { degrees } => {
                let d: Vec<String> = degrees.iter().map(u32::to_string).collect();
                format!("monomials1d:degrees={}", d.join(";"))
            }
            Family::Custom => "custom".into(),
        }
    }

    /// `(rows, cols)` of the `(i, j)` table layout for the 2-D monomial family.
    pub fn table_shape(&self) -> Option<(usize, usize)> {
        match self.family {
            Family::Monomials2d { max_i, max_j } => Some((max_i as usize + 1, max_j as usize + 1)),
            _ => None,
        }
    }

    pub fn index_of_monomial(&self, exponents: &[u32]) -> Option<usize> {
        self.entries.iter().position(|e| match e {
            Observable::Monomial { exponents: ex } => ex.as_slice() == exponents,
            _ => false,
        })
    }

    /// Index of the coordinate function `x_{k+1}`.
    pub fn coordinate_index(&self, k: usize) -> Option<usize> {
        if k >= self.dim {
            return None;
        }
        let mut e = vec![0u32; self.dim];
        e[k] = 1;
        self.index_of_monomial(&e)
    }

    /// Indices of all coordinate functions, in coordinate order.
    pub fn coordinate_indices(&self) -> Result<Vec<usize>> {
        (0..self.dim)
            .map(|k| {
                self.coordinate_index(k)
                    .ok_or(KoopError::CoordinateNotInDictionary { coordinate: k + 1 })
            })
            .collect()
    }

    pub fn constant_index(&self) -> Option<usize> {
        self.index_of_monomial(&vec![0; self.dim])
    }

    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(x);
        }
    }

    /// Row vector `Z_N(x)`.
    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        out
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim {
            Ok(())
        } else {
            Err(KoopError::InvalidInput(format!(
                "state has length {}, dictionary dimension is {}",
                x.len(),
                self.dim
            )))
        }
    }

    pub fn manifest(&self) -> DictionaryManifest {
        DictionaryManifest {
            spec: self.spec_string(),
            dimension: self.dim,
            size: self.len(),
            basis_id: self.basis_id.clone(),
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(index, o)| EntryManifest {
                    index,
                    label: o.label(),
                    observable: o.clone(),
                })
                .collect(),
        }
    }

    pub fn from_manifest(m: &DictionaryManifest) -> Result<Self> {
        let entries: Vec<Observable> = m.entries.iter().map(|e| e.observable.clone()).collect();
        if m.entries.iter().enumerate().any(|(k, e)| e.index != k) || entries.len() != m.size {
            return Err(KoopError::Integrity("dictionary manifest ordering is inconsistent".into()));
        }
        let family = match m.spec.parse::<Dictionary>() {
            Ok(d) if d.entries == entries => d.family,
            _ => Family::Custom,
        };
        let dict = Self::build(m.dimension, entries, family)?;
        if dict.basis_id != m.basis_id {
            return Err(KoopError::BasisMismatch {
                expected: m.basis_id.clone(),
                found: dict.basis_id,
            });
        }
        Ok(dict)
    }
}

impl FromStr for Dictionary {
    type Err = KoopError;

    /// `monomials2d:max_i=3,max_j=2` or `monomials1d:degrees=1;2;3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || KoopError::InvalidInput(format!("unrecognized dictionary spec {s:?}"));
        let (family, args) = s.trim().split_once(':').ok_or_else(bad)?;
        let mut kv = std::collections::BTreeMap::new();
        for part in args.split(',') {
            let (k, v) = part.split_once('=').ok_or_else(bad)?;
            if kv.insert(k.trim(), v.trim()).is_some() {
                return Err(bad());
            }
        }
        match family {
            "monomials2d" => {
                if kv.len() != 2 {
                    return Err(bad());
                }
                let max_i = kv.get("max_i").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                let max_j = kv.get("max_j").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
                Ok(Self::monomials_2d(max_i, max_j))
            }
            "monomials1d" => {
                if kv.len() != 1 {
                    return Err(bad());
                }
                let degrees = kv
                    .get("degrees")
                    .ok_or_else(bad)?
                    .split(';')
                    .map(|d| d.trim().parse::<u32>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                Self::monomials_1d(&degrees)
            }
            _ => Err(bad()),
        }
    }
}

/// Coefficients `w` of `h(x) = Z_N(x) w`, tied to one dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub coefficients: Vec<Complex64>,
    pub basis_id: String,
}

impl WeightVector {
    pub fn real(values: &[f64], basis_id: impl Into<String>) -> Self {
        Self {
            coefficients: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            basis_id: basis_id.into(),
        }
    }

    /// Unit vector selecting dictionary entry `index`.
    pub fn unit(dict: &Dictionary, index: usize) -> Result<Self> {
        if index >= dict.len() {
            return Err(KoopError::InvalidInput(format!(
                "unit index {index} out of range for N={}",
                dict.len()
            )));
        }
        let mut v = vec![0.0; dict.len()];
        v[index] = 1.0;
        Ok(Self::real(&v, dict.basis_id()))
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.re).collect()
    }

    pub fn imag_parts(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.im).collect()
    }

    pub fn check_basis(&self, basis_id: &str, len: usize) -> Result<()> {
        if self.basis_id != basis_id {
            return Err(KoopError::BasisMismatch {
                expected: basis_id.to_string(),
                found: self.basis_id.clone(),
            });
        }
        if self.len() != len {
            return Err(KoopError::InvalidInput(format!(
                "weight vector has length {}, expected {len}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// `Z_N(x) w`.
pub fn reconstruct(dict: &Dictionary, w: &WeightVector, x: &[f64]) -> Result<Complex64> {
    w.check_basis(dict.basis_id(), dict.len())?;
    dict.check_state(x)?;
    Ok(dict
        .evaluate(x)
        .iter()
        .zip(&w.coefficients)
        .map(|(z, c)| c * z)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{linear_1d, vanderpol};

    #[test]
    fn monomial_family_layout() {
        let d = Dictionary::monomials_2d(3, 2);
        assert_eq!(d.len(), 12);
        assert_eq!(d.entry(1), Some(&Observable::monomial(vec![1, 0])));
        assert_eq!(d.entry(4), Some(&Observable::monomial(vec![0, 1])));
        assert_eq!(d.coordinate_indices().unwrap(), vec![1, 4]);
        assert_eq!(d.constant_index(), Some(0));
        assert_eq!(d.table_shape(), Some((4, 3)));
        assert_eq!(d.entry(6).unwrap().label(), "x1^2*x2");
    }

    #[test]
    fn evaluation_examples() {
        let d = Dictionary::monomials_2d(3, 2);
        let mut origin = vec![0.0; 12];
        origin[0] = 1.0;
        assert_eq!(d.evaluate(&[0.0, 0.0]), origin);
        assert_eq!(
            d.evaluate(&[2.0, 3.0]),
            vec![1.0, 2.0, 4.0, 8.0, 3.0, 6.0, 12.0, 24.0, 9.0, 18.0, 36.0, 72.0]
        );
        assert_eq!(d.evaluate(&[1.0, 1.0]), vec![1.0; 12]);
    }

    #[test]
    fn lie_derivative_examples() {
        let f = vanderpol();
        let x = [0.5, 0.2];
        let v1 = analytic_generator_apply(&f, &Observable::monomial(vec![1, 0]), &x);
        let v2 = analytic_generator_apply(&f, &Observable::monomial(vec![0, 1]), &x);
        let v0 = analytic_generator_apply(&f, &Observable::monomial(vec![0, 0]), &x);
        assert!((v1 - 0.2).abs() < 1e-15);
        assert!((v2 + 0.35).abs() < 1e-15);
        assert_eq!(v0, 0.0);
        // d/dt x^3 along x' = x is 3 x^3
        let v = analytic_generator_apply(&linear_1d(1.0), &Observable::monomial(vec![3]), &[0.7]);
        assert!((v - 3.0 * 0.343).abs() < 1e-14);
    }

    #[test]
    fn reconstruct_examples() {
        let d = Dictionary::monomials_2d(3, 2);
        let x = [2.0, 3.0];
        let e1 = WeightVector::unit(&d, 1).unwrap();
        assert_eq!(reconstruct(&d, &e1, &x).unwrap(), Complex64::new(2.0, 0.0));
        let zero = WeightVector::real(&[0.0; 12], d.basis_id());
        assert_eq!(reconstruct(&d, &zero, &x).unwrap(), Complex64::new(0.0, 0.0));
        let ones = WeightVector::real(&[1.0; 12], d.basis_id());
        assert_eq!(reconstruct(&d, &ones, &x).unwrap().re, 195.0);
    }

    #[test]
    fn reconstruct_checks_basis() {
        let d = Dictionary::monomials_2d(3, 2);
        let other = Dictionary::monomials_2d(2, 2);
        let w = WeightVector::unit(&other, 0).unwrap();
        assert!(matches!(
            reconstruct(&d, &w, &[0.0, 0.0]),
            Err(KoopError::BasisMismatch { .. })
        ));
    }

    #[test]
    fn spec_strings_and_manifest_round_trip() {
        let d: Dictionary = "monomials2d:max_i=3,max_j=2".parse().unwrap();
        assert_eq!(d, Dictionary::monomials_2d(3, 2));
        assert_eq!(d.spec_string(), "monomials2d:max_i=3,max_j=2");
        let d1: Dictionary = "monomials1d:degrees=1;2;3".parse().unwrap();
        assert_eq!(d1.len(), 3);
        assert_eq!(d1.spec_string(), "monomials1d:degrees=1;2;3");
        assert!("monomials2d:max_i=3".parse::<Dictionary>().is_err());
        assert!("fourier:k=3".parse::<Dictionary>().is_err());

        let m = d.manifest();
        let json = serde_json::to_string(&m).unwrap();
        let back: DictionaryManifest = serde_json::from_str(&json).unwrap();
        assert_eq!(Dictionary::from_manifest(&back).unwrap(), d);

        let mut tampered = m.clone();
        tampered.entries.swap(1, 2);
        tampered.entries[1].index = 1;
        tampered.entries[2].index = 2;
        assert!(Dictionary::from_manifest(&tampered).is_err());
    }

    #[test]
    fn basis_ids_distinguish_orderings() {
        let a = Dictionary::monomials_1d(&[1, 2]).unwrap();
        let b = Dictionary::monomials_1d(&[2, 1]).unwrap();
        assert_ne!(a.basis_id(), b.basis_id());
        assert_eq!(a.basis_id().len(), 16);
    }

    #[test]
    fn squared_norm_target() {
        let g = Observable::squared_norm(2);
        assert_eq!(g.eval(&[3.0, 4.0]), 25.0);
        assert_eq!(g.gradient(&[3.0, 4.0]), vec![6.0, 8.0]);
        assert_eq!(g.label(), "1*x1^2 + 1*x2^2");
    }

    #[test]
    fn empty_dictionary_rejected() {
        assert!(Dictionary::monomials_1d(&[]).is_err());
        assert!(Dictionary::custom(2, vec![Observable::monomial(vec![1])]).is_err());
    }
}
