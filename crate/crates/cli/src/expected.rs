//! Expected-tables file used by `reproduce`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const EXPECTED_FORMAT: &str = "koopgen-expected/1";

/// Committed reference values for the Van der Pol experiment.
pub const BUILTIN: &str = include_str!("../expected/vanderpol.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCoefficient {
    pub exponents: Vec<u32>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedLyapunov {
    pub coefficients: Vec<ExpectedCoefficient>,
    pub rel_tol: f64,
    pub origin_band: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub per_axis: usize,
    pub lambda: f64,
    pub baseline_s: f64,
    /// Log-free weights of `f1`, rows `i`, columns `j`.
    pub table1: Vec<Vec<f64>>,
    /// Log-free weights of `f2`.
    pub table2: Vec<Vec<f64>>,
    pub weight_tol: f64,
    pub grid_error_max: f64,
    pub baseline_ratio_min: f64,
    /// Minimum of the largest baseline imaginary weight, per coordinate.
    pub baseline_imag_min: [f64; 2],
    pub lyapunov: ExpectedLyapunov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub full: Profile,
    pub quick: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub format: String,
    pub profiles: Profiles,
}

impl Expected {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let e: Expected =
            serde_json::from_str(text).map_err(|err| CliError::config(format!("expected tables {origin}: {err}")))?;
        if e.format != EXPECTED_FORMAT {
            return Err(CliError::config(format!("expected tables {origin}: unknown format {:?}", e.format)));
        }
        for (name, p) in [("full", &e.profiles.full), ("quick", &e.profiles.quick)] {
            p.check().map_err(|m| CliError::config(format!("expected tables {origin}, profile {name}: {m}")))?;
        }
        Ok(e)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::parse(BUILTIN, "(built-in)"),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }
}

impl Profile {
    fn check(&self) -> Result<(), String> {
        let finite = |v: f64| v.is_finite();
        for t in [&self.table1, &self.table2] {
            if t.len() != 4 || t.iter().any(|r| r.len() != 3 || !r.iter().all(|v| finite(*v))) {
                return Err("tables must be 4 x 3 and finite".into());
            }
        }
        let positive = [
            self.lambda,
            self.baseline_s,
            self.weight_tol,
            self.grid_error_max,
            self.baseline_ratio_min,
            self.lyapunov.rel_tol,
        ];
        if self.per_axis == 0 || !positive.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err("sizes and tolerances must be positive".into());
        }
        let [lo, hi] = self.lyapunov.origin_band;
        if lo.is_nan() || hi.is_nan() || lo > hi || self.lyapunov.coefficients.iter().any(|c| c.exponents.len() != 2 || !finite(c.value)) {
            return Err("malformed lyapunov expectations".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_file_is_valid() {
        let e = Expected::load(None).unwrap();
        assert_eq!(e.profiles.full.per_axis, 100);
        assert_eq!(e.profiles.full.table1[0][1], 1.0);
        assert_eq!(e.profiles.full.table2[2][1], -1.0);
    }

    #[test]
    fn corrupted_files_are_config_errors() {
        assert_eq!(Expected::parse("{", "t").unwrap_err().code, 2);
        let mut v: serde_json::Value = serde_json::from_str(BUILTIN).unwrap();
        v["profiles"]["full"]["table1"][0] = serde_json::json!([1.0]);
        assert_eq!(Expected::parse(&v.to_string(), "t").unwrap_err().code, 2);
        v = serde_json::from_str(BUILTIN).unwrap();
        v["format"] = serde_json::json!("other");
        assert_eq!(Expected::parse(&v.to_string(), "t").unwrap_err().code, 2);
    }
}
