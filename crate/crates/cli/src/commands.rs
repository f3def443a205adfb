use std::io::Write;
use std::path::{Path, PathBuf};

use koopgen_core::*;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Overrides};
use crate::expected::{Expected, Profile};
use crate::output::OutputDir;
use crate::CliError;

/// Training data plus the configuration it belongs to.
struct Trained {
    cfg: ExperimentConfig,
    ts: TrainingSet,
    dict: Dictionary,
    field: VectorField,
}

fn say(line: impl AsRef<str>) {
    let _ = writeln!(std::io::stdout().lock(), "{}", line.as_ref());
}

fn failure_mode(cfg: &ExperimentConfig) -> FailureMode {
    if cfg.lenient {
        FailureMode::Lenient
    } else {
        FailureMode::Strict
    }
}

fn generate_from(cfg: ExperimentConfig) -> Result<Trained, CliError> {
    let setup = cfg.validate()?;
    let flow = Flow::with_settings(setup.field.clone(), cfg.flow);
    let ts = generate(&flow, &setup.dict, &setup.plan, &cfg.gen, failure_mode(&cfg))?;
    Ok(Trained {
        cfg,
        ts,
        dict: setup.dict,
        field: setup.field,
    })
}

/// Configuration of an existing dataset: its echoed experiment, else its provenance.
fn dataset_config(dir: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| CliError::config(format!("cannot read dataset manifest in {}: {e}", dir.display())))?;
    let m: datagen::DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("malformed dataset manifest: {e}")))?;
    if let Ok(cfg) = serde_json::from_value::<ExperimentConfig>(m.experiment.clone()) {
        return Ok(cfg);
    }
    Ok(ExperimentConfig {
        field: m.provenance.field,
        dictionary: m.dictionary.spec,
        seed: m.provenance.plan.seed,
        plan: m.provenance.plan,
        gen: m.gen,
        flow: m.provenance.flow,
        ..ExperimentConfig::default()
    })
}

/// Loads `--dataset` when given, otherwise generates from the configuration.
fn trained(o: &Overrides, dataset: Option<&PathBuf>) -> Result<Trained, CliError> {
    let Some(dir) = dataset else {
        return generate_from(o.resolve()?);
    };
    let mut cfg = match &o.config {
        Some(_) => o.resolve()?,
        None => {
            let mut c = dataset_config(dir)?;
            o.apply(&mut c);
            c
        }
    };
    let (ts, dict, _) = TrainingSet::load(dir)?;
    let field: VectorField = ts.provenance.field.parse()?;
    cfg.field = ts.provenance.field.clone();
    cfg.dictionary = dict.spec_string();
    cfg.plan = ts.provenance.plan.clone();
    cfg.seed = ts.provenance.plan.seed;
    cfg.gen = ts.config;
    cfg.flow = ts.provenance.flow;
    cfg.validate()?;
    Ok(Trained { cfg, ts, dict, field })
}

fn koopman(t: &Trained, s: f64) -> Result<KoopmanMatrix, CliError> {
    let flow = Flow::with_settings(t.field.clone(), t.cfg.flow);
    Ok(fit_koopman(&flow, &t.dict, &t.ts.provenance.plan, s)?)
}

fn fit_summary(l: &GeneratorMatrix) -> Value {
    json!({
        "basis_id": l.basis_id,
        "residual": l.residual,
        "rank_used": l.rank_used,
        "warning": l.warning.as_ref().map(|w| w.to_string()),
    })
}

pub fn generate_cmd(o: &Overrides) -> Result<(), CliError> {
    let cfg = o.resolve()?;
    let t = generate_from(cfg)?;
    let mut out = OutputDir::create(&t.cfg.output)?;
    let experiment = serde_json::to_value(&t.cfg).expect("config serializes");
    t.ts.save(&out.path("dataset"), &t.dict, experiment)?;
    for f in ["X.csv", "Y.csv", "samples.csv", "manifest.json"] {
        out.adopt(&format!("dataset/{f}"))?;
    }
    let notes = t.cfg.gen.diagnostics(None);
    for n in &notes {
        say(format!("note: {n}"));
    }
    say(format!(
        "generated {} rows x {} columns ({} dropped) into {}",
        t.ts.len(),
        t.dict.len(),
        t.ts.dropped.len(),
        out.path("dataset").display()
    ));
    let summary = json!({
        "rows": t.ts.len(),
        "columns": t.dict.len(),
        "dropped": t.ts.dropped.len(),
        "basis_id": t.ts.basis_id,
        "notes": notes,
    });
    out.finish("generate", &t.cfg, summary)
}

pub fn learn_cmd(
    o: &Overrides,
    dataset: Option<&PathBuf>,
    baseline: Option<f64>,
    policy: LogPolicy,
) -> Result<(), CliError> {
    let t = trained(o, dataset)?;
    let l = fit_generator(&t.ts)?;
    let mut out = OutputDir::create(&t.cfg.output)?;
    out.matrix("L.csv", &l.matrix)?;
    out.json("eigen_generator.json", &eigen(&l.matrix, EigenSource::Generator)?.report())?;
    let mut summary = json!({ "generator": fit_summary(&l) });
    if let Some(w) = &l.warning {
        say(format!("warning: {w}"));
    }
    say(format!("L: {0}x{0}, residual {1:.3e}, rank {2}", l.dim(), l.residual, l.rank_used));
    if let Some(s) = baseline {
        let km = koopman(&t, s)?;
        out.matrix("K.csv", &km.matrix)?;
        out.json("eigen_koopman.json", &eigen(&km.matrix, EigenSource::Koopman)?.report())?;
        let lg = log_baseline(&km, policy)?;
        out.matrix("L_log_re.csv", &lg.matrix.map(|c| c.re))?;
        out.matrix("L_log_im.csv", &lg.matrix.map(|c| c.im))?;
        out.json("log_diagnostics.json", &lg.diagnostics)?;
        say(format!(
            "baseline at s={s}: max |imag| {:.3e}, eigenvector condition {:.3e}, {} negative real Koopman eigenvalue(s)",
            lg.diagnostics.max_abs_imag, lg.diagnostics.eigvec_condition, lg.diagnostics.negative_real_eigenvalues
        ));
        summary["baseline"] = json!({ "s": s, "residual": km.residual, "diagnostics": lg.diagnostics });
    }
    out.finish("learn", &t.cfg, summary)
}

fn coordinate_metrics(r: &IdentificationReport) -> Value {
    Value::Array(
        r.coordinates
            .iter()
            .map(|c| {
                json!({
                    "coordinate": c.coordinate + 1,
                    "dictionary_index": c.dict_index,
                    "max_error": c.max_error,
                    "rms_error": c.rms_error,
                    "max_imag_on_grid": c.max_imag,
                    "max_imag_weight": c.weights.imag_parts().iter().fold(0.0f64, |m, v| m.max(v.abs())),
                })
            })
            .collect(),
    )
}

struct Identified {
    free: IdentificationReport,
    base: Option<IdentificationReport>,
}

fn identify_all(t: &Trained, l: &GeneratorMatrix, baseline: Option<f64>) -> Result<Identified, CliError> {
    let coords = t.dict.coordinate_indices()?;
    let eval = t.cfg.eval_plan(t.cfg.eval_per_axis);
    let free = identify_field(l, &t.dict, &coords, &t.field, &eval)?;
    let base = match baseline {
        Some(s) => {
            let km = koopman(t, s)?;
            Some(identify_field_log_baseline(&km, LogPolicy::Principal, &t.dict, &coords, &t.field, &eval)?)
        }
        None => None,
    };
    Ok(Identified { free, base })
}

fn write_identification(out: &mut OutputDir, id: &Identified) -> Result<Value, CliError> {
    for c in &id.free.coordinates {
        let k = c.coordinate + 1;
        out.table(&format!("weights_f{k}_log_free.csv"), &c.table_re)?;
        out.table(&format!("weights_f{k}_log_free_im.csv"), &c.table_im)?;
    }
    let mut metrics = json!({
        "grid_points": id.free.grid_points,
        "log_free": coordinate_metrics(&id.free),
    });
    if let Some(b) = &id.base {
        for c in &b.coordinates {
            let k = c.coordinate + 1;
            out.table(&format!("weights_f{k}_log_baseline_re.csv"), &c.table_re)?;
            out.table(&format!("weights_f{k}_log_baseline_im.csv"), &c.table_im)?;
        }
        metrics["log_baseline"] = coordinate_metrics(b);
        metrics["log_baseline_diagnostics"] = serde_json::to_value(&b.log_diagnostics).expect("serializes");
        metrics["error_ratio"] = json!(b.max_error() / id.free.max_error());
    }
    out.json("identify_metrics.json", &metrics)?;
    Ok(metrics)
}

pub fn identify_cmd(o: &Overrides, dataset: Option<&PathBuf>, baseline: Option<f64>) -> Result<(), CliError> {
    let t = trained(o, dataset)?;
    let l = fit_generator(&t.ts)?;
    let baseline = baseline.or(t.cfg.baseline_s);
    let id = identify_all(&t, &l, baseline)?;
    let mut out = OutputDir::create(&t.cfg.output)?;
    out.matrix("L.csv", &l.matrix)?;
    let metrics = write_identification(&mut out, &id)?;
    for c in &id.free.coordinates {
        say(format!("f{}: log-free max grid error {:.3e}", c.coordinate + 1, c.max_error));
        say(c.table_re.render());
    }
    if let Some(b) = &id.base {
        for c in &b.coordinates {
            say(format!(
                "f{}: log-baseline max grid error {:.3e}, max |imag weight| {:.3e}",
                c.coordinate + 1,
                c.max_error,
                c.weights.imag_parts().iter().fold(0.0f64, |m, v| m.max(v.abs()))
            ));
        }
    }
    out.finish("identify", &t.cfg, metrics)
}

fn read_theta(path: &Path, dict: &Dictionary) -> Result<WeightVector, CliError> {
    let rows = koopgen_core::io::read_rows_csv(path, false)
        .map_err(|e| CliError::config(format!("theta file {}: {e}", path.display())))?;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    if values.len() != dict.len() {
        return Err(CliError::config(format!(
            "theta file has {} values, dictionary has {}",
            values.len(),
            dict.len()
        )));
    }
    Ok(WeightVector::real(&values, dict.basis_id()))
}

struct LyapunovRun {
    theta: WeightVector,
    verdict: Verdict,
    value_at_origin: f64,
    fit: Option<LyapunovCandidate>,
}

fn lyapunov_run(t: &Trained, l: &GeneratorMatrix, theta_file: Option<&Path>) -> Result<LyapunovRun, CliError> {
    let fit = match theta_file {
        Some(_) => None,
        None => Some(fit_lyapunov(
            l,
            &t.dict,
            &t.ts.provenance.plan,
            &t.cfg.lyapunov_target(t.dict.dimension()),
        )?),
    };
    let theta = match theta_file {
        Some(p) => read_theta(p, &t.dict)?,
        None => fit.as_ref().expect("fitted").theta.clone(),
    };
    let cand = match &fit {
        Some(c) => c.clone(),
        None => LyapunovCandidate {
            theta: theta.clone(),
            fit_residual: f64::NAN,
            rank_used: 0,
            pinned_index: None,
            reversed_lie: LieGridReport {
                max: f64::NAN,
                argmax: vec![],
                min: f64::NAN,
                argmin: vec![],
            },
            value_at_origin: f64::NAN,
            forward_lie_at_origin: f64::NAN,
        },
    };
    let verify = t.cfg.eval_plan(t.cfg.lyapunov.verify_per_axis);
    let verdict = verify_candidate(&cand, l, &t.dict, &verify, t.cfg.lyapunov.puncture_radius)?;
    let lie_w = &l.matrix * DVector::from_vec(theta.real_parts());
    let z0 = DVector::from_vec(t.dict.evaluate(&vec![0.0; t.dict.dimension()]));
    Ok(LyapunovRun {
        theta,
        verdict,
        value_at_origin: 0.0 - z0.dot(&lie_w),
        fit,
    })
}

pub fn lyapunov_cmd(
    o: &Overrides,
    dataset: Option<&PathBuf>,
    theta_file: Option<&PathBuf>,
    require_pass: bool,
) -> Result<(), CliError> {
    let t = trained(o, dataset)?;
    let l = fit_generator(&t.ts)?;
    let run = lyapunov_run(&t, &l, theta_file.map(PathBuf::as_path))?;
    let mut out = OutputDir::create(&t.cfg.output)?;
    out.matrix("theta.csv", &DMatrix::from_column_slice(run.theta.len(), 1, &run.theta.real_parts()))?;
    let poly = polynomial_string(&t.dict, &run.theta);
    out.text("V.txt", &format!("{poly}\n"))?;
    let grid = lyapunov_grid(&run.theta, &l, &t.dict, &t.cfg.eval_plan(t.cfg.lyapunov.verify_per_axis))?;
    let coords: Vec<String> = (1..=t.dict.dimension()).map(|k| format!("x{k}")).collect();
    let mut header: Vec<&str> = coords.iter().map(String::as_str).collect();
    header.push("value");
    let with = |pick: fn(&(Vec<f64>, f64, f64)) -> f64| -> Vec<Vec<f64>> {
        grid.iter()
            .map(|g| {
                let mut row = g.0.clone();
                row.push(pick(g));
                row
            })
            .collect()
    };
    out.rows("V_grid.csv", &header, &with(|g| g.1))?;
    out.rows("reversed_lie_grid.csv", &header, &with(|g| g.2))?;
    let report = json!({
        "polynomial": poly,
        "verdict": if run.verdict.pass { "PASS" } else { "FAIL" },
        "details": run.verdict,
        "value_at_origin": run.value_at_origin,
        "theta_source": theta_file.map_or("fit".to_string(), |p| p.display().to_string()),
        "fit": run.fit.as_ref().map(|c| json!({
            "residual": c.fit_residual,
            "rank_used": c.rank_used,
            "pinned_index": c.pinned_index,
            "reversed_lie_on_training_grid": c.reversed_lie,
            "forward_lie_at_origin": c.forward_lie_at_origin,
        })),
    });
    out.json("verdict.json", &report)?;
    say(format!("V(x) = {poly}"));
    say(format!(
        "verdict {} (min V {:.3e}, max reversed Lie derivative {:.3e}, {} points); reversed Lie derivative at the origin {:.4}",
        if run.verdict.pass { "PASS" } else { "FAIL" },
        run.verdict.min_value,
        run.verdict.max_reversed_lie + 0.0,
        run.verdict.points_checked,
        run.value_at_origin
    ));
    let pass = run.verdict.pass;
    out.finish("lyapunov", &t.cfg, report)?;
    if require_pass && !pass {
        return Err(CliError::new(5, "Lyapunov verification failed".into()));
    }
    Ok(())
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn table_check(name: &'static str, c: &CoordinateFit, expected: &[Vec<f64>], tol: f64) -> Check {
    let mut worst = 0.0f64;
    let mut shape_ok = c.table_re.cells.len() == expected.len();
    for (row, exp) in c.table_re.cells.iter().zip(expected) {
        shape_ok &= row.len() == exp.len();
        for (v, e) in row.iter().zip(exp) {
            worst = worst.max((v - e).abs());
        }
    }
    Check {
        name,
        pass: shape_ok && worst <= tol,
        detail: format!("max |weight - expected| {worst:.3e} (tol {tol:e})"),
    }
}

fn max_imag_weight(c: &CoordinateFit) -> f64 {
    c.weights.imag_parts().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn reproduce_checks(p: &Profile, t: &Trained, id: &Identified, ly: &LyapunovRun) -> Vec<Check> {
    let free = &id.free;
    let base = id.base.as_ref().expect("baseline requested");
    let ratio = base.max_error() / free.max_error();
    let theta = ly.theta.real_parts();
    let mut worst_rel = 0.0f64;
    let mut missing = false;
    for c in &p.lyapunov.coefficients {
        match t.dict.index_of_monomial(&c.exponents) {
            Some(k) => worst_rel = worst_rel.max(((theta[k] - c.value) / c.value).abs()),
            None => missing = true,
        }
    }
    let [lo, hi] = p.lyapunov.origin_band;
    vec![
        table_check("table1_f1_log_free", &free.coordinates[0], &p.table1, p.weight_tol),
        table_check("table2_f2_log_free", &free.coordinates[1], &p.table2, p.weight_tol),
        Check {
            name: "grid_error_log_free",
            pass: free.max_error() <= p.grid_error_max,
            detail: format!("{:.3e} (max {:e})", free.max_error(), p.grid_error_max),
        },
        Check {
            name: "baseline_error_ratio",
            pass: ratio >= p.baseline_ratio_min,
            detail: format!("{ratio:.1} (min {})", p.baseline_ratio_min),
        },
        Check {
            name: "baseline_imag_f1",
            pass: max_imag_weight(&base.coordinates[0]) >= p.baseline_imag_min[0],
            detail: format!("{:.3e} (min {:e})", max_imag_weight(&base.coordinates[0]), p.baseline_imag_min[0]),
        },
        Check {
            name: "baseline_imag_f2",
            pass: max_imag_weight(&base.coordinates[1]) >= p.baseline_imag_min[1],
            detail: format!("{:.3e} (min {:e})", max_imag_weight(&base.coordinates[1]), p.baseline_imag_min[1]),
        },
        Check {
            name: "lyapunov_coefficients",
            pass: !missing && worst_rel <= p.lyapunov.rel_tol,
            detail: format!("worst relative deviation {worst_rel:.3} (tol {})", p.lyapunov.rel_tol),
        },
        Check {
            name: "lyapunov_verdict",
            pass: ly.verdict.pass,
            detail: format!(
                "min V {:.3e}, max reversed Lie derivative {:.3e}",
                ly.verdict.min_value, ly.verdict.max_reversed_lie
            ),
        },
        Check {
            name: "lyapunov_origin",
            pass: (lo..=hi).contains(&ly.value_at_origin),
            detail: format!("{:.4} (band [{lo}, {hi}])", ly.value_at_origin),
        },
    ]
}

pub fn reproduce_cmd(o: &Overrides, quick: bool, expected: Option<&PathBuf>) -> Result<(), CliError> {
    let exp = Expected::load(expected.map(PathBuf::as_path))?;
    let p = if quick { &exp.profiles.quick } else { &exp.profiles.full };
    let mut cfg = o.resolve()?;
    if o.config.is_none() {
        cfg.plan.per_axis = p.per_axis;
        cfg.gen.lambda = p.lambda;
    }
    cfg.baseline_s = Some(p.baseline_s);
    if cfg.field != "vanderpol" || cfg.dictionary != "monomials2d:max_i=3,max_j=2" {
        return Err(CliError::config(
            "reproduce needs the vanderpol field and the monomials2d:max_i=3,max_j=2 dictionary".into(),
        ));
    }
    let t = generate_from(cfg)?;
    let l = fit_generator(&t.ts)?;
    let id = identify_all(&t, &l, t.cfg.baseline_s)?;
    let ly = lyapunov_run(&t, &l, None)?;
    let checks = reproduce_checks(p, &t, &id, &ly);

    let mut out = OutputDir::create(&t.cfg.output)?;
    out.matrix("L.csv", &l.matrix)?;
    let metrics = write_identification(&mut out, &id)?;
    out.text("V.txt", &format!("{}\n", polynomial_string(&t.dict, &ly.theta)))?;
    say(format!(
        "profile {} (M = {}, lambda = {:e})",
        if quick { "quick" } else { "full" },
        t.ts.len(),
        t.cfg.gen.lambda
    ));
    for c in &checks {
        say(format!("{:<24} {}  {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.detail));
    }
    let report = json!({
        "profile": if quick { "quick" } else { "full" },
        "checks": checks.iter().map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail})).collect::<Vec<_>>(),
        "identify": metrics,
        "lyapunov_polynomial": polynomial_string(&t.dict, &ly.theta),
    });
    out.json("report.json", &report)?;
    let first_fail = checks.iter().find(|c| !c.pass).map(|c| c.name);
    out.finish("reproduce", &t.cfg, report)?;
    match first_fail {
        None => {
            say("all checks PASS");
            Ok(())
        }
        Some(name) => Err(CliError::new(5, format!("check {name} failed"))),
    }
}
