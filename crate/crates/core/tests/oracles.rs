//! Checks against values computed independently of this crate.

use koopgen_core::*;

/// Van der Pol field written out by hand (not through `VectorField`).
fn vdp(x: [f64; 2]) -> [f64; 2] {
    [x[1], -x[0] + x[1] - x[0] * x[0] * x[1]]
}

/// Classical fixed-step RK4.
fn rk4(mut x: [f64; 2], t: f64, steps: usize) -> [f64; 2] {
    let h = t / steps as f64;
    let add = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * b[0], a[1] + c * b[1]];
    for _ in 0..steps {
        let k1 = vdp(x);
        let k2 = vdp(add(x, k1, h / 2.0));
        let k3 = vdp(add(x, k2, h / 2.0));
        let k4 = vdp(add(x, k3, h));
        for d in 0..2 {
            x[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
    }
    x
}

// phi(1, [0.5, 0.5]) from an 8th-order reference integration at rel. tolerance 1e-14.
const VDP_REFERENCE: [f64; 2] = [0.7973373055879949, -0.02328091623841167];

#[test]
fn vanderpol_flow_matches_reference_integration() {
    let got = Flow::new(vanderpol()).flow_to(&[0.5, 0.5], 1.0).unwrap();
    for d in 0..2 {
        assert!((got[d] - VDP_REFERENCE[d]).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn vanderpol_flow_matches_fixed_step_rk4() {
    let oracle = rk4([0.5, 0.5], 1.0, 20_000);
    let got = Flow::new(vanderpol()).flow_to(&[0.5, 0.5], 1.0).unwrap();
    for d in 0..2 {
        assert!((got[d] - oracle[d]).abs() < 1e-9);
    }
    // the two oracles agree with each other as well
    assert!((oracle[0] - VDP_REFERENCE[0]).abs() < 1e-12);
}

#[test]
fn tight_tolerance_flow_tracks_reference_closer() {
    let settings = FlowSettings {
        rel_tol: 1e-13,
        abs_tol: 1e-15,
        ..FlowSettings::default()
    };
    let got = Flow::with_settings(vanderpol(), settings).flow_to(&[0.5, 0.5], 1.0).unwrap();
    for d in 0..2 {
        assert!((got[d] - VDP_REFERENCE[d]).abs() < 1e-12);
    }
}

// lambda^2 int_0^1 e^{-lambda s} x2(phi(s, [0.5, 0.5])) ds at lambda = 1e6,
// evaluated with 25-digit arbitrary-precision quadrature.
#[allow(clippy::excessive_precision)]
const VDP_X2_INTEGRAL: f64 = 499999.874_999_156_25;
#[allow(clippy::excessive_precision)]
const VDP_X2_LABEL: f64 = -0.125_000_843_750_570_31;

#[test]
fn vanderpol_resolvent_integral_matches_high_precision_quadrature() {
    let dict = Dictionary::monomials_2d(3, 2);
    let idx = dict.index_of_monomial(&[0, 1]).unwrap();
    let r = truncated_resolvent_integral(&Flow::new(vanderpol()), &dict, &[0.5, 0.5], &GenConfig::new(1e6, 1.0)).unwrap();
    let integral = r.integral()[idx];
    assert!(((integral - VDP_X2_INTEGRAL) / VDP_X2_INTEGRAL).abs() < 1e-9, "{integral}");
    let label = r.label()[idx];
    assert!((label - VDP_X2_LABEL).abs() < 1e-9, "{label}");
    // and the label is within O(1/lambda) of the exact Lie derivative
    assert!((label + 0.125).abs() < 1e-5);
}

#[test]
fn quadrature_routes_agree_on_vanderpol_label() {
    let dict = Dictionary::monomials_2d(3, 2);
    let idx = dict.index_of_monomial(&[0, 1]).unwrap();
    let flow = Flow::new(vanderpol());
    let mut cfg = GenConfig::new(1e6, 1.0);
    cfg.quadrature = Quadrature::SnapshotQuadrature;
    let snap = label_row(&flow, &dict, &[0.5, 0.5], &cfg).unwrap();
    assert!((snap[idx] - VDP_X2_LABEL).abs() < 1e-6);
}

#[test]
fn linear_labels_match_closed_form_resolvent() {
    // x' = a x, z = x^n: label = lambda n a / (lambda - n a) x^n up to O(lambda e^{-(lambda - n a) tau})
    let dict = Dictionary::monomials_1d(&[1, 2, 3]).unwrap();
    for a in [-1.0, 0.5, 2.0] {
        for lambda in [1e3, 1e5] {
            let x = -0.6f64;
            let y = label_row(&Flow::new(linear_1d(a)), &dict, &[x], &GenConfig::new(lambda, 1.0)).unwrap();
            for (k, n) in [1i32, 2, 3].iter().enumerate() {
                let na = *n as f64 * a;
                let exact = lambda * na / (lambda - na) * x.powi(*n);
                assert!((y[k] - exact).abs() < 1e-8 * exact.abs().max(1.0), "a={a} lambda={lambda} n={n}");
            }
        }
    }
}

#[test]
fn projected_and_learned_generators_agree() {
    // exact Lie derivatives of the monomials are in the span for the linear field
    let dict = Dictionary::monomials_1d(&[1, 2, 3]).unwrap();
    let plan = SamplePlan::unit_box(1, 40);
    let exact = project_lie_derivatives(&linear_1d(-2.0), &dict, &plan).unwrap();
    let ts = generate(&Flow::new(linear_1d(-2.0)), &dict, &plan, &GenConfig::new(1e6, 1.0), FailureMode::Strict).unwrap();
    let learned = fit_generator(&ts).unwrap();
    assert!((&exact.matrix - &learned.matrix).abs().max() < 1e-4);
    for k in 0..3 {
        assert!((exact.matrix[(k, k)] + 2.0 * (k + 1) as f64).abs() < 1e-12);
    }
}
