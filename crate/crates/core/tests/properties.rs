use koopgen_core::edmd::linalg::{frobenius, frobenius_c, lstsq, to_complex, RCOND};
use koopgen_core::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit() -> impl Strategy<Value = f64> {
    -1.0f64..1.0
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flow_is_a_semigroup(x1 in unit(), x2 in unit(), t in prop::sample::select(vec![0.25, 0.5]), s in prop::sample::select(vec![0.25, 0.5])) {
        let flow = Flow::new(vanderpol());
        let st = &flow.settings;
        let two = flow.flow_to(&flow.flow_to(&[x1, x2], t).unwrap(), s).unwrap();
        let one = flow.flow_to(&[x1, x2], t + s).unwrap();
        let gap = norm(&[two[0] - one[0], two[1] - one[1]]);
        prop_assert!(gap <= 10.0 * (st.rel_tol * norm(&one) + st.abs_tol), "gap {gap}");
    }

    #[test]
    fn flow_is_deterministic(x1 in unit(), x2 in unit(), t in 0.0f64..1.0) {
        let a = Flow::new(vanderpol()).flow_to(&[x1, x2], t).unwrap();
        let b = Flow::new(vanderpol()).flow_to(&[x1, x2], t).unwrap();
        prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
        prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn linear_flow_is_exponential(x in unit(), t in 0.0f64..1.0, a in prop::sample::select(vec![-1.0, 1.0])) {
        let flow = Flow::new(linear_1d(a));
        let got = flow.flow_to(&[x], t).unwrap()[0];
        let exact = x * (a * t).exp();
        prop_assert!((got - exact).abs() <= flow.settings.rel_tol * exact.abs() + flow.settings.abs_tol);
    }

    #[test]
    fn reversal_is_an_involution(x1 in -3.0f64..3.0, x2 in -3.0f64..3.0) {
        let f = vanderpol();
        let r = reverse(&f);
        prop_assert!(r.is_reversed() && !reverse(&r).is_reversed());
        prop_assert_eq!(reverse(&r).eval(&[x1, x2]), f.eval(&[x1, x2]));
        let (fv, rv) = (f.eval(&[x1, x2]), r.eval(&[x1, x2]));
        prop_assert_eq!(rv, vec![-fv[0], -fv[1]]);
    }

    #[test]
    fn monomial_features_are_products(x1 in unit(), x2 in unit()) {
        let d = Dictionary::monomials_2d(3, 2);
        let z = d.evaluate(&[x1, x2]);
        for i in 0..=3u32 {
            for j in 0..=2u32 {
                let k = d.index_of_monomial(&[i, j]).unwrap();
                prop_assert!((z[k] - x1.powi(i as i32) * x2.powi(j as i32)).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn lie_derivative_matches_finite_differences(x1 in -0.9f64..0.9, x2 in -0.9f64..0.9) {
        let d = Dictionary::monomials_2d(3, 2);
        let flow = Flow::with_settings(vanderpol(), FlowSettings { rel_tol: 1e-13, abs_tol: 1e-15, ..FlowSettings::default() });
        let x = [x1, x2];
        let z0 = d.evaluate(&x);
        let errs: Vec<Vec<f64>> = [1e-4, 1e-5]
            .iter()
            .map(|h| {
                let zh = d.evaluate(&flow.flow_to(&x, *h).unwrap());
                d.entries()
                    .iter()
                    .enumerate()
                    .map(|(k, obs)| ((zh[k] - z0[k]) / h - analytic_generator_apply(&vanderpol(), obs, &x)).abs())
                    .collect()
            })
            .collect();
        for (k, (coarse, fine)) in errs[0].iter().zip(&errs[1]).enumerate() {
            prop_assert!(*coarse <= 50.0 * 1e-4 && *fine <= 50.0 * 1e-5);
            // first-order decay, up to rounding in the difference quotient
            prop_assert!(*fine <= coarse / 5.0 + 1e-9, "k={k}: {:?}", (coarse, fine));
        }
    }

    #[test]
    fn reconstruct_is_linear(
        x1 in unit(), x2 in unit(),
        w1 in prop::collection::vec(-5.0f64..5.0, 24),
        w2 in prop::collection::vec(-5.0f64..5.0, 24),
        ar in -2.0f64..2.0, ai in -2.0f64..2.0,
    ) {
        let d = Dictionary::monomials_2d(3, 2);
        let c = |w: &[f64]| (0..12).map(|k| Complex64::new(w[2 * k], w[2 * k + 1])).collect::<Vec<_>>();
        let alpha = Complex64::new(ar, ai);
        let (c1, c2) = (c(&w1), c(&w2));
        let sum: Vec<Complex64> = c1.iter().zip(&c2).map(|(a, b)| a + alpha * b).collect();
        let wv = |coefficients| WeightVector { coefficients, basis_id: d.basis_id().to_string() };
        let lhs = reconstruct(&d, &wv(sum), &[x1, x2]).unwrap();
        let rhs = reconstruct(&d, &wv(c1), &[x1, x2]).unwrap() + alpha * reconstruct(&d, &wv(c2), &[x1, x2]).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-12);
    }

    #[test]
    fn least_squares_cannot_be_improved(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(40, 6, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(40, 6, |_, _| rng.random_range(-1.0..1.0));
        let (a, _) = lstsq(&x, &y, RCOND).unwrap();
        let base = frobenius(&(&y - &x * &a));
        for _ in 0..20 {
            let d = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let d = &d * (1e-3 / frobenius(&d));
            prop_assert!(frobenius(&(&y - &x * (&a + d))) >= base);
        }
    }

    #[test]
    fn duplicated_column_keeps_predictions(seed in any::<u64>(), dup in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0));
        let (a, r) = lstsq(&x, &y, RCOND).unwrap();
        prop_assert_eq!(r, 5);
        let mut x2 = x.clone().insert_column(5, 0.0);
        x2.set_column(5, &x.column(dup));
        let (a2, r2) = lstsq(&x2, &y, RCOND).unwrap();
        prop_assert_eq!(r2, 5);
        prop_assert!((&x2 * &a2 - &x * &a).abs().max() <= 1e-8);
        // minimum norm: the duplicated weight is split evenly
        prop_assert!((a2.row(dup) - a2.row(5)).abs().max() <= 1e-8);
    }

    #[test]
    fn eigenpairs_have_small_residuals(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let e = eigen(&a, EigenSource::Other).unwrap();
        let ac = to_complex(&a);
        let scale = frobenius(&a);
        for j in 0..n {
            let v = e.vectors.column(j);
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            prop_assert!((&ac * v - v * e.values[j]).norm() <= 1e-8 * scale * v.norm());
        }
    }

    #[test]
    fn log_then_exp_round_trips(seed in any::<u64>(), s in 0.1f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let d = DMatrix::from_diagonal(&DVector::from_fn(4, |_, _| rng.random_range(0.1..3.0)));
        let Some(q_inv) = q.clone().try_inverse() else { return Ok(()) };
        let k = &q * d * q_inv;
        let km = KoopmanMatrix { matrix: k.clone(), s, basis_id: "p".into(), residual: 0.0, rank_used: 4, warning: None };
        let Ok(lg) = log_baseline(&km, LogPolicy::RejectNegativeReal) else { return Ok(()) };
        prop_assume!(lg.diagnostics.eigvec_condition < 1e6);
        let back = matrix_exp_diagonalizable(&lg.matrix, s).unwrap();
        let kc = to_complex(&k);
        prop_assert!(frobenius_c(&(back - &kc)) <= 1e-6 * frobenius_c(&kc));
    }
}

fn vdp_generator(per_axis: usize) -> (Dictionary, GeneratorMatrix, SamplePlan) {
    let dict = Dictionary::monomials_2d(3, 2);
    let plan = SamplePlan::unit_box(2, per_axis);
    let ts = generate(&Flow::new(vanderpol()), &dict, &plan, &GenConfig::new(1e6, 1.0), FailureMode::Strict).unwrap();
    (dict, fit_generator(&ts).unwrap(), plan)
}

#[test]
fn lyapunov_fit_beats_perturbations() {
    let (dict, l, plan) = vdp_generator(30);
    let target = Observable::squared_norm(2);
    let cand = fit_lyapunov(&l, &dict, &plan, &target).unwrap();
    let points = plan.samples().unwrap();
    let residual = |theta: &[f64]| {
        let lw = &l.matrix * DVector::from_column_slice(theta);
        points
            .iter()
            .map(|x| {
                let z = DVector::from_vec(dict.evaluate(x));
                (z.dot(&lw) - target.eval(x)).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let theta = cand.theta.real_parts();
    let base = residual(&theta);
    assert!((base - cand.fit_residual).abs() < 1e-10 * base.max(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let d: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scale = 1e-3 / norm(&d);
        let perturbed: Vec<f64> = theta.iter().zip(&d).map(|(t, e)| t + scale * e).collect();
        assert!(residual(&perturbed) >= base);
    }
}

#[test]
fn lyapunov_verdict_is_scale_invariant() {
    let (dict, l, plan) = vdp_generator(30);
    let cand = fit_lyapunov(&l, &dict, &plan, &Observable::squared_norm(2)).unwrap();
    let grid = SamplePlan::unit_box(2, 50);
    let mut flipped = cand.clone();
    for w in flipped.theta.coefficients.iter_mut() {
        *w = -*w;
    }
    for c in [1e-6, 0.3, 7.0, 1e6] {
        for base in [&cand, &flipped] {
            let mut scaled = base.clone();
            for w in scaled.theta.coefficients.iter_mut() {
                *w *= c;
            }
            assert_eq!(
                verify_candidate(&scaled, &l, &dict, &grid, 0.05).unwrap().pass,
                verify_candidate(base, &l, &dict, &grid, 0.05).unwrap().pass
            );
        }
    }
    assert!(!verify_candidate(&flipped, &l, &dict, &grid, 0.05).unwrap().pass);
}

#[test]
fn log_free_identification_is_real() {
    let (dict, l, _) = vdp_generator(20);
    let report = identify_field(&l, &dict, &dict.coordinate_indices().unwrap(), &vanderpol(), &SamplePlan::unit_box(2, 50)).unwrap();
    for c in &report.coordinates {
        assert!(c.weights.imag_parts().iter().all(|v| *v == 0.0));
        assert_eq!(c.max_imag, 0.0);
    }
}

#[test]
fn tau_does_not_change_labels_at_large_lambda() {
    let dict = Dictionary::monomials_2d(3, 2);
    let flow = Flow::new(vanderpol());
    for x in SamplePlan::unit_box(2, 7).samples().unwrap() {
        let a = label_row(&flow, &dict, &x, &GenConfig::new(1e6, 1.0)).unwrap();
        let b = label_row(&flow, &dict, &x, &GenConfig::new(1e6, 0.5)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-6);
        }
    }
}

#[test]
fn saved_datasets_are_byte_identical() {
    let dict = Dictionary::monomials_2d(3, 2);
    let plan = SamplePlan::unit_box(2, 8);
    let cfg = GenConfig::new(1e5, 1.0);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let ts = generate(&Flow::new(vanderpol()), &dict, &plan, &cfg, FailureMode::Strict).unwrap();
        ts.save(d.path(), &dict, serde_json::Value::Null).unwrap();
    }
    for name in ["X.csv", "Y.csv", "samples.csv", "manifest.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
