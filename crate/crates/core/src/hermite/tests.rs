use super::*;
use crate::sampling::LatentCoupling;
use std::f64::consts::PI;

fn params(beta_u: f64, beta_v: f64, coupling: LatentCoupling) -> McmParams {
    McmParams::new(64, 0.0, beta_u, beta_v, coupling)
}

#[test]
fn probabilists_values() {
    let p = HermiteConvention::Probabilists;
    assert_eq!(hermite_eval(2, 1.0, p).unwrap(), 0.0);
    assert_eq!(hermite_eval(3, 2.0, p).unwrap(), 2.0);
    assert_eq!(hermite_eval(4, 1.0, p).unwrap(), -2.0);
    assert_eq!(hermite_eval(4, -1.0, p).unwrap(), -2.0);
    // direct polynomial oracle
    for z in [-1.7, 0.3, 2.2] {
        let he3 = z * z * z - 3.0 * z;
        assert!((hermite_eval(3, z, p).unwrap() - he3).abs() < 1e-12);
    }
}

#[test]
fn degree_cap_is_enforced() {
    assert!(hermite_eval(MAX_DEGREE, 0.5, HermiteConvention::Normalized).is_ok());
    assert!(matches!(
        hermite_eval(MAX_DEGREE + 1, 0.5, HermiteConvention::Normalized),
        Err(Error::UnsupportedDegree { degree: 31, .. })
    ));
}

#[test]
fn normalized_basis_is_orthonormal() {
    let q = GaussHermite::new(200);
    for i in 0..=12 {
        for j in 0..=12 {
            let e = q.expect(|z| {
                let h = normalized_upto(12, z);
                h[i] * h[j]
            });
            let target = if i == j { 1.0 } else { 0.0 };
            assert!((e - target).abs() < 1e-10, "<h{i}, h{j}> = {e}");
        }
    }
}

#[test]
fn basis_conversion_round_trip() {
    for k in 0..=12 {
        for z in [-3.1, -0.9, 0.0, 0.4, 1.0, 2.7] {
            let he = hermite_eval(k, z, HermiteConvention::Probabilists).unwrap();
            let h = hermite_eval(k, z, HermiteConvention::Normalized).unwrap();
            let scale = he.abs().max(1.0);
            assert!((normalized_to_probabilists(k, h) - he).abs() < 1e-12 * scale);
            assert!((probabilists_to_normalized(k, he) - h).abs() < 1e-12 * scale);
        }
    }
}

#[test]
fn monomial_form_of_h4() {
    let c = normalized_monomial_coeffs(4);
    let s = 24f64.sqrt();
    let expected = [3.0 / s, 0.0, -6.0 / s, 0.0, 1.0 / s];
    for (a, b) in c.iter().zip(expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

/// Independent oracle: trapezoid rule on a fine grid over [-12, 12].
fn trapezoid_coeff(sigma: &Activation, k: usize) -> f64 {
    let n = 400_000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let f = |z: f64| {
        let he = probabilists_upto(k, z)[k] / sqrt_factorial(k);
        sigma.eval(z) * he * (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    };
    let mut s = 0.5 * (f(a) + f(b));
    for i in 1..n {
        s += f(a + h * i as f64);
    }
    s * h
}

#[test]
fn relu_coefficients() {
    let c = activation_coeffs(&Activation::Relu, 8).unwrap();
    assert!((c[0] - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
    assert!((c[1] - 0.5).abs() < 1e-12);
    assert!((c[2] - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-12);
    assert!((c[2] - 0.28209).abs() < 1e-5);
    let c4 = -1.0 / (24f64.sqrt() * (2.0 * PI).sqrt());
    assert!((c[4] - c4).abs() < 1e-12);
    assert!((c[4] + 0.08137).abs() < 1e-4);
    // odd coefficients beyond the first vanish for ReLU
    assert!(c[3].abs() < 1e-12 && c[5].abs() < 1e-12);
    for k in 0..=6 {
        assert!(
            (c[k] - trapezoid_coeff(&Activation::Relu, k)).abs() < 1e-7,
            "k = {k}"
        );
    }
}

#[test]
fn smooth_activation_coefficients_match_trapezoid() {
    let s = Activation::SmoothedRelu { tau: 4.0 };
    let c = activation_coeffs(&s, 6).unwrap();
    for (k, ck) in c.iter().enumerate() {
        assert!((ck - trapezoid_coeff(&s, k)).abs() < 1e-8, "k = {k}");
    }
    let h4 = activation_coeffs(&Activation::hermite(4), 8).unwrap();
    for (k, ck) in h4.iter().enumerate() {
        let target = if k == 4 { 1.0 } else { 0.0 };
        assert!((ck - target).abs() < 1e-12);
    }
}

#[test]
fn rough_custom_activation_reports_nonconvergence() {
    let sigma = Activation::Custom {
        value: std::sync::Arc::new(|z: f64| z.abs().sqrt()),
        derivative: None,
        kinks: vec![],
    };
    assert!(matches!(
        activation_coeffs(&sigma, 4),
        Err(Error::Quadrature { .. })
    ));
}

#[test]
fn likelihood_closed_forms() {
    let indep = params(5.0, 10.0, LatentCoupling::Independent);
    let sign = params(5.0, 10.0, LatentCoupling::SignMatched);
    assert_eq!(likelihood_coeff_exact(&indep, 0, 0).unwrap(), 1.0);
    assert!((likelihood_coeff_exact(&indep, 2, 0).unwrap() - 5.0 / 2f64.sqrt()).abs() < 1e-12);
    let c11 = (50.0f64 / 11.0).sqrt() * (2.0 / PI).sqrt();
    assert!((likelihood_coeff_exact(&sign, 1, 1).unwrap() - c11).abs() < 1e-12);
    assert_eq!(likelihood_coeff_exact(&indep, 1, 1).unwrap(), 0.0);
    let c04 = -2.0 * (10.0f64 / 11.0).powi(2) / 24f64.sqrt();
    assert!((likelihood_coeff_exact(&indep, 0, 4).unwrap() - c04).abs() < 1e-12);
    let m = McmParams::new(64, 1.0, 5.0, 10.0, LatentCoupling::Independent);
    assert!(likelihood_coeff_exact(&m, 1, 1).is_err());
}

#[test]
fn likelihood_monte_carlo_examples() {
    let mut rng = RngHandle::new(17);
    let indep = params(5.0, 10.0, LatentCoupling::Independent);
    let sign = params(5.0, 10.0, LatentCoupling::SignMatched);
    let n = 1_000_000;
    let c00 = likelihood_coeff(&indep, 0, 0, n, None, &mut rng).unwrap();
    assert_eq!(c00.estimate, 1.0);
    let c20 = likelihood_coeff(&indep, 2, 0, n, Some(0.01), &mut rng).unwrap();
    assert!((c20.estimate - 3.5355).abs() < 0.03, "{c20:?}");
    let c11 = likelihood_coeff(&sign, 1, 1, n, None, &mut rng).unwrap();
    assert!(
        (c11.estimate - 1.7012).abs() < 3.0 * c11.std_error + 1e-3,
        "{c11:?}"
    );
    let c04 = likelihood_coeff(
        &params(0.0, 10.0, LatentCoupling::Independent),
        0,
        4,
        n,
        None,
        &mut rng,
    )
    .unwrap();
    assert!(
        (c04.estimate + 0.33742).abs() < 3.0 * c04.std_error,
        "{c04:?}"
    );
    assert!(c04.require(1e-9).is_err());
}

#[test]
fn closed_forms_agree_with_monte_carlo_up_to_degree_four() {
    for (seed, coupling) in [
        LatentCoupling::Independent,
        LatentCoupling::SignMatched,
        LatentCoupling::PartialSign { q: 0.4 },
    ]
    .into_iter()
    .enumerate()
    {
        let p = params(2.0, 6.0, coupling);
        let table = likelihood_coeffs_mc(&p, 4, 400_000, &mut RngHandle::new(seed as u64)).unwrap();
        for i in 0..=4 {
            for j in 0..=4 - i {
                let exact = likelihood_coeff_exact(&p, i, j).unwrap();
                let mc = table[i][j];
                assert!(
                    (mc.estimate - exact).abs() <= 3.0 * mc.std_error + 1e-12,
                    "{coupling:?} ({i},{j}): {mc:?} vs {exact}"
                );
            }
        }
    }
}

#[test]
fn independent_latents_factorize_and_odd_cumulant_terms_vanish() {
    let p = params(1.5, 4.0, LatentCoupling::Independent);
    let t = likelihood_coeffs_mc(&p, 6, 1_000_000, &mut RngHandle::new(23)).unwrap();
    for i in 0..=6 {
        for j in 0..=6 - i {
            let prod = t[i][0].estimate * t[0][j].estimate;
            let err = t[i][j].std_error
                + t[i][0].std_error * t[0][j].estimate.abs()
                + t[0][j].std_error * t[i][0].estimate.abs();
            assert!(
                (t[i][j].estimate - prod).abs() < 3.0 * err + 1e-12,
                "({i},{j})"
            );
        }
    }
    for j in [1, 3, 5] {
        assert!(t[0][j].estimate.abs() < 3.0 * t[0][j].std_error);
        assert_eq!(likelihood_coeff_exact(&p, 0, j).unwrap(), 0.0);
    }
}

fn relu_series(coupling: LatentCoupling) -> HermiteSeries {
    HermiteSeries::closed_form(&Activation::Relu, &params(5.0, 10.0, coupling), 8).unwrap()
}

#[test]
fn loss_at_origin_is_one() {
    for coupling in [LatentCoupling::Independent, LatentCoupling::SignMatched] {
        assert_eq!(
            population_loss(&relu_series(coupling), 0.0, 0.0).unwrap(),
            1.0
        );
    }
}

#[test]
fn overlaps_outside_validity_region_are_rejected() {
    let s = relu_series(LatentCoupling::Independent);
    assert!(population_loss(&s, 0.5, 0.0).is_err());
    assert!(population_gradient(&s, 0.0, -0.6).is_err());
}

#[test]
fn gradient_matches_finite_differences_on_grid() {
    for coupling in [LatentCoupling::Independent, LatentCoupling::SignMatched] {
        let s = relu_series(coupling);
        let h = 1e-5;
        for a in 0..10 {
            for b in 0..10 {
                let au = -0.3 + 0.6 * a as f64 / 9.0;
                let av = -0.3 + 0.6 * b as f64 / 9.0;
                let (gu, gv) = population_gradient(&s, au, av).unwrap();
                let fu = (population_loss(&s, au + h, av).unwrap()
                    - population_loss(&s, au - h, av).unwrap())
                    / (2.0 * h);
                let fv = (population_loss(&s, au, av + h).unwrap()
                    - population_loss(&s, au, av - h).unwrap())
                    / (2.0 * h);
                assert!(
                    (gu - fu).abs() <= 1e-6 * fu.abs().max(1e-3),
                    "{au},{av}: {gu} vs {fu}"
                );
                assert!(
                    (gv - fv).abs() <= 1e-6 * fv.abs().max(1e-3),
                    "{au},{av}: {gv} vs {fv}"
                );
            }
        }
    }
}

#[test]
fn origin_is_stationary_with_mixed_curvature_from_c11() {
    let s = relu_series(LatentCoupling::SignMatched);
    let (gu, gv) = population_gradient(&s, 0.0, 0.0).unwrap();
    // c^sigma_1 c^L_10 and c^sigma_1 c^L_01 vanish since the planted mean is zero
    assert!(gu.abs() < 1e-15 && gv.abs() < 1e-15);
    let h = 1e-4;
    let d_uv = (population_gradient(&s, h, 0.0).unwrap().1
        - population_gradient(&s, -h, 0.0).unwrap().1)
        / (2.0 * h);
    let expected = -0.5 * 2f64.sqrt() * s.c_l(1, 1) * s.c_sigma(2);
    assert!((d_uv - expected).abs() < 1e-6, "{d_uv} vs {expected}");
}

#[test]
fn cumulant_gradient_is_cubic_for_independent_latents() {
    let s = relu_series(LatentCoupling::Independent);
    let xs: Vec<f64> = (0..10).map(|k| 1e-3 * 10f64.powf(k as f64 / 9.0)).collect();
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .map(|&a| {
            (
                a.ln(),
                population_gradient(&s, 0.0, a).unwrap().1.abs().ln(),
            )
        })
        .collect();
    let slope = crate::stats::ols(&pts).slope;
    assert!((slope - 3.0).abs() < 0.05, "{slope}");
    let lead = -2.0 * s.c_l(0, 4) * s.c_sigma(4);
    let g = population_gradient(&s, 0.0, 1e-3).unwrap().1;
    assert!((g / (lead * 1e-9) - 1.0).abs() < 1e-4);
}

#[test]
fn search_coefficients() {
    let indep = effective_search_coeffs(&relu_series(LatentCoupling::Independent)).unwrap();
    assert_eq!(indep.c11, 0.0);
    assert!(indep.c20 > 0.0 && indep.c04 > 0.0);
    let sign = effective_search_coeffs(&relu_series(LatentCoupling::SignMatched)).unwrap();
    assert!(sign.c11 > 0.0);
    for q in [0.05, 0.5] {
        let s = HermiteSeries::closed_form(
            &Activation::Relu,
            &params(0.3, 10.0, LatentCoupling::PartialSign { q }),
            8,
        )
        .unwrap();
        assert!(effective_search_coeffs(&s).unwrap().c11 > 0.0);
    }
    let no_cov = HermiteSeries::closed_form(
        &Activation::Relu,
        &params(0.0, 10.0, LatentCoupling::SignMatched),
        8,
    )
    .unwrap();
    let c = effective_search_coeffs(&no_cov).unwrap();
    assert_eq!((c.c20, c.c11), (0.0, 0.0));

    let linear = HermiteSeries::closed_form(
        &Activation::identity(),
        &params(5.0, 10.0, LatentCoupling::Independent),
        8,
    )
    .unwrap();
    assert!(matches!(
        effective_search_coeffs(&linear),
        Err(Error::AssumptionViolation(_))
    ));
    let short = HermiteSeries::closed_form(
        &Activation::Relu,
        &params(5.0, 10.0, LatentCoupling::Independent),
        3,
    )
    .unwrap();
    assert!(effective_search_coeffs(&short).is_err());
}

#[test]
fn monte_carlo_independent_series_has_vanishing_c11() {
    let s = HermiteSeries::monte_carlo(
        &Activation::Relu,
        &params(5.0, 10.0, LatentCoupling::Independent),
        4,
        400_000,
        &mut RngHandle::new(4),
    )
    .unwrap();
    assert_eq!(s.c_l(0, 0), 1.0);
    // standard error of h1 h1 under the planted law is about sqrt(6 / n)
    let c = effective_search_coeffs(&s).unwrap();
    let scale = 0.5 * multinomial_weight(1, 1) * s.c_sigma(2);
    assert!(c.c11.abs() < 3.0 * scale * (6.0f64 / 400_000.0).sqrt());
}

#[test]
fn multinomial_weights() {
    assert_eq!(multinomial_weight(0, 0), 1.0);
    assert_eq!(multinomial_weight(3, 0), 1.0);
    assert!((multinomial_weight(1, 1) - 2f64.sqrt()).abs() < 1e-15);
    assert!((multinomial_weight(2, 2) - 6f64.sqrt()).abs() < 1e-14);
    assert!((multinomial_weight(1, 3) - 2.0).abs() < 1e-14);
}

#[test]
fn mixed_term_matches_direct_expansion_of_h2() {
    // h_2(a z1 + b z2) with a^2 + b^2 = 1 equals a^2 h_2(z1) + sqrt(2) a b z1 z2 + b^2 h_2(z2)
    let (a, b) = (0.6f64, 0.8f64);
    for &(z1, z2) in &[(0.3, -1.2), (1.5, 0.7), (-2.0, 0.1)] {
        let h2 = |z: f64| (z * z - 1.0) / 2f64.sqrt();
        let lhs = h2(a * z1 + b * z2);
        let rhs = a * a * h2(z1) + multinomial_weight(1, 1) * a * b * z1 * z2 + b * b * h2(z2);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
