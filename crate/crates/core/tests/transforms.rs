use proptest::prelude::*;
use spikebench_core::transforms::*;

fn gauss(alpha: f64) -> SingularLaw {
    SingularLaw::gaussian(alpha).unwrap()
}

fn poisson(alpha: f64) -> SingularLaw {
    SingularLaw::rect_poisson(alpha, 1.0).unwrap()
}

fn point_mass(alpha: f64) -> SingularLaw {
    SingularLaw::atomic(alpha, vec![1.0], vec![1.0]).unwrap()
}

fn two_atoms(alpha: f64) -> SingularLaw {
    SingularLaw::atomic(alpha, vec![0.5, 1.3], vec![0.4, 0.6]).unwrap()
}

fn empirical(alpha: f64) -> SingularLaw {
    SingularLaw::empirical(alpha, vec![0.2, 0.7, 0.9, 1.1, 1.6]).unwrap()
}

fn all_laws(alpha: f64) -> Vec<SingularLaw> {
    vec![gauss(alpha), poisson(alpha), point_mass(alpha), two_atoms(alpha), empirical(alpha)]
}

/// Marchenko–Pastur moments by direct quadrature of the density on a fine
/// midpoint grid, after the substitution y = c + h·cos φ.
fn mp_moment_oracle(alpha: f64, k: i32) -> f64 {
    let c = 1.0 + alpha;
    let h = 2.0 * alpha.sqrt();
    let n = 200_000;
    let dphi = std::f64::consts::PI / n as f64;
    (0..n)
        .map(|i| {
            let phi = (i as f64 + 0.5) * dphi;
            let y = c + h * phi.cos();
            y.powi(k) * h * h * phi.sin().powi(2) / (2.0 * std::f64::consts::PI * alpha * y) * dphi
        })
        .sum()
}

/// D-transform of the Marchenko–Pastur law through the closed-form Stieltjes
/// transform.
fn mp_d_oracle(alpha: f64, z: f64) -> f64 {
    let a = (1.0 - alpha.sqrt()).powi(2);
    let b = (1.0 + alpha.sqrt()).powi(2);
    let x = z * z;
    let g = (x - 1.0 + alpha - ((x - a) * (x - b)).sqrt()) / (2.0 * alpha * x);
    let phi = z * g;
    phi * (alpha * phi + (1.0 - alpha) / z)
}

#[test]
fn moment_examples() {
    for k in 1..6 {
        assert!((moment(&point_mass(0.6), k).unwrap() - 1.0).abs() < 1e-15);
    }
    let m2 = moment(&gauss(0.6), 2).unwrap();
    assert!((m2 - 1.6).abs() < 1e-12);
    assert!((m2 - mp_moment_oracle(0.6, 2)).abs() < 1e-9);
    for k in 1..7 {
        let m = moment(&gauss(0.3), k).unwrap();
        let o = mp_moment_oracle(0.3, k as i32);
        assert!((m - o).abs() < 1e-8 * o, "k={k}: {m} vs {o}");
    }
    let s = vec![0.5, 1.0, 2.0];
    let e = SingularLaw::empirical(0.6, s.clone()).unwrap();
    let mean_sq = s.iter().map(|x| x * x).sum::<f64>() / 3.0;
    assert!((moment(&e, 1).unwrap() - mean_sq).abs() < 1e-15);
    assert!(moment(&e, 0).is_err());
}

#[test]
fn moment_overflow_is_reported() {
    let e = SingularLaw::empirical(0.5, vec![1e200]).unwrap();
    assert!(matches!(moment(&e, 3), Err(TransformError::NonFinite { .. })));
}

#[test]
fn d_transform_examples() {
    let v = d_transform(&point_mass(1.0), 2.0).unwrap();
    assert!((v - 4.0 / 9.0).abs() < 1e-15);
    let v = d_transform(&point_mass(0.6), 2.0).unwrap();
    assert!((v - 0.4).abs() < 1e-15);
    let z = 1.0 + 0.6f64.sqrt() + 0.5;
    let v = d_transform(&gauss(0.6), z).unwrap();
    assert!((v - mp_d_oracle(0.6, z)).abs() < 1e-8);
    assert!(d_transform(&point_mass(0.6), 1.0).is_err());
    assert!(d_transform(&gauss(0.6), 1.0).is_err());
}

#[test]
fn d_transform_matches_closed_form_over_a_range() {
    for &alpha in &[0.2, 0.6, 1.0] {
        let g = 1.0 + f64::sqrt(alpha);
        for i in 0..40 {
            let z = g + 1e-5 * 1.5f64.powi(i);
            let v = d_transform(&gauss(alpha), z).unwrap();
            let o = mp_d_oracle(alpha, z);
            assert!((v - o).abs() < 1e-11 * o.max(1.0), "alpha {alpha} z {z}: {v} vs {o}");
        }
    }
}

#[test]
fn d_inverse_examples() {
    let z = d_inverse(&point_mass(0.6), 0.4).unwrap();
    assert!((z - 2.0).abs() < 1e-12);
    let z = d_inverse(&gauss(0.6), 0.25).unwrap();
    let oracle = (5.0f64 * 1.15).sqrt();
    assert!((z - oracle).abs() < 1e-10, "{z} vs {oracle}");
    let p = poisson(0.6);
    assert!(matches!(d_inverse(&p, 0.0), Err(TransformError::Domain { .. })));
    let err = d_inverse(&p, 0.5).unwrap_err().to_string();
    assert!(err.contains("h_bar"), "{err}");
    let err = d_inverse(&gauss(0.6), -1.0).unwrap_err().to_string();
    assert!(err.contains("positive"), "{err}");
}

#[test]
fn t_map_examples() {
    assert!((t_map(0.6, 1.0).unwrap() - 3.2).abs() < 1e-15);
    assert!((t_inverse(0.6, 3.2).unwrap() - 1.0).abs() < 1e-15);
    for &a in &[0.1, 0.6, 1.0] {
        assert!((t_inverse(a, 0.0).unwrap() + 1.0).abs() < 1e-15);
    }
    assert!(t_map(0.6, -1.5).is_err());
    assert!(t_inverse(0.6, -0.1).is_err());
    assert!(t_map(1.5, 0.0).is_err());
}

#[test]
fn rect_r_examples() {
    for law in all_laws(0.6) {
        assert_eq!(rect_r(&law, 0.0).unwrap(), 0.0);
    }
    assert!((rect_r(&poisson(0.6), 0.5).unwrap() - 1.0).abs() < 1e-15);
    for i in 0..=50 {
        let z = 0.5 * i as f64 / 50.0;
        let c = rect_r(&gauss(0.6), z).unwrap();
        assert!((c - z).abs() < 1e-6, "z={z}: {c}");
    }
    let e = edges(&gauss(0.6)).unwrap();
    assert!(rect_r(&gauss(0.6), e.h_bar).is_err());
}

#[test]
fn rect_r_derivative_examples() {
    assert!((rect_r_derivative(&poisson(0.6), 0.5).unwrap() - 4.0).abs() < 1e-14);
    let d = rect_r_derivative(&gauss(0.6), 0.2).unwrap();
    assert!((d - 1.0).abs() < 1e-4, "{d}");
    assert!((d - 1.0).abs() < 1e-10, "analytic derivative is exact: {d}");
    for i in 1..=18 {
        let z = 0.05 * i as f64;
        let exact = rect_r_derivative(&poisson(0.6), z).unwrap();
        let fd = rect_r_derivative_fd(&poisson(0.6), z).unwrap();
        assert!((fd - exact).abs() < 1e-6 * exact.max(1.0), "z={z}: {fd} vs {exact}");
    }
    assert!(matches!(rect_r_derivative_fd(&poisson(0.6), 0.0), Err(TransformError::Boundary { .. })));
}

#[test]
fn rect_r_derivative_agrees_with_finite_differences() {
    for law in [gauss(0.6), two_atoms(0.6), empirical(0.4), point_mass(0.6)] {
        let e = edges(&law).unwrap();
        let top = if e.h_bar.is_finite() { 0.8 * e.h_bar } else { 3.0 };
        for i in 1..=8 {
            let z = top * i as f64 / 8.0;
            let a = rect_r_derivative(&law, z).unwrap();
            let fd = rect_r_derivative_fd(&law, z).unwrap();
            assert!((a - fd).abs() < 1e-6 * a.abs().max(1.0), "{law:?} z={z}: {a} vs {fd}");
        }
        let m2 = moment(&law, 1).unwrap();
        assert!((rect_r_derivative(&law, 0.0).unwrap() - m2).abs() < 1e-15);
    }
}

#[test]
fn edge_examples() {
    assert_eq!(edges(&point_mass(0.6)).unwrap().gamma_bar, 1.0);
    assert!(edges(&point_mass(0.6)).unwrap().h_bar.is_infinite());
    let e = edges(&gauss(0.6)).unwrap();
    assert!((e.gamma_bar - (1.0 + 0.6f64.sqrt())).abs() < 1e-15);
    assert!((e.gamma_bar - 1.7746).abs() < 1e-4);
    assert!((e.h_bar - 1.0 / 0.6f64.sqrt()).abs() < 1e-12, "{}", e.h_bar);
    let p = edges(&poisson(0.6)).unwrap();
    assert!(p.h_bar < 1.0 / 0.6f64.sqrt());
    let just_above = d_transform(&poisson(0.6), p.gamma_bar * (1.0 + 1e-12)).unwrap();
    assert!((just_above - p.h_bar).abs() < 1e-5);
}

#[test]
fn cumulant_examples() {
    let pm: Vec<f64> = (1..=8).map(|k| moment(&poisson(0.6), k).unwrap()).collect();
    let seq = cumulants_from_moments(&pm, 0.6, 8).unwrap();
    for j in 1..=8 {
        assert!((seq.kappa(j).unwrap() - 1.0).abs() < 1e-8, "kappa_{}", 2 * j);
    }
    let seq = cumulants_from_moments(&[2.5], 0.6, 1).unwrap();
    assert_eq!(seq.kappa(1), Some(2.5));
    let mp: Vec<f64> = (1..=5).map(|k| moment(&gauss(0.6), k).unwrap()).collect();
    let seq = cumulants_from_moments(&mp, 0.6, 5).unwrap();
    assert!((seq.kappa(1).unwrap() - 1.0).abs() < 1e-14);
    for j in 2..=5 {
        assert!(seq.kappa(j).unwrap().abs() < 1e-7, "kappa_{}", 2 * j);
    }
}

#[test]
fn cumulant_errors() {
    assert!(matches!(
        cumulants_from_moments(&[1.0; 20], 0.6, 17),
        Err(TransformError::OrderCap { .. })
    ));
    assert!(matches!(
        cumulants_from_moments(&[1.0, 2.0], 0.6, 3),
        Err(TransformError::InsufficientMoments { .. })
    ));
    let huge = [1.0, 1e13, 1e26];
    match cumulants_from_moments(&huge, 0.6, 3) {
        Err(TransformError::Instability { order, .. }) => assert_eq!(order, 2),
        other => panic!("expected instability, got {other:?}"),
    }
}

/// Moments from cumulants by brute-force expansion over the defining
/// identity: compose the truncated series numerically at several small
/// arguments and fit the Taylor coefficients.
fn forward_oracle(kappas: &[f64], alpha: f64) -> Vec<f64> {
    // Solve m order by order against the implicit relation
    // M(x / T(C(x))) = C(x), using exact polynomial arithmetic on f64 vectors
    // written out independently of the library's series helpers.
    let j = kappas.len();
    let mut c = vec![0.0; j + 1];
    c[1..].copy_from_slice(kappas);
    let mult = |a: &[f64], b: &[f64]| {
        let mut o = vec![0.0; j + 1];
        for i in 0..=j {
            for k in 0..=j - i {
                o[i + k] += a[i] * b[k];
            }
        }
        o
    };
    let c2 = mult(&c, &c);
    let t: Vec<f64> = (0..=j).map(|k| (k == 0) as i32 as f64 + (1.0 + alpha) * c[k] + alpha * c2[k]).collect();
    // 1/T by long division
    let mut inv = vec![0.0; j + 1];
    inv[0] = 1.0;
    for k in 1..=j {
        inv[k] = -(1..=k).map(|i| t[i] * inv[k - i]).sum::<f64>();
    }
    let mut w = vec![0.0; j + 1];
    w[1..].copy_from_slice(&inv[..j]);
    let mut m = vec![0.0; j];
    let mut pw = vec![w.clone()];
    for _ in 1..j {
        let next = mult(pw.last().unwrap(), &w);
        pw.push(next);
    }
    for order in 1..=j {
        let mut acc = 0.0;
        for k in 1..order {
            acc += m[k - 1] * pw[k - 1][order];
        }
        m[order - 1] = (c[order] - acc) / pw[order - 1][order];
    }
    m
}

#[test]
fn poisson_moments_match_forward_oracle() {
    let m = forward_oracle(&[1.0; 6], 0.6);
    for k in 1..=6 {
        let v = moment(&poisson(0.6), k).unwrap();
        assert!((v - m[k - 1]).abs() < 1e-10 * m[k - 1], "k={k}");
    }
    assert!((m[1] - 2.6).abs() < 1e-12);
}

#[test]
fn stationary_examples() {
    for law in all_laws(0.6) {
        assert_eq!(high_temp_stationary(&law, 0.0).unwrap(), (1.0, 1.0));
    }
    for &theta in &[0.05, 0.1, 0.2, 0.3, 0.5] {
        let (z1, z2) = high_temp_stationary(&poisson(0.6), theta).unwrap();
        let t2 = theta * theta;
        assert!((z1 - 1.0 - t2 / (1.0 - t2)).abs() < 1e-8, "theta={theta}");
        assert!((z2 - (0.6 * z1 - 0.6 + 1.0)).abs() < 1e-15);
    }
    let (z1, _) = high_temp_stationary(&gauss(0.6), 0.3).unwrap();
    assert!((z1 - 1.09).abs() < 1e-6);
    let e = edges(&gauss(0.6)).unwrap();
    let too_hot = (e.h_bar * 1.2).sqrt();
    assert!(matches!(
        high_temp_stationary(&gauss(0.6), too_hot),
        Err(TransformError::LowTemperature { .. })
    ));
}

#[test]
fn stationary_point_reproduces_rect_r() {
    for law in all_laws(0.6) {
        let e = edges(&law).unwrap();
        let top = if e.h_bar.is_finite() { e.h_bar } else { 4.0 };
        for i in 1..=20 {
            let t2 = top * i as f64 / 21.0;
            let (z1, _) = high_temp_stationary(&law, t2.sqrt()).unwrap();
            let c = rect_r(&law, t2).unwrap();
            assert!((z1 - 1.0 - c).abs() < 1e-7, "{law:?} theta^2={t2}: {} vs {c}", z1 - 1.0);
        }
    }
}

#[test]
fn d_transform_is_strictly_decreasing() {
    for law in all_laws(0.6) {
        let g = edges(&law).unwrap().gamma_bar;
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let z = g + 1e-4 + (10.0 - 1e-4) * i as f64 / 99.0;
            let v = d_transform(&law, z).unwrap();
            assert!(v > 0.0 && v < prev, "{law:?} at z={z}");
            prev = v;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn t_round_trip(alpha in 0.01f64..=1.0, z in -1.0f64..10.0) {
        let back = t_inverse(alpha, t_map(alpha, z).unwrap()).unwrap();
        prop_assert!((back - z).abs() < 1e-12 * z.abs().max(1.0));
    }

    #[test]
    fn d_round_trip(alpha in 0.05f64..=1.0, which in 0usize..5, offset in 1e-3f64..20.0) {
        let law = all_laws(alpha).swap_remove(which);
        let g = edges(&law).unwrap().gamma_bar;
        let z = g + offset;
        let y = d_transform(&law, z).unwrap();
        let back = d_inverse(&law, y).unwrap();
        prop_assert!((back - z).abs() < 1e-9 * z.max(1.0), "{} vs {}", back, z);
    }

    #[test]
    fn moment_cumulant_round_trip(alpha in 0.1f64..=1.0, which in 0usize..5, order in 1usize..=8) {
        let law = all_laws(alpha).swap_remove(which);
        let m: Vec<f64> = (1..=order).map(|k| moment(&law, k).unwrap()).collect();
        let seq = cumulants_from_moments(&m, alpha, order).unwrap();
        prop_assert!((seq.kappa(1).unwrap() - m[0]).abs() == 0.0);
        let back = moments_from_cumulants(&seq);
        let oracle = forward_oracle(seq.as_slice(), alpha);
        for k in 0..order {
            prop_assert!((back[k] - m[k]).abs() < 1e-8 * m[k].abs().max(1.0));
            prop_assert!((oracle[k] - m[k]).abs() < 1e-8 * m[k].abs().max(1.0));
        }
    }
}
