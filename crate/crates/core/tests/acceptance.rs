//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion fails.

use std::time::{Duration, Instant};

use spikebench_core::amp::{amp_step, init_u1, run_amp_from, AmpConfig, AmpState};
use spikebench_core::bayes_theory::{bayes_mse, bbp_top_singular, classify_regime, m_value, q_value, Regime};
use spikebench_core::ensembles::{build_instance, overlap_of, NoiseSpec, SpikedInstance};
use spikebench_core::harness::{fig1_preset, run_experiment, Estimator, ExperimentReport, Fig1Side, Metric, Scale};
use spikebench_core::rng::{derive_seed, rng_from_seed};
use spikebench_core::spectral::{j_scaling, spectral_theory_mse, top_singular_triplet};
use spikebench_core::state_evolution::{
    auxiliary_amp, se_predict_metrics, MCConfig, SeDenoisers, StateEvolution,
};
use spikebench_core::transforms::{cumulants_from_moments, edges, high_temp_stationary, moment, rect_r};
use spikebench_core::{CumulantSequence, SingularLaw};

const ALPHA: f64 = 0.6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_budget(start: Instant, budget: Duration) -> (bool, String) {
    let el = start.elapsed();
    (el <= budget, format!("runtime {:.1}s (budget {}s)", el.as_secs_f64(), budget.as_secs()))
}

fn dims(m: usize) -> (usize, usize) {
    ((ALPHA * m as f64).round() as usize, m)
}

fn instance(ls: f64, spec: &NoiseSpec, m: usize, seed: u64) -> SpikedInstance {
    let (n, m) = dims(m);
    build_instance(ls, spec, n, m, seed).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Eigenvalue moments of XXᵀ for X with i.i.d. N(0, 1/m) entries (Narayana polynomials).
fn marchenko_pastur_moment(alpha: f64, k: u64) -> f64 {
    let binom = |n: u64, r: u64| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    (0..k).map(|j| alpha.powi(j as i32) / (j + 1) as f64 * binom(k, j) * binom(k - 1, j)).sum()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let poisson = SingularLaw::rect_poisson(ALPHA, 1.0).unwrap();
    let r_err = (0..=90)
        .map(|i| {
            let z = i as f64 / 100.0;
            (rect_r(&poisson, z).unwrap() - z / (1.0 - z)).abs()
        })
        .fold(0.0, f64::max);
    let moments: Vec<f64> = (1..=8).map(|k| moment(&poisson, k).unwrap()).collect();
    let kp = cumulants_from_moments(&moments, ALPHA, 8).unwrap();
    let kp_err = kp.as_slice().iter().map(|k| (k - 1.0).abs()).fold(0.0, f64::max);
    let mp: Vec<f64> = (1..=5).map(|k| marchenko_pastur_moment(ALPHA, k)).collect();
    let kg = cumulants_from_moments(&mp, ALPHA, 5).unwrap();
    let k2_err = (kg.as_slice()[0] - 1.0).abs();
    let khigh = kg.as_slice()[1..].iter().map(|k| k.abs()).fold(0.0, f64::max);
    let (fast, rt) = within_budget(start, Duration::from_secs(1));
    outcome(
        r_err < 1e-10 && kp_err < 1e-8 && k2_err < 1e-10 && khigh < 1e-7 && fast,
        format!("rect_r err {r_err:.2e}, Poisson kappa err {kp_err:.2e}, Gaussian kappa2 err {k2_err:.2e}, max |kappa_2j>=4| {khigh:.2e}, {rt}"),
    )
}

fn criterion_2_and_3() -> (Outcome, Outcome) {
    let start = Instant::now();
    let m = 4000;
    let gauss = SingularLaw::gaussian(ALPHA).unwrap();
    let poisson = SingularLaw::rect_poisson(ALPHA, 1.0).unwrap();
    let trials = 20;

    let mut sigma_above = Vec::new();
    let mut overlap_gauss = Vec::new();
    for k in 0..trials {
        let inst = instance(4.0, &NoiseSpec::GaussianIid, m, derive_seed(200, k));
        let (s, u, v) = top_singular_triplet(&inst.y).unwrap();
        sigma_above.push(s);
        overlap_gauss.push(overlap_of(&u, &v, &inst));
    }
    let below = 0.5;
    assert!(edges(&gauss).unwrap().h_bar * below < 1.0);
    let sigma_below: Vec<f64> = (0..trials)
        .map(|k| {
            let inst = instance(below, &NoiseSpec::GaussianIid, m, derive_seed(201, k));
            top_singular_triplet(&inst.y).unwrap().0
        })
        .collect();
    let pred_above = bbp_top_singular(&gauss, 4.0).unwrap();
    let pred_below = edges(&gauss).unwrap().gamma_bar;
    let rel_above = (mean(&sigma_above) - pred_above).abs() / pred_above;
    let rel_below = (mean(&sigma_below) - pred_below).abs() / pred_below;
    let (fast, rt) = within_budget(start, Duration::from_secs(120));
    let c2 = outcome(
        rel_above < 0.02 && rel_below < 0.02 && fast,
        format!(
            "lambda*=4: mean sigma1 {:.4} vs {pred_above:.4} (rel {rel_above:.2e}); lambda*={below}: {:.4} vs edge {pred_below:.4} (rel {rel_below:.2e}); {rt}",
            mean(&sigma_above),
            mean(&sigma_below)
        ),
    );

    let overlap_poisson: Vec<f64> = (0..trials)
        .map(|k| {
            let inst = instance(4.0, &NoiseSpec::RectPoisson { c: 1.0 }, m, derive_seed(300, k));
            let (_, u, v) = top_singular_triplet(&inst.y).unwrap();
            overlap_of(&u, &v, &inst)
        })
        .collect();
    let jg = j_scaling(&gauss, 4.0).unwrap();
    let jp = j_scaling(&poisson, 4.0).unwrap();
    let dg = (mean(&overlap_gauss) - jg).abs();
    let dp = (mean(&overlap_poisson) - jp).abs();
    let mut id_err: f64 = 0.0;
    for law in [&gauss, &poisson] {
        for &ls in &[0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0] {
            for &rho in &[0.25, 1.0, 4.0] {
                let lambda = rho * ls;
                let (os, gs) = spectral_theory_mse(law, lambda, ls).unwrap();
                let j_os = j_scaling(law, ls).unwrap();
                let j_gs = j_scaling(&gauss, lambda).unwrap();
                id_err = id_err.max((gs - os - 0.5 * (j_os - j_gs).powi(2)).abs());
            }
        }
    }
    let c3 = outcome(
        dg < 0.03 && dp < 0.03 && id_err < 1e-12,
        format!(
            "Gaussian overlap {:.4} vs J {jg:.4}; Poisson overlap {:.4} vs J {jp:.4}; MSE identity err {id_err:.1e}",
            mean(&overlap_gauss),
            mean(&overlap_poisson)
        ),
    );
    (c2, c3)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (m, trials, t_max) = (2000, 20u64, 5);
    let cfg = AmpConfig::new(4.0, t_max);
    let kappas = CumulantSequence::rect_poisson(ALPHA, 1.0, 2 * t_max);
    let se = StateEvolution::new(kappas, &cfg, MCConfig::default()).unwrap();
    let states = se.run(4.0, cfg.init_corr, t_max).unwrap();
    let pred = se_predict_metrics(states.last().unwrap());
    let mut emp = vec![0.0; t_max];
    for k in 0..trials {
        let inst = instance(4.0, &NoiseSpec::RectPoisson { c: 1.0 }, m, derive_seed(400, k));
        let u1 = init_u1(&inst, cfg.init_corr, &mut rng_from_seed(derive_seed(401, k))).unwrap();
        let st = run_amp_from(&inst, &cfg, u1).unwrap();
        for (t, r) in st.history.iter().enumerate() {
            emp[t] += r.overlap / trials as f64;
        }
    }
    let gaps: Vec<f64> = (0..t_max).map(|t| (emp[t] - pred[t].overlap).abs()).collect();
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let (fast, rt) = within_budget(start, Duration::from_secs(300));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        worst <= 0.05 && fast,
        format!(
            "AMP [{}] vs SE [{}], max gap {worst:.4}; {rt}",
            fmt(&emp),
            fmt(&pred.iter().map(|p| p.overlap).collect::<Vec<_>>())
        ),
    )
}

fn criterion_5() -> Outcome {
    let (m, trials, t_max) = (2000, 20u64, 4);
    let cfg = AmpConfig::new(4.0, t_max);
    let mut worst: f64 = 0.0;
    let mut worst_trial: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, spec, kappas) in [
        ("Gaussian", NoiseSpec::GaussianIid, CumulantSequence::gaussian(ALPHA, 2 * t_max)),
        ("Poisson", NoiseSpec::RectPoisson { c: 1.0 }, CumulantSequence::rect_poisson(ALPHA, 1.0, 2 * t_max)),
    ] {
        let se = StateEvolution::new(kappas.clone(), &cfg, MCConfig::default()).unwrap();
        let states = se.run(4.0, cfg.init_corr, t_max).unwrap();
        let den = SeDenoisers::from_config(&cfg, ALPHA).unwrap();
        // [observable][t] paired differences aux − AMP, per trial.
        let mut diffs = vec![vec![Vec::new(); t_max]; 3];
        for k in 0..trials {
            let inst = instance(4.0, &spec, m, derive_seed(500, k));
            let (n, mf) = (inst.n() as f64, inst.m() as f64);
            let u1 = init_u1(&inst, cfg.init_corr, &mut rng_from_seed(derive_seed(501, k))).unwrap();
            let aux = auxiliary_amp(&inst, &u1, states.last().unwrap(), &kappas, &den).unwrap();
            let mut state = AmpState::initial(u1, inst.m());
            for t in 0..t_max {
                let u_in = state.u_t.clone();
                state = amp_step(&state, &inst, &cfg).unwrap();
                diffs[0][t].push(overlap_of(&aux.u[t], &aux.v[t], &inst) - state.history[t].overlap);
                diffs[1][t].push(aux.v[t].norm_squared() / mf - state.v_t.norm_squared() / mf);
                diffs[2][t].push(aux.u[t].norm_squared() / n - u_in.norm_squared() / n);
            }
        }
        let mut local: f64 = 0.0;
        for obs in &diffs {
            for d in obs {
                local = local.max(mean(d).abs());
                worst_trial = worst_trial.max(d.iter().map(|x| x.abs()).fold(0.0, f64::max));
            }
        }
        worst = worst.max(local);
        parts.push(format!("{name} max |mean diff| {local:.4}"));
    }
    outcome(
        worst <= 0.02,
        format!(
            "{}; observables: overlap, |v|^2/m, |u|^2/n over t<=4, {trials} trials; largest single-trial diff {worst_trial:.4}",
            parts.join(", ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let gauss = SingularLaw::gaussian(ALPHA).unwrap();
    let poisson = SingularLaw::rect_poisson(ALPHA, 1.0).unwrap();
    let mut notes = Vec::new();

    let mut high_ok = true;
    let mut high_count = 0;
    for law in [&gauss, &poisson] {
        for i in 1..=40 {
            for j in 1..=40 {
                let (lambda, ls) = (0.05 * i as f64, 0.05 * j as f64);
                if classify_regime(law, lambda, ls).unwrap().regime() == Regime::HighTemp {
                    high_count += 1;
                    high_ok &= bayes_mse(law, lambda, ls).unwrap() == 0.5;
                }
            }
        }
    }
    notes.push(format!("HighTemp MSE = 1/2 on {high_count} points: {high_ok}"));

    let lo = 1.2 * ALPHA.sqrt();
    let mq = (0..=200)
        .map(|i| {
            let ls = lo + (10.0 - lo) * i as f64 / 200.0;
            (m_value(&gauss, ls, ls).unwrap() - q_value(&gauss, ls, ls).unwrap()).abs()
        })
        .fold(0.0, f64::max);
    notes.push(format!("matched Gaussian max |M-Q| {mq:.1e}"));

    let delta = 1e-4;
    let mut jump: f64 = 0.0;
    for law in [&gauss, &poisson] {
        let e = edges(law).unwrap();
        // Spike boundary h̄λ* = 1 at fixed λ, then the low-temperature boundaries in λ.
        let ls_b = 1.0 / e.h_bar;
        let mut pairs = vec![];
        for &lambda in &[0.5, 1.0, 2.0, 4.0] {
            pairs.push(((lambda, ls_b - delta), (lambda, ls_b + delta)));
        }
        for &ls in &[1.5 * ls_b, 3.0 * ls_b] {
            let lb = ALPHA / ls;
            pairs.push(((lb - delta, ls), (lb + delta, ls)));
        }
        for &ls in &[0.3 * ls_b, 0.7 * ls_b] {
            let lb = ALPHA * e.h_bar;
            pairs.push(((lb - delta, ls), (lb + delta, ls)));
        }
        for ((l1, s1), (l2, s2)) in pairs {
            jump = jump.max((m_value(law, l1, s1).unwrap() - m_value(law, l2, s2).unwrap()).abs());
            jump = jump.max((q_value(law, l1, s1).unwrap() - q_value(law, l2, s2).unwrap()).abs());
        }
    }
    notes.push(format!("max jump of M, Q across regime boundaries {jump:.1e}"));

    let mut monotone = true;
    let mut first_drop = None;
    for law in [&gauss, &poisson] {
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=80 {
            let ls = 0.1 * i as f64;
            let v = bayes_mse(law, ls, ls).unwrap();
            if v < prev - 1e-12 && first_drop.is_none() {
                first_drop = Some(format!("{:?} lambda*={ls:.1}: {v:.4} < {prev:.4}", law.kind()));
            }
            monotone &= v >= prev - 1e-12;
            prev = v;
        }
    }
    notes.push(match &first_drop {
        None => "Bayes MSE non-decreasing in lambda* at lambda=lambda*".into(),
        Some(d) => format!("Bayes MSE decreases ({d})"),
    });
    outcome(high_ok && mq < 1e-8 && jump < 1e-3 && monotone, notes.join("; "))
}

fn overlap_spread(rep: &ExperimentReport, ls: f64) -> f64 {
    let vals: Vec<f64> = [Estimator::BayesTheory, Estimator::Amp, Estimator::Optspec, Estimator::Gauspec]
        .iter()
        .map(|e| rep.value(*e, ls, Metric::Overlap).unwrap())
        .collect();
    vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let poisson_cfg = fig1_preset(Fig1Side::PoissonMatched, Scale::Desk);
    let gauss_cfg = fig1_preset(Fig1Side::GaussianScaled4, Scale::Desk);
    let poisson = run_experiment(&poisson_cfg).unwrap();
    let gauss = run_experiment(&gauss_cfg).unwrap();
    let (fast, rt) = within_budget(start, Duration::from_secs(600));

    let spread = overlap_spread(&poisson, 8.0).max(overlap_spread(&gauss, 8.0));
    let a = spread <= 0.02;

    let mut b = true;
    let mut b_min_gap = f64::INFINITY;
    for rep in [&poisson, &gauss] {
        for &ls in &[1.5, 2.0, 2.5, 3.0] {
            let amp = rep.value(Estimator::Amp, ls, Metric::Mse).unwrap();
            let bayes = rep.value(Estimator::BayesTheory, ls, Metric::Mse).unwrap();
            b &= amp > bayes;
            b_min_gap = b_min_gap.min(amp - bayes);
        }
    }

    let law = SingularLaw::rect_poisson(ALPHA, 1.0).unwrap();
    let h_bar = edges(&law).unwrap().h_bar;
    let premise = h_bar > 1.0 / ALPHA.sqrt();
    let (mut c_gap, mut c_at) = (0.0f64, 0.0);
    for &ls in &poisson_cfg.lambda_star_grid {
        let g = (poisson.value(Estimator::BayesTheory, ls, Metric::Mse).unwrap()
            - poisson.value(Estimator::Gauspec, ls, Metric::Mse).unwrap())
        .abs();
        if g > c_gap {
            c_gap = g;
            c_at = ls;
        }
    }
    let c = c_gap < 0.02;
    outcome(
        a && b && c && fast,
        format!(
            "(a) overlap spread at lambda*=8 {spread:.4}: {a}; (b) AMP MSE - Bayes MSE on [1.5,3] min {b_min_gap:.4}: {b}; \
             (c) Poisson h_bar {h_bar:.4} vs 1/sqrt(alpha) {:.4} (premise {premise}), max |MSE_mis - MSE_GS| {c_gap:.4} at lambda*={c_at}: {c}; {rt}",
            1.0 / ALPHA.sqrt()
        ),
    )
}

fn criterion_8() -> Outcome {
    let laws = vec![
        SingularLaw::gaussian(ALPHA).unwrap(),
        SingularLaw::rect_poisson(ALPHA, 1.0).unwrap(),
        SingularLaw::atomic(ALPHA, vec![1.0], vec![1.0]).unwrap(),
        SingularLaw::atomic(ALPHA, vec![0.5, 1.5], vec![0.3, 0.7]).unwrap(),
        SingularLaw::empirical(ALPHA, vec![0.3, 0.8, 1.1, 1.4, 2.0]).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for law in &laws {
        let e = edges(law).unwrap();
        let top = if e.h_bar.is_finite() { e.h_bar } else { 4.0 };
        for i in 1..=20 {
            let t2 = top * i as f64 / 21.0;
            let (z1, _) = high_temp_stationary(law, t2.sqrt()).unwrap();
            worst = worst.max((z1 - 1.0 - rect_r(law, t2).unwrap()).abs());
        }
    }
    outcome(worst < 1e-7, format!("max |z1 - 1 - C(theta^2)| {worst:.1e} over {} laws x 20 theta", laws.len()))
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("criterion {k}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };
    report(1, criterion_1());
    let (c2, c3) = criterion_2_and_3();
    report(2, c2);
    report(3, c3);
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7());
    report(8, criterion_8());
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(k, _)| *k).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
