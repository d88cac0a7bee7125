use std::sync::Arc;

use mcgd::builders::build_benchmark_chain_pair;
use mcgd::data::{make_ar_stream, make_node_dataset, make_noisy_node_dataset};
use mcgd::objectives::{
    assemble_finite_sum, reference_minimum, Component, FeasibleSet, FiniteSumObjective, LogisticLoss, Quadratic,
    Vector,
};
use mcgd::rng;
use mcgd::solver::{
    gap_series, rate_fit, run_ar_mcgd, run_ar_sgdt, run_mcgd, run_sgdt, Loss, NoiseDirection, NoiseSchedule,
    RunOptions, Setting, StepSchedule,
};
use mcgd::markov::TransitionMatrix;
use mcgd::Error;

fn ls_problem(seed: u64, radius: f64) -> (FiniteSumObjective, TransitionMatrix) {
    let data = make_node_dataset(20, 10, seed).unwrap();
    let obj = assemble_finite_sum(data.components(), FeasibleSet::centered_ball(10, radius).unwrap()).unwrap();
    (obj, build_benchmark_chain_pair(20, seed).unwrap().p)
}

fn options(setting: Setting, iterations: usize, seed: u64, log_every: usize) -> RunOptions {
    let mut o = RunOptions::new(setting, iterations, seed);
    o.log_every = log_every;
    o
}

#[test]
fn zero_gradients_leave_the_start_point() {
    let comps: Vec<Arc<dyn Component>> =
        (0..3).map(|_| Arc::new(Quadratic { center: Vector::zeros(2), weight: 0.0 }) as Arc<dyn Component>).collect();
    let obj = assemble_finite_sum(comps, FeasibleSet::centered_ball(2, 5.0).unwrap()).unwrap();
    let chain = TransitionMatrix::from_rows(&vec![vec![1.0 / 3.0; 3]; 3]).unwrap();
    let mut opts = options(Setting::Convex, 200, 1, 1);
    opts.x0 = Some(Vector::from_row_slice(&[1.0, -1.0]));
    let rec = run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.6), &NoiseSchedule::None, &opts).unwrap();
    assert!(rec.iterates_logged.iter().all(|x| x == opts.x0.as_ref().unwrap()));
}

#[test]
fn runs_are_bitwise_deterministic() {
    let (obj, chain) = ls_problem(3, 10.0);
    let opts = options(Setting::Convex, 2000, 9, 7);
    let noise = NoiseSchedule::power(0.3, 0.7);
    let s = StepSchedule::power(1.0, 0.75);
    assert_eq!(run_mcgd(&obj, &chain, &s, &noise, &opts).unwrap(), run_mcgd(&obj, &chain, &s, &noise, &opts).unwrap());
    assert_eq!(run_sgdt(&obj, &chain, 4, &s, &opts).unwrap(), run_sgdt(&obj, &chain, 4, &s, &opts).unwrap());
    let other = options(Setting::Convex, 2000, 10, 7);
    assert_ne!(run_mcgd(&obj, &chain, &s, &noise, &opts).unwrap(), run_mcgd(&obj, &chain, &s, &noise, &other).unwrap());
}

#[test]
fn budget_accounting() {
    let (obj, chain) = ls_problem(4, 10.0);
    let s = StepSchedule::power(1.0, 0.75);
    let mc = run_mcgd(&obj, &chain, &s, &NoiseSchedule::None, &options(Setting::Convex, 500, 1, 1)).unwrap();
    for r in &mc.rows {
        assert_eq!(r.samples_consumed, r.k);
    }
    let budget = 1000;
    for t in [1, 2, 3, 8, 32] {
        let rec = run_sgdt(&obj, &chain, t, &s, &options(Setting::Convex, budget / t, 1, 5)).unwrap();
        assert!(rec.rows.windows(2).all(|w| w[0].samples_consumed < w[1].samples_consumed));
        for r in &rec.rows {
            assert_eq!(r.samples_consumed, t as u64 * r.k);
        }
        assert_eq!(rec.iterations(), (budget / t) as u64);
    }
}

#[test]
fn projected_iterates_stay_feasible_and_respect_step_bound() {
    let (obj, chain) = ls_problem(5, 2.0);
    let rec =
        run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.501), &NoiseSchedule::None, &options(Setting::Convex, 3000, 2, 1))
            .unwrap();
    assert!(rec.iterates_logged.iter().all(|x| obj.set.contains(x, 1e-12)));
    assert_eq!(rec.step_bound_violations, 0);
    let d = obj.grad_bound_d.unwrap();
    for r in &rec.rows {
        assert!(r.step_norm <= d * r.gamma_k * (1.0 + 1e-12));
    }
}

#[test]
fn streamed_ergodic_average_matches_recomputation() {
    let (obj, chain) = ls_problem(6, 10.0);
    let rec = run_mcgd(
        &obj,
        &chain,
        &StepSchedule::power(1.0, 0.75),
        &NoiseSchedule::power(0.5, 0.8),
        &options(Setting::Convex, 5000, 3, 1),
    )
    .unwrap();
    let mut num = Vector::zeros(10);
    let mut den = 0.0;
    for ((r, x), streamed) in rec.rows.iter().zip(&rec.iterates_logged).zip(&rec.ergodic_logged) {
        num += x * r.gamma_k;
        den += r.gamma_k;
        assert!((&num / den - streamed).norm() <= 1e-10);
    }
}

#[test]
fn noise_has_the_scheduled_magnitude() {
    let comps: Vec<Arc<dyn Component>> = vec![Arc::new(Quadratic { center: Vector::zeros(3), weight: 0.0 })];
    let obj = assemble_finite_sum(comps, FeasibleSet::centered_ball(3, 1e6).unwrap()).unwrap();
    let chain = TransitionMatrix::from_rows(&[vec![1.0]]).unwrap();
    let s = StepSchedule::power(1.0, 0.75);
    for dir in [NoiseDirection::SeededRandomUnit, NoiseDirection::Fixed(vec![3.0, 0.0, 4.0])] {
        let noise = NoiseSchedule::Power { c: 2.0, p: 0.7, direction: dir };
        let rec = run_mcgd(&obj, &chain, &s, &noise, &options(Setting::Convex, 50, 4, 1)).unwrap();
        for r in &rec.rows {
            let expected = r.gamma_k * 2.0 * (r.k as f64).powf(-0.7);
            assert!((r.step_norm - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }
}

#[test]
fn gates_refuse_bad_schedules() {
    let (obj, chain) = ls_problem(7, 10.0);
    let o = options(Setting::Convex, 10, 1, 1);
    let bad = |r: mcgd::Result<_>| matches!(r, Err(Error::PreconditionViolation(_)));
    assert!(bad(run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.4), &NoiseSchedule::None, &o)));
    assert!(bad(run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.75), &NoiseSchedule::power(0.5, 0.0), &o)));
    assert!(bad(run_sgdt(&obj, &chain, 2, &StepSchedule::Constant { a: 0.1 }, &o)));
    let mut unsafe_opts = o.clone();
    unsafe_opts.unsafe_schedule = true;
    assert!(run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.4), &NoiseSchedule::None, &unsafe_opts).is_ok());
    // Nonconvex setting needs the full space; convex needs a compact set.
    assert!(bad(run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.75), &NoiseSchedule::None, &options(Setting::Nonconvex, 10, 1, 1))));
    let periodic = TransitionMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let two = assemble_finite_sum(
        obj_components(2),
        FeasibleSet::centered_ball(2, 1.0).unwrap(),
    )
    .unwrap();
    assert!(bad(run_mcgd(&two, &periodic, &StepSchedule::power(1.0, 0.75), &NoiseSchedule::None, &o)));
}

fn obj_components(m: usize) -> Vec<Arc<dyn Component>> {
    (0..m).map(|i| Arc::new(Quadratic { center: Vector::from_element(2, i as f64), weight: 1.0 }) as Arc<dyn Component>).collect()
}

#[test]
fn divergence_is_caught() {
    let obj = assemble_finite_sum(obj_components(1), FeasibleSet::FullSpace).unwrap();
    let chain = TransitionMatrix::from_rows(&[vec![1.0]]).unwrap();
    let mut o = options(Setting::Nonconvex, 5000, 1, 100);
    o.unsafe_schedule = true;
    o.x0 = Some(Vector::from_element(2, 1.0));
    let r = run_mcgd(&obj, &chain, &StepSchedule::Constant { a: 3.0 }, &NoiseSchedule::None, &o);
    assert!(matches!(r, Err(Error::NonFiniteIterate { .. })), "{r:?}");
}

#[test]
fn gaps_vanish_at_the_minimizer() {
    let data = make_node_dataset(20, 10, 8).unwrap();
    let obj = assemble_finite_sum(data.components(), FeasibleSet::centered_ball(10, 10.0).unwrap()).unwrap();
    let (_, f_star) = reference_minimum(&obj).unwrap();
    let chain = build_benchmark_chain_pair(20, 8).unwrap().p;
    let mut o = options(Setting::Convex, 300, 1, 10);
    o.x0 = Some(data.beta_star.clone());
    let rec = run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.75), &NoiseSchedule::None, &o).unwrap();
    let g = gap_series(&rec, f_star);
    assert!(g.points.iter().all(|p| p.gap <= 1e-20 && p.ergodic_gap <= 1e-20 && p.gap >= 0.0));
}

#[test]
fn ergodic_gap_mostly_decreases_after_burn_in() {
    let (obj, chain) = ls_problem(9, 10.0);
    let rec = run_mcgd(&obj, &chain, &StepSchedule::power(1.0, 0.75), &NoiseSchedule::None, &options(Setting::Convex, 20_000, 5, 50))
        .unwrap();
    let g = gap_series(&rec, 0.0);
    let tail: Vec<f64> = g.points.iter().filter(|p| p.k >= 1000).map(|p| p.ergodic_gap).collect();
    let down = tail.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.9 * (tail.len() - 1) as f64, "{down} of {}", tail.len() - 1);
}

#[test]
fn rate_fit_tolerates_multiplicative_noise() {
    let mut r = rng::seeded(17);
    let series: Vec<(f64, f64)> = (1..=400)
        .map(|k| {
            let k = k as f64;
            (k, 2.0 * k.powf(-0.6) * (1.0 + 0.1 * (2.0 * rng::uniform(&mut r) - 1.0)))
        })
        .collect();
    assert!((rate_fit(&series).unwrap().slope + 0.6).abs() <= 0.1);
}

#[test]
fn ar_runs_account_and_replay() {
    let stream = make_ar_stream(6, 2).unwrap();
    let mut held = make_ar_stream(6, 99).unwrap();
    let comps: Vec<Arc<dyn Component>> = (0..50)
        .map(|_| {
            let (xi, y) = held.next_sample();
            Arc::new(LogisticLoss { features: xi, label: y }) as Arc<dyn Component>
        })
        .collect();
    let eval = assemble_finite_sum(comps, FeasibleSet::centered_ball(6, 10.0).unwrap()).unwrap();
    let s = StepSchedule::power(1.0, 0.501);
    let o = options(Setting::Convex, 300, 2, 10);
    let a = run_ar_mcgd(&eval, stream.clone(), Loss::Logistic, &s, &NoiseSchedule::None, &o).unwrap();
    assert_eq!(a, run_ar_mcgd(&eval, stream.clone(), Loss::Logistic, &s, &NoiseSchedule::None, &o).unwrap());
    assert_eq!(a.samples_consumed(), 300);
    let b = run_ar_sgdt(&eval, &stream, Loss::Logistic, 8, &s, &o).unwrap();
    assert_eq!(b.samples_consumed(), 2400);
    assert!(a.iterates_logged.iter().all(|x| eval.set.contains(x, 1e-12)));
}

#[test]
fn ar_labels_flip_at_the_configured_rate() {
    let mut s = make_ar_stream(50, 5).unwrap();
    let n = 100_000;
    let mut flips = 0;
    let mut max_norm: f64 = 0.0;
    for _ in 0..n {
        let (xi, y) = s.next_sample();
        let clean = if s.u().dot(&xi) > 0.0 { 1.0 } else { 0.0 };
        flips += (y != clean) as usize;
        max_norm = max_norm.max(xi.norm());
    }
    let rate = flips as f64 / n as f64;
    assert!((0.19..=0.21).contains(&rate), "{rate}");
    assert!(max_norm.is_finite() && max_norm < 100.0);
}

#[test]
fn node_features_have_identity_covariance() {
    let data = make_noisy_node_dataset(10_000, 4, 0.0, 3).unwrap();
    let mut cov = nalgebra::DMatrix::<f64>::zeros(4, 4);
    for x in &data.features {
        cov += x * x.transpose();
    }
    cov /= 10_000.0;
    let err = (cov - nalgebra::DMatrix::<f64>::identity(4, 4)).abs().max();
    assert!(err <= 0.1, "{err}");
}
