use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::models::{FeatureMap, ModelSpec};
use crate::rng::NoiseStream;

fn v(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn linear() -> ModelSpec {
    ModelSpec::linear(0.7, 1.0, 0.9).unwrap()
}

fn state(alg: Algorithm, beta: f64, lambda: f64, mask: Vec<bool>) -> EstimatorState {
    EstimatorState::new(EstimatorConfig::new(alg, beta, lambda, mask), 1).unwrap()
}

/// `n` consecutive transitions of the model started at the origin.
fn path(model: &ModelSpec, features: &FeatureMap, seed: u64, n: usize) -> Vec<Transition> {
    let mut rng = NoiseStream::new(seed, 0);
    let mut x = model.initial_state();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let noise = model.draw_noise(&mut rng);
        let tr = model.step(features, &x, &noise).unwrap();
        x = tr.x_next.clone();
        out.push(tr);
    }
    out
}

fn vector_trace(s: &EstimatorState) -> DVector<f64> {
    match s.eligibility() {
        Eligibility::Vector(z) => z.clone(),
        Eligibility::Matrix(_) => panic!("expected vector trace"),
    }
}

fn matrix_trace(s: &EstimatorState) -> DMatrix<f64> {
    match s.eligibility() {
        Eligibility::Matrix(z) => z.clone(),
        Eligibility::Vector(_) => panic!("expected matrix trace"),
    }
}

#[test]
fn lstd_first_step_is_substitution() {
    // psi = (1, 4), c = 4 at x = 2
    let tr = linear().step(&FeatureMap::quadratic(), &v(2.0), &v(0.0)).unwrap();
    let mut s = state(Algorithm::Lstd, 0.9, 0.0, vec![true, false]);
    s.lstd_step(&tr).unwrap();
    assert_eq!(vector_trace(&s).as_slice(), &[1.0, 4.0]);
    assert_eq!(s.b().as_slice(), &[4.0, 16.0]);
    assert_eq!(s.t(), 1);
}

#[test]
fn lstd_zero_cost_keeps_b_zero() {
    let m = linear().with_cost_scale(0.0);
    let f = FeatureMap::quadratic();
    let mut s = state(Algorithm::Lstd, 0.9, 0.0, f.constant_mask());
    for tr in path(&m, &f, 1, 500) {
        s.update(&tr).unwrap();
    }
    assert!(s.b().iter().all(|b| *b == 0.0));
}

#[test]
fn grad_lstd_trace_recursion() {
    let m = linear();
    let f = FeatureMap::quadratic();
    let mut s = state(Algorithm::GradLstd, 0.9, 0.0, f.constant_mask());
    s.grad_lstd_step(&m.step(&f, &v(1.0), &v(0.0)).unwrap()).unwrap();
    assert_eq!(matrix_trace(&s).as_slice(), &[2.0]);
    s.grad_lstd_step(&m.step(&f, &v(2.0), &v(0.0)).unwrap()).unwrap();
    let z = matrix_trace(&s)[(0, 0)];
    assert!((z - 5.26).abs() < 1e-14, "{z}");
}

#[test]
fn grad_lstd_zero_cost_gradient_gives_zero_theta() {
    let m = linear().with_cost_scale(0.0);
    let f = FeatureMap::quadratic();
    let mut s = state(Algorithm::GradLstd, 0.9, 0.0, f.constant_mask());
    for tr in path(&m, &f, 2, 1000) {
        s.update(&tr).unwrap();
    }
    let est = s.finalize();
    assert_eq!(est.theta, vec![0.0, 0.0]);
    assert_eq!(est.kappa, 0.0);
}

#[test]
fn lambda_one_traces_match_bit_for_bit() {
    let m = linear();
    let f = FeatureMap::quadratic();
    let mask = f.constant_mask();
    let mut a1 = state(Algorithm::Lstd, 0.9, 0.0, mask.clone());
    let mut a3 = state(Algorithm::LstdLambda, 0.9, 1.0, mask.clone());
    let mut a2 = state(Algorithm::GradLstd, 0.9, 0.0, mask.clone());
    let mut a4 = state(Algorithm::GradLstdLambda, 0.9, 1.0, mask);
    for tr in path(&m, &f, 3, 2000) {
        a1.update(&tr).unwrap();
        a3.update(&tr).unwrap();
        a2.update(&tr).unwrap();
        a4.update(&tr).unwrap();
        assert_eq!(a1.eligibility(), a3.eligibility());
        assert_eq!(a2.eligibility(), a4.eligibility());
    }
}

#[test]
fn lambda_zero_traces_collapse() {
    let m = linear();
    let f = FeatureMap::quadratic();
    let mut s3 = state(Algorithm::LstdLambda, 0.9, 0.0, f.constant_mask());
    let mut s4 = state(Algorithm::GradLstdLambda, 0.9, 0.0, f.constant_mask());
    for tr in path(&m, &f, 4, 200) {
        s3.update(&tr).unwrap();
        s4.update(&tr).unwrap();
        assert_eq!(vector_trace(&s3), tr.psi);
        assert_eq!(matrix_trace(&s4), tr.grad_psi.columns(1, 1).into_owned());
    }
}

#[test]
fn average_cost_first_step_and_constant_cost() {
    let m = ModelSpec::speed_scaling_exponential(0.5, 1.0).unwrap();
    let f = FeatureMap::speed_scaling();
    let mut tr = m.step(&f, &v(1.0), &v(0.2)).unwrap();
    tr.cost = 3.0;
    let mut s = state(Algorithm::LstdLambdaAvg, 1.0, 0.0, f.constant_mask());
    s.lstd_lambda_avg_step(&tr).unwrap();
    assert_eq!(s.eta(), 3.0);

    let mut s = state(Algorithm::LstdLambdaAvg, 1.0, 0.5, f.constant_mask());
    for mut tr in path(&m, &f, 5, 1000) {
        tr.cost = 7.25;
        s.update(&tr).unwrap();
    }
    assert!(s.b().iter().all(|b| *b == 0.0));
}

#[test]
fn regeneration_resets_trace() {
    let m = ModelSpec::speed_scaling_geometric(0.5, 1.0 / 24.0, 0.04, 1.0).unwrap();
    let f = FeatureMap::speed_scaling();
    let d = 1.0 / 24.0;
    let mut s = state(Algorithm::RegenLstd, 1.0, 0.0, f.constant_mask());
    // x = 96 delta does not empty the queue; x = 0 does.
    s.update(&m.step(&f, &v(96.0 * d), &v(0.0)).unwrap()).unwrap();
    s.update(&m.step(&f, &v(0.0), &v(10.0 * d)).unwrap()).unwrap();
    let tr = m.step(&f, &v(10.0 * d), &v(0.0)).unwrap();
    s.update(&tr).unwrap();
    let expected = &tr.psi - s.eta_psi();
    assert_eq!(vector_trace(&s), expected);
}

#[test]
fn regen_without_regeneration_matches_average_cost_lambda_one() {
    let m = ModelSpec::speed_scaling_geometric(0.5, 1.0 / 24.0, 0.04, 1.0).unwrap();
    let f = FeatureMap::speed_scaling();
    let mask = f.constant_mask();
    let mut regen = state(Algorithm::RegenLstd, 1.0, 0.0, mask.clone());
    let mut regen_l = state(Algorithm::RegenLstdLambda, 1.0, 1.0, mask.clone());
    let mut avg = state(Algorithm::LstdLambdaAvg, 1.0, 1.0, mask);
    for mut tr in path(&m, &f, 6, 3000) {
        tr.regen = false;
        regen.update(&tr).unwrap();
        regen_l.update(&tr).unwrap();
        avg.update(&tr).unwrap();
        assert_eq!(regen.eligibility(), avg.eligibility());
        assert_eq!(regen.b(), avg.b());
        assert_eq!(regen_l.m(), avg.m());
    }
}

#[test]
fn running_means_telescope() {
    let m = linear();
    let f = FeatureMap::quadratic();
    let mut s = state(Algorithm::Lstd, 0.9, 0.0, f.constant_mask());
    let mut phi = DVector::zeros(2);
    let mut sum_b = DVector::zeros(2);
    let mut sum_m = DMatrix::zeros(2, 2);
    for (i, tr) in path(&m, &f, 7, 100).iter().enumerate() {
        s.update(tr).unwrap();
        phi = phi * 0.9 + &tr.psi;
        sum_b += &phi * tr.cost;
        sum_m += &tr.psi * tr.psi.transpose();
        let n = (i + 1) as f64;
        let db = (s.b() - &sum_b / n).norm() / (sum_b.norm() / n).max(1.0);
        let dm = (s.m() - &sum_m / n).norm() / (sum_m.norm() / n).max(1.0);
        assert!(db < 1e-12 && dm < 1e-12, "t={n}: {db} {dm}");
    }
}

#[test]
fn cost_scale_doubles_theta_exactly() {
    let f = FeatureMap::quadratic();
    for alg in [Algorithm::Lstd, Algorithm::GradLstd, Algorithm::LstdLambda, Algorithm::GradLstdLambda] {
        let mut one = state(alg, 0.9, 0.5, f.constant_mask());
        let mut two = state(alg, 0.9, 0.5, f.constant_mask());
        let p1 = path(&linear(), &f, 8, 5000);
        let p2 = path(&linear().with_cost_scale(2.0), &f, 8, 5000);
        for (a, b) in p1.iter().zip(&p2) {
            one.update(a).unwrap();
            two.update(b).unwrap();
        }
        assert_eq!(&(one.b() * 2.0), two.b(), "{alg}");
        let (t1, t2) = (one.finalize(), two.finalize());
        for (a, b) in t1.theta.iter().zip(&t2.theta) {
            assert_eq!(2.0 * a, *b, "{alg}");
        }
    }
}

#[test]
fn masked_coordinate_reported_as_zero() {
    let f = FeatureMap::quadratic();
    let mut s = state(Algorithm::GradLstd, 0.9, 0.0, f.constant_mask());
    for tr in path(&linear(), &f, 9, 5000) {
        s.update(&tr).unwrap();
    }
    let est = s.finalize();
    assert_eq!(est.theta[0], 0.0);
    assert!(est.theta[1] > 1.0 && est.kappa > 0.0);
    assert!(!est.rank_deficient);
}

#[test]
fn constant_recovery_zero_case() {
    let mut rec = ConstantRecovery::new(0.9).unwrap();
    let theta = DVector::zeros(1);
    for i in 0..100 {
        rec.step(0.0, &DVector::from_element(1, i as f64), &theta);
    }
    assert_eq!(rec.kappa(), 0.0);
    assert_eq!(rec.eta(), 0.0);
    assert!(ConstantRecovery::new(1.0).is_err());
}

#[test]
fn configuration_errors() {
    let mask = vec![true, false];
    let bad = |alg, beta, lambda, mask: Vec<bool>| {
        EstimatorState::new(EstimatorConfig::new(alg, beta, lambda, mask), 1).is_err()
    };
    assert!(bad(Algorithm::LstdLambdaAvg, 0.9, 0.0, mask.clone()));
    assert!(bad(Algorithm::RegenLstd, 0.9, 0.0, mask.clone()));
    assert!(bad(Algorithm::Lstd, 1.0, 0.0, mask.clone()));
    assert!(bad(Algorithm::LstdLambda, 0.9, 1.5, mask.clone()));
    assert!(bad(Algorithm::GradLstd, 0.9, 0.0, vec![true]));
    assert!(!bad(Algorithm::GradLstd, 1.0, 0.0, mask));
}

#[test]
fn dimension_mismatch_is_rejected() {
    let f3 = FeatureMap::monomials(&[0.0, 1.0, 2.0]).unwrap();
    let tr = linear().step(&f3, &v(1.0), &v(0.0)).unwrap();
    let mut s = state(Algorithm::Lstd, 0.9, 0.0, vec![true, false]);
    assert!(matches!(s.update(&tr), Err(Error::Dimension { .. })));
    assert_eq!(s.t(), 0);
}

#[test]
fn wrong_step_for_algorithm_is_rejected() {
    let f = FeatureMap::quadratic();
    let tr = linear().step(&f, &v(1.0), &v(0.0)).unwrap();
    let mut s = state(Algorithm::Lstd, 0.9, 0.0, f.constant_mask());
    assert!(s.grad_lstd_step(&tr).is_err());
}

#[test]
fn algorithm_names_round_trip() {
    for alg in Algorithm::ALL {
        assert_eq!(alg.name().parse::<Algorithm>().unwrap(), alg);
    }
    assert!("td_lambda".parse::<Algorithm>().is_err());
}

proptest! {
    #[test]
    fn grad_lstd_m_stays_symmetric_psd(xs in prop::collection::vec(-5.0f64..5.0, 1..60)) {
        let m = linear();
        let f = FeatureMap::monomials(&[1.0, 2.0, 3.0]).unwrap();
        let mut s = state(Algorithm::GradLstd, 0.9, 0.0, f.constant_mask());
        for x in xs {
            let tr = m.step(&f, &v(x), &v(0.0)).unwrap();
            s.update(&tr).unwrap();
            let mm = s.m();
            prop_assert!((mm - mm.transpose()).norm() == 0.0);
            let eig = mm.clone().symmetric_eigen();
            let scale = mm.norm().max(1.0);
            prop_assert!(eig.eigenvalues.iter().all(|e| *e >= -1e-12 * scale));
        }
    }

    #[test]
    fn identical_input_identical_output(seed in 0u64..1000) {
        let f = FeatureMap::quadratic();
        let p = path(&linear(), &f, seed, 300);
        let run = || {
            let mut s = state(Algorithm::GradLstdLambda, 0.9, 0.5, f.constant_mask());
            for tr in &p {
                s.update(tr).unwrap();
            }
            s.finalize()
        };
        let (a, b) = (run(), run());
        prop_assert_eq!(a.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                        b.theta.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.kappa.to_bits(), b.kappa.to_bits());
    }
}
