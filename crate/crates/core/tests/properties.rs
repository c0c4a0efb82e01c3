//! Property tests of the harness aggregation and the model invariants.

use gradtd::estimators::solve;
use gradtd::harness::{summarize, AlgoSpec, ExperimentConfig, Histogram, TrialResult};
use gradtd::estimators::{Algorithm, ThetaEstimate};
use gradtd::models::{FeatureMap, ModelSpec};
use gradtd::rng::NoiseStream;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn trial(position: usize, index: u64, theta: [f64; 2]) -> TrialResult {
    TrialResult {
        position,
        label: "lstd".into(),
        lambda: 0.0,
        trial_index: index,
        seed: index,
        estimates: vec![(
            10,
            ThetaEstimate {
                theta: theta.to_vec(),
                kappa: 0.0,
                eta: theta[0],
                rank_deficient: false,
            },
        )],
        trajectory: Vec::new(),
        wall_ms: 0.0,
    }
}

proptest! {
    #[test]
    fn histogram_counts_every_value(values in prop::collection::vec(-1e6f64..1e6, 1..200), bins in 1usize..80) {
        let h = Histogram::new(&values, bins);
        prop_assert_eq!(h.counts.iter().sum::<u64>(), values.len() as u64);
        prop_assert_eq!(h.edges.len(), bins + 1);
        prop_assert!(h.edges.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn summaries_ignore_trial_order(thetas in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40), rot in 0usize..40) {
        let cfg = ExperimentConfig {
            algorithms: vec![AlgoSpec::new(Algorithm::Lstd)],
            iterations: 10,
            bins: 7,
            ..Default::default()
        };
        let trials: Vec<TrialResult> = thetas.iter().enumerate().map(|(i, t)| trial(0, i as u64, [t.0, t.1])).collect();
        let mut shuffled = trials.clone();
        shuffled.rotate_left(rot % trials.len());
        shuffled.reverse();
        let a = summarize(&cfg, &trials);
        prop_assert_eq!(&a, &summarize(&cfg, &shuffled));
        prop_assert!(a[0].coordinates.iter().all(|c| c.variance >= 0.0));
    }

    #[test]
    fn geometric_paths_stay_on_lattice(seed in any::<u64>(), start in 0u32..400) {
        let d = 1.0 / 24.0;
        let m = ModelSpec::speed_scaling_geometric(0.5, d, 0.04, 1.0).unwrap();
        let mut rng = NoiseStream::new(seed, 0);
        let mut x = DVector::from_element(1, start as f64 * d);
        for _ in 0..200 {
            let (next, sens, regen) = m.advance(&x, &m.draw_noise(&mut rng)).unwrap();
            let k = next[0] / d;
            prop_assert!((k - k.round()).abs() < 1e-9 && next[0] >= 0.0);
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&sens[(0, 0)]));
            if regen {
                prop_assert!(x[0] - m.policy(x[0]) < d);
            }
            x = next;
        }
    }

    #[test]
    fn constant_features_have_zero_gradient(x in 0.0f64..50.0) {
        for f in [FeatureMap::quadratic(), FeatureMap::speed_scaling()] {
            let (_, g) = f.eval(&DVector::from_element(1, x)).unwrap();
            for (j, masked) in f.constant_mask().into_iter().enumerate() {
                if masked {
                    prop_assert_eq!(g[(0, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn solve_satisfies_normal_equations(entries in prop::collection::vec(-5.0f64..5.0, 9), rhs in prop::collection::vec(-5.0f64..5.0, 3)) {
        let m = DMatrix::from_row_slice(3, 3, &entries);
        let b = DVector::from_column_slice(&rhs);
        let (theta, _) = solve(&m, &b);
        // Least-squares solutions satisfy M^T (M theta - b) = 0.
        let resid = m.transpose() * (&m * &theta - &b);
        let scale = 1.0 + m.norm() * m.norm() * (theta.norm() + b.norm());
        prop_assert!(resid.norm() < 1e-6 * scale, "{}", resid.norm());
    }
}
