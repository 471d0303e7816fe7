use dser_core::dirichlet::{dir_expectation, dir_log_density, dir_log_density_grad_alpha};
use dser_core::gradcheck::max_relative_error;
use dser_core::synth::{oracle_prefer, Choice};
use dser_core::{make_emotion_vector, AlphaVector, EmotionSequence, EmotionVector, SIMPLEX_FLOOR};
use proptest::prelude::*;
use rand::SeedableRng;

fn raw_weights() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(0.0..10.0f64).prop_filter("needs positive mass", |w| w.iter().sum::<f64>() > 1e-9)
}

fn alpha() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(0.05..20.0f64)
}

fn interior() -> impl Strategy<Value = EmotionVector> {
    prop::array::uniform6(0.01..1.0f64).prop_map(|w| make_emotion_vector(w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn emotion_vectors_live_in_the_simplex_interior(w in raw_weights()) {
        let v = make_emotion_vector(w).unwrap();
        prop_assert!((v.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(v.values().iter().all(|&x| x >= SIMPLEX_FLOOR));
        let again = make_emotion_vector(*v.values()).unwrap();
        for (a, b) in v.values().iter().zip(again.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_sums_to_one(a in alpha()) {
        let e = dir_expectation(&AlphaVector::new(a).unwrap());
        prop_assert!((e.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_gradient_matches_differences(a in alpha(), y in interior()) {
        let h = 1e-5;
        let analytic = dir_log_density_grad_alpha(&y, &AlphaVector::new(a).unwrap());
        let numeric: Vec<f64> = (0..6).map(|i| {
            let mut up = a;
            up[i] += h;
            let mut down = a;
            down[i] -= h;
            (dir_log_density(&y, &AlphaVector::new(up).unwrap())
                - dir_log_density(&y, &AlphaVector::new(down).unwrap())) / (2.0 * h)
        }).collect();
        prop_assert!(max_relative_error(&analytic, &numeric) <= 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn oracle_is_transitive(gt in prop::collection::vec(interior(), 3),
                            cands in prop::collection::vec(prop::collection::vec(interior(), 3), 3)) {
        let seq = |v: &[EmotionVector]| EmotionSequence::from_pairs(v.iter().enumerate().map(|(i, e)| (i as f64, *e))).unwrap();
        let gt = seq(&gt);
        let c: Vec<EmotionSequence> = cands.iter().map(|v| seq(v)).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut beats = |i: usize, j: usize| oracle_prefer(&gt, &c[i], &c[j], 0.0, &mut rng).unwrap() == Choice::A;
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1), (0, 2, 1), (1, 0, 2), (2, 1, 0)] {
            if beats(i, j) && beats(j, k) {
                prop_assert!(beats(i, k));
            }
        }
    }
}
