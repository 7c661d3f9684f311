use proptest::prelude::*;
use traceq::nn::{GradientSet, ParameterSet, Tensor};
use traceq::optim::{
    adam_step, rmsprop_graves_step, sgd_step, Optimizer, OptimizerConfig, OptimizerState,
};

fn scalar(v: f64) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.push("w", Tensor::vector(vec![v])).unwrap();
    p
}

fn grad(v: f64) -> GradientSet {
    let mut g = GradientSet::zeros_like(&scalar(0.0));
    g.tensor_mut(0).data_mut()[0] = v;
    g
}

fn value(p: &ParameterSet) -> f64 {
    p.tensor(0).data()[0]
}

#[test]
fn rmsprop_first_two_steps_match_hand_evaluation() {
    let cfg = OptimizerConfig::rmsprop_graves(0.00025);
    let mut p = scalar(0.0);
    let mut s = OptimizerState::new(&p);

    rmsprop_graves_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
    // m = g = 0.05, denominator √(0.05 − 0.0025 + 0.01)
    let step1 = -0.00025 / 0.0575f64.sqrt();
    assert!((step1 + 1.04257e-3).abs() < 1e-8);
    assert!((value(&p) - step1).abs() < 1e-12);

    rmsprop_graves_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
    // m = g = 0.95·0.05 + 0.05 = 0.0975
    let step2 = -0.00025 / (0.0975 - 0.0975 * 0.0975 + 0.01f64).sqrt();
    assert!((value(&p) - (step1 + step2)).abs() < 1e-12);
}

#[test]
fn adam_first_two_steps_match_hand_evaluation() {
    let cfg = OptimizerConfig::adam(0.00025);
    let mut p = scalar(0.0);
    let mut s = OptimizerState::new(&p);

    adam_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
    let step1 = -0.00025 / 1.001f64.sqrt();
    assert!((step1 + 2.49875e-4).abs() < 1e-9);
    assert!((value(&p) - step1).abs() < 1e-15);

    adam_step(&mut p, &grad(1.0), &mut s, &cfg).unwrap();
    // m = 0.19, v = 0.001999; bias-corrected both equal 1
    let m_hat = 0.19 / (1.0 - 0.81);
    let v_hat = 0.001999 / (1.0 - 0.998001);
    let step2 = -0.00025 * m_hat / (v_hat + 0.001f64).sqrt();
    assert!((value(&p) - (step1 + step2)).abs() < 1e-15);
}

#[test]
fn quadratic_descent_is_monotone_for_every_rule() {
    for cfg in [
        OptimizerConfig::sgd(0.1),
        OptimizerConfig::rmsprop_graves(0.00025),
        OptimizerConfig::adam(0.00025),
    ] {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(cfg.clone(), &p).unwrap();
        let mut prev = value(&p).abs();
        for step in 1..=200 {
            let g = grad(value(&p));
            opt.step(&mut p, &g).unwrap();
            let now = value(&p).abs();
            if step > 3 {
                assert!(now < prev, "{:?} step {step}: {now} !< {prev}", cfg.kind);
            }
            prev = now;
        }
        assert!(prev < 1.0);
    }
}

#[test]
fn zero_gradients_from_fresh_state_never_move_parameters() {
    for cfg in [
        OptimizerConfig::sgd(0.1),
        OptimizerConfig::rmsprop_graves(0.00025),
        OptimizerConfig::adam(0.00025),
    ] {
        let mut p = scalar(0.37);
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        for _ in 0..50 {
            opt.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(value(&p), 0.37);
    }
}

#[test]
fn identical_instances_produce_identical_trajectories() {
    let cfg = OptimizerConfig::adam(0.01);
    let mut a = scalar(1.0);
    let mut b = scalar(1.0);
    let mut oa = Optimizer::new(cfg.clone(), &a).unwrap();
    let mut ob = Optimizer::new(cfg, &b).unwrap();
    for k in 0..100 {
        let g = grad((k as f64 * 0.7).sin());
        oa.step(&mut a, &g).unwrap();
        ob.step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(oa, ob);
}

proptest! {
    #[test]
    fn sgd_step_scales_with_gradient(g in -10.0f64..10.0, c in prop::sample::select(vec![0.5, 2.0, 4.0, -1.0])) {
        let cfg = OptimizerConfig::sgd(0.125);
        let mut a = scalar(0.0);
        let mut b = scalar(0.0);
        sgd_step(&mut a, &grad(g), &cfg).unwrap();
        sgd_step(&mut b, &grad(c * g), &cfg).unwrap();
        prop_assert_eq!(c * value(&a), value(&b));
    }

    #[test]
    fn rmsprop_and_sgd_ignore_zero_gradients_at_any_state(
        history in prop::collection::vec(-3.0f64..3.0, 1..20),
        start in -5.0f64..5.0,
    ) {
        for cfg in [OptimizerConfig::sgd(0.1), OptimizerConfig::rmsprop_graves(0.00025)] {
            let mut p = scalar(start);
            let mut opt = Optimizer::new(cfg, &p).unwrap();
            for &g in &history {
                opt.step(&mut p, &grad(g)).unwrap();
            }
            let before = value(&p);
            opt.step(&mut p, &grad(0.0)).unwrap();
            prop_assert_eq!(before, value(&p));
        }
    }

    #[test]
    fn rmsprop_denominator_stays_positive(history in prop::collection::vec(-100.0f64..100.0, 1..200)) {
        let cfg = OptimizerConfig::rmsprop_graves(0.00025);
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        for &g in &history {
            prop_assert!(rmsprop_graves_step(&mut p, &grad(g), &mut s, &cfg).is_ok());
        }
        prop_assert!(value(&p).is_finite());
    }
}
