use proptest::prelude::*;
use traceq::returns::{
    brute_force_targets, effective_horizon, lambda_return_geometric, n_step_return,
    one_step_target, truncated_lambda_targets, Horizon, ReturnSpec, TrajectoryView,
};

fn view_strategy(max_len: usize) -> impl Strategy<Value = TrajectoryView> {
    (1..=max_len).prop_flat_map(|k| {
        (
            prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.0, 1.0, 0.5]), k),
            any::<bool>(),
            prop::collection::vec(-5.0f64..5.0, k),
            prop::collection::vec(prop::bool::weighted(0.8), k),
        )
            .prop_map(|(rewards, terminal, boot, greedy)| {
                let k = rewards.len();
                let mut terminals = vec![false; k];
                terminals[k - 1] = terminal;
                TrajectoryView::new(rewards, terminals, boot, greedy).unwrap()
            })
    })
}

fn lambda_strategy() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.0, 0.3, 0.8, 1.0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn truncated_matches_brute_force_without_cutoff(
        view in view_strategy(22),
        lambda in lambda_strategy(),
        gamma in 0.0f64..0.999,
    ) {
        let spec = ReturnSpec::new(gamma, lambda, 0.0).unwrap();
        let fast = truncated_lambda_targets(&view, &spec).unwrap();
        let slow = brute_force_targets(&view, &spec).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn lambda_zero_is_one_step_q_learning(view in view_strategy(22), gamma in 0.0f64..0.999) {
        let spec = ReturnSpec::new(gamma, 0.0, 0.01).unwrap();
        let targets = truncated_lambda_targets(&view, &spec).unwrap();
        for (l, t) in targets.iter().enumerate() {
            let y = one_step_target(
                view.rewards()[l],
                gamma,
                view.terminals()[l],
                view.bootstrap_values()[l],
            );
            prop_assert!((t - y).abs() < 1e-15);
        }
    }

    #[test]
    fn targets_are_convex_combinations(
        view in view_strategy(22),
        lambda in lambda_strategy(),
        gamma in 0.0f64..0.999,
        cutoff in prop::sample::select(vec![0.0, 0.01, 0.2]),
    ) {
        let spec = ReturnSpec::new(gamma, lambda, cutoff).unwrap();
        let targets = truncated_lambda_targets(&view, &spec).unwrap();
        for (l, t) in targets.iter().enumerate() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut weight = 1.0;
            for n in 1..=view.max_steps_from(l) {
                if n > 1 {
                    weight *= if view.greedy_flags()[l + n - 1] { lambda } else { 0.0 };
                }
                if weight == 0.0 || weight < cutoff {
                    break;
                }
                let r = n_step_return(&view, l, n, gamma).unwrap();
                lo = lo.min(r);
                hi = hi.max(r);
            }
            prop_assert!(*t >= lo - 1e-12 && *t <= hi + 1e-12, "{t} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn clearing_a_greedy_flag_only_shortens_earlier_traces(
        view in view_strategy(22),
        lambda in lambda_strategy(),
        gamma in 0.0f64..0.999,
        pick in any::<prop::sample::Index>(),
    ) {
        let spec = ReturnSpec::new(gamma, lambda, 0.0).unwrap();
        let j = pick.index(view.len());
        let mut flags = view.greedy_flags().to_vec();
        flags[j] = false;
        let cut = TrajectoryView::new(
            view.rewards().to_vec(),
            view.terminals().to_vec(),
            view.bootstrap_values().to_vec(),
            flags,
        ).unwrap();
        let before = truncated_lambda_targets(&view, &spec).unwrap();
        let after = truncated_lambda_targets(&cut, &spec).unwrap();
        for l in j..view.len() {
            prop_assert_eq!(before[l], after[l]);
        }
        if j > 0 {
            // Only returns that end before step j survive.
            let prefix = TrajectoryView::new(
                view.rewards()[..j].to_vec(),
                vec![false; j],
                view.bootstrap_values()[..j].to_vec(),
                view.greedy_flags()[..j].to_vec(),
            ).unwrap();
            let expected = truncated_lambda_targets(&prefix, &spec).unwrap();
            for l in 0..j {
                prop_assert!((after[l] - expected[l]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_agrees_with_geometric_mixture(
        rewards in prop::collection::vec(-1.0f64..1.0, 60),
        boot in prop::collection::vec(-3.0f64..3.0, 60),
        lambda in prop::sample::select(vec![0.3, 0.5, 0.8, 0.9]),
        gamma in 0.5f64..0.999,
    ) {
        let k = rewards.len();
        let view = TrajectoryView::new(rewards, vec![false; k], boot, vec![true; k]).unwrap();
        let cutoff = 0.01;
        let spec = ReturnSpec::new(gamma, lambda, cutoff).unwrap();
        let Horizon::Finite(h) = effective_horizon(lambda, cutoff).unwrap() else { unreachable!() };
        // h surviving products plus the 1-step return
        let n_max = h + 1;
        let targets = truncated_lambda_targets(&view, &spec).unwrap();
        for l in 0..=(k - n_max) {
            let geo = lambda_return_geometric(&view, l, gamma, lambda, n_max).unwrap();
            let longest = n_step_return(&view, l, n_max, gamma).unwrap();
            let tail = lambda.powi(n_max as i32);
            let renormalized = (geo - tail * longest) / (1.0 - tail);
            prop_assert!((targets[l] - renormalized).abs() < 1e-9, "{} vs {renormalized}", targets[l]);
        }
    }
}

#[test]
fn lambda_point_eight_reaches_twenty_one_states() {
    assert_eq!(effective_horizon(0.8, 0.01).unwrap(), Horizon::Finite(20));
    let spec = ReturnSpec::new(0.99, 0.8, 0.01).unwrap();
    let k = 40;
    let probe = |j: usize| {
        let mut rewards = vec![0.0; k];
        rewards[j] = 1.0;
        let view = TrajectoryView::new(rewards, vec![false; k], vec![0.0; k], vec![true; k]).unwrap();
        truncated_lambda_targets(&view, &spec).unwrap()[0]
    };
    let reached: Vec<usize> = (0..k).filter(|&j| probe(j) != 0.0).collect();
    assert_eq!(reached, (0..21).collect::<Vec<_>>());
}
