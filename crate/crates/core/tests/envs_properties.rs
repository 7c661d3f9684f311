use proptest::prelude::*;
use traceq::envs::catch::{LEFT, RIGHT, STAY};
use traceq::envs::{
    Catch, CatchConfig, CatchObservation, Chain, ChainConfig, EnvConfig, EnvKind, Environment,
    Flicker, FrameStack, StallBall, StallBallConfig, ATTACK, STALL,
};

fn track(env: &Catch) -> usize {
    let (bx, _) = env.ball();
    match bx.cmp(&env.paddle()) {
        std::cmp::Ordering::Less => LEFT,
        std::cmp::Ordering::Equal => STAY,
        std::cmp::Ordering::Greater => RIGHT,
    }
}

#[test]
fn column_tracking_catches_every_initial_condition() {
    for w in 3..=10 {
        for h in 2..=10 {
            let config = CatchConfig::new(w, h);
            for bx in config.ball_columns() {
                let mut env = Catch::with_state(config, bx, 0, config.paddle_start()).unwrap();
                let mut total = 0.0;
                loop {
                    let s = env.step(track(&env)).unwrap();
                    total += s.reward;
                    if s.terminal {
                        break;
                    }
                }
                assert_eq!(total, 1.0, "W={w} H={h} ball column {bx}");
            }
        }
    }
}

#[test]
fn resets_cover_exactly_the_reachable_columns() {
    for (w, h) in [(8, 8), (10, 3), (3, 2), (9, 4)] {
        let config = CatchConfig::new(w, h);
        let mut env = Catch::new(config).unwrap();
        let mut seen = vec![false; w];
        for seed in 0..500 {
            env.reset(seed);
            assert_eq!(env.ball().1, 0);
            assert_eq!(env.paddle(), config.paddle_start());
            seen[env.ball().0] = true;
        }
        let expected: Vec<bool> = (0..w).map(|c| config.ball_columns().contains(&c)).collect();
        assert_eq!(seen, expected, "W={w} H={h}");
    }
}

/// Exact optimal return by backward induction over (phase, progress, timer).
/// The required strike is visible, so an attack step is either the correct
/// strike or any wrong action.
fn stallball_optimal_value(d: usize, t: usize) -> i64 {
    // value[p] with p = 0 for rally and p = i + 1 for attack progress i
    let mut value = vec![0i64; d + 1];
    for _ in 0..t {
        let prev = value.clone();
        value[0] = prev[0].max(prev[1]);
        for i in 0..d {
            let correct = if i + 1 == d { 1 + prev[0] } else { prev[i + 2] };
            let wrong = -1 + prev[0];
            value[i + 1] = correct.max(wrong);
        }
    }
    value[0]
}

#[test]
fn stallball_trap_ordering() {
    for (d, t) in [(3, 200), (2, 9), (4, 50), (3, 13)] {
        let optimal = stallball_optimal_value(d, t);
        assert!(optimal >= (t / (2 * (d + 1))) as i64, "d={d} T={t}: {optimal}");
        assert!(optimal <= (t / (d + 1)) as i64);

        let config = StallBallConfig::new(d, t);
        let mut env = StallBall::new(config).unwrap();
        env.reset(7);
        let mut stall = 0.0;
        for _ in 0..t {
            stall += env.step(STALL).unwrap().reward;
        }
        assert_eq!(stall, 0.0);

        // Attacking while a full attack still fits attains the optimum.
        env.reset(7);
        let mut total = 0.0;
        loop {
            let action = match env.required_strike() {
                Some(s) => s,
                None if env.timer() > d => ATTACK,
                None => STALL,
            };
            let s = env.step(action).unwrap();
            total += s.reward;
            if s.terminal {
                break;
            }
        }
        assert_eq!(total, optimal as f64, "d={d} T={t}");
    }
    assert_eq!(stallball_optimal_value(3, 200), 50);
}

fn all_kinds() -> Vec<EnvKind> {
    vec![
        EnvKind::Catch(CatchConfig::new(5, 6)),
        EnvKind::Catch(CatchConfig {
            observation: CatchObservation::Compact,
            ..CatchConfig::new(8, 8)
        }),
        EnvKind::StallBall(StallBallConfig::new(3, 40)),
        EnvKind::Chain(ChainConfig::new(5)),
    ]
}

/// Plays `actions` cyclically through several episodes.
fn rollout<E: Environment>(env: &mut E, seed: u64, actions: &[usize], steps: usize) -> Vec<(Vec<f64>, f64, bool)> {
    let mut out = vec![(env.reset(seed), 0.0, false)];
    let mut episode = 0;
    for i in 0..steps {
        let a = actions[i % actions.len()] % env.action_count();
        let s = env.step(a).unwrap();
        let terminal = s.terminal;
        out.push((s.observation, s.reward, s.terminal));
        if terminal {
            episode += 1;
            out.push((env.reset(seed + episode), 0.0, false));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_determined_by_seed_and_actions(
        seed in any::<u64>(),
        actions in prop::collection::vec(0usize..4, 1..50),
        flicker in prop::sample::select(vec![0.0, 0.3]),
        stack in 1usize..4,
    ) {
        for kind in all_kinds() {
            let mut config = EnvConfig::new(kind);
            config.flicker = flicker;
            config.flicker_seed = 3;
            config.frame_stack = stack;
            let mut a = config.build().unwrap();
            let mut b = config.build().unwrap();
            let ra = rollout(&mut a, seed, &actions, 120);
            let rb = rollout(&mut b, seed, &actions, 120);
            prop_assert_eq!(&ra, &rb);
            for (obs, reward, _) in &ra {
                prop_assert_eq!(obs.len(), a.observation_dim());
                prop_assert!([-1.0, 0.0, 1.0].contains(reward));
            }
        }
    }

    #[test]
    fn zero_flicker_is_transparent(seed in any::<u64>(), actions in prop::collection::vec(0usize..4, 1..30)) {
        for kind in all_kinds() {
            let mut config = EnvConfig::new(kind);
            let mut plain = config.build().unwrap();
            config.flicker_seed = 99;
            let mut wrapped = config.build().unwrap();
            prop_assert_eq!(rollout(&mut plain, seed, &actions, 80), rollout(&mut wrapped, seed, &actions, 80));
        }
    }
}

#[test]
fn flicker_rejects_certain_blanking() {
    let chain = Chain::new(ChainConfig::new(4)).unwrap();
    assert!(Flicker::new(chain.clone(), 1.0, 0).is_err());
    assert!(Flicker::new(chain.clone(), -0.1, 0).is_err());
    assert!(Flicker::new(chain, 0.999, 0).is_ok());
}

#[test]
fn flicker_half_blanks_about_half() {
    let chain = Chain::new(ChainConfig::new(6)).unwrap();
    let mut env = Flicker::new(chain, 0.5, 1234).unwrap();
    env.reset(0);
    let mut blanks = 0;
    let mut episode = 0;
    let n = 1000;
    for i in 0..n {
        let s = env.step(i % 2).unwrap();
        if s.observation.iter().all(|&x| x == 0.0) {
            blanks += 1;
        }
        if s.terminal {
            episode += 1;
            env.reset(episode);
        }
    }
    let sd = (n as f64 * 0.25).sqrt();
    assert!((blanks as f64 - 500.0).abs() < 5.0 * sd, "{blanks} blanks");
}

#[test]
fn frame_stack_concatenates_oldest_first() {
    let chain = Chain::new(ChainConfig::new(3)).unwrap();
    let mut env = FrameStack::new(chain, 2).unwrap();
    assert_eq!(env.observation_dim(), 6);
    assert_eq!(env.reset(0), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let s = env.step(1).unwrap();
    assert_eq!(s.observation, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(FrameStack::new(Chain::new(ChainConfig::new(3)).unwrap(), 0).is_err());
}

#[test]
fn configured_envs_report_names_and_sizes() {
    let dims: Vec<(&str, usize, usize)> = all_kinds()
        .into_iter()
        .map(|k| {
            let env = EnvConfig::new(k.clone()).build().unwrap();
            (k.name(), env.observation_dim(), env.action_count())
        })
        .collect();
    assert_eq!(
        dims,
        vec![("catch", 30, 3), ("catch", 3, 3), ("stallball", 4, 4), ("chain", 5, 2)]
    );
}
