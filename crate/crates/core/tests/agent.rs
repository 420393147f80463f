mod common;

use oapd::agent::{
    argmax, compute_targets, decay_epsilon, evaluate, select_action, train, Agent, AgentConfig, EvalPolicy,
    LearnOutcome, ReplayBuffer, StopReason, Transition,
};
use oapd::env::{self, EnvConfig, InitMode};
use oapd::neural::{encode_checkpoint, Mlp};
use oapd::rng::{child_seed, substream, Stream};
use proptest::prelude::*;
use rand::Rng;

fn small_config() -> AgentConfig {
    AgentConfig {
        hidden: vec![8],
        batch_size: 4,
        memory_size: 16,
        target_sync_period: 3,
        max_train_episodes: 3,
        max_eval_steps: 10,
        ..AgentConfig::default()
    }
}

fn small_env() -> EnvConfig {
    EnvConfig {
        max_episode_steps: 8,
        ..EnvConfig::default()
    }
}

fn transition(a: usize, obs_dim: usize, seed: u64) -> Transition {
    let mut rng = substream(seed, Stream::Replay);
    Transition {
        s: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        a,
        r: rng.random_range(-1.0..1.0),
        s_next: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        terminal: false,
    }
}

#[test]
fn epsilon_decay_examples() {
    let cfg = AgentConfig::default();
    assert_eq!(decay_epsilon(1.0, &cfg), 0.999);
    assert_eq!(decay_epsilon(cfg.epsilon_min, &cfg), cfg.epsilon_min);
    let mut eps = 0.8;
    for _ in 0..500 {
        eps = decay_epsilon(eps, &cfg);
    }
    assert!((eps - 0.8 * 0.999f64.powi(500)).abs() < 1e-12);
}

#[test]
fn greedy_choice_is_argmax_with_low_index_ties() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[5.0, 5.0]), 0);
    let net = Mlp::new(&[3, 6, 5], 4).unwrap();
    let obs = [0.3, -0.2, 0.9];
    let q = net.forward(&obs).unwrap();
    let mut rng = substream(1, Stream::Exploration);
    for _ in 0..20 {
        assert_eq!(select_action(&net, &obs, 0.0, &mut rng).unwrap(), argmax(&q));
    }
}

#[test]
fn full_exploration_is_uniform() {
    let n = 9;
    let draws = 100_000;
    let net = Mlp::new(&[2, 4, n], 0).unwrap();
    let mut rng = substream(5, Stream::Exploration);
    let mut counts = vec![0usize; n];
    for _ in 0..draws {
        counts[select_action(&net, &[0.1, 0.2], 1.0, &mut rng).unwrap()] += 1;
    }
    let expected = draws as f64 / n as f64;
    let sigma = (draws as f64 * (1.0 / n as f64) * (1.0 - 1.0 / n as f64)).sqrt();
    let mut chi2 = 0.0;
    for &c in &counts {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    // 99.9% quantile of chi-square with 8 degrees of freedom.
    assert!(chi2 < 26.12, "chi2 = {chi2}");
}

#[test]
fn replay_ring_drops_oldest() {
    let mut buf = ReplayBuffer::new(3);
    for a in 0..5 {
        buf.push(transition(a, 2, a as u64));
    }
    assert_eq!(buf.len(), 3);
    let mut held: Vec<usize> = buf.iter().map(|t| t.a).collect();
    held.sort();
    assert_eq!(held, vec![2, 3, 4]);
    let mut rng = substream(0, Stream::Replay);
    let mut drawn: Vec<usize> = buf.sample(3, &mut rng).iter().map(|t| t.a).collect();
    drawn.sort();
    assert_eq!(drawn, vec![2, 3, 4]);
}

#[test]
fn target_examples() {
    let net = Mlp::new(&[2, 5, 3], 9).unwrap();
    let mut t = transition(1, 2, 0);
    t.terminal = true;
    t.r = -5.0;
    assert_eq!(compute_targets(&net, &net, &[&t], 0.95, true).unwrap(), vec![-5.0]);

    let batch: Vec<Transition> = (0..6).map(|i| transition(i % 3, 2, i as u64)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let ys = compute_targets(&net, &net, &refs, 0.0, true).unwrap();
    for (y, t) in ys.iter().zip(&batch) {
        assert_eq!(*y, t.r);
    }
}

#[test]
fn learn_step_waits_for_a_full_batch() {
    let cfg = small_config();
    let mut agent = Agent::new(2, 3, cfg, 0).unwrap();
    for a in 0..3 {
        agent.buffer.push(transition(a, 2, a as u64));
    }
    let before = agent.online.clone();
    assert_eq!(agent.learn_step().unwrap(), LearnOutcome::Skipped);
    assert_eq!(agent.online, before);
    assert_eq!(agent.learn_steps(), 0);
}

#[test]
fn target_is_frozen_between_syncs() {
    let cfg = small_config();
    let period = cfg.target_sync_period;
    let mut agent = Agent::new(2, 3, cfg, 3).unwrap();
    for i in 0..10 {
        agent.buffer.push(transition(i % 3, 2, i as u64));
    }
    let mut target = agent.target.clone();
    for k in 1..=10 {
        let outcome = agent.learn_step().unwrap();
        let synced = matches!(outcome, LearnOutcome::Updated { synced: true, .. });
        assert_eq!(synced, k % period == 0);
        if synced {
            assert_eq!(agent.target.parameters().collect::<Vec<_>>(), agent.online.parameters().collect::<Vec<_>>());
            let x = [0.4, -0.7];
            assert_eq!(agent.target.forward(&x).unwrap(), agent.online.forward(&x).unwrap());
            target = agent.target.clone();
        } else {
            assert_eq!(agent.target.parameters().collect::<Vec<_>>(), target.parameters().collect::<Vec<_>>());
            assert_ne!(agent.online.parameters().collect::<Vec<_>>(), agent.target.parameters().collect::<Vec<_>>());
        }
    }
}

#[test]
fn zero_episodes_returns_the_initial_network() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let cfg = AgentConfig {
        max_train_episodes: 0,
        ..small_config()
    };
    let result = train(&case, &small_env(), &cfg, 21).unwrap();
    let sizes = cfg.layer_sizes(env::observation_dim(&case), env::n_actions(2));
    let fresh = Mlp::new(&sizes, child_seed(21, Stream::Network, 0)).unwrap();
    assert_eq!(result.agent.online, fresh);
    assert!(result.log.is_empty());
    assert!(result.episodes.is_empty());
}

#[test]
fn training_is_deterministic() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let run = || train(&case, &small_env(), &small_config(), 8).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert_eq!(a.profile, b.profile);
    assert_eq!(
        encode_checkpoint(&a.agent.online, Some(&a.agent.optimizer)),
        encode_checkpoint(&b.agent.online, Some(&b.agent.optimizer))
    );
    let other = train(&case, &small_env(), &small_config(), 9).unwrap();
    assert_ne!(a.log, other.log);
}

#[test]
fn running_best_never_increases() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let cfg = AgentConfig {
        max_train_episodes: 6,
        ..small_config()
    };
    let result = train(&case, &small_env(), &cfg, 2).unwrap();
    let bests: Vec<f64> = result.episodes.iter().filter_map(|e| e.best_so_far).collect();
    assert_eq!(bests.len(), 6);
    assert!(bests.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(result.best_cost, bests.last().copied());
}

#[test]
fn benchmark_stop_with_loose_reference_stops_at_once() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let cfg = small_config();
    let net = Mlp::new(&cfg.layer_sizes(env::observation_dim(&case), 9), 1).unwrap();
    let policy = EvalPolicy::BenchmarkStop { reference_cost: 1e12 };
    let report = evaluate(&net, &case, &small_env(), &cfg, policy, InitMode::UniformRandom, 4).unwrap();
    assert_eq!(report.steps, 1);
    assert_eq!(report.stop_reason, StopReason::ReferenceReached);
}

#[test]
fn budget_of_zero_returns_initial_cost() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let cfg = AgentConfig {
        max_eval_steps: 0,
        ..small_config()
    };
    let net = Mlp::new(&cfg.layer_sizes(env::observation_dim(&case), 9), 1).unwrap();
    let report = evaluate(&net, &case, &small_env(), &cfg, EvalPolicy::BudgetMin, InitMode::AsGiven, 0).unwrap();
    assert_eq!(report.steps, 0);
    assert!(report.init_cost.is_some());
    assert_eq!(report.best_cost, report.init_cost);
}

#[test]
fn evaluation_rejects_a_mismatched_network() {
    let case = common::toy_two_gen(0.05, 15.0, 0.03, 25.0);
    let net = Mlp::new(&[3, 4, 9], 1).unwrap();
    let err = evaluate(&net, &case, &small_env(), &small_config(), EvalPolicy::BudgetMin, InitMode::AsGiven, 0);
    assert!(matches!(
        err,
        Err(oapd::error::AgentError::Neural(oapd::error::NeuralError::Architecture(..)))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epsilon_is_monotone_and_floored(start in 0.05f64..=1.0, rate in 0.5f64..0.9999, floor in 0.0f64..0.05, n in 1usize..2000) {
        let cfg = AgentConfig { epsilon_start: start, epsilon_min: floor, decay_rate: rate, ..AgentConfig::default() };
        let mut eps = start;
        for _ in 0..n {
            let next = decay_epsilon(eps, &cfg);
            prop_assert!(next <= eps);
            prop_assert!(next >= floor);
            eps = next;
        }
    }

    #[test]
    fn ring_keeps_the_latest_items(capacity in 1usize..20, pushes in 0usize..60) {
        let mut buf = ReplayBuffer::new(capacity);
        for a in 0..pushes {
            buf.push(transition(a, 1, 0));
            prop_assert!(buf.len() <= capacity);
        }
        let mut held: Vec<usize> = buf.iter().map(|t| t.a).collect();
        held.sort();
        let expected: Vec<usize> = (pushes.saturating_sub(capacity)..pushes).collect();
        prop_assert_eq!(held, expected);
    }

    #[test]
    fn double_target_degenerates_to_max_form(seed in any::<u64>(), gamma in 0.0f64..=1.0, n in 1usize..12) {
        let net = Mlp::new(&[3, 7, 4], seed).unwrap();
        let mut rng = substream(seed, Stream::Replay);
        let batch: Vec<Transition> = (0..n)
            .map(|i| {
                let mut t = transition(i % 4, 3, seed.wrapping_add(i as u64));
                t.terminal = rng.random_bool(0.2);
                t
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        let copy = net.clone();
        let double = compute_targets(&net, &copy, &refs, gamma, true).unwrap();
        let single = compute_targets(&net, &copy, &refs, gamma, false).unwrap();
        for ((d, s), t) in double.iter().zip(&single).zip(&batch) {
            let q = net.forward(&t.s_next).unwrap();
            let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let expected = if t.terminal { t.r } else { t.r + gamma * max };
            prop_assert_eq!(*d, expected);
            prop_assert_eq!(*s, expected);
        }
    }
}
