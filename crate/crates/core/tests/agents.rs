use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rltr::agents::{AgentConfig, AgentKind, DdpgAgent, ReplayEntry, state_dim};
use rltr::env_models::FeatureContext;
use rltr::neural::Activation;

fn two_state_ddpg(gamma: f64) -> (DdpgAgent, Vec<Vec<f64>>) {
    let ctx = FeatureContext::new(2, 4, 1).unwrap();
    let cfg = AgentConfig {
        kind: AgentKind::Ddpg,
        gamma,
        hidden: vec![16],
        critic_lr: 2e-3,
        batch_size: 32,
        ..AgentConfig::default()
    };
    let d = state_dim(&ctx);
    let states = (0..2)
        .map(|i| {
            let mut s = vec![0.0; d];
            s[i] = 1.0;
            s
        })
        .collect();
    (DdpgAgent::new(&cfg, ctx).unwrap(), states)
}

#[test]
fn myopic_critic_learns_expected_rewards() {
    let (mut agent, states) = two_state_ddpg(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let means = [0.3, 0.7];
    let action = vec![0.6, -0.8];
    for _ in 0..4000 {
        let i = rng.random_range(0..2);
        let reward = if rng.random::<f64>() < means[i] { 1.0 } else { 0.0 };
        agent.push(ReplayEntry {
            state: states[i].clone(),
            action: action.clone(),
            reward,
            next_state: states[i].clone(),
            done: true,
        });
    }
    for _ in 0..5000 {
        agent.train_step().unwrap();
    }
    assert_eq!(agent.critic().output_activation(), Activation::Identity);
    for (s, m) in states.iter().zip(means) {
        let mut input = s.clone();
        input.extend(rltr::agents::action_direction(&action));
        let q = agent.critic().forward(&input).unwrap()[0];
        assert!((q - m).abs() < 0.05, "critic {q} vs expected reward {m}");
    }
}

#[test]
fn sampled_critic_bootstraps_through_a_continuation() {
    // state 0 always continues to state 1 without reward; state 1 pays 1 and ends
    let (mut agent, states) = two_state_ddpg(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..4000 {
        let a: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        if rng.random::<bool>() {
            agent.push(ReplayEntry {
                state: states[0].clone(),
                action: a,
                reward: 0.0,
                next_state: states[1].clone(),
                done: false,
            });
        } else {
            agent.push(ReplayEntry {
                state: states[1].clone(),
                action: a,
                reward: 1.0,
                next_state: states[1].clone(),
                done: true,
            });
        }
    }
    for _ in 0..6000 {
        agent.train_step().unwrap();
    }
    for s in &states {
        let a = agent.act(s, false).unwrap();
        let mut input = s.clone();
        input.extend(rltr::agents::action_direction(a.weights()));
        let q = agent.critic().forward(&input).unwrap()[0];
        assert!((q - 1.0).abs() < 0.1, "critic {q} vs value 1");
    }
}
