use entprune::agent::{run_bandit, AgentConfig};
use entprune::env::{search, RandomReward, SearchConfig, STATE_DIM};

use super::budget::tinyvgg6_fixture;
use super::Check;

pub const BANDIT_TARGET: f64 = 0.5;
pub const BANDIT_EPISODES: usize = 300;
pub const BANDIT_TOL: f64 = 0.05;

/// Reward `1 − |a − 0.5|`; the policy mean must settle near the optimum.
pub fn bandit_converges(seed: u64) -> Check {
    bandit_with("bandit convergence", AgentConfig::new(STATE_DIM), seed)
}

/// The same bandit with the plain gradient-step optimizer.
pub fn bandit_converges_with_sgd(seed: u64) -> Check {
    let cfg = AgentConfig {
        optimizer: "sgd".into(),
        ..AgentConfig::new(STATE_DIM)
    };
    bandit_with("bandit convergence (sgd)", cfg, seed)
}

fn bandit_with(name: &'static str, cfg: AgentConfig, seed: u64) -> Check {
    let run = run_bandit(cfg, BANDIT_TARGET, BANDIT_EPISODES, seed).unwrap();
    let tail = &run.actions[BANDIT_EPISODES - 50..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let err = (run.final_action - BANDIT_TARGET).abs();
    Check::new(
        name,
        err <= BANDIT_TOL,
        format!(
            "seed {seed}: policy action {:.4} after {BANDIT_EPISODES} episodes (|err| {err:.4}, tol {BANDIT_TOL}); mean of last 50 noisy actions {tail_mean:.4}",
            run.final_action
        ),
    )
}

/// With the exploration noise at zero two runs agree bit for bit, both on the
/// bandit and on a short pruning search.
pub fn zero_noise_is_bitwise_deterministic() -> Check {
    let cfg = AgentConfig {
        sigma0: 0.0,
        ..AgentConfig::new(STATE_DIM)
    };
    let a = run_bandit(cfg.clone(), BANDIT_TARGET, 80, 9).unwrap();
    let b = run_bandit(cfg, BANDIT_TARGET, 80, 9).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let bandit_same = bits(&a.actions) == bits(&b.actions)
        && bits(&a.rewards) == bits(&b.rewards)
        && a.final_action.to_bits() == b.final_action.to_bits();

    let fx = tinyvgg6_fixture(20, 2);
    let config = SearchConfig {
        flops_target: 0.5,
        reward: "random".into(),
        episodes: 30,
        seed: 8,
        agent: AgentConfig {
            sigma0: 0.0,
            ..AgentConfig::new(STATE_DIM)
        },
        ..SearchConfig::default()
    };
    let run = || search(&config, &fx.graph, &fx.cache, &mut RandomReward::new(4)).unwrap();
    let (s1, s2) = (run(), run());
    let search_same = s1.log.len() == s2.log.len()
        && s1.log.iter().zip(&s2.log).all(|(x, y)| {
            x.reward.to_bits() == y.reward.to_bits()
                && x.preserved_ratio.to_bits() == y.preserved_ratio.to_bits()
                && x.plan == y.plan
        })
        && s1.agent.to_archive().encode() == s2.agent.to_archive().encode();
    Check::new(
        "zero-noise determinism",
        bandit_same && search_same,
        format!("bandit identical: {bandit_same}; 30-episode search identical: {search_same}"),
    )
}

pub fn all() -> Vec<Check> {
    vec![bandit_converges(11), bandit_converges_with_sgd(11), zero_noise_is_bitwise_deterministic()]
}
