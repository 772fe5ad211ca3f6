use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentConfig, Ddpg, RewardBaseline, Transition};
use crate::error::Result;

/// Trajectory of a one-step bandit run with reward `1 − |a − target|`.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditRun {
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub best_so_far: Vec<f64>,
    /// Deterministic policy action after the last episode.
    pub final_action: f64,
}

/// Train a fresh agent on a single-step environment with a constant state.
pub fn run_bandit(config: AgentConfig, target: f64, episodes: usize, seed: u64) -> Result<BanditRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Ddpg::new(config, &mut rng)?;
    let cfg = agent.config().clone();
    let state = vec![0.5; cfg.state_dim];
    let mut baseline = RewardBaseline::new(cfg.baseline_decay);
    let mut run = BanditRun {
        actions: Vec::with_capacity(episodes),
        rewards: Vec::with_capacity(episodes),
        best_so_far: Vec::with_capacity(episodes),
        final_action: 0.0,
    };
    let mut best = f64::NEG_INFINITY;
    for ep in 0..episodes {
        let action = if ep < cfg.warmup_episodes {
            rng.random::<f64>()
        } else {
            agent.act(&state, agent.sigma(), &mut rng)?
        };
        let reward = 1.0 - (action - target).abs();
        agent.remember(Transition {
            state: state.clone(),
            action,
            reward,
            next_state: state.clone(),
            terminal: true,
        })?;
        if ep >= cfg.warmup_episodes {
            agent.update(cfg.batch_size, cfg.gamma, cfg.tau, baseline.get(), &mut rng);
            agent.decay_noise(cfg.sigma_decay);
        }
        baseline.observe(reward);
        best = best.max(reward);
        run.actions.push(action);
        run.rewards.push(reward);
        run.best_so_far.push(best);
    }
    run.final_action = agent.policy(&state)?;
    Ok(run)
}
