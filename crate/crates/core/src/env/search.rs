use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::budget::{BudgetModel, STATE_DIM};
use super::reward::RewardSignal;
use crate::agent::{AgentConfig, Ddpg, RewardBaseline, Transition};
use crate::error::{invalid, Error, Result};
use crate::graph::ModelGraph;
use crate::pruner::{canonical_ratio, prune_network, CalibrationCache, SparsityPlan, DEFAULT_RIDGE};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Fraction β of the original FLOPS the pruned network may keep.
    pub flops_target: f64,
    pub reward: String,
    pub episodes: usize,
    pub a_max: f64,
    pub bins: usize,
    pub calibration_samples: usize,
    /// Output positions per calibration sample recorded for reconstruction.
    pub positions_per_sample: usize,
    pub ridge: f64,
    pub seed: u64,
    pub agent: AgentConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            flops_target: 0.5,
            reward: "entropy".to_string(),
            episodes: 150,
            a_max: 0.8,
            bins: 256,
            calibration_samples: 100,
            positions_per_sample: 10,
            ridge: DEFAULT_RIDGE,
            seed: 0,
            agent: AgentConfig::new(STATE_DIM),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.flops_target > 0.0 && self.flops_target < 1.0) {
            return invalid(format!("FLOPS target must lie in (0,1), got {}", self.flops_target));
        }
        if self.episodes == 0 {
            return invalid("search needs at least one episode");
        }
        if !(0.0..1.0).contains(&self.a_max) {
            return invalid(format!("a_max must lie in [0,1), got {}", self.a_max));
        }
        if self.agent.state_dim != STATE_DIM {
            return invalid(format!("agent state dimension must be {STATE_DIM}"));
        }
        self.agent.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub plan: SparsityPlan,
    pub reward: f64,
    pub preserved_ratio: f64,
    /// Whether the budget clip changed the agent's proposal, per layer.
    pub clipped: Vec<bool>,
    pub proposed: Vec<f64>,
    pub transitions: Vec<Transition>,
}

/// Where the actions of an episode come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSource {
    Uniform,
    Policy { sigma: f64 },
}

/// Roll out one episode: featurize, act, clip, then prune with
/// reconstruction and score the result. Every step's transition carries
/// reward 0 except the terminal one, which carries the episode reward.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    agent: &Ddpg,
    source: ActionSource,
    graph: &ModelGraph,
    budget: &BudgetModel,
    cache: &CalibrationCache,
    reward: &mut dyn RewardSignal,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<EpisodeResult> {
    let n = budget.num_layers();
    let mut widths: Vec<usize> = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n + 1);
    let mut actions = Vec::with_capacity(n);
    let mut proposed = Vec::with_capacity(n);
    let mut clipped = Vec::with_capacity(n);
    let mut prev = 0.0;

    for t in 0..n {
        let state = budget.layer_state(t, &widths, prev)?;
        let a = match source {
            ActionSource::Uniform => rng.random::<f64>(),
            ActionSource::Policy { sigma } => agent.act(&state, sigma, rng)?,
        };
        let c = budget.clip_action(a, t, &widths, config.flops_target, config.a_max)?;
        let action = canonical_ratio(c.action, budget.original_widths()[t]);
        widths.push(crate::pruner::kept_count(budget.original_widths()[t], action));
        states.push(state);
        proposed.push(a);
        clipped.push(c.clipped);
        actions.push(action);
        prev = action;
    }

    let plan = SparsityPlan::new(budget.layer_ids().iter().cloned().zip(actions.iter().copied()).collect())?;
    let outcome = prune_network(graph, &plan, cache, config.ridge)?;
    let preserved_ratio = outcome.graph.total_flops() as f64 / budget.original_flops() as f64;
    let r = reward.reward(&outcome.graph)?;

    let transitions = (0..n)
        .map(|t| Transition {
            state: states[t].clone(),
            action: actions[t],
            reward: if t + 1 == n { r } else { 0.0 },
            next_state: states.get(t + 1).unwrap_or(&states[t]).clone(),
            terminal: t + 1 == n,
        })
        .collect();
    Ok(EpisodeResult {
        plan,
        reward: r,
        preserved_ratio,
        clipped,
        proposed,
        transitions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub reward: f64,
    pub preserved_ratio: f64,
    pub sigma: f64,
    pub plan: String,
}

pub struct SearchOutcome {
    pub best: EpisodeResult,
    pub best_episode: usize,
    pub log: Vec<EpisodeLog>,
    pub best_so_far: Vec<f64>,
    pub infeasible: usize,
    pub agent: Ddpg,
}

/// Per-episode CSV: `episode,reward,preserved_ratio,sigma,plan`.
pub fn episodes_csv(log: &[EpisodeLog]) -> String {
    let mut s = String::from("episode,reward,preserved_ratio,sigma,plan\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            e.episode, e.reward, e.preserved_ratio, e.sigma, e.plan
        ));
    }
    s
}

/// Full search: uniform warm-up episodes, then noisy policy episodes with one
/// agent update per layer step and per-episode noise decay.
pub fn search(
    config: &SearchConfig,
    graph: &ModelGraph,
    cache: &CalibrationCache,
    reward: &mut dyn RewardSignal,
) -> Result<SearchOutcome> {
    config.validate()?;
    let budget = BudgetModel::new(graph)?.with_a_max(config.a_max);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut agent = Ddpg::new(config.agent.clone(), &mut rng)?;
    let acfg = config.agent.clone();
    let mut baseline = RewardBaseline::new(acfg.baseline_decay);

    let mut best: Option<(usize, EpisodeResult)> = None;
    let mut log = Vec::with_capacity(config.episodes);
    let mut best_so_far = Vec::with_capacity(config.episodes);
    let mut infeasible = 0;

    for ep in 0..config.episodes {
        let warm = ep < acfg.warmup_episodes;
        let source = if warm {
            ActionSource::Uniform
        } else {
            ActionSource::Policy { sigma: agent.sigma() }
        };
        let sigma = agent.sigma();
        let result = match run_episode(&agent, source, graph, &budget, cache, reward, config, &mut rng) {
            Ok(r) => r,
            Err(e @ Error::InfeasibleBudget { .. }) => {
                warn!("episode {ep} aborted: {e}");
                infeasible += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for t in &result.transitions {
            agent.remember(t.clone())?;
        }
        if !warm {
            for _ in 0..result.transitions.len() {
                if let Some(stats) = agent.update(acfg.batch_size, acfg.gamma, acfg.tau, baseline.get(), &mut rng) {
                    debug!(
                        "episode {ep}: critic loss {:.5}, actor objective {:.5}",
                        stats.critic_loss, stats.actor_objective
                    );
                }
            }
            agent.decay_noise(acfg.sigma_decay);
        }
        baseline.observe(result.reward);
        log.push(EpisodeLog {
            episode: ep,
            reward: result.reward,
            preserved_ratio: result.preserved_ratio,
            sigma,
            plan: result.plan.compact(),
        });
        info!(
            "episode {ep}: reward {:.5}, preserved {:.4}, plan {}",
            result.reward,
            result.preserved_ratio,
            result.plan.compact()
        );
        if best.as_ref().is_none_or(|(_, b)| result.reward > b.reward) {
            best = Some((ep, result));
        }
        best_so_far.push(best.as_ref().map(|(_, b)| b.reward).unwrap());
    }
    let (best_episode, best) = best.ok_or(Error::InfeasibleBudget {
        layer: 0,
        best: f64::NAN,
        target: config.flops_target,
    })?;
    Ok(SearchOutcome {
        best,
        best_episode,
        log,
        best_so_far,
        infeasible,
        agent,
    })
}
