//! DDPG actor-critic that emits one sparsity action per layer step.

mod bandit;
mod mlp;
mod optim;
mod replay;

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Archive, Entry, EntryData};

pub use bandit::{run_bandit, BanditRun};
pub use mlp::{sigmoid, Dense, Mlp, MlpGrads, MlpTrace, OutputActivation};
pub use optim::{optimizer_by_name, Adam, Optimizer, Sgd};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub state_dim: usize,
    pub hidden: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub baseline_decay: f64,
    pub warmup_episodes: usize,
    pub optimizer: String,
    /// Half-width of the uniform init of both output layers.
    pub init_out: f64,
}

impl AgentConfig {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            hidden: 300,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            tau: 0.01,
            gamma: 1.0,
            batch_size: 64,
            buffer_capacity: 2000,
            sigma0: 0.5,
            sigma_decay: 0.99,
            baseline_decay: 0.95,
            warmup_episodes: 25,
            optimizer: "adam".to_string(),
            init_out: 3e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.hidden == 0 {
            return invalid("agent state and hidden sizes must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return invalid(format!("tau must lie in [0,1], got {}", self.tau));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return invalid(format!("noise decay must lie in (0,1], got {}", self.sigma_decay));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return invalid(format!("baseline decay must lie in [0,1), got {}", self.baseline_decay));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return invalid("batch size must be positive and no larger than the buffer");
        }
        if self.sigma0 < 0.0 || self.lr_actor < 0.0 || self.lr_critic < 0.0 {
            return invalid("noise and learning rates must be non-negative");
        }
        optimizer_by_name(&self.optimizer, 0.0).map(|_| ())
    }
}

/// Zero-mean normal with standard deviation `sigma`, truncated at `±2σ` by
/// rejection.
pub fn truncated_normal<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * sigma;
        }
    }
}

/// Exponential moving average of episode rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBaseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl RewardBaseline {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    pub fn get(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }

    pub fn observe(&mut self, reward: f64) {
        self.value = Some(match self.value {
            None => reward,
            Some(b) => self.decay * b + (1.0 - self.decay) * reward,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_objective: f64,
}

pub struct Ddpg {
    config: AgentConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    actor_opt: Box<dyn Optimizer>,
    critic_opt: Box<dyn Optimizer>,
    buffer: ReplayBuffer,
    sigma: f64,
}

impl std::fmt::Debug for Ddpg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ddpg")
            .field("config", &self.config)
            .field("sigma", &self.sigma)
            .field("buffer_len", &self.buffer.len())
            .finish_non_exhaustive()
    }
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (s, h) = (config.state_dim, config.hidden);
        let actor = Mlp::new(&[s, h, h, 1], OutputActivation::Sigmoid, config.init_out, rng);
        let critic = Mlp::new(&[s + 1, h, h, 1], OutputActivation::Identity, config.init_out, rng);
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            actor_opt: optimizer_by_name(&config.optimizer, config.lr_actor)?,
            critic_opt: optimizer_by_name(&config.optimizer, config.lr_critic)?,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            sigma: config.sigma0,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma.max(0.0);
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn check_state(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.config.state_dim {
            return shape_err(format!(
                "agent expects a state of dimension {}, got {}",
                self.config.state_dim,
                state.len()
            ));
        }
        Ok(())
    }

    /// Deterministic policy output in `(0,1)`.
    pub fn policy(&self, state: &[f64]) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.actor.forward(state, 1)[0])
    }

    /// `clamp(policy(state) + ε, 0, 1)` with truncated-normal `ε`. No random
    /// number is drawn when `sigma` is zero.
    pub fn act<R: Rng + ?Sized>(&self, state: &[f64], sigma: f64, rng: &mut R) -> Result<f64> {
        let mu = self.policy(state)?;
        Ok((mu + truncated_normal(sigma, rng)).clamp(0.0, 1.0))
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        self.check_state(&t.state)?;
        self.check_state(&t.next_state)?;
        self.buffer.push(t);
        Ok(())
    }

    pub fn decay_noise(&mut self, factor: f64) {
        debug_assert!(factor > 0.0 && factor <= 1.0);
        self.sigma = (self.sigma * factor).max(0.0);
    }

    /// One gradient step on a sampled batch. Returns `None` when the buffer
    /// holds fewer than `batch_size` transitions.
    ///
    /// The baseline is subtracted from the reward of terminal transitions
    /// only. Intermediate rewards are zero by construction, so subtracting it
    /// there as well would stack one copy of the baseline per remaining step.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        gamma: f64,
        tau: f64,
        baseline: f64,
        rng: &mut R,
    ) -> Option<UpdateStats> {
        let batch = self.buffer.sample(batch_size, rng)?;
        let n = batch.len();
        let sd = self.config.state_dim;

        let mut states = Vec::with_capacity(n * sd);
        let mut next = Vec::with_capacity(n * sd);
        for t in &batch {
            states.extend_from_slice(&t.state);
            next.extend_from_slice(&t.next_state);
        }
        let next_actions = self.actor_target.forward(&next, n);
        let next_q = self.critic_target.forward(&join(&next, &next_actions, sd), n);
        let targets: Vec<f64> = batch
            .iter()
            .zip(&next_q)
            .map(|(t, &q)| {
                if t.terminal {
                    t.reward - baseline
                } else {
                    t.reward + gamma * q
                }
            })
            .collect();

        // critic: mean squared TD error
        let actions: Vec<f64> = batch.iter().map(|t| t.action).collect();
        let trace = self.critic.forward_trace(&join(&states, &actions, sd), n);
        let mut loss = 0.0;
        let grad: Vec<f64> = trace
            .outputs
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                loss += (q - y) * (q - y);
                2.0 * (q - y) / n as f64
            })
            .collect();
        let g = self.critic.backward(&trace, &grad);
        apply(&mut self.critic, &g, self.critic_opt.as_mut());

        // actor: ascend Q(s, μ(s)) through the updated critic
        let actor_trace = self.actor.forward_trace(&states, n);
        let ctrace = self.critic.forward_trace(&join(&states, &actor_trace.outputs, sd), n);
        let objective = ctrace.outputs.iter().sum::<f64>() / n as f64;
        let cg = self.critic.backward(&ctrace, &vec![1.0 / n as f64; n]);
        let dq_da: Vec<f64> = (0..n).map(|r| -cg.input[r * (sd + 1) + sd]).collect();
        let ag = self.actor.backward(&actor_trace, &dq_da);
        apply(&mut self.actor, &ag, self.actor_opt.as_mut());

        self.actor_target.soft_update_from(&self.actor, tau);
        self.critic_target.soft_update_from(&self.critic, tau);
        Some(UpdateStats {
            critic_loss: loss / n as f64,
            actor_objective: objective,
        })
    }

    /// Network weights and exploration noise as an `f64` archive.
    pub fn to_archive(&self) -> Archive {
        let mut entries = Vec::new();
        for (prefix, net) in [
            ("actor", &self.actor),
            ("critic", &self.critic),
            ("actor_target", &self.actor_target),
            ("critic_target", &self.critic_target),
        ] {
            for (i, l) in net.layers.iter().enumerate() {
                entries.push(Entry {
                    name: format!("{prefix}.{i}.weight"),
                    shape: vec![l.fan_out, l.fan_in],
                    data: EntryData::F64(l.weight.clone()),
                });
                entries.push(Entry {
                    name: format!("{prefix}.{i}.bias"),
                    shape: vec![l.fan_out],
                    data: EntryData::F64(l.bias.clone()),
                });
            }
        }
        entries.push(Entry {
            name: "sigma".to_string(),
            shape: vec![1],
            data: EntryData::F64(vec![self.sigma]),
        });
        Archive {
            entries,
            ..Archive::default()
        }
    }

    /// Restore weights and noise saved by [`Ddpg::to_archive`]. Optimizer
    /// moments and the replay buffer start empty.
    pub fn load_archive(&mut self, archive: &Archive, path: &Path) -> Result<()> {
        let fail = |reason: String| Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason,
        };
        let fetch = |name: &str, len: usize| -> Result<Vec<f64>> {
            let e = archive
                .entry(name)
                .ok_or_else(|| fail(format!("missing agent entry `{name}`")))?;
            match &e.data {
                EntryData::F64(v) if v.len() == len => Ok(v.clone()),
                _ => Err(fail(format!("agent entry `{name}` has the wrong type or size"))),
            }
        };
        for (prefix, net) in [
            ("actor", &mut self.actor),
            ("critic", &mut self.critic),
            ("actor_target", &mut self.actor_target),
            ("critic_target", &mut self.critic_target),
        ] {
            for (i, l) in net.layers.iter_mut().enumerate() {
                l.weight = fetch(&format!("{prefix}.{i}.weight"), l.weight.len())?;
                l.bias = fetch(&format!("{prefix}.{i}.bias"), l.bias.len())?;
            }
        }
        self.sigma = fetch("sigma", 1)?[0];
        Ok(())
    }
}

fn join(states: &[f64], actions: &[f64], sd: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(actions.len() * (sd + 1));
    for (s, &a) in states.chunks_exact(sd).zip(actions) {
        out.extend_from_slice(s);
        out.push(a);
    }
    out
}

fn apply(net: &mut Mlp, grads: &MlpGrads, opt: &mut dyn Optimizer) {
    for (i, (l, (dw, db))) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
        opt.step(2 * i, &mut l.weight, dw);
        opt.step(2 * i + 1, &mut l.bias, db);
    }
}
