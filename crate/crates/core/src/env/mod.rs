//! The layer-by-layer pruning MDP.
//!
//! One episode visits every convolution in chain order. At each step the
//! agent sees an 11-feature description of the layer, proposes a sparsity
//! ratio, and the budget clip raises it just enough that the FLOPS target
//! stays reachable. After the last layer the plan is applied with
//! reconstruction and scored by a [`RewardSignal`].

mod budget;
mod reward;
mod search;

pub use budget::{BudgetModel, ClippedAction, STATE_DIM};
pub use reward::{
    AccuracyReward, EntropyMaxReward, EntropyReward, RandomReward, RewardInputs, RewardRegistry,
    RewardSignal,
};
pub use search::{
    episodes_csv, run_episode, search, EpisodeLog, EpisodeResult, SearchConfig, SearchOutcome,
};
