use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::entropy::{network_entropy, EntropyConfig};
use crate::error::{invalid, Error, Result};
use crate::graph::ModelGraph;
use crate::numerics::Tensor;
use crate::trainer::evaluate;

/// Scores a pruned (reconstructed, not fine-tuned) graph at episode end.
pub trait RewardSignal {
    fn name(&self) -> &'static str;
    fn reward(&mut self, pruned: &ModelGraph) -> Result<f64>;
}

/// `1 − mean AME` over all convolutional activations of the calibration batch.
pub struct EntropyReward {
    batch: Tensor,
    config: EntropyConfig,
}

impl EntropyReward {
    pub fn new(batch: Tensor, config: EntropyConfig) -> Result<Self> {
        if batch.dims4()?.0 == 0 {
            return invalid("entropy reward needs a non-empty calibration batch");
        }
        Ok(Self { batch, config })
    }
}

impl RewardSignal for EntropyReward {
    fn name(&self) -> &'static str {
        "entropy"
    }

    fn reward(&mut self, pruned: &ModelGraph) -> Result<f64> {
        Ok(1.0 - network_entropy(pruned, &self.batch, &self.config, None)?.network_mean)
    }
}

/// Negative control: rewards high spatial entropy instead of low.
pub struct EntropyMaxReward(EntropyReward);

impl EntropyMaxReward {
    pub fn new(batch: Tensor, config: EntropyConfig) -> Result<Self> {
        EntropyReward::new(batch, config).map(Self)
    }
}

impl RewardSignal for EntropyMaxReward {
    fn name(&self) -> &'static str {
        "entropy-max"
    }

    fn reward(&mut self, pruned: &ModelGraph) -> Result<f64> {
        Ok(network_entropy(pruned, &self.0.batch, &self.0.config, None)?.network_mean)
    }
}

/// Top-1 accuracy on the held-out mini split.
pub struct AccuracyReward {
    data: Dataset,
}

impl AccuracyReward {
    pub fn new(data: Dataset) -> Result<Self> {
        if data.is_empty() {
            return invalid("accuracy reward needs a non-empty evaluation split");
        }
        Ok(Self { data })
    }
}

impl RewardSignal for AccuracyReward {
    fn name(&self) -> &'static str {
        "accuracy"
    }

    fn reward(&mut self, pruned: &ModelGraph) -> Result<f64> {
        evaluate(pruned, &self.data)
    }
}

/// Uniform draws from its own seeded stream, ignoring the graph.
pub struct RandomReward {
    rng: ChaCha8Rng,
}

impl RandomReward {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl RewardSignal for RandomReward {
    fn name(&self) -> &'static str {
        "random"
    }

    fn reward(&mut self, _pruned: &ModelGraph) -> Result<f64> {
        Ok(self.rng.random())
    }
}

/// What a reward may be built from.
pub struct RewardInputs<'a> {
    pub calibration: &'a Tensor,
    pub mini: Option<&'a Dataset>,
    pub entropy: EntropyConfig,
    pub seed: u64,
}

type Factory = fn(&RewardInputs) -> Result<Box<dyn RewardSignal>>;

/// Name → reward constructor lookup.
pub struct RewardRegistry {
    entries: Vec<(&'static str, Factory)>,
}

impl Default for RewardRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register("entropy", |i| Ok(Box::new(EntropyReward::new(i.calibration.clone(), i.entropy)?)));
        r.register("entropy-max", |i| {
            Ok(Box::new(EntropyMaxReward::new(i.calibration.clone(), i.entropy)?))
        });
        r.register("accuracy", |i| {
            let data = i
                .mini
                .ok_or_else(|| Error::InvalidArgument("accuracy reward needs the mini split".into()))?;
            Ok(Box::new(AccuracyReward::new(data.clone())?))
        });
        r.register("random", |i| Ok(Box::new(RandomReward::new(i.seed))));
        r
    }
}

impl RewardRegistry {
    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn build(&self, name: &str, inputs: &RewardInputs) -> Result<Box<dyn RewardSignal>> {
        let (_, f) = self.entries.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownName {
            kind: "reward",
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        f(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_preset;
    use crate::numerics::Tensor;

    #[test]
    fn registry_lists_and_rejects() {
        let r = RewardRegistry::default();
        assert_eq!(r.names(), vec!["entropy", "entropy-max", "accuracy", "random"]);
        let cal = Tensor::zeros(&[1, 3, 32, 32]);
        let inputs = RewardInputs {
            calibration: &cal,
            mini: None,
            entropy: EntropyConfig::default(),
            seed: 0,
        };
        assert!(matches!(r.build("nope", &inputs), Err(Error::UnknownName { .. })));
        assert!(r.build("accuracy", &inputs).is_err());
        assert!(r.build("random", &inputs).is_ok());
    }

    #[test]
    fn random_reward_is_seeded_uniform() {
        let g = build_preset("tinyvgg6", [3, 32, 32], 0).unwrap();
        let mut a = RandomReward::new(5);
        let mut b = RandomReward::new(5);
        let xs: Vec<f64> = (0..1000).map(|_| a.reward(&g).unwrap()).collect();
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
        assert_eq!(xs[0], b.reward(&g).unwrap());
        let mean = xs.iter().sum::<f64>() / 1000.0;
        assert!((mean - 0.5).abs() < 0.05);
    }

    #[test]
    fn perfect_classifier_scores_one() {
        use crate::graph::LayerDecl;
        use crate::numerics::{LayerOp, Params};
        // identity-like linear map on a 2-pixel input
        let decls = vec![LayerDecl::simple("f", LayerOp::Flatten), LayerDecl::linear("fc", 2)];
        let mut g = ModelGraph::from_blueprint([1, 1, 2], &decls, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        g.layers_mut()[1].params = Some(Params {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        });
        let x = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut r = AccuracyReward::new(Dataset::new(x, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(r.reward(&g).unwrap(), 1.0);
    }
}
