use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use entprune::entropy::EntropyConfig;
use entprune::env::{BudgetModel, EntropyReward, RewardSignal};
use entprune::graph::build_preset;
use entprune::numerics::Tensor;
use entprune::pruner::{build_calibration_cache, canonical_ratio, prune_network, SparsityPlan, DEFAULT_RIDGE};

use super::budget::{random_prefix, A_MAX};
use super::{smooth_images, spearman, Check};

pub const MIN_SPEARMAN: f64 = 0.8;

/// Random plan that satisfies the FLOPS target, drawn through the clip.
pub fn random_feasible_plan(budget: &BudgetModel, beta: f64, rng: &mut ChaCha8Rng) -> SparsityPlan {
    let widths = random_prefix(budget, budget.num_layers(), beta, rng);
    let entries = budget
        .layer_ids()
        .iter()
        .zip(budget.original_widths())
        .zip(&widths)
        .map(|((id, &n), &k)| (id.clone(), canonical_ratio(1.0 - k as f64 / n as f64, n)))
        .collect();
    SparsityPlan::new(entries).unwrap()
}

/// Entropy rewards of 20 random feasible plans rank alike at 128 and 256 bins.
pub fn bin_count_robustness(calibration: usize) -> Check {
    let graph = build_preset("tinyvgg6", [3, 32, 32], 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    let images: Tensor = smooth_images(calibration, 3, 32, 32, &mut rng);
    let cache = build_calibration_cache(&graph, &images, 10, 21).unwrap();
    let budget = BudgetModel::new(&graph).unwrap().with_a_max(A_MAX);
    let mut r128 = EntropyReward::new(images.clone(), EntropyConfig::new(128).unwrap()).unwrap();
    let mut r256 = EntropyReward::new(images, EntropyConfig::new(256).unwrap()).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for _ in 0..20 {
        let plan = random_feasible_plan(&budget, 0.5, &mut rng);
        let pruned = prune_network(&graph, &plan, &cache, DEFAULT_RIDGE).unwrap().graph;
        a.push(r128.reward(&pruned).unwrap());
        b.push(r256.reward(&pruned).unwrap());
    }
    let rho = spearman(&a, &b);
    let spread = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
    Check::new(
        "bin robustness",
        rho >= MIN_SPEARMAN,
        format!(
            "20 plans at beta 0.5, {calibration} calibration images: Spearman {rho:.4} (need >= {MIN_SPEARMAN}); reward spread {:.4} at B=128, {:.4} at B=256",
            spread(&a),
            spread(&b)
        ),
    )
}

pub fn all() -> Vec<Check> {
    vec![bin_count_robustness(100)]
}
