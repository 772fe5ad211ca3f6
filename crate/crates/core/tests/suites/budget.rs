use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entprune::env::{search, BudgetModel, RandomReward, SearchConfig, SearchOutcome};
use entprune::graph::{build_preset, ModelGraph};
use entprune::pruner::{build_calibration_cache, kept_count, CalibrationCache};

use super::{smooth_images, Check};

pub const BUDGET_SLACK: f64 = 1.02;
pub const A_MAX: f64 = 0.8;

pub struct Fixture {
    pub graph: ModelGraph,
    pub cache: CalibrationCache,
}

pub fn tinyvgg6_fixture(calibration: usize, seed: u64) -> Fixture {
    let graph = build_preset("tinyvgg6", [3, 32, 32], seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let images = smooth_images(calibration, 3, 32, 32, &mut rng);
    let cache = build_calibration_cache(&graph, &images, 10, seed).unwrap();
    Fixture { graph, cache }
}

pub fn random_search(fx: &Fixture, beta: f64, episodes: usize, reward_seed: u64, seed: u64) -> SearchOutcome {
    let config = SearchConfig {
        flops_target: beta,
        reward: "random".into(),
        episodes,
        seed,
        ..SearchConfig::default()
    };
    let mut reward = RandomReward::new(reward_seed);
    search(&config, &fx.graph, &fx.cache, &mut reward).unwrap()
}

/// Preserved FLOPS of every completed episode stays under the target.
pub fn episodes_respect_budget(fx: &Fixture) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for beta in [0.5, 0.2, 0.1] {
        let out = random_search(fx, beta, 100, 17, 5);
        let worst = out.log.iter().map(|e| e.preserved_ratio).fold(0.0, f64::max);
        let pass = !out.log.is_empty() && worst <= beta * BUDGET_SLACK;
        ok &= pass;
        lines.push(format!(
            "beta {beta}: {} completed, {} infeasible, max ratio {worst:.4}",
            out.log.len(),
            out.infeasible
        ));
    }
    Check::new("budget per episode", ok, lines.join("; "))
}

/// Widths of the first `t` layers after clipping random proposals.
pub fn random_prefix<R: Rng + ?Sized>(budget: &BudgetModel, t: usize, beta: f64, rng: &mut R) -> Vec<usize> {
    let mut prefix = Vec::with_capacity(t);
    for step in 0..t {
        let c = budget.clip_action(rng.random(), step, &prefix, beta, A_MAX).unwrap();
        prefix.push(c.kept);
    }
    prefix
}

/// Monotonicity, pass-through inside `[a_min, a_max]`, and reachability of
/// the budget on random `(a, t)` probes.
pub fn clip_is_monotone(graph: &ModelGraph, probes: usize) -> Check {
    let budget = BudgetModel::new(graph).unwrap().with_a_max(A_MAX);
    let widths = budget.original_widths().to_vec();
    let total = budget.original_flops() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut violations = Vec::new();
    for probe in 0..probes {
        let beta = [0.5, 0.2, 0.1][probe % 3];
        let t = rng.random_range(0..budget.num_layers());
        let prefix = random_prefix(&budget, t, beta, &mut rng);
        // occasionally probe outside [0, 1] as well
        let draw = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.1) {
                rng.random_range(-0.5..1.5)
            } else {
                rng.random()
            }
        };
        let (a1, a2) = (draw(&mut rng), draw(&mut rng));
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let c_lo = budget.clip_action(lo, t, &prefix, beta, A_MAX).unwrap();
        let c_hi = budget.clip_action(hi, t, &prefix, beta, A_MAX).unwrap();
        if c_lo.action > c_hi.action {
            violations.push(format!("t={t} a={lo:.4},{hi:.4} gave {:.4} > {:.4}", c_lo.action, c_hi.action));
        }
        for (a, c) in [(lo, c_lo), (hi, c_hi)] {
            if (c.a_min..=A_MAX).contains(&a) && c.action != a {
                violations.push(format!("t={t} a={a} inside [{:.4}, {A_MAX}] moved to {}", c.a_min, c.action));
            }
            if c.action < c.a_min || c.action > A_MAX {
                violations.push(format!("t={t} action {} outside [{}, {A_MAX}]", c.action, c.a_min));
            }
            let mut w = prefix.clone();
            w.push(c.kept);
            w.extend(widths[t + 1..].iter().map(|&n| kept_count(n, A_MAX)));
            let f = budget.flops_for_widths(&w).unwrap() as f64;
            if f > beta * total {
                violations.push(format!("t={t} leaves budget unreachable ({:.4} > {beta})", f / total));
            }
        }
    }
    Check::new(
        "clip monotonicity",
        violations.is_empty(),
        if violations.is_empty() {
            format!("{probes} probes, no violations")
        } else {
            format!("{} violations, first: {}", violations.len(), violations[0])
        },
    )
}

pub fn all() -> Vec<Check> {
    let fx = tinyvgg6_fixture(100, 1);
    vec![episodes_respect_budget(&fx), clip_is_monotone(&fx.graph, 1000)]
}
