use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entprune::entropy::{
    ame, ame_of_grid, bivariate_entropy, joint_distribution, quantize_channel, relative_entropy, sde,
    univariate_entropy, ChannelEntropy, EntropyConfig, QuantizedGrid, NEIGHBOR_OFFSETS,
};

use super::Check;

/// Bin ids straight from the definition; `None` for a constant map.
pub fn oracle_bins(map: &[f32], bins: usize) -> Option<Vec<usize>> {
    let lo = map.iter().map(|&v| v as f64).fold(f64::INFINITY, f64::min);
    let hi = map.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return None;
    }
    Some(
        map.iter()
            .map(|&v| (((v as f64 - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1))
            .collect(),
    )
}

/// Pair counts found by visiting every ordered pair of positions and keeping
/// those whose displacement equals `offset`.
pub fn oracle_joint(cells: &[usize], h: usize, w: usize, bins: usize, offset: (isize, isize)) -> (Vec<u64>, u64) {
    let mut counts = vec![0u64; bins * bins];
    let mut pairs = 0;
    for p in 0..h * w {
        for q in 0..h * w {
            let (pi, pj) = ((p / w) as isize, (p % w) as isize);
            let (qi, qj) = ((q / w) as isize, (q % w) as isize);
            if qi - pi == offset.0 && qj - pj == offset.1 {
                counts[cells[p] * bins + cells[q]] += 1;
                pairs += 1;
            }
        }
    }
    (counts, pairs)
}

/// Shannon entropy in bits through natural logarithms.
pub fn oracle_entropy(counts: &[u64], total: u64) -> f64 {
    let n = total as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
        / std::f64::consts::LN_2
}

pub fn oracle_h0(cells: &[usize], bins: usize) -> f64 {
    let mut counts = vec![0u64; bins];
    for &c in cells {
        counts[c] += 1;
    }
    oracle_entropy(&counts, cells.len() as u64)
}

/// Unclamped relative entropy for one offset.
pub fn oracle_relative_raw(cells: &[usize], h: usize, w: usize, bins: usize, offset: (isize, isize)) -> f64 {
    let h0 = oracle_h0(cells, bins);
    let (counts, pairs) = oracle_joint(cells, h, w, bins, offset);
    (oracle_entropy(&counts, pairs) - h0) / h0
}

pub fn oracle_ame(map: &[f32], h: usize, w: usize, bins: usize) -> Option<f64> {
    let cells = oracle_bins(map, bins)?;
    let sum: f64 = [(-1, 0), (0, -1), (1, 0), (0, 1)]
        .iter()
        .map(|&o| oracle_relative_raw(&cells, h, w, bins, o).clamp(0.0, 1.0))
        .sum();
    Some(sum / 4.0)
}

fn cfg(bins: usize) -> EntropyConfig {
    EntropyConfig::new(bins).unwrap()
}

/// Random map: continuous values, or a few repeated levels so that bins tie.
pub fn random_map<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f32> {
    if rng.random_bool(0.5) {
        (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    } else {
        let levels = rng.random_range(2..6);
        (0..len).map(|_| rng.random_range(0..levels) as f32 * 0.25).collect()
    }
}

fn ame_value(map: &[f32], h: usize, w: usize, bins: usize) -> Option<f64> {
    match ame(map, h, w, &cfg(bins)).unwrap() {
        ChannelEntropy::Valid(v) => Some(v),
        ChannelEntropy::Excluded(_) => None,
    }
}

/// Histogram, `H(k,l)`, `H_R` and AME against pair enumeration on 50 random
/// 8×8 maps per bin count.
pub fn pair_enumeration_oracle() -> Check {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(0xE1);
    let mut worst = 0.0f64;
    let mut compared = 0;
    let mut clamped = 0;
    for bins in [2usize, 16, 64] {
        let mut made = 0;
        while made < 50 {
            let map = random_map(64, &mut rng);
            let Some(cells) = oracle_bins(&map, bins) else { continue };
            made += 1;
            let grid = quantize_channel(&map, 8, 8, bins).unwrap();
            let mine: Vec<usize> = grid.cells.iter().map(|&c| c as usize).collect();
            if mine != cells {
                return Check::new("pair enumeration", false, format!("quantization differs at B={bins}"));
            }
            let h0 = univariate_entropy(&grid).unwrap();
            worst = worst.max((h0 - oracle_h0(&cells, bins)).abs());
            for &off in &NEIGHBOR_OFFSETS {
                let hist = joint_distribution(&grid, off).unwrap();
                let (counts, pairs) = oracle_joint(&cells, 8, 8, bins, off);
                if hist.counts != counts || hist.pair_count != pairs {
                    return Check::new("pair enumeration", false, format!("joint counts differ at B={bins} {off:?}"));
                }
                for g in 0..bins {
                    for g2 in 0..bins {
                        let p = counts[g * bins + g2] as f64 / pairs as f64;
                        worst = worst.max((hist.probability(g, g2) - p).abs());
                    }
                }
                let hkl = bivariate_entropy(&hist);
                worst = worst.max((hkl - oracle_entropy(&counts, pairs)).abs());
                let raw = oracle_relative_raw(&cells, 8, 8, bins, off);
                if !(0.0..=1.0).contains(&raw) {
                    clamped += 1;
                }
                worst = worst.max((relative_entropy(hkl, h0).unwrap() - raw.clamp(0.0, 1.0)).abs());
                compared += 1;
            }
            let a = ame_value(&map, 8, 8, bins).unwrap();
            worst = worst.max((a - oracle_ame(&map, 8, 8, bins).unwrap()).abs());
        }
    }
    Check::new(
        "pair enumeration",
        worst <= TOL,
        format!("{compared} offset comparisons, max |diff| {worst:.2e} (tol {TOL:e}), {clamped} raw H_R outside [0,1]"),
    )
}

pub fn ame_in_unit_interval() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE2);
    let mut checked = 0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    while checked < 1000 {
        let bins = [2usize, 16, 64, 256][checked % 4];
        let h = rng.random_range(2..=24);
        let w = rng.random_range(2..=24);
        let map = random_map(h * w, &mut rng);
        let Some(v) = ame_value(&map, h, w, bins) else { continue };
        lo = lo.min(v);
        hi = hi.max(v);
        checked += 1;
    }
    Check::new(
        "AME range",
        lo >= 0.0 && hi <= 1.0,
        format!("1000 maps, AME in [{lo:.4}, {hi:.4}]"),
    )
}

pub fn checkerboard(h: usize, w: usize) -> Vec<f32> {
    (0..h * w).map(|i| ((i / w + i % w) % 2) as f32 * 3.0 - 1.0).collect()
}

pub fn checkerboard_is_ordered() -> Check {
    let mut worst = 0.0f64;
    for (h, w) in [(8, 8), (9, 14), (32, 32)] {
        for bins in [2, 16, 64, 256] {
            worst = worst.max(ame_value(&checkerboard(h, w), h, w, bins).unwrap().abs());
        }
    }
    Check::new("checkerboard", worst <= 1e-12, format!("max |AME| {worst:.2e} (tol 1e-12)"))
}

pub fn iid_map_is_disordered() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE3);
    let cells: Vec<u16> = (0..256 * 256).map(|_| rng.random_range(0..16)).collect();
    let grid = QuantizedGrid::from_cells(256, 256, 16, cells).unwrap();
    let v = ame_of_grid(&grid).unwrap();
    Check::new("IID uniform", v >= 0.9, format!("256x256, B=16: AME {v:.6} (need >= 0.9)"))
}

/// AME against the four nearest-neighbor terms of the full disorder sum.
pub fn ame_matches_sde_terms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE4);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut sizes = Vec::new();
    for h in 2..=16 {
        for w in 2..=16 {
            sizes.push((h, w));
        }
    }
    for (i, &(h, w)) in sizes.iter().enumerate() {
        let bins = [2usize, 16, 64, 256][i % 4];
        let map = loop {
            let m = random_map(h * w, &mut rng);
            if oracle_bins(&m, bins).is_some() {
                break m;
            }
        };
        let disorder = sde(&map, h, w, &cfg(bins)).unwrap();
        let mean = NEIGHBOR_OFFSETS.iter().map(|&o| disorder.term(o).unwrap()).sum::<f64>() / 4.0;
        worst = worst.max((mean - ame_value(&map, h, w, bins).unwrap()).abs());
        checked += 1;
    }
    Check::new(
        "SDE consistency",
        worst <= 1e-12,
        format!("{checked} maps from 2x2 to 16x16, max |diff| {worst:.2e} (tol 1e-12)"),
    )
}

/// Full disorder sum against a brute-force double loop over positions.
pub fn sde_matches_brute_force() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE5);
    let mut worst = 0.0f64;
    for (h, w, bins) in [(4, 4, 2), (5, 3, 16), (6, 6, 8), (8, 8, 64)] {
        let map = random_map(h * w, &mut rng);
        let Some(cells) = oracle_bins(&map, bins) else { continue };
        let mut total = 0.0;
        for p in 0..h * w {
            for q in 0..h * w {
                if p == q {
                    continue;
                }
                let off = ((p / w) as isize - (q / w) as isize, (p % w) as isize - (q % w) as isize);
                total += oracle_relative_raw(&cells, h, w, bins, off).clamp(0.0, 1.0);
            }
        }
        let expected = total / (h * w) as f64;
        let got = sde(&map, h, w, &cfg(bins)).unwrap().value;
        worst = worst.max((got - expected).abs());
    }
    Check::new("SDE brute force", worst <= 1e-9, format!("max |diff| {worst:.2e}"))
}

pub fn all() -> Vec<Check> {
    vec![
        pair_enumeration_oracle(),
        ame_in_unit_interval(),
        checkerboard_is_ordered(),
        iid_map_is_disordered(),
        ame_matches_sde_terms(),
        sde_matches_brute_force(),
    ]
}
