//! Independent oracles and check suites shared by the integration tests and
//! the acceptance report.
#![allow(dead_code)]

pub mod agent;
pub mod budget;
pub mod entropy;
pub mod numerics;
pub mod robustness;

use rand::Rng;

use entprune::numerics::Tensor;

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }

    pub fn assert(&self) {
        assert!(self.passed, "{}: {}", self.name, self.detail);
    }
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Ranks starting at 1, ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// `n` images of low-frequency sinusoids plus a little noise, roughly
/// standardized.
pub fn smooth_images<R: Rng + ?Sized>(n: usize, c: usize, h: usize, w: usize, rng: &mut R) -> Tensor {
    use std::f64::consts::TAU;
    let mut data = Vec::with_capacity(n * c * h * w);
    for _ in 0..n {
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.5..3.0),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.3..1.0),
                ]
            })
            .collect();
        for ch in 0..c {
            let tint = rng.random_range(-0.5..0.5);
            for i in 0..h {
                for j in 0..w {
                    let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
                    let mut v = tint;
                    for (k, wv) in waves.iter().enumerate() {
                        let shift = (ch + k) as f64 * 0.7;
                        v += wv[3] * (TAU * (wv[0] * y + wv[1] * x) + wv[2] + shift).sin();
                    }
                    v += rng.random_range(-0.05..0.05);
                    data.push(v as f32);
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], data).unwrap()
}
