use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use entprune::agent::{Mlp, OutputActivation};
use entprune::graph::{LayerDecl, ModelGraph};
use entprune::numerics::{
    layer_backward, layer_forward, least_squares, least_squares_dual, LayerOp, Matrix, Params, Tensor,
};
use entprune::pruner::{build_calibration_cache, cache_residual, reconstruct_layer, truncated_params, DEFAULT_RIDGE};
use entprune::trainer::softmax_cross_entropy;

use super::Check;

pub const FD_EPS: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Direct seven-loop cross-correlation in `f64`.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let s = x.shape();
    let (n, c, h, wd) = (s[0], s[1], s[2], s[3]);
    let k = w.shape();
    let (co, kh, kw) = (k[0], k[2], k[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xv = |ni: usize, ci: usize, yi: isize, xi: isize| -> f64 {
        if yi < 0 || xi < 0 || yi >= h as isize || xi >= wd as isize {
            0.0
        } else {
            x.data()[((ni * c + ci) * h + yi as usize) * wd + xi as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(n * co * oh * ow);
    for ni in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[o] as f64;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let yi = (oy * stride + ky) as isize - pad as isize;
                                let xi = (ox * stride + kx) as isize - pad as isize;
                                let wv = w.data()[((o * c + ci) * kh + ky) * kw + kx] as f64;
                                acc += wv * xv(ni, ci, yi, xi);
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn naive_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = Vec::with_capacity(n * o);
    for r in 0..n {
        for q in 0..o {
            let mut acc = b.data()[q] as f64;
            for p in 0..i {
                acc += x.data()[r * i + p] as f64 * w.data()[q * i + p] as f64;
            }
            out.push(acc);
        }
    }
    out
}

pub fn naive_pool(x: &Tensor, size: usize, max: bool) -> Vec<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..h / size {
            for ox in 0..w / size {
                let window: Vec<f64> = (0..size * size)
                    .map(|t| x.data()[p * h * w + (oy * size + t / size) * w + ox * size + t % size] as f64)
                    .collect();
                out.push(if max {
                    window.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                } else {
                    window.iter().sum::<f64>() / window.len() as f64
                });
            }
        }
    }
    out
}

fn max_diff(a: &Tensor, b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.data().iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

pub fn forward_matches_naive() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst = 0.0f64;
    for (n, c, h, w, co, k, stride, pad) in [
        (2, 3, 8, 8, 4, 3, 1, 1),
        (1, 2, 7, 9, 3, 3, 2, 0),
        (2, 4, 6, 6, 5, 1, 1, 0),
        (1, 1, 5, 5, 2, 5, 1, 2),
        (3, 3, 10, 7, 2, 3, 3, 1),
    ] {
        let x = uniform(&[n, c, h, w], &mut rng);
        let p = Params {
            weight: uniform(&[co, c, k, k], &mut rng),
            bias: uniform(&[co], &mut rng),
        };
        let y = layer_forward(&LayerOp::Conv { stride, pad }, &x, Some(&p)).unwrap();
        worst = worst.max(max_diff(&y, &naive_conv(&x, &p.weight, &p.bias, stride, pad)));
    }
    for (n, i, o) in [(1, 5, 3), (4, 17, 9), (3, 64, 10)] {
        let x = uniform(&[n, i], &mut rng);
        let p = Params {
            weight: uniform(&[o, i], &mut rng),
            bias: uniform(&[o], &mut rng),
        };
        let y = layer_forward(&LayerOp::Linear, &x, Some(&p)).unwrap();
        worst = worst.max(max_diff(&y, &naive_linear(&x, &p.weight, &p.bias)));
    }
    for (shape, size) in [([2, 3, 8, 8], 2), ([1, 2, 9, 6], 3), ([1, 1, 4, 4], 4)] {
        let x = uniform(&shape, &mut rng);
        let y = layer_forward(&LayerOp::MaxPool { size }, &x, None).unwrap();
        worst = worst.max(max_diff(&y, &naive_pool(&x, size, true)));
        let y = layer_forward(&LayerOp::AvgPool { size }, &x, None).unwrap();
        worst = worst.max(max_diff(&y, &naive_pool(&x, size, false)));
    }
    Check::new("forward oracles", worst <= 1e-6, format!("max |diff| {worst:.2e} (tol 1e-6)"))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` around every element of `t`, using the step
/// that survives `f32` rounding.
fn fd_grad(t: &mut Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        let orig = t.data()[i];
        let up = (orig as f64 + FD_EPS) as f32;
        let down = (orig as f64 - FD_EPS) as f32;
        t.data_mut()[i] = up;
        let fu = f(t);
        t.data_mut()[i] = down;
        let fdn = f(t);
        t.data_mut()[i] = orig;
        g.push((fu - fdn) / (up as f64 - down as f64));
    }
    g
}

fn weighted_sum(y: &Tensor, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(&a, &b)| a as f64 * b).sum()
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Input and parameter gradients of one layer on the loss `Σ r·y`.
fn layer_grad_error(op: LayerOp, input_shape: &[usize], params: Option<Params>, rng: &mut ChaCha8Rng) -> f64 {
    let mut x = uniform(input_shape, rng);
    // keep inputs away from the rectifier kink and pool ties
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f32.copysign(*v);
        }
    }
    let y = layer_forward(&op, &x, params.as_ref()).unwrap();
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0f32..1.0) as f64).collect();
    let gy = Tensor::new(y.shape().to_vec(), r.iter().map(|&v| v as f32).collect()).unwrap();
    let (dx, dp) = layer_backward(&op, params.as_ref(), Some(&x), &gy).unwrap();
    let p0 = params.clone();
    let fx = fd_grad(&mut x.clone(), |xi| weighted_sum(&layer_forward(&op, xi, p0.as_ref()).unwrap(), &r));
    let mut worst = rel_err(&to_f64(&dx), &fx);
    if let (Some(p), Some(dp)) = (params, dp) {
        let mut w = p.weight.clone();
        let fw = fd_grad(&mut w, |wi| {
            let q = Params {
                weight: wi.clone(),
                bias: p.bias.clone(),
            };
            weighted_sum(&layer_forward(&op, &x, Some(&q)).unwrap(), &r)
        });
        worst = worst.max(rel_err(&to_f64(&dp.weight), &fw));
        let mut b = p.bias.clone();
        let fb = fd_grad(&mut b, |bi| {
            let q = Params {
                weight: p.weight.clone(),
                bias: bi.clone(),
            };
            weighted_sum(&layer_forward(&op, &x, Some(&q)).unwrap(), &r)
        });
        worst = worst.max(rel_err(&to_f64(&dp.bias), &fb));
    }
    worst
}

/// Every layer kind, the softmax loss, a whole graph and the agent networks.
pub fn gradients_match_finite_differences() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA2);
    let mut rows = Vec::new();
    let conv = |co, c, k, rng: &mut ChaCha8Rng| {
        Some(Params {
            weight: uniform(&[co, c, k, k], rng),
            bias: uniform(&[co], rng),
        })
    };
    let p = conv(1, 1, 3, &mut rng);
    rows.push(("conv 1x1x3x3", layer_grad_error(LayerOp::Conv { stride: 1, pad: 1 }, &[1, 1, 5, 5], p, &mut rng)));
    let p = conv(4, 3, 3, &mut rng);
    rows.push(("conv pad 1", layer_grad_error(LayerOp::Conv { stride: 1, pad: 1 }, &[2, 3, 6, 6], p, &mut rng)));
    let p = conv(3, 2, 3, &mut rng);
    rows.push(("conv stride 2", layer_grad_error(LayerOp::Conv { stride: 2, pad: 0 }, &[1, 2, 7, 7], p, &mut rng)));
    let p = Some(Params {
        weight: uniform(&[4, 6], &mut rng),
        bias: uniform(&[4], &mut rng),
    });
    rows.push(("linear", layer_grad_error(LayerOp::Linear, &[3, 6], p, &mut rng)));
    rows.push(("relu", layer_grad_error(LayerOp::Relu, &[2, 3, 4, 4], None, &mut rng)));
    rows.push(("maxpool", layer_grad_error(LayerOp::MaxPool { size: 2 }, &[2, 2, 4, 4], None, &mut rng)));
    rows.push(("avgpool", layer_grad_error(LayerOp::AvgPool { size: 2 }, &[2, 2, 4, 4], None, &mut rng)));
    rows.push(("flatten", layer_grad_error(LayerOp::Flatten, &[2, 2, 3, 3], None, &mut rng)));

    // softmax cross-entropy w.r.t. logits
    let logits = uniform(&[4, 5], &mut rng);
    let labels = [0u8, 3, 4, 1];
    let (_, g, _) = softmax_cross_entropy(&logits, &labels).unwrap();
    let fd = fd_grad(&mut logits.clone(), |l| softmax_cross_entropy(l, &labels).unwrap().0);
    rows.push(("softmax cross-entropy", rel_err(&to_f64(&g), &fd)));

    rows.push(("graph", graph_grad_error(&mut rng)));
    rows.push(("agent mlp", mlp_grad_error(&mut rng)));

    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = rows
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Check::new(
        "finite differences",
        worst <= FD_TOL,
        format!("relative error (eps {FD_EPS:e}, tol {FD_TOL:e}): {detail}"),
    )
}

pub fn small_blueprint() -> Vec<LayerDecl> {
    vec![
        LayerDecl::conv("c1", 4, 3, 1, 1),
        LayerDecl::simple("r1", LayerOp::Relu),
        LayerDecl::simple("p1", LayerOp::MaxPool { size: 2 }),
        LayerDecl::conv("c2", 6, 3, 1, 1),
        LayerDecl::simple("r2", LayerOp::Relu),
        LayerDecl::simple("f", LayerOp::Flatten),
        LayerDecl::linear("fc", 3),
    ]
}

fn graph_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let g = ModelGraph::from_blueprint([2, 6, 6], &small_blueprint(), rng).unwrap();
    let x = uniform(&[2, 2, 6, 6], rng);
    let labels = [1u8, 2];
    let (logits, cache) = g.forward_cached(&x).unwrap();
    let (_, dlogits, _) = softmax_cross_entropy(&logits, &labels).unwrap();
    let grads = g.backward(&cache, &dlogits).unwrap();
    let mut worst = 0.0f64;
    for idx in g.param_indices() {
        let analytic = grads[idx].as_ref().unwrap();
        for which in 0..2 {
            let base = g.layers()[idx].params.clone().unwrap();
            let mut t = if which == 0 { base.weight.clone() } else { base.bias.clone() };
            let fd = fd_grad(&mut t, |ti| {
                let mut layers = g.layers().to_vec();
                let p = layers[idx].params.as_mut().unwrap();
                if which == 0 {
                    p.weight = ti.clone();
                } else {
                    p.bias = ti.clone();
                }
                let h = ModelGraph::from_layers(g.input_shape(), layers).unwrap();
                softmax_cross_entropy(&h.forward(&x).unwrap(), &labels).unwrap().0
            });
            let a = if which == 0 { &analytic.weight } else { &analytic.bias };
            worst = worst.max(rel_err(&to_f64(a), &fd));
        }
    }
    worst
}

fn mlp_grad_error(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst = 0.0f64;
    for out in [OutputActivation::Sigmoid, OutputActivation::Identity] {
        let mut net = Mlp::new(&[4, 7, 5, 1], out, 0.3, rng);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = net.forward_trace(&x, 3);
        let grads = net.backward(&trace, &[1.0, -0.5, 2.0]);
        let loss = |n: &Mlp| {
            let y = n.forward(&x, 3);
            y[0] - 0.5 * y[1] + 2.0 * y[2]
        };
        for li in 0..net.layers.len() {
            let mut fd = Vec::new();
            for wi in 0..net.layers[li].weight.len() {
                let orig = net.layers[li].weight[wi];
                net.layers[li].weight[wi] = orig + FD_EPS;
                let up = loss(&net);
                net.layers[li].weight[wi] = orig - FD_EPS;
                let down = loss(&net);
                net.layers[li].weight[wi] = orig;
                fd.push((up - down) / (2.0 * FD_EPS));
            }
            worst = worst.max(rel_err(&grads.layers[li].0, &fd));
        }
    }
    worst
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows, m.cols, |r, c| m.get(r, c))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_abs(a: &Matrix, b: &DMatrix<f64>) -> f64 {
    let mut m = 0.0f64;
    for r in 0..a.rows {
        for c in 0..a.cols {
            m = m.max((a.get(r, c) - b[(r, c)]).abs());
        }
    }
    m
}

/// Normal-equation and kernel solvers against an SVD pseudo-inverse. A ridge
/// is folded into the oracle by stacking `√λ·I` under `X`.
pub fn least_squares_matches_pseudo_inverse() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let mut worst = 0.0f64;
    for (m, p, q, ridge) in [(40, 6, 3, 0.0f64), (200, 30, 8, 0.0), (25, 25, 2, 0.0), (60, 10, 4, 0.3), (12, 12, 3, 1e-3)] {
        let x = random_matrix(m, p, &mut rng);
        let y = random_matrix(m, q, &mut rng);
        let mut xa = to_na(&x);
        let mut ya = to_na(&y);
        if ridge > 0.0 {
            xa = xa.insert_rows(m, p, 0.0);
            ya = ya.insert_rows(m, p, 0.0);
            for i in 0..p {
                xa[(m + i, i)] = ridge.sqrt();
            }
        }
        let oracle = xa.pseudo_inverse(1e-12).unwrap() * &ya;
        let sol = least_squares(&x, &y, ridge).unwrap();
        worst = worst.max(max_abs(&sol.weights, &oracle));
        // the kernel form is only defined for tall systems when damped
        if ridge > 0.0 {
            let dual = least_squares_dual(&x, &y, ridge).unwrap();
            worst = worst.max(max_abs(&dual.weights, &oracle));
        }
    }
    // wide systems: the kernel form gives the minimum-norm solution
    for (m, p, q) in [(5, 12, 2), (20, 64, 3)] {
        let x = random_matrix(m, p, &mut rng);
        let y = random_matrix(m, q, &mut rng);
        let oracle = to_na(&x).pseudo_inverse(1e-12).unwrap() * to_na(&y);
        worst = worst.max(max_abs(&least_squares_dual(&x, &y, 0.0).unwrap().weights, &oracle));
    }
    Check::new("least squares", worst <= 1e-6, format!("max |diff| vs pseudo-inverse {worst:.2e} (tol 1e-6)"))
}

pub fn recon_blueprint() -> Vec<LayerDecl> {
    vec![
        LayerDecl::conv("a", 8, 3, 1, 1),
        LayerDecl::simple("ra", LayerOp::Relu),
        LayerDecl::conv("b", 8, 3, 1, 1),
        LayerDecl::simple("rb", LayerOp::Relu),
        LayerDecl::simple("pb", LayerOp::MaxPool { size: 2 }),
        LayerDecl::conv("c", 12, 3, 1, 1),
        LayerDecl::simple("rc", LayerOp::Relu),
        LayerDecl::simple("pc", LayerOp::MaxPool { size: 2 }),
        LayerDecl::simple("flat", LayerOp::Flatten),
        LayerDecl::linear("fc", 10),
    ]
}

/// Refit residual never exceeds that of the plainly truncated weights on the
/// same cached system.
pub fn reconstruction_beats_truncation() -> Check {
    let mut worst_ratio = 0.0f64;
    let mut ridge_ratio = 0.0f64;
    let mut failures = 0;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xB000 + case);
        let graph = ModelGraph::from_blueprint([3, 12, 12], &recon_blueprint(), &mut rng).unwrap();
        let samples = uniform(&[60, 3, 12, 12], &mut rng);
        let cache = build_calibration_cache(&graph, &samples, 8, case).unwrap();
        let prunable = graph.prunable_indices();
        let idx = prunable[rng.random_range(0..prunable.len())];
        let n = graph.layers()[idx].spec.c_out;
        let keep = rng.random_range(1..n);
        let mut kept_in = sample(&mut rng, n, keep).into_vec();
        kept_in.sort_unstable();
        let succ = graph.successor_of(idx).unwrap();
        let kept_out: Vec<usize> = (0..graph.layers()[succ].spec.c_out).collect();
        let entry = cache.entry(succ).unwrap();
        let trunc = truncated_params(&graph, succ, &kept_in, &kept_out).unwrap();
        let r_trunc = cache_residual(entry, &kept_in, &kept_out, &trunc).unwrap();
        let rec = reconstruct_layer(entry, &kept_in, &kept_out, 0.0).unwrap();
        let r_rec = cache_residual(entry, &kept_in, &kept_out, &rec.params).unwrap();
        // f32 storage of the refit weights leaves a relative slack of ~1e-7
        if r_rec > r_trunc * (1.0 + 1e-6) + 1e-9 {
            failures += 1;
        }
        worst_ratio = worst_ratio.max(r_rec / r_trunc);
        let damped = reconstruct_layer(entry, &kept_in, &kept_out, DEFAULT_RIDGE).unwrap();
        ridge_ratio = ridge_ratio.max(cache_residual(entry, &kept_in, &kept_out, &damped.params).unwrap() / r_trunc);
    }
    Check::new(
        "reconstruction residual",
        failures == 0,
        format!(
            "20 cases, {failures} violations, worst refit/truncation ratio {worst_ratio:.4} (default ridge {ridge_ratio:.4})"
        ),
    )
}

pub fn all() -> Vec<Check> {
    vec![
        forward_matches_naive(),
        gradients_match_finite_differences(),
        least_squares_matches_pseudo_inverse(),
        reconstruction_beats_truncation(),
    ]
}
