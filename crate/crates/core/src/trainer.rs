//! Momentum SGD with a per-epoch cosine schedule.

use std::f64::consts::PI;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::ModelGraph;
use crate::numerics::Tensor;
use crate::pruner::{plan_kept_sets, SparsityPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Random horizontal flip plus 4-pixel pad-and-crop.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr0: 0.01,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return invalid("training needs at least one epoch");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return invalid(format!("learning rate must be non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0,1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        Ok(())
    }
}

/// `lr0·½·(1 + cos(π·t/T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return invalid("cosine schedule needs a positive horizon");
    }
    if t > total {
        return invalid(format!("step {t} beyond schedule horizon {total}"));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,train_loss,train_acc,test_acc\n");
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{:.8},{:.6},{:.6},{:.6}\n",
                r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
            ));
        }
        s
    }
}

/// Mean softmax cross-entropy of `logits` (`N×K`) and its gradient.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor, usize)> {
    let (n, k) = logits.dims2()?;
    if n != labels.len() {
        return shape_err(format!("{n} logit rows but {} labels", labels.len()));
    }
    let mut grad = vec![0.0f32; n * k];
    let mut loss = 0.0;
    let mut correct = 0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * k..(r + 1) * k];
        let y = label as usize;
        if y >= k {
            return invalid(format!("label {y} out of range for {k} classes"));
        }
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let sum: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        loss += m + sum.ln() - row[y] as f64;
        for (j, &v) in row.iter().enumerate() {
            let p = (v as f64 - m).exp() / sum;
            grad[r * k + j] = ((p - if j == y { 1.0 } else { 0.0 }) / n as f64) as f32;
        }
        if argmax(row) == y {
            correct += 1;
        }
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?, correct))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Fraction of rows whose first maximal logit matches the label.
pub fn accuracy_of_logits(logits: &Tensor, labels: &[u8]) -> Result<f64> {
    let (n, k) = logits.dims2()?;
    if n != labels.len() || n == 0 {
        return shape_err("accuracy needs one label per logit row and at least one row");
    }
    let hits = (0..n)
        .filter(|&r| argmax(&logits.data()[r * k..(r + 1) * k]) == labels[r] as usize)
        .count();
    Ok(hits as f64 / n as f64)
}

const EVAL_CHUNK: usize = 100;

pub fn evaluate(graph: &ModelGraph, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("cannot evaluate on an empty split");
    }
    let mut hits = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let logits = graph.forward(&data.images.slice_outer(start, end)?)?;
        hits += accuracy_of_logits(&logits, &data.labels[start..end])? * (end - start) as f64;
        start = end;
    }
    Ok(hits / data.len() as f64)
}

/// Flip and pad-crop every image of a batch in place.
fn augment_batch<R: Rng + ?Sized>(batch: &mut Tensor, rng: &mut R) -> Result<()> {
    const PAD: usize = 4;
    let (n, c, h, w) = batch.dims4()?;
    let mut scratch = vec![0.0f32; c * h * w];
    for i in 0..n {
        let img = &mut batch.data_mut()[i * c * h * w..(i + 1) * c * h * w];
        let flip = rng.random_bool(0.5);
        let dy = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
        let dx = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sy = y as isize + dy;
                    let sx0 = x as isize + dx;
                    let sx = if flip { w as isize - 1 - sx0 } else { sx0 };
                    scratch[(ch * h + y) * w + x] =
                        if sy < 0 || sy >= h as isize || sx0 < 0 || sx0 >= w as isize {
                            0.0
                        } else {
                            img[(ch * h + sy as usize) * w + sx as usize]
                        };
                }
            }
        }
        img.copy_from_slice(&scratch);
    }
    Ok(())
}

/// Train `graph` on `train`, scoring `test` after every epoch.
pub fn train(graph: &ModelGraph, train: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(ModelGraph, History)> {
    config.validate()?;
    if train.is_empty() {
        return invalid("training split is empty");
    }
    let mut g = graph.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity: Vec<Option<(Vec<f32>, Vec<f32>)>> = g
        .layers()
        .iter()
        .map(|l| l.params.as_ref().map(|p| (vec![0.0; p.weight.len()], vec![0.0; p.bias.len()])))
        .collect();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mu = config.momentum as f32;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config.epochs, config.lr0)?;
        let lr32 = lr as f32;
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let mut x = train.images.gather_outer(idx)?;
            if config.augment {
                augment_batch(&mut x, &mut rng)?;
            }
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let (logits, cache) = g.forward_cached(&x)?;
            let (loss, grad, hits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            loss_sum += loss * idx.len() as f64;
            correct += hits;
            let grads = g.backward(&cache, &grad)?;
            for ((layer, grad), vel) in g.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                let (Some(p), Some(gp), Some((vw, vb))) = (layer.params.as_mut(), grad, vel.as_mut()) else {
                    continue;
                };
                for (pv, (gv, v)) in [(&mut p.weight, (&gp.weight, vw)), (&mut p.bias, (&gp.bias, vb))] {
                    for ((w, &gw), m) in pv.data_mut().iter_mut().zip(gv.data()).zip(v.iter_mut()) {
                        *m = mu * *m + gw;
                        *w -= lr32 * *m;
                    }
                }
            }
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            test_acc: if test.is_empty() { f64::NAN } else { evaluate(&g, test)? },
        };
        info!(
            "epoch {} lr {:.5} loss {:.4} train {:.4} test {:.4}",
            rec.epoch, rec.lr, rec.train_loss, rec.train_acc, rec.test_acc
        );
        history.epochs.push(rec);
    }
    Ok((g, history))
}

/// Continue training from the given (pruned and reconstructed) weights.
/// Zero epochs return the graph unchanged.
pub fn fine_tune(graph: &ModelGraph, train_set: &Dataset, test: &Dataset, config: &TrainConfig) -> Result<(ModelGraph, History)> {
    if config.epochs == 0 {
        return Ok((graph.clone(), History::default()));
    }
    train(graph, train_set, test, config)
}

/// The architecture a plan leaves behind, freshly initialized from `init_seed`.
pub fn pruned_architecture(plan: &SparsityPlan, original: &ModelGraph, init_seed: u64) -> Result<ModelGraph> {
    let kept = plan_kept_sets(original, plan)?;
    let mut decls = original.blueprint();
    let mut widths = kept.iter().map(Vec::len);
    for d in decls.iter_mut().filter(|d| matches!(d.op, crate::numerics::LayerOp::Conv { .. })) {
        d.width = widths.next().expect("one kept set per convolution");
    }
    ModelGraph::from_blueprint(
        original.input_shape(),
        &decls,
        &mut ChaCha8Rng::seed_from_u64(init_seed),
    )
}

/// Train the pruned architecture from a fresh random initialization.
pub fn train_from_scratch(
    plan: &SparsityPlan,
    original: &ModelGraph,
    train_set: &Dataset,
    test: &Dataset,
    config: &TrainConfig,
    init_seed: u64,
) -> Result<(ModelGraph, History)> {
    train(&pruned_architecture(plan, original, init_seed)?, train_set, test, config)
}
