use crate::error::{Error, Result};

/// Update rule applied to each parameter vector of a network.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;
    /// Descend along `grad`; `slot` identifies the parameter vector.
    fn step(&mut self, slot: usize, params: &mut [f64], grad: &[f64]);
}

/// Plain stochastic gradient descent without momentum.
pub struct Sgd {
    lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Self { lr }
    }
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, _slot: usize, params: &mut [f64], grad: &[f64]) {
        for (p, g) in params.iter_mut().zip(grad) {
            *p -= self.lr * g;
        }
    }
}

/// Adam with the usual `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
pub struct Adam {
    lr: f64,
    state: Vec<(Vec<f64>, Vec<f64>, u64)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, state: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, slot: usize, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        while self.state.len() <= slot {
            self.state.push((Vec::new(), Vec::new(), 0));
        }
        let (m, v, t) = &mut self.state[slot];
        if m.len() != params.len() {
            *m = vec![0.0; params.len()];
            *v = vec![0.0; params.len()];
            *t = 0;
        }
        *t += 1;
        let c1 = 1.0 - B1.powi(*t as i32);
        let c2 = 1.0 - B2.powi(*t as i32);
        for i in 0..params.len() {
            m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
            v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
    }
}

/// Construct an optimizer by name (`sgd` or `adam`).
pub fn optimizer_by_name(name: &str, lr: f64) -> Result<Box<dyn Optimizer>> {
    match name {
        "sgd" => Ok(Box::new(Sgd::new(lr))),
        "adam" => Ok(Box::new(Adam::new(lr))),
        other => Err(Error::UnknownName {
            kind: "optimizer",
            name: other.to_string(),
            known: "sgd, adam".to_string(),
        }),
    }
}
