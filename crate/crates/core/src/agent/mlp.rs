use rand::Rng;

/// Fully connected `f64` layer, weight stored `out×in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Small rectifier network: `in → hidden → hidden → out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

/// Activations of a batch kept for the backward pass.
pub struct MlpTrace {
    /// Input of every layer, `rows × fan_in`.
    inputs: Vec<Vec<f64>>,
    /// Final outputs after the output activation.
    pub outputs: Vec<f64>,
    rows: usize,
}

pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    /// Gradient w.r.t. the network input, `rows × fan_in`.
    pub input: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Mlp {
    /// Hidden layers draw from `U(±1/√fan_in)`, the output layer from
    /// `U(±init_out)`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        output: OutputActivation,
        init_out: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if i + 2 == sizes.len() {
                init_out
            } else {
                1.0 / (fan_in as f64).sqrt()
            };
            let weight = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bias = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push(Dense {
                fan_in,
                fan_out,
                weight,
                bias,
            });
        }
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward_trace(&self, input: &[f64], rows: usize) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; rows * l.fan_out];
            for r in 0..rows {
                let xr = &x[r * l.fan_in..(r + 1) * l.fan_in];
                for o in 0..l.fan_out {
                    let wr = &l.weight[o * l.fan_in..(o + 1) * l.fan_in];
                    let mut v = l.bias[o];
                    for (a, b) in xr.iter().zip(wr) {
                        v += a * b;
                    }
                    y[r * l.fan_out + o] = if li < last {
                        v.max(0.0)
                    } else {
                        match self.output {
                            OutputActivation::Identity => v,
                            OutputActivation::Sigmoid => sigmoid(v),
                        }
                    };
                }
            }
            inputs.push(x);
            x = y;
        }
        MlpTrace {
            inputs,
            outputs: x,
            rows,
        }
    }

    pub fn forward(&self, input: &[f64], rows: usize) -> Vec<f64> {
        self.forward_trace(input, rows).outputs
    }

    /// Backpropagate `grad_out` (`rows × out`) through a recorded forward pass.
    pub fn backward(&self, trace: &MlpTrace, grad_out: &[f64]) -> MlpGrads {
        let rows = trace.rows;
        let last = self.layers.len() - 1;
        // gradient w.r.t. the pre-activation of the current layer
        let mut g: Vec<f64> = match self.output {
            OutputActivation::Identity => grad_out.to_vec(),
            OutputActivation::Sigmoid => grad_out
                .iter()
                .zip(&trace.outputs)
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for li in (0..=last).rev() {
            let l = &self.layers[li];
            let x = &trace.inputs[li];
            let mut dw = vec![0.0; l.fan_in * l.fan_out];
            let mut db = vec![0.0; l.fan_out];
            let mut dx = vec![0.0; rows * l.fan_in];
            for r in 0..rows {
                let xr = &x[r * l.fan_in..(r + 1) * l.fan_in];
                let dxr = &mut dx[r * l.fan_in..(r + 1) * l.fan_in];
                for o in 0..l.fan_out {
                    let go = g[r * l.fan_out + o];
                    if go == 0.0 {
                        continue;
                    }
                    db[o] += go;
                    let wr = &l.weight[o * l.fan_in..(o + 1) * l.fan_in];
                    let dwr = &mut dw[o * l.fan_in..(o + 1) * l.fan_in];
                    for i in 0..l.fan_in {
                        dwr[i] += go * xr[i];
                        dxr[i] += go * wr[i];
                    }
                }
            }
            grads[li] = (dw, db);
            if li > 0 {
                // rectifier between layers: the input of layer li is the
                // activated output of layer li-1
                for (d, &xv) in dx.iter_mut().zip(x.iter()) {
                    if xv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            g = dx;
        }
        MlpGrads {
            layers: grads,
            input: g,
        }
    }

    /// `self ← tau·online + (1−tau)·self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (a, &b) in t.weight.iter_mut().zip(&o.weight) {
                *a = tau * b + (1.0 - tau) * *a;
            }
            for (a, &b) in t.bias.iter_mut().zip(&o.bias) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }
}
