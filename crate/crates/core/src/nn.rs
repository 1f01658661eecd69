//! Small dense-network building blocks shared by the depth regressors and the
//! gesture classifier: layers, the Adam optimizer, parameter traversal and a
//! central finite-difference gradient checker.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Anything that owns an ordered list of parameter tensors. A zeroed clone of
/// the same type doubles as its gradient accumulator.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    fn add_assign(&mut self, other: &Self)
    where
        Self: Sized,
    {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    /// SHA-256 over the little-endian bytes of the selected tensors.
    fn digest(&self, select: &[bool]) -> String {
        let mut h = Sha256::new();
        for (t, &s) in self.tensors().into_iter().zip(select) {
            if s {
                for x in t {
                    h.update(x.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given pre-activation `z` and output `a`.
    pub fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Fully connected layer, weights stored row-major as `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    /// Uniform fan-in initialization in [-sqrt(gain / inputs), sqrt(gain / inputs)].
    pub fn init<R: Rng>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let limit = (gain / inputs.max(1) as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            w,
            b: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
            *yo = self.b[o] + dot(row, x);
        }
    }

    /// Accumulates dW, db into `grad` and, when asked, writes dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[o] += g;
            let row = &mut grad.w[o * self.inputs..(o + 1) * self.inputs];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[o * self.inputs..(o + 1) * self.inputs];
                for (d, wi) in dx.iter_mut().zip(row) {
                    *d += g * wi;
                }
            }
        }
    }
}

impl Parameterized for Dense {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b]
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multi-layer perceptron with one activation for hidden layers and another
/// for the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

/// Per-layer pre-activations and outputs from one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(|v| v.as_slice()).unwrap_or(&self.input)
    }
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        let gain = match hidden {
            Activation::Relu => 6.0,
            _ => 3.0,
        };
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], gain, rng))
            .collect();
        Mlp { layers, hidden, output }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.inputs).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    fn act(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward_trace(&self, x: &[f64]) -> MlpTrace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = post.last().map(|v| v.as_slice()).unwrap_or(x);
            let mut z = vec![0.0; layer.outputs];
            layer.forward(input, &mut z);
            let act = self.act(l);
            let a = z.iter().map(|&v| act.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        MlpTrace {
            input: x.to_vec(),
            pre,
            post,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.forward(&cur, &mut z);
            let act = self.act(l);
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            cur = z;
        }
        cur
    }

    /// Backpropagates `dout` (gradient w.r.t. the output activations),
    /// accumulating into `grad`. Returns the gradient w.r.t. the input.
    pub fn backward(&self, trace: &MlpTrace, dout: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let mut delta: Vec<f64> = dout.to_vec();
        for l in (0..self.layers.len()).rev() {
            let act = self.act(l);
            for (d, (z, a)) in delta.iter_mut().zip(trace.pre[l].iter().zip(&trace.post[l])) {
                *d *= act.grad(*z, *a);
            }
            let input = if l == 0 { &trace.input } else { &trace.post[l - 1] };
            let mut dx = vec![0.0; self.layers[l].inputs];
            self.layers[l].backward(input, &delta, &mut grad.layers[l], Some(&mut dx));
            delta = dx;
        }
        delta
    }

    /// Sign pattern of every rectifier pre-activation; used to detect kinks.
    pub fn activation_pattern(&self, x: &[f64]) -> Vec<bool> {
        self.forward_trace(x)
            .pre
            .iter()
            .flatten()
            .map(|&z| z > 0.0)
            .collect()
    }
}

impl Parameterized for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    /// Time-based decay: the step size at iteration t is lr / (1 + decay * t).
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Adam with per-tensor moments. Tensors flagged as frozen are skipped
/// entirely: neither their values nor their moments change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub iterations: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new<P: Parameterized>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adam {
            config,
            iterations: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            steps: vec![0; shapes.len()],
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr / (1.0 + self.config.decay * self.iterations as f64)
    }

    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P, trainable: &[bool]) {
        let lr = self.current_lr();
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            if !trainable.get(i).copied().unwrap_or(true) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        self.iterations += 1;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a kink.
    pub skipped: usize,
}

/// Relative error with an absolute floor on the denominator so that
/// vanishing gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `loss` with step `h`
/// over every parameter of `model`. `crosses_kink(plus, minus)` lets the
/// caller exclude coordinates where the perturbation changes a
/// non-differentiable branch.
pub fn check_gradients<M, L, K>(model: &M, analytic: &M, h: f64, loss: L, crosses_kink: K) -> GradCheckReport
where
    M: Parameterized + Clone,
    L: Fn(&M) -> f64,
    K: Fn(&M, &M) -> bool,
{
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut plus = model.clone();
    let mut minus = model.clone();
    let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in shapes.iter().enumerate() {
        for j in 0..len {
            let orig = model.tensors()[ti][j];
            plus.tensors_mut()[ti][j] = orig + h;
            minus.tensors_mut()[ti][j] = orig - h;
            if crosses_kink(&plus, &minus) {
                report.skipped += 1;
            } else {
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let err = relative_error(grads[ti][j], numeric);
                report.max_rel_error = report.max_rel_error.max(err);
                report.checked += 1;
            }
            plus.tensors_mut()[ti][j] = orig;
            minus.tensors_mut()[ti][j] = orig;
        }
    }
    report
}
