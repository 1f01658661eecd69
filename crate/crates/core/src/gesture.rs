//! Fusion LSTM classifier for isolated dynamic gestures.
//!
//! Per frame the fused vector `[e_l; x_dyn; e_r]` passes through an optional
//! per-feature normalization, a time-distributed dense layer (tanh) and
//! dropout, then through stacked LSTM blocks. The last hidden state of the top
//! block feeds a dense layer (tanh) and a softmax output layer.
//!
//! Training runs a phase schedule that unfreezes layers from the head
//! downward. Frozen tensors are never touched by the optimizer.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::fused_dim;
use crate::embed::{DESK_EMBED_DIM, WIDE_EMBED_DIM};
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmStep};
use crate::metrics::ConfusionMatrix;
use crate::nn::{argmax, check_gradients, softmax, Adam, AdamConfig, Dense, GradCheckReport, Parameterized};
use crate::sequence::{GestureSequence, StandardizationStats, SEQ_LEN};

/// Samples per gradient chunk; chunks are reduced in a fixed order so results
/// do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 4;
const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    InputNorm,
    TimeDistributed,
    Lstm(usize),
    HeadDense,
    HeadSoftmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Wide,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "wide" => Ok(Preset::Wide),
            _ => Err(format!("unknown preset '{s}' (desk, wide)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureConfig {
    pub embed_dim: usize,
    pub td_units: usize,
    pub lstm_units: Vec<usize>,
    pub head_units: usize,
    pub classes: usize,
    /// Drop probability after the time-distributed layer.
    pub dropout: f64,
    pub input_norm: bool,
    /// Skip padded frames in the recurrence.
    pub mask_padding: bool,
}

impl GestureConfig {
    pub fn preset(preset: Preset, classes: usize) -> Self {
        match preset {
            Preset::Desk => GestureConfig {
                embed_dim: DESK_EMBED_DIM,
                td_units: 64,
                lstm_units: vec![48, 48],
                head_units: 32,
                classes,
                dropout: 0.85,
                input_norm: false,
                mask_padding: true,
            },
            Preset::Wide => GestureConfig {
                embed_dim: WIDE_EMBED_DIM,
                td_units: 512,
                lstm_units: vec![256, 256],
                head_units: 256,
                classes,
                dropout: 0.85,
                input_norm: true,
                mask_padding: true,
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        fused_dim(self.embed_dim)
    }

    fn validate(&self) -> Result<()> {
        if self.lstm_units.is_empty() || self.classes == 0 || self.td_units == 0 || self.head_units == 0 {
            return Err(Error::InvalidArgument("gesture net needs at least one LSTM block, one class and non-empty layers".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Per-feature normalization: fixed statistics, learnable scale and shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub fitted: bool,
}

impl InputNorm {
    fn identity(dim: usize) -> Self {
        InputNorm {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            fitted: false,
        }
    }

    fn fit(&mut self, frames: &[Vec<f64>]) {
        if frames.is_empty() {
            return;
        }
        let dim = self.mean.len();
        let rows = frames.iter().map(|r| r.as_slice());
        if let Ok(stats) = StandardizationStats::fit(rows, dim) {
            for j in 0..dim {
                self.mean[j] = stats.mean[j];
                self.inv_std[j] = if stats.constant[j] { 1.0 } else { 1.0 / (stats.std[j] * stats.std[j] + 1e-3).sqrt() };
            }
        }
        self.fitted = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureNet {
    pub config: GestureConfig,
    pub norm: Option<InputNorm>,
    pub td: Dense,
    pub lstms: Vec<Lstm>,
    pub head: Dense,
    pub out: Dense,
    /// Frozen layers; the optimizer skips every tensor they own.
    pub frozen: Vec<Layer>,
}

impl Parameterized for GestureNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        if let Some(n) = &self.norm {
            v.push(&n.gamma);
            v.push(&n.beta);
        }
        v.extend(self.td.tensors());
        for l in &self.lstms {
            v.extend(l.tensors());
        }
        v.extend(self.head.tensors());
        v.extend(self.out.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        if let Some(n) = &mut self.norm {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v.extend(self.td.tensors_mut());
        for l in &mut self.lstms {
            v.extend(l.tensors_mut());
        }
        v.extend(self.head.tensors_mut());
        v.extend(self.out.tensors_mut());
        v
    }
}

/// Forward-pass record for one sequence.
struct Trace {
    xhat: Vec<Vec<f64>>,
    normed: Vec<Vec<f64>>,
    td_out: Vec<Vec<f64>>,
    drop: Option<Vec<Vec<f64>>>,
    lstm: Vec<Vec<LstmStep>>,
    head_in: Vec<f64>,
    head_out: Vec<f64>,
    probs: Vec<f64>,
}

impl GestureNet {
    pub fn new(config: GestureConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.input_dim();
        let td = Dense::init(d, config.td_units, 3.0, &mut rng);
        let mut lstms = Vec::new();
        let mut width = config.td_units;
        for &h in &config.lstm_units {
            lstms.push(Lstm::init(width, h, &mut rng));
            width = h;
        }
        let (head, out) = Self::init_head(width, &config, &mut rng);
        Ok(GestureNet {
            norm: config.input_norm.then(|| InputNorm::identity(d)),
            config,
            td,
            lstms,
            head,
            out,
            frozen: Vec::new(),
        })
    }

    fn init_head<R: Rng>(width: usize, config: &GestureConfig, rng: &mut R) -> (Dense, Dense) {
        (
            Dense::init(width, config.head_units, 3.0, rng),
            Dense::init(config.head_units, config.classes, 3.0, rng),
        )
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// All layers, bottom to top.
    pub fn layers(&self) -> Vec<Layer> {
        let mut v = Vec::new();
        if self.norm.is_some() {
            v.push(Layer::InputNorm);
        }
        v.push(Layer::TimeDistributed);
        v.extend((0..self.lstms.len()).map(Layer::Lstm));
        v.push(Layer::HeadDense);
        v.push(Layer::HeadSoftmax);
        v
    }

    /// Owning layer of each tensor, in [`Parameterized::tensors`] order.
    pub fn tensor_layers(&self) -> Vec<Layer> {
        self.layers().into_iter().flat_map(|l| [l, l]).collect()
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        self.tensor_layers().iter().map(|l| !self.frozen.contains(l)).collect()
    }

    pub fn frozen_mask(&self) -> Vec<bool> {
        self.trainable_mask().iter().map(|t| !t).collect()
    }

    /// Freezes every layer not listed in `unfrozen`.
    pub fn set_unfrozen(&mut self, unfrozen: &[Layer]) {
        self.frozen = self.layers().into_iter().filter(|l| !unfrozen.contains(l)).collect();
    }

    fn frames(&self, seq: &GestureSequence) -> Result<Vec<Vec<f64>>> {
        if seq.dim != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: seq.dim,
            });
        }
        seq.validate()?;
        Ok((0..SEQ_LEN)
            .filter(|&t| !(self.config.mask_padding && seq.mask[t]))
            .map(|t| seq.frame(t).iter().map(|&v| v as f64).collect())
            .collect())
    }

    fn run<R: Rng>(&self, frames: &[Vec<f64>], dropout_rng: Option<&mut R>) -> Trace {
        let mut xhat = Vec::with_capacity(frames.len());
        let mut normed = Vec::with_capacity(frames.len());
        for x in frames {
            match &self.norm {
                Some(n) => {
                    let xh: Vec<f64> = (0..x.len()).map(|j| (x[j] - n.mean[j]) * n.inv_std[j]).collect();
                    normed.push((0..x.len()).map(|j| n.gamma[j] * xh[j] + n.beta[j]).collect());
                    xhat.push(xh);
                }
                None => normed.push(x.clone()),
            }
        }
        let td_out: Vec<Vec<f64>> = normed
            .iter()
            .map(|x| {
                let mut z = vec![0.0; self.td.outputs];
                self.td.forward(x, &mut z);
                z.iter_mut().for_each(|v| *v = v.tanh());
                z
            })
            .collect();
        let keep = 1.0 - self.config.dropout;
        let drop = dropout_rng.filter(|_| self.config.dropout > 0.0).map(|rng| {
            td_out
                .iter()
                .map(|v| v.iter().map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        });
        let mut input: Vec<Vec<f64>> = match &drop {
            Some(d) => td_out.iter().zip(d).map(|(a, m)| a.iter().zip(m).map(|(x, y)| x * y).collect()).collect(),
            None => td_out.clone(),
        };
        let mut lstm = Vec::with_capacity(self.lstms.len());
        for l in &self.lstms {
            let steps = l.forward(&input);
            input = steps.iter().map(|s| s.h.clone()).collect();
            lstm.push(steps);
        }
        let top = self.lstms.last().expect("at least one LSTM").hidden;
        let head_in = input.last().cloned().unwrap_or_else(|| vec![0.0; top]);
        let mut head_out = vec![0.0; self.head.outputs];
        self.head.forward(&head_in, &mut head_out);
        head_out.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = vec![0.0; self.out.outputs];
        self.out.forward(&head_out, &mut logits);
        let probs = if frames.is_empty() {
            vec![1.0 / self.classes() as f64; self.classes()]
        } else {
            softmax(&logits)
        };
        Trace {
            xhat,
            normed,
            td_out,
            drop,
            lstm,
            head_in,
            head_out,
            probs,
        }
    }

    /// Class probabilities for one sequence. An all-padding sequence yields
    /// the uniform distribution.
    pub fn forward_sequence(&self, seq: &GestureSequence) -> Result<Vec<f64>> {
        let frames = self.frames(seq)?;
        Ok(self.run::<ChaCha8Rng>(&frames, None).probs)
    }

    /// Cross-entropy gradient of one sequence accumulated into `grad`, scaled
    /// by `scale`. Backpropagation stops below the lowest trainable layer.
    fn accumulate(&self, frames: &[Vec<f64>], label: usize, trace: &Trace, scale: f64, grad: &mut GestureNet, full: bool) -> f64 {
        let loss = -trace.probs[label].max(1e-300).ln();
        if frames.is_empty() {
            return loss;
        }
        let layers = self.layers();
        let lowest = if full {
            0
        } else {
            match layers.iter().position(|l| !self.frozen.contains(l)) {
                Some(p) => p,
                None => return loss,
            }
        };
        let reach = |l: Layer| layers.iter().position(|&x| x == l).expect("known layer") >= lowest;

        let mut dlogits = trace.probs.clone();
        dlogits[label] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= scale);
        let mut dhead = vec![0.0; self.out.inputs];
        self.out.backward(&trace.head_out, &dlogits, &mut grad.out, reach(Layer::HeadDense).then_some(&mut dhead[..]));
        if !reach(Layer::HeadDense) {
            return loss;
        }
        for (d, a) in dhead.iter_mut().zip(&trace.head_out) {
            *d *= 1.0 - a * a;
        }
        let top = self.lstms.len() - 1;
        let mut dtop = vec![0.0; self.head.inputs];
        self.head.backward(&trace.head_in, &dhead, &mut grad.head, reach(Layer::Lstm(top)).then_some(&mut dtop[..]));
        if !reach(Layer::Lstm(top)) {
            return loss;
        }
        let n = frames.len();
        let mut dh_out: Vec<Vec<f64>> = vec![vec![0.0; self.lstms[top].hidden]; n];
        dh_out[n - 1] = dtop;
        for k in (0..self.lstms.len()).rev() {
            let below = if k == 0 { Layer::TimeDistributed } else { Layer::Lstm(k - 1) };
            let want = reach(below);
            let dx = self.lstms[k].backward(&trace.lstm[k], &dh_out, &mut grad.lstms[k], want);
            if !want {
                return loss;
            }
            dh_out = dx;
        }
        let want_norm = self.norm.is_some() && reach(Layer::InputNorm);
        let mut dx = vec![0.0; self.td.inputs];
        for t in 0..n {
            let mut dz = dh_out[t].clone();
            if let Some(d) = &trace.drop {
                dz.iter_mut().zip(&d[t]).for_each(|(g, m)| *g *= m);
            }
            for (g, a) in dz.iter_mut().zip(&trace.td_out[t]) {
                *g *= 1.0 - a * a;
            }
            self.td.backward(&trace.normed[t], &dz, &mut grad.td, want_norm.then_some(&mut dx[..]));
            if want_norm {
                let gn = grad.norm.as_mut().expect("norm present");
                for j in 0..dx.len() {
                    gn.gamma[j] += dx[j] * trace.xhat[t][j];
                    gn.beta[j] += dx[j];
                }
            }
        }
        loss
    }

    pub fn zeros_like(&self) -> GestureNet {
        let mut g = self.clone();
        g.zero();
        g
    }

    /// Loss and gradient of one sequence with dropout disabled.
    pub fn loss_and_gradient(&self, seq: &GestureSequence, label: usize) -> Result<(f64, GestureNet)> {
        self.check_label(label)?;
        let frames = self.frames(seq)?;
        let trace = self.run::<ChaCha8Rng>(&frames, None);
        let mut g = self.zeros_like();
        let loss = self.accumulate(&frames, label, &trace, 1.0, &mut g, true);
        Ok((loss, g))
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.classes() {
            return Err(Error::InvalidArgument(format!("label {label} outside {} classes", self.classes())));
        }
        Ok(())
    }

    /// Replaces the dense and softmax head layers with freshly initialized
    /// ones for `classes` outputs. Everything below the head is kept as is.
    pub fn swap_head(&mut self, classes: usize, seed: u64) -> Result<()> {
        if classes == 0 {
            return Err(Error::InvalidArgument("head needs at least one class".into()));
        }
        self.config.classes = classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_4ead);
        let width = self.lstms.last().expect("at least one LSTM").hidden;
        let (head, out) = Self::init_head(width, &self.config, &mut rng);
        self.head = head;
        self.out = out;
        Ok(())
    }

    /// SHA-256 over the tensors of every layer below the head.
    pub fn body_digest(&self) -> String {
        let select: Vec<bool> = self
            .tensor_layers()
            .iter()
            .map(|l| !matches!(l, Layer::HeadDense | Layer::HeadSoftmax))
            .collect();
        self.digest(&select)
    }
}

/// Label, its probability, and wall-clock latency of the forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probability: f64,
    pub probabilities: Vec<f64>,
    pub latency_ms: f64,
}

/// Argmax prediction; ties resolve to the lowest class id.
pub fn predict(net: &GestureNet, seq: &GestureSequence) -> Result<Prediction> {
    let start = Instant::now();
    let probabilities = net.forward_sequence(seq)?;
    let latency_ms = (start.elapsed().as_secs_f64() * 1e3).max(f64::MIN_POSITIVE);
    let label = argmax(&probabilities);
    Ok(Prediction {
        label,
        probability: probabilities[label],
        probabilities,
        latency_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub unfrozen: Vec<Layer>,
    pub max_epochs: usize,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub phases: Vec<Phase>,
}

impl PhaseSchedule {
    /// Head only; head and last LSTM block; head and all LSTM blocks; everything.
    pub fn four_phase(net: &GestureNet, max_epochs: [usize; 4], patience: usize) -> Self {
        let head = vec![Layer::HeadDense, Layer::HeadSoftmax];
        let n = net.lstms.len();
        let mut p2 = head.clone();
        p2.push(Layer::Lstm(n - 1));
        let mut p3 = head.clone();
        p3.extend((0..n).map(Layer::Lstm));
        let names = ["head", "last-lstm", "all-lstm", "full"];
        let sets = [head, p2, p3, net.layers()];
        PhaseSchedule {
            phases: sets
                .into_iter()
                .zip(names)
                .zip(max_epochs)
                .map(|((unfrozen, name), max_epochs)| Phase {
                    name: name.into(),
                    unfrozen,
                    max_epochs,
                    patience,
                })
                .collect(),
        }
    }

    /// Each phase must unfreeze a superset of the previous one and the last
    /// phase must unfreeze every layer.
    pub fn validate(&self, net: &GestureNet) -> Result<()> {
        let all = net.layers();
        let last = self
            .phases
            .last()
            .ok_or_else(|| Error::InvalidArgument("empty phase schedule".into()))?;
        for p in &self.phases {
            if let Some(l) = p.unfrozen.iter().find(|l| !all.contains(l)) {
                return Err(Error::InvalidArgument(format!("phase '{}' names unknown layer {l:?}", p.name)));
            }
        }
        for w in self.phases.windows(2) {
            if !w[0].unfrozen.iter().all(|l| w[1].unfrozen.contains(l)) {
                return Err(Error::InvalidArgument(format!(
                    "phase '{}' freezes layers unfrozen in '{}'",
                    w[1].name, w[0].name
                )));
            }
        }
        if !all.iter().all(|l| last.unfrozen.contains(l)) {
            return Err(Error::InvalidArgument("last phase must unfreeze every layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GestureTrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GestureTrainConfig {
    fn default() -> Self {
        GestureTrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub phase: usize,
    pub name: String,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Digest of the tensors frozen during this phase, before and after.
    pub frozen_digest_before: String,
    pub frozen_digest_after: String,
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

struct Prepared {
    frames: Vec<Vec<f64>>,
    label: usize,
}

fn prepare(net: &GestureNet, seqs: &[GestureSequence]) -> Result<Vec<Prepared>> {
    seqs.iter()
        .map(|s| {
            let label = s
                .label
                .ok_or_else(|| Error::InvalidArgument(format!("sequence '{}' has no label", s.source_id)))? as usize;
            net.check_label(label)?;
            Ok(Prepared {
                frames: net.frames(s)?,
                label,
            })
        })
        .collect()
}

fn batch_gradient(net: &GestureNet, data: &[Prepared], batch: &[usize], seeds: &[u64]) -> (GestureNet, f64) {
    let scale = 1.0 / batch.len() as f64;
    let pairs: Vec<(usize, u64)> = batch.iter().copied().zip(seeds.iter().copied()).collect();
    let partials: Vec<(GestureNet, f64)> = pairs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = net.zeros_like();
            let mut loss = 0.0;
            for &(i, seed) in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let trace = net.run(&data[i].frames, Some(&mut rng));
                loss += net.accumulate(&data[i].frames, data[i].label, &trace, scale, &mut g, false);
            }
            (g, loss)
        })
        .collect();
    let mut total = net.zeros_like();
    let mut loss = 0.0;
    for (g, l) in &partials {
        total.add_assign(g);
        loss += l;
    }
    (total, loss / batch.len() as f64)
}

fn evaluate_prepared(net: &GestureNet, data: &[Prepared]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let results: Vec<(f64, bool)> = data
        .par_iter()
        .map(|p| {
            let probs = net.run::<ChaCha8Rng>(&p.frames, None).probs;
            (-probs[p.label].max(1e-300).ln(), argmax(&probs) == p.label)
        })
        .collect();
    let n = data.len() as f64;
    (
        results.iter().map(|r| r.0).sum::<f64>() / n,
        results.iter().filter(|r| r.1).count() as f64 / n,
    )
}

/// Trains through every phase of `schedule` with early stopping on
/// validation accuracy (validation loss breaks ties). The best weights of
/// each phase are restored before the next phase starts. When no validation
/// data is given the training set is used for model selection.
pub fn train_phases(
    net: &mut GestureNet,
    train: &[GestureSequence],
    valid: &[GestureSequence],
    schedule: &PhaseSchedule,
    cfg: &GestureTrainConfig,
) -> Result<Vec<PhaseCurve>> {
    schedule.validate(net)?;
    if cfg.batch_size == 0 || !(cfg.adam.lr > 0.0) {
        return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
    }
    let train_data = prepare(net, train)?;
    if train_data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let valid_data = prepare(net, valid)?;
    let select = if valid_data.is_empty() { &train_data } else { &valid_data };
    if let Some(norm) = net.norm.as_mut().filter(|n| !n.fitted) {
        let frames: Vec<Vec<f64>> = train_data.iter().flat_map(|p| p.frames.iter().cloned()).collect();
        norm.fit(&frames);
    }

    let mut curves = Vec::with_capacity(schedule.phases.len());
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        net.set_unfrozen(&phase.unfrozen);
        let trainable = net.trainable_mask();
        let frozen = net.frozen_mask();
        let digest_before = net.digest(&frozen);
        let mut opt = Adam::new(cfg.adam, net);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, pi as u64]));
        let (l0, a0) = evaluate_prepared(net, select);
        let mut best = (a0, -l0);
        let mut best_net = net.clone();
        let mut best_epoch = 0;
        let mut wait = 0;
        let mut log = Vec::new();
        for epoch in 1..=phase.max_epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                let seeds: Vec<u64> = batch
                    .iter()
                    .map(|&i| mix_seed(&[cfg.seed, pi as u64, epoch as u64, bi as u64, i as u64]))
                    .collect();
                let (g, loss) = batch_gradient(net, &train_data, batch, &seeds);
                if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                    return Err(Error::Diverged {
                        phase: Some(pi + 1),
                        epoch,
                        loss,
                    });
                }
                epoch_loss += loss * batch.len() as f64;
                opt.step(net, &g, &trainable);
            }
            let (vl, va) = evaluate_prepared(net, select);
            log.push(EpochLog {
                epoch,
                train_loss: epoch_loss / train_data.len() as f64,
                valid_loss: vl,
                valid_accuracy: va,
            });
            log::info!(
                "phase {} ({}) epoch {epoch}: train loss {:.4} valid loss {vl:.4} acc {va:.4}",
                pi + 1,
                phase.name,
                epoch_loss / train_data.len() as f64
            );
            if (va, -vl) > best {
                best = (va, -vl);
                best_net = net.clone();
                best_epoch = epoch;
                wait = 0;
            } else {
                wait += 1;
                if wait >= phase.patience {
                    break;
                }
            }
        }
        *net = best_net;
        net.set_unfrozen(&phase.unfrozen);
        curves.push(PhaseCurve {
            phase: pi + 1,
            name: phase.name.clone(),
            epochs: log,
            best_epoch,
            frozen_digest_after: net.digest(&frozen),
            frozen_digest_before: digest_before,
        });
    }
    net.frozen.clear();
    Ok(curves)
}

/// Accuracy, mean cross-entropy and confusion matrix over labeled sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(net: &GestureNet, seqs: &[GestureSequence]) -> Result<Evaluation> {
    let data = prepare(net, seqs)?;
    let mut confusion = ConfusionMatrix::new(net.classes());
    let mut loss = 0.0;
    for p in &data {
        let probs = net.run::<ChaCha8Rng>(&p.frames, None).probs;
        loss -= probs[p.label].max(1e-300).ln();
        confusion.record(p.label, argmax(&probs));
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        loss: if data.is_empty() { 0.0 } else { loss / data.len() as f64 },
        confusion,
    })
}

/// Finite-difference check of the whole network on one sequence with
/// dropout disabled (central differences, step 1e-4).
pub fn gradient_check(net: &GestureNet, seq: &GestureSequence, label: usize) -> Result<GradCheckReport> {
    let (_, analytic) = net.loss_and_gradient(seq, label)?;
    let frames = net.frames(seq)?;
    Ok(check_gradients(
        net,
        &analytic,
        1e-4,
        |m| -m.run::<ChaCha8Rng>(&frames, None).probs[label].ln(),
        |_, _| false,
    ))
}

/// Trained network plus the statistics its inputs were standardized with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureModel {
    pub net: GestureNet,
    pub stats: Option<StandardizationStats>,
    #[serde(default)]
    pub curves: Vec<PhaseCurve>,
}

impl GestureModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
