//! Nine-layer fully connected depth regressors: one for the neck (body pose
//! vector input) and one per hand (hand pose vector input).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::archive::{self, ArchiveHeader, ArchiveKind};
use crate::error::{Error, Result};
use crate::features::{BODY_POSE_DIM, HAND_POSE_DIM};
use crate::nn::{check_gradients, Activation, Adam, AdamConfig, GradCheckReport, Mlp, Parameterized};
use crate::sequence::StandardizationStats;

pub const DEPTH_LAYERS: usize = 9;
const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthTarget {
    Neck,
    Left,
    Right,
}

impl DepthTarget {
    pub fn input_dim(self) -> usize {
        match self {
            DepthTarget::Neck => BODY_POSE_DIM,
            DepthTarget::Left | DepthTarget::Right => HAND_POSE_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DepthTarget::Neck => "neck",
            DepthTarget::Left => "left",
            DepthTarget::Right => "right",
        }
    }
}

impl std::str::FromStr for DepthTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "neck" => Ok(DepthTarget::Neck),
            "left" => Ok(DepthTarget::Left),
            "right" => Ok(DepthTarget::Right),
            _ => Err(format!("unknown depth target '{s}' (neck, left, right)")),
        }
    }
}

/// Default widths, input to output: 9 weight layers.
pub fn default_sizes(input: usize) -> Vec<usize> {
    vec![input, 128, 128, 96, 64, 48, 32, 16, 8, 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Accumulate mini-batch gradients over fixed chunks in parallel.
    pub data_parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 32,
            epochs: 200,
            seed: 0,
            data_parallel: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.adam.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0 and batch size > 0, got lr {} batch {}",
                self.adam.lr, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub final_mse: Option<f64>,
    pub samples: usize,
}

/// Relative depth regressor with its own input standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthNet {
    pub target: DepthTarget,
    pub mlp: Mlp,
    pub input_stats: Option<StandardizationStats>,
    pub meta: TrainingMeta,
}

/// Pose-vector inputs with their depth targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthDataset {
    pub target: DepthTarget,
    pub inputs: Vec<Vec<f64>>,
    pub depths: Vec<f64>,
}

impl DepthDataset {
    pub fn new(target: DepthTarget) -> Self {
        DepthDataset {
            target,
            inputs: Vec::new(),
            depths: Vec::new(),
        }
    }

    pub fn push(&mut self, x: Vec<f64>, d: f64) {
        self.inputs.push(x);
        self.depths.push(d);
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn split_at(&self, n: usize) -> (DepthDataset, DepthDataset) {
        let n = n.min(self.len());
        (
            DepthDataset {
                target: self.target,
                inputs: self.inputs[..n].to_vec(),
                depths: self.depths[..n].to_vec(),
            },
            DepthDataset {
                target: self.target,
                inputs: self.inputs[n..].to_vec(),
                depths: self.depths[n..].to_vec(),
            },
        )
    }

    /// Stored as f32 rows of `input_dim + 1` with the depth last.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        let dim = self.target.input_dim() + 1;
        let mut payload = Vec::with_capacity(self.len() * dim);
        for (x, &d) in self.inputs.iter().zip(&self.depths) {
            if x.len() + 1 != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim - 1,
                    got: x.len(),
                });
            }
            payload.extend(x.iter().map(|&v| v as f32));
            payload.push(d as f32);
        }
        let mut header = ArchiveHeader::new(ArchiveKind::Depth, dim, self.len());
        header.meta = json!({ "target": self.target, "depth_unit": "1.0 = 2 m subject distance" });
        archive::write_archive(path, &header, &payload)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (header, payload) = archive::read_archive(path)?;
        if header.kind != ArchiveKind::Depth {
            return Err(Error::Corrupt(format!("expected a DEPTH archive, found {:?}", header.kind)));
        }
        let target: DepthTarget = serde_json::from_value(header.meta.get("target").cloned().unwrap_or_default())
            .map_err(|e| Error::Corrupt(format!("depth target: {e}")))?;
        if header.dim != target.input_dim() + 1 {
            return Err(Error::DimensionMismatch {
                expected: target.input_dim() + 1,
                got: header.dim,
            });
        }
        let mut ds = DepthDataset::new(target);
        for row in payload.chunks_exact(header.dim) {
            let (x, d) = row.split_at(header.dim - 1);
            ds.push(x.iter().map(|&v| v as f64).collect(), d[0] as f64);
        }
        Ok(ds)
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training-set MSE after each epoch.
    pub loss_curve: Vec<f64>,
}

impl DepthNet {
    /// Fresh network with the default widths for `target`.
    pub fn new(target: DepthTarget, seed: u64) -> Self {
        Self::with_sizes(target, &default_sizes(target.input_dim()), seed).expect("default sizes are valid")
    }

    pub fn with_sizes(target: DepthTarget, sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() != DEPTH_LAYERS + 1 {
            return Err(Error::InvalidArgument(format!(
                "depth nets have {DEPTH_LAYERS} layers, got {} widths",
                sizes.len()
            )));
        }
        if sizes[0] != target.input_dim() || sizes[DEPTH_LAYERS] != 1 {
            return Err(Error::DimensionMismatch {
                expected: target.input_dim(),
                got: sizes[0],
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DepthNet {
            target,
            mlp: Mlp::new(sizes, Activation::Relu, Activation::Identity, &mut rng),
            input_stats: None,
            meta: TrainingMeta::default(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn prepare_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut v = x.to_vec();
        if let Some(s) = &self.input_stats {
            s.apply(&mut v)?;
        }
        Ok(v)
    }

    /// Estimated relative depth for one pose vector.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let v = self.prepare_input(x)?;
        Ok(self.mlp.forward(&v)[0])
    }

    pub fn mse(&self, data: &DepthDataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty depth dataset".into()));
        }
        let mut total = 0.0;
        for (x, &d) in data.inputs.iter().zip(&data.depths) {
            let e = self.forward(x)? - d;
            total += e * e;
        }
        Ok(total / data.len() as f64)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let net: DepthNet = serde_json::from_str(&text)?;
        if net.mlp.layers.len() != DEPTH_LAYERS || net.input_dim() != net.target.input_dim() {
            return Err(Error::Corrupt(format!("{} is not a {DEPTH_LAYERS}-layer depth net", path.display())));
        }
        Ok(net)
    }
}

/// Squared-error gradient of one standardized sample, accumulated into `grad`.
/// Returns the squared error.
fn accumulate_sample(mlp: &Mlp, x: &[f64], d: f64, scale: f64, grad: &mut Mlp) -> f64 {
    let trace = mlp.forward_trace(x);
    let err = trace.output()[0] - d;
    mlp.backward(&trace, &[2.0 * err * scale], grad);
    err * err
}

const CHUNK: usize = 8;

fn batch_gradient(mlp: &Mlp, xs: &[Vec<f64>], ds: &[f64], batch: &[usize], parallel: bool) -> Mlp {
    let scale = 1.0 / batch.len() as f64;
    if parallel {
        let partials: Vec<Mlp> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = mlp.zeros_like();
                for &i in chunk {
                    accumulate_sample(mlp, &xs[i], ds[i], scale, &mut g);
                }
                g
            })
            .collect();
        let mut total = mlp.zeros_like();
        for p in &partials {
            total.add_assign(p);
        }
        total
    } else {
        let mut g = mlp.zeros_like();
        for &i in batch {
            accumulate_sample(mlp, &xs[i], ds[i], scale, &mut g);
        }
        g
    }
}

/// Mini-batch Adam on mean squared error. Input statistics are fitted on
/// `data` when the net has none yet.
pub fn train(net: &mut DepthNet, data: &DepthDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty depth dataset".into()));
    }
    if data.depths.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite depth target".into()));
    }
    if net.input_stats.is_none() {
        net.input_stats = Some(StandardizationStats::fit(data.inputs.iter().map(|x| x.as_slice()), net.input_dim())?);
    }
    let xs: Vec<Vec<f64>> = data.inputs.iter().map(|x| net.prepare_input(x)).collect::<Result<_>>()?;
    let trainable = vec![true; net.mlp.tensors().len()];
    let mut opt = Adam::new(cfg.adam, &net.mlp);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = batch_gradient(&net.mlp, &xs, &data.depths, batch, cfg.data_parallel);
            opt.step(&mut net.mlp, &g, &trainable);
        }
        let mse = xs
            .iter()
            .zip(&data.depths)
            .map(|(x, d)| {
                let e = net.mlp.forward(x)[0] - d;
                e * e
            })
            .sum::<f64>()
            / data.len() as f64;
        if !mse.is_finite() || mse > DIVERGENCE_LOSS {
            return Err(Error::Diverged {
                phase: None,
                epoch,
                loss: mse,
            });
        }
        log::debug!("depth[{}] epoch {epoch}: mse {mse:.3e}", net.target.name());
        curve.push(mse);
    }
    net.meta = TrainingMeta {
        epochs: net.meta.epochs + cfg.epochs,
        final_mse: curve.last().copied(),
        samples: data.len(),
    };
    Ok(TrainReport { loss_curve: curve })
}

/// Gradient of the squared error for one already-standardized input.
pub fn sample_gradient(mlp: &Mlp, x: &[f64], d: f64) -> Mlp {
    let mut g = mlp.zeros_like();
    accumulate_sample(mlp, x, d, 1.0, &mut g);
    g
}

/// Mean-batch gradient, sequential or chunk-parallel; exposed for
/// equivalence testing of the two accumulation modes.
pub fn minibatch_gradient(mlp: &Mlp, xs: &[Vec<f64>], ds: &[f64], parallel: bool) -> Mlp {
    let batch: Vec<usize> = (0..xs.len()).collect();
    batch_gradient(mlp, xs, ds, &batch, parallel)
}

/// Compares backpropagation with central differences (step 1e-4) on the
/// squared error of one standardized input. Coordinates whose perturbation
/// flips any rectifier are excluded.
pub fn gradient_check(mlp: &Mlp, x: &[f64], d: f64) -> GradCheckReport {
    let analytic = sample_gradient(mlp, x, d);
    check_gradients(
        mlp,
        &analytic,
        1e-4,
        |m| {
            let e = m.forward(x)[0] - d;
            e * e
        },
        |p, m| p.activation_pattern(x) != m.activation_pattern(x),
    )
}
