//! Per-hand embedding providers.
//!
//! The geometric provider maps box-normalized hand keypoints through a seeded
//! random Fourier feature map; a linear softmax head on top gives static
//! hand-shape probabilities. The external provider serves embeddings computed
//! elsewhere (for instance by an image CNN) from an `EMB` archive.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::archive::{self, ArchiveHeader, ArchiveKind};
use crate::attention::HandBox;
use crate::error::{Error, Result};
use crate::model::{Side, Slot, HAND_KEYPOINTS};
use crate::nn::{softmax, Dense};

pub const STATIC_CLASSES: usize = 10;
pub const DESK_EMBED_DIM: usize = 64;
pub const WIDE_EMBED_DIM: usize = 1024;

/// Spread of the random projection, in box-side units.
const BANDWIDTH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Hand not detected, or key not found: zero vector, uniform probabilities.
    pub missing: bool,
}

impl Embedding {
    pub fn missing(dim: usize, classes: usize) -> Self {
        Embedding {
            vector: vec![0.0; dim],
            probabilities: vec![1.0 / classes as f64; classes],
            missing: true,
        }
    }
}

/// Identifies one hand in one frame of one video.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub source_id: String,
    pub frame: u64,
    pub side: Side,
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn embed(&self, key: &FrameKey, hand: &[Slot; HAND_KEYPOINTS], hand_box: Option<&HandBox>) -> Embedding;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// `dim x 42` projection.
    projection: Vec<f64>,
    phase: Vec<f64>,
    pub head: Dense,
}

impl GeometricEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, BANDWIDTH).expect("valid normal");
        let uniform = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
        let projection = (0..dim * 2 * HAND_KEYPOINTS).map(|_| normal.sample(&mut rng)).collect();
        let phase = (0..dim).map(|_| uniform.sample(&mut rng)).collect();
        GeometricEmbedder {
            dim,
            seed,
            projection,
            phase,
            head: Dense::zeros(dim, STATIC_CLASSES),
        }
    }

    /// Keypoints in box coordinates: centered, divided by the side and
    /// rotated by minus the box orientation. Missing points map to zero.
    pub fn box_normalize(hand: &[Slot; HAND_KEYPOINTS], b: &HandBox) -> [f64; 2 * HAND_KEYPOINTS] {
        let (s, c) = (-b.orientation).sin_cos();
        let mut out = [0.0; 2 * HAND_KEYPOINTS];
        for (i, p) in hand.iter().enumerate() {
            if let Some(p) = p {
                let dx = (p.x - b.center.x) / b.side;
                let dy = (p.y - b.center.y) / b.side;
                out[2 * i] = c * dx - s * dy;
                out[2 * i + 1] = s * dx + c * dy;
            }
        }
        out
    }

    pub fn features(&self, u: &[f64; 2 * HAND_KEYPOINTS]) -> Vec<f64> {
        let scale = (2.0 / self.dim as f64).sqrt();
        (0..self.dim)
            .map(|k| {
                let row = &self.projection[k * 2 * HAND_KEYPOINTS..(k + 1) * 2 * HAND_KEYPOINTS];
                scale * (crate::nn::dot(row, u) + self.phase[k]).cos()
            })
            .collect()
    }

    pub fn probabilities(&self, e: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; STATIC_CLASSES];
        self.head.forward(e, &mut z);
        softmax(&z)
    }

    /// Full-batch gradient descent of the softmax head on cross-entropy.
    /// Returns the final mean loss.
    pub fn fit_head(&mut self, samples: &[(Vec<f64>, usize)], epochs: usize, lr: f64) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("no samples to fit the static head".into()));
        }
        let mut loss = 0.0;
        for _ in 0..epochs {
            let mut grad = Dense::zeros(self.dim, STATIC_CLASSES);
            loss = 0.0;
            for (e, label) in samples {
                if e.len() != self.dim || *label >= STATIC_CLASSES {
                    return Err(Error::InvalidArgument(format!("bad static sample (dim {}, label {label})", e.len())));
                }
                let p = self.probabilities(e);
                loss -= p[*label].max(1e-300).ln();
                let mut dz = p;
                dz[*label] -= 1.0;
                self.head.backward(e, &dz, &mut grad, None);
            }
            let n = samples.len() as f64;
            loss /= n;
            for (w, g) in self.head.w.iter_mut().zip(&grad.w) {
                *w -= lr * g / n;
            }
            for (b, g) in self.head.b.iter_mut().zip(&grad.b) {
                *b -= lr * g / n;
            }
        }
        Ok(loss)
    }
}

impl EmbeddingProvider for GeometricEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn classes(&self) -> usize {
        STATIC_CLASSES
    }

    fn embed(&self, _key: &FrameKey, hand: &[Slot; HAND_KEYPOINTS], hand_box: Option<&HandBox>) -> Embedding {
        let Some(b) = hand_box.filter(|_| hand.iter().any(|p| p.is_some())) else {
            return Embedding::missing(self.dim, STATIC_CLASSES);
        };
        let vector = self.features(&Self::box_normalize(hand, b));
        let probabilities = self.probabilities(&vector);
        Embedding {
            vector,
            probabilities,
            missing: false,
        }
    }
}

/// Precomputed embeddings loaded from an `EMB` archive. Each row holds the
/// embedding followed by the static class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    pub classes: usize,
    table: BTreeMap<FrameKey, (Vec<f64>, Vec<f64>)>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize, classes: usize) -> Self {
        ExternalEmbeddings {
            dim,
            classes,
            table: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: FrameKey, vector: Vec<f64>, probabilities: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim || probabilities.len() != self.classes {
            return Err(Error::DimensionMismatch {
                expected: self.dim + self.classes,
                got: vector.len() + probabilities.len(),
            });
        }
        self.table.insert(key, (vector, probabilities));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        let width = self.dim + self.classes;
        let mut payload = Vec::with_capacity(self.table.len() * width);
        let mut keys = Vec::with_capacity(self.table.len());
        for (k, (v, p)) in &self.table {
            keys.push(json!([k.source_id, k.frame, k.side]));
            payload.extend(v.iter().chain(p).map(|&x| x as f32));
        }
        let mut header = ArchiveHeader::new(ArchiveKind::Emb, width, self.table.len());
        header.meta = json!({ "kind": "EMB", "embed_dim": self.dim, "classes": self.classes, "keys": keys });
        archive::write_archive(path, &header, &payload)
    }

    /// Loads an embedding file; `expected_dim` guards against mixing
    /// embeddings of a different width into an experiment.
    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        let (header, payload) = archive::read_archive(path)?;
        if header.kind != ArchiveKind::Emb {
            return Err(Error::Corrupt(format!("expected an EMB archive, found {:?}", header.kind)));
        }
        let get = |k: &str| header.meta.get(k).and_then(Value::as_u64).map(|v| v as usize);
        let dim = get("embed_dim").ok_or_else(|| Error::Corrupt("EMB header lacks embed_dim".into()))?;
        let classes = get("classes").ok_or_else(|| Error::Corrupt("EMB header lacks classes".into()))?;
        if dim + classes != header.dim {
            return Err(Error::DimensionMismatch {
                expected: dim + classes,
                got: header.dim,
            });
        }
        if let Some(e) = expected_dim {
            if e != dim {
                return Err(Error::DimensionMismatch { expected: e, got: dim });
            }
        }
        let keys: Vec<(String, u64, Side)> = serde_json::from_value(header.meta.get("keys").cloned().unwrap_or_default())
            .map_err(|e| Error::Corrupt(format!("EMB keys: {e}")))?;
        if keys.len() != header.rows {
            return Err(Error::Corrupt(format!("{} keys for {} rows", keys.len(), header.rows)));
        }
        let mut out = ExternalEmbeddings::new(dim, classes);
        for ((source_id, frame, side), row) in keys.into_iter().zip(payload.chunks_exact(header.dim)) {
            let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
            out.table.insert(
                FrameKey { source_id, frame, side },
                (row[..dim].to_vec(), row[dim..].to_vec()),
            );
        }
        Ok(out)
    }
}

impl EmbeddingProvider for ExternalEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn embed(&self, key: &FrameKey, _hand: &[Slot; HAND_KEYPOINTS], _hand_box: Option<&HandBox>) -> Embedding {
        match self.table.get(key) {
            Some((v, p)) => Embedding {
                vector: v.clone(),
                probabilities: p.clone(),
                missing: false,
            },
            None => Embedding::missing(self.dim, self.classes),
        }
    }
}
