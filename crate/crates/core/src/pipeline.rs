//! Per-video featurization: depth, skeleton normalization, dynamic pose,
//! hand boxes, embeddings and fusion into a fixed-length sequence; and
//! dataset preparation from a set of featurized sequences.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{hand_box, hand_center, normalize_skeleton_with, BoxParams, HandBox, ScaleMode};
use crate::depth::DepthNet;
use crate::embed::{EmbeddingProvider, FrameKey};
use crate::error::{Error, Result};
use crate::features::{augment_hand, augment_pose, dynamic_pose, hand_chain, JointSet, DYNAMIC_POSE_DIM};
use crate::model::{joint, Point2, Side, VideoSample, BODY_JOINTS};
use crate::sequence::{sort_by_label, split_stratified, standardize, Dataset, GestureSequence, SplitRatios, StandardizationStats};

/// Estimated depths below this are clamped before use as divisors.
pub const MIN_DEPTH: f64 = 0.05;

/// Ground-truth depth labels: source id, then frame index, then
/// `[neck, left hand, right hand]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthDepths(pub BTreeMap<String, BTreeMap<u64, [f64; 3]>>);

impl GroundTruthDepths {
    pub fn insert(&mut self, source_id: &str, frame: u64, depths: [f64; 3]) {
        self.0.entry(source_id.to_string()).or_default().insert(frame, depths);
    }

    pub fn get(&self, source_id: &str, frame: u64) -> Option<[f64; 3]> {
        self.0.get(source_id).and_then(|m| m.get(&frame)).copied()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Learned estimators; a missing hand estimator falls back to the neck depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthNets {
    pub neck: DepthNet,
    pub left: Option<DepthNet>,
    pub right: Option<DepthNet>,
}

#[derive(Debug, Clone, Copy)]
pub enum DepthSource<'a> {
    GroundTruth(&'a GroundTruthDepths),
    Estimated(&'a DepthNets),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeaturizeParams {
    pub boxes: BoxParams,
    pub scale_mode: ScaleMode,
}

/// Counts of degraded frames in one featurized video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeaturizeReport {
    pub frames: usize,
    /// Frames whose neck depth was carried over from a neighbor.
    pub depth_filled: usize,
    /// Frames without a usable skeleton (zero dynamic pose).
    pub skeleton_missing: usize,
    pub left_missing: usize,
    pub right_missing: usize,
    pub edge_replicated: bool,
}

/// Concatenates left embedding, dynamic pose and right embedding.
pub fn fuse(e_l: &[f64], x_dyn: &[f64], e_r: &[f64]) -> Vec<f64> {
    let mut psi = Vec::with_capacity(e_l.len() + x_dyn.len() + e_r.len());
    psi.extend_from_slice(e_l);
    psi.extend_from_slice(x_dyn);
    psi.extend_from_slice(e_r);
    psi
}

/// Replaces `None` by the nearest earlier value, then the nearest later one.
fn fill_gaps(v: &mut [Option<f64>]) -> usize {
    let missing = v.iter().filter(|d| d.is_none()).count();
    let mut last = None;
    for d in v.iter_mut() {
        match d {
            Some(x) => last = Some(*x),
            None => *d = last,
        }
    }
    let mut next = None;
    for d in v.iter_mut().rev() {
        match d {
            Some(x) => next = Some(*x),
            None => *d = next,
        }
    }
    missing
}

fn neck_depths(sample: &VideoSample, source: DepthSource) -> Result<Vec<Option<f64>>> {
    sample
        .frames
        .iter()
        .map(|f| match source {
            DepthSource::GroundTruth(gt) => gt
                .get(&sample.source_id, f.frame_index)
                .map(|d| Some(d[0]))
                .ok_or_else(|| Error::Sequence {
                    source_id: sample.source_id.clone(),
                    msg: format!("no ground-truth depth for frame {}", f.frame_index),
                }),
            DepthSource::Estimated(nets) => Ok(match augment_pose(&f.body) {
                Ok(x) => Some(nets.neck.forward(&x.values)?),
                Err(_) => None,
            }),
        })
        .collect()
}

fn hand_depth(sample: &VideoSample, k: usize, side: Side, neck: f64, source: DepthSource) -> Result<f64> {
    let f = &sample.frames[k];
    Ok(match source {
        DepthSource::GroundTruth(gt) => {
            let d = gt.get(&sample.source_id, f.frame_index).expect("checked with the neck depth");
            if side == Side::Left {
                d[1]
            } else {
                d[2]
            }
        }
        DepthSource::Estimated(nets) => {
            let net = if side == Side::Left { &nets.left } else { &nets.right };
            match (net, augment_hand(&hand_chain(f, side))) {
                (Some(net), Ok(x)) => net.forward(&x.values)?,
                _ => neck,
            }
        }
    })
}

fn forearm(body: &JointSet, side: Side) -> Option<(Point2, Point2)> {
    let (e, w) = match side {
        Side::Left => (joint::L_ELBOW, joint::L_WRIST),
        Side::Right => (joint::R_ELBOW, joint::R_WRIST),
    };
    Some((body[e]?, body[w]?))
}

/// Hand box for one side of one frame, or `None` when the hand is not detected.
pub fn locate_hand(body: &JointSet, hand: &[crate::model::Slot], depth: f64, side: Side, params: &BoxParams) -> Result<Option<HandBox>> {
    match hand_center(hand) {
        Some(c) => Ok(Some(hand_box(c, depth.max(MIN_DEPTH), forearm(body, side), side, params)?)),
        None => Ok(None),
    }
}

/// Per-frame fused vectors (`n x (2E + 129)`, row-major) of one video.
pub fn featurize_frames(
    sample: &VideoSample,
    source: DepthSource,
    provider: &dyn EmbeddingProvider,
    params: &FeaturizeParams,
) -> Result<(Vec<f64>, FeaturizeReport)> {
    let n = sample.frames.len();
    let mut report = FeaturizeReport {
        frames: n,
        ..FeaturizeReport::default()
    };
    let mut depths = neck_depths(sample, source)?;
    report.depth_filled = fill_gaps(&mut depths);

    let normalized: Vec<JointSet> = sample
        .frames
        .iter()
        .zip(&depths)
        .map(|(f, d)| match d {
            Some(d) => normalize_skeleton_with(&f.body, d.max(MIN_DEPTH), params.scale_mode)
                .map(|s| s.joints)
                .unwrap_or([None; BODY_JOINTS]),
            None => [None; BODY_JOINTS],
        })
        .collect();

    let fps = sample.fps();
    let dim = 2 * provider.dim() + DYNAMIC_POSE_DIM;
    let mut out = Vec::with_capacity(n * dim);
    for k in 0..n {
        let x_dyn = match dynamic_pose(&normalized, k, fps) {
            Ok(p) => {
                report.edge_replicated |= p.edge_replicated;
                p.values.to_vec()
            }
            Err(_) => {
                report.skeleton_missing += 1;
                vec![0.0; DYNAMIC_POSE_DIM]
            }
        };
        let f = &sample.frames[k];
        let neck = depths[k].unwrap_or(1.0);
        let mut embed = |side: Side| -> Result<Vec<f64>> {
            let hand = f.hand(side);
            let b = match hand_center(hand) {
                Some(_) => locate_hand(&f.body, hand, hand_depth(sample, k, side, neck, source)?, side, &params.boxes)?,
                None => None,
            };
            let key = FrameKey {
                source_id: sample.source_id.clone(),
                frame: f.frame_index,
                side,
            };
            let e = provider.embed(&key, hand, b.as_ref());
            if e.missing {
                match side {
                    Side::Left => report.left_missing += 1,
                    Side::Right => report.right_missing += 1,
                }
            }
            Ok(e.vector)
        };
        let e_l = embed(Side::Left)?;
        let e_r = embed(Side::Right)?;
        out.extend(fuse(&e_l, &x_dyn, &e_r));
    }
    Ok((out, report))
}

/// Featurizes one video into a 40-frame sequence.
pub fn featurize(
    sample: &VideoSample,
    source: DepthSource,
    provider: &dyn EmbeddingProvider,
    params: &FeaturizeParams,
) -> Result<(GestureSequence, FeaturizeReport)> {
    let (rows, report) = featurize_frames(sample, source, provider, params)?;
    let rows: Vec<f32> = rows.iter().map(|&v| v as f32).collect();
    let seq = GestureSequence::from_frames(sample.source_id.clone(), sample.label, provider.dim(), &rows, sample.frames.len())?;
    Ok((seq, report))
}

/// Splits labeled sequences per class, fits standardization on the training
/// split and applies it to every split.
pub fn prepare(seqs: Vec<GestureSequence>, ratios: SplitRatios, seed: u64) -> Result<Dataset> {
    let embed_dim = seqs
        .first()
        .map(|s| s.embed_dim)
        .ok_or_else(|| Error::InvalidArgument("no sequences to prepare".into()))?;
    if let Some(s) = seqs.iter().find(|s| s.embed_dim != embed_dim) {
        return Err(Error::DimensionMismatch {
            expected: embed_dim,
            got: s.embed_dim,
        });
    }
    if let Some(s) = seqs.iter().find(|s| s.label.is_none()) {
        return Err(Error::InvalidArgument(format!("sequence '{}' has no label", s.source_id)));
    }
    let groups = sort_by_label(seqs, |s| s.label);
    let mut splits = split_stratified(groups, ratios, seed);
    let stats = StandardizationStats::fit_sequences(&splits.train)?;
    standardize(&mut splits.train, &stats)?;
    standardize(&mut splits.valid, &stats)?;
    standardize(&mut splits.test, &stats)?;
    Ok(Dataset {
        embed_dim,
        stats,
        train: splits.train,
        valid: splits.valid,
        test: splits.test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::normalize_skeleton;
    use crate::embed::GeometricEmbedder;
    use crate::synth::{generate, NoiseParams};

    fn gt_for(s: &crate::synth::SynthSample) -> GroundTruthDepths {
        let mut gt = GroundTruthDepths::default();
        for (f, d) in s.sample.frames.iter().zip(&s.depths) {
            gt.insert(&s.sample.source_id, f.frame_index, *d);
        }
        gt
    }

    #[test]
    fn fuse_order_and_width() {
        let psi = fuse(&[1.0; 64], &[2.0; 129], &[3.0; 64]);
        assert_eq!(psi.len(), 257);
        assert_eq!((psi[0], psi[64], psi[193]), (1.0, 2.0, 3.0));
    }

    #[test]
    fn gap_filling_prefers_earlier_values() {
        let mut v = [None, Some(1.0), None, Some(3.0), None];
        assert_eq!(fill_gaps(&mut v), 3);
        assert_eq!(v, [Some(1.0), Some(1.0), Some(1.0), Some(3.0), Some(3.0)]);
    }

    #[test]
    fn featurized_sequence_has_fused_width() {
        let s = generate(1, 3, NoiseParams::default()).unwrap();
        let gt = gt_for(&s);
        let emb = GeometricEmbedder::new(64, 0);
        let (seq, report) = featurize(&s.sample, DepthSource::GroundTruth(&gt), &emb, &FeaturizeParams::default()).unwrap();
        assert_eq!(seq.dim, 257);
        assert_eq!(seq.data.len(), 40 * 257);
        assert_eq!(report.frames, s.sample.len());
    }

    #[test]
    fn body_block_matches_direct_normalization() {
        let s = generate(0, 11, NoiseParams::NONE).unwrap();
        let gt = gt_for(&s);
        let emb = GeometricEmbedder::new(8, 0);
        let (rows, _) = featurize_frames(&s.sample, DepthSource::GroundTruth(&gt), &emb, &FeaturizeParams::default()).unwrap();
        let k = 5;
        let norm = normalize_skeleton(&s.sample.frames[k].body, s.depths[k][0]).unwrap();
        let pose = augment_pose(&norm.joints).unwrap();
        let dim = 16 + DYNAMIC_POSE_DIM;
        assert_eq!(&rows[k * dim + 8..k * dim + 8 + 97], &pose.values[..]);
    }

    #[test]
    fn missing_ground_truth_is_error() {
        let s = generate(0, 1, NoiseParams::NONE).unwrap();
        let emb = GeometricEmbedder::new(8, 0);
        let gt = GroundTruthDepths::default();
        assert!(featurize(&s.sample, DepthSource::GroundTruth(&gt), &emb, &FeaturizeParams::default()).is_err());
    }
}
