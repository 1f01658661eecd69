//! Train-ready sequence formulation: fixed 40-frame windows with padding
//! masks, label grouping, stratified splits and feature standardization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::archive::{self, check_fused, ArchiveHeader, ArchiveKind};
use crate::error::{Error, Result};

pub const SEQ_LEN: usize = 40;

/// A 40-frame fused feature sequence. `mask[t]` is true for padding frames.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureSequence {
    pub source_id: String,
    pub label: Option<u32>,
    pub embed_dim: usize,
    pub dim: usize,
    /// Row-major `SEQ_LEN x dim`.
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
    pub stats_id: Option<String>,
}

impl GestureSequence {
    /// Fixes a variable-length `n x dim` block to 40 frames.
    pub fn from_frames(source_id: impl Into<String>, label: Option<u32>, embed_dim: usize, frames: &[f32], n: usize) -> Result<Self> {
        let dim = archive::fused_dim(embed_dim);
        if frames.len() != n * dim {
            return Err(Error::DimensionMismatch {
                expected: n * dim,
                got: frames.len(),
            });
        }
        let (data, mask) = fix_length(frames, dim)?;
        Ok(GestureSequence {
            source_id: source_id.into(),
            label,
            embed_dim,
            dim,
            data,
            mask,
            stats_id: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_fused(self.dim, self.embed_dim)?;
        if self.data.len() != SEQ_LEN * self.dim {
            return Err(Error::DimensionMismatch {
                expected: SEQ_LEN * self.dim,
                got: self.data.len(),
            });
        }
        if self.mask.len() != SEQ_LEN {
            return Err(Error::DimensionMismatch {
                expected: SEQ_LEN,
                got: self.mask.len(),
            });
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }
}

/// How a length-`n` sequence maps onto `SEQ_LEN` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthPlan {
    pub pad_front: usize,
    pub pad_back: usize,
    pub trim_front: usize,
    pub trim_back: usize,
}

/// Symmetric padding/trimming. Odd padding puts the extra zero frame at the
/// back; odd trimming removes the extra frame from the front.
pub fn length_plan(n: usize) -> LengthPlan {
    let mut plan = LengthPlan {
        pad_front: 0,
        pad_back: 0,
        trim_front: 0,
        trim_back: 0,
    };
    if n < SEQ_LEN {
        let d = SEQ_LEN - n;
        plan.pad_front = d / 2;
        plan.pad_back = d - d / 2;
    } else if n > SEQ_LEN {
        let d = n - SEQ_LEN;
        plan.trim_front = d.div_ceil(2);
        plan.trim_back = d / 2;
    }
    plan
}

/// Returns the 40-frame block and its padding mask.
pub fn fix_length(frames: &[f32], dim: usize) -> Result<(Vec<f32>, Vec<bool>)> {
    if dim == 0 || frames.is_empty() || frames.len() % dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot fix the length of {} values with frame width {dim}",
            frames.len()
        )));
    }
    let n = frames.len() / dim;
    let plan = length_plan(n);
    let kept = &frames[plan.trim_front * dim..(n - plan.trim_back) * dim];
    let mut data = Vec::with_capacity(SEQ_LEN * dim);
    data.resize(plan.pad_front * dim, 0.0);
    data.extend_from_slice(kept);
    data.resize(SEQ_LEN * dim, 0.0);
    let mut mask = vec![true; SEQ_LEN];
    for m in &mut mask[plan.pad_front..SEQ_LEN - plan.pad_back] {
        *m = false;
    }
    Ok((data, mask))
}

/// Per-feature mean and standard deviation fitted over non-padded frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero spread; these pass through unscaled.
    pub constant: Vec<bool>,
    pub id: String,
}

impl StandardizationStats {
    /// Fits over rows of width `dim`.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            n += 1;
            for j in 0..dim {
                let d = row[j] - mean[j];
                mean[j] += d / n as f64;
                m2[j] += d * (row[j] - mean[j]);
            }
        }
        if n == 0 {
            return Err(Error::InvalidArgument("no rows to fit standardization on".into()));
        }
        let std: Vec<f64> = m2.iter().map(|&s| (s / n as f64).sqrt()).collect();
        let constant: Vec<bool> = std.iter().zip(&mean).map(|(&s, &m)| s <= 1e-12 * m.abs().max(1.0)).collect();
        Ok(Self::with_id(mean, std, constant))
    }

    fn with_id(mean: Vec<f64>, std: Vec<f64>, constant: Vec<bool>) -> Self {
        let mut h = Sha256::new();
        for v in mean.iter().chain(&std) {
            h.update(v.to_le_bytes());
        }
        let id = hex::encode(&h.finalize()[..8]);
        StandardizationStats { mean, std, constant, id }
    }

    /// Fits over the non-padded frames of `seqs`.
    pub fn fit_sequences(seqs: &[GestureSequence]) -> Result<Self> {
        let dim = seqs
            .first()
            .map(|s| s.dim)
            .ok_or_else(|| Error::InvalidArgument("no sequences".into()))?;
        let rows: Vec<Vec<f64>> = seqs
            .iter()
            .flat_map(|s| {
                (0..SEQ_LEN)
                    .filter(|&t| !s.mask[t])
                    .map(move |t| s.frame(t).iter().map(|&v| v as f64).collect())
            })
            .collect();
        Self::fit(rows.iter().map(|r| r.as_slice()), dim)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for j in 0..x.len() {
            if !self.constant[j] {
                x[j] = (x[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(())
    }

    pub fn apply_f32(&self, x: &mut [f32]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        for j in 0..x.len() {
            if !self.constant[j] {
                x[j] = ((x[j] as f64 - self.mean[j]) / self.std[j]) as f32;
            }
        }
        Ok(())
    }
}

/// Standardizes the non-padded frames of every sequence in place.
pub fn standardize(seqs: &mut [GestureSequence], stats: &StandardizationStats) -> Result<()> {
    for s in seqs.iter_mut() {
        if s.dim != stats.dim() {
            return Err(Error::DimensionMismatch {
                expected: stats.dim(),
                got: s.dim,
            });
        }
        let dim = s.dim;
        for t in 0..SEQ_LEN {
            if !s.mask[t] {
                stats.apply_f32(&mut s.data[t * dim..(t + 1) * dim])?;
            }
        }
        s.stats_id = Some(stats.id.clone());
    }
    Ok(())
}

/// Stable grouping by label. Unlabeled items are dropped.
pub fn sort_by_label<T>(items: Vec<T>, label: impl Fn(&T) -> Option<u32>) -> BTreeMap<u32, Vec<T>> {
    let mut groups: BTreeMap<u32, Vec<T>> = BTreeMap::new();
    for it in items {
        if let Some(l) = label(&it) {
            groups.entry(l).or_default().push(it);
        }
    }
    groups
}

/// Labels of the `k` largest groups, ordered by descending size then label.
pub fn top_k_labels<T>(groups: &BTreeMap<u32, Vec<T>>, k: usize) -> Vec<u32> {
    let mut sizes: Vec<(u32, usize)> = groups.iter().map(|(&l, g)| (l, g.len())).collect();
    sizes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    sizes.into_iter().take(k).map(|(l, _)| l).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            valid: 0.15,
            test: 0.15,
        }
    }
}

impl std::str::FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad ratio '{p}': {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let [train, valid, test] = parts[..] else {
            return Err(format!("expected three ratios like 0.7/0.15/0.15, got '{s}'"));
        };
        if parts.iter().any(|&r| !(0.0..=1.0).contains(&r)) || ((train + valid + test) - 1.0).abs() > 1e-6 {
            return Err(format!("ratios must be in [0, 1] and sum to 1, got '{s}'"));
        }
        Ok(SplitRatios { train, valid, test })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub valid: Vec<T>,
    pub test: Vec<T>,
}

/// Per-label shuffled split; each label contributes in proportion.
pub fn split_stratified<T>(groups: BTreeMap<u32, Vec<T>>, ratios: SplitRatios, seed: u64) -> Splits<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Splits {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (_, mut items) in groups {
        items.shuffle(&mut rng);
        let n = items.len();
        let n_train = ((n as f64) * ratios.train).round() as usize;
        let n_valid = (((n as f64) * ratios.valid).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let mut it = items.into_iter();
        out.train.extend(it.by_ref().take(n_train));
        out.valid.extend(it.by_ref().take(n_valid));
        out.test.extend(it);
    }
    out
}

/// Standardized, split sequences plus the statistics they were scaled with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embed_dim: usize,
    pub stats: StandardizationStats,
    pub train: Vec<GestureSequence>,
    pub valid: Vec<GestureSequence>,
    pub test: Vec<GestureSequence>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        archive::fused_dim(self.embed_dim)
    }

    /// One past the largest label in any split.
    pub fn class_count(&self) -> usize {
        self.train
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .filter_map(|s| s.label)
            .max()
            .map(|l| l as usize + 1)
            .unwrap_or(0)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<u64> {
        let dim = self.dim();
        let mut payload = Vec::new();
        let mut splits = serde_json::Map::new();
        for (name, seqs) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            let metas: Vec<Value> = seqs
                .iter()
                .map(|s| {
                    s.validate()?;
                    if s.dim != dim {
                        return Err(Error::DimensionMismatch { expected: dim, got: s.dim });
                    }
                    payload.extend_from_slice(&s.data);
                    Ok(archive::sequence_meta(s))
                })
                .collect::<Result<_>>()?;
            splits.insert(name.into(), Value::Array(metas));
        }
        let total = self.train.len() + self.valid.len() + self.test.len();
        let mut header = ArchiveHeader::new(ArchiveKind::Dataset, dim, total * SEQ_LEN);
        header.stats_id = Some(self.stats.id.clone());
        header.meta = json!({
            "embed_dim": self.embed_dim,
            "stats": self.stats,
            "splits": splits,
        });
        archive::write_archive(path, &header, &payload)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (header, payload) = archive::read_archive(path)?;
        if header.kind != ArchiveKind::Dataset {
            return Err(Error::Corrupt(format!("expected a DATASET archive, found {:?}", header.kind)));
        }
        let embed_dim = header
            .meta
            .get("embed_dim")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Corrupt("dataset lacks embed_dim".into()))? as usize;
        check_fused(header.dim, embed_dim)?;
        let stats: StandardizationStats = serde_json::from_value(header.meta.get("stats").cloned().unwrap_or(Value::Null))
            .map_err(|e| Error::Corrupt(format!("stats: {e}")))?;
        let block = SEQ_LEN * header.dim;
        let mut offset = 0;
        let mut take = |name: &str| -> Result<Vec<GestureSequence>> {
            let metas = header
                .meta
                .get("splits")
                .and_then(|s| s.get(name))
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Corrupt(format!("dataset lacks split '{name}'")))?;
            metas
                .iter()
                .map(|m| {
                    let end = offset + block;
                    let data = payload
                        .get(offset..end)
                        .ok_or_else(|| Error::Corrupt("split metadata exceeds payload".into()))?
                        .to_vec();
                    offset = end;
                    archive::sequence_from_meta(m, data, header.dim, Some(stats.id.clone()))
                })
                .collect()
        };
        let train = take("train")?;
        let valid = take("valid")?;
        let test = take("test")?;
        Ok(Dataset {
            embed_dim,
            stats,
            train,
            valid,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, dim: usize) -> Vec<f32> {
        (0..n * dim).map(|i| (i / dim + 1) as f32).collect()
    }

    #[test]
    fn average_length_pads_four_each_side() {
        let (data, mask) = fix_length(&rows(32, 3), 3).unwrap();
        assert_eq!(mask.iter().take(4).filter(|&&m| m).count(), 4);
        assert_eq!(mask.iter().rev().take(4).filter(|&&m| m).count(), 4);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 8);
        assert_eq!(data[4 * 3], 1.0);
        assert_eq!(data[35 * 3], 32.0);
        assert!(data[..12].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_length_is_identity() {
        let r = rows(40, 2);
        let (data, mask) = fix_length(&r, 2).unwrap();
        assert_eq!(data, r);
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn one_extra_frame_trims_front() {
        let (data, _) = fix_length(&rows(41, 1), 1).unwrap();
        assert_eq!(data[0], 2.0);
        assert_eq!(data[39], 41.0);
        assert_eq!(length_plan(41).trim_back, 0);
    }

    #[test]
    fn odd_padding_extra_at_back() {
        let p = length_plan(33);
        assert_eq!((p.pad_front, p.pad_back), (3, 4));
    }

    #[test]
    fn empty_is_error() {
        assert!(fix_length(&[], 3).is_err());
    }

    #[test]
    fn constant_feature_passes_through() {
        let data = [[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let stats = StandardizationStats::fit(data.iter().map(|r| r.as_slice()), 2).unwrap();
        assert!(stats.constant[1] && !stats.constant[0]);
        let mut x = [3.0, 5.0];
        stats.apply(&mut x).unwrap();
        assert_eq!(x, [0.0, 5.0]);
        assert!(stats.apply(&mut [1.0]).is_err());
    }

    #[test]
    fn grouping_is_stable() {
        let items = vec![(0, 2), (1, 0), (2, 1), (3, 2), (4, 0), (5, 1)];
        let g = sort_by_label(items, |&(_, l)| Some(l));
        assert_eq!(g.len(), 3);
        assert_eq!(g[&0], vec![(1, 0), (4, 0)]);
        assert_eq!(g[&2], vec![(0, 2), (3, 2)]);
        let empty = sort_by_label(Vec::<(u32, u32)>::new(), |&(_, l)| Some(l));
        assert!(empty.is_empty());
    }

    #[test]
    fn top_k_prefers_frequent_then_low_label() {
        let mut g: BTreeMap<u32, Vec<()>> = BTreeMap::new();
        g.insert(0, vec![(); 3]);
        g.insert(1, vec![(); 9]);
        g.insert(2, vec![(); 3]);
        g.insert(3, vec![(); 5]);
        assert_eq!(top_k_labels(&g, 3), vec![1, 3, 0]);
    }

    #[test]
    fn split_parsing() {
        let r: SplitRatios = "0.7/0.15/0.15".parse().unwrap();
        assert_eq!(r, SplitRatios::default());
        assert!("0.5/0.5".parse::<SplitRatios>().is_err());
        assert!("0.9/0.9/0.1".parse::<SplitRatios>().is_err());
    }

    #[test]
    fn stratified_split_counts() {
        let mut g = BTreeMap::new();
        g.insert(0u32, (0..20).collect::<Vec<_>>());
        g.insert(1u32, (100..120).collect::<Vec<_>>());
        let s = split_stratified(g, SplitRatios::default(), 9);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (28, 6, 6));
    }
}
