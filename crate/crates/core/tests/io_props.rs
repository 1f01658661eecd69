use std::collections::BTreeMap;

use proptest::prelude::*;
use stadnet::archive::{decode, encode, fused_dim, read_feature_archive, write_feature_archive, ArchiveHeader, ArchiveKind};
use stadnet::model::{parse_keypoint_stream, write_keypoint_stream_to, KeypointFrame, Point2, VideoSample, POINTS_PER_FRAME};
use stadnet::sequence::{
    fix_length, length_plan, sort_by_label, split_stratified, standardize, top_k_labels, GestureSequence,
    SplitRatios, StandardizationStats, SEQ_LEN,
};

fn finite_f32() -> impl Strategy<Value = f32> {
    prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL
}

fn sequence(embed_dim: usize) -> impl Strategy<Value = GestureSequence> {
    let dim = fused_dim(embed_dim);
    (
        prop::collection::vec(finite_f32(), 1..=60).prop_flat_map(move |seed_row| {
            let n = seed_row.len();
            (Just(n), prop::collection::vec(finite_f32(), n * dim))
        }),
        prop::option::of(0u32..1000),
        "[a-z0-9-]{0,12}",
    )
        .prop_map(move |((n, frames), label, id)| GestureSequence::from_frames(id, label, embed_dim, &frames, n).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn archive_round_trip_is_bit_exact(seq in sequence(4)) {
        let mut header = ArchiveHeader::new(ArchiveKind::Seq, seq.dim, SEQ_LEN);
        header.meta = serde_json::json!({"source_id": seq.source_id});
        let bytes = encode(&header, &seq.data).unwrap();
        let (h, payload) = decode(&bytes).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(payload.len(), seq.data.len());
        for (a, b) in payload.iter().zip(&seq.data) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fix_length_is_idempotent(n in 1usize..100, dim in 1usize..5) {
        let frames: Vec<f32> = (0..n * dim).map(|i| i as f32 + 1.0).collect();
        let (once, mask) = fix_length(&frames, dim).unwrap();
        let (twice, mask2) = fix_length(&once, dim).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.len(), SEQ_LEN * dim);
        prop_assert!(mask2.iter().all(|&m| !m));
        for t in 0..SEQ_LEN {
            let row = &once[t * dim..(t + 1) * dim];
            // padding carries zeros; real frames never do here since inputs start at 1
            prop_assert_eq!(mask[t], row.iter().all(|&v| v == 0.0));
        }
        let p = length_plan(n);
        prop_assert_eq!(mask.iter().filter(|&&m| !m).count(), n.min(SEQ_LEN));
        prop_assert!(p.pad_back >= p.pad_front && p.pad_back - p.pad_front <= 1);
        prop_assert!(p.trim_front >= p.trim_back && p.trim_front - p.trim_back <= 1);
    }

    #[test]
    fn split_sizes_sum_to_input(labels in prop::collection::vec(0u32..6, 0..200), seed in any::<u64>()) {
        let items: Vec<(usize, u32)> = labels.iter().copied().enumerate().collect();
        let groups = sort_by_label(items.clone(), |x| Some(x.1));
        prop_assert_eq!(groups.values().map(Vec::len).sum::<usize>(), items.len());
        for g in groups.values() {
            prop_assert!(g.windows(2).all(|w| w[0].0 < w[1].0), "original order kept within groups");
        }
        let s = split_stratified(groups, SplitRatios::default(), seed);
        prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), items.len());
    }
}

#[test]
fn truncated_archives_are_errors() {
    let seq = GestureSequence::from_frames("t", Some(1), 2, &vec![0.5; 10 * fused_dim(2)], 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.stadnet");
    write_feature_archive(&seq, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(read_feature_archive(&path).unwrap(), seq);
    for cut in [0, 4, 8, 11, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "prefix of {cut} bytes decoded");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode(&extra).is_err());
}

#[test]
fn zero_sequence_at_wide_width_round_trips() {
    let dim = fused_dim(1024);
    assert_eq!(dim, 2177);
    let seq = GestureSequence::from_frames("z", None, 1024, &vec![0.0; SEQ_LEN * dim], SEQ_LEN).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("z.stadnet");
    write_feature_archive(&seq, &path).unwrap();
    assert_eq!(read_feature_archive(&path).unwrap(), seq);
}

#[test]
fn keypoint_stream_preserves_missing_points() {
    let mut r = 0u64;
    let mut next = || {
        r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (r >> 11) as f64 / (1u64 << 53) as f64
    };
    let samples: Vec<VideoSample> = (0..3)
        .map(|s| {
            let frames = (0..10)
                .map(|k| {
                    let mut f = KeypointFrame::empty(k, 30.0);
                    for i in 0..POINTS_PER_FRAME {
                        if next() > 0.2 {
                            *f.point_mut(i) = Some(Point2::new(next() * 1440.0, next() * 1080.0));
                        }
                    }
                    f
                })
                .collect();
            VideoSample::new(format!("v{s}"), Some(s), frames).unwrap()
        })
        .collect();
    // interleave lines of the three samples
    let mut text = Vec::new();
    write_keypoint_stream_to(&mut text, &samples).unwrap();
    let text = String::from_utf8(text).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut mixed = String::new();
    for k in 0..10 {
        for s in 0..3 {
            mixed.push_str(lines[s * 10 + k]);
            mixed.push('\n');
        }
    }
    let back = parse_keypoint_stream(&mixed).unwrap();
    assert_eq!(back, samples);
}

#[test]
fn standardization_refit_is_unit() {
    let embed = 1;
    let dim = fused_dim(embed);
    let mut seqs: Vec<GestureSequence> = (0..12)
        .map(|s| {
            let n = 20 + s;
            let frames: Vec<f32> = (0..n * dim)
                .map(|i| {
                    let (t, j) = (i / dim, i % dim);
                    if j == 3 {
                        7.0
                    } else {
                        ((t * 31 + j * 17 + s * 13) % 23) as f32 * 0.5 - 3.0 + j as f32
                    }
                })
                .collect();
            GestureSequence::from_frames(format!("s{s}"), Some(0), embed, &frames, n).unwrap()
        })
        .collect();
    let stats = StandardizationStats::fit_sequences(&seqs).unwrap();
    assert!(stats.constant[3]);
    standardize(&mut seqs, &stats).unwrap();
    for s in &seqs {
        for t in (0..SEQ_LEN).filter(|&t| s.mask[t]) {
            assert!(s.frame(t).iter().all(|&v| v == 0.0), "padding untouched");
        }
        assert!(s.frame(SEQ_LEN / 2)[3] == 7.0, "constant feature passes through");
    }
    let refit = StandardizationStats::fit_sequences(&seqs).unwrap();
    for j in (0..dim).filter(|&j| !stats.constant[j]) {
        assert!(refit.mean[j].abs() < 1e-5, "mean {j} = {}", refit.mean[j]);
        assert!((refit.std[j] - 1.0).abs() < 1e-5, "std {j} = {}", refit.std[j]);
    }
    let json = serde_json::to_string(&stats).unwrap();
    assert_eq!(serde_json::from_str::<StandardizationStats>(&json).unwrap(), stats);
}

#[test]
fn top_k_on_skewed_labels() {
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for l in 0..60u32 {
        groups.insert(l, vec![l; 1 + (l as usize * 7) % 50]);
    }
    let top = top_k_labels(&groups, 47);
    assert_eq!(top.len(), 47);
    let min_kept = top.iter().map(|l| groups[l].len()).min().unwrap();
    let dropped: Vec<u32> = groups.keys().copied().filter(|l| !top.contains(l)).collect();
    assert!(dropped.iter().all(|l| groups[l].len() <= min_kept));
    assert!(top_k_labels(&BTreeMap::<u32, Vec<u8>>::new(), 3).is_empty());
}
