//! Domain types for skeleton streams and the line-delimited JSON keypoint wire format.
//!
//! Coordinates are resized-frame pixels: the abscissa grows to the right and the
//! ordinate grows downward, as emitted by common 2D pose extractors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BODY_JOINTS: usize = 8;
pub const HAND_KEYPOINTS: usize = 21;
/// Total filterable points per frame (body plus both hands).
pub const POINTS_PER_FRAME: usize = BODY_JOINTS + 2 * HAND_KEYPOINTS;

/// Points below this confidence are treated as undetected.
pub const MIN_CONFIDENCE: f64 = 0.05;

/// Upper-body joint index map. Neck is the root.
pub mod joint {
    pub const NECK: usize = 0;
    pub const NOSE: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;

    pub const NAMES: [&str; 8] = [
        "Neck",
        "Nose",
        "RShoulder",
        "RElbow",
        "RWrist",
        "LShoulder",
        "LElbow",
        "LWrist",
    ];
}

/// An image point. Undetected points are represented as `Option::None` by the
/// containers, never as a partially filled point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

pub type Slot = Option<Point2>;

/// Which hand a quantity refers to, from the subject's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// One frame of detected keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub frame_index: u64,
    pub fps: f64,
    pub body: [Slot; BODY_JOINTS],
    pub left_hand: [Slot; HAND_KEYPOINTS],
    pub right_hand: [Slot; HAND_KEYPOINTS],
}

impl KeypointFrame {
    pub fn empty(frame_index: u64, fps: f64) -> Self {
        KeypointFrame {
            frame_index,
            fps,
            body: [None; BODY_JOINTS],
            left_hand: [None; HAND_KEYPOINTS],
            right_hand: [None; HAND_KEYPOINTS],
        }
    }

    pub fn hand(&self, side: Side) -> &[Slot; HAND_KEYPOINTS] {
        match side {
            Side::Left => &self.left_hand,
            Side::Right => &self.right_hand,
        }
    }

    /// Flat view over every filterable point: body, then left hand, then right hand.
    pub fn point(&self, i: usize) -> Slot {
        if i < BODY_JOINTS {
            self.body[i]
        } else if i < BODY_JOINTS + HAND_KEYPOINTS {
            self.left_hand[i - BODY_JOINTS]
        } else {
            self.right_hand[i - BODY_JOINTS - HAND_KEYPOINTS]
        }
    }

    pub fn point_mut(&mut self, i: usize) -> &mut Slot {
        if i < BODY_JOINTS {
            &mut self.body[i]
        } else if i < BODY_JOINTS + HAND_KEYPOINTS {
            &mut self.left_hand[i - BODY_JOINTS]
        } else {
            &mut self.right_hand[i - BODY_JOINTS - HAND_KEYPOINTS]
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..POINTS_PER_FRAME)
            .filter(|&i| self.point(i).is_none())
            .count()
    }
}

/// An isolated-gesture video reduced to its keypoint frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub source_id: String,
    pub label: Option<u32>,
    pub frames: Vec<KeypointFrame>,
}

impl VideoSample {
    /// Builds a sample, checking non-emptiness, strictly increasing frame
    /// indices and uniform fps.
    pub fn new(source_id: impl Into<String>, label: Option<u32>, frames: Vec<KeypointFrame>) -> Result<Self> {
        let source_id = source_id.into();
        let seq_err = |msg: String| Error::Sequence {
            source_id: source_id.clone(),
            msg,
        };
        let first = frames.first().ok_or_else(|| seq_err("no frames".into()))?;
        if !(first.fps > 0.0 && first.fps.is_finite()) {
            return Err(seq_err(format!("invalid fps {}", first.fps)));
        }
        for w in frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(seq_err(format!(
                    "frame index {} follows {}",
                    w[1].frame_index, w[0].frame_index
                )));
            }
            if w[1].fps != first.fps {
                return Err(seq_err(format!("fps {} differs from {}", w[1].fps, first.fps)));
            }
        }
        Ok(VideoSample {
            source_id,
            label,
            frames,
        })
    }

    pub fn fps(&self) -> f64 {
        self.frames.first().map(|f| f.fps).unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WireFrame {
    src: String,
    k: u64,
    fps: f64,
    body: Vec<Option<Vec<f64>>>,
    lh: Vec<Option<Vec<f64>>>,
    rh: Vec<Option<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
}

fn parse_slots<const N: usize>(raw: &[Option<Vec<f64>>], what: &str, line: usize) -> Result<[Slot; N]> {
    if raw.len() != N {
        return Err(Error::Parse {
            line,
            msg: format!("'{what}' has {} points, expected {N}", raw.len()),
        });
    }
    let mut out = [None; N];
    for (slot, item) in out.iter_mut().zip(raw) {
        let Some(v) = item else { continue };
        let (x, y, c) = match v.as_slice() {
            [x, y] => (*x, *y, 1.0),
            [x, y, c] => (*x, *y, *c),
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("'{what}' point must be [x, y, c], got {} values", v.len()),
                })
            }
        };
        if !(x.is_finite() && y.is_finite() && c.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite value in '{what}'"),
            });
        }
        if c >= MIN_CONFIDENCE {
            *slot = Some(Point2::new(x, y));
        }
    }
    Ok(out)
}

fn wire_slots(slots: &[Slot]) -> Vec<Option<Vec<f64>>> {
    slots.iter().map(|s| s.map(|p| vec![p.x, p.y, 1.0])).collect()
}

/// Parses a keypoint stream held in memory. Samples are returned in order of
/// first appearance of their `src`.
pub fn parse_keypoint_stream(text: &str) -> Result<Vec<VideoSample>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Option<u32>, Vec<KeypointFrame>)> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let w: WireFrame = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !(w.fps > 0.0 && w.fps.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("invalid fps {}", w.fps),
            });
        }
        let frame = KeypointFrame {
            frame_index: w.k,
            fps: w.fps,
            body: parse_slots(&w.body, "body", line_no)?,
            left_hand: parse_slots(&w.lh, "lh", line_no)?,
            right_hand: parse_slots(&w.rh, "rh", line_no)?,
        };
        let entry = groups.entry(w.src.clone()).or_insert_with(|| {
            order.push(w.src.clone());
            (None, Vec::new())
        });
        if let Some(prev) = entry.1.last() {
            if frame.frame_index <= prev.frame_index {
                return Err(Error::Sequence {
                    source_id: w.src,
                    msg: format!(
                        "line {line_no}: frame index {} not greater than {}",
                        frame.frame_index, prev.frame_index
                    ),
                });
            }
        }
        match (entry.0, w.label) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Sequence {
                    source_id: w.src,
                    msg: format!("line {line_no}: label {b} conflicts with {a}"),
                })
            }
            (None, Some(b)) => entry.0 = Some(b),
            _ => {}
        }
        entry.1.push(frame);
    }
    order
        .into_iter()
        .map(|src| {
            let (label, frames) = groups.remove(&src).expect("grouped source");
            VideoSample::new(src, label, frames)
        })
        .collect()
}

pub fn read_keypoint_stream(path: impl AsRef<Path>) -> Result<Vec<VideoSample>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoint_stream(&text)
}

/// Serializes one frame as a wire-format line (without trailing newline).
pub fn frame_to_line(source_id: &str, label: Option<u32>, frame: &KeypointFrame) -> String {
    let w = WireFrame {
        src: source_id.to_string(),
        k: frame.frame_index,
        fps: frame.fps,
        body: wire_slots(&frame.body),
        lh: wire_slots(&frame.left_hand),
        rh: wire_slots(&frame.right_hand),
        label,
    };
    serde_json::to_string(&w).expect("wire frame serializes")
}

pub fn write_keypoint_stream_to<W: Write>(mut out: W, samples: &[VideoSample]) -> std::io::Result<()> {
    for s in samples {
        for f in &s.frames {
            writeln!(out, "{}", frame_to_line(&s.source_id, s.label, f))?;
        }
    }
    out.flush()
}

pub fn write_keypoint_stream(path: impl AsRef<Path>, samples: &[VideoSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_keypoint_stream_to(BufWriter::new(file), samples).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(src: &str, k: u64, body_conf: f64) -> String {
        let body: Vec<String> = (0..8)
            .map(|i| format!("[{}, {}, {}]", 10.0 * i as f64, 5.0, if i == 4 { body_conf } else { 0.9 }))
            .collect();
        let hand = vec!["null"; 21].join(",");
        format!(
            r#"{{"src":"{src}","k":{k},"fps":30,"body":[{}],"lh":[{hand}],"rh":[{hand}]}}"#,
            body.join(",")
        )
    }

    #[test]
    fn single_line_all_joints_present() {
        let s = parse_keypoint_stream(&line("a", 0, 1.0)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].frames.len(), 1);
        assert!(s[0].frames[0].body.iter().all(|j| j.is_some()));
        assert_eq!(s[0].frames[0].body[3], Some(Point2::new(30.0, 5.0)));
    }

    #[test]
    fn zero_confidence_joint_is_missing() {
        let s = parse_keypoint_stream(&line("a", 0, 0.0)).unwrap();
        assert!(s[0].frames[0].body[4].is_none());
        assert_eq!(s[0].frames[0].body.iter().filter(|j| j.is_none()).count(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n{{not json\n", line("a", 0, 1.0));
        match parse_keypoint_stream(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_point_count_is_parse_error() {
        let text = r#"{"src":"a","k":0,"fps":30,"body":[null],"lh":[],"rh":[]}"#;
        assert!(matches!(parse_keypoint_stream(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_monotonic_frame_index_is_sequence_error() {
        let text = format!("{}\n{}\n", line("a", 3, 1.0), line("a", 3, 1.0));
        assert!(matches!(parse_keypoint_stream(&text), Err(Error::Sequence { .. })));
    }

    #[test]
    fn mixed_fps_rejected() {
        let f0 = KeypointFrame::empty(0, 30.0);
        let f1 = KeypointFrame::empty(1, 25.0);
        assert!(VideoSample::new("x", None, vec![f0, f1]).is_err());
        assert!(VideoSample::new("x", None, vec![]).is_err());
    }

    #[test]
    fn missing_points_survive_round_trip() {
        let mut f = KeypointFrame::empty(7, 12.5);
        f.body[0] = Some(Point2::new(1.25, -3.5));
        f.right_hand[20] = Some(Point2::new(0.1, 0.2));
        let s = VideoSample::new("v", Some(3), vec![f]).unwrap();
        let mut buf = Vec::new();
        write_keypoint_stream_to(&mut buf, std::slice::from_ref(&s)).unwrap();
        let back = parse_keypoint_stream(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, vec![s]);
    }
}
