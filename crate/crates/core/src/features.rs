//! Augmented pose vectors built from 2D joints.
//!
//! Body layout (97 values):
//!
//! | range   | content                                                         |
//! |---------|-----------------------------------------------------------------|
//! | 0..42   | (x, y) of the 21 non-anatomical pair vectors, lexicographic     |
//! | 42..63  | lengths of those 21 vectors                                     |
//! | 63..69  | 6 angles at anatomical triplets ([`BODY_TRIPLETS`])             |
//! | 69..97  | angle of each of the 28 pair vectors against the best-fit line  |
//!
//! Hand layout (54 values) over the 6-point chain
//! shoulder, elbow, wrist, palm base, middle MCP, middle tip:
//!
//! | range   | content                                                 |
//! |---------|---------------------------------------------------------|
//! | 0..30   | (x, y) of the 15 pair vectors, lexicographic            |
//! | 30..45  | lengths of those 15 vectors                             |
//! | 45..50  | angle of each chain edge against the best-fit line      |
//! | 50..54  | 4 angles between adjacent chain edges                   |
//!
//! Pair vectors point from the lower to the higher index. Angles against the
//! fitted line are folded into [-pi/2, pi/2) since the line has no direction.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::model::{joint, KeypointFrame, Point2, Side, Slot, BODY_JOINTS};

pub const BODY_POSE_DIM: usize = 97;
pub const HAND_POSE_DIM: usize = 54;
pub const MOTION_DIM: usize = 2 * BODY_JOINTS;
pub const DYNAMIC_POSE_DIM: usize = BODY_POSE_DIM + 2 * MOTION_DIM;
pub const HAND_POINTS: usize = 6;

const _: () = assert!(DYNAMIC_POSE_DIM == 129);

/// The seven anatomically connected joint pairs.
pub const ANATOMICAL_EDGES: [(usize, usize); 7] = [
    (joint::NECK, joint::NOSE),
    (joint::NECK, joint::R_SHOULDER),
    (joint::R_SHOULDER, joint::R_ELBOW),
    (joint::R_ELBOW, joint::R_WRIST),
    (joint::NECK, joint::L_SHOULDER),
    (joint::L_SHOULDER, joint::L_ELBOW),
    (joint::L_ELBOW, joint::L_WRIST),
];

/// (a, vertex, b): angle at `vertex` from edge vertex->a to edge vertex->b.
pub const BODY_TRIPLETS: [(usize, usize, usize); 6] = [
    (joint::NOSE, joint::NECK, joint::R_SHOULDER),
    (joint::NOSE, joint::NECK, joint::L_SHOULDER),
    (joint::NECK, joint::R_SHOULDER, joint::R_ELBOW),
    (joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST),
    (joint::NECK, joint::L_SHOULDER, joint::L_ELBOW),
    (joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST),
];

/// Hand keypoint indices (within the 21-point hand) used for the hand vector.
pub const HAND_KEYPOINT_IDS: [usize; 3] = [0, 9, 12];

pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

pub fn is_anatomical(pair: (usize, usize)) -> bool {
    ANATOMICAL_EDGES.contains(&pair)
}

/// The 21 body pairs that are not anatomical edges, lexicographic.
pub fn non_anatomical_pairs() -> Vec<(usize, usize)> {
    all_pairs(BODY_JOINTS)
        .into_iter()
        .filter(|&p| !is_anatomical(p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestFitLine {
    /// Direction angle in [-pi/2, pi/2].
    pub angle: f64,
    pub centroid: Point2,
}

/// Total-least-squares line through the present points.
pub fn best_fit_line(points: &[Slot]) -> Result<BestFitLine> {
    let present: Vec<Point2> = points.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Err(Error::Degenerate(format!(
            "best-fit line needs at least 2 points, got {}",
            present.len()
        )));
    }
    let n = present.len() as f64;
    let cx = present.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = present.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in &present {
        let (dx, dy) = (p.x - cx, p.y - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    // principal axis of the scatter matrix
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(BestFitLine {
        angle,
        centroid: Point2::new(cx, cy),
    })
}

/// Signed angle from `u` to `v` in [-pi, pi].
pub fn signed_angle(u: Point2, v: Point2) -> f64 {
    (u.x * v.y - u.y * v.x).atan2(u.x * v.x + u.y * v.y)
}

/// Angle of `v` against an undirected line, folded into [-pi/2, pi/2).
pub fn angle_to_line(v: Point2, line_angle: f64) -> f64 {
    let d = Point2::new(line_angle.cos(), line_angle.sin());
    let mut a = signed_angle(d, v);
    if a >= FRAC_PI_2 {
        a -= PI;
    } else if a < -FRAC_PI_2 {
        a += PI;
    }
    a
}

fn pair_vector(pts: &[Slot], (i, j): (usize, usize)) -> Option<Point2> {
    Some(pts[j]?.sub(pts[i]?))
}

fn triplet_angle(pts: &[Slot], (a, v, b): (usize, usize, usize)) -> Option<f64> {
    let vertex = pts[v]?;
    Some(signed_angle(pts[a]?.sub(vertex), pts[b]?.sub(vertex)))
}

/// Fixed-layout feature vector with a per-slot validity mask. Slots that
/// depend on a missing joint hold zero and are marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseVector<const N: usize> {
    pub values: [f64; N],
    pub mask: [bool; N],
}

pub type AugmentedPose = PoseVector<BODY_POSE_DIM>;
pub type HandAugmentedPose = PoseVector<HAND_POSE_DIM>;

impl<const N: usize> PoseVector<N> {
    pub const DIM: usize = N;

    fn zeros() -> Self {
        PoseVector {
            values: [0.0; N],
            mask: [false; N],
        }
    }

    fn set(&mut self, i: usize, v: Option<f64>) {
        if let Some(v) = v {
            self.values[i] = v;
            self.mask[i] = true;
        }
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

/// Builds the 97-dim body vector from the 8 upper-body joints.
pub fn augment_pose(joints: &[Slot; BODY_JOINTS]) -> Result<AugmentedPose> {
    if joints.iter().all(|j| j.is_none()) {
        return Err(Error::Degenerate("all body joints missing".into()));
    }
    let mut out = AugmentedPose::zeros();
    let extra = non_anatomical_pairs();
    debug_assert_eq!(extra.len(), 21);
    for (n, &pair) in extra.iter().enumerate() {
        let v = pair_vector(joints, pair);
        out.set(2 * n, v.map(|v| v.x));
        out.set(2 * n + 1, v.map(|v| v.y));
        out.set(42 + n, v.map(Point2::norm));
    }
    for (n, &t) in BODY_TRIPLETS.iter().enumerate() {
        out.set(63 + n, triplet_angle(joints, t));
    }
    if let Ok(line) = best_fit_line(joints) {
        for (n, pair) in all_pairs(BODY_JOINTS).into_iter().enumerate() {
            out.set(69 + n, pair_vector(joints, pair).map(|v| angle_to_line(v, line.angle)));
        }
    }
    Ok(out)
}

/// Picks the six hand-vector keypoints for one side from a frame.
pub fn hand_chain(frame: &KeypointFrame, side: Side) -> [Slot; HAND_POINTS] {
    let (s, e, w) = match side {
        Side::Left => (joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST),
        Side::Right => (joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST),
    };
    let hand = frame.hand(side);
    [
        frame.body[s],
        frame.body[e],
        frame.body[w],
        hand[HAND_KEYPOINT_IDS[0]],
        hand[HAND_KEYPOINT_IDS[1]],
        hand[HAND_KEYPOINT_IDS[2]],
    ]
}

/// Builds the 54-dim hand vector from the six chain keypoints.
pub fn augment_hand(points: &[Slot; HAND_POINTS]) -> Result<HandAugmentedPose> {
    if points.iter().all(|p| p.is_none()) {
        return Err(Error::Degenerate("all hand keypoints missing".into()));
    }
    let mut out = HandAugmentedPose::zeros();
    for (n, pair) in all_pairs(HAND_POINTS).into_iter().enumerate() {
        let v = pair_vector(points, pair);
        out.set(2 * n, v.map(|v| v.x));
        out.set(2 * n + 1, v.map(|v| v.y));
        out.set(30 + n, v.map(Point2::norm));
    }
    if let Ok(line) = best_fit_line(points) {
        for e in 0..HAND_POINTS - 1 {
            out.set(45 + e, pair_vector(points, (e, e + 1)).map(|v| angle_to_line(v, line.angle)));
        }
    }
    for t in 0..HAND_POINTS - 2 {
        out.set(50 + t, triplet_angle(points, (t, t + 1, t + 2)));
    }
    Ok(out)
}

/// Joints of one frame after position/scale normalization.
pub type JointSet = [Slot; BODY_JOINTS];

fn clamp_index(k: isize, n: usize) -> (usize, bool) {
    if k < 0 {
        (0, true)
    } else if k as usize >= n {
        (n - 1, true)
    } else {
        (k as usize, false)
    }
}

/// Velocities or accelerations of the 8 joints at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    /// (x, y) per joint, joint-major.
    pub values: [f64; MOTION_DIM],
    /// True when a stencil index fell outside the sequence and the edge frame
    /// was replicated.
    pub edge_replicated: bool,
}

fn stencil(seq: &[JointSet], k: usize, taps: &[(isize, f64)], scale: f64) -> Motion {
    let n = seq.len();
    let mut values = [0.0; MOTION_DIM];
    let mut edge_replicated = false;
    let idx: Vec<(usize, f64)> = taps
        .iter()
        .map(|&(off, c)| {
            let (i, clamped) = clamp_index(k as isize + off, n);
            edge_replicated |= clamped;
            (i, c)
        })
        .collect();
    for j in 0..BODY_JOINTS {
        let pts: Option<Vec<(Point2, f64)>> = idx.iter().map(|&(i, c)| seq[i][j].map(|p| (p, c))).collect();
        if let Some(pts) = pts {
            let (mut x, mut y) = (0.0, 0.0);
            for (p, c) in pts {
                x += c * p.x;
                y += c * p.y;
            }
            values[2 * j] = scale * x;
            values[2 * j + 1] = scale * y;
        }
    }
    Motion {
        values,
        edge_replicated,
    }
}

/// fps * (p[k+1] - p[k-1]); joints missing at any stencil frame give zero.
pub fn velocity(seq: &[JointSet], k: usize, fps: f64) -> Result<Motion> {
    check_index(seq, k)?;
    Ok(stencil(seq, k, &[(1, 1.0), (-1, -1.0)], fps))
}

/// fps^2 * (p[k+2] + p[k-2] - 2 p[k]).
pub fn acceleration(seq: &[JointSet], k: usize, fps: f64) -> Result<Motion> {
    check_index(seq, k)?;
    Ok(stencil(seq, k, &[(2, 1.0), (-2, 1.0), (0, -2.0)], fps * fps))
}

fn check_index(seq: &[JointSet], k: usize) -> Result<()> {
    if k >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "frame {k} outside sequence of {}",
            seq.len()
        )));
    }
    Ok(())
}

/// 129-dim vector: augmented pose, then 16 velocities, then 16 accelerations.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPose {
    pub values: [f64; DYNAMIC_POSE_DIM],
    pub pose_mask: [bool; BODY_POSE_DIM],
    pub edge_replicated: bool,
}

impl DynamicPose {
    pub const DIM: usize = DYNAMIC_POSE_DIM;
}

/// Dynamic pose of frame `k` of a normalized joint sequence.
pub fn dynamic_pose(seq: &[JointSet], k: usize, fps: f64) -> Result<DynamicPose> {
    let v = velocity(seq, k, fps)?;
    let a = acceleration(seq, k, fps)?;
    let pose = augment_pose(&seq[k])?;
    let mut values = [0.0; DYNAMIC_POSE_DIM];
    values[..BODY_POSE_DIM].copy_from_slice(&pose.values);
    values[BODY_POSE_DIM..BODY_POSE_DIM + MOTION_DIM].copy_from_slice(&v.values);
    values[BODY_POSE_DIM + MOTION_DIM..].copy_from_slice(&a.values);
    Ok(DynamicPose {
        values,
        pose_mask: pose.mask,
        edge_replicated: v.edge_replicated || a.edge_replicated,
    })
}
