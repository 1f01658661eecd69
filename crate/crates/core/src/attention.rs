//! Pose-driven hard spatial attention: skeleton position/scale normalization
//! and oriented hand boxes sized from hand depth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::JointSet;
use crate::model::{joint, Point2, Side, Slot, BODY_JOINTS};

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSkeleton {
    pub joints: JointSet,
    pub depth: f64,
    pub mask: [bool; BODY_JOINTS],
}

/// How neck-relative offsets are combined with the neck depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// `(p - p_neck) / d`.
    #[default]
    Divide,
    /// `(p - p_neck) * d`; under a pinhole camera image offsets shrink as
    /// `1 / d`, so this variant is the one that cancels subject distance.
    Multiply,
}

/// Shifts joints so the Neck is the origin and divides by the neck depth.
pub fn normalize_skeleton(joints: &JointSet, depth: f64) -> Result<NormalizedSkeleton> {
    normalize_skeleton_with(joints, depth, ScaleMode::Divide)
}

pub fn normalize_skeleton_with(joints: &JointSet, depth: f64, mode: ScaleMode) -> Result<NormalizedSkeleton> {
    let neck = joints[joint::NECK].ok_or(Error::MissingRoot)?;
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let mut out = [None; BODY_JOINTS];
    let mut mask = [false; BODY_JOINTS];
    for (i, j) in joints.iter().enumerate() {
        if let Some(p) = j {
            out[i] = Some(match mode {
                ScaleMode::Divide => Point2::new((p.x - neck.x) / depth, (p.y - neck.y) / depth),
                ScaleMode::Multiply => Point2::new((p.x - neck.x) * depth, (p.y - neck.y) * depth),
            });
            mask[i] = true;
        }
    }
    Ok(NormalizedSkeleton {
        joints: out,
        depth,
        mask,
    })
}

/// Mean of the detected hand keypoints; `None` when the hand is not detected.
pub fn hand_center(points: &[Slot]) -> Option<Point2> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for p in points.iter().flatten() {
        sx += p.x;
        sy += p.y;
        n += 1;
    }
    (n > 0).then(|| Point2::new(sx / n as f64, sy / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxParams {
    /// Box side in pixels at unit depth.
    pub kappa: f64,
    pub min_side: f64,
    pub max_side: f64,
}

impl Default for BoxParams {
    fn default() -> Self {
        BoxParams {
            kappa: 128.0,
            min_side: 16.0,
            max_side: 512.0,
        }
    }
}

impl BoxParams {
    /// Side before clamping.
    pub fn raw_side(&self, depth: f64) -> f64 {
        self.kappa / depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandBox {
    pub center: Point2,
    pub side: f64,
    /// Forearm inclination against the image horizontal, radians.
    pub orientation: f64,
    pub hand: Side,
    /// Set when the forearm was not available and orientation defaulted to 0.
    pub orientation_missing: bool,
}

/// Oriented square around a hand; side inversely proportional to hand depth.
pub fn hand_box(
    center: Point2,
    depth: f64,
    forearm: Option<(Point2, Point2)>,
    hand: Side,
    params: &BoxParams,
) -> Result<HandBox> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let side = params.raw_side(depth).clamp(params.min_side, params.max_side);
    let (orientation, orientation_missing) = match forearm {
        Some((elbow, wrist)) => ((wrist.y - elbow.y).atan2(wrist.x - elbow.x), false),
        None => (0.0, true),
    };
    Ok(HandBox {
        center,
        side,
        orientation,
        hand,
        orientation_missing,
    })
}

/// Source geometry for cropping one hand image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    /// Rotated square clipped to the frame, counter-clockwise in (x, y).
    pub polygon: Vec<Point2>,
    /// Axis-aligned bounds (min, max) of the polygon.
    pub bounds: Option<(Point2, Point2)>,
}

impl CropSpec {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    pub fn is_empty(&self) -> bool {
        self.polygon.len() < 3
    }
}

/// Corners of the rotated square, before clipping.
pub fn box_corners(b: &HandBox) -> [Point2; 4] {
    let h = b.side / 2.0;
    let (s, c) = b.orientation.sin_cos();
    [(-h, -h), (h, -h), (h, h), (-h, h)].map(|(u, v)| Point2::new(b.center.x + c * u - s * v, b.center.y + s * u + c * v))
}

/// Clips the hand box to a `width` x `height` frame.
pub fn crop_spec(b: &HandBox, width: f64, height: f64) -> CropSpec {
    if !(b.side > 0.0) {
        return CropSpec {
            polygon: Vec::new(),
            bounds: None,
        };
    }
    let mut poly = box_corners(b).to_vec();
    // Sutherland-Hodgman against the four frame edges
    type Edge = (fn(Point2, f64) -> bool, fn(Point2, Point2, f64) -> Point2, f64);
    let edges: [Edge; 4] = [
        (|p, v| p.x >= v, |a, b, v| lerp_x(a, b, v), 0.0),
        (|p, v| p.x <= v, |a, b, v| lerp_x(a, b, v), width),
        (|p, v| p.y >= v, |a, b, v| lerp_y(a, b, v), 0.0),
        (|p, v| p.y <= v, |a, b, v| lerp_y(a, b, v), height),
    ];
    for (inside, cut, v) in edges {
        if poly.is_empty() {
            break;
        }
        let input = std::mem::take(&mut poly);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            match (inside(cur, v), inside(prev, v)) {
                (true, true) => poly.push(cur),
                (true, false) => {
                    poly.push(cut(prev, cur, v));
                    poly.push(cur);
                }
                (false, true) => poly.push(cut(prev, cur, v)),
                (false, false) => {}
            }
        }
    }
    if poly.len() < 3 || polygon_area(&poly) <= 0.0 {
        poly.clear();
    }
    let bounds = (!poly.is_empty()).then(|| {
        poly.iter().fold(
            (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
            |(lo, hi), p| (Point2::new(lo.x.min(p.x), lo.y.min(p.y)), Point2::new(hi.x.max(p.x), hi.y.max(p.y))),
        )
    });
    CropSpec { polygon: poly, bounds }
}

fn lerp_x(a: Point2, b: Point2, x: f64) -> Point2 {
    let t = (x - a.x) / (b.x - a.x);
    Point2::new(x, a.y + t * (b.y - a.y))
}

fn lerp_y(a: Point2, b: Point2, y: f64) -> Point2 {
    let t = (y - a.y) / (b.y - a.y);
    Point2::new(a.x + t * (b.x - a.x), y)
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum();
    twice.abs() / 2.0
}
