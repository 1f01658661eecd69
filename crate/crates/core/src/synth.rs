//! Synthetic oracle: an articulated upper body with two hands, driven by
//! per-class joint-angle trajectories and projected through a pinhole camera.
//!
//! Body-frame axes follow the image: x to the right, y down, z away from the
//! camera. Depth labels are camera-frame Z divided by [`Z_REF`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::depth::{DepthDataset, DepthTarget};
use crate::error::{Error, Result};
use crate::features::{augment_hand, augment_pose, hand_chain};
use crate::model::{joint, KeypointFrame, Point2, Side, VideoSample, BODY_JOINTS, HAND_KEYPOINTS, POINTS_PER_FRAME};

/// Camera distance, in meters, that maps to depth label 1.0.
pub const Z_REF: f64 = 2.0;
pub const CLASS_NAMES: [&str; 8] = ["wave", "raise", "circle", "point", "clap", "swipe-left", "swipe-right", "idle"];
pub const DEFAULT_FPS: f64 = 30.0;
pub const MIN_FRAMES: usize = 20;
pub const MAX_FRAMES: usize = 60;

pub type Point3 = [f64; 3];

fn add3(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale3(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn unit(a: Point3) -> Point3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale3(a, 1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            focal: 1000.0,
            cx: 720.0,
            cy: 540.0,
            width: 1440.0,
            height: 1080.0,
        }
    }
}

impl CameraModel {
    pub fn project(&self, p: Point3) -> Point2 {
        Point2::new(self.focal * p[0] / p[2] + self.cx, self.focal * p[1] / p[2] + self.cy)
    }

    /// Inverse of [`CameraModel::project`] given the point's camera depth in meters.
    pub fn unproject(&self, q: Point2, z: f64) -> Point3 {
        [(q.x - self.cx) * z / self.focal, (q.y - self.cy) * z / self.focal, z]
    }

    pub fn contains(&self, q: Point2) -> bool {
        q.x >= 0.0 && q.y >= 0.0 && q.x < self.width && q.y < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandShape {
    Open,
    Fist,
    Point,
}

impl HandShape {
    /// Static class id served by the embedding head.
    pub fn static_class(self) -> usize {
        match self {
            HandShape::Open => 0,
            HandShape::Fist => 1,
            HandShape::Point => 2,
        }
    }

    /// Curl per finger: thumb, index, middle, ring, pinky.
    fn curls(self) -> [f64; 5] {
        match self {
            HandShape::Open => [0.0; 5],
            HandShape::Fist => [0.6, 1.0, 1.0, 1.0, 1.0],
            HandShape::Point => [0.7, 0.0, 1.0, 1.0, 1.0],
        }
    }
}

/// Arm pose as two limb directions, each given by an elevation `alpha`
/// (0 hangs down, pi/2 points sideways away from the body, pi points up) and
/// a forward lean `beta` toward the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    pub upper: (f64, f64),
    pub fore: (f64, f64),
}

/// Upper-body geometry in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyModel {
    pub shoulder_half_width: f64,
    pub shoulder_drop: f64,
    pub nose: Point3,
    pub upper_arm: f64,
    pub forearm: f64,
    /// Uniform scale applied to every body-frame coordinate.
    pub scale: f64,
}

impl Default for BodyModel {
    fn default() -> Self {
        BodyModel {
            shoulder_half_width: 0.19,
            shoulder_drop: 0.03,
            nose: [0.0, -0.22, -0.06],
            upper_arm: 0.29,
            forearm: 0.26,
            scale: 1.0,
        }
    }
}

const FINGER_BASES: [(f64, f64); 5] = [(0.025, 0.028), (0.09, 0.026), (0.095, 0.008), (0.09, -0.01), (0.082, -0.026)];
const FINGER_SEGMENTS: [[f64; 3]; 5] = [
    [0.035, 0.03, 0.025],
    [0.045, 0.025, 0.02],
    [0.05, 0.03, 0.022],
    [0.046, 0.028, 0.02],
    [0.035, 0.02, 0.018],
];

fn direction(alpha: f64, beta: f64, outward: f64) -> Point3 {
    [outward * alpha.sin() * beta.cos(), alpha.cos() * beta.cos(), -beta.sin()]
}

impl BodyModel {
    /// Limb length between `parent` and `child` in body-frame meters.
    pub fn limb_lengths(&self) -> [(usize, usize, f64); 4] {
        [
            (joint::R_SHOULDER, joint::R_ELBOW, self.upper_arm * self.scale),
            (joint::R_ELBOW, joint::R_WRIST, self.forearm * self.scale),
            (joint::L_SHOULDER, joint::L_ELBOW, self.upper_arm * self.scale),
            (joint::L_ELBOW, joint::L_WRIST, self.forearm * self.scale),
        ]
    }

    fn arm(&self, side: Side, pose: &ArmPose, shape: HandShape) -> (Point3, Point3, Point3, [Point3; HAND_KEYPOINTS]) {
        let out = match side {
            Side::Right => -1.0,
            Side::Left => 1.0,
        };
        let s = self.scale;
        let shoulder = [out * self.shoulder_half_width * s, self.shoulder_drop * s, 0.0];
        let u = direction(pose.upper.0, pose.upper.1, out);
        let f = direction(pose.fore.0, pose.fore.1, out);
        let elbow = add3(shoulder, scale3(u, self.upper_arm * s));
        let wrist = add3(elbow, scale3(f, self.forearm * s));
        // hand frame: a along the forearm, b lateral (thumb side), n palm normal
        let a = f;
        let helper = if a[2].abs() > 0.95 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let b = scale3(unit(cross(a, helper)), -out);
        let n = cross(a, b);
        let local = |along: f64, lateral: f64, normal: f64| add3(wrist, scale3(add3(add3(scale3(a, along), scale3(b, lateral)), scale3(n, normal)), s));
        let mut hand = [[0.0; 3]; HAND_KEYPOINTS];
        hand[0] = wrist;
        let curls = shape.curls();
        for finger in 0..5 {
            let (along, lateral) = FINGER_BASES[finger];
            let base_dir: (f64, f64) = if finger == 0 { (0.6, 0.8) } else { (1.0, 0.0) };
            let (mut pa, mut pl, mut pn) = (along, lateral, 0.0);
            hand[1 + 4 * finger] = local(pa, pl, pn);
            let mut bend = 0.0;
            for seg in 0..3 {
                bend += curls[finger] * std::f64::consts::FRAC_PI_2 * 0.75;
                let len = FINGER_SEGMENTS[finger][seg];
                pa += len * bend.cos() * base_dir.0;
                pl += len * bend.cos() * base_dir.1;
                pn += len * bend.sin();
                hand[2 + 4 * finger + seg] = local(pa, pl, pn);
            }
        }
        (shoulder, elbow, wrist, hand)
    }

    /// Body-frame positions of all 50 points, in [`KeypointFrame::point`] order.
    pub fn pose(&self, right: &ArmPose, left: &ArmPose, right_shape: HandShape, left_shape: HandShape) -> [Point3; POINTS_PER_FRAME] {
        let mut pts = [[0.0; 3]; POINTS_PER_FRAME];
        pts[joint::NECK] = [0.0; 3];
        pts[joint::NOSE] = scale3(self.nose, self.scale);
        let (rs, re, rw, rh) = self.arm(Side::Right, right, right_shape);
        let (ls, le, lw, lh) = self.arm(Side::Left, left, left_shape);
        pts[joint::R_SHOULDER] = rs;
        pts[joint::R_ELBOW] = re;
        pts[joint::R_WRIST] = rw;
        pts[joint::L_SHOULDER] = ls;
        pts[joint::L_ELBOW] = le;
        pts[joint::L_WRIST] = lw;
        pts[BODY_JOINTS..BODY_JOINTS + HAND_KEYPOINTS].copy_from_slice(&lh);
        pts[BODY_JOINTS + HAND_KEYPOINTS..].copy_from_slice(&rh);
        pts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Probability that a point is undetected in a frame.
    pub dropout: f64,
    /// Standard deviation of Gaussian pixel jitter.
    pub jitter: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            dropout: 0.05,
            jitter: 1.5,
        }
    }
}

impl NoiseParams {
    pub const NONE: NoiseParams = NoiseParams {
        dropout: 0.0,
        jitter: 0.0,
    };
}

/// Per-sample randomization drawn from the seed.
#[derive(Debug, Clone, Copy)]
struct Variation {
    frames: usize,
    amplitude: f64,
    phase: f64,
    warp: f64,
    rest: [f64; 4],
    distance: f64,
    offset: (f64, f64),
    drift: (f64, f64),
    scale: f64,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Arm poses and hand shapes of `class` at normalized time `s`.
fn class_pose(class: u32, s: f64, v: &Variation) -> (ArmPose, ArmPose, HandShape, HandShape) {
    use std::f64::consts::{PI, TAU};
    let rest = ArmPose {
        upper: (0.12 + v.rest[0], 0.05 + v.rest[1]),
        fore: (0.2 + v.rest[2], 0.35 + v.rest[3]),
    };
    let a = v.amplitude;
    let ph = v.phase;
    let open = HandShape::Open;
    match class {
        0 => (
            ArmPose {
                upper: (1.25, 0.15),
                fore: (2.9 + 0.45 * a * (2.0 * TAU * s + ph).sin(), 0.15),
            },
            rest,
            open,
            open,
        ),
        1 => {
            let e = smoothstep(1.6 * s);
            let top = (2.7 * a).min(PI - 0.1);
            (
                ArmPose {
                    upper: (lerp(rest.upper.0, top, e), 0.1),
                    fore: (lerp(rest.fore.0, top + 0.05, e), 0.1),
                },
                rest,
                open,
                open,
            )
        }
        2 => {
            let t = 1.5 * TAU * s + ph;
            (
                ArmPose {
                    upper: (0.75, 0.55),
                    fore: (1.5 + 0.55 * a * t.cos(), 0.6 + 0.5 * a * t.sin()),
                },
                rest,
                HandShape::Fist,
                open,
            )
        }
        3 => {
            let e = smoothstep(1.8 * s);
            (
                ArmPose {
                    upper: (lerp(rest.upper.0, 0.8, e), lerp(rest.upper.1, 1.15 * a.min(1.1), e)),
                    fore: (lerp(rest.fore.0, 0.85, e), lerp(rest.fore.1, 1.25 * a.min(1.1), e)),
                },
                rest,
                HandShape::Point,
                open,
            )
        }
        4 => {
            let close = 0.5 + 0.5 * (2.5 * TAU * s + ph).sin();
            let arm = ArmPose {
                upper: (0.15, 0.7),
                fore: (-0.35 - 0.6 * a * close, 0.35),
            };
            (arm, arm, open, open)
        }
        5 | 6 => {
            let e = smoothstep(s);
            let e = if class == 5 { 1.0 - e } else { e };
            (
                ArmPose {
                    upper: (0.6, 0.7),
                    fore: (lerp(1.4, 1.4 - 1.9 * a, e), 0.5),
                },
                rest,
                open,
                open,
            )
        }
        _ => {
            let sway = 0.05 * (TAU * s + ph).sin();
            let r = ArmPose {
                upper: (rest.upper.0 + sway, rest.upper.1),
                fore: (rest.fore.0 + sway, rest.fore.1),
            };
            (r, rest, open, open)
        }
    }
}

/// One rendered synthetic video with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample: VideoSample,
    /// Per frame: neck, left-hand and right-hand depth labels.
    pub depths: Vec<[f64; 3]>,
    /// Per frame: camera-frame positions of all 50 points, in meters.
    pub world: Vec<[Point3; POINTS_PER_FRAME]>,
    pub hand_shapes: Vec<(HandShape, HandShape)>,
}

impl SynthSample {
    /// Noise-free reprojection with every camera-frame depth multiplied by
    /// `factor`; lateral positions are kept, so all image offsets from the
    /// principal point shrink by exactly `1 / factor`.
    pub fn rerender_at_depth_scale(&self, camera: &CameraModel, factor: f64) -> SynthSample {
        let world: Vec<[Point3; POINTS_PER_FRAME]> = self
            .world
            .iter()
            .map(|pts| pts.map(|p| [p[0], p[1], p[2] * factor]))
            .collect();
        let frames = self
            .sample
            .frames
            .iter()
            .zip(&world)
            .map(|(f, pts)| {
                let mut out = KeypointFrame::empty(f.frame_index, f.fps);
                for (i, p) in pts.iter().enumerate() {
                    *out.point_mut(i) = Some(camera.project(*p));
                }
                out
            })
            .collect();
        SynthSample {
            sample: VideoSample {
                source_id: self.sample.source_id.clone(),
                label: self.sample.label,
                frames,
            },
            depths: self.depths.iter().map(|d| d.map(|v| v * factor)).collect(),
            world,
            hand_shapes: self.hand_shapes.clone(),
        }
    }
}

/// Renders one video of `class`. The same `(class, seed, noise)` always
/// yields the same output.
pub fn generate(class: u32, seed: u64, noise: NoiseParams) -> Result<SynthSample> {
    generate_with(class, seed, noise, &CameraModel::default(), None)
}

/// As [`generate`], optionally forcing the neck distance in meters.
pub fn generate_with(class: u32, seed: u64, noise: NoiseParams, camera: &CameraModel, distance: Option<f64>) -> Result<SynthSample> {
    if class as usize >= CLASS_NAMES.len() {
        return Err(Error::InvalidArgument(format!("unknown synthetic class {class}")));
    }
    if !(0.0..=1.0).contains(&noise.dropout) || !(noise.jitter >= 0.0 && noise.jitter.is_finite()) {
        return Err(Error::InvalidArgument("dropout must be in [0, 1] and jitter non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Variation {
        frames: rng.random_range(MIN_FRAMES..=MAX_FRAMES),
        amplitude: rng.random_range(0.85..1.15),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
        warp: rng.random_range(0.8..1.25),
        rest: std::array::from_fn(|_| rng.random_range(-0.08..0.08)),
        distance: rng.random_range(1.5..4.0),
        offset: (0.0, 0.0),
        drift: (rng.random_range(-0.05..0.05), rng.random_range(-0.02..0.02)),
        scale: rng.random_range(0.98..1.02),
    };
    v.offset = (rng.random_range(-0.3..0.3) * v.distance / Z_REF, rng.random_range(-0.15..0.0));
    if let Some(d) = distance {
        v.distance = d;
    }
    let body = BodyModel {
        scale: v.scale,
        ..BodyModel::default()
    };
    let jitter = Normal::new(0.0, noise.jitter.max(f64::MIN_POSITIVE)).expect("valid jitter");
    let n = v.frames;
    let mut frames = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    let mut world = Vec::with_capacity(n);
    let mut shapes = Vec::with_capacity(n);
    for k in 0..n {
        let s = (k as f64 / (n - 1) as f64).powf(v.warp);
        let (right, left, rs, ls) = class_pose(class, s, &v);
        let local = body.pose(&right, &left, rs, ls);
        let origin = [v.offset.0 + v.drift.0 * s, v.offset.1 + v.drift.1 * s, v.distance];
        let pts = local.map(|p| add3(origin, p));
        let mut frame = KeypointFrame::empty(k as u64, DEFAULT_FPS);
        for (i, p) in pts.iter().enumerate() {
            let mut q = camera.project(*p);
            if noise.jitter > 0.0 {
                q = Point2::new(q.x + jitter.sample(&mut rng), q.y + jitter.sample(&mut rng));
            }
            let dropped = noise.dropout > 0.0 && rng.random::<f64>() < noise.dropout;
            *frame.point_mut(i) = (!dropped && camera.contains(q)).then_some(q);
        }
        let hand_z = |range: std::ops::Range<usize>| pts[range].iter().map(|p| p[2]).sum::<f64>() / HAND_KEYPOINTS as f64;
        depths.push([
            pts[joint::NECK][2] / Z_REF,
            hand_z(BODY_JOINTS..BODY_JOINTS + HAND_KEYPOINTS) / Z_REF,
            hand_z(BODY_JOINTS + HAND_KEYPOINTS..POINTS_PER_FRAME) / Z_REF,
        ]);
        frames.push(frame);
        world.push(pts);
        shapes.push((ls, rs));
    }
    let source_id = format!("synth-{}-{seed:016x}", CLASS_NAMES[class as usize]);
    Ok(SynthSample {
        sample: VideoSample::new(source_id, Some(class), frames)?,
        depths,
        world,
        hand_shapes: shapes,
    })
}

fn sample_seed(seed: u64, class: u32, index: usize) -> u64 {
    let mut z = seed ^ ((class as u64) << 40) ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub class: u32,
    pub seed: u64,
}

/// Everything needed to regenerate a dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub classes: u32,
    pub per_class: usize,
    pub noise: NoiseParams,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// `per_class` samples of each of the first `classes` classes, class-major.
pub fn generate_dataset(per_class: usize, classes: u32, seed: u64, noise: NoiseParams) -> Result<(Vec<SynthSample>, Manifest)> {
    if classes as usize > CLASS_NAMES.len() || classes == 0 {
        return Err(Error::InvalidArgument(format!("classes must be in 1..={}", CLASS_NAMES.len())));
    }
    let mut samples = Vec::with_capacity(per_class * classes as usize);
    let mut entries = Vec::with_capacity(samples.capacity());
    for class in 0..classes {
        for i in 0..per_class {
            let s = generate(class, sample_seed(seed, class, i), noise)?;
            entries.push(ManifestEntry {
                source_id: s.sample.source_id.clone(),
                class,
                seed: sample_seed(seed, class, i),
            });
            samples.push(s);
        }
    }
    Ok((
        samples,
        Manifest {
            seed,
            classes,
            per_class,
            noise,
            class_names: CLASS_NAMES[..classes as usize].iter().map(|s| s.to_string()).collect(),
            entries,
        },
    ))
}

pub fn regenerate(manifest: &Manifest) -> Result<Vec<SynthSample>> {
    manifest
        .entries
        .iter()
        .map(|e| generate(e.class, e.seed, manifest.noise))
        .collect()
}

/// Depth-regression pairs for `target`: the augmented vector of one random
/// frame of a random-class video, paired with its ground-truth depth.
/// Frames whose vector cannot be built are skipped.
pub fn generate_depth_pairs(target: DepthTarget, n: usize, seed: u64, noise: NoiseParams) -> Result<DepthDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DepthDataset::new(target);
    while data.len() < n {
        let class = rng.random_range(0..CLASS_NAMES.len() as u32);
        let s = generate(class, rng.random(), noise)?;
        let k = rng.random_range(0..s.sample.frames.len());
        let f = &s.sample.frames[k];
        let (x, d) = match target {
            DepthTarget::Neck => (augment_pose(&f.body).map(|p| p.values.to_vec()), s.depths[k][0]),
            DepthTarget::Left => (augment_hand(&hand_chain(f, Side::Left)).map(|p| p.values.to_vec()), s.depths[k][1]),
            DepthTarget::Right => (augment_hand(&hand_chain(f, Side::Right)).map(|p| p.values.to_vec()), s.depths[k][2]),
        };
        if let Ok(x) = x {
            data.push(x, d);
        }
    }
    Ok(data)
}
