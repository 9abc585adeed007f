//! Articulated stick figures rendered from several orthographic cameras.
//!
//! World axes: y up, the figure faces +z at zero facing angle. A camera at
//! azimuth `a` (degrees) sees `x_cam = x cos a - z sin a` and `y_cam = y`;
//! `x sin a + z cos a` grows toward the camera and orders the painter.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, Modality, MultiViewDataset, Scene};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;

pub const JOINTS: usize = 15;

/// Joint indices of the built-in figure.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const NECK: usize = 1;
    pub const HEAD: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const L_WRIST: usize = 5;
    pub const R_SHOULDER: usize = 6;
    pub const R_ELBOW: usize = 7;
    pub const R_WRIST: usize = 8;
    pub const L_HIP: usize = 9;
    pub const L_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_HIP: usize = 12;
    pub const R_KNEE: usize = 13;
    pub const R_ANKLE: usize = 14;
}

/// Bones as `(parent, child, part)` where `part` indexes [`PART_COLORS`].
pub const BONES: [(usize, usize, usize); 14] = [
    (0, 1, 0),
    (1, 2, 1),
    (1, 3, 0),
    (3, 4, 2),
    (4, 5, 3),
    (1, 6, 0),
    (6, 7, 4),
    (7, 8, 5),
    (0, 9, 0),
    (9, 10, 6),
    (10, 11, 7),
    (0, 12, 0),
    (12, 13, 8),
    (13, 14, 9),
];

/// Body-part colors in `[0, 1]`: torso, head, then upper/lower segments of
/// left arm, right arm, left leg, right leg.
pub const PART_COLORS: [[f64; 3]; 10] = [
    [0.85, 0.85, 0.85],
    [1.0, 0.85, 0.2],
    [1.0, 0.3, 0.2],
    [1.0, 0.65, 0.35],
    [0.2, 0.4, 1.0],
    [0.35, 0.85, 1.0],
    [0.2, 0.85, 0.3],
    [0.65, 1.0, 0.4],
    [0.85, 0.2, 0.85],
    [1.0, 0.55, 0.9],
];

/// Drawing radii in meters for the figure's primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Skeleton {
    pub bone_radius: f64,
    pub torso_radius: f64,
    pub joint_radius: f64,
    pub head_radius: f64,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self { bone_radius: 0.06, torso_radius: 0.1, joint_radius: 0.075, head_radius: 0.13 }
    }
}

impl Skeleton {
    pub fn joint_count(&self) -> usize {
        JOINTS
    }

    pub fn bones(&self) -> &'static [(usize, usize, usize)] {
        &BONES
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionClass {
    Wave,
    Squat,
    Walk,
    Lean,
}

impl MotionClass {
    pub const ALL: [MotionClass; 4] = [MotionClass::Wave, MotionClass::Squat, MotionClass::Walk, MotionClass::Lean];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Wave => "wave",
            MotionClass::Squat => "squat",
            MotionClass::Walk => "walk",
            MotionClass::Lean => "lean",
        }
    }
}

/// What each sequence's label means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Labeling {
    /// Label is the index of the motion in `motion_classes`.
    MotionClass,
    /// Every sequence performs one of `motion_classes` (cycling) and the
    /// label is an amplitude grade in `0..levels`.
    Graded { levels: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub skeleton: Skeleton,
    pub motion_classes: Vec<MotionClass>,
    pub labeling: Labeling,
    pub azimuths_deg: Vec<f64>,
    pub resolution: usize,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            skeleton: Skeleton::default(),
            motion_classes: MotionClass::ALL.to_vec(),
            labeling: Labeling::MotionClass,
            azimuths_deg: vec![0.0, 90.0],
            resolution: 64,
            subjects: 10,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.azimuths_deg.len() < 2 {
            return Err(Error::invalid("synthetic scenes need at least two camera azimuths"));
        }
        if self.azimuths_deg.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("camera azimuths must be finite"));
        }
        if self.resolution < 16 || self.resolution % 8 != 0 {
            return Err(Error::invalid(format!("resolution {} must be a multiple of 8, at least 16", self.resolution)));
        }
        if self.motion_classes.is_empty() {
            return Err(Error::invalid("at least one motion class is required"));
        }
        if self.subjects == 0 {
            return Err(Error::invalid("at least one subject is required"));
        }
        if let Labeling::Graded { levels } = self.labeling {
            if levels < 2 {
                return Err(Error::invalid("graded labeling needs at least two levels"));
            }
        }
        let s = &self.skeleton;
        if [s.bone_radius, s.torso_radius, s.joint_radius, s.head_radius].iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("skeleton radii must be positive"));
        }
        Ok(())
    }

    /// Image pixels per world meter.
    pub fn pixels_per_meter(&self) -> f64 {
        self.resolution as f64 / 2.4
    }
}

/// Body proportions shared by every sequence of one subject.
#[derive(Clone, Debug)]
struct Body {
    scale: f64,
    torso: f64,
    neck: f64,
    shoulder_half: f64,
    hip_half: f64,
    upper_arm: f64,
    forearm: f64,
    thigh: f64,
    shin: f64,
}

impl Body {
    fn sample(seed: u64, subject: usize) -> Self {
        let mut g = rng::stream_at(seed, "subject", subject as u64);
        let scale = g.random_range(0.9..1.1);
        let mut j = |base: f64| base * scale * g.random_range(0.92..1.08);
        Body {
            torso: j(0.5),
            neck: j(0.12),
            shoulder_half: j(0.19),
            hip_half: j(0.11),
            upper_arm: j(0.3),
            forearm: j(0.27),
            thigh: j(0.45),
            shin: j(0.44),
            scale,
        }
    }
}

/// Joint angles of one frame, radians.
#[derive(Clone, Debug, Default)]
struct Angles {
    torso_pitch: f64,
    torso_roll: f64,
    /// (flexion, abduction, elbow) for left then right arm.
    arms: [(f64, f64, f64); 2],
    /// Elbow bend hint directions for left then right arm.
    elbow_hint: [Vector3<f64>; 2],
    /// (hip flexion, knee flexion) for left then right leg.
    legs: [(f64, f64); 2],
}

fn motion_angles(class: MotionClass, amplitude: f64, phase: f64) -> Angles {
    let forward = Vector3::new(0.0, 0.0, 1.0);
    let mut a = Angles { elbow_hint: [forward, forward], ..Default::default() };
    let s = phase.sin();
    match class {
        MotionClass::Wave => {
            a.arms[0] = (0.0, 0.15, 0.2);
            // Right arm raised out to the side, forearm swinging across.
            a.arms[1] = (0.2, 2.5, 0.3 + 0.8 * amplitude * s);
            a.elbow_hint[1] = Vector3::new(1.0, 0.0, 0.0);
        }
        MotionClass::Squat => {
            let d = amplitude * (1.0 - phase.cos()) / 2.0;
            a.legs = [(1.5 * d, 2.1 * d); 2];
            a.torso_pitch = 0.6 * d;
            a.arms = [(1.5 * d, 0.1, 0.1); 2];
        }
        MotionClass::Walk => {
            let l = amplitude * s.max(0.0);
            let r = amplitude * (-s).max(0.0);
            a.legs = [(1.1 * l, 1.8 * l), (1.1 * r, 1.8 * r)];
            a.arms = [(-0.6 * amplitude * s, 0.1, 0.5), (0.6 * amplitude * s, 0.1, 0.5)];
        }
        MotionClass::Lean => {
            a.torso_roll = 0.5 * amplitude * s;
            a.arms = [(0.0, 0.7, 0.2); 2];
        }
    }
    a
}

/// Sets `dir` perpendicular to `d` from `hint`, falling back to +y.
fn bend(d: Vector3<f64>, angle: f64, hint: Vector3<f64>) -> Vector3<f64> {
    let mut b = hint - d * hint.dot(&d);
    if b.norm() < 1e-6 {
        let up = Vector3::new(0.0, 1.0, 0.0);
        b = up - d * up.dot(&d);
    }
    (d * angle.cos() + b.normalize() * angle.sin()).normalize()
}

/// Forward kinematics in the body frame (feet on the ground at y = 0).
fn pose_joints(body: &Body, a: &Angles) -> [Vector3<f64>; JOINTS] {
    use joint::*;
    let mut j = [Vector3::zeros(); JOINTS];
    // Leg geometry fixes the pelvis height: the lower foot touches the ground.
    let leg_dirs: Vec<(Vector3<f64>, Vector3<f64>)> = a
        .legs
        .iter()
        .map(|&(hf, kf)| {
            (Vector3::new(0.0, -hf.cos(), hf.sin()), Vector3::new(0.0, -(hf - kf).cos(), (hf - kf).sin()))
        })
        .collect();
    let drop = leg_dirs
        .iter()
        .map(|(t, s)| -(body.thigh * t.y + body.shin * s.y))
        .fold(0.0, f64::max);
    j[PELVIS] = Vector3::new(0.0, drop + 0.05 * body.scale, 0.0);

    let up = Vector3::new(
        a.torso_roll.sin() * a.torso_pitch.cos(),
        a.torso_roll.cos() * a.torso_pitch.cos(),
        a.torso_pitch.sin(),
    )
    .normalize();
    let lateral = Vector3::new(a.torso_roll.cos(), -a.torso_roll.sin(), 0.0);
    j[NECK] = j[PELVIS] + up * body.torso;
    j[HEAD] = j[NECK] + up * body.neck * 2.0;

    for (side, (sh, el, wr), sign) in [(0, (L_SHOULDER, L_ELBOW, L_WRIST), 1.0), (1, (R_SHOULDER, R_ELBOW, R_WRIST), -1.0)] {
        let (flex, abd, elbow) = a.arms[side];
        j[sh] = j[NECK] + lateral * (sign * body.shoulder_half);
        let d = Vector3::new(sign * abd.sin(), -abd.cos() * flex.cos(), abd.cos() * flex.sin());
        j[el] = j[sh] + d * body.upper_arm;
        j[wr] = j[el] + bend(d, elbow, a.elbow_hint[side]) * body.forearm;
    }
    let hips = [(L_HIP, L_KNEE, L_ANKLE, 1.0), (R_HIP, R_KNEE, R_ANKLE, -1.0)];
    for (side, &(hip, knee, ankle, sign)) in hips.iter().enumerate() {
        j[hip] = j[PELVIS] + Vector3::new(sign * body.hip_half, 0.0, 0.0);
        let (t, s) = leg_dirs[side];
        j[knee] = j[hip] + t * body.thigh;
        j[ankle] = j[knee] + s * body.shin;
    }
    j
}

/// Everything random about one sequence.
#[derive(Clone, Debug)]
pub struct ScenePlan {
    pub index: usize,
    pub motion: MotionClass,
    pub label: usize,
    pub subject: usize,
    pub amplitude: f64,
    cycles: f64,
    phase: f64,
    facing: f64,
    offset: Vector3<f64>,
}

/// Draws the plan of sequence `index`; independent of the camera list.
pub fn plan_scene(spec: &SyntheticSceneSpec, index: usize, frames: usize) -> ScenePlan {
    let classes = spec.motion_classes.len();
    let (motion_idx, label, subject, grade) = match spec.labeling {
        Labeling::MotionClass => {
            let c = index % classes;
            (c, c, (index / classes) % spec.subjects, None)
        }
        Labeling::Graded { levels } => {
            let g = index % levels;
            let rest = index / levels;
            (rest % classes, g, rest % spec.subjects, Some((g, levels)))
        }
    };
    let mut g = rng::stream_at(spec.seed, "scene", index as u64);
    let amplitude = match grade {
        None => g.random_range(0.7..1.0),
        Some((level, levels)) => (level + 1) as f64 / levels as f64 * g.random_range(0.95..1.05),
    };
    let per_clip = g.random_range(1.0..1.5);
    ScenePlan {
        index,
        motion: spec.motion_classes[motion_idx],
        label,
        subject,
        amplitude,
        cycles: per_clip * (frames.max(1) as f64 / 16.0),
        phase: g.random_range(0.0..2.0 * PI),
        facing: g.random_range(-0.35..0.35),
        offset: Vector3::new(g.random_range(-0.1..0.1), 0.0, g.random_range(-0.1..0.1)),
    }
}

/// World-space joints of every frame of a planned sequence.
pub fn scene_joints(spec: &SyntheticSceneSpec, plan: &ScenePlan, frames: usize) -> Vec<[Vector3<f64>; JOINTS]> {
    let body = Body::sample(spec.seed, plan.subject);
    let (s, c) = plan.facing.sin_cos();
    (0..frames)
        .map(|f| {
            let t = f as f64 / frames.max(1) as f64;
            let angles = motion_angles(plan.motion, plan.amplitude, 2.0 * PI * plan.cycles * t + plan.phase);
            pose_joints(&body, &angles).map(|p| Vector3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z) + plan.offset)
        })
        .collect()
}

/// Orthographic camera coordinates `(x_cam, y_cam, toward_camera)`.
pub fn project(p: &Vector3<f64>, azimuth_deg: f64) -> (f64, f64, f64) {
    let (s, c) = azimuth_deg.to_radians().sin_cos();
    (c * p.x - s * p.z, p.y, s * p.x + c * p.z)
}

/// Pixel coordinates (column, row) of a camera-space point.
pub fn to_pixels(spec: &SyntheticSceneSpec, x_cam: f64, y_cam: f64) -> (f64, f64) {
    let r = spec.resolution as f64;
    let ppm = spec.pixels_per_meter();
    (r / 2.0 + ppm * x_cam, r / 2.0 - ppm * (y_cam - 1.0))
}

enum Shape {
    Disk { c: (f64, f64) },
    Capsule { a: (f64, f64), b: (f64, f64) },
}

struct Primitive {
    shape: Shape,
    radius: f64,
    depth: f64,
    color: [f64; 3],
}

fn distance(shape: &Shape, p: (f64, f64)) -> f64 {
    match *shape {
        Shape::Disk { c } => ((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt(),
        Shape::Capsule { a, b } => {
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
        }
    }
}

/// Renders one frame; `pixel_offset` translates the whole figure in the image.
pub fn render_view(
    spec: &SyntheticSceneSpec,
    joints: &[Vector3<f64>; JOINTS],
    azimuth_deg: f64,
    pixel_offset: (f64, f64),
) -> Image {
    let r = spec.resolution;
    let ppm = spec.pixels_per_meter();
    let sk = &spec.skeleton;
    let cam: Vec<((f64, f64), f64)> = joints
        .iter()
        .map(|p| {
            let (x, y, d) = project(p, azimuth_deg);
            let (u, v) = to_pixels(spec, x, y);
            ((u + pixel_offset.0, v + pixel_offset.1), d)
        })
        .collect();
    let mut prims = Vec::with_capacity(2 * JOINTS);
    for &(a, b, part) in &BONES {
        let radius = if part == 0 { sk.torso_radius } else { sk.bone_radius };
        prims.push(Primitive {
            shape: Shape::Capsule { a: cam[a].0, b: cam[b].0 },
            radius: radius * ppm,
            depth: (cam[a].1 + cam[b].1) / 2.0,
            color: PART_COLORS[part],
        });
        let (radius, depth) = if part == 1 { (sk.head_radius, cam[b].1 + 1e-3) } else { (sk.joint_radius, cam[b].1) };
        prims.push(Primitive { shape: Shape::Disk { c: cam[b].0 }, radius: radius * ppm, depth, color: PART_COLORS[part] });
    }
    prims.push(Primitive {
        shape: Shape::Disk { c: cam[0].0 },
        radius: sk.torso_radius * ppm,
        depth: cam[0].1,
        color: PART_COLORS[0],
    });
    prims.sort_by(|a, b| a.depth.total_cmp(&b.depth));

    let plane = r * r;
    let mut rgb = vec![0.0f64; 3 * plane];
    for prim in &prims {
        let (lo, hi) = match prim.shape {
            Shape::Disk { c } => (c, c),
            Shape::Capsule { a, b } => ((a.0.min(b.0), a.1.min(b.1)), (a.0.max(b.0), a.1.max(b.1))),
        };
        let pad = prim.radius + 1.0;
        let x0 = (lo.0 - pad).floor().max(0.0) as usize;
        let y0 = (lo.1 - pad).floor().max(0.0) as usize;
        let x1 = ((hi.0 + pad).ceil().max(0.0) as usize).min(r);
        let y1 = ((hi.1 + pad).ceil().max(0.0) as usize).min(r);
        for y in y0..y1 {
            for x in x0..x1 {
                let d = distance(&prim.shape, (x as f64 + 0.5, y as f64 + 0.5));
                let cover = (prim.radius - d + 0.5).clamp(0.0, 1.0);
                if cover > 0.0 {
                    for c in 0..3 {
                        let px = &mut rgb[c * plane + y * r + x];
                        *px = *px * (1.0 - cover) + prim.color[c] * cover;
                    }
                }
            }
        }
    }
    let data = rgb.iter().map(|&v| (2.0 * v - 1.0) as f32).collect();
    Image::new(r, r, data).expect("rendered values lie in [-1, 1]").quantized()
}

pub fn view_name(azimuth_deg: f64) -> String {
    format!("az{:03}", azimuth_deg.round() as i64)
}

/// Renders `n_sequences` scenes of `frames_per_sequence` frames from every
/// configured camera.
pub fn generate_synthetic(
    spec: &SyntheticSceneSpec,
    n_sequences: usize,
    frames_per_sequence: usize,
) -> Result<MultiViewDataset> {
    spec.validate()?;
    if n_sequences == 0 || frames_per_sequence == 0 {
        return Err(Error::invalid("need at least one sequence and one frame"));
    }
    let mut scenes = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let plan = plan_scene(spec, i, frames_per_sequence);
        let joints = scene_joints(spec, &plan, frames_per_sequence);
        let views = spec
            .azimuths_deg
            .iter()
            .map(|&az| {
                joints
                    .iter()
                    .map(|j| Frame::Memory(Arc::new(render_view(spec, j, az, (0.0, 0.0)))))
                    .collect()
            })
            .collect();
        scenes.push(Scene {
            scene_id: format!("s{i:04}"),
            subject_id: format!("p{:03}", plan.subject),
            label: Some(plan.label),
            action: Some(plan.motion.name().to_string()),
            views,
        });
    }
    MultiViewDataset::new(
        scenes,
        spec.resolution,
        Modality::Synthetic,
        spec.azimuths_deg.iter().map(|&a| view_name(a)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_of_perpendicular_cameras() {
        let spec = SyntheticSceneSpec::default();
        let plan = plan_scene(&spec, 3, 4);
        for frame in scene_joints(&spec, &plan, 4) {
            for p in frame {
                let (x0, _, _) = project(&p, 0.0);
                let (x90, _, _) = project(&p, 90.0);
                assert_eq!(x0, p.x);
                assert!((x90 + p.z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn feet_stay_on_the_ground() {
        let spec = SyntheticSceneSpec::default();
        for i in 0..8 {
            let plan = plan_scene(&spec, i, 16);
            for f in scene_joints(&spec, &plan, 16) {
                let low = f[joint::L_ANKLE].y.min(f[joint::R_ANKLE].y);
                assert!(low.abs() < 0.06, "lowest ankle at {low}");
            }
        }
    }

    #[test]
    fn rendering_is_not_blank_and_fits() {
        let spec = SyntheticSceneSpec::default();
        let plan = plan_scene(&spec, 0, 1);
        let j = &scene_joints(&spec, &plan, 1)[0];
        let im = render_view(&spec, j, 0.0, (0.0, 0.0));
        let lit = im.data().iter().filter(|&&v| v > -1.0).count();
        assert!(lit > 100, "only {lit} lit values");
    }

    #[test]
    fn labels_are_balanced() {
        let spec = SyntheticSceneSpec::default();
        let mut counts = [0; 4];
        for i in 0..40 {
            counts[plan_scene(&spec, i, 16).label] += 1;
        }
        assert_eq!(counts, [10; 4]);
    }

    #[test]
    fn rejects_single_camera() {
        let spec = SyntheticSceneSpec { azimuths_deg: vec![0.0], ..Default::default() };
        assert!(generate_synthetic(&spec, 1, 1).is_err());
    }
}
