//! Keypoint sequences, the JSON dataset format, preprocessing, and the
//! synthetic motion generator.

use std::fs;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GastError, Result};
use crate::skeleton::{build_skeleton, SkeletonGraph};

pub const FORMAT_VERSION: u32 = 1;

/// 2D keypoints, `frames[t][j] = [x, y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose2DSequence {
    pub id: String,
    pub skeleton: String,
    pub fps: f64,
    pub frames: Vec<Vec<[f64; 2]>>,
    /// `[width, height]` in pixels.
    pub resolution: [f64; 2],
    pub normalized: bool,
}

/// Root-relative 3D joints in millimeters, `frames[t][j] = [x, y, z]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose3DSequence {
    pub id: String,
    pub skeleton: String,
    pub fps: f64,
    pub frames: Vec<Vec<[f64; 3]>>,
}

/// Anything laid out as frames of joints.
pub trait Sequence: Clone {
    type Point: Copy;
    fn frames(&self) -> &[Vec<Self::Point>];
    fn frames_mut(&mut self) -> &mut Vec<Vec<Self::Point>>;
    fn fps_mut(&mut self) -> &mut f64;

    fn len(&self) -> usize {
        self.frames().len()
    }

    fn is_empty(&self) -> bool {
        self.frames().is_empty()
    }

    fn n_joints(&self) -> usize {
        self.frames().first().map_or(0, Vec::len)
    }
}

impl Sequence for Pose2DSequence {
    type Point = [f64; 2];
    fn frames(&self) -> &[Vec<[f64; 2]>] {
        &self.frames
    }
    fn frames_mut(&mut self) -> &mut Vec<Vec<[f64; 2]>> {
        &mut self.frames
    }
    fn fps_mut(&mut self) -> &mut f64 {
        &mut self.fps
    }
}

impl Sequence for Pose3DSequence {
    type Point = [f64; 3];
    fn frames(&self) -> &[Vec<[f64; 3]>] {
        &self.frames
    }
    fn frames_mut(&mut self) -> &mut Vec<Vec<[f64; 3]>> {
        &mut self.frames
    }
    fn fps_mut(&mut self) -> &mut f64 {
        &mut self.fps
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Pose2DSequence,
    pub target: Option<Pose3DSequence>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub skeleton: String,
    pub fps: f64,
    pub resolution: [f64; 2],
    pub normalized: bool,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    skeleton: String,
    fps: f64,
    resolution: [f64; 2],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    normalized: bool,
    sequences: Vec<SequenceFile>,
}

#[derive(Serialize, Deserialize)]
struct SequenceFile {
    id: String,
    frames_2d: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames_3d: Option<Vec<Vec<[f64; 3]>>>,
}

fn check_frames<const D: usize>(id: &str, frames: &[Vec<[f64; D]>], n: usize) -> Result<()> {
    if frames.is_empty() {
        return Err(GastError::Data(format!("sequence {id:?} has no frames")));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.len() != n {
            return Err(GastError::Data(format!(
                "sequence {id:?} frame {t} has {} joints, skeleton expects {n}",
                f.len()
            )));
        }
        if f.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GastError::Data(format!("sequence {id:?} frame {t} has non-finite coordinates")));
        }
    }
    Ok(())
}

impl Dataset {
    pub fn from_json(text: &str) -> Result<Dataset> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.format_version != FORMAT_VERSION {
            return Err(GastError::Data(format!("unsupported dataset format_version {}", file.format_version)));
        }
        let n = build_skeleton(&file.skeleton)?.n_joints;
        let mut samples = Vec::with_capacity(file.sequences.len());
        for s in file.sequences {
            check_frames(&s.id, &s.frames_2d, n)?;
            if let Some(f3) = &s.frames_3d {
                check_frames(&s.id, f3, n)?;
                if f3.len() != s.frames_2d.len() {
                    return Err(GastError::Data(format!(
                        "sequence {:?}: {} 2D frames but {} 3D frames",
                        s.id,
                        s.frames_2d.len(),
                        f3.len()
                    )));
                }
            }
            let target = s.frames_3d.map(|frames| Pose3DSequence {
                id: s.id.clone(),
                skeleton: file.skeleton.clone(),
                fps: file.fps,
                frames,
            });
            let input = Pose2DSequence {
                id: s.id,
                skeleton: file.skeleton.clone(),
                fps: file.fps,
                frames: s.frames_2d,
                resolution: file.resolution,
                normalized: file.normalized,
            };
            samples.push(Sample { input, target });
        }
        Ok(Dataset {
            skeleton: file.skeleton,
            fps: file.fps,
            resolution: file.resolution,
            normalized: file.normalized,
            samples,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            format_version: FORMAT_VERSION,
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            resolution: self.resolution,
            normalized: self.normalized,
            sequences: self
                .samples
                .iter()
                .map(|s| SequenceFile {
                    id: s.input.id.clone(),
                    frames_2d: s.input.frames.clone(),
                    frames_3d: s.target.as_ref().map(|t| t.frames.clone()),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        Dataset::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn has_targets(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.target.is_some())
    }

    pub fn total_frames(&self) -> usize {
        self.samples.iter().map(|s| s.input.len()).sum()
    }

    /// Splits off the last `n` sequences.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let cut = self.samples.len().saturating_sub(n);
        let tail = self.samples.split_off(cut);
        let rest = Dataset { samples: tail, ..self.clone() };
        (self, rest)
    }
}

pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<(Pose2DSequence, Option<Pose3DSequence>)>> {
    Ok(Dataset::load(path)?.samples.into_iter().map(|s| (s.input, s.target)).collect())
}

/// `x' = 2x/w − 1`, `y' = 2y/w − h/w`.
pub fn normalize(seq: &Pose2DSequence) -> Result<Pose2DSequence> {
    if seq.normalized {
        return Ok(seq.clone());
    }
    let [w, h] = seq.resolution;
    if !(w > 0.0) {
        return Err(GastError::Data(format!("cannot normalize with width {w}")));
    }
    let mut out = seq.clone();
    for p in out.frames.iter_mut().flatten() {
        *p = [2.0 * p[0] / w - 1.0, 2.0 * p[1] / w - h / w];
    }
    out.normalized = true;
    Ok(out)
}

pub fn downsample<S: Sequence>(seq: &S, factor: usize) -> Result<S> {
    if factor < 1 {
        return Err(GastError::Config("downsample factor must be >= 1".into()));
    }
    let mut out = seq.clone();
    *out.frames_mut() = seq.frames().iter().step_by(factor).cloned().collect();
    *out.fps_mut() /= factor as f64;
    Ok(out)
}

/// Replicates boundary frames so a dilated pass emits one output per frame.
pub fn pad_for_receptive_field<S: Sequence>(seq: &S, rf: usize, causal: bool) -> Result<S> {
    if rf == 0 || (!causal && rf % 2 == 0) {
        return Err(GastError::Config(format!("receptive field {rf} must be odd")));
    }
    if seq.is_empty() {
        return Err(GastError::Data("cannot pad an empty sequence".into()));
    }
    let (lead, trail) = if causal { (rf - 1, 0) } else { ((rf - 1) / 2, (rf - 1) / 2) };
    let frames = seq.frames();
    let mut padded = Vec::with_capacity(frames.len() + lead + trail);
    padded.extend(std::iter::repeat(frames[0].clone()).take(lead));
    padded.extend(frames.iter().cloned());
    padded.extend(std::iter::repeat(frames[frames.len() - 1].clone()).take(trail));
    let mut out = seq.clone();
    *out.frames_mut() = padded;
    Ok(out)
}

pub(crate) fn permute<P: Copy>(frame: &[P], flip_map: &[usize]) -> Vec<P> {
    flip_map.iter().map(|&j| frame[j]).collect()
}

pub fn flip_2d(seq: &Pose2DSequence, flip_map: &[usize]) -> Pose2DSequence {
    let mut out = seq.clone();
    let w = seq.resolution[0];
    for f in out.frames.iter_mut() {
        let mut g = permute(f, flip_map);
        for p in g.iter_mut() {
            p[0] = if seq.normalized { -p[0] } else { w - p[0] };
        }
        *f = g;
    }
    out
}

pub fn flip_3d(seq: &Pose3DSequence, flip_map: &[usize]) -> Pose3DSequence {
    let mut out = seq.clone();
    for f in out.frames.iter_mut() {
        let mut g = permute(f, flip_map);
        for p in g.iter_mut() {
            p[0] = -p[0];
        }
        *f = g;
    }
    out
}

/// Mirrors the image horizontally and the 3D target along x, swapping left
/// and right joints.
pub fn horizontal_flip(
    input: &Pose2DSequence,
    target: Option<&Pose3DSequence>,
    flip_map: &[usize],
) -> (Pose2DSequence, Option<Pose3DSequence>) {
    (flip_2d(input, flip_map), target.map(|t| flip_3d(t, flip_map)))
}

/// Pinhole camera used by the synthetic generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub center: [f64; 2],
    pub resolution: [f64; 2],
}

impl Default for Camera {
    fn default() -> Self {
        Camera { focal: 1150.0, center: [500.0, 500.0], resolution: [1000.0, 1000.0] }
    }
}

impl Camera {
    /// Camera-frame point in mm (x right, y down, z forward) to pixels.
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [self.focal * p[0] / p[2] + self.center[0], self.focal * p[1] / p[2] + self.center[1]]
    }
}

/// Rest-pose offset from the parent joint, mm, body frame (x left, y up, z forward).
fn bone_offset(joint: &str, parent: &str) -> [f64; 3] {
    match (joint, parent) {
        ("r_hip", _) => [-130.0, 0.0, 0.0],
        ("l_hip", _) => [130.0, 0.0, 0.0],
        ("r_knee", _) | ("l_knee", _) => [0.0, -450.0, 0.0],
        ("r_ankle", _) | ("l_ankle", _) => [0.0, -440.0, 0.0],
        ("spine", _) => [0.0, 230.0, 0.0],
        ("thorax", "spine") => [0.0, 250.0, 0.0],
        ("thorax", _) => [0.0, 480.0, 0.0],
        ("neck", _) => [0.0, 110.0, 30.0],
        ("head", "neck") => [0.0, 120.0, 0.0],
        ("head", _) => [0.0, 230.0, 30.0],
        ("l_shoulder", _) => [150.0, -20.0, 0.0],
        ("r_shoulder", _) => [-150.0, -20.0, 0.0],
        ("l_elbow", _) | ("r_elbow", _) => [0.0, -280.0, 0.0],
        ("l_wrist", _) | ("r_wrist", _) => [0.0, -250.0, 0.0],
        _ => [0.0, 100.0, 0.0],
    }
}

/// Swing amplitude (rad) of a joint's local rotation.
fn swing(joint: &str) -> f64 {
    if joint.ends_with("_hip") || joint.ends_with("_shoulder") || joint.ends_with("_elbow") {
        0.6
    } else if joint.ends_with("_knee") {
        0.5
    } else if joint.ends_with("_wrist") || joint.ends_with("_ankle") {
        0.2
    } else {
        0.15
    }
}

#[derive(Clone, Copy, Debug)]
struct Oscillator {
    amp: f64,
    omega: f64,
    phase: f64,
    bias: f64,
}

impl Oscillator {
    fn at(&self, t: f64) -> f64 {
        self.bias + self.amp * (self.omega * t + self.phase).sin()
    }
}

/// Root-relative camera-frame joints (mm) for one frame of forward
/// kinematics.
fn pose_at(
    g: &SkeletonGraph,
    offsets: &[Vector3<f64>],
    joints: &[[Oscillator; 2]],
    yaw: &Oscillator,
    t: f64,
) -> Vec<Vector3<f64>> {
    let mut rot = vec![Rotation3::identity(); g.n_joints];
    let mut pos = vec![Vector3::zeros(); g.n_joints];
    rot[g.root] = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw.at(t));
    for j in 0..g.n_joints {
        if let Some(p) = g.parents[j] {
            let [a, b] = joints[j];
            let local = Rotation3::from_axis_angle(&Vector3::x_axis(), a.at(t))
                * Rotation3::from_axis_angle(&Vector3::z_axis(), b.at(t));
            rot[j] = rot[p] * local;
            pos[j] = pos[p] + rot[p] * (local * offsets[j]);
        }
    }
    // body y-up to camera y-down, facing the camera
    pos.iter().map(|v| Vector3::new(-v.x, -v.y, -v.z)).collect()
}

/// Number of shared motion families, the synthetic stand-in for actions.
pub const SYNTH_ACTIONS: usize = 4;
const ACTION_SEED: u64 = 0x6a57;

struct Action {
    base: f64,
    joints: Vec<[Oscillator; 2]>,
}

/// Fixed per-joint oscillator sets, independent of the dataset seed, so
/// every dataset draws its sequences from the same families.
fn motion_families(g: &SkeletonGraph) -> Vec<Action> {
    let mut rng = ChaCha8Rng::seed_from_u64(ACTION_SEED);
    (0..SYNTH_ACTIONS)
        .map(|_| {
            let base = std::f64::consts::TAU * rng.gen_range(0.4..1.2);
            let joints = (0..g.n_joints)
                .map(|j| {
                    let amp = swing(&g.joint_names[j]);
                    let mut osc = |scale: f64| Oscillator {
                        amp: scale * amp * rng.gen_range(0.5..1.0),
                        omega: base * rng.gen_range(1..=2) as f64,
                        phase: rng.gen_range(0.0..std::f64::consts::TAU),
                        bias: scale * amp * rng.gen_range(-0.5..0.5),
                    };
                    [osc(1.0), osc(0.4)]
                })
                .collect();
            Action { base, joints }
        })
        .collect()
}

/// Smooth periodic motion on `skeleton`, projected through `Camera::default()`.
/// Sequence `s` follows motion family `s mod SYNTH_ACTIONS` with its own
/// gain, speed, time offset, heading and placement.
/// Parents always precede children in the joint tables, so one forward
/// sweep resolves the chain.
pub fn synth_dataset_for(skeleton: &str, seed: u64, n_sequences: usize, length: usize) -> Result<Dataset> {
    let g = build_skeleton(skeleton)?;
    let cam = Camera::default();
    let fps = 50.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<Vector3<f64>> = (0..g.n_joints)
        .map(|j| {
            let parent = g.parents[j].map_or("", |p| g.joint_names[p].as_str());
            Vector3::from(bone_offset(&g.joint_names[j], parent))
        })
        .collect();
    let actions = motion_families(&g);
    let mut samples = Vec::with_capacity(n_sequences);
    for s in 0..n_sequences {
        let action = &actions[s % actions.len()];
        let (gain, speed) = (rng.gen_range(0.85..1.15), rng.gen_range(0.9..1.1));
        let shift = rng.gen_range(0.0..std::f64::consts::TAU / action.base);
        let joints: Vec<[Oscillator; 2]> = action
            .joints
            .iter()
            .map(|pair| {
                pair.map(|o| Oscillator {
                    amp: o.amp * gain,
                    omega: o.omega * speed,
                    phase: o.phase + o.omega * shift,
                    bias: o.bias * gain,
                })
            })
            .collect();
        let base = action.base * speed;
        let yaw = Oscillator {
            amp: rng.gen_range(0.0..0.3),
            omega: base * 0.5,
            phase: rng.gen_range(0.0..std::f64::consts::TAU),
            bias: rng.gen_range(-0.8..0.8),
        };
        let root = [rng.gen_range(-400.0..400.0), rng.gen_range(-100.0..200.0), rng.gen_range(4000.0..5500.0)];
        let mut f2 = Vec::with_capacity(length);
        let mut f3 = Vec::with_capacity(length);
        for i in 0..length {
            let t = i as f64 / fps;
            let rel = pose_at(&g, &offsets, &joints, &yaw, t);
            f2.push(rel.iter().map(|v| cam.project([v.x + root[0], v.y + root[1], v.z + root[2]])).collect());
            f3.push(rel.iter().map(|v| [v.x, v.y, v.z]).collect());
        }
        let id = format!("synth{s:03}");
        samples.push(Sample {
            input: Pose2DSequence {
                id: id.clone(),
                skeleton: g.name.clone(),
                fps,
                frames: f2,
                resolution: cam.resolution,
                normalized: false,
            },
            target: Some(Pose3DSequence { id, skeleton: g.name.clone(), fps, frames: f3 }),
        });
    }
    Ok(Dataset { skeleton: g.name.clone(), fps, resolution: cam.resolution, normalized: false, samples })
}

pub fn synth_dataset(seed: u64, n_sequences: usize, length: usize) -> Dataset {
    synth_dataset_for("h36m17", seed, n_sequences, length).expect("built-in skeleton")
}
