//! Synthetic articulated-skeleton generator.
//!
//! A fixed 14-joint bone tree is articulated by uniformly sampled joint
//! angles, given a random global orientation, placed at distance `c` from the
//! camera, and perspective-projected. The 3D skeleton before projection is
//! kept as ground truth, which is what makes the training and evaluation
//! checks in this crate verifiable without any real motion-capture data.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::DataError;
use crate::geometry::{
    self, Pose2D, Pose3D, RigidTransform, BEHIND_PLANE_RETRIES, HEAD, L_ANKLE, L_ELBOW, L_HIP,
    L_KNEE, L_SHOULDER, L_WRIST, NECK, NUM_JOINTS, R_ANKLE, R_ELBOW, R_HIP, R_KNEE, R_SHOULDER,
    R_WRIST,
};

/// One bone of the template tree. `frame_parent` indexes the bone whose
/// accumulated rotation this bone's local rotation composes with; `anchor` is
/// the joint the bone hangs from (`None` = the pelvis root at the origin).
#[derive(Debug, Clone, Copy)]
pub struct Bone {
    pub child: usize,
    pub anchor: Option<usize>,
    pub frame_parent: Option<usize>,
    pub offset: Vector3<f64>,
    /// Euler angle ranges (x, y, z), radians; local rotation is Rz*Ry*Rx.
    pub angle_ranges: [(f64, f64); 3],
}

/// Bone tree with head-to-root rest distance 1.0 and mirror-symmetric
/// left/right limbs.
#[derive(Debug, Clone)]
pub struct SkeletonTemplate {
    pub bones: Vec<Bone>,
}

const FIXED: [(f64, f64); 3] = [(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)];

impl Default for SkeletonTemplate {
    fn default() -> Self {
        let torso = [(-0.30, 0.30), (-0.50, 0.50), (-0.20, 0.20)];
        let neck = [(-0.30, 0.30), (-0.40, 0.40), (-0.15, 0.15)];
        let arm_l = [(-1.20, 1.20), (-0.60, 0.60), (-1.20, 0.30)];
        let arm_r = [(-1.20, 1.20), (-0.60, 0.60), (-0.30, 1.20)];
        let elbow = [(0.0, 2.2), (-0.30, 0.30), (0.0, 0.0)];
        let hip_l = [(-1.10, 0.40), (-0.40, 0.40), (-0.70, 0.20)];
        let hip_r = [(-1.10, 0.40), (-0.40, 0.40), (-0.20, 0.70)];
        let knee = [(0.0, 1.9), (-0.20, 0.20), (0.0, 0.0)];
        let bones = vec![
            // 0, 1: pelvic girdle (rigid)
            Bone { child: L_HIP, anchor: None, frame_parent: None, offset: Vector3::new(0.12, 0.0, 0.0), angle_ranges: FIXED },
            Bone { child: R_HIP, anchor: None, frame_parent: None, offset: Vector3::new(-0.12, 0.0, 0.0), angle_ranges: FIXED },
            // 2: torso
            Bone { child: NECK, anchor: None, frame_parent: None, offset: Vector3::new(0.0, 0.75, 0.0), angle_ranges: torso },
            // 3: head
            Bone { child: HEAD, anchor: Some(NECK), frame_parent: Some(2), offset: Vector3::new(0.0, 0.25, 0.0), angle_ranges: neck },
            // 4, 5: collar (rigid, moves with torso)
            Bone { child: L_SHOULDER, anchor: Some(NECK), frame_parent: Some(2), offset: Vector3::new(0.20, -0.03, 0.0), angle_ranges: FIXED },
            Bone { child: R_SHOULDER, anchor: Some(NECK), frame_parent: Some(2), offset: Vector3::new(-0.20, -0.03, 0.0), angle_ranges: FIXED },
            // 6, 7: upper arms
            Bone { child: L_ELBOW, anchor: Some(L_SHOULDER), frame_parent: Some(4), offset: Vector3::new(0.0, -0.31, 0.0), angle_ranges: arm_l },
            Bone { child: R_ELBOW, anchor: Some(R_SHOULDER), frame_parent: Some(5), offset: Vector3::new(0.0, -0.31, 0.0), angle_ranges: arm_r },
            // 8, 9: forearms
            Bone { child: L_WRIST, anchor: Some(L_ELBOW), frame_parent: Some(6), offset: Vector3::new(0.0, -0.28, 0.0), angle_ranges: elbow },
            Bone { child: R_WRIST, anchor: Some(R_ELBOW), frame_parent: Some(7), offset: Vector3::new(0.0, -0.28, 0.0), angle_ranges: elbow },
            // 10, 11: thighs
            Bone { child: L_KNEE, anchor: Some(L_HIP), frame_parent: Some(0), offset: Vector3::new(0.0, -0.44, 0.0), angle_ranges: hip_l },
            Bone { child: R_KNEE, anchor: Some(R_HIP), frame_parent: Some(1), offset: Vector3::new(0.0, -0.44, 0.0), angle_ranges: hip_r },
            // 12, 13: shins
            Bone { child: L_ANKLE, anchor: Some(L_KNEE), frame_parent: Some(10), offset: Vector3::new(0.0, -0.44, 0.0), angle_ranges: knee },
            Bone { child: R_ANKLE, anchor: Some(R_KNEE), frame_parent: Some(11), offset: Vector3::new(0.0, -0.44, 0.0), angle_ranges: knee },
        ];
        SkeletonTemplate { bones }
    }
}

impl SkeletonTemplate {
    /// Checks bone-count, bone lengths, range ordering, and left/right length
    /// symmetry of the default limb pairing.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.bones.len() != NUM_JOINTS {
            return Err(DataError::ConfigInvalid(format!(
                "template must have {NUM_JOINTS} bones, found {}",
                self.bones.len()
            )));
        }
        let mut seen = [false; NUM_JOINTS];
        for (i, b) in self.bones.iter().enumerate() {
            if b.offset.norm() <= 0.0 {
                return Err(DataError::ConfigInvalid(format!("bone {i} has zero length")));
            }
            if let Some(p) = b.frame_parent {
                if p >= i {
                    return Err(DataError::ConfigInvalid(format!(
                        "bone {i} frame parent {p} does not precede it"
                    )));
                }
            }
            for (lo, hi) in b.angle_ranges {
                if lo > hi {
                    return Err(DataError::ConfigInvalid(format!("bone {i} has inverted range")));
                }
            }
            if b.child >= NUM_JOINTS || seen[b.child] {
                return Err(DataError::ConfigInvalid(format!("bone {i} child invalid")));
            }
            seen[b.child] = true;
        }
        let len = |a: usize| self.bones.iter().find(|b| b.child == a).unwrap().offset.norm();
        for (l, r) in [
            (L_HIP, R_HIP),
            (L_SHOULDER, R_SHOULDER),
            (L_ELBOW, R_ELBOW),
            (L_WRIST, R_WRIST),
            (L_KNEE, R_KNEE),
            (L_ANKLE, R_ANKLE),
        ] {
            if (len(l) - len(r)).abs() > 1e-12 {
                return Err(DataError::ConfigInvalid(format!(
                    "left/right bone lengths differ for joints {l}/{r}"
                )));
            }
        }
        Ok(())
    }

    /// Forward kinematics for one set of joint angles (3 per bone, template
    /// order). The root (hip midpoint) stays at the origin.
    pub fn pose(&self, angles: &[[f64; 3]], length_scale: &[f64]) -> Pose3D {
        assert_eq!(angles.len(), self.bones.len());
        assert_eq!(length_scale.len(), self.bones.len());
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        let mut frames: Vec<Matrix3<f64>> = Vec::with_capacity(self.bones.len());
        for (i, bone) in self.bones.iter().enumerate() {
            let local = euler_zyx(angles[i]);
            let frame = match bone.frame_parent {
                Some(p) => frames[p] * local,
                None => local,
            };
            let base = match bone.anchor {
                Some(j) => joints[j],
                None => Vector3::zeros(),
            };
            joints[bone.child] = base + frame * (bone.offset * length_scale[i]);
            frames.push(frame);
        }
        Pose3D { joints }
    }
}

fn euler_zyx(a: [f64; 3]) -> Matrix3<f64> {
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

/// Sequence generation settings: sequences of `frames_per_seq` frames with
/// joint angles and camera drift interpolated linearly between keyframes
/// sampled every `keyframe_interval` frames.
#[derive(Debug, Clone, Copy)]
pub struct SequenceConfig {
    pub frames_per_seq: usize,
    pub keyframe_interval: usize,
}

#[derive(Debug, Clone)]
pub struct SyntheticSkeletonConfig {
    pub samples: usize,
    pub c: f64,
    pub seed: u64,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub sequence: Option<SequenceConfig>,
    /// Per-sample relative bone-length jitter; 0 keeps a single body.
    pub bone_jitter: f64,
    pub template: SkeletonTemplate,
}

impl SyntheticSkeletonConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        SyntheticSkeletonConfig {
            samples,
            c: 10.0,
            seed,
            azimuth_range: (-std::f64::consts::PI, std::f64::consts::PI),
            elevation_range: (-std::f64::consts::PI / 9.0, std::f64::consts::PI / 9.0),
            sequence: None,
            bone_jitter: 0.0,
            template: SkeletonTemplate::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.c <= 1.0 {
            return Err(DataError::ConfigInvalid(format!("c must be > 1, got {}", self.c)));
        }
        if self.azimuth_range.0 > self.azimuth_range.1
            || self.elevation_range.0 > self.elevation_range.1
        {
            return Err(DataError::ConfigInvalid("inverted camera angle range".into()));
        }
        if !(0.0..0.5).contains(&self.bone_jitter) {
            return Err(DataError::ConfigInvalid(format!(
                "bone_jitter must be in [0, 0.5), got {}",
                self.bone_jitter
            )));
        }
        if let Some(seq) = &self.sequence {
            if seq.frames_per_seq == 0 || seq.keyframe_interval == 0 {
                return Err(DataError::ConfigInvalid("sequence lengths must be positive".into()));
            }
        }
        self.template.validate()
    }
}

/// One generated sample: ground-truth 3D skeleton in camera coordinates, its
/// raw perspective projection, and the camera transform used to place it.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub seq_id: String,
    pub frame_idx: u64,
    pub gt3d: Pose3D,
    pub pose2d: Pose2D,
    pub camera: RigidTransform,
}

/// Generate a paired synthetic dataset. Deterministic for a fixed config: the
/// rng stream of each sample (or sequence) is derived from the seed by
/// counter, so generation order does not matter.
pub fn synth_generate(cfg: &SyntheticSkeletonConfig) -> Result<Vec<SynthSample>, DataError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.samples);
    match &cfg.sequence {
        None => {
            for i in 0..cfg.samples {
                let mut rng = stream_rng(cfg.seed, i as u64);
                let angles = sample_angles(&cfg.template, &mut rng);
                let scales = sample_scales(&cfg.template, cfg.bone_jitter, &mut rng);
                let body = cfg.template.pose(&angles, &scales);
                let (az, el) = sample_camera(cfg, &mut rng);
                let (gt3d, camera) = place(&body, az, el, cfg.c, &mut rng, cfg)?;
                out.push(SynthSample {
                    seq_id: format!("s{i:06}"),
                    frame_idx: 0,
                    pose2d: geometry::project(&gt3d),
                    gt3d,
                    camera,
                });
            }
        }
        Some(seq_cfg) => {
            let frames = seq_cfg.frames_per_seq;
            let n_seqs = cfg.samples.div_ceil(frames);
            for s in 0..n_seqs {
                let mut rng = stream_rng(cfg.seed, s as u64);
                let scales = sample_scales(&cfg.template, cfg.bone_jitter, &mut rng);
                let mut key_angles = vec![sample_angles(&cfg.template, &mut rng)];
                let mut key_cams = vec![sample_camera(cfg, &mut rng)];
                let interval = seq_cfg.keyframe_interval;
                let n_keys = frames.div_ceil(interval) + 1;
                for _ in 0..n_keys {
                    key_angles.push(sample_angles(&cfg.template, &mut rng));
                    let (paz, pel) = *key_cams.last().unwrap();
                    let az = clamp_range(paz + rng.gen_range(-0.3..0.3), cfg.azimuth_range);
                    let el = clamp_range(pel + rng.gen_range(-0.1..0.1), cfg.elevation_range);
                    key_cams.push((az, el));
                }
                for f in 0..frames {
                    if out.len() == cfg.samples {
                        break;
                    }
                    let k = f / interval;
                    let t = (f % interval) as f64 / interval as f64;
                    let angles = lerp_angles(&key_angles[k], &key_angles[k + 1], t);
                    let az = lerp(key_cams[k].0, key_cams[k + 1].0, t);
                    let el = lerp(key_cams[k].1, key_cams[k + 1].1, t);
                    let body = cfg.template.pose(&angles, &scales);
                    let (gt3d, camera) = place(&body, az, el, cfg.c, &mut rng, cfg)?;
                    out.push(SynthSample {
                        seq_id: format!("seq{s:05}"),
                        frame_idx: f as u64,
                        pose2d: geometry::project(&gt3d),
                        gt3d,
                        camera,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_angles(template: &SkeletonTemplate, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    template
        .bones
        .iter()
        .map(|b| {
            let mut a = [0.0; 3];
            for (v, &(lo, hi)) in a.iter_mut().zip(&b.angle_ranges) {
                *v = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            }
            a
        })
        .collect()
}

fn sample_scales(template: &SkeletonTemplate, jitter: f64, rng: &mut impl Rng) -> Vec<f64> {
    template
        .bones
        .iter()
        .map(|_| {
            if jitter == 0.0 {
                1.0
            } else {
                1.0 + rng.gen_range(-jitter..jitter)
            }
        })
        .collect()
}

fn sample_camera(cfg: &SyntheticSkeletonConfig, rng: &mut impl Rng) -> (f64, f64) {
    let az = sample_uniform(rng, cfg.azimuth_range);
    let el = sample_uniform(rng, cfg.elevation_range);
    (az, el)
}

fn sample_uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

fn clamp_range(v: f64, range: (f64, f64)) -> f64 {
    v.clamp(range.0, range.1)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn lerp_angles(a: &[[f64; 3]], b: &[[f64; 3]], t: f64) -> Vec<[f64; 3]> {
    a.iter()
        .zip(b)
        .map(|(x, y)| [lerp(x[0], y[0], t), lerp(x[1], y[1], t), lerp(x[2], y[2], t)])
        .collect()
}

/// Rotate the body (root at origin) and place the root at `(0, 0, c)`. If a
/// joint would land behind the clamp plane the orientation is resampled; the
/// default template at c = 10 can never trigger this.
fn place(
    body: &Pose3D,
    azimuth: f64,
    elevation: f64,
    c: f64,
    rng: &mut impl Rng,
    cfg: &SyntheticSkeletonConfig,
) -> Result<(Pose3D, RigidTransform), DataError> {
    let mut q = RigidTransform {
        rotation: geometry::rotation_from_angles(azimuth, elevation),
        root: Vector3::zeros(),
        translation: Vector3::new(0.0, 0.0, c),
    };
    for _ in 0..=BEHIND_PLANE_RETRIES {
        match geometry::apply_rigid(body, &q) {
            Ok(placed) => return Ok((placed, q)),
            Err(_) => {
                let az = sample_uniform(rng, cfg.azimuth_range);
                let el = sample_uniform(rng, cfg.elevation_range);
                q.rotation = geometry::rotation_from_angles(az, el);
            }
        }
    }
    Err(DataError::ConfigInvalid(
        "skeleton cannot be placed in front of the clamp plane; check template scale vs c".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DepthOffsets, JointSchema};
    use approx::assert_abs_diff_eq;

    fn collapsed_config(samples: usize) -> SyntheticSkeletonConfig {
        let mut cfg = SyntheticSkeletonConfig::new(samples, 42);
        cfg.azimuth_range = (0.0, 0.0);
        cfg.elevation_range = (0.0, 0.0);
        for b in cfg.template.bones.iter_mut() {
            b.angle_ranges = FIXED;
        }
        cfg
    }

    #[test]
    fn collapsed_ranges_reproduce_the_rest_pose() {
        let cfg = collapsed_config(5);
        let samples = synth_generate(&cfg).unwrap();
        assert_eq!(samples.len(), 5);
        let rest = cfg.template.pose(
            &vec![[0.0; 3]; cfg.template.bones.len()],
            &vec![1.0; cfg.template.bones.len()],
        );
        for s in &samples {
            for (a, b) in s.gt3d.joints.iter().zip(&rest.joints) {
                // placed at (0,0,c) with identity rotation
                let expected = b + Vector3::new(0.0, 0.0, 10.0);
                assert_abs_diff_eq!((a - expected).norm(), 0.0, epsilon = 1e-12);
            }
            for (a, b) in s.pose2d.joints.iter().zip(&samples[0].pose2d.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn template_is_left_right_symmetric() {
        let template = SkeletonTemplate::default();
        template.validate().unwrap();
        let bone_len = |child: usize| {
            template.bones.iter().find(|b| b.child == child).unwrap().offset.norm()
        };
        // Ratio of left to right limb lengths is exactly 1.
        assert_eq!(bone_len(L_KNEE) / bone_len(R_KNEE), 1.0);
        assert_eq!(bone_len(L_ANKLE) / bone_len(R_ANKLE), 1.0);
        assert_eq!(bone_len(L_ELBOW) / bone_len(R_ELBOW), 1.0);
        assert_eq!(bone_len(L_WRIST) / bone_len(R_WRIST), 1.0);
        // Head-to-root rest distance is 1.
        let rest = template.pose(&vec![[0.0; 3]; 14], &vec![1.0; 14]);
        assert_abs_diff_eq!(rest.joints[HEAD].norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn samples_satisfy_pose_invariants_and_oracle_relift() {
        let schema = JointSchema::default();
        let cfg = SyntheticSkeletonConfig::new(200, 7);
        let samples = synth_generate(&cfg).unwrap();
        assert_eq!(samples.len(), 200);
        for s in &samples {
            assert!(s.gt3d.is_finite());
            assert!(s.gt3d.joints.iter().all(|j| j.z >= 1.0));
            // Root sits on the optical axis at depth c.
            let root = s.gt3d.root(&schema);
            assert_abs_diff_eq!((root - Vector3::new(0.0, 0.0, 10.0)).norm(), 0.0, epsilon = 1e-12);
            // Projection is normalizable.
            let (norm, _, _) = geometry::normalize_pose2d(&s.pose2d, &schema, cfg.c).unwrap();
            assert!(norm.root(&schema).norm() < 1e-9);
            // Re-lifting the stored 2D with oracle depths reproduces the 3D.
            let mut d = [0.0; NUM_JOINTS];
            for (dv, j) in d.iter_mut().zip(&s.gt3d.joints) {
                *dv = j.z - cfg.c;
            }
            let relift = geometry::lift_with_depths(&s.pose2d, &DepthOffsets(d), cfg.c);
            for (a, b) in relift.joints.iter().zip(&s.gt3d.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SyntheticSkeletonConfig::new(50, 99);
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.gt3d, y.gt3d);
            assert_eq!(x.pose2d, y.pose2d);
        }
    }

    #[test]
    fn sequences_stay_within_one_camera_and_are_contiguous() {
        let mut cfg = SyntheticSkeletonConfig::new(64, 3);
        cfg.sequence = Some(SequenceConfig { frames_per_seq: 16, keyframe_interval: 4 });
        let samples = synth_generate(&cfg).unwrap();
        assert_eq!(samples.len(), 64);
        for w in samples.windows(2) {
            if w[0].seq_id == w[1].seq_id {
                assert_eq!(w[1].frame_idx, w[0].frame_idx + 1);
                // Motion between consecutive frames is bounded.
                let max_move = w[0]
                    .gt3d
                    .joints
                    .iter()
                    .zip(&w[1].gt3d.joints)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(max_move < 0.8, "frame jump too large: {max_move}");
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SyntheticSkeletonConfig::new(1, 0);
        cfg.c = 0.5;
        assert!(matches!(synth_generate(&cfg), Err(DataError::ConfigInvalid(_))));
        let mut cfg = SyntheticSkeletonConfig::new(1, 0);
        cfg.template.bones[3].offset = Vector3::zeros();
        assert!(matches!(synth_generate(&cfg), Err(DataError::ConfigInvalid(_))));
    }
}
