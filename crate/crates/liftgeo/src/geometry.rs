//! Camera model, pose normalization, depth-offset lifting, random rigid
//! transforms, and perspective projection.
//!
//! Conventions: a pinhole camera with unit focal length sits at the origin
//! looking down +Z. Skeletons live at a fixed distance `c` from the camera;
//! 2D poses are root-centered and rescaled so the head-to-root distance is
//! `1/c`, which makes lifted skeletons come out at head-to-root scale of
//! about one unit.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;

/// Number of joints in every pose.
pub const NUM_JOINTS: usize = 14;

/// Retries for a rigid transform that pushes a joint closer than the clamp
/// plane before the sample is skipped. With `c = 10` and unit-scale skeletons
/// the event cannot occur; the bound exists for pathological inputs.
pub const BEHIND_PLANE_RETRIES: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("degenerate pose: head coincides with root (distance {dist:.3e})")]
    DegeneratePose { dist: f64 },
    #[error("rigid transform moved joint {joint} to depth {z:.3} < 1 (behind clamp plane)")]
    BehindCameraPlane { joint: usize, z: f64 },
}

/// Joint names, the indices normalization and evaluation need, and the four
/// limb pairs whose length ratios the evaluation module tracks.
#[derive(Debug, Clone)]
pub struct JointSchema {
    pub names: [&'static str; NUM_JOINTS],
    pub head: usize,
    pub left_hip: usize,
    pub right_hip: usize,
    pub limb_pairs: [LimbPair; 4],
}

/// An upper/lower limb segment pair, each segment a (joint, joint) edge.
#[derive(Debug, Clone, Copy)]
pub struct LimbPair {
    pub name: &'static str,
    pub upper: (usize, usize),
    pub lower: (usize, usize),
}

pub const HEAD: usize = 0;
pub const NECK: usize = 1;
pub const R_SHOULDER: usize = 2;
pub const L_SHOULDER: usize = 3;
pub const R_ELBOW: usize = 4;
pub const L_ELBOW: usize = 5;
pub const R_WRIST: usize = 6;
pub const L_WRIST: usize = 7;
pub const R_HIP: usize = 8;
pub const L_HIP: usize = 9;
pub const R_KNEE: usize = 10;
pub const L_KNEE: usize = 11;
pub const R_ANKLE: usize = 12;
pub const L_ANKLE: usize = 13;

impl Default for JointSchema {
    fn default() -> Self {
        JointSchema {
            names: [
                "head", "neck", "r_shoulder", "l_shoulder", "r_elbow", "l_elbow", "r_wrist",
                "l_wrist", "r_hip", "l_hip", "r_knee", "l_knee", "r_ankle", "l_ankle",
            ],
            head: HEAD,
            left_hip: L_HIP,
            right_hip: R_HIP,
            limb_pairs: [
                LimbPair { name: "arm_l", upper: (L_SHOULDER, L_ELBOW), lower: (L_ELBOW, L_WRIST) },
                LimbPair { name: "arm_r", upper: (R_SHOULDER, R_ELBOW), lower: (R_ELBOW, R_WRIST) },
                LimbPair { name: "leg_l", upper: (L_HIP, L_KNEE), lower: (L_KNEE, L_ANKLE) },
                LimbPair { name: "leg_r", upper: (R_HIP, R_KNEE), lower: (R_KNEE, R_ANKLE) },
            ],
        }
    }
}

/// A 2D skeleton: `NUM_JOINTS` image-plane points in dimensionless units.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose2D {
    pub joints: [Vector2<f64>; NUM_JOINTS],
}

impl Pose2D {
    pub fn new(joints: [Vector2<f64>; NUM_JOINTS]) -> Self {
        Pose2D { joints }
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert_eq!(values.len(), 2 * NUM_JOINTS);
        let mut joints = [Vector2::zeros(); NUM_JOINTS];
        for (i, j) in joints.iter_mut().enumerate() {
            *j = Vector2::new(values[2 * i], values[2 * i + 1]);
        }
        Pose2D { joints }
    }

    /// Interleaved `[x0, y0, x1, y1, ...]` layout used by the networks.
    pub fn to_flat(&self) -> [f64; 2 * NUM_JOINTS] {
        let mut out = [0.0; 2 * NUM_JOINTS];
        for (i, j) in self.joints.iter().enumerate() {
            out[2 * i] = j.x;
            out[2 * i + 1] = j.y;
        }
        out
    }

    /// Midpoint of the two hip joints.
    pub fn root(&self, schema: &JointSchema) -> Vector2<f64> {
        (self.joints[schema.left_hip] + self.joints[schema.right_hip]) / 2.0
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.x.is_finite() && j.y.is_finite())
    }
}

/// A 3D skeleton in camera coordinates. Depths satisfy `z >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose3D {
    pub joints: [Vector3<f64>; NUM_JOINTS],
}

impl Pose3D {
    pub fn new(joints: [Vector3<f64>; NUM_JOINTS]) -> Self {
        Pose3D { joints }
    }

    pub fn root(&self, schema: &JointSchema) -> Vector3<f64> {
        (self.joints[schema.left_hip] + self.joints[schema.right_hip]) / 2.0
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|v| v.is_finite()))
    }

    /// Pairwise inter-joint distance matrix, used by rigidity checks.
    pub fn distance_matrix(&self) -> [[f64; NUM_JOINTS]; NUM_JOINTS] {
        let mut d = [[0.0; NUM_JOINTS]; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            for j in 0..NUM_JOINTS {
                d[i][j] = (self.joints[i] - self.joints[j]).norm();
            }
        }
        d
    }
}

/// Per-joint depth offsets from the reference plane at distance `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthOffsets(pub [f64; NUM_JOINTS]);

/// Rotation about a skeleton root followed by placement at `[0, 0, c]`:
/// `Y = R (X - root) + T`.
#[derive(Debug, Clone)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub root: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity(root: Vector3<f64>, c: f64) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            root,
            translation: Vector3::new(0.0, 0.0, c),
        }
    }

    /// Azimuth extracted back out of the rotation matrix (the angle about the
    /// camera's vertical axis). Used by distribution tests.
    pub fn azimuth(&self) -> f64 {
        self.rotation[(0, 2)].atan2(self.rotation[(0, 0)])
    }
}

/// Root-center and rescale a raw 2D pose so the head-to-root distance is
/// `1/c`. Returns the normalized pose together with the applied scale and the
/// removed root, so callers can undo it: `raw = normalized / scale + root`.
pub fn normalize_pose2d(
    raw: &Pose2D,
    schema: &JointSchema,
    c: f64,
) -> Result<(Pose2D, f64, Vector2<f64>), GeometryError> {
    let root = raw.root(schema);
    let head_dist = (raw.joints[schema.head] - root).norm();
    if head_dist < 1e-9 {
        return Err(GeometryError::DegeneratePose { dist: head_dist });
    }
    let scale = 1.0 / (c * head_dist);
    let mut joints = raw.joints;
    for j in joints.iter_mut() {
        *j = (*j - root) * scale;
    }
    Ok((Pose2D { joints }, scale, root))
}

/// Lift a 2D pose with per-joint depth offsets: `z = max(1, c + d)`,
/// `X = (x z, y z, z)`. Re-projecting the result reproduces the input
/// exactly, for any offsets.
pub fn lift_with_depths(pose: &Pose2D, d: &DepthOffsets, c: f64) -> Pose3D {
    let mut joints = [Vector3::zeros(); NUM_JOINTS];
    for i in 0..NUM_JOINTS {
        let z = (c + d.0[i]).max(1.0);
        joints[i] = Vector3::new(pose.joints[i].x * z, pose.joints[i].y * z, z);
    }
    Pose3D { joints }
}

/// Unit-focal perspective projection: `(x, y) = (X/Z, Y/Z)`.
///
/// The output is not re-normalized; rotations about a root at distance `c`
/// approximately preserve the scale convention, and renormalizing would break
/// the exact invertibility of the closure loop.
pub fn project(pose: &Pose3D) -> Pose2D {
    let mut joints = [Vector2::zeros(); NUM_JOINTS];
    for (out, j) in joints.iter_mut().zip(&pose.joints) {
        *out = Vector2::new(j.x / j.z, j.y / j.z);
    }
    Pose2D { joints }
}

/// Draw a random rigid transform: an azimuth angle about the camera's
/// vertical axis and an elevation angle about the horizontal axis, each
/// uniform over its range, composed as `R = R_elev * R_azim`.
pub fn sample_rotation(
    rng: &mut impl Rng,
    azimuth_range: (f64, f64),
    elevation_range: (f64, f64),
    root: Vector3<f64>,
    c: f64,
) -> RigidTransform {
    let azimuth = sample_range(rng, azimuth_range);
    let elevation = sample_range(rng, elevation_range);
    RigidTransform {
        rotation: rotation_from_angles(azimuth, elevation),
        root,
        translation: Vector3::new(0.0, 0.0, c),
    }
}

/// `R = R_x(elevation) * R_y(azimuth)`.
pub fn rotation_from_angles(azimuth: f64, elevation: f64) -> Matrix3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    let r_azim = Matrix3::new(ca, 0.0, sa, 0.0, 1.0, 0.0, -sa, 0.0, ca);
    let r_elev = Matrix3::new(1.0, 0.0, 0.0, 0.0, ce, -se, 0.0, se, ce);
    r_elev * r_azim
}

fn sample_range(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Apply `Y = R (X - root) + T`. Fails if any joint lands closer than the
/// clamp plane `z = 1`; callers resample the rotation.
pub fn apply_rigid(pose: &Pose3D, q: &RigidTransform) -> Result<Pose3D, GeometryError> {
    let mut joints = [Vector3::zeros(); NUM_JOINTS];
    for (i, j) in pose.joints.iter().enumerate() {
        let y = q.rotation * (j - q.root) + q.translation;
        if y.z < 1.0 {
            return Err(GeometryError::BehindCameraPlane { joint: i, z: y.z });
        }
        joints[i] = y;
    }
    Ok(Pose3D { joints })
}

/// The inverse map `X = R^T (Y - T) + root` as a closure. Composing with
/// [`apply_rigid`] gives the identity.
pub fn invert_rigid(q: &RigidTransform) -> impl Fn(&Pose3D) -> Pose3D + '_ {
    move |pose: &Pose3D| {
        let rt = q.rotation.transpose();
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for (out, j) in joints.iter_mut().zip(&pose.joints) {
            *out = rt * (j - q.translation) + q.root;
        }
        Pose3D { joints }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pose2d(rng: &mut impl Rng, spread: f64) -> Pose2D {
        let mut joints = [Vector2::zeros(); NUM_JOINTS];
        for j in joints.iter_mut() {
            *j = Vector2::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
        }
        Pose2D { joints }
    }

    fn random_pose3d(rng: &mut impl Rng, c: f64) -> Pose3D {
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for j in joints.iter_mut() {
            *j = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                c + rng.gen_range(-0.5..0.5),
            );
        }
        Pose3D { joints }
    }

    #[test]
    fn normalize_is_fixed_point_for_conforming_pose() {
        // Root-centered pose with head-to-root distance exactly 0.1 = 1/c.
        let schema = JointSchema::default();
        let mut joints = [Vector2::zeros(); NUM_JOINTS];
        joints[HEAD] = Vector2::new(0.0, 0.1);
        joints[L_HIP] = Vector2::new(-0.03, 0.0);
        joints[R_HIP] = Vector2::new(0.03, 0.0);
        for (i, j) in joints.iter_mut().enumerate() {
            if ![HEAD, L_HIP, R_HIP].contains(&i) {
                *j = Vector2::new(0.01 * i as f64, -0.02 * i as f64);
            }
        }
        let pose = Pose2D { joints };
        let (normalized, scale, root) = normalize_pose2d(&pose, &schema, 10.0).unwrap();
        assert_abs_diff_eq!(scale, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(root.norm(), 0.0, epsilon = 1e-12);
        for (a, b) in normalized.joints.iter().zip(&pose.joints) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_is_similarity_invariant() {
        let schema = JointSchema::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_pose2d(&mut rng, 1.0);
            if normalize_pose2d(&pose, &schema, 10.0).is_err() {
                continue;
            }
            let (n1, _, _) = normalize_pose2d(&pose, &schema, 10.0).unwrap();
            let moved = Pose2D {
                joints: pose.joints.map(|j| j * 5.0 + Vector2::new(3.0, 7.0)),
            };
            let (n2, _, _) = normalize_pose2d(&moved, &schema, 10.0).unwrap();
            for (a, b) in n1.joints.iter().zip(&n2.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalize_invariants_and_idempotence() {
        let schema = JointSchema::default();
        let c = 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pose = random_pose2d(&mut rng, 2.0);
            let Ok((n, _, _)) = normalize_pose2d(&pose, &schema, c) else {
                continue;
            };
            assert!(n.root(&schema).norm() < 1e-9);
            let head = (n.joints[schema.head] - n.root(&schema)).norm();
            assert_abs_diff_eq!(head, 1.0 / c, epsilon = 1e-9);
            let (n2, s2, _) = normalize_pose2d(&n, &schema, c).unwrap();
            assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-12);
            for (a, b) in n.joints.iter().zip(&n2.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_pose_is_rejected() {
        let schema = JointSchema::default();
        let pose = Pose2D { joints: [Vector2::new(1.0, 2.0); NUM_JOINTS] };
        assert!(matches!(
            normalize_pose2d(&pose, &schema, 10.0),
            Err(GeometryError::DegeneratePose { .. })
        ));
    }

    #[test]
    fn zero_offsets_lift_onto_reference_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pose = random_pose2d(&mut rng, 0.1);
        let lifted = lift_with_depths(&pose, &DepthOffsets([0.0; NUM_JOINTS]), 10.0);
        for (x3, x2) in lifted.joints.iter().zip(&pose.joints) {
            assert_abs_diff_eq!(x3.x, 10.0 * x2.x, epsilon = 1e-15);
            assert_abs_diff_eq!(x3.y, 10.0 * x2.y, epsilon = 1e-15);
            assert_abs_diff_eq!(x3.z, 10.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn depth_clamp_activates() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = random_pose2d(&mut rng, 0.1);
        let lifted = lift_with_depths(&pose, &DepthOffsets([-20.0; NUM_JOINTS]), 10.0);
        for j in &lifted.joints {
            assert_eq!(j.z, 1.0);
        }
    }

    #[test]
    fn lift_project_closure_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pose = random_pose2d(&mut rng, 0.1);
            let mut d = [0.0; NUM_JOINTS];
            for v in d.iter_mut() {
                *v = rng.gen_range(-3.0..3.0);
            }
            let lifted = lift_with_depths(&pose, &DepthOffsets(d), 10.0);
            let reproj = project(&lifted);
            for (a, b) in reproj.joints.iter().zip(&pose.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let mut joints = [Vector3::new(0.0, 0.0, 10.0); NUM_JOINTS];
        joints[1] = Vector3::new(1.0, 2.0, 10.0);
        let p = project(&Pose3D { joints });
        assert_eq!(p.joints[0], Vector2::new(0.0, 0.0));
        assert_abs_diff_eq!(p.joints[1].x, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(p.joints[1].y, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn projection_ignores_scaling_about_camera_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let pose = random_pose3d(&mut rng, 10.0);
            let scaled = Pose3D { joints: pose.joints.map(|j| j * 3.7) };
            let (p1, p2) = (project(&pose), project(&scaled));
            for (a, b) in p1.joints.iter().zip(&p2.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn collapsed_ranges_give_identity_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = sample_rotation(&mut rng, (0.0, 0.0), (0.0, 0.0), Vector3::zeros(), 10.0);
        assert_abs_diff_eq!((q.rotation - Matrix3::identity()).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(q.translation, Vector3::new(0.0, 0.0, 10.0));
    }

    #[test]
    fn sampled_rotations_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let q = sample_rotation(
                &mut rng,
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-std::f64::consts::PI / 9.0, std::f64::consts::PI / 9.0),
                Vector3::zeros(),
                10.0,
            );
            let r = q.rotation;
            assert_abs_diff_eq!((r.transpose() * r - Matrix3::identity()).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rigid_transform_places_root_at_translation() {
        let schema = JointSchema::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pose = random_pose3d(&mut rng, 10.0);
        let root = pose.root(&schema);
        let q = RigidTransform::identity(root, 10.0);
        let moved = apply_rigid(&pose, &q).unwrap();
        assert_abs_diff_eq!(
            (moved.root(&schema) - Vector3::new(0.0, 0.0, 10.0)).norm(),
            0.0,
            epsilon = 1e-12
        );
        // Identity rotation: pure translation by T - root.
        for (a, b) in moved.joints.iter().zip(&pose.joints) {
            assert_abs_diff_eq!(
                (a - b - (q.translation - root)).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn rigid_preserves_pairwise_distances_and_inverts() {
        let schema = JointSchema::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let pose = random_pose3d(&mut rng, 10.0);
            let q = sample_rotation(
                &mut rng,
                (-std::f64::consts::PI, std::f64::consts::PI),
                (-std::f64::consts::PI / 9.0, std::f64::consts::PI / 9.0),
                pose.root(&schema),
                10.0,
            );
            let moved = apply_rigid(&pose, &q).unwrap();
            let (d1, d2) = (pose.distance_matrix(), moved.distance_matrix());
            for i in 0..NUM_JOINTS {
                for j in 0..NUM_JOINTS {
                    assert_abs_diff_eq!(d1[i][j], d2[i][j], epsilon = 1e-9);
                }
            }
            let back = invert_rigid(&q)(&moved);
            for (a, b) in back.joints.iter().zip(&pose.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
            }
            let forward_again = apply_rigid(&back, &q).unwrap();
            for (a, b) in forward_again.joints.iter().zip(&moved.joints) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn behind_camera_plane_is_detected() {
        let mut joints = [Vector3::new(0.0, 0.0, 10.0); NUM_JOINTS];
        joints[0] = Vector3::new(0.0, 0.0, 0.5); // 9.5 units toward the camera
        let pose = Pose3D { joints };
        let q = RigidTransform::identity(Vector3::new(0.0, 0.0, 10.0), 10.0);
        assert!(matches!(
            apply_rigid(&pose, &q),
            Err(GeometryError::BehindCameraPlane { joint: 0, .. })
        ));
    }

    #[test]
    fn azimuth_recovery() {
        for &(az, el) in &[(0.3, 0.1), (-2.5, -0.3), (3.0, 0.0), (-0.1, 0.34)] {
            let r = rotation_from_angles(az, el);
            let q = RigidTransform { rotation: r, root: Vector3::zeros(), translation: Vector3::new(0.0, 0.0, 10.0) };
            assert_abs_diff_eq!(q.azimuth(), az, epsilon = 1e-12);
        }
    }
}
