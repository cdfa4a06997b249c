//! Evaluation: similarity-aligned MPJPE, PCK/AUC, and limb-length-ratio
//! statistics.
//!
//! The lifter's output has an arbitrary global scale and orientation, so every
//! comparison against ground truth first solves for the best similarity
//! transform (scale, rotation, translation) in closed form and reports errors
//! on the aligned pose.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{JointSchema, Pose3D, NUM_JOINTS};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("degenerate alignment target: ground-truth joints are coincident")]
    DegenerateTarget,
    #[error("empty evaluation set")]
    EmptySet,
    #[error("zero-length lower limb {limb} in pose {pose}")]
    ZeroLimb { limb: &'static str, pose: usize },
    #[error("id mismatch at row {row}: prediction {pred:?} vs ground truth {gt:?}")]
    IdMismatch {
        row: usize,
        pred: (String, u64),
        gt: (String, u64),
    },
}

/// Result of similarity alignment of a predicted pose onto ground truth.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub aligned: Pose3D,
    pub residuals: [f64; NUM_JOINTS],
}

/// Closed-form best similarity transform `s R p + t ≈ g` (orthogonal
/// cross-covariance factorization with a reflection guard), then the aligned
/// pose and per-joint residual distances.
pub fn procrustes_align(pred: &Pose3D, gt: &Pose3D) -> Result<AlignmentResult, EvalError> {
    let n = NUM_JOINTS as f64;
    let mean_p: Vector3<f64> = pred.joints.iter().sum::<Vector3<f64>>() / n;
    let mean_g: Vector3<f64> = gt.joints.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut var_p = 0.0;
    let mut var_g = 0.0;
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        let pc = p - mean_p;
        let gc = g - mean_g;
        cov += gc * pc.transpose();
        var_p += pc.norm_squared();
        var_g += gc.norm_squared();
    }
    if var_g < 1e-18 {
        return Err(EvalError::DegenerateTarget);
    }
    if var_p < 1e-18 {
        // Collapsed prediction: any rotation is optimal; use identity.
        let aligned_joints = [mean_g; NUM_JOINTS];
        let aligned = Pose3D::new(aligned_joints);
        let mut residuals = [0.0; NUM_JOINTS];
        for (r, (a, g)) in residuals.iter_mut().zip(aligned.joints.iter().zip(&gt.joints)) {
            *r = (a - g).norm();
        }
        return Ok(AlignmentResult {
            scale: 0.0,
            rotation: Matrix3::identity(),
            translation: mean_g,
            aligned,
            residuals,
        });
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(EvalError::DegenerateTarget)?;
    let v_t = svd.v_t.ok_or(EvalError::DegenerateTarget)?;
    // Reflection guard: force det(R) = +1.
    let d = (u * v_t).determinant();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
    let rotation = u * correction * v_t;
    let mut sing = svd.singular_values;
    sing[2] *= d.signum();
    let scale = sing.iter().sum::<f64>() / var_p;
    let translation = mean_g - scale * (rotation * mean_p);

    let mut aligned_joints = [Vector3::zeros(); NUM_JOINTS];
    for (out, p) in aligned_joints.iter_mut().zip(&pred.joints) {
        *out = scale * (rotation * p) + translation;
    }
    let aligned = Pose3D::new(aligned_joints);
    let mut residuals = [0.0; NUM_JOINTS];
    for (r, (a, g)) in residuals.iter_mut().zip(aligned.joints.iter().zip(&gt.joints)) {
        *r = (a - g).norm();
    }
    Ok(AlignmentResult {
        scale,
        rotation,
        translation,
        aligned,
        residuals,
    })
}

/// Mean per-joint distance between an aligned prediction and ground truth,
/// scaled to millimeters by `unit_scale` (mm per skeleton unit).
pub fn mpjpe(aligned: &Pose3D, gt: &Pose3D, unit_scale: f64) -> f64 {
    let total: f64 = aligned
        .joints
        .iter()
        .zip(&gt.joints)
        .map(|(a, g)| (a - g).norm())
        .sum();
    total * unit_scale / NUM_JOINTS as f64
}

/// Align and report MPJPE in one call.
pub fn aligned_mpjpe(pred: &Pose3D, gt: &Pose3D, unit_scale: f64) -> Result<f64, EvalError> {
    let aligned = procrustes_align(pred, gt)?;
    Ok(mpjpe(&aligned.aligned, gt, unit_scale))
}

/// PCK at `threshold_mm` plus AUC over `auc_steps` thresholds spanning
/// `auc_range_mm`, both in percent, over already-aligned pose pairs.
pub fn pck_auc(
    aligned: &[Pose3D],
    gts: &[Pose3D],
    unit_scale: f64,
    threshold_mm: f64,
    auc_range_mm: (f64, f64),
    auc_steps: usize,
) -> Result<(f64, f64), EvalError> {
    if aligned.is_empty() || aligned.len() != gts.len() {
        return Err(EvalError::EmptySet);
    }
    let mut errors = Vec::with_capacity(aligned.len() * NUM_JOINTS);
    for (a, g) in aligned.iter().zip(gts) {
        for (aj, gj) in a.joints.iter().zip(&g.joints) {
            errors.push((aj - gj).norm() * unit_scale);
        }
    }
    let pck_at = |thr: f64| -> f64 {
        let hits = errors.iter().filter(|&&e| e < thr).count();
        100.0 * hits as f64 / errors.len() as f64
    };
    let pck = pck_at(threshold_mm);
    let mut auc_sum = 0.0;
    for i in 0..auc_steps {
        let thr = auc_range_mm.0
            + (auc_range_mm.1 - auc_range_mm.0) * i as f64 / (auc_steps - 1) as f64;
        auc_sum += pck_at(thr);
    }
    Ok((pck, auc_sum / auc_steps as f64))
}

/// Default PCK threshold in millimeters.
pub const PCK_THRESHOLD_MM: f64 = 150.0;
/// Default AUC sweep: 0–150 mm in 31 steps.
pub const AUC_RANGE_MM: (f64, f64) = (0.0, 150.0);
pub const AUC_STEPS: usize = 31;

/// Millimeters per skeleton unit for synthetic data (head-to-root = 500 mm).
pub const SYNTH_UNIT_MM: f64 = 500.0;

/// Histogram and moments of upper/lower limb length ratios, one series per
/// limb pair in the schema.
#[derive(Debug, Clone)]
pub struct RatioHistogram {
    pub limbs: Vec<LimbRatioSeries>,
    pub bin_edges: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LimbRatioSeries {
    pub name: &'static str,
    pub ratios: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
}

/// Per-pose ratios of upper to lower limb length for the four limb pairs,
/// with a shared-bin histogram over `[lo, hi)`.
pub fn limb_ratio_histogram(
    poses: &[Pose3D],
    schema: &JointSchema,
    bins: usize,
    range: (f64, f64),
) -> Result<RatioHistogram, EvalError> {
    if poses.is_empty() {
        return Err(EvalError::EmptySet);
    }
    assert!(bins >= 1 && range.1 > range.0);
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / bins as f64)
        .collect();
    let mut limbs = Vec::with_capacity(schema.limb_pairs.len());
    for pair in &schema.limb_pairs {
        let mut ratios = Vec::with_capacity(poses.len());
        for (pi, pose) in poses.iter().enumerate() {
            let upper = (pose.joints[pair.upper.0] - pose.joints[pair.upper.1]).norm();
            let lower = (pose.joints[pair.lower.0] - pose.joints[pair.lower.1]).norm();
            if lower < 1e-12 {
                return Err(EvalError::ZeroLimb { limb: pair.name, pose: pi });
            }
            ratios.push(upper / lower);
        }
        let mut counts = vec![0usize; bins];
        for &r in &ratios {
            if r >= range.0 && r < range.1 {
                let b = ((r - range.0) / (range.1 - range.0) * bins as f64) as usize;
                counts[b.min(bins - 1)] += 1;
            } else if r >= range.1 {
                counts[bins - 1] += 1;
            } else {
                counts[0] += 1;
            }
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let variance =
            ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / ratios.len() as f64;
        limbs.push(LimbRatioSeries {
            name: pair.name,
            ratios,
            counts,
            mean,
            variance,
        });
    }
    Ok(RatioHistogram { limbs, bin_edges })
}

impl RatioHistogram {
    /// CSV export: `limb,bin_left,bin_right,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("limb,bin_left,bin_right,count\n");
        for series in &self.limbs {
            for (b, &count) in series.counts.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    series.name,
                    self.bin_edges[b],
                    self.bin_edges[b + 1],
                    count
                );
            }
        }
        out
    }

    pub fn series(&self, name: &str) -> Option<&LimbRatioSeries> {
        self.limbs.iter().find(|s| s.name == name)
    }
}

/// Summary metrics for a prediction set: mean aligned MPJPE plus PCK and AUC
/// at the default thresholds.
#[derive(Debug, Clone, Copy)]
pub struct SetMetrics {
    pub mpjpe_mm: f64,
    pub pck: f64,
    pub auc: f64,
}

/// Align every prediction to its ground truth and aggregate metrics.
pub fn evaluate_set(
    preds: &[Pose3D],
    gts: &[Pose3D],
    unit_scale: f64,
) -> Result<SetMetrics, EvalError> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(EvalError::EmptySet);
    }
    let mut aligned = Vec::with_capacity(preds.len());
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let a = procrustes_align(p, g)?;
        total += mpjpe(&a.aligned, g, unit_scale);
        aligned.push(a.aligned);
    }
    let (pck, auc) = pck_auc(
        &aligned,
        gts,
        unit_scale,
        PCK_THRESHOLD_MM,
        AUC_RANGE_MM,
        AUC_STEPS,
    )?;
    Ok(SetMetrics {
        mpjpe_mm: total / preds.len() as f64,
        pck,
        auc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Pose3D {
        let mut joints = [Vector3::zeros(); NUM_JOINTS];
        for j in joints.iter_mut() {
            *j = Vector3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                10.0 + rng.gen_range(-0.6..0.6),
            );
        }
        Pose3D { joints }
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = random_pose(&mut rng);
        let a = procrustes_align(&pose, &pose).unwrap();
        assert_abs_diff_eq!(a.scale, 1.0, epsilon = 1e-9);
        assert!(a.residuals.iter().all(|&r| r < 1e-9));
        assert_abs_diff_eq!(mpjpe(&a.aligned, &pose, 1000.0), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn planted_similarity_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let gt = random_pose(&mut rng);
            let rot = crate::geometry::rotation_from_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.0..1.0),
            );
            let t = Vector3::new(rng.gen_range(-2.0..2.0), 0.7, rng.gen_range(-2.0..2.0));
            let s = rng.gen_range(0.3..4.0);
            let pred = Pose3D {
                joints: gt.joints.map(|j| s * (rot * j) + t),
            };
            // pred = s R gt + t, so aligning pred back onto gt must be exact.
            let a = procrustes_align(&pred, &gt).unwrap();
            assert!(a.residuals.iter().all(|&r| r <= 1e-9), "residuals {:?}", a.residuals);
            assert_abs_diff_eq!(a.rotation.determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn reflections_are_not_absorbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_pose(&mut rng);
        let mirrored = Pose3D {
            joints: gt.joints.map(|j| Vector3::new(-j.x, j.y, j.z)),
        };
        let a = procrustes_align(&mirrored, &gt).unwrap();
        assert_abs_diff_eq!(a.rotation.determinant(), 1.0, epsilon = 1e-9);
        let total: f64 = a.residuals.iter().sum();
        assert!(total > 1e-3, "mirror should not align exactly, residual {total}");
    }

    #[test]
    fn degenerate_target_is_rejected() {
        let gt = Pose3D { joints: [Vector3::new(1.0, 2.0, 10.0); NUM_JOINTS] };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pred = random_pose(&mut rng);
        assert!(matches!(
            procrustes_align(&pred, &gt),
            Err(EvalError::DegenerateTarget)
        ));
    }

    #[test]
    fn mpjpe_single_joint_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_pose(&mut rng);
        let mut pred = gt.clone();
        pred.joints[3].x += 0.01;
        // No alignment: direct distance; 0.01 units * 1000 mm / 14 joints.
        let e = mpjpe(&pred, &gt, 1000.0);
        assert_abs_diff_eq!(e, 10.0 / 14.0, epsilon = 1e-9);
    }

    #[test]
    fn mpjpe_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let gt = random_pose(&mut rng);
            let mut pred = gt.clone();
            for j in pred.joints.iter_mut() {
                *j += Vector3::new(
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                    rng.gen_range(-0.1..0.1),
                );
            }
            let mut acc = 0.0;
            for i in 0..NUM_JOINTS {
                let dx = pred.joints[i].x - gt.joints[i].x;
                let dy = pred.joints[i].y - gt.joints[i].y;
                let dz = pred.joints[i].z - gt.joints[i].z;
                acc += (dx * dx + dy * dy + dz * dz).sqrt();
            }
            let expected = acc * 500.0 / NUM_JOINTS as f64;
            assert_abs_diff_eq!(mpjpe(&pred, &gt, 500.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn pck_auc_edge_cases_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt: Vec<Pose3D> = (0..5).map(|_| random_pose(&mut rng)).collect();
        // Perfect predictions.
        let (pck, auc) = pck_auc(&gt, &gt, 500.0, 150.0, (0.0, 150.0), 31).unwrap();
        assert_abs_diff_eq!(pck, 100.0, epsilon = 1e-12);
        // The 0 mm threshold counts strictly-below errors, so no pose passes it.
        assert_abs_diff_eq!(auc, 100.0 * 30.0 / 31.0, epsilon = 1e-9);

        // All errors at exactly twice the threshold.
        let off: Vec<Pose3D> = gt
            .iter()
            .map(|p| Pose3D { joints: p.joints.map(|j| j + Vector3::new(0.6, 0.0, 0.0)) })
            .collect();
        let (pck0, _) = pck_auc(&off, &gt, 500.0, 150.0, (0.0, 150.0), 31).unwrap();
        assert_eq!(pck0, 0.0);

        // Mixed errors vs a brute-force counting oracle.
        let noisy: Vec<Pose3D> = gt
            .iter()
            .map(|p| Pose3D {
                joints: p.joints.map(|j| {
                    j + Vector3::new(rng.gen_range(-0.5..0.5), 0.0, rng.gen_range(-0.5..0.5))
                }),
            })
            .collect();
        let (pck_fast, _) = pck_auc(&noisy, &gt, 500.0, 150.0, (0.0, 150.0), 31).unwrap();
        let mut hits = 0usize;
        let mut count = 0usize;
        for (p, g) in noisy.iter().zip(&gt) {
            for (pj, gj) in p.joints.iter().zip(&g.joints) {
                if (pj - gj).norm() * 500.0 < 150.0 {
                    hits += 1;
                }
                count += 1;
            }
        }
        assert_abs_diff_eq!(pck_fast, 100.0 * hits as f64 / count as f64, epsilon = 1e-12);

        assert!(matches!(
            pck_auc(&[], &[], 500.0, 150.0, (0.0, 150.0), 31),
            Err(EvalError::EmptySet)
        ));
    }

    #[test]
    fn pck_is_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt: Vec<Pose3D> = (0..10).map(|_| random_pose(&mut rng)).collect();
        let noisy: Vec<Pose3D> = gt
            .iter()
            .map(|p| Pose3D {
                joints: p.joints.map(|j| j + Vector3::new(rng.gen_range(-0.3..0.3), 0.0, 0.0)),
            })
            .collect();
        let mut last = 0.0;
        for thr in [10.0, 50.0, 100.0, 150.0, 300.0] {
            let (pck, _) = pck_auc(&noisy, &gt, 500.0, thr, (0.0, 150.0), 31).unwrap();
            assert!(pck >= last);
            last = pck;
        }
    }

    #[test]
    fn template_leg_ratio_is_a_point_mass_at_one() {
        let template = crate::data::SkeletonTemplate::default();
        let schema = JointSchema::default();
        let cfg = crate::data::SyntheticSkeletonConfig::new(50, 21);
        let samples = crate::data::synth_generate(&cfg).unwrap();
        let poses: Vec<Pose3D> = samples.into_iter().map(|s| s.gt3d).collect();
        let hist = limb_ratio_histogram(&poses, &schema, 40, (0.0, 2.0)).unwrap();
        for name in ["leg_l", "leg_r"] {
            let s = hist.series(name).unwrap();
            assert_abs_diff_eq!(s.mean, 1.0, epsilon = 1e-9);
            assert!(s.variance < 1e-18);
        }
        // Arm ratio reference value from the template proportions.
        let arm = hist.series("arm_l").unwrap();
        assert_abs_diff_eq!(arm.mean, 0.31 / 0.28, epsilon = 1e-9);
        let total: usize = hist.series("leg_l").unwrap().counts.iter().sum();
        assert_eq!(total, poses.len());
        let _ = template;
    }

    #[test]
    fn zero_limb_is_detected() {
        let schema = JointSchema::default();
        let mut pose = Pose3D { joints: [Vector3::new(0.0, 0.0, 10.0); NUM_JOINTS] };
        for (i, j) in pose.joints.iter_mut().enumerate() {
            j.x = i as f64 * 0.1;
        }
        // Collapse the left lower leg.
        pose.joints[crate::geometry::L_ANKLE] = pose.joints[crate::geometry::L_KNEE];
        assert!(matches!(
            limb_ratio_histogram(&[pose], &schema, 10, (0.0, 2.0)),
            Err(EvalError::ZeroLimb { .. })
        ));
    }

    #[test]
    fn histogram_csv_roundtrips_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let poses: Vec<Pose3D> = (0..30).map(|_| random_pose(&mut rng)).collect();
        let schema = JointSchema::default();
        let hist = limb_ratio_histogram(&poses, &schema, 8, (0.0, 3.0)).unwrap();
        let csv = hist.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("limb,bin_left,bin_right,count"));
        let parsed: usize = lines
            .filter(|l| l.starts_with("leg_l"))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(parsed, 30);
    }
}
