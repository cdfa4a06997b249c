//! The four networks: lifter, 2D pose discriminator, temporal discriminator,
//! and the domain adapter with its own discriminator.
//!
//! All are residual MLPs over flattened `[x0, y0, x1, y1, ...]` pose vectors.
//! The lifter and adapter use batch normalization and ReLU; the
//! discriminators use neither batch norm nor plain ReLU (leaky, slope 0.01)
//! and end in a sigmoid.

use rand::Rng;

use rand::SeedableRng;

use crate::geometry::{self, DepthOffsets, JointSchema, Pose2D, Pose3D, NUM_JOINTS};
use crate::nn::checkpoint::{Checkpoint, CheckpointError};
use crate::nn::layers::{Activation, Mode, ResidualMlp};
use crate::nn::tensor::Tensor2;
use crate::nn::NnError;

/// Width of a flattened 2D pose vector.
pub const POSE_WIDTH: usize = 2 * NUM_JOINTS;

/// Default hidden width of every residual block.
pub const DEFAULT_HIDDEN: usize = 1024;

const LEAKY_SLOPE: f64 = 0.01;

/// Flatten a batch of 2D poses into a `(batch, 2N)` matrix.
pub fn poses_to_matrix(poses: &[Pose2D]) -> Tensor2 {
    let mut data = Vec::with_capacity(poses.len() * POSE_WIDTH);
    for p in poses {
        data.extend_from_slice(&p.to_flat());
    }
    Tensor2::from_vec(poses.len(), POSE_WIDTH, data).unwrap()
}

/// Inverse of [`poses_to_matrix`].
pub fn matrix_to_poses(m: &Tensor2) -> Vec<Pose2D> {
    assert_eq!(m.cols(), POSE_WIDTH);
    (0..m.rows()).map(|r| Pose2D::from_flat(m.row(r))).collect()
}

/// The lifting network `G`: 2N inputs, four residual blocks with batch norm,
/// N depth offsets out.
#[derive(Debug, Clone)]
pub struct LifterNet {
    pub net: ResidualMlp,
}

impl LifterNet {
    pub fn new(rng: &mut impl Rng, hidden: usize) -> Self {
        LifterNet {
            net: ResidualMlp::new(rng, POSE_WIDTH, hidden, NUM_JOINTS, 4, true, Activation::Relu),
        }
    }

    /// Depth offsets for a batch of flattened poses (eval mode, no tape).
    pub fn depth_offsets(&self, poses: &Tensor2) -> Result<Tensor2, NnError> {
        self.net.forward(poses, Mode::Eval)
    }

    /// Lift a single normalized pose to 3D: `z = max(1, c + G(x))`.
    /// Re-projecting the result reproduces the input exactly.
    pub fn lift(&self, pose: &Pose2D, c: f64) -> Result<Pose3D, NnError> {
        let m = poses_to_matrix(std::slice::from_ref(pose));
        let d = self.depth_offsets(&m)?;
        let mut offsets = [0.0; NUM_JOINTS];
        offsets.copy_from_slice(d.row(0));
        Ok(geometry::lift_with_depths(pose, &DepthOffsets(offsets), c))
    }

    /// Lift a batch of normalized poses.
    pub fn lift_batch(&self, poses: &[Pose2D], c: f64) -> Result<Vec<Pose3D>, NnError> {
        let m = poses_to_matrix(poses);
        let d = self.depth_offsets(&m)?;
        Ok(poses
            .iter()
            .enumerate()
            .map(|(r, p)| {
                let mut offsets = [0.0; NUM_JOINTS];
                offsets.copy_from_slice(d.row(r));
                geometry::lift_with_depths(p, &DepthOffsets(offsets), c)
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        save_mlp(&self.net, "lifter", path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        let net = load_mlp("lifter", path)?;
        Ok(LifterNet { net })
    }
}

/// The 2D pose discriminator `D`: 2N inputs, three residual blocks without
/// batch norm, scalar probability out.
#[derive(Debug, Clone)]
pub struct PoseDiscriminator {
    pub net: ResidualMlp,
}

impl PoseDiscriminator {
    pub fn new(rng: &mut impl Rng, hidden: usize) -> Self {
        PoseDiscriminator {
            net: ResidualMlp::new(
                rng,
                POSE_WIDTH,
                hidden,
                1,
                3,
                false,
                Activation::LeakyRelu(LEAKY_SLOPE),
            ),
        }
    }

    /// Probability that a single pose is real, strictly inside (0, 1).
    pub fn discriminate(&self, pose: &Pose2D) -> Result<f64, NnError> {
        let m = poses_to_matrix(std::slice::from_ref(pose));
        Ok(self.discriminate_batch(&m)?.get(0, 0))
    }

    /// Per-row probabilities for a `(batch, 2N)` matrix.
    pub fn discriminate_batch(&self, poses: &Tensor2) -> Result<Tensor2, NnError> {
        let logits = self.net.forward(poses, Mode::Eval)?;
        Ok(logits.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        save_mlp(&self.net, "pose_disc", path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        Ok(PoseDiscriminator { net: load_mlp("pose_disc", path)? })
    }
}

/// The temporal discriminator `T` over `[pose_t, diff_1, ..., diff_M]`
/// vectors of width `2N + 2NM`.
#[derive(Debug, Clone)]
pub struct TemporalDiscriminator {
    pub net: ResidualMlp,
    pub diffs: usize,
}

impl TemporalDiscriminator {
    pub fn new(rng: &mut impl Rng, hidden: usize, diffs: usize) -> Self {
        assert!(diffs >= 1, "temporal discriminator needs M >= 1");
        TemporalDiscriminator {
            net: ResidualMlp::new(
                rng,
                POSE_WIDTH * (1 + diffs),
                hidden,
                1,
                3,
                false,
                Activation::LeakyRelu(LEAKY_SLOPE),
            ),
            diffs,
        }
    }

    /// Input vector for one frame and its `M` forward differences.
    pub fn build_input(&self, pose_t: &Pose2D, diffs: &[[f64; POSE_WIDTH]]) -> Result<Vec<f64>, NnError> {
        if diffs.len() != self.diffs {
            return Err(NnError::ShapeMismatch {
                context: "temporal_discriminate",
                expected: (self.diffs, POSE_WIDTH),
                got: (diffs.len(), POSE_WIDTH),
            });
        }
        let mut out = Vec::with_capacity(POSE_WIDTH * (1 + self.diffs));
        out.extend_from_slice(&pose_t.to_flat());
        for d in diffs {
            out.extend_from_slice(d);
        }
        Ok(out)
    }

    /// Probability that a (pose, differences) tuple comes from a real
    /// sequence.
    pub fn discriminate(&self, pose_t: &Pose2D, diffs: &[[f64; POSE_WIDTH]]) -> Result<f64, NnError> {
        let input = self.build_input(pose_t, diffs)?;
        let m = Tensor2::from_vec(1, input.len(), input)?;
        let logits = self.net.forward(&m, Mode::Eval)?;
        Ok(sigmoid(logits.get(0, 0)))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        save_mlp(&self.net, "temporal_disc", path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        let net = load_mlp("temporal_disc", path)?;
        let diffs = net.in_dim() / POSE_WIDTH - 1;
        Ok(TemporalDiscriminator { net, diffs })
    }
}

/// The domain adapter `C`: residual correction `x_sc = x_s + C(x_s)` mapping
/// source-domain keypoint conventions onto the target domain.
#[derive(Debug, Clone)]
pub struct DomainAdapter {
    pub net: ResidualMlp,
}

impl DomainAdapter {
    pub fn new(rng: &mut impl Rng, hidden: usize) -> Self {
        DomainAdapter {
            net: ResidualMlp::new(rng, POSE_WIDTH, hidden, POSE_WIDTH, 4, true, Activation::Relu),
        }
    }

    /// Raw correction `C(x_s)` for a batch of flattened poses.
    pub fn correction(&self, poses: &Tensor2) -> Result<Tensor2, NnError> {
        self.net.forward(poses, Mode::Eval)
    }

    /// Correct one normalized source pose and re-normalize the result, since
    /// the correction can move the root and scale off-convention.
    pub fn adapt(
        &self,
        pose: &Pose2D,
        schema: &JointSchema,
        c: f64,
    ) -> Result<Pose2D, crate::models::AdaptError> {
        let m = poses_to_matrix(std::slice::from_ref(pose));
        let corr = self.correction(&m)?;
        let mut flat = pose.to_flat();
        for (v, d) in flat.iter_mut().zip(corr.row(0)) {
            *v += d;
        }
        let corrected = Pose2D::from_flat(&flat);
        let (renorm, _, _) = geometry::normalize_pose2d(&corrected, schema, c)?;
        Ok(renorm)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        save_mlp(&self.net, "adapter", path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        Ok(DomainAdapter { net: load_mlp("adapter", path)? })
    }
}

/// Discriminator between target-domain poses and adapted source poses. Same
/// shape as the 2D pose discriminator.
#[derive(Debug, Clone)]
pub struct DomainDiscriminator {
    pub net: ResidualMlp,
}

impl DomainDiscriminator {
    pub fn new(rng: &mut impl Rng, hidden: usize) -> Self {
        DomainDiscriminator {
            net: ResidualMlp::new(
                rng,
                POSE_WIDTH,
                hidden,
                1,
                3,
                false,
                Activation::LeakyRelu(LEAKY_SLOPE),
            ),
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), CheckpointError> {
        save_mlp(&self.net, "domain_disc", path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, CheckpointError> {
        Ok(DomainDiscriminator { net: load_mlp("domain_disc", path)? })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdaptError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn save_mlp(
    net: &ResidualMlp,
    kind: &str,
    path: impl AsRef<std::path::Path>,
) -> Result<(), CheckpointError> {
    let mut ck = Checkpoint::new(kind);
    net.visit_params(&mut |name, t| ck.push(name, t.clone()));
    net.visit_buffers(&mut |name, t| ck.push(name, t.clone()));
    ck.save(path)
}

fn load_mlp(kind: &str, path: impl AsRef<std::path::Path>) -> Result<ResidualMlp, CheckpointError> {
    let ck = Checkpoint::load(path)?;
    if ck.kind != kind {
        return Err(CheckpointError::KindMismatch {
            expected: kind.to_string(),
            got: ck.kind,
        });
    }
    mlp_from_checkpoint(&ck)
}

/// Rebuild a residual MLP from checkpoint entries; dimensions, block count,
/// and batch-norm presence are inferred from entry names and shapes.
fn mlp_from_checkpoint(ck: &Checkpoint) -> Result<ResidualMlp, CheckpointError> {
    let input_w = ck
        .get("input.w")
        .ok_or_else(|| CheckpointError::MissingEntry("input.w".into()))?;
    let output_w = ck
        .get("output.w")
        .ok_or_else(|| CheckpointError::MissingEntry("output.w".into()))?;
    let (in_dim, hidden) = input_w.shape();
    let out_dim = output_w.cols();
    let batch_norm = ck.get("input_bn.gamma").is_some();
    let mut n_blocks = 0;
    while ck.get(&format!("blocks.{n_blocks}.fc1.w")).is_some() {
        n_blocks += 1;
    }
    let activation = if batch_norm {
        Activation::Relu
    } else {
        Activation::LeakyRelu(LEAKY_SLOPE)
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = ResidualMlp::new(&mut rng, in_dim, hidden, out_dim, n_blocks, batch_norm, activation);

    let assign = |name: &str, t: &mut Tensor2| -> Result<(), CheckpointError> {
        let src = ck
            .get(name)
            .ok_or_else(|| CheckpointError::MissingEntry(name.to_string()))?;
        if src.shape() != t.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: t.shape(),
                got: src.shape(),
            });
        }
        *t = src.clone();
        Ok(())
    };
    let mut result = Ok(());
    let mut expected = 0usize;
    net.visit_params_mut(&mut |name, t| {
        expected += 1;
        if result.is_ok() {
            result = assign(name, t);
        }
    });
    net.visit_buffers_mut(&mut |name, t| {
        expected += 1;
        if result.is_ok() {
            result = assign(name, t);
        }
    });
    result?;
    if expected != ck.entries.len() {
        let known: Vec<String> = {
            let mut names = Vec::new();
            net.visit_params(&mut |n, _| names.push(n.to_string()));
            net.visit_buffers(&mut |n, _| names.push(n.to_string()));
            names
        };
        let extra = ck
            .entries
            .iter()
            .map(|(n, _)| n.clone())
            .find(|n| !known.contains(n))
            .unwrap_or_default();
        return Err(CheckpointError::UnknownEntry(extra));
    }
    Ok(net)
}
