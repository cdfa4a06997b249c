//! Dense layers, batch normalization, and residual MLP blocks.
//!
//! Layers own plain [`Tensor2`] parameters. To run under autodiff they are
//! *staged* onto a [`Tape`] (parameters become leaves once, then any number of
//! forward passes reuse the same leaves so gradients accumulate correctly when
//! a network appears twice in one graph, as the lifter does in the closure
//! loop).

use rand::Rng;

use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor2;
use crate::nn::NnError;

/// Forward-pass mode for layers with batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu(s) => tape.leaky_relu(x, *s),
        }
    }
}

/// Fully connected layer `y = x W + b` with `W: (in, out)`, `b: (1, out)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Tensor2,
    pub b: Tensor2,
}

impl DenseLayer {
    /// Kaiming-uniform fan-in init for the weights, zero bias.
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        DenseLayer {
            w: Tensor2::from_vec(in_dim, out_dim, data).unwrap(),
            b: Tensor2::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedDense {
        StagedDense {
            w: tape.leaf(self.w.clone()),
            b: tape.leaf(self.b.clone()),
            in_dim: self.in_dim(),
        }
    }

    /// Tape-free forward for inference and tests.
    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let staged = self.stage(&mut tape);
        let y = staged.forward(&mut tape, xv)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StagedDense {
    pub w: Var,
    pub b: Var,
    in_dim: usize,
}

impl StagedDense {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NnError> {
        let got = tape.value(x).shape();
        if got.1 != self.in_dim {
            return Err(NnError::ShapeMismatch {
                context: "dense_forward",
                expected: (got.0, self.in_dim),
                got,
            });
        }
        let xw = tape.matmul(x, self.w);
        Ok(tape.add_row_vec(xw, self.b))
    }
}

/// Per-column batch normalization with learnable affine and running stats.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor2,
    pub beta: Tensor2,
    pub running_mean: Tensor2,
    pub running_var: Tensor2,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Tensor2::filled(1, width, 1.0),
            beta: Tensor2::zeros(1, width),
            running_mean: Tensor2::zeros(1, width),
            running_var: Tensor2::filled(1, width, 1.0),
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.cols()
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedBatchNorm {
        let inv_std = self
            .running_var
            .map(|v| 1.0 / (v + self.epsilon).sqrt());
        StagedBatchNorm {
            gamma: tape.leaf(self.gamma.clone()),
            beta: tape.leaf(self.beta.clone()),
            neg_run_mean: tape.leaf(self.running_mean.map(|v| -v)),
            run_inv_std: tape.leaf(inv_std),
            epsilon: self.epsilon,
        }
    }

    /// Fold fresh batch statistics into the running averages.
    pub fn update_running(&mut self, batch_mean: &Tensor2, batch_var_unbiased: &Tensor2) {
        let m = self.momentum;
        self.running_mean = self
            .running_mean
            .zip_map(batch_mean, |old, new| (1.0 - m) * old + m * new);
        self.running_var = self
            .running_var
            .zip_map(batch_var_unbiased, |old, new| (1.0 - m) * old + m * new);
    }

    /// Tape-free forward. Train mode updates the running statistics.
    pub fn forward(&mut self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let staged = self.stage(&mut tape);
        let y = staged.forward(&mut tape, xv, mode)?;
        if mode == Mode::Train {
            let stats = tape.bn_stats(y).expect("train-mode bn node");
            self.update_running(&stats.mean, &stats.var_unbiased);
        }
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StagedBatchNorm {
    pub gamma: Var,
    pub beta: Var,
    neg_run_mean: Var,
    run_inv_std: Var,
    epsilon: f64,
}

impl StagedBatchNorm {
    pub fn forward(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var, NnError> {
        let width = tape.value(self.gamma).cols();
        let got = tape.value(x).shape();
        if got.1 != width {
            return Err(NnError::ShapeMismatch {
                context: "batchnorm_forward",
                expected: (got.0, width),
                got,
            });
        }
        match mode {
            Mode::Train => tape.batch_norm_train(x, self.gamma, self.beta, self.epsilon),
            Mode::Eval => {
                let centered = tape.add_row_vec(x, self.neg_run_mean);
                let scaled = tape.mul_row_vec(centered, self.run_inv_std);
                let g = tape.mul_row_vec(scaled, self.gamma);
                Ok(tape.add_row_vec(g, self.beta))
            }
        }
    }
}

/// Two dense layers with optional batch norm and a skip connection:
/// `y = x + act(bn2(fc2(act(bn1(fc1(x))))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub fc1: DenseLayer,
    pub bn1: Option<BatchNorm>,
    pub fc2: DenseLayer,
    pub bn2: Option<BatchNorm>,
    pub activation: Activation,
}

impl ResidualBlock {
    pub fn new(rng: &mut impl Rng, width: usize, batch_norm: bool, activation: Activation) -> Self {
        ResidualBlock {
            fc1: DenseLayer::new(rng, width, width),
            bn1: batch_norm.then(|| BatchNorm::new(width)),
            fc2: DenseLayer::new(rng, width, width),
            bn2: batch_norm.then(|| BatchNorm::new(width)),
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.fc1.in_dim()
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedResidualBlock {
        StagedResidualBlock {
            fc1: self.fc1.stage(tape),
            bn1: self.bn1.as_ref().map(|bn| bn.stage(tape)),
            fc2: self.fc2.stage(tape),
            bn2: self.bn2.as_ref().map(|bn| bn.stage(tape)),
            activation: self.activation,
        }
    }

    /// Tape-free forward for tests; does not update running stats.
    pub fn forward(&self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let staged = self.stage(&mut tape);
        let mut bn_outs = Vec::new();
        let y = staged.forward(&mut tape, xv, mode, &mut bn_outs)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StagedResidualBlock {
    pub fc1: StagedDense,
    pub bn1: Option<StagedBatchNorm>,
    pub fc2: StagedDense,
    pub bn2: Option<StagedBatchNorm>,
    activation: Activation,
}

impl StagedResidualBlock {
    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mode: Mode,
        bn_outs: &mut Vec<Var>,
    ) -> Result<Var, NnError> {
        let got = tape.value(x).shape();
        let width = tape.value(self.fc1.w).rows();
        if got.1 != width {
            return Err(NnError::ShapeMismatch {
                context: "residual_forward",
                expected: (got.0, width),
                got,
            });
        }
        let mut h = self.fc1.forward(tape, x)?;
        if let Some(bn) = &self.bn1 {
            h = bn.forward(tape, h, mode)?;
            if mode == Mode::Train {
                bn_outs.push(h);
            }
        }
        h = self.activation.apply(tape, h);
        h = self.fc2.forward(tape, h)?;
        if let Some(bn) = &self.bn2 {
            h = bn.forward(tape, h, mode)?;
            if mode == Mode::Train {
                bn_outs.push(h);
            }
        }
        h = self.activation.apply(tape, h);
        Ok(tape.add(x, h))
    }
}

/// Input map, a stack of residual blocks, and an output map. All four
/// networks in this crate are instances of this shape.
#[derive(Debug, Clone)]
pub struct ResidualMlp {
    pub input: DenseLayer,
    pub input_bn: Option<BatchNorm>,
    pub blocks: Vec<ResidualBlock>,
    pub output: DenseLayer,
    pub activation: Activation,
}

impl ResidualMlp {
    pub fn new(
        rng: &mut impl Rng,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        n_blocks: usize,
        batch_norm: bool,
        activation: Activation,
    ) -> Self {
        ResidualMlp {
            input: DenseLayer::new(rng, in_dim, hidden),
            input_bn: batch_norm.then(|| BatchNorm::new(hidden)),
            blocks: (0..n_blocks)
                .map(|_| ResidualBlock::new(rng, hidden, batch_norm, activation))
                .collect(),
            output: DenseLayer::new(rng, hidden, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.input.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim()
    }

    pub fn hidden(&self) -> usize {
        self.input.out_dim()
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedMlp {
        StagedMlp {
            input: self.input.stage(tape),
            input_bn: self.input_bn.as_ref().map(|bn| bn.stage(tape)),
            blocks: self.blocks.iter().map(|b| b.stage(tape)).collect(),
            output: self.output.stage(tape),
            activation: self.activation,
            bn_outs: Vec::new(),
        }
    }

    /// Tape-free forward; does not update running stats.
    pub fn forward(&self, x: &Tensor2, mode: Mode) -> Result<Tensor2, NnError> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let mut staged = self.stage(&mut tape);
        let y = staged.forward(&mut tape, xv, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Parameters in a fixed traversal order shared with [`StagedMlp`].
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        f("input.w", &self.input.w);
        f("input.b", &self.input.b);
        if let Some(bn) = &self.input_bn {
            f("input_bn.gamma", &bn.gamma);
            f("input_bn.beta", &bn.beta);
        }
        for (i, blk) in self.blocks.iter().enumerate() {
            f(&format!("blocks.{i}.fc1.w"), &blk.fc1.w);
            f(&format!("blocks.{i}.fc1.b"), &blk.fc1.b);
            if let Some(bn) = &blk.bn1 {
                f(&format!("blocks.{i}.bn1.gamma"), &bn.gamma);
                f(&format!("blocks.{i}.bn1.beta"), &bn.beta);
            }
            f(&format!("blocks.{i}.fc2.w"), &blk.fc2.w);
            f(&format!("blocks.{i}.fc2.b"), &blk.fc2.b);
            if let Some(bn) = &blk.bn2 {
                f(&format!("blocks.{i}.bn2.gamma"), &bn.gamma);
                f(&format!("blocks.{i}.bn2.beta"), &bn.beta);
            }
        }
        f("output.w", &self.output.w);
        f("output.b", &self.output.b);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        f("input.w", &mut self.input.w);
        f("input.b", &mut self.input.b);
        if let Some(bn) = &mut self.input_bn {
            f("input_bn.gamma", &mut bn.gamma);
            f("input_bn.beta", &mut bn.beta);
        }
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            f(&format!("blocks.{i}.fc1.w"), &mut blk.fc1.w);
            f(&format!("blocks.{i}.fc1.b"), &mut blk.fc1.b);
            if let Some(bn) = &mut blk.bn1 {
                f(&format!("blocks.{i}.bn1.gamma"), &mut bn.gamma);
                f(&format!("blocks.{i}.bn1.beta"), &mut bn.beta);
            }
            f(&format!("blocks.{i}.fc2.w"), &mut blk.fc2.w);
            f(&format!("blocks.{i}.fc2.b"), &mut blk.fc2.b);
            if let Some(bn) = &mut blk.bn2 {
                f(&format!("blocks.{i}.bn2.gamma"), &mut bn.gamma);
                f(&format!("blocks.{i}.bn2.beta"), &mut bn.beta);
            }
        }
        f("output.w", &mut self.output.w);
        f("output.b", &mut self.output.b);
    }

    /// Batch-norm running statistics, in traversal order.
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor2)) {
        let visit_bn = |name: &str, bn: &Option<BatchNorm>, f: &mut dyn FnMut(&str, &Tensor2)| {
            if let Some(bn) = bn {
                f(&format!("{name}.running_mean"), &bn.running_mean);
                f(&format!("{name}.running_var"), &bn.running_var);
            }
        };
        visit_bn("input_bn", &self.input_bn, f);
        for (i, blk) in self.blocks.iter().enumerate() {
            visit_bn(&format!("blocks.{i}.bn1"), &blk.bn1, f);
            visit_bn(&format!("blocks.{i}.bn2"), &blk.bn2, f);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor2)) {
        let visit_bn =
            |name: &str, bn: &mut Option<BatchNorm>, f: &mut dyn FnMut(&str, &mut Tensor2)| {
                if let Some(bn) = bn {
                    f(&format!("{name}.running_mean"), &mut bn.running_mean);
                    f(&format!("{name}.running_var"), &mut bn.running_var);
                }
            };
        visit_bn("input_bn", &mut self.input_bn, f);
        for (i, blk) in self.blocks.iter_mut().enumerate() {
            visit_bn(&format!("blocks.{i}.bn1"), &mut blk.bn1, f);
            visit_bn(&format!("blocks.{i}.bn2"), &mut blk.bn2, f);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    /// Apply the batch statistics recorded by train-mode forwards on `staged`
    /// to this network's running averages, in forward order.
    pub fn apply_bn_updates(&mut self, tape: &Tape, staged: &StagedMlp) {
        let mut bns: Vec<&mut BatchNorm> = Vec::new();
        if let Some(bn) = &mut self.input_bn {
            bns.push(bn);
        }
        for blk in &mut self.blocks {
            if let Some(bn) = &mut blk.bn1 {
                bns.push(bn);
            }
            if let Some(bn) = &mut blk.bn2 {
                bns.push(bn);
            }
        }
        if bns.is_empty() {
            return;
        }
        for (slot, out) in staged.bn_outs.iter() {
            let stats = tape.bn_stats(*out).expect("bn output node");
            bns[*slot].update_running(&stats.mean, &stats.var_unbiased);
        }
    }
}

/// A [`ResidualMlp`] staged onto a tape. Multiple forward calls share the same
/// parameter leaves.
pub struct StagedMlp {
    input: StagedDense,
    input_bn: Option<StagedBatchNorm>,
    blocks: Vec<StagedResidualBlock>,
    output: StagedDense,
    activation: Activation,
    /// (bn slot index, output var) per train-mode bn application.
    bn_outs: Vec<(usize, Var)>,
}

impl StagedMlp {
    pub fn forward(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<Var, NnError> {
        let mut slot = 0;
        let mut h = self.input.forward(tape, x)?;
        if let Some(bn) = &self.input_bn {
            h = bn.forward(tape, h, mode)?;
            if mode == Mode::Train {
                self.bn_outs.push((slot, h));
            }
            slot += 1;
        }
        h = self.activation.apply(tape, h);
        for blk in &self.blocks {
            let mut raw = Vec::new();
            h = blk.forward(tape, h, mode, &mut raw)?;
            for out in raw {
                self.bn_outs.push((slot, out));
                slot += 1;
            }
            if mode != Mode::Train {
                slot += [blk.bn1.is_some(), blk.bn2.is_some()]
                    .iter()
                    .filter(|&&b| b)
                    .count();
            }
        }
        self.output.forward(tape, h)
    }

    /// Parameter leaves in [`ResidualMlp::visit_params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut vars = vec![self.input.w, self.input.b];
        if let Some(bn) = &self.input_bn {
            vars.push(bn.gamma);
            vars.push(bn.beta);
        }
        for blk in &self.blocks {
            vars.push(blk.fc1.w);
            vars.push(blk.fc1.b);
            if let Some(bn) = &blk.bn1 {
                vars.push(bn.gamma);
                vars.push(bn.beta);
            }
            vars.push(blk.fc2.w);
            vars.push(blk.fc2.b);
            if let Some(bn) = &blk.bn2 {
                vars.push(bn.gamma);
                vars.push(bn.beta);
            }
        }
        vars.push(self.output.w);
        vars.push(self.output.b);
        vars
    }
}
