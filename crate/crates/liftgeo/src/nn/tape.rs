//! Reverse-mode automatic differentiation over [`Tensor2`] values.
//!
//! A [`Tape`] records an eager forward computation as an append-only list of
//! nodes; [`Tape::backward`] then walks the list in reverse and accumulates
//! gradients for every node, including leaves. The op set is exactly what the
//! lifting networks and the geometric closure loop need — dense layers, batch
//! normalization, pointwise nonlinearities, column gather/concat for pose
//! plumbing, and broadcast arithmetic for per-sample rigid transforms.

use crate::nn::tensor::Tensor2;
use crate::nn::NnError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op {
    Leaf,
    Matmul(Var, Var),
    AddRowVec(Var, Var),
    MulRowVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddColVec(Var, Var),
    SubColVec(Var, Var),
    MulColVec(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    Neg(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ClampMin(Var, f64),
    Log(Var),
    Square(Var),
    MeanAll(Var),
    SumAll(Var),
    SelectCols(Var, Vec<usize>),
    ConcatCols(Var, Var),
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats,
    },
}

/// Batch statistics captured by a train-mode batch-norm node.
pub struct BnStats {
    pub mean: Tensor2,
    /// Biased (1/B) variance used for normalization.
    pub var_biased: Tensor2,
    /// Unbiased (1/(B-1)) variance for running-average updates.
    pub var_unbiased: Tensor2,
    inv_std: Tensor2,
    xhat: Tensor2,
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Append-only computation graph with eager forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor2>>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite tensor produced by tape op");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Insert a value with no inputs. Gradients still accumulate into it, so
    /// leaves serve both as trainable parameters and as constants.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `a @ b` for `(m, k) x (k, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::Matmul(a, b))
    }

    /// Add a `(1, c)` row vector to every row of `x`.
    pub fn add_row_vec(&mut self, x: Var, v: Var) -> Var {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.rows(), 1, "row vector expected");
        assert_eq!(xv.cols(), vv.cols(), "add_row_vec width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vv.row(0)) {
                *o += b;
            }
        }
        self.push(out, Op::AddRowVec(x, v))
    }

    /// Multiply every row of `x` by a `(1, c)` row vector.
    pub fn mul_row_vec(&mut self, x: Var, v: Var) -> Var {
        let (xv, vv) = (self.value(x), self.value(v));
        assert_eq!(vv.rows(), 1, "row vector expected");
        assert_eq!(xv.cols(), vv.cols(), "mul_row_vec width mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(vv.row(0)) {
                *o *= b;
            }
        }
        self.push(out, Op::MulRowVec(x, v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    /// Add a `(rows, 1)` column vector to every column of `x`.
    pub fn add_col_vec(&mut self, x: Var, s: Var) -> Var {
        let value = self.col_broadcast(x, s, |a, b| a + b);
        self.push(value, Op::AddColVec(x, s))
    }

    /// Subtract a `(rows, 1)` column vector from every column of `x`.
    pub fn sub_col_vec(&mut self, x: Var, s: Var) -> Var {
        let value = self.col_broadcast(x, s, |a, b| a - b);
        self.push(value, Op::SubColVec(x, s))
    }

    /// Multiply every column of `x` by a `(rows, 1)` column vector.
    pub fn mul_col_vec(&mut self, x: Var, s: Var) -> Var {
        let value = self.col_broadcast(x, s, |a, b| a * b);
        self.push(value, Op::MulColVec(x, s))
    }

    fn col_broadcast(&self, x: Var, s: Var, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
        let (xv, sv) = (self.value(x), self.value(s));
        assert_eq!(sv.cols(), 1, "column vector expected");
        assert_eq!(xv.rows(), sv.rows(), "col broadcast height mismatch");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let sr = sv.get(r, 0);
            for o in out.row_mut(r) {
                *o = f(*o, sr);
            }
        }
        out
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v + k);
        self.push(value, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, k: f64) -> Var {
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::MulScalar(x, k))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| -v);
        self.push(value, Op::Neg(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x))
    }

    /// `max(m, x)` elementwise. Subgradient at the kink is 0.
    pub fn clamp_min(&mut self, x: Var, m: f64) -> Var {
        let value = self.value(x).map(|v| v.max(m));
        self.push(value, Op::ClampMin(x, m))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x))
    }

    /// Mean over all entries, as a `(1, 1)` tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor2::filled(1, 1, xv.sum() / xv.len() as f64);
        self.push(value, Op::MeanAll(x))
    }

    /// Sum over all entries, as a `(1, 1)` tensor.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor2::filled(1, 1, self.value(x).sum());
        self.push(value, Op::SumAll(x))
    }

    /// Gather columns: `out[:, j] = x[:, indices[j]]`. Indices may repeat.
    pub fn select_cols(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Tensor2::zeros(xv.rows(), indices.len());
        for r in 0..xv.rows() {
            let src = xv.row(r);
            for (o, &ix) in out.row_mut(r).iter_mut().zip(indices) {
                *o = src[ix];
            }
        }
        self.push(out, Op::SelectCols(x, indices.to_vec()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols height mismatch");
        let mut out = Tensor2::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let dst = out.row_mut(r);
            dst[..av.cols()].copy_from_slice(av.row(r));
            dst[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Train-mode batch normalization over columns with learnable `gamma`,
    /// `beta` (both `(1, c)`). Normalizes by the biased batch variance.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, NnError> {
        let xv = self.value(x);
        let (b, c) = xv.shape();
        if b < 2 {
            return Err(NnError::BatchTooSmall { batch: b });
        }
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(NnError::ShapeMismatch {
                context: "batch_norm_train",
                expected: (1, c),
                got: self.shape(gamma),
            });
        }
        let mut mean = Tensor2::zeros(1, c);
        for r in 0..b {
            for (m, v) in mean.row_mut(0).iter_mut().zip(xv.row(r)) {
                *m += v;
            }
        }
        mean.scale_assign(1.0 / b as f64);
        let mut var = Tensor2::zeros(1, c);
        for r in 0..b {
            for ((vv, v), m) in var.row_mut(0).iter_mut().zip(xv.row(r)).zip(mean.row(0)) {
                let d = v - m;
                *vv += d * d;
            }
        }
        let var_unbiased = var.map(|v| v / (b as f64 - 1.0));
        var.scale_assign(1.0 / b as f64);
        let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());

        let mut xhat = xv.clone();
        for r in 0..b {
            for ((h, m), is) in xhat.row_mut(r).iter_mut().zip(mean.row(0)).zip(inv_std.row(0)) {
                *h = (*h - m) * is;
            }
        }
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..b {
            for ((o, g), be) in out.row_mut(r).iter_mut().zip(gv.row(0)).zip(bv.row(0)) {
                *o = *o * g + be;
            }
        }
        let stats = BnStats {
            mean,
            var_biased: var,
            var_unbiased,
            inv_std,
            xhat,
        };
        Ok(self.push(out, Op::BatchNormTrain { x, gamma, beta, stats }))
    }

    /// Batch statistics recorded by a [`Tape::batch_norm_train`] node, for
    /// running-average updates.
    pub fn bn_stats(&self, bn_out: Var) -> Option<&BnStats> {
        match &self.nodes[bn_out.0].op {
            Op::BatchNormTrain { stats, .. } => Some(stats),
            _ => None,
        }
    }

    /// Reverse pass from a scalar `(1, 1)` loss node. Gradients of earlier
    /// calls are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.shape(loss) != (1, 1) {
            return Err(NnError::ShapeMismatch {
                context: "backward requires a scalar loss",
                expected: (1, 1),
                got: self.shape(loss),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor2::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        self.ran_backward = true;
        Ok(())
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    /// Nodes the loss does not depend on get a zero gradient.
    pub fn grad(&self, v: Var) -> Result<Tensor2, NnError> {
        if !self.ran_backward {
            return Err(NnError::GraphNotRecorded);
        }
        Ok(match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shape(v);
                Tensor2::zeros(r, c)
            }
        })
    }

    fn accumulate(grads: &mut [Option<Tensor2>], v: Var, delta: Tensor2) {
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Tensor2) {
        // Split borrows: nodes are read-only here, grads are written.
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let da = g.matmul(&nodes[b.0].value.transpose());
                let db = nodes[a.0].value.transpose().matmul(g);
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::AddRowVec(x, v) => {
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *v, g.col_sums());
            }
            Op::MulRowVec(x, v) => {
                let (xv, vv) = (&nodes[x.0].value, &nodes[v.0].value);
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    for (d, b) in dx.row_mut(r).iter_mut().zip(vv.row(0)) {
                        *d *= b;
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *v, g.zip_map(xv, |gg, xx| gg * xx).col_sums());
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                Self::accumulate(grads, *a, g.zip_map(&nodes[b.0].value, |gg, bb| gg * bb));
                Self::accumulate(grads, *b, g.zip_map(&nodes[a.0].value, |gg, aa| gg * aa));
            }
            Op::Div(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                Self::accumulate(grads, *a, g.zip_map(bv, |gg, bb| gg / bb));
                let mut db = g.zip_map(av, |gg, aa| gg * aa);
                db = db.zip_map(bv, |num, bb| -num / (bb * bb));
                Self::accumulate(grads, *b, db);
            }
            Op::AddColVec(x, s) => {
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *s, g.row_sums());
            }
            Op::SubColVec(x, s) => {
                Self::accumulate(grads, *x, g.clone());
                Self::accumulate(grads, *s, g.row_sums().map(|v| -v));
            }
            Op::MulColVec(x, s) => {
                let (xv, sv) = (&nodes[x.0].value, &nodes[s.0].value);
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let sr = sv.get(r, 0);
                    for d in dx.row_mut(r) {
                        *d *= sr;
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *s, g.zip_map(xv, |gg, xx| gg * xx).row_sums());
            }
            Op::AddScalar(x) => Self::accumulate(grads, *x, g.clone()),
            Op::MulScalar(x, k) => {
                let k = *k;
                Self::accumulate(grads, *x, g.map(|v| v * k));
            }
            Op::Neg(x) => Self::accumulate(grads, *x, g.map(|v| -v)),
            Op::Relu(x) => {
                let dx = g.zip_map(&nodes[x.0].value, |gg, xx| if xx > 0.0 { gg } else { 0.0 });
                Self::accumulate(grads, *x, dx);
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                let dx = g.zip_map(&nodes[x.0].value, |gg, xx| if xx > 0.0 { gg } else { s * gg });
                Self::accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let y = &nodes[i].value;
                Self::accumulate(grads, *x, g.zip_map(y, |gg, yy| gg * yy * (1.0 - yy)));
            }
            Op::ClampMin(x, m) => {
                let m = *m;
                let dx = g.zip_map(&nodes[x.0].value, |gg, xx| if xx > m { gg } else { 0.0 });
                Self::accumulate(grads, *x, dx);
            }
            Op::Log(x) => {
                Self::accumulate(grads, *x, g.zip_map(&nodes[x.0].value, |gg, xx| gg / xx));
            }
            Op::Square(x) => {
                let dx = g.zip_map(&nodes[x.0].value, |gg, xx| 2.0 * xx * gg);
                Self::accumulate(grads, *x, dx);
            }
            Op::MeanAll(x) => {
                let (r, c) = nodes[x.0].value.shape();
                let gv = g.get(0, 0) / (r * c) as f64;
                Self::accumulate(grads, *x, Tensor2::filled(r, c, gv));
            }
            Op::SumAll(x) => {
                let (r, c) = nodes[x.0].value.shape();
                Self::accumulate(grads, *x, Tensor2::filled(r, c, g.get(0, 0)));
            }
            Op::SelectCols(x, indices) => {
                let (r, c) = nodes[x.0].value.shape();
                let mut dx = Tensor2::zeros(r, c);
                for row in 0..r {
                    let grow = g.row(row);
                    let drow = dx.row_mut(row);
                    for (j, &ix) in indices.iter().enumerate() {
                        drow[ix] += grow[j];
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = nodes[a.0].value.cols();
                let cb = nodes[b.0].value.cols();
                let rows = g.rows();
                let mut da = Tensor2::zeros(rows, ca);
                let mut db = Tensor2::zeros(rows, cb);
                for r in 0..rows {
                    let grow = g.row(r);
                    da.row_mut(r).copy_from_slice(&grow[..ca]);
                    db.row_mut(r).copy_from_slice(&grow[ca..]);
                }
                Self::accumulate(grads, *a, da);
                Self::accumulate(grads, *b, db);
            }
            Op::BatchNormTrain { x, gamma, beta, stats } => {
                let b = nodes[x.0].value.rows() as f64;
                let gv = &nodes[gamma.0].value;
                // dbeta and dgamma.
                Self::accumulate(grads, *beta, g.col_sums());
                Self::accumulate(grads, *gamma, g.zip_map(&stats.xhat, |gg, h| gg * h).col_sums());
                // dxhat = g * gamma (broadcast over rows).
                let mut dxhat = g.clone();
                for r in 0..dxhat.rows() {
                    for (d, ga) in dxhat.row_mut(r).iter_mut().zip(gv.row(0)) {
                        *d *= ga;
                    }
                }
                let sum_dxhat = dxhat.col_sums();
                let sum_dxhat_xhat = dxhat.zip_map(&stats.xhat, |d, h| d * h).col_sums();
                // dx = inv_std/B * (B*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                let mut dx = Tensor2::zeros(dxhat.rows(), dxhat.cols());
                for r in 0..dx.rows() {
                    let dh = dxhat.row(r);
                    let hh = stats.xhat.row(r);
                    let dst = dx.row_mut(r);
                    for c in 0..dst.len() {
                        dst[c] = stats.inv_std.get(0, c) / b
                            * (b * dh[c] - sum_dxhat.get(0, c) - hh[c] * sum_dxhat_xhat.get(0, c));
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
        }
    }
}
