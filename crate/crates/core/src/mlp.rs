//! Three-layer ReLU classifier: `input -> 256 -> 128 -> 10` with softmax output.
//!
//! Gradients are derived by hand for mean softmax cross-entropy. Parameters are
//! kept as six tensors in declaration order `W1, b1, W2, b2, W3, b3`; biases are
//! `1 x n` matrices so every tensor shares one type.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::LabeledSet;
use crate::error::{CoreError, ParseError, Result};
use crate::math::{self, argmax, softmax_rows, Matrix};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::Rng;
use crate::NUM_CLASSES;

pub const STANDARD_HIDDEN: [usize; 2] = [256, 128];
pub const STANDARD_INPUT_DIMS: [usize; 2] = [784, 1024];

/// Rows processed per forward pass during evaluation.
const EVAL_CHUNK: usize = 512;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CPCF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Set when the shape departs from the standard widths or input sizes.
    pub overridden: bool,
}

impl MlpShape {
    /// The standard architecture. `input_dim` must be 784 or 1024.
    pub fn standard(input_dim: usize) -> Result<Self> {
        if !STANDARD_INPUT_DIMS.contains(&input_dim) {
            return Err(CoreError::contract(format!(
                "input_dim {input_dim} is not one of {STANDARD_INPUT_DIMS:?}; use MlpShape::custom to override"
            )));
        }
        Ok(MlpShape {
            input_dim,
            hidden1: STANDARD_HIDDEN[0],
            hidden2: STANDARD_HIDDEN[1],
            overridden: false,
        })
    }

    /// Any input size and hidden widths. Output stays at ten classes.
    pub fn custom(input_dim: usize, hidden1: usize, hidden2: usize) -> Self {
        MlpShape {
            input_dim,
            hidden1,
            hidden2,
            overridden: true,
        }
    }

    pub fn param_shapes(&self) -> [(usize, usize); 6] {
        [
            (self.input_dim, self.hidden1),
            (1, self.hidden1),
            (self.hidden1, self.hidden2),
            (1, self.hidden2),
            (self.hidden2, NUM_CLASSES),
            (1, NUM_CLASSES),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// One tensor per model parameter, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Matrix>,
}

/// Gradients mirror the parameter layout exactly.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn zeros(shape: &MlpShape) -> Self {
        ParamSet {
            tensors: shape.param_shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Matrix>) -> Self {
        ParamSet { tensors }
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.same_shape(b))
    }

    pub(crate) fn check_layout(&self, other: &ParamSet, op: &'static str) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(CoreError::shape(op, (self.tensors.len(), 0), (other.tensors.len(), 0)));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if !a.same_shape(b) {
                return Err(CoreError::shape(op, a.shape(), b.shape()));
            }
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_layout(other, "add_scaled")?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.data().iter().copied())
    }

    pub fn fingerprint(&self) -> u64 {
        math::fingerprint(&self.tensors)
    }
}

/// Activations retained from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    z1: Matrix,
    a1: Matrix,
    z2: Matrix,
    a2: Matrix,
    logits: Matrix,
}

impl ForwardCache {
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.x.rows()
    }
}

/// A differentiable penalty added to the training loss.
pub trait Regularizer {
    /// Penalty value and its gradient with respect to every parameter.
    fn penalty(&self, params: &ParamSet) -> Result<(f64, GradSet)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    shape: MlpShape,
    params: ParamSet,
    pub optimizer: Optimizer,
}

/// Standard-shape model for `input_dim` with Glorot-uniform weights, zero biases
/// and an Adam optimizer at the default learning rate.
pub fn init_model(input_dim: usize, rng: &mut Rng) -> Result<MlpModel> {
    let shape = MlpShape::standard(input_dim)?;
    Ok(MlpModel::new(
        shape,
        Optimizer::new(OptimizerKind::Adam, crate::continual::DEFAULT_LR),
        rng,
    ))
}

fn relu_in_place(m: &mut Matrix) {
    m.data_mut().iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut z = math::matmul(x, w)?;
    z.add_row_vector(b.data())?;
    Ok(z)
}

impl MlpModel {
    pub fn new(shape: MlpShape, optimizer: Optimizer, rng: &mut Rng) -> Self {
        let mut params = ParamSet::zeros(&shape);
        for (i, t) in params.tensors.iter_mut().enumerate() {
            if i % 2 == 1 {
                continue;
            }
            let (fan_in, fan_out) = t.shape();
            let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            t.data_mut().iter_mut().for_each(|v| *v = rng.uniform(-bound, bound));
        }
        MlpModel {
            shape,
            params,
            optimizer,
        }
    }

    /// Model with caller-supplied parameters (layout must match `shape`).
    pub fn from_params(shape: MlpShape, params: ParamSet, optimizer: Optimizer) -> Result<Self> {
        params.check_layout(&ParamSet::zeros(&shape), "from_params")?;
        Ok(MlpModel {
            shape,
            params,
            optimizer,
        })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.shape.input_dim {
            return Err(CoreError::shape(
                "forward",
                x.shape(),
                (self.shape.input_dim, self.shape.hidden1),
            ));
        }
        let p = &self.params.tensors;
        let z1 = affine(x, &p[0], &p[1])?;
        let mut a1 = z1.clone();
        relu_in_place(&mut a1);
        let z2 = affine(&a1, &p[2], &p[3])?;
        let mut a2 = z2.clone();
        relu_in_place(&mut a2);
        let logits = affine(&a2, &p[4], &p[5])?;
        let cache = ForwardCache {
            x: x.clone(),
            z1,
            a1,
            z2,
            a2,
            logits: logits.clone(),
        };
        Ok((logits, cache))
    }

    /// Gradients of mean cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<GradSet> {
        let n = cache.batch_size();
        if labels.len() != n {
            return Err(CoreError::shape("backward", (n, NUM_CLASSES), (labels.len(), 1)));
        }
        let mut delta = softmax_rows(&cache.logits);
        for (r, &y) in labels.iter().enumerate() {
            if y >= NUM_CLASSES {
                return Err(CoreError::LabelOutOfRange {
                    label: y,
                    classes: NUM_CLASSES,
                });
            }
            let v = delta.get(r, y);
            delta.set(r, y, v - 1.0);
        }
        delta.scale(1.0 / n.max(1) as f64);
        self.backprop(cache, delta)
    }

    /// Propagates `d loss / d logits` back through the network.
    fn backprop(&self, cache: &ForwardCache, delta3: Matrix) -> Result<GradSet> {
        let p = &self.params.tensors;
        let dw3 = math::matmul_tn(&cache.a2, &delta3)?;
        let db3 = delta3.column_sums();

        let mut delta2 = math::matmul_nt(&delta3, &p[4])?;
        mask_relu(&mut delta2, &cache.z2);
        let dw2 = math::matmul_tn(&cache.a1, &delta2)?;
        let db2 = delta2.column_sums();

        let mut delta1 = math::matmul_nt(&delta2, &p[2])?;
        mask_relu(&mut delta1, &cache.z1);
        let dw1 = math::matmul_tn(&cache.x, &delta1)?;
        let db1 = delta1.column_sums();

        Ok(ParamSet::from_tensors(vec![dw1, db1, dw2, db2, dw3, db3]))
    }

    /// Mean cross-entropy and its gradient on one batch.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, GradSet)> {
        let (logits, cache) = self.forward(x)?;
        let loss = math::cross_entropy(&softmax_rows(&logits), labels)?;
        let grads = self.backward(&cache, labels)?;
        Ok((loss, grads))
    }

    /// Total loss (cross-entropy plus optional penalty) and its gradient.
    pub fn objective(
        &self,
        x: &Matrix,
        labels: &[usize],
        reg: Option<&dyn Regularizer>,
    ) -> Result<(f64, GradSet)> {
        let (mut loss, mut grads) = self.loss_and_grad(x, labels)?;
        if let Some(reg) = reg {
            let (pen, pgrad) = reg.penalty(&self.params)?;
            loss += pen;
            grads.add_scaled(&pgrad, 1.0)?;
        }
        Ok((loss, grads))
    }

    /// One shuffled pass over `data` in mini-batches. Returns the sample-weighted
    /// mean of the per-batch objective.
    pub fn train_epoch(
        &mut self,
        data: &LabeledSet,
        batch_size: usize,
        reg: Option<&dyn Regularizer>,
        rng: &mut Rng,
    ) -> Result<f64> {
        if data.is_empty() {
            return Err(CoreError::contract("train_epoch on an empty dataset"));
        }
        if batch_size == 0 {
            return Err(CoreError::contract("batch_size must be at least 1"));
        }
        let order = rng.permutation(data.len());
        let mut total = 0.0;
        for idx in order.chunks(batch_size) {
            let x = data.x().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.y()[i]).collect();
            let (loss, grads) = self.objective(&x, &y, reg)?;
            total += loss * idx.len() as f64;
            self.optimizer.step(self.params.tensors_mut(), grads.tensors())?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.shape.input_dim {
            return Err(CoreError::shape(
                "predict_proba",
                x.shape(),
                (self.shape.input_dim, self.shape.hidden1),
            ));
        }
        if x.rows() <= EVAL_CHUNK {
            return Ok(softmax_rows(&self.forward(x)?.0));
        }
        let mut parts = Vec::with_capacity(x.rows().div_ceil(EVAL_CHUNK));
        let mut start = 0;
        while start < x.rows() {
            let end = (start + EVAL_CHUNK).min(x.rows());
            let idx: Vec<usize> = (start..end).collect();
            parts.push(softmax_rows(&self.forward(&x.select_rows(&idx))?.0));
            start = end;
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        Matrix::vstack(&refs)
    }

    /// Number of rows whose argmax (lowest index on ties) equals the label.
    pub fn correct_count(&self, x: &Matrix, labels: &[usize]) -> Result<usize> {
        if labels.len() != x.rows() {
            return Err(CoreError::shape("accuracy", x.shape(), (labels.len(), 1)));
        }
        let probs = self.predict_proba(x)?;
        Ok(count_correct(&probs, labels))
    }

    /// Fraction of correctly classified rows; 0 for an empty set.
    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        Ok(self.correct_count(x, labels)? as f64 / labels.len() as f64)
    }

    /// Little-endian checkpoint: magic, version, input dim, layer count, layer
    /// widths, then every tensor's values in declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.shape.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            CHECKPOINT_VERSION,
            self.shape.input_dim as u32,
            3,
            self.shape.hidden1 as u32,
            self.shape.hidden2 as u32,
            NUM_CLASSES as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.params.iter_values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], optimizer: Optimizer) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ParseError::BadMagic {
                offset: 0,
                found: u32::from_be_bytes([magic[0], magic[1], magic[2], magic[3]]),
            }
            .into());
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ParseError::Version { offset: 4, version }.into());
        }
        let input_dim = cur.u32()? as usize;
        let layers = cur.u32()?;
        if layers != 3 {
            return Err(dim_error(12, format!("expected 3 layers, found {layers}")));
        }
        let h1 = cur.u32()? as usize;
        let h2 = cur.u32()? as usize;
        let out = cur.u32()? as usize;
        if out != NUM_CLASSES {
            return Err(dim_error(24, format!("expected {NUM_CLASSES} outputs, found {out}")));
        }
        let shape = if h1 == STANDARD_HIDDEN[0] && h2 == STANDARD_HIDDEN[1] && STANDARD_INPUT_DIMS.contains(&input_dim) {
            MlpShape::standard(input_dim)?
        } else {
            MlpShape::custom(input_dim, h1, h2)
        };
        let mut tensors = Vec::with_capacity(6);
        for (r, c) in shape.param_shapes() {
            let n = r.checked_mul(c).ok_or_else(|| dim_error(cur.pos, format!("{r}x{c} overflows")))?;
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| dim_error(cur.pos, "size overflow".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect();
            tensors.push(Matrix::from_vec(r, c, data)?);
        }
        if cur.pos != bytes.len() {
            return Err(dim_error(cur.pos, format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        MlpModel::from_params(shape, ParamSet::from_tensors(tensors), optimizer)
    }
}

fn dim_error(offset: usize, detail: alloc::string::String) -> CoreError {
    ParseError::DimMismatch { offset, detail }.into()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ParseError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ParseError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ParseError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn mask_relu(delta: &mut Matrix, pre_activation: &Matrix) {
    for (d, &z) in delta.data_mut().iter_mut().zip(pre_activation.data()) {
        if z <= 0.0 {
            *d = 0.0;
        }
    }
}

pub(crate) fn count_correct(probs: &Matrix, labels: &[usize]) -> usize {
    probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::cross_entropy;

    fn tiny_shape() -> MlpShape {
        MlpShape::custom(5, 6, 4)
    }

    fn random_batch(n: usize, dim: usize, rng: &mut Rng) -> (Matrix, Vec<usize>) {
        let x = Matrix::from_fn(n, dim, |_, _| rng.uniform(-1.0, 1.0));
        let y = (0..n).map(|_| rng.below(NUM_CLASSES)).collect();
        (x, y)
    }

    fn sgd(lr: f64) -> Optimizer {
        Optimizer::new(OptimizerKind::Sgd, lr)
    }

    #[test]
    fn standard_shapes() {
        let mut rng = Rng::new(1);
        let m = init_model(784, &mut rng).unwrap();
        assert_eq!(m.params().tensors()[0].shape(), (784, 256));
        let m = init_model(1024, &mut rng).unwrap();
        assert_eq!(m.params().tensors()[0].shape(), (1024, 256));
        assert_eq!(m.params().tensors()[4].shape(), (128, 10));
        assert!(init_model(100, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic_and_glorot_bounded() {
        let a = init_model(784, &mut Rng::new(9)).unwrap();
        let b = init_model(784, &mut Rng::new(9)).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let bound = libm::sqrt(6.0 / (784.0 + 256.0));
        let w1 = &a.params().tensors()[0];
        assert!(w1.data().iter().all(|v| v.abs() <= bound));
        assert!(a.params().tensors()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_model_is_uniform() {
        let shape = tiny_shape();
        let m = MlpModel::from_params(shape, ParamSet::zeros(&shape), sgd(0.1)).unwrap();
        let (x, _) = random_batch(3, 5, &mut Rng::new(2));
        let (logits, _) = m.forward(&x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let p = m.predict_proba(&x).unwrap();
        assert!(p.data().iter().all(|v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn hand_set_single_path() {
        // x -> unit 0 -> unit 0 -> logit 3, everything else zero
        let shape = MlpShape::custom(2, 1, 1);
        let mut p = ParamSet::zeros(&shape);
        let t = p.tensors_mut();
        t[0] = Matrix::from_rows(&[[2.0], [-1.0]]).unwrap();
        t[1] = Matrix::from_rows(&[[0.5]]).unwrap();
        t[2] = Matrix::from_rows(&[[3.0]]).unwrap();
        t[3] = Matrix::from_rows(&[[-1.0]]).unwrap();
        t[4].set(0, 3, 2.0);
        t[5].set(0, 7, 0.25);
        let m = MlpModel::from_params(shape, p, sgd(0.0)).unwrap();
        let x = Matrix::from_rows(&[[1.0, 1.0], [0.0, 4.0]]).unwrap();
        let (logits, _) = m.forward(&x).unwrap();
        // row 0: h1 = relu(2 - 1 + 0.5) = 1.5, h2 = relu(4.5 - 1) = 3.5, logit3 = 7
        assert_eq!(logits.get(0, 3), 7.0);
        assert_eq!(logits.get(0, 7), 0.25);
        // row 1: h1 = relu(-4 + 0.5) = 0, h2 = relu(-1) = 0
        assert_eq!(logits.get(1, 3), 0.0);
        assert_eq!(logits.get(1, 7), 0.25);
    }

    #[test]
    fn forward_matches_per_neuron_loops() {
        let mut rng = Rng::new(4);
        let shape = MlpShape::custom(7, 9, 8);
        let m = MlpModel::new(shape, sgd(0.0), &mut rng);
        let (x, _) = random_batch(4, 7, &mut rng);
        let (logits, _) = m.forward(&x).unwrap();
        let t = m.params().tensors();
        let layer = |input: &[f64], w: &Matrix, b: &Matrix, relu: bool| -> Vec<f64> {
            (0..w.cols())
                .map(|j| {
                    let mut s = b.get(0, j);
                    for (i, v) in input.iter().enumerate() {
                        s += v * w.get(i, j);
                    }
                    if relu { s.max(0.0) } else { s }
                })
                .collect()
        };
        for r in 0..4 {
            let h1 = layer(x.row(r), &t[0], &t[1], true);
            let h2 = layer(&h1, &t[2], &t[3], true);
            let out = layer(&h2, &t[4], &t[5], false);
            for c in 0..NUM_CLASSES {
                assert!((out[c] - logits.get(r, c)).abs() <= 1e-12);
            }
        }
    }

    fn numeric_loss(m: &MlpModel, x: &Matrix, y: &[usize]) -> f64 {
        cross_entropy(&m.predict_proba(x).unwrap(), y).unwrap()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = Rng::new(5);
        let m = MlpModel::new(tiny_shape(), sgd(0.0), &mut rng);
        let (x, y) = random_batch(8, 5, &mut rng);
        let (_, grads) = m.loss_and_grad(&x, &y).unwrap();
        let h = 1e-5;
        for (ti, g) in grads.tensors().iter().enumerate() {
            for k in 0..g.data().len() {
                let mut plus = m.clone();
                plus.params_mut().tensors_mut()[ti].data_mut()[k] += h;
                let mut minus = m.clone();
                minus.params_mut().tensors_mut()[ti].data_mut()[k] -= h;
                let fd = (numeric_loss(&plus, &x, &y) - numeric_loss(&minus, &x, &y)) / (2.0 * h);
                let an = g.data()[k];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-7);
                assert!(rel <= 1e-4, "tensor {ti} idx {k}: fd {fd} analytic {an}");
            }
        }
    }

    #[test]
    fn output_bias_gradient_is_mean_residual() {
        let mut rng = Rng::new(6);
        let m = MlpModel::new(tiny_shape(), sgd(0.0), &mut rng);
        let (x, y) = random_batch(5, 5, &mut rng);
        let (_, grads) = m.loss_and_grad(&x, &y).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for c in 0..NUM_CLASSES {
            let want: f64 = (0..5)
                .map(|r| p.get(r, c) - if y[r] == c { 1.0 } else { 0.0 })
                .sum::<f64>()
                / 5.0;
            assert!((grads.tensors()[5].get(0, c) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_input_kills_first_layer_weight_gradient() {
        let mut rng = Rng::new(7);
        let m = MlpModel::new(tiny_shape(), sgd(0.0), &mut rng);
        let x = Matrix::zeros(4, 5);
        let (_, grads) = m.loss_and_grad(&x, &[0, 1, 2, 3]).unwrap();
        assert!(grads.tensors()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = MlpModel::new(tiny_shape(), sgd(0.0), &mut Rng::new(1));
        assert!(m.forward(&Matrix::zeros(2, 4)).is_err());
        assert!(m.predict_proba(&Matrix::zeros(2, 6)).is_err());
    }

    fn blob_set(rng: &mut Rng) -> LabeledSet {
        // two linearly separable clusters in 5-d
        let n = 80;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let center = if c == 0 { 0.2 } else { 0.8 };
            rows.push((0..5).map(|_| (center + 0.05 * rng.gaussian()).clamp(0.0, 1.0)).collect::<Vec<_>>());
            y.push(c);
        }
        LabeledSet::new(Matrix::from_rows(&rows).unwrap(), y).unwrap()
    }

    #[test]
    fn zero_lr_leaves_params_and_reports_eval_loss() {
        let mut rng = Rng::new(8);
        let data = blob_set(&mut rng);
        let mut m = MlpModel::new(tiny_shape(), Optimizer::new(OptimizerKind::Adam, 0.0), &mut rng);
        let before = m.fingerprint();
        let eval = numeric_loss(&m, data.x(), data.y());
        let loss = m.train_epoch(&data, 16, None, &mut rng).unwrap();
        assert_eq!(m.fingerprint(), before);
        assert!((loss - eval).abs() < 1e-12);
    }

    #[test]
    fn blobs_become_separable() {
        let mut rng = Rng::new(10);
        let data = blob_set(&mut rng);
        let mut m = MlpModel::new(tiny_shape(), Optimizer::new(OptimizerKind::Adam, 0.01), &mut rng);
        for _ in 0..20 {
            m.train_epoch(&data, 8, None, &mut rng).unwrap();
        }
        assert!(m.accuracy(data.x(), data.y()).unwrap() >= 0.95);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = Rng::new(12);
            let data = blob_set(&mut rng);
            let mut m = MlpModel::new(tiny_shape(), Optimizer::new(OptimizerKind::Adam, 0.01), &mut rng);
            m.train_epoch(&data, 8, None, &mut rng).unwrap();
            m.fingerprint()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn full_batch_epoch_is_one_gradient_step() {
        let mut rng = Rng::new(13);
        let data = blob_set(&mut rng);
        let m0 = MlpModel::new(tiny_shape(), sgd(0.3), &mut rng);
        let mut trained = m0.clone();
        trained.train_epoch(&data, data.len(), None, &mut rng).unwrap();
        // the shuffle only reorders rows; the mean gradient is order-free up to rounding
        let (_, g) = m0.loss_and_grad(data.x(), data.y()).unwrap();
        let mut want = m0.params().clone();
        want.add_scaled(&g, -0.3).unwrap();
        for (a, b) in trained.params().iter_values().zip(want.iter_values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_does_not_mutate() {
        let mut rng = Rng::new(14);
        let m = MlpModel::new(tiny_shape(), sgd(0.1), &mut rng);
        let before = m.clone();
        let (x, y) = random_batch(10, 5, &mut rng);
        m.predict_proba(&x).unwrap();
        m.accuracy(&x, &y).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn accuracy_cases() {
        // constant predictor of class 0 on balanced data
        let shape = tiny_shape();
        let mut p = ParamSet::zeros(&shape);
        p.tensors_mut()[5].set(0, 0, 5.0);
        let m = MlpModel::from_params(shape, p, sgd(0.0)).unwrap();
        let x = Matrix::zeros(100, 5);
        let y: Vec<usize> = (0..100).map(|i| i % 10).collect();
        assert_eq!(m.accuracy(&x, &y).unwrap(), 0.1);

        // per-sample loop oracle on a random model
        let mut rng = Rng::new(15);
        let m = MlpModel::new(shape, sgd(0.0), &mut rng);
        let (x, y) = random_batch(700, 5, &mut rng);
        let probs = m.predict_proba(&x).unwrap();
        let mut hits = 0;
        for r in 0..700 {
            let row = probs.row(r);
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if row[c] > row[best] {
                    best = c;
                }
            }
            if best == y[r] {
                hits += 1;
            }
        }
        assert_eq!(m.accuracy(&x, &y).unwrap(), hits as f64 / 700.0);
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut rng = Rng::new(16);
        let m = MlpModel::new(MlpShape::custom(3, 4, 2), sgd(0.1), &mut rng);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"CPCF");
        assert_eq!(bytes.len(), 28 + 8 * m.shape().param_count());
        let back = MlpModel::from_bytes(&bytes, sgd(0.1)).unwrap();
        assert_eq!(back, m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            MlpModel::from_bytes(&bad, sgd(0.1)),
            Err(CoreError::Parse(ParseError::BadMagic { offset: 0, .. }))
        ));
        let short = &bytes[..bytes.len() - 1];
        assert!(matches!(
            MlpModel::from_bytes(short, sgd(0.1)),
            Err(CoreError::Parse(ParseError::Truncated { .. }))
        ));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(
            MlpModel::from_bytes(&ver, sgd(0.1)),
            Err(CoreError::Parse(ParseError::Version { version: 9, .. }))
        ));
    }

    #[test]
    fn standard_checkpoint_keeps_standard_shape() {
        let m = init_model(784, &mut Rng::new(1)).unwrap();
        let back = MlpModel::from_bytes(&m.to_bytes(), m.optimizer.clone()).unwrap();
        assert!(!back.shape().overridden);
        assert_eq!(back.fingerprint(), m.fingerprint());
    }
}
