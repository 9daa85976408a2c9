//! MLP embedding network: forward/backward passes, the Adam optimiser with a
//! staged learning-rate schedule, and bit-exact binary checkpoints.
//!
//! The network is a plain multilayer perceptron: every hidden layer is an
//! affine map followed by ReLU or tanh, and the final layer is affine with no
//! activation, so embeddings live in an unconstrained Euclidean space.
//! Backpropagation is hand-rolled against a [`ForwardTape`] that records each
//! layer's input and pre-activation values.
//!
//! Convention for ReLU at exactly zero: the derivative is taken to be 0 (the
//! subgradient at the kink that keeps dead units dead).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::linalg::{Matrix, Vector};
use crate::rng::Rng;
use crate::Scalar;

/// Errors from embedder construction, inference, optimisation and IO.
#[derive(Debug, Error)]
pub enum EmbedderError {
    #[error("input has dimension {got}, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("layer {layer}: input dimension {got} does not match previous output {expected}")]
    LayerChain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("layer {layer}: bias length {bias} does not match {rows} rows")]
    BiasShape {
        layer: usize,
        rows: usize,
        bias: usize,
    },
    #[error("network needs at least one layer")]
    Empty,
    #[error("tape or gradient buffer does not match network shape")]
    ShapeMismatch,
    #[error("non-finite value in gradients; update aborted")]
    NonFiniteGradient,
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint encodes unknown activation tag {0}")]
    BadActivationTag(u8),
    #[error("checkpoint is corrupt: {0}")]
    Corrupt(&'static str),
}

/// Hidden-layer nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    /// Applies the nonlinearity to one pre-activation value.
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation value.
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
        }
    }

    /// One-byte id used in checkpoints.
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, EmbedderError> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(EmbedderError::BadActivationTag(other)),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

/// One affine layer: `z = weight * x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vector<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros_like(other: &Layer<T>) -> Self {
        Self {
            weight: Matrix::zeros(other.weight.rows(), other.weight.cols()),
            bias: Vector::zeros(other.bias.len()),
        }
    }
}

/// Parameters of an MLP embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderParams<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// Per-layer values recorded by [`EmbedderParams::forward`] for backprop:
/// the input to each layer and its pre-activation output.
#[derive(Clone, Debug)]
pub struct ForwardTape<T> {
    inputs: Vec<Vector<T>>,
    preacts: Vec<Vector<T>>,
}

impl<T: Scalar> EmbedderParams<T> {
    /// Random network with the given layer widths, e.g. `[34, 64, 32]` for a
    /// 34-dim input, one hidden layer of 64 units and a 32-dim embedding.
    ///
    /// Weights are drawn uniformly from `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// in row-major order, layer by layer; biases start at zero. The draw
    /// order is fixed, so a seed fully determines the initialisation.
    ///
    /// Panics if fewer than two widths are given or any width is zero.
    pub fn new(layer_widths: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(
            layer_widths.len() >= 2,
            "need at least input and output widths, got {layer_widths:?}"
        );
        assert!(
            layer_widths.iter().all(|&w| w > 0),
            "zero-width layer in {layer_widths:?}"
        );
        let mut layers = Vec::with_capacity(layer_widths.len() - 1);
        for w in layer_widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Matrix::from_fn(fan_out, fan_in, |_, _| {
                T::of(rng.uniform_in(-bound, bound))
            });
            layers.push(Layer {
                weight,
                bias: Vector::zeros(fan_out),
            });
        }
        Self { layers, activation }
    }

    /// Builds a network from explicit layers, validating that consecutive
    /// shapes chain together.
    pub fn from_layers(
        layers: Vec<Layer<T>>,
        activation: Activation,
    ) -> Result<Self, EmbedderError> {
        if layers.is_empty() {
            return Err(EmbedderError::Empty);
        }
        let mut expected_in = layers[0].weight.cols();
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.cols() != expected_in {
                return Err(EmbedderError::LayerChain {
                    layer: i,
                    expected: expected_in,
                    got: layer.weight.cols(),
                });
            }
            if layer.bias.len() != layer.weight.rows() {
                return Err(EmbedderError::BiasShape {
                    layer: i,
                    rows: layer.weight.rows(),
                    bias: layer.bias.len(),
                });
            }
            expected_in = layer.weight.rows();
        }
        Ok(Self { layers, activation })
    }

    /// Single-layer network computing the identity map (useful as a neutral
    /// embedder when evaluating raw features).
    pub fn identity(dim: usize) -> Self {
        let weight = Matrix::from_fn(dim, dim, |i, j| if i == j { T::one() } else { T::zero() });
        Self {
            layers: vec![Layer {
                weight,
                bias: Vector::zeros(dim),
            }],
            activation: Activation::Relu,
        }
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable layer access for optimisers and tests. Callers must preserve
    /// the shapes; use [`EmbedderParams::from_layers`] to restructure.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// True when every weight and bias is finite.
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    /// Runs the network and records the tape needed by [`Self::backward`].
    pub fn forward(&self, x: &Vector<T>) -> Result<(Vector<T>, ForwardTape<T>), EmbedderError> {
        if x.len() != self.input_dim() {
            return Err(EmbedderError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.matvec(&h);
            z.axpy(T::one(), &layer.bias);
            inputs.push(h);
            // Hidden layers pass through the activation; the last layer is
            // linear so embeddings are unconstrained.
            h = if i + 1 < n {
                Vector::new(z.iter().map(|&v| self.activation.apply(v)).collect())
            } else {
                z.clone()
            };
            preacts.push(z);
        }
        Ok((h, ForwardTape { inputs, preacts }))
    }

    /// Inference-only forward pass.
    pub fn embed(&self, x: &Vector<T>) -> Result<Vector<T>, EmbedderError> {
        self.forward(x).map(|(out, _)| out)
    }

    /// Backpropagates `grad_out` (the loss gradient at the network output)
    /// through the tape, accumulating parameter gradients into `grads` and
    /// returning the gradient with respect to the network input.
    ///
    /// The tape must come from [`Self::forward`] on this network, and `grads`
    /// must be shaped like these parameters (e.g. by [`GradientBuffer::new`]).
    pub fn backward(
        &self,
        tape: &ForwardTape<T>,
        grad_out: &Vector<T>,
        grads: &mut GradientBuffer<T>,
    ) -> Result<Vector<T>, EmbedderError> {
        let n = self.layers.len();
        if tape.inputs.len() != n || tape.preacts.len() != n || grads.layers.len() != n {
            return Err(EmbedderError::ShapeMismatch);
        }
        if grad_out.len() != self.output_dim() {
            return Err(EmbedderError::ShapeMismatch);
        }
        // g holds dL/dz for the current layer, starting from the linear output.
        let mut g = grad_out.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let gl = &mut grads.layers[l];
            if gl.weight.rows() != layer.weight.rows()
                || gl.weight.cols() != layer.weight.cols()
                || tape.inputs[l].len() != layer.weight.cols()
                || tape.preacts[l].len() != layer.weight.rows()
                || g.len() != layer.weight.rows()
            {
                return Err(EmbedderError::ShapeMismatch);
            }
            gl.bias.axpy(T::one(), &g);
            gl.weight.add_outer(T::one(), &g, &tape.inputs[l]);
            let gx = layer.weight.matvec_t(&g);
            g = if l > 0 {
                let prev_z = &tape.preacts[l - 1];
                Vector::new(
                    gx.iter()
                        .zip(prev_z.iter())
                        .map(|(&gi, &zi)| gi * self.activation.derivative(zi))
                        .collect(),
                )
            } else {
                gx
            };
        }
        Ok(g)
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Clone, Debug)]
pub struct GradientBuffer<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> GradientBuffer<T> {
    /// Zero buffer shaped like `params`.
    pub fn new(params: &EmbedderParams<T>) -> Self {
        Self {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Resets all accumulated gradients to zero.
    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill_zero();
            l.bias.fill_zero();
        }
    }

    /// True when every accumulated gradient is finite.
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

/// Adam hyperparameters and the staged learning-rate schedule.
///
/// The step size holds at `alpha0` for the first `t0` epochs, decays
/// exponentially to `alpha0 * 1e-3` at epoch `t1`, and stays clamped there.
/// The first-moment coefficient starts at `beta1_hi` and drops to `beta1_lo`
/// once the decay phase begins.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSchedule {
    pub alpha0: f64,
    pub t0: f64,
    pub t1: f64,
    pub beta1_hi: f64,
    pub beta1_lo: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerSchedule {
    fn default() -> Self {
        Self {
            alpha0: 3e-4,
            t0: 35.0,
            t1: 65.0,
            beta1_hi: 0.9,
            beta1_lo: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Learning rate at epoch `t` (continuous, so fractional epochs interpolate
/// smoothly): `alpha0` on `[0, t0]`, then `alpha0 * 0.001^((t-t0)/(t1-t0))`
/// until `t1`, then clamped at `alpha0 * 0.001`.
pub fn learning_rate(schedule: &OptimizerSchedule, t: f64) -> f64 {
    if t <= schedule.t0 {
        schedule.alpha0
    } else if t <= schedule.t1 {
        let frac = (t - schedule.t0) / (schedule.t1 - schedule.t0);
        schedule.alpha0 * 1e-3f64.powf(frac)
    } else {
        schedule.alpha0 * 1e-3
    }
}

/// First-moment coefficient at epoch `t`: `beta1_hi` through the flat phase,
/// `beta1_lo` once the learning-rate decay starts.
pub fn beta1(schedule: &OptimizerSchedule, t: f64) -> f64 {
    if t <= schedule.t0 {
        schedule.beta1_hi
    } else {
        schedule.beta1_lo
    }
}

/// Adam first/second moment estimates, shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Layer<T>>,
    v: Vec<Layer<T>>,
    steps: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh all-zero state for `params`.
    pub fn new(params: &EmbedderParams<T>) -> Self {
        Self {
            m: params.layers.iter().map(Layer::zeros_like).collect(),
            v: params.layers.iter().map(Layer::zeros_like).collect(),
            steps: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// Applies one Adam update in place, with bias-corrected moments and the
/// schedule evaluated at epoch `t`.
///
/// If any gradient is non-finite the update is rejected: parameters and
/// optimiser state are left untouched and an error is returned, so a NaN can
/// never silently poison a checkpoint.
pub fn adam_step<T: Scalar>(
    params: &mut EmbedderParams<T>,
    grads: &GradientBuffer<T>,
    state: &mut AdamState<T>,
    schedule: &OptimizerSchedule,
    t: f64,
) -> Result<(), EmbedderError> {
    if grads.layers.len() != params.layers.len() {
        return Err(EmbedderError::ShapeMismatch);
    }
    for (g, p) in grads.layers.iter().zip(&params.layers) {
        if g.weight.rows() != p.weight.rows()
            || g.weight.cols() != p.weight.cols()
            || g.bias.len() != p.bias.len()
        {
            return Err(EmbedderError::ShapeMismatch);
        }
    }
    if !grads.is_finite() {
        return Err(EmbedderError::NonFiniteGradient);
    }

    state.steps += 1;
    let b1 = T::of(beta1(schedule, t));
    let b2 = T::of(schedule.beta2);
    let alpha = T::of(learning_rate(schedule, t));
    let eps = T::of(schedule.epsilon);
    // Bias correction uses the current beta values and the global step count.
    let steps = state.steps as i32;
    let corr1 = T::one() - b1.powi(steps);
    let corr2 = T::one() - b2.powi(steps);

    for (li, grad_layer) in grads.layers.iter().enumerate() {
        let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                p[i] = p[i] - alpha * m_hat / (v_hat.sqrt() + eps);
            }
        };
        update(
            params.layers[li].weight.as_mut_slice(),
            grad_layer.weight.as_slice(),
            state.m[li].weight.as_mut_slice(),
            state.v[li].weight.as_mut_slice(),
        );
        update(
            params.layers[li].bias.as_mut_slice(),
            grad_layer.bias.as_slice(),
            state.m[li].bias.as_mut_slice(),
            state.v[li].bias.as_mut_slice(),
        );
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"ATEMLP01";

/// Writes `params` as a little-endian binary checkpoint:
/// magic, activation tag, layer count, then per layer the row/column counts
/// followed by the row-major weights and the bias. Loading the file back
/// reproduces the parameters bit for bit.
pub fn save_checkpoint(params: &EmbedderParams<f64>, path: &Path) -> Result<(), EmbedderError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[params.activation.tag()])?;
    w.write_all(&(params.layers.len() as u32).to_le_bytes())?;
    for layer in &params.layers {
        w.write_all(&(layer.weight.rows() as u32).to_le_bytes())?;
        w.write_all(&(layer.weight.cols() as u32).to_le_bytes())?;
        for &x in layer.weight.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
        for &x in layer.bias.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<EmbedderParams<f64>, EmbedderError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EmbedderError::BadMagic);
    }
    let activation = Activation::from_tag(read_u8(&mut r)?)?;
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 {
        return Err(EmbedderError::Corrupt("zero layers"));
    }
    if n_layers > 1024 {
        return Err(EmbedderError::Corrupt("implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows == 0 || cols == 0 || rows.saturating_mul(cols) > (1 << 28) {
            return Err(EmbedderError::Corrupt("implausible layer shape"));
        }
        let mut weights = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            weights.push(read_f64(&mut r)?);
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(read_f64(&mut r)?);
        }
        layers.push(Layer {
            weight: Matrix::from_row_major(rows, cols, weights),
            bias: Vector::new(bias),
        });
    }
    let mut trailer = [0u8; 1];
    if r.read(&mut trailer)? != 0 {
        return Err(EmbedderError::Corrupt("trailing bytes"));
    }
    EmbedderParams::from_layers(layers, activation)
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8, EmbedderError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EmbedderError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, EmbedderError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
