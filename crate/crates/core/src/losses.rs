//! Triplet losses over squared Euclidean distances, with analytic gradients.
//!
//! For a triplet of embeddings (anchor `a`, positive `p`, negative `n`) write
//! `d_ap = ||a - p||^2` and `d_an = ||a - n||^2`. The library provides:
//!
//! - **hinge**: `max(0, d_ap - d_an + margin)`, the classic margin loss;
//! - **softplus**: `ln(1 + exp(d_ap - d_an))`, the smooth margin-free loss,
//!   equal to `-ln` of the [`triplet_probability`];
//! - **adversarial (ATE)**: the softplus loss after the anchor is shifted by
//!   the *worst-case* perturbation of norm at most `epsilon`. The inner
//!   maximisation has the closed form `delta* = epsilon * (n - p) / ||n - p||`,
//!   which raises the softplus argument by exactly `2 * epsilon * ||n - p||`;
//! - **gaussian-map**: a robust variant that *minimises* over a Gaussian
//!   posterior around the anchor: `min_x [ softplus(||x-p||^2 - ||x-n||^2) +
//!   ||a-x||^2 / (2 sigma^2) ]`, solved by inner gradient descent.
//!
//! All exponentials go through the overflow-safe [`softplus`] / [`sigmoid`]
//! helpers, so losses stay finite for arguments of any magnitude.

use thiserror::Error;

use crate::linalg::Vector;
use crate::rng::Rng;
use crate::Scalar;

/// Errors from loss configuration and evaluation.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("epsilon must be finite and non-negative, got {0}")]
    InvalidEpsilon(f64),
    #[error("sigma must be finite and positive, got {0}")]
    InvalidSigma(f64),
    #[error("inner solver needs at least one step")]
    NoInnerSteps,
    #[error("inner step size must be finite and positive, got {0}")]
    InvalidStepSize(f64),
    #[error("margin must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("inner solver diverged after {0} consecutive objective increases")]
    InnerDiverged(usize),
    #[error("batch contains no triplets")]
    EmptyBatch,
    #[error("triplet index {index} out of range for {len} embeddings")]
    IndexOutOfRange { index: usize, len: usize },
}

/// Overflow-safe `ln(1 + exp(z))`.
///
/// Uses the identity `softplus(z) = max(z, 0) + ln(1 + exp(-|z|))`, whose
/// exponential argument is never positive, so the result is finite for every
/// finite `z` (and exactly `z` once `exp(-z)` underflows).
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Overflow-safe logistic function `1 / (1 + exp(-z))`, evaluated through
/// the decaying exponential on both tails.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// A triplet of embedding views: anchor, same-identity positive, and
/// different-identity negative.
#[derive(Clone, Copy, Debug)]
pub struct Triplet<'a, T> {
    pub anchor: &'a Vector<T>,
    pub positive: &'a Vector<T>,
    pub negative: &'a Vector<T>,
}

impl<'a, T: Scalar> Triplet<'a, T> {
    /// Panics if the three embeddings do not share a dimension.
    pub fn new(anchor: &'a Vector<T>, positive: &'a Vector<T>, negative: &'a Vector<T>) -> Self {
        assert!(
            anchor.len() == positive.len() && anchor.len() == negative.len(),
            "triplet dimensions differ: anchor {}, positive {}, negative {}",
            anchor.len(),
            positive.len(),
            negative.len()
        );
        Self {
            anchor,
            positive,
            negative,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// `(d_ap, d_an)`: squared distances anchor-positive and anchor-negative.
    fn sq_dists(&self) -> (T, T) {
        (
            self.anchor.sq_dist(self.positive),
            self.anchor.sq_dist(self.negative),
        )
    }
}

/// A loss value together with its gradients w.r.t. the three embeddings.
#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad_anchor: Vector<T>,
    pub grad_positive: Vector<T>,
    pub grad_negative: Vector<T>,
}

/// Probability that the triplet is ranked correctly,
/// `1 / (1 + exp(d_ap - d_an))`. Always in `(0, 1)`.
pub fn triplet_probability<T: Scalar>(t: Triplet<'_, T>) -> T {
    let (d_ap, d_an) = t.sq_dists();
    sigmoid(d_an - d_ap)
}

/// Smooth triplet loss `ln(1 + exp(d_ap - d_an))`, the negative log of
/// [`triplet_probability`].
pub fn softplus_triplet_loss<T: Scalar>(t: Triplet<'_, T>) -> LossOutput<T> {
    let (d_ap, d_an) = t.sq_dists();
    let z = d_ap - d_an;
    let s = sigmoid(z);
    let two_s = T::of(2.0) * s;
    LossOutput {
        value: softplus(z),
        // dz/da = 2(n - p), dz/dp = 2(p - a), dz/dn = 2(a - n).
        grad_anchor: t.negative.sub(t.positive).scale(two_s),
        grad_positive: t.positive.sub(t.anchor).scale(two_s),
        grad_negative: t.anchor.sub(t.negative).scale(two_s),
    }
}

/// Margin triplet loss `max(0, d_ap - d_an + margin)`.
///
/// The subgradient at the kink (argument exactly zero) is taken to be zero,
/// so inactive triplets contribute nothing to the update.
pub fn hinge_triplet_loss<T: Scalar>(t: Triplet<'_, T>, margin: T) -> LossOutput<T> {
    let (d_ap, d_an) = t.sq_dists();
    let z = d_ap - d_an + margin;
    if z > T::zero() {
        let two = T::of(2.0);
        LossOutput {
            value: z,
            grad_anchor: t.negative.sub(t.positive).scale(two),
            grad_positive: t.positive.sub(t.anchor).scale(two),
            grad_negative: t.anchor.sub(t.negative).scale(two),
        }
    } else {
        let d = t.dim();
        LossOutput {
            value: T::zero(),
            grad_anchor: Vector::zeros(d),
            grad_positive: Vector::zeros(d),
            grad_negative: Vector::zeros(d),
        }
    }
}

/// Radius of the adversarial ball around the anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationConfig<T> {
    epsilon: T,
}

impl<T: Scalar> PerturbationConfig<T> {
    /// Validates `epsilon >= 0` and finite.
    pub fn new(epsilon: T) -> Result<Self, LossError> {
        if !epsilon.is_finite() || epsilon < T::zero() {
            return Err(LossError::InvalidEpsilon(epsilon.as_f64()));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }
}

/// The anchor perturbation that maximises the softplus loss over the closed
/// `epsilon`-ball: `epsilon * (n - p) / ||n - p||`.
///
/// When the positive and negative coincide (`||n - p|| == 0`) every
/// perturbation changes the loss equally, and the zero vector is returned.
pub fn worst_case_perturbation<T: Scalar>(
    t: Triplet<'_, T>,
    cfg: &PerturbationConfig<T>,
) -> Vector<T> {
    let diff = t.negative.sub(t.positive);
    let gap = diff.norm();
    if gap == T::zero() || cfg.epsilon == T::zero() {
        Vector::zeros(t.dim())
    } else {
        diff.scale(cfg.epsilon / gap)
    }
}

/// Adversarial triplet loss: the softplus loss at the worst-case anchor
/// perturbation, in closed form
/// `ln(1 + exp(d_ap - d_an + 2 * epsilon * ||n - p||))`.
///
/// With `epsilon == 0` (or a degenerate triplet with `p == n`) this reduces
/// bit-for-bit to [`softplus_triplet_loss`], value and gradients alike.
pub fn ate_loss<T: Scalar>(t: Triplet<'_, T>, cfg: &PerturbationConfig<T>) -> LossOutput<T> {
    let diff = t.negative.sub(t.positive);
    let gap = diff.norm();
    if cfg.epsilon == T::zero() || gap == T::zero() {
        return softplus_triplet_loss(t);
    }
    let (d_ap, d_an) = t.sq_dists();
    let two = T::of(2.0);
    let z = d_ap - d_an + two * cfg.epsilon * gap;
    let s = sigmoid(z);
    let two_s = two * s;
    // The margin term 2*eps*||n - p|| adds eps * (p - n)/||n - p|| to the
    // positive gradient direction and the mirror image to the negative one.
    let unit = diff.scale(T::one() / gap);
    let mut grad_positive = t.positive.sub(t.anchor);
    grad_positive.axpy(-cfg.epsilon, &unit);
    let mut grad_negative = t.anchor.sub(t.negative);
    grad_negative.axpy(cfg.epsilon, &unit);
    LossOutput {
        value: softplus(z),
        grad_anchor: diff.scale(two_s),
        grad_positive: grad_positive.scale(two_s),
        grad_negative: grad_negative.scale(two_s),
    }
}

/// Settings for the Gaussian-MAP robust loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMapConfig<T> {
    sigma: T,
    inner_steps: usize,
    inner_step_size: T,
}

impl<T: Scalar> GaussianMapConfig<T> {
    /// Default solver settings for a given anchor noise scale: 50 descent
    /// steps of size `0.1 * sigma^2` (the penalty's natural curvature scale).
    pub fn new(sigma: T) -> Result<Self, LossError> {
        if !sigma.is_finite() || sigma <= T::zero() {
            return Err(LossError::InvalidSigma(sigma.as_f64()));
        }
        Ok(Self {
            sigma,
            inner_steps: 50,
            inner_step_size: T::of(0.1) * sigma * sigma,
        })
    }

    /// Overrides the maximum number of inner descent steps.
    pub fn with_inner_steps(mut self, steps: usize) -> Result<Self, LossError> {
        if steps == 0 {
            return Err(LossError::NoInnerSteps);
        }
        self.inner_steps = steps;
        Ok(self)
    }

    /// Overrides the inner descent step size.
    pub fn with_inner_step_size(mut self, step: T) -> Result<Self, LossError> {
        if !step.is_finite() || step <= T::zero() {
            return Err(LossError::InvalidStepSize(step.as_f64()));
        }
        self.inner_step_size = step;
        Ok(self)
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    pub fn inner_step_size(&self) -> T {
        self.inner_step_size
    }
}

/// Absolute improvement below which the inner descent is considered
/// converged.
const INNER_TOL: f64 = 1e-10;
/// Consecutive objective increases that classify the inner descent as
/// divergent.
const INNER_DIVERGENCE_RUN: usize = 3;

/// Gaussian-MAP robust triplet loss:
/// `min_x [ ln(1 + exp(||x-p||^2 - ||x-n||^2)) + ||a-x||^2 / (2 sigma^2) ]`.
///
/// The inner minimisation runs plain gradient descent from `x = a` with a
/// fixed step, stopping early once the objective improves by less than
/// `1e-10`; three consecutive objective increases abort with
/// [`LossError::InnerDiverged`]. Gradients follow the envelope convention:
/// the minimiser is treated as constant, so
/// `dF/da = (a - x*) / sigma^2`, `dF/dp = 2 s (p - x*)`,
/// `dF/dn = 2 s (x* - n)` with `s = sigmoid(||x*-p||^2 - ||x*-n||^2)`.
pub fn gaussian_map_triplet_loss<T: Scalar>(
    t: Triplet<'_, T>,
    cfg: &GaussianMapConfig<T>,
) -> Result<LossOutput<T>, LossError> {
    let half_inv_var = T::of(0.5) / (cfg.sigma * cfg.sigma);
    let inv_var = T::one() / (cfg.sigma * cfg.sigma);
    let objective = |x: &Vector<T>| {
        let z = x.sq_dist(t.positive) - x.sq_dist(t.negative);
        softplus(z) + t.anchor.sq_dist(x) * half_inv_var
    };

    let mut x = t.anchor.clone();
    let mut f = objective(&x);
    let mut rises = 0usize;
    for _ in 0..cfg.inner_steps {
        let z = x.sq_dist(t.positive) - x.sq_dist(t.negative);
        let s = sigmoid(z);
        // grad F(x) = 2 s (n - p) + (x - a) / sigma^2.
        let mut grad = t.negative.sub(t.positive).scale(T::of(2.0) * s);
        let mut pull = x.sub(t.anchor);
        pull = pull.scale(inv_var);
        grad.axpy(T::one(), &pull);
        let mut next = x.clone();
        next.axpy(-cfg.inner_step_size, &grad);
        let f_next = objective(&next);
        if f_next > f {
            rises += 1;
            if rises >= INNER_DIVERGENCE_RUN {
                return Err(LossError::InnerDiverged(rises));
            }
        } else {
            rises = 0;
        }
        let improvement = f - f_next;
        x = next;
        f = f_next;
        if improvement.abs() <= T::of(INNER_TOL) {
            break;
        }
    }

    let z = x.sq_dist(t.positive) - x.sq_dist(t.negative);
    let s = sigmoid(z);
    let two_s = T::of(2.0) * s;
    Ok(LossOutput {
        value: f,
        grad_anchor: t.anchor.sub(&x).scale(inv_var),
        grad_positive: t.positive.sub(&x).scale(two_s),
        grad_negative: x.sub(t.negative).scale(two_s),
    })
}

/// Report from [`adversarial_oracle`]: two independent estimates of the
/// worst-case loss inside the epsilon ball, compared against the closed form.
#[derive(Clone, Copy, Debug)]
pub struct OracleReport<T> {
    /// Closed-form adversarial loss value.
    pub closed_form: T,
    /// Best softplus loss over uniformly sampled ball perturbations.
    pub mc_best: T,
    /// Softplus loss at the projected-gradient-ascent perturbation.
    pub pga_value: T,
    /// Whether every sampled perturbation stayed at or below the closed form
    /// (up to rounding slack).
    pub mc_within_bound: bool,
    /// Relative gap between the PGA maximum and the closed form.
    pub pga_rel_gap: T,
}

/// Validates the closed-form inner maximisation empirically, without using
/// the closed-form perturbation: Monte-Carlo sampling of the epsilon ball
/// must never beat the closed-form value, and projected gradient ascent
/// (normalised steps, projected back onto the ball) must reach it.
pub fn adversarial_oracle<T: Scalar>(
    t: Triplet<'_, T>,
    cfg: &PerturbationConfig<T>,
    mc_samples: usize,
    pga_steps: usize,
    rng: &mut Rng,
) -> OracleReport<T> {
    let closed_form = ate_loss(t, cfg).value;
    let eps = cfg.epsilon;
    let dim = t.dim();
    // Rounding slack for the "never exceeds" comparison: the closed form and
    // the sampled evaluations take different floating-point routes.
    let slack = T::of(1e-12) * closed_form.abs().max(T::one());

    let perturbed_value = |delta: &Vector<T>| {
        let shifted = t.anchor.add(delta);
        softplus_triplet_loss(Triplet::new(&shifted, t.positive, t.negative)).value
    };

    let mut mc_best = T::neg_infinity();
    let mut mc_within_bound = true;
    for _ in 0..mc_samples {
        let delta = Vector::new(
            rng.ball_point(dim, eps.as_f64())
                .into_iter()
                .map(T::of)
                .collect(),
        );
        let v = perturbed_value(&delta);
        if v > mc_best {
            mc_best = v;
        }
        if v > closed_form + slack {
            mc_within_bound = false;
        }
    }

    // Projected gradient ascent with normalised steps of length eps: delta
    // moves along the loss gradient and is pulled back onto the ball.
    let mut delta = Vector::zeros(dim);
    for _ in 0..pga_steps {
        let shifted = t.anchor.add(&delta);
        let grad = softplus_triplet_loss(Triplet::new(&shifted, t.positive, t.negative)).grad_anchor;
        let gnorm = grad.norm();
        if gnorm == T::zero() {
            break;
        }
        delta.axpy(eps / gnorm, &grad);
        let dnorm = delta.norm();
        if dnorm > eps {
            delta = delta.scale(eps / dnorm);
        }
    }
    let pga_value = perturbed_value(&delta);
    let denom = closed_form.abs().max(T::of(1e-12));
    OracleReport {
        closed_form,
        mc_best,
        pga_value,
        mc_within_bound,
        pga_rel_gap: (closed_form - pga_value).abs() / denom,
    }
}

/// Triplet expressed as indices into a batch's embedding list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletIndices {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Which triplet loss to evaluate, with its parameters.
#[derive(Clone, Debug)]
pub enum LossKind<T> {
    Hinge { margin: T },
    Softplus,
    Ate(PerturbationConfig<T>),
    GaussianMap(GaussianMapConfig<T>),
}

impl<T: Scalar> LossKind<T> {
    /// Stable identifier used in configs and logs.
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hinge { .. } => "hinge",
            LossKind::Softplus => "softplus",
            LossKind::Ate(_) => "ate",
            LossKind::GaussianMap(_) => "gaussian-map",
        }
    }

    /// Evaluates the loss on one triplet.
    pub fn evaluate(&self, t: Triplet<'_, T>) -> Result<LossOutput<T>, LossError> {
        match self {
            LossKind::Hinge { margin } => Ok(hinge_triplet_loss(t, *margin)),
            LossKind::Softplus => Ok(softplus_triplet_loss(t)),
            LossKind::Ate(cfg) => Ok(ate_loss(t, cfg)),
            LossKind::GaussianMap(cfg) => gaussian_map_triplet_loss(t, cfg),
        }
    }
}

/// Mean loss over a batch of triplets, with gradients accumulated per
/// embedding slot.
#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    /// Mean of the per-triplet values, summed left to right.
    pub mean_value: T,
    /// Loss of each triplet, in input order.
    pub per_triplet: Vec<T>,
    /// Gradient of the mean loss w.r.t. each embedding in the batch.
    pub embedding_grads: Vec<Vector<T>>,
}

/// Evaluates `kind` on every triplet and accumulates the gradients of the
/// *mean* loss into one gradient per embedding (an embedding may appear in
/// several triplets and in several roles).
pub fn batch_loss<T: Scalar>(
    embeddings: &[Vector<T>],
    triplets: &[TripletIndices],
    kind: &LossKind<T>,
) -> Result<BatchLoss<T>, LossError> {
    if triplets.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let check = |index: usize| {
        if index >= embeddings.len() {
            Err(LossError::IndexOutOfRange {
                index,
                len: embeddings.len(),
            })
        } else {
            Ok(index)
        }
    };
    let dim = embeddings.first().map_or(0, Vector::len);
    let mut embedding_grads: Vec<Vector<T>> =
        (0..embeddings.len()).map(|_| Vector::zeros(dim)).collect();
    let mut per_triplet = Vec::with_capacity(triplets.len());
    let mut sum = T::zero();
    let weight = T::one() / T::of(triplets.len() as f64);
    for ti in triplets {
        let (a, p, n) = (check(ti.anchor)?, check(ti.positive)?, check(ti.negative)?);
        let out = kind.evaluate(Triplet::new(
            &embeddings[a],
            &embeddings[p],
            &embeddings[n],
        ))?;
        sum = sum + out.value;
        per_triplet.push(out.value);
        embedding_grads[a].axpy(weight, &out.grad_anchor);
        embedding_grads[p].axpy(weight, &out.grad_positive);
        embedding_grads[n].axpy(weight, &out.grad_negative);
    }
    Ok(BatchLoss {
        mean_value: sum / T::of(triplets.len() as f64),
        per_triplet,
        embedding_grads,
    })
}
