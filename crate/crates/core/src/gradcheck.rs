//! Central finite-difference gradient checking.
//!
//! Every analytic gradient in this crate (loss gradients and full network
//! backprop) is validated against a numerical derivative that knows nothing
//! about the analytic formulas: it only re-evaluates the target function at
//! `x ± h` along each coordinate. The check runs in `f64`; with a step around
//! `1e-5` the truncation and rounding errors of well-conditioned functions
//! stay comfortably below a `1e-4` relative tolerance.

/// Settings for a finite-difference check.
#[derive(Clone, Copy, Debug)]
pub struct FdConfig {
    /// Central-difference step `h`.
    pub step: f64,
    /// Maximum allowed relative error per coordinate.
    pub rel_tol: f64,
    /// Denominator floor in the relative error, guarding coordinates where
    /// both gradients are essentially zero.
    pub floor: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            floor: 1e-8,
        }
    }
}

/// Outcome of [`check_gradient`].
#[derive(Clone, Copy, Debug)]
pub struct FdReport {
    /// Largest relative error across coordinates.
    pub max_rel_err: f64,
    /// Coordinate index attaining `max_rel_err`.
    pub worst_coord: usize,
    /// Number of coordinates compared.
    pub n_coords: usize,
    /// Whether every coordinate met the tolerance.
    pub passed: bool,
}

/// Relative discrepancy `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs()).max(floor))
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / (2h)` along
/// coordinate `i`. The argument buffer is restored before returning.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Full finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..buf.len())
        .map(|i| central_difference(f, &mut buf, i, step))
        .collect()
}

/// Relative discrepancy between two gradient vectors, measured in the
/// Euclidean norm: `||a - b|| / max(||a||, ||b||, floor)`.
///
/// Useful when the analytic gradient is only accurate up to an absolute
/// error shared across coordinates (e.g. envelope gradients of an inner
/// solver): individual near-zero coordinates then carry no relative
/// information, but the vector as a whole does.
pub fn vector_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "vector_relative_error: length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Compares `analytic` against the central finite difference of `f` at `x`,
/// coordinate by coordinate.
///
/// Panics if `analytic.len() != x.len()`; that is a harness bug, not a
/// gradient failure.
pub fn check_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    cfg: &FdConfig,
) -> FdReport {
    assert_eq!(
        x.len(),
        analytic.len(),
        "check_gradient: {} coordinates but {} analytic entries",
        x.len(),
        analytic.len()
    );
    let mut buf = x.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_coord = 0;
    for (i, &grad) in analytic.iter().enumerate() {
        let fd = central_difference(f, &mut buf, i, cfg.step);
        let err = relative_error(fd, grad, cfg.floor);
        if err > max_rel_err {
            max_rel_err = err;
            worst_coord = i;
        }
    }
    FdReport {
        max_rel_err,
        worst_coord,
        n_coords: x.len(),
        passed: max_rel_err <= cfg.rel_tol,
    }
}
