//! Per-sensor steady-state Kalman analysis and holding-cost tables.
//!
//! Every sensor observes its own linear process
//!
//! ```text
//! x[k+1] = A x[k] + w[k],      w ~ N(0, Q)
//! y[k]   = C x[k] + v[k],      v ~ N(0, R)
//! ```
//!
//! and runs a local Kalman filter whose posterior error covariance
//! converges to a fixed point `Pbar`. When the fusion center's freshest
//! estimate from a sensor is `tau` steps old, the remote error covariance
//! is the open-loop extrapolation `h^tau(Pbar)` with `h(X) = A X A' + Q`,
//! so the per-step penalty charged for holding time `tau` is
//! `Tr(h^tau(Pbar))`. This module computes `Pbar` and tabulates those
//! traces for `tau = 0..=tau_max`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default max-abs-entry tolerance for the Riccati fixed-point iteration.
pub const DEFAULT_RICCATI_TOL: f64 = 1e-10;
/// Default iteration cap for the Riccati fixed-point iteration.
pub const DEFAULT_RICCATI_MAX_ITER: usize = 100_000;
/// Eigenvalue slack allowed when testing a symmetrized matrix for positive
/// semidefiniteness.
pub const PSD_TOL: f64 = 1e-9;

/// One sensor's process/measurement model together with its packet length.
///
/// Construct through [`ProcessModel::new`], which symmetrizes the
/// covariance inputs via `(X + X') / 2` and validates dimensions and
/// definiteness. The fields stay public so tests can build degenerate
/// models deliberately.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    /// State transition matrix, `n x n`.
    pub a: DMatrix<f64>,
    /// Measurement matrix, `p x n`.
    pub c: DMatrix<f64>,
    /// Process noise covariance, `n x n`, positive semidefinite.
    pub q: DMatrix<f64>,
    /// Measurement noise covariance, `p x p`, positive definite.
    pub r: DMatrix<f64>,
    /// Initial prior covariance, `n x n`, positive semidefinite.
    pub pi0: DMatrix<f64>,
    /// Packet length: number of consecutive channel slots one estimate
    /// transmission occupies. At least 1.
    pub d: u32,
}

impl ProcessModel {
    /// Validates and builds a model. Covariances are symmetrized before
    /// the definiteness tests. Stable dynamics (spectral radius < 1) are
    /// accepted with a logged warning: the scheduling problem is driven by
    /// unstable modes, but nothing below breaks without them.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        pi0: DMatrix<f64>,
        d: u32,
    ) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::InvalidModel {
                field: "a".into(),
                reason: format!("must be square and non-empty, got {}x{}", a.nrows(), a.ncols()),
            });
        }
        let n = a.nrows();
        if c.nrows() == 0 || c.ncols() != n {
            return Err(Error::InvalidModel {
                field: "c".into(),
                reason: format!("must be p x {n} with p >= 1, got {}x{}", c.nrows(), c.ncols()),
            });
        }
        let p = c.nrows();
        if q.shape() != (n, n) {
            return Err(Error::InvalidModel {
                field: "q".into(),
                reason: format!("must be {n}x{n}, got {}x{}", q.nrows(), q.ncols()),
            });
        }
        if r.shape() != (p, p) {
            return Err(Error::InvalidModel {
                field: "r".into(),
                reason: format!("must be {p}x{p}, got {}x{}", r.nrows(), r.ncols()),
            });
        }
        if pi0.shape() != (n, n) {
            return Err(Error::InvalidModel {
                field: "pi0".into(),
                reason: format!("must be {n}x{n}, got {}x{}", pi0.nrows(), pi0.ncols()),
            });
        }
        if d < 1 {
            return Err(Error::InvalidModel {
                field: "d".into(),
                reason: "packet length must be at least 1".into(),
            });
        }

        let q = symmetrize(&q);
        let r = symmetrize(&r);
        let pi0 = symmetrize(&pi0);
        check_psd("q", &q)?;
        check_pd("r", &r)?;
        check_psd("pi0", &pi0)?;

        let model = Self { a, c, q, r, pi0, d };
        if model.spectral_radius() < 1.0 {
            log::warn!(
                "process model is stable (spectral radius {:.4} < 1); holding costs stay bounded",
                model.spectral_radius()
            );
        }
        Ok(model)
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Measurement dimension `p`.
    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Largest eigenvalue magnitude of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_psd(field: &str, m: &DMatrix<f64>) -> Result<()> {
    let min = min_eigenvalue(m);
    if min < -PSD_TOL {
        return Err(Error::InvalidModel {
            field: field.into(),
            reason: format!("not positive semidefinite (min eigenvalue {min:.3e})"),
        });
    }
    Ok(())
}

fn check_pd(field: &str, m: &DMatrix<f64>) -> Result<()> {
    let min = min_eigenvalue(m);
    if min <= 0.0 {
        return Err(Error::InvalidModel {
            field: field.into(),
            reason: format!("not positive definite (min eigenvalue {min:.3e})"),
        });
    }
    Ok(())
}

/// Steady-state posterior covariance of the sensor's local Kalman filter.
///
/// Iterates prior `P- = A P A' + Q`, gain `K = P- C' (C P- C' + R)^-1`,
/// posterior `P = (I - K C) P-` from `pi0` until successive posteriors
/// differ by less than `tol` in max-abs-entry norm.
pub fn riccati_steady_state(
    model: &ProcessModel,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    if tol <= 0.0 || !tol.is_finite() {
        return Err(Error::InvalidOptions(format!("riccati tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidOptions("riccati max_iter must be at least 1".into()));
    }
    let n = model.state_dim();
    let identity = DMatrix::<f64>::identity(n, n);
    let mut post = model.pi0.clone();
    let mut residual = f64::INFINITY;
    for iteration in 1..=max_iter {
        let prior = &model.a * &post * model.a.transpose() + &model.q;
        // Divergence shows up here first: infinities in an unobserved
        // block poison the products with NaN before any residual check.
        if !prior.iter().all(|x| x.is_finite()) {
            return Err(Error::NonConvergence { iterations: iteration, residual: f64::INFINITY });
        }
        let innovation = symmetrize(&(&model.c * &prior * model.c.transpose() + &model.r));
        let chol = innovation
            .clone()
            .cholesky()
            .ok_or(Error::SingularInnovation)?;
        // K = P- C' S^-1, computed through K' = S^-1 C P-.
        let gain = chol.solve(&(&model.c * &prior)).transpose();
        let next = symmetrize(&((&identity - &gain * &model.c) * &prior));
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonConvergence { iterations: iteration, residual: f64::INFINITY });
        }
        residual = (&next - &post).amax();
        post = next;
        if residual < tol {
            return Ok(post);
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual })
}

/// Applies the open-loop covariance map `h(X) = A X A' + Q` `ell` times.
/// `ell = 0` returns `x` unchanged.
pub fn lyapunov_apply(x: &DMatrix<f64>, model: &ProcessModel, ell: u32) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    if x.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "lyapunov_apply expects a {n}x{n} matrix, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    let mut out = x.clone();
    for _ in 0..ell {
        out = symmetrize(&(&model.a * &out * model.a.transpose() + &model.q));
    }
    Ok(out)
}

/// Tabulates `Tr(h^tau(pbar))` for `tau = 0..=tau_max`.
pub fn build_cost_table(pbar: &DMatrix<f64>, model: &ProcessModel, tau_max: u32) -> Result<Vec<f64>> {
    let n = model.state_dim();
    if pbar.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "build_cost_table expects a {n}x{n} covariance, got {}x{}",
            pbar.nrows(),
            pbar.ncols()
        )));
    }
    let mut table = Vec::with_capacity(tau_max as usize + 1);
    let mut current = pbar.clone();
    table.push(current.trace());
    for _ in 0..tau_max {
        current = symmetrize(&(&model.a * &current * model.a.transpose() + &model.q));
        table.push(current.trace());
    }
    Ok(table)
}

/// A sensor's steady-state covariance and its holding-cost table.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Steady-state posterior covariance `Pbar` of the local filter.
    pub pbar: DMatrix<f64>,
    /// `cost_table[tau] = Tr(h^tau(Pbar))` for `tau = 0..=tau_max`.
    pub cost_table: Vec<f64>,
}

impl SteadyState {
    /// Runs the Riccati iteration and builds the holding-cost table.
    ///
    /// The measurement update never hurts, so the table is non-decreasing;
    /// a decrease beyond numerical slack indicates a broken model and is
    /// rejected.
    pub fn compute(model: &ProcessModel, tau_max: u32, tol: f64, max_iter: usize) -> Result<Self> {
        let pbar = riccati_steady_state(model, tol, max_iter)?;
        let cost_table = build_cost_table(&pbar, model, tau_max)?;
        let scale = cost_table.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
        for pair in cost_table.windows(2) {
            if pair[1] < pair[0] - 1e-12 * scale {
                return Err(Error::InvalidModel {
                    field: "cost_table".into(),
                    reason: format!(
                        "holding cost decreased from {:.6e} to {:.6e}; model is inconsistent",
                        pair[0], pair[1]
                    ),
                });
            }
        }
        Ok(Self { pbar, cost_table })
    }

    /// Same as [`SteadyState::compute`] with the default Riccati settings.
    pub fn compute_default(model: &ProcessModel, tau_max: u32) -> Result<Self> {
        Self::compute(model, tau_max, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER)
    }
}
