//! Entropic optimal transport with a parameterized Mahalanobis ground cost.
//!
//! The ground cost between two samples is `‖L(x − y)‖²` for an `r × d`
//! transform `L`. Transport problems are solved with a log-stabilized
//! Sinkhorn iteration; the debiased Sinkhorn divergence and its gradient
//! with respect to `L` are built on top of it.

mod cost;
mod divergence;
mod sinkhorn;

pub use cost::{cost_matrix, pairwise_sq_dists};
pub(crate) use divergence::{debias, GradAccumulator};
pub use divergence::{
    grad_divergence_wrt_l, grad_sinkhorn_wrt_l, plan_second_moment, sinkhorn_distance,
    sinkhorn_divergence, GradMode,
};
pub use sinkhorn::{plan_entropy, sinkhorn_solve, sinkhorn_solve_warm, SinkhornWorkspace};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// Tolerance on the total mass of a weight vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A weighted set of samples in `R^d`, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl PointCloud {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 || d == 0 {
            return input(format!("point cloud must be non-empty, got {n}x{d}"));
        }
        if weights.len() != n {
            return Err(Error::Dimension {
                what: "weights length",
                expected: n,
                got: weights.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return input("point cloud contains non-finite entries");
        }
        validate_weights(weights.as_slice().unwrap_or(&weights.to_vec()))?;
        Ok(Self { points, weights })
    }

    /// Empirical distribution with mass `1/n` on every row.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self::new(points, Array1::from_elem(n, w))
    }

    pub fn uniform_view(points: ArrayView2<'_, f64>) -> Result<Self> {
        Self::uniform(points.to_owned())
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

pub(crate) fn validate_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return input("weights must be finite and nonnegative");
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return input(format!("weights must sum to 1, got {total}"));
    }
    Ok(())
}

/// The transform `L` (`r × d`) together with the entropic regularization.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric {
    l: Array2<f64>,
    gamma: f64,
}

impl GroundMetric {
    pub fn new(l: Array2<f64>, gamma: f64) -> Result<Self> {
        let (r, d) = l.dim();
        if r == 0 || d == 0 {
            return input(format!("transform must be at least 1x1, got {r}x{d}"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return input(format!("gamma must be positive and finite, got {gamma}"));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return input("transform contains non-finite entries");
        }
        Ok(Self { l, gamma })
    }

    /// Squared Euclidean cost in `R^d`.
    pub fn identity(d: usize, gamma: f64) -> Result<Self> {
        Self::new(Array2::eye(d), gamma)
    }

    pub fn l(&self) -> &Array2<f64> {
        &self.l
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of rows of `L`.
    pub fn proj_dim(&self) -> usize {
        self.l.nrows()
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.l.ncols()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.l.clone(), gamma)
    }

    /// A `k × d` matrix `F` with `FᵀF = LᵀL` and `k = min(r, d)`.
    ///
    /// For `r ≤ d` this is `L` itself; taller transforms are reduced to the
    /// triangular factor of their QR decomposition so that projected points
    /// never have more than `d` coordinates.
    pub fn factor(&self) -> Array2<f64> {
        cost::reduced_factor(&self.l)
    }

    /// Rows of `points` mapped through the cost factor.
    pub fn project(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if points.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "sample dimension",
                expected: self.input_dim(),
                got: points.ncols(),
            });
        }
        Ok(points.dot(&self.factor().t()))
    }
}

/// Convergence controls for the Sinkhorn iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Bound on the L∞ marginal residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return input(format!(
                "solver tolerance must be positive, got {}",
                self.tol
            ));
        }
        if self.max_iter == 0 {
            return input("max_iter must be at least 1");
        }
        Ok(())
    }
}

/// A coupling between two weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
}

impl TransportPlan {
    /// `max(|P·1 − a|∞, |Pᵀ·1 − b|∞)`.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.plan.sum_axis(ndarray::Axis(1));
        let cols = self.plan.sum_axis(ndarray::Axis(0));
        let r = rows
            .iter()
            .zip(self.row_marginal.iter())
            .map(|(p, a)| (p - a).abs())
            .fold(0.0, f64::max);
        let c = cols
            .iter()
            .zip(self.col_marginal.iter())
            .map(|(p, b)| (p - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }
}

/// Dual potentials; the plan is `exp((f_i + g_j − C_ij)/γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Regularized objective `⟨C, P⟩ − γ·entropy(P)` at the returned plan.
    pub value: f64,
    /// `⟨C, P⟩`.
    pub transport_cost: f64,
    pub plan: TransportPlan,
    pub potentials: DualPotentials,
    pub iterations: usize,
    pub converged: bool,
}
