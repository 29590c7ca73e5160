use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::cost::{check_dims, pairwise_sq_dists};
use super::sinkhorn::SinkhornWorkspace;
use super::{GroundMetric, PointCloud, SinkhornResult, SolverConfig, TransportPlan};
use crate::error::{Error, Result};

/// Which terms of the debiased divergence contribute to its gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    /// Only the cross term `W(X, Y)`.
    #[default]
    PaperCrossOnly,
    /// `∇W(X, Y) − ½∇W(X, X) − ½∇W(Y, Y)`.
    FullDebiased,
}

/// Regularized OT between two clouds under the metric's cost.
pub fn sinkhorn_distance(
    x: &PointCloud,
    y: &PointCloud,
    metric: &GroundMetric,
    cfg: &SolverConfig,
) -> Result<SinkhornResult> {
    check_dims(x.dim(), y.dim(), metric.input_dim())?;
    let zx = metric.project(x.points().view())?;
    let zy = metric.project(y.points().view())?;
    let c = pairwise_sq_dists(zx.view(), zy.view());
    SinkhornWorkspace::default().solve(
        c.view(),
        weights(x).as_slice(),
        weights(y).as_slice(),
        metric.gamma(),
        cfg,
        None,
    )
}

/// Debiased divergence `W(X, Y) − ½W(X, X) − ½W(Y, Y)`.
pub fn sinkhorn_divergence(
    x: &PointCloud,
    y: &PointCloud,
    metric: &GroundMetric,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_dims(x.dim(), y.dim(), metric.input_dim())?;
    let zx = metric.project(x.points().view())?;
    let zy = metric.project(y.points().view())?;
    let (wx, wy) = (weights(x), weights(y));
    let mut ws = SinkhornWorkspace::default();
    let gamma = metric.gamma();
    let cross = solve_cross(&mut ws, (zx.view(), &wx), (zy.view(), &wy), gamma, cfg)?;
    let sx = solve_pair(&mut ws, zx.view(), zx.view(), &wx, &wx, gamma, cfg)?;
    let sy = solve_pair(&mut ws, zy.view(), zy.view(), &wy, &wy, gamma, cfg)?;
    Ok(debias(cross.value, sx.value, sy.value))
}

#[inline]
pub(crate) fn debias(cross: f64, self_x: f64, self_y: f64) -> f64 {
    cross - 0.5 * (self_x + self_y)
}

fn weights(x: &PointCloud) -> Vec<f64> {
    x.weights().to_vec()
}

pub(crate) fn solve_pair(
    ws: &mut SinkhornWorkspace,
    zx: ArrayView2<'_, f64>,
    zy: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<SinkhornResult> {
    let c = pairwise_sq_dists(zx, zy);
    ws.solve(c.view(), a, b, gamma, cfg, None)
}

/// Solves the cross problem in a canonical orientation so that swapping the
/// arguments yields a bit-identical value. The returned plan is always
/// oriented as `(x, y)`.
pub(crate) fn solve_cross(
    ws: &mut SinkhornWorkspace,
    x: (ArrayView2<'_, f64>, &[f64]),
    y: (ArrayView2<'_, f64>, &[f64]),
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<SinkhornResult> {
    if canonical_order(x, y) == Ordering::Greater {
        let r = solve_pair(ws, y.0, x.0, y.1, x.1, gamma, cfg)?;
        Ok(transpose_result(r))
    } else {
        solve_pair(ws, x.0, y.0, x.1, y.1, gamma, cfg)
    }
}

fn canonical_order(x: (ArrayView2<'_, f64>, &[f64]), y: (ArrayView2<'_, f64>, &[f64])) -> Ordering {
    x.0.dim()
        .cmp(&y.0.dim())
        .then_with(|| cmp_f64s(x.0.iter(), y.0.iter()))
        .then_with(|| cmp_f64s(x.1.iter(), y.1.iter()))
}

fn cmp_f64s<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> Ordering {
    for (p, q) in a.zip(b) {
        match p.total_cmp(q) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

pub(crate) fn transpose_result(r: SinkhornResult) -> SinkhornResult {
    SinkhornResult {
        plan: TransportPlan {
            plan: r.plan.plan.t().to_owned(),
            row_marginal: r.plan.col_marginal,
            col_marginal: r.plan.row_marginal,
        },
        potentials: super::DualPotentials {
            f: r.potentials.g,
            g: r.potentials.f,
        },
        ..r
    }
}

/// `Σ_ij P_ij (x_i − y_j)(x_i − y_j)ᵀ` as a `d × d` matrix.
pub fn plan_second_moment(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    plan: ArrayView2<'_, f64>,
) -> Array2<f64> {
    let rows = plan.sum_axis(Axis(1));
    let cols = plan.sum_axis(Axis(0));
    let xr = scale_rows(x, rows.view());
    let yc = scale_rows(y, cols.view());
    let cross = x.t().dot(&plan.dot(&y));
    let mut out = x.t().dot(&xr) + y.t().dot(&yc);
    out -= &cross;
    out -= &cross.t();
    out
}

fn scale_rows(x: ArrayView2<'_, f64>, s: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for (mut row, &w) in out.axis_iter_mut(Axis(0)).zip(s.iter()) {
        row *= w;
    }
    out
}

/// `2L Σ_ij P_ij (x_i − y_j)(x_i − y_j)ᵀ`: the gradient of `W_L(X, Y)` with the
/// plan held at its optimum.
pub fn grad_sinkhorn_wrt_l(
    x: &PointCloud,
    y: &PointCloud,
    plan: &TransportPlan,
    l: &Array2<f64>,
) -> Result<Array2<f64>> {
    check_dims(x.dim(), y.dim(), l.ncols())?;
    if plan.plan.dim() != (x.len(), y.len()) {
        return Err(Error::Dimension {
            what: "plan shape",
            expected: x.len() * y.len(),
            got: plan.plan.len(),
        });
    }
    let mut acc = GradAccumulator::new(l);
    acc.add(1.0, x.points().view(), y.points().view(), plan.plan.view());
    Ok(acc.finish())
}

/// Gradient of the divergence (or of its cross term) with respect to `L`.
pub fn grad_divergence_wrt_l(
    x: &PointCloud,
    y: &PointCloud,
    metric: &GroundMetric,
    cfg: &SolverConfig,
    mode: GradMode,
) -> Result<Array2<f64>> {
    check_dims(x.dim(), y.dim(), metric.input_dim())?;
    let zx = metric.project(x.points().view())?;
    let zy = metric.project(y.points().view())?;
    let (wx, wy) = (weights(x), weights(y));
    let gamma = metric.gamma();
    let mut ws = SinkhornWorkspace::default();
    let cross = solve_cross(&mut ws, (zx.view(), &wx), (zy.view(), &wy), gamma, cfg)?;
    let mut acc = GradAccumulator::new(metric.l());
    let (px, py) = (x.points().view(), y.points().view());
    acc.add(1.0, px, py, cross.plan.plan.view());
    if mode == GradMode::FullDebiased {
        let sx = solve_pair(&mut ws, zx.view(), zx.view(), &wx, &wx, gamma, cfg)?;
        let sy = solve_pair(&mut ws, zy.view(), zy.view(), &wy, &wy, gamma, cfg)?;
        acc.add(-0.5, px, px, sx.plan.plan.view());
        acc.add(-0.5, py, py, sy.plan.plan.view());
    }
    Ok(acc.finish())
}

/// Accumulates `Σ_k c_k · 2L Σ_ij P^k_ij δ^k_ij δ^kᵀ_ij` over many pairs.
///
/// Short transforms (`r ≤ d`) accumulate directly in `r × d` via the
/// projected samples; tall ones accumulate the `d × d` second moments and
/// multiply by `L` once at the end.
pub(crate) struct GradAccumulator<'a> {
    l: &'a Array2<f64>,
    acc: Array2<f64>,
    moment_route: bool,
}

impl<'a> GradAccumulator<'a> {
    pub(crate) fn new(l: &'a Array2<f64>) -> Self {
        let (r, d) = l.dim();
        let moment_route = r > d;
        let acc = if moment_route {
            Array2::zeros((d, d))
        } else {
            Array2::zeros((r, d))
        };
        Self {
            l,
            acc,
            moment_route,
        }
    }

    pub(crate) fn add(
        &mut self,
        coef: f64,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
        plan: ArrayView2<'_, f64>,
    ) {
        if coef == 0.0 {
            return;
        }
        if self.moment_route {
            let m = plan_second_moment(x, y, plan);
            self.acc.scaled_add(coef, &m);
            return;
        }
        // 2L·A = 2[ Lxᵀ (D_r X − P Y) + Lyᵀ (D_c Y − Pᵀ X) ]
        let rows = plan.sum_axis(Axis(1));
        let cols = plan.sum_axis(Axis(0));
        let mut u = scale_rows(x, rows.view());
        u -= &plan.dot(&y);
        let mut v = scale_rows(y, cols.view());
        v -= &plan.t().dot(&x);
        let lx = self.l.dot(&x.t());
        let ly = self.l.dot(&y.t());
        let mut g = lx.dot(&u);
        g += &ly.dot(&v);
        self.acc.scaled_add(2.0 * coef, &g);
    }

    pub(crate) fn finish(self) -> Array2<f64> {
        if self.moment_route {
            self.l.dot(&self.acc) * 2.0
        } else {
            self.acc
        }
    }
}
