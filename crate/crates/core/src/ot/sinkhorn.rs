//! Log-stabilized Sinkhorn iteration.
//!
//! The solver keeps dual potentials `f`, `g` and a stabilized kernel
//! `K̃_ij = exp((f_i + g_j − C_ij)/γ)`. Between absorptions it runs the cheap
//! scaling updates `u = a / K̃v`, `v = b / K̃ᵀu`; whenever a scaling leaves
//! `[1/ABSORB, ABSORB]` it is folded back into the potentials
//! (`f += γ log u`, `g += γ log v`) and the kernel is rebuilt. If a kernel
//! row or column underflows entirely, the solver falls back to exact
//! log-sum-exp updates of the potentials, so arbitrarily small `γ` never
//! produces a division by zero.

use ndarray::{Array1, Array2, ArrayView2};

use super::{validate_weights, DualPotentials, SinkhornResult, SolverConfig, TransportPlan};
use crate::error::{input, Error, Result};

const ABSORB: f64 = 1e5;
const TINY: f64 = 1e-250;
/// `ln(TINY)`: kernel entries below this exponent are stored as zero.
const FLUSH: f64 = -575.6;
const ANNEAL_FACTOR: f64 = 2.0;
const ANNEAL_TOL: f64 = 1e-4;
const ANNEAL_STAGE_ITERS: usize = 50;

/// Solves the entropic OT problem between weights `a` and `b` under `cost`.
pub fn sinkhorn_solve(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<SinkhornResult> {
    SinkhornWorkspace::default().solve(cost, a, b, gamma, cfg, None)
}

/// As [`sinkhorn_solve`], starting from previously computed potentials.
pub fn sinkhorn_solve_warm(
    cost: ArrayView2<'_, f64>,
    a: &[f64],
    b: &[f64],
    gamma: f64,
    cfg: &SolverConfig,
    init: Option<&DualPotentials>,
) -> Result<SinkhornResult> {
    SinkhornWorkspace::default().solve(cost, a, b, gamma, cfg, init)
}

/// Entropy `−Σ P_ij (log P_ij − 1)` of a plan, with `0 log 0 = 0`.
pub fn plan_entropy(plan: &Array2<f64>) -> f64 {
    -plan
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() - 1.0))
        .sum::<f64>()
}

/// Scratch buffers reused across solves of the same shape.
#[derive(Debug, Default, Clone)]
pub struct SinkhornWorkspace {
    kern: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    kv: Vec<f64>,
    ktu: Vec<f64>,
    scratch: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Problem<'a> {
    cost: &'a [f64],
    n: usize,
    m: usize,
    a: &'a [f64],
    b: &'a [f64],
    gamma: f64,
}

impl SinkhornWorkspace {
    pub fn solve(
        &mut self,
        cost: ArrayView2<'_, f64>,
        a: &[f64],
        b: &[f64],
        gamma: f64,
        cfg: &SolverConfig,
        init: Option<&DualPotentials>,
    ) -> Result<SinkhornResult> {
        cfg.validate()?;
        let (n, m) = cost.dim();
        if n == 0 || m == 0 {
            return input("cost matrix must be non-empty");
        }
        if a.len() != n {
            return Err(Error::Dimension {
                what: "row weights vs cost rows",
                expected: n,
                got: a.len(),
            });
        }
        if b.len() != m {
            return Err(Error::Dimension {
                what: "column weights vs cost columns",
                expected: m,
                got: b.len(),
            });
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return input(format!("gamma must be positive and finite, got {gamma}"));
        }
        validate_weights(a)?;
        validate_weights(b)?;
        if a.iter().chain(b.iter()).any(|&w| w <= 0.0) {
            return input("solver weights must be strictly positive");
        }
        let cost = cost.as_standard_layout();
        let cs = cost.as_slice().expect("standard layout");
        if cs.iter().any(|c| !c.is_finite()) {
            return input("cost matrix contains non-finite entries");
        }

        let (mut f, mut g) = match init {
            Some(p) if p.f.len() == n && p.g.len() == m => (p.f.to_vec(), p.g.to_vec()),
            Some(p) => {
                return Err(Error::Dimension {
                    what: "warm-start potentials",
                    expected: n + m,
                    got: p.f.len() + p.g.len(),
                })
            }
            None => (vec![0.0; n], vec![0.0; m]),
        };
        let prob = Problem {
            cost: cs,
            n,
            m,
            a,
            b,
            gamma,
        };
        self.reset(n, m);
        let mut spent = 0;
        if init.is_none() {
            spent = self.anneal(&prob, &mut f, &mut g, cfg)?;
        } else {
            // Potentials from a different cost can overflow the kernel;
            // one exact row update bounds every entry by `a_i`.
            log_update_f(&prob, &mut f, &g, &mut self.scratch);
            check_finite(&f, &g)?;
        }
        let budget = SolverConfig {
            max_iter: cfg.max_iter.saturating_sub(spent).max(1),
            ..*cfg
        };
        let (iterations, converged) = self.iterate(&prob, &mut f, &mut g, &budget)?;
        self.finish(&prob, f, g, spent + iterations, converged)
    }

    /// Cold starts walk the regularization down from the cost spread to the
    /// target in halving steps, warm-starting each stage from the previous
    /// one. Returns the iterations spent.
    fn anneal(
        &mut self,
        p: &Problem<'_>,
        f: &mut [f64],
        g: &mut [f64],
        cfg: &SolverConfig,
    ) -> Result<usize> {
        let (lo, hi) = p
            .cost
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                (lo.min(c), hi.max(c))
            });
        let spread = hi - lo;
        let mut stages = Vec::new();
        let mut eps = p.gamma * ANNEAL_FACTOR;
        while eps < spread {
            stages.push(eps);
            eps *= ANNEAL_FACTOR;
        }
        let stage_cfg = SolverConfig {
            tol: cfg.tol.max(ANNEAL_TOL),
            max_iter: ANNEAL_STAGE_ITERS,
        };
        let mut spent = 0;
        for &eps in stages.iter().rev() {
            if spent + stage_cfg.max_iter >= cfg.max_iter {
                break;
            }
            let stage = Problem { gamma: eps, ..*p };
            let (it, _) = self.iterate(&stage, f, g, &stage_cfg)?;
            spent += it;
        }
        Ok(spent)
    }

    fn reset(&mut self, n: usize, m: usize) {
        self.kern.resize(n * m, 0.0);
        self.u.clear();
        self.u.resize(n, 1.0);
        self.v.clear();
        self.v.resize(m, 1.0);
        self.kv.resize(n, 0.0);
        self.ktu.resize(m, 0.0);
        self.scratch.resize(n.max(m), 0.0);
    }

    fn iterate(
        &mut self,
        p: &Problem<'_>,
        f: &mut [f64],
        g: &mut [f64],
        cfg: &SolverConfig,
    ) -> Result<(usize, bool)> {
        let (n, m) = (p.n, p.m);
        let mut iterations = 0usize;
        build_kernel(p, f, g, &mut self.kern)?;
        self.u.fill(1.0);
        self.v.fill(1.0);

        loop {
            if iterations >= cfg.max_iter {
                self.absorb(p, f, g)?;
                build_kernel(p, f, g, &mut self.kern)?;
                return Ok((iterations, false));
            }
            iterations += 1;

            matvec(&self.kern, n, m, &self.v, &mut self.kv);
            if self.kv.iter().any(|&s| !(s > TINY && s.is_finite())) {
                self.absorb(p, f, g)?;
                log_update_f(p, f, g, &mut self.scratch);
                log_update_g(p, f, g, &mut self.scratch);
                check_finite(f, g)?;
                build_kernel(p, f, g, &mut self.kern)?;
                continue;
            }
            for ((u, kv), a) in self.u.iter_mut().zip(&self.kv).zip(p.a) {
                *u = a / kv;
            }
            matvec_t(&self.kern, n, m, &self.u, &mut self.ktu);
            if self.ktu.iter().any(|&s| !(s > TINY && s.is_finite())) {
                self.absorb(p, f, g)?;
                log_update_g(p, f, g, &mut self.scratch);
                check_finite(f, g)?;
                build_kernel(p, f, g, &mut self.kern)?;
                continue;
            }
            // Marginals of the plan at (new u, current v).
            let rr = max_dev(&self.u, &self.kv, p.a);
            let cr = max_dev(&self.v, &self.ktu, p.b);
            if rr <= cfg.tol && cr <= cfg.tol {
                self.absorb(p, f, g)?;
                build_kernel(p, f, g, &mut self.kern)?;
                let (rr, cr) = residuals(&self.kern, n, m, p.a, p.b);
                if rr <= cfg.tol && cr <= cfg.tol {
                    return Ok((iterations, true));
                }
                // Rounding pushed the rebuilt plan over the bound; keep going.
                continue;
            }
            for ((v, ktu), b) in self.v.iter_mut().zip(&self.ktu).zip(p.b) {
                *v = b / ktu;
            }
            if out_of_range(&self.u) || out_of_range(&self.v) {
                self.absorb(p, f, g)?;
                build_kernel(p, f, g, &mut self.kern)?;
            }
        }
    }

    /// Folds the current scalings into the potentials and resets them to one.
    fn absorb(&mut self, p: &Problem<'_>, f: &mut [f64], g: &mut [f64]) -> Result<()> {
        for (fi, ui) in f.iter_mut().zip(self.u.iter_mut()) {
            if *ui != 1.0 {
                *fi += p.gamma * ui.ln();
                *ui = 1.0;
            }
        }
        for (gj, vj) in g.iter_mut().zip(self.v.iter_mut()) {
            if *vj != 1.0 {
                *gj += p.gamma * vj.ln();
                *vj = 1.0;
            }
        }
        check_finite(f, g)
    }

    fn finish(
        &self,
        p: &Problem<'_>,
        f: Vec<f64>,
        g: Vec<f64>,
        iterations: usize,
        converged: bool,
    ) -> Result<SinkhornResult> {
        let (n, m) = (p.n, p.m);
        let mut transport_cost = 0.0;
        let mut neg_entropy = 0.0;
        for i in 0..n {
            for j in 0..m {
                let pij = self.kern[i * m + j];
                if pij > 0.0 {
                    let c = p.cost[i * m + j];
                    transport_cost += pij * c;
                    let log_p = (f[i] + g[j] - c) / p.gamma;
                    neg_entropy += pij * (log_p - 1.0);
                }
            }
        }
        let value = transport_cost + p.gamma * neg_entropy;
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite objective after {iterations} iterations"
            )));
        }
        Ok(SinkhornResult {
            value,
            transport_cost,
            plan: TransportPlan {
                plan: Array2::from_shape_vec((n, m), self.kern.clone()).expect("shape"),
                row_marginal: Array1::from(p.a.to_vec()),
                col_marginal: Array1::from(p.b.to_vec()),
            },
            potentials: DualPotentials {
                f: Array1::from(f),
                g: Array1::from(g),
            },
            iterations,
            converged,
        })
    }
}

/// `max_i |s_i·k_i − w_i|`.
fn max_dev(s: &[f64], k: &[f64], w: &[f64]) -> f64 {
    s.iter()
        .zip(k)
        .zip(w)
        .map(|((s, k), w)| (s * k - w).abs())
        .fold(0.0, f64::max)
}

fn out_of_range(s: &[f64]) -> bool {
    s.iter().any(|&x| !(x < ABSORB && x > 1.0 / ABSORB))
}

fn check_finite(f: &[f64], g: &[f64]) -> Result<()> {
    if f.iter().chain(g).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("dual potentials became non-finite".into()))
    }
}

fn build_kernel(p: &Problem<'_>, f: &[f64], g: &[f64], kern: &mut [f64]) -> Result<()> {
    let inv = 1.0 / p.gamma;
    for i in 0..p.n {
        let fi = f[i];
        let row = &mut kern[i * p.m..(i + 1) * p.m];
        let crow = &p.cost[i * p.m..(i + 1) * p.m];
        for ((k, &c), &gj) in row.iter_mut().zip(crow).zip(g) {
            let x = (fi + gj - c) * inv;
            // Subnormal entries are numerically irrelevant but very slow.
            *k = if x < FLUSH { 0.0 } else { x.exp() };
        }
    }
    if kern.iter().any(|k| !k.is_finite()) {
        return Err(Error::Numerical("kernel overflow".into()));
    }
    Ok(())
}

fn matvec(k: &[f64], n: usize, m: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = dot(&k[i * m..(i + 1) * m], v);
    }
}

/// Dot product with eight independent partial sums so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn matvec_t(k: &[f64], n: usize, m: usize, u: &[f64], out: &mut [f64]) {
    out[..m].fill(0.0);
    for i in 0..n {
        let ui = u[i];
        let row = &k[i * m..(i + 1) * m];
        for (o, &kij) in out[..m].iter_mut().zip(row) {
            *o += kij * ui;
        }
    }
}

fn residuals(k: &[f64], n: usize, m: usize, a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut cols = vec![0.0; m];
    let mut rr: f64 = 0.0;
    for i in 0..n {
        let row = &k[i * m..(i + 1) * m];
        let s: f64 = row.iter().sum();
        rr = rr.max((s - a[i]).abs());
        for (c, &x) in cols.iter_mut().zip(row) {
            *c += x;
        }
    }
    let cr = cols
        .iter()
        .zip(b)
        .map(|(c, b)| (c - b).abs())
        .fold(0.0, f64::max);
    (rr, cr)
}

/// `f_i = γ log a_i − γ LSE_j((g_j − C_ij)/γ)`.
fn log_update_f(p: &Problem<'_>, f: &mut [f64], g: &[f64], tmp: &mut [f64]) {
    let inv = 1.0 / p.gamma;
    for i in 0..p.n {
        let crow = &p.cost[i * p.m..(i + 1) * p.m];
        let t = &mut tmp[..p.m];
        for ((t, &c), &gj) in t.iter_mut().zip(crow).zip(g) {
            *t = (gj - c) * inv;
        }
        f[i] = p.gamma * (p.a[i].ln() - log_sum_exp(t));
    }
}

/// `g_j = γ log b_j − γ LSE_i((f_i − C_ij)/γ)`.
fn log_update_g(p: &Problem<'_>, f: &[f64], g: &mut [f64], tmp: &mut [f64]) {
    let inv = 1.0 / p.gamma;
    for j in 0..p.m {
        let t = &mut tmp[..p.n];
        for (i, t) in t.iter_mut().enumerate() {
            *t = (f[i] - p.cost[i * p.m + j]) * inv;
        }
        g[j] = p.gamma * (p.b[j].ln() - log_sum_exp(t));
    }
}

fn log_sum_exp(t: &[f64]) -> f64 {
    let mx = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return mx;
    }
    mx + t.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}
