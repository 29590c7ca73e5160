//! Triplet hinge loss over Sinkhorn divergences and its gradient.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::triplets::{Triplet, Window};
use crate::error::{input, Error, Result};
use crate::ot::{
    debias, pairwise_sq_dists, DualPotentials, GradAccumulator, GradMode, GroundMetric,
    SinkhornResult, SinkhornWorkspace, SolverConfig,
};

/// An unordered pair of windows, stored with the earlier start first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct PairKey(Window, Window);

impl PairKey {
    fn new(a: Window, b: Window) -> Self {
        if a <= b {
            PairKey(a, b)
        } else {
            PairKey(b, a)
        }
    }
}

/// Divergences and hinge terms for one evaluation of the loss.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    /// Indices of triplets with a strictly positive hinge.
    pub violations: Vec<usize>,
    /// `S(anchor, similar)` per triplet.
    pub similar_div: Vec<f64>,
    /// `S(anchor, dissimilar)` per triplet.
    pub dissimilar_div: Vec<f64>,
    pub(crate) solved: HashMap<PairKey, SinkhornResult>,
}

/// Triplet loss `Σ_i [c − (S(X_i, X_i^d) − S(X_i, X_i^s))]⁺` bound to a data
/// matrix.
pub struct TripletObjective<'a> {
    data: ArrayView2<'a, f64>,
    triplets: &'a [Triplet],
    margin: f64,
    solver: SolverConfig,
}

impl<'a> TripletObjective<'a> {
    pub fn new(
        data: ArrayView2<'a, f64>,
        triplets: &'a [Triplet],
        margin: f64,
        solver: SolverConfig,
    ) -> Result<Self> {
        if !(margin.is_finite() && margin > 0.0) {
            return input(format!("margin must be positive, got {margin}"));
        }
        solver.validate()?;
        for (i, t) in triplets.iter().enumerate() {
            for w in [t.anchor, t.similar, t.dissimilar] {
                if w.len == 0 || w.end() > data.nrows() {
                    return input(format!(
                        "triplet {i}: window {:?} not inside sequence of length {}",
                        w.range(),
                        data.nrows()
                    ));
                }
            }
        }
        Ok(Self {
            data,
            triplets,
            margin,
            solver,
        })
    }

    pub fn triplets(&self) -> &[Triplet] {
        self.triplets
    }

    pub fn evaluate(&self, metric: &GroundMetric) -> Result<LossEval> {
        self.evaluate_warm(metric, None)
    }

    /// Evaluates the loss, warm-starting each pair from `warm` when present.
    pub(crate) fn evaluate_warm(
        &self,
        metric: &GroundMetric,
        warm: Option<&HashMap<PairKey, DualPotentials>>,
    ) -> Result<LossEval> {
        if metric.input_dim() != self.data.ncols() {
            return Err(Error::Dimension {
                what: "metric input dimension vs data",
                expected: self.data.ncols(),
                got: metric.input_dim(),
            });
        }
        let factor = metric.factor();
        let mut keys = BTreeSet::new();
        let mut owner: BTreeMap<PairKey, usize> = BTreeMap::new();
        for (i, t) in self.triplets.iter().enumerate() {
            for k in [
                PairKey::new(t.anchor, t.similar),
                PairKey::new(t.anchor, t.dissimilar),
                PairKey::new(t.anchor, t.anchor),
                PairKey::new(t.similar, t.similar),
                PairKey::new(t.dissimilar, t.dissimilar),
            ] {
                keys.insert(k);
                owner.entry(k).or_insert(i);
            }
        }
        let windows: BTreeSet<Window> = keys.iter().flat_map(|k| [k.0, k.1]).collect();
        let projected: HashMap<Window, Array2<f64>> = windows
            .par_iter()
            .map(|w| (*w, w.view(self.data).dot(&factor.t())))
            .collect();

        let keys: Vec<PairKey> = keys.into_iter().collect();
        let gamma = metric.gamma();
        let solver = self.solver;
        let results: Vec<Result<SinkhornResult>> = keys
            .par_iter()
            .map_init(SinkhornWorkspace::default, |ws, k| {
                let (za, zb) = (&projected[&k.0], &projected[&k.1]);
                let c = pairwise_sq_dists(za.view(), zb.view());
                let a = uniform(k.0.len);
                let b = uniform(k.1.len);
                let init = warm.and_then(|w| w.get(k));
                ws.solve(c.view(), &a, &b, gamma, &solver, init)
            })
            .collect();
        let mut solved = HashMap::with_capacity(keys.len());
        for (k, r) in keys.into_iter().zip(results) {
            let r = r.map_err(|e| Error::Triplet {
                index: owner[&k],
                source: Box::new(e),
            })?;
            solved.insert(k, r);
        }

        let div = |x: Window, y: Window| -> f64 {
            let cross = solved[&PairKey::new(x, y)].value;
            let sx = solved[&PairKey::new(x, x)].value;
            let sy = solved[&PairKey::new(y, y)].value;
            debias(cross, sx, sy)
        };
        let mut loss = 0.0;
        let mut violations = Vec::new();
        let mut similar_div = Vec::with_capacity(self.triplets.len());
        let mut dissimilar_div = Vec::with_capacity(self.triplets.len());
        for (i, t) in self.triplets.iter().enumerate() {
            let s = div(t.anchor, t.similar);
            let d = div(t.anchor, t.dissimilar);
            let hinge = self.margin - (d - s);
            if hinge > 0.0 {
                loss += hinge;
                violations.push(i);
            }
            similar_div.push(s);
            dissimilar_div.push(d);
        }
        Ok(LossEval {
            loss,
            violations,
            similar_div,
            dissimilar_div,
            solved,
        })
    }

    /// `Σ_{v ∈ violations} ∇S(X_v, X_v^s) − ∇S(X_v, X_v^d)`, reusing the
    /// plans of `eval`.
    pub fn gradient(&self, metric: &GroundMetric, eval: &LossEval, mode: GradMode) -> Array2<f64> {
        let mut acc = GradAccumulator::new(metric.l());
        // Coefficients per pair; violating triplets can share pairs.
        let mut coefs: BTreeMap<PairKey, f64> = BTreeMap::new();
        for &v in &eval.violations {
            let t = &self.triplets[v];
            for (other, sign) in [(t.similar, 1.0), (t.dissimilar, -1.0)] {
                *coefs.entry(PairKey::new(t.anchor, other)).or_default() += sign;
                if mode == GradMode::FullDebiased {
                    *coefs.entry(PairKey::new(t.anchor, t.anchor)).or_default() -= 0.5 * sign;
                    *coefs.entry(PairKey::new(other, other)).or_default() -= 0.5 * sign;
                }
            }
        }
        for (k, c) in coefs {
            let plan = &eval.solved[&k].plan.plan;
            acc.add(c, k.0.view(self.data), k.1.view(self.data), plan.view());
        }
        acc.finish()
    }

    pub(crate) fn potentials(eval: &LossEval) -> HashMap<PairKey, DualPotentials> {
        eval.solved
            .iter()
            .map(|(k, r)| (*k, r.potentials.clone()))
            .collect()
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Loss value and violating triplets at `metric`.
pub fn triplet_loss(
    metric: &GroundMetric,
    data: ArrayView2<'_, f64>,
    triplets: &[Triplet],
    margin: f64,
    solver: &SolverConfig,
) -> Result<(f64, Vec<usize>)> {
    let eval = TripletObjective::new(data, triplets, margin, *solver)?.evaluate(metric)?;
    Ok((eval.loss, eval.violations))
}

/// Gradient of the loss restricted to the given violating triplets.
pub fn loss_gradient(
    metric: &GroundMetric,
    data: ArrayView2<'_, f64>,
    triplets: &[Triplet],
    violations: &[usize],
    solver: &SolverConfig,
    mode: GradMode,
) -> Result<Array2<f64>> {
    if let Some(&v) = violations.iter().find(|&&v| v >= triplets.len()) {
        return input(format!("violation index {v} out of range"));
    }
    let subset: Vec<Triplet> = violations.iter().map(|&v| triplets[v]).collect();
    // Any positive margin works: the gradient only depends on the plans.
    let obj = TripletObjective::new(data, &subset, 1.0, *solver)?;
    let mut eval = obj.evaluate(metric)?;
    eval.violations = (0..subset.len()).collect();
    Ok(obj.gradient(metric, &eval, mode))
}
