//! ROC/AUC scoring of detections, two-sample error rates, and the
//! projection-dimension study.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{peaks, ChangeScoreSeries, DetectMode};
use crate::error::{input, Result};
use crate::metric::{train_metric, LabeledSequence, Standardizer, TrainConfig};
use crate::ot::{sinkhorn_divergence, GroundMetric, PointCloud, SolverConfig};

/// One point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// `±inf` are written to JSON as the strings `"inf"` / `"-inf"`.
    #[serde(with = "extended_float")]
    pub threshold: f64,
}

mod extended_float {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t
                .parse()
                .map_err(|_| de::Error::custom(format!("not a float: '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    /// Ordered by decreasing threshold.
    pub roc_points: Vec<RocPoint>,
    pub match_margin: usize,
    pub mode: DetectMode,
}

/// Which candidate indices a threshold sweep is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AucOptions {
    pub match_margin: usize,
    pub mode: DetectMode,
    /// Neighborhood of the peak rule; ignored in raw mode.
    pub min_separation: usize,
}

impl Default for AucOptions {
    fn default() -> Self {
        Self {
            match_margin: 0,
            mode: DetectMode::Raw,
            min_separation: 1,
        }
    }
}

/// Greedy one-to-one matching: each truth, in order, takes the nearest
/// unmatched detection within `margin` (earlier index on ties).
pub fn match_detections(detections: &[usize], truth: &[usize], margin: usize) -> usize {
    let mut used = vec![false; detections.len()];
    let mut matched = 0;
    for &t in truth {
        let lo = detections.partition_point(|&d| d + margin < t);
        let mut best: Option<(usize, usize)> = None;
        for (k, &d) in detections.iter().enumerate().skip(lo) {
            if d > t + margin {
                break;
            }
            if used[k] {
                continue;
            }
            let dist = d.abs_diff(t);
            if best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((k, dist));
            }
        }
        if let Some((k, _)) = best {
            used[k] = true;
            matched += 1;
        }
    }
    matched
}

fn rates(detections: &[usize], truth: &[usize], margin: usize, negatives: usize) -> (f64, f64) {
    let matched = match_detections(detections, truth, margin);
    let tpr = matched as f64 / truth.len() as f64;
    let fpr = if negatives == 0 {
        0.0
    } else {
        ((detections.len() - matched) as f64 / negatives as f64).min(1.0)
    };
    (fpr, tpr)
}

/// Trapezoidal area under `(fpr, tpr)` points in sweep order.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) * 0.5)
        .sum()
}

/// Exact ROC over every distinct valid score, closed by the `(0, 0)` and
/// `(1, 1)` corners.
///
/// A detection at threshold `τ` is a candidate index with score `> τ`;
/// candidates are all valid indices (raw) or local maxima (peak). FPR counts
/// unmatched detections over valid indices that are not labeled changes.
pub fn auc(scores: &ChangeScoreSeries, truth: &[usize], opts: &AucOptions) -> Result<AucReport> {
    if truth.is_empty() {
        return input("AUC needs at least one labeled change");
    }
    if truth.windows(2).any(|w| w[0] >= w[1]) {
        return input("labels must be strictly increasing");
    }
    if opts.mode == DetectMode::Peak && opts.min_separation == 0 {
        return input("min_separation must be at least 1");
    }
    let x = &scores.scores;
    let candidates: Vec<usize> = match opts.mode {
        DetectMode::Raw => scores.valid_indices().collect(),
        DetectMode::Peak => peaks(scores, opts.min_separation),
    };
    let truth_valid = truth
        .iter()
        .filter(|&&t| t < scores.len() && scores.valid[t])
        .count();
    let negatives = scores.valid_count() - truth_valid;

    let mut levels: Vec<f64> = scores.valid_indices().map(|i| x[i]).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();

    let mut by_score = candidates.clone();
    by_score.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut active: Vec<usize> = Vec::new();
    let mut next = 0;
    let sweep = |tau: f64, active: &mut Vec<usize>, next: &mut usize| {
        while *next < by_score.len() && x[by_score[*next]] > tau {
            let i = by_score[*next];
            let pos = active.partition_point(|&a| a < i);
            active.insert(pos, i);
            *next += 1;
        }
        let (fpr, tpr) = rates(active, truth, opts.match_margin, negatives);
        RocPoint {
            fpr,
            tpr,
            threshold: tau,
        }
    };
    for &tau in &levels {
        points.push(sweep(tau, &mut active, &mut next));
    }
    points.push(sweep(f64::NEG_INFINITY, &mut active, &mut next));
    let last = points.last().expect("non-empty");
    if last.fpr != 1.0 || last.tpr != 1.0 {
        points.push(RocPoint {
            fpr: 1.0,
            tpr: 1.0,
            threshold: f64::NEG_INFINITY,
        });
    }
    Ok(AucReport {
        auc: trapezoid(&points),
        roc_points: points,
        match_margin: opts.match_margin,
        mode: opts.mode,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveAxis {
    WindowSize,
    NoiseLevel,
    ProjectionDim,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPoint {
    pub axis_value: f64,
    #[serde(with = "extended_float")]
    pub threshold: f64,
    pub type1: f64,
    pub type2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub axis: CurveAxis,
    pub points: Vec<ErrorPoint>,
}

/// Divergences from repeated null-vs-null and null-vs-alternative draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDivergences {
    pub null: Vec<f64>,
    pub alt: Vec<f64>,
}

impl TrialDivergences {
    /// Fraction of null trials with divergence `> τ`.
    pub fn type1(&self, tau: f64) -> f64 {
        frac(&self.null, |v| v > tau)
    }

    /// Fraction of alternative trials with divergence `≤ τ`.
    pub fn type2(&self, tau: f64) -> f64 {
        frac(&self.alt, |v| v <= tau)
    }

    /// Every distinct divergence plus `±∞`, ascending.
    pub fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.null.iter().chain(&self.alt).copied().collect();
        t.push(f64::NEG_INFINITY);
        t.push(f64::INFINITY);
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn curve(&self, axis: CurveAxis, axis_value: f64, taus: &[f64]) -> ErrorCurve {
        ErrorCurve {
            axis,
            points: taus
                .iter()
                .map(|&tau| ErrorPoint {
                    axis_value,
                    threshold: tau,
                    type1: self.type1(tau),
                    type2: self.type2(tau),
                })
                .collect(),
        }
    }

    /// Smallest Type-2 error over thresholds whose Type-1 error is at most
    /// `alpha`.
    pub fn type2_at(&self, alpha: f64) -> f64 {
        self.thresholds()
            .into_iter()
            .filter(|&t| self.type1(t) <= alpha)
            .map(|t| self.type2(t))
            .fold(1.0, f64::min)
    }

    /// Type-1 error at the smallest threshold whose Type-2 error reaches
    /// `beta`.
    pub fn type1_at_type2(&self, beta: f64) -> (f64, f64) {
        let tau = self
            .thresholds()
            .into_iter()
            .find(|&t| self.type2(t) >= beta)
            .unwrap_or(f64::INFINITY);
        (tau, self.type1(tau))
    }
}

fn frac(v: &[f64], pred: impl Fn(f64) -> bool) -> f64 {
    v.iter().filter(|&&x| pred(x)).count() as f64 / v.len() as f64
}

/// A metric plus the feature transform applied before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub metric: GroundMetric,
    pub standardizer: Standardizer,
    pub solver: SolverConfig,
}

impl Scorer {
    pub fn divergence(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
        let x = PointCloud::uniform(self.standardizer.apply(x)?)?;
        let y = PointCloud::uniform(self.standardizer.apply(y)?)?;
        sinkhorn_divergence(&x, &y, &self.metric, &self.solver)
    }
}

/// Runs `n_trials` null-vs-null and null-vs-alternative tests.
///
/// Trial `i` draws from its own ChaCha8 stream (`seed`, stream `i`), so the
/// result does not depend on thread scheduling.
pub fn two_sample_trials<N, A>(
    null_sampler: N,
    alt_sampler: A,
    scorer: &Scorer,
    n_trials: usize,
    seed: u64,
) -> Result<TrialDivergences>
where
    N: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync,
    A: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync,
{
    if n_trials == 0 {
        return input("n_trials must be at least 1");
    }
    let out: Vec<Result<(f64, f64)>> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x0 = null_sampler(&mut rng);
            let x1 = null_sampler(&mut rng);
            let y = alt_sampler(&mut rng);
            Ok((
                scorer.divergence(x0.view(), x1.view())?,
                scorer.divergence(x0.view(), y.view())?,
            ))
        })
        .collect();
    let mut null = Vec::with_capacity(n_trials);
    let mut alt = Vec::with_capacity(n_trials);
    for r in out {
        let (a, b) = r?;
        null.push(a);
        alt.push(b);
    }
    Ok(TrialDivergences { null, alt })
}

/// Type-1/Type-2 curve over `taus` (all observed divergences when `None`).
pub fn two_sample_error_rates<N, A>(
    null_sampler: N,
    alt_sampler: A,
    scorer: &Scorer,
    n_trials: usize,
    taus: Option<&[f64]>,
    seed: u64,
) -> Result<ErrorCurve>
where
    N: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync,
    A: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync,
{
    let trials = two_sample_trials(null_sampler, alt_sampler, scorer, n_trials, seed)?;
    let taus = match taus {
        Some(t) => t.to_vec(),
        None => trials.thresholds(),
    };
    Ok(trials.curve(CurveAxis::Threshold, 0.0, &taus))
}

/// Numerical rank of `LᵀL`: singular values above `1e-8·σ_max`.
pub fn metric_rank(l: &Array2<f64>) -> usize {
    let m = l.t().dot(l);
    let d = m.nrows();
    let mat = DMatrix::from_fn(d, d, |i, j| m[[i, j]]);
    let sv = mat.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjDimEntry {
    pub proj_dim: usize,
    /// `None` when training failed; the message is kept in `error`.
    pub rank: Option<usize>,
    pub threshold: f64,
    pub type1: f64,
    pub type2: f64,
    pub error: Option<String>,
}

/// Trains one metric per projection dimension and reports the rank of
/// `LᵀL` and the Type-1 error at the threshold calibrated to a Type-2 error
/// of `target_type2`.
#[allow(clippy::too_many_arguments)]
pub fn projection_dim_study<N, A>(
    train_seq: &LabeledSequence,
    base: &TrainConfig,
    dims: &[usize],
    null_sampler: N,
    alt_sampler: A,
    n_trials: usize,
    target_type2: f64,
    seed: u64,
) -> Result<(ErrorCurve, Vec<ProjDimEntry>)>
where
    N: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync + Copy,
    A: Fn(&mut ChaCha8Rng) -> Array2<f64> + Sync + Copy,
{
    if dims.is_empty() {
        return input("projection_dim_study needs at least one dimension");
    }
    let mut entries = Vec::with_capacity(dims.len());
    let mut points = Vec::new();
    for &r in dims {
        let cfg = TrainConfig {
            proj_dim: r,
            ..base.clone()
        };
        let model = match train_metric(train_seq, &cfg) {
            Ok(m) => m,
            Err(e) => {
                entries.push(ProjDimEntry {
                    proj_dim: r,
                    rank: None,
                    threshold: f64::NAN,
                    type1: f64::NAN,
                    type2: f64::NAN,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let scorer = Scorer {
            metric: model.metric.clone(),
            standardizer: model.standardizer.clone(),
            solver: cfg.solver,
        };
        let trials = two_sample_trials(null_sampler, alt_sampler, &scorer, n_trials, seed)?;
        let (tau, type1) = trials.type1_at_type2(target_type2);
        let type2 = trials.type2(tau);
        points.push(ErrorPoint {
            axis_value: r as f64,
            threshold: tau,
            type1,
            type2,
        });
        entries.push(ProjDimEntry {
            proj_dim: r,
            rank: Some(metric_rank(model.metric.l())),
            threshold: tau,
            type1,
            type2,
            error: None,
        });
    }
    Ok((
        ErrorCurve {
            axis: CurveAxis::ProjectionDim,
            points,
        },
        entries,
    ))
}
