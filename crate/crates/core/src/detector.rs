//! Sliding-window change statistics and thresholded detections.

use ndarray::{s, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::ot::{
    debias, pairwise_sq_dists, sinkhorn_divergence, DualPotentials, GroundMetric, PointCloud,
    SinkhornWorkspace, SolverConfig,
};

/// Per-index divergence between the windows `[n − w, n)` and `[n, n + w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeScoreSeries {
    /// One entry per input row; 0 outside `valid_range`.
    pub scores: Vec<f64>,
    pub valid: Vec<bool>,
    /// Positions whose score was carried forward from an earlier index.
    pub interpolated: Vec<bool>,
    /// Inclusive `(first, last)` scored positions.
    pub valid_range: (usize, usize),
    pub window: usize,
    pub stride: usize,
}

impl ChangeScoreSeries {
    /// Wraps precomputed scores, all of them valid.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return input("score series is empty");
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return input("scores must be finite");
        }
        let t = scores.len();
        Ok(Self {
            scores,
            valid: vec![true; t],
            interpolated: vec![false; t],
            valid_range: (0, t - 1),
            window: 0,
            stride: 1,
        })
    }

    /// Rebuilds a series from per-index `(score, valid)` pairs.
    pub fn from_masked(scores: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if scores.len() != valid.len() {
            return Err(Error::Dimension {
                what: "validity mask length",
                expected: scores.len(),
                got: valid.len(),
            });
        }
        let first = valid.iter().position(|&v| v);
        let last = valid.iter().rposition(|&v| v);
        let (Some(first), Some(last)) = (first, last) else {
            return input("score series has no valid entries");
        };
        if scores.iter().zip(&valid).any(|(s, &v)| v && !s.is_finite()) {
            return input("valid scores must be finite");
        }
        let t = scores.len();
        Ok(Self {
            scores,
            valid,
            interpolated: vec![false; t],
            valid_range: (first, last),
            window: 0,
            stride: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices inside the valid mask.
    pub fn valid_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| v.then_some(i))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// How thresholded scores turn into detections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectMode {
    /// Every index whose score exceeds the threshold.
    Raw,
    /// Only local maxima over `±min_separation`.
    #[default]
    Peak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub indices: Vec<usize>,
    pub threshold: f64,
    pub min_separation: usize,
    pub mode: DetectMode,
}

/// Positions scored directly: multiples of `stride` plus the first valid
/// index.
fn scored_positions(first: usize, last: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![first];
    let mut n = first.div_ceil(stride) * stride;
    if n == first {
        n += stride;
    }
    while n <= last {
        out.push(n);
        n += stride;
    }
    out
}

fn check_args(
    seq: ArrayView2<'_, f64>,
    metric: &GroundMetric,
    w: usize,
    stride: usize,
) -> Result<()> {
    let t = seq.nrows();
    if w == 0 {
        return input("window must be at least 1");
    }
    if stride == 0 {
        return input("stride must be at least 1");
    }
    if t < 2 * w {
        return input(format!(
            "sequence of length {t} is shorter than two windows of {w}"
        ));
    }
    if seq.ncols() != metric.input_dim() {
        return Err(Error::Dimension {
            what: "sequence dimension vs metric",
            expected: metric.input_dim(),
            got: seq.ncols(),
        });
    }
    if seq.iter().any(|v| !v.is_finite()) {
        return input("sequence contains non-finite values");
    }
    Ok(())
}

fn assemble(
    t: usize,
    w: usize,
    stride: usize,
    positions: &[usize],
    values: &[f64],
) -> ChangeScoreSeries {
    let (first, last) = (w, t - w);
    let mut scores = vec![0.0; t];
    let mut valid = vec![false; t];
    let mut interpolated = vec![false; t];
    let mut k = 0;
    for n in first..=last {
        valid[n] = true;
        if k < positions.len() && positions[k] == n {
            scores[n] = values[k];
            k += 1;
        } else {
            scores[n] = scores[n - 1];
            interpolated[n] = true;
        }
    }
    ChangeScoreSeries {
        scores,
        valid,
        interpolated,
        valid_range: (first, last),
        window: w,
        stride,
    }
}

/// Reference implementation: one independent divergence per scored index.
pub fn change_scores_naive(
    seq: ArrayView2<'_, f64>,
    metric: &GroundMetric,
    w: usize,
    stride: usize,
    solver: &SolverConfig,
) -> Result<ChangeScoreSeries> {
    check_args(seq, metric, w, stride)?;
    let t = seq.nrows();
    let positions = scored_positions(w, t - w, stride);
    let mut values = Vec::with_capacity(positions.len());
    for &n in &positions {
        let xp = PointCloud::uniform(seq.slice(s![n - w..n, ..]).to_owned())?;
        let xf = PointCloud::uniform(seq.slice(s![n..n + w, ..]).to_owned())?;
        values.push(sinkhorn_divergence(&xp, &xf, metric, solver)?);
    }
    Ok(assemble(t, w, stride, &positions, &values))
}

const CHUNK: usize = 32;

/// Scores every window pair, projecting the sequence once, caching the
/// self-transport terms per window start, and solving chunks of positions
/// in parallel.
pub fn change_scores(
    seq: ArrayView2<'_, f64>,
    metric: &GroundMetric,
    w: usize,
    stride: usize,
    solver: &SolverConfig,
) -> Result<ChangeScoreSeries> {
    batched(seq, metric, w, stride, solver, false)
}

/// Like [`change_scores`], but each solve inside a chunk starts from the
/// previous position's potentials shifted by the stride. Much faster on long
/// sequences; the scores agree with the cold path up to the solver tolerance.
pub fn change_scores_warm(
    seq: ArrayView2<'_, f64>,
    metric: &GroundMetric,
    w: usize,
    stride: usize,
    solver: &SolverConfig,
) -> Result<ChangeScoreSeries> {
    batched(seq, metric, w, stride, solver, true)
}

fn batched(
    seq: ArrayView2<'_, f64>,
    metric: &GroundMetric,
    w: usize,
    stride: usize,
    solver: &SolverConfig,
    warm: bool,
) -> Result<ChangeScoreSeries> {
    check_args(seq, metric, w, stride)?;
    solver.validate()?;
    let t = seq.nrows();
    let z = metric.project(seq)?;
    let gamma = metric.gamma();
    let weights = vec![1.0 / w as f64; w];
    let positions = scored_positions(w, t - w, stride);

    let mut starts: Vec<usize> = positions.iter().flat_map(|&n| [n - w, n]).collect();
    starts.sort_unstable();
    starts.dedup();
    let window = |s: usize| z.slice(s![s..s + w, ..]);
    // Returns the value and the potentials in (a, b) orientation.
    let solve = |ws: &mut SinkhornWorkspace,
                 a: ArrayView2<'_, f64>,
                 b: ArrayView2<'_, f64>,
                 init: Option<&DualPotentials>| {
        let c = pairwise_sq_dists(a, b);
        ws.solve(c.view(), &weights, &weights, gamma, solver, init)
            .map(|r| (r.value, r.potentials))
    };

    let self_terms = par_chunks(&starts, |ws, prev, &s| {
        let init = prev.and_then(|(p, pot)| shift(pot, s - p, w));
        let (v, pot) = solve(ws, window(s), window(s), init.as_ref())?;
        Ok((v, warm.then_some((s, pot))))
    })?;
    let lookup = |s: usize| self_terms[starts.binary_search(&s).expect("cached start")];
    let values = par_chunks(&positions, |ws, prev, &n| {
        let (xp, xf) = (window(n - w), window(n));
        let init = prev.and_then(|(p, pot)| shift(pot, n - p, w));
        let (cross, pot) = if cmp_rows(xp, xf) == std::cmp::Ordering::Greater {
            let flipped = init.map(|p| DualPotentials { f: p.g, g: p.f });
            let (v, p) = solve(ws, xf, xp, flipped.as_ref())?;
            (v, DualPotentials { f: p.g, g: p.f })
        } else {
            solve(ws, xp, xf, init.as_ref())?
        };
        Ok((
            debias(cross, lookup(n - w), lookup(n)),
            warm.then_some((n, pot)),
        ))
    })?;
    Ok(assemble(t, w, stride, &positions, &values))
}

/// Potentials of a window pair moved `delta` rows forward: surviving rows
/// keep their values, new rows take the mean of the survivors.
fn shift(pot: &DualPotentials, delta: usize, w: usize) -> Option<DualPotentials> {
    if delta == 0 || delta >= w {
        return None;
    }
    let part = |x: &ndarray::Array1<f64>| {
        let kept = x.slice(s![delta..]);
        let fill = kept.mean().unwrap_or(0.0);
        let mut out = kept.to_vec();
        out.resize(w, fill);
        ndarray::Array1::from(out)
    };
    Some(DualPotentials {
        f: part(&pot.f),
        g: part(&pot.g),
    })
}

/// Same orientation rule as the pairwise divergence so both code paths solve
/// the identical problem.
fn cmp_rows(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> std::cmp::Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

type Carry = Option<(usize, DualPotentials)>;

/// Runs `f` over `items` in fixed-size chunks, in parallel across chunks and
/// in order within one, handing each call what the previous call of its
/// chunk carried forward. Chunk boundaries do not depend on the thread count.
fn par_chunks<F>(items: &[usize], f: F) -> Result<Vec<f64>>
where
    F: Fn(&mut SinkhornWorkspace, Option<&(usize, DualPotentials)>, &usize) -> Result<(f64, Carry)>
        + Sync,
{
    let chunks: Vec<Result<Vec<f64>>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = SinkhornWorkspace::default();
            let mut carry: Carry = None;
            let mut out = Vec::with_capacity(chunk.len());
            for it in chunk {
                let (v, next) = f(&mut ws, carry.as_ref(), it)?;
                out.push(v);
                carry = next;
            }
            Ok(out)
        })
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Thresholds a score series.
///
/// In peak mode an index is kept when its score exceeds `tau`, is strictly
/// larger than every valid score up to `min_separation` to the left, no
/// smaller than those to the right, and strictly larger than at least one
/// of them. On a plateau the leftmost index wins; a neighborhood that is
/// flat throughout has no peak.
pub fn detect(
    scores: &ChangeScoreSeries,
    tau: f64,
    min_separation: usize,
    mode: DetectMode,
) -> Result<Detection> {
    if tau.is_nan() {
        return input("threshold must not be NaN");
    }
    if min_separation == 0 {
        return input("min_separation must be at least 1");
    }
    let candidates = match mode {
        DetectMode::Raw => scores.valid_indices().collect(),
        DetectMode::Peak => peaks(scores, min_separation),
    };
    let indices = candidates
        .into_iter()
        .filter(|&n| scores.scores[n] > tau)
        .collect();
    Ok(Detection {
        indices,
        threshold: tau,
        min_separation,
        mode,
    })
}

/// Local maxima of the valid scores (independent of any threshold).
pub fn peaks(scores: &ChangeScoreSeries, min_separation: usize) -> Vec<usize> {
    let t = scores.len();
    let x = &scores.scores;
    scores
        .valid_indices()
        .filter(|&n| {
            let lo = n.saturating_sub(min_separation);
            let hi = (n + min_separation).min(t - 1);
            let near = || (lo..=hi).filter(|&m| m != n && scores.valid[m]);
            (lo..n).all(|m| !scores.valid[m] || x[n] > x[m])
                && (n + 1..=hi).all(|m| !scores.valid[m] || x[n] >= x[m])
                && near().any(|m| x[n] > x[m])
        })
        .collect()
}
