use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};

/// A `T × d` series with labeled change-point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    data: Array2<f64>,
    change_points: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(data: Array2<f64>, change_points: Vec<usize>) -> Result<Self> {
        let t = data.nrows();
        if data.ncols() == 0 {
            return input("sequence must have at least one feature");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return input("sequence contains non-finite values");
        }
        if change_points.windows(2).any(|w| w[0] >= w[1]) {
            return input("change points must be strictly increasing");
        }
        if let Some(&last) = change_points.last() {
            if last >= t {
                return input(format!("change point {last} out of bounds for length {t}"));
            }
        }
        Ok(Self {
            data,
            change_points,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn change_points(&self) -> &[usize] {
        &self.change_points
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn into_parts(self) -> (Array2<f64>, Vec<usize>) {
        (self.data, self.change_points)
    }
}

/// A half-open block of rows `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
}

impl Window {
    pub fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn view<'a>(&self, data: ArrayView2<'a, f64>) -> ArrayView2<'a, f64> {
        data.slice_axis_move(Axis(0), (self.start..self.end()).into())
    }

    pub fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Anchor, similar and dissimilar windows harvested around one change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: Window,
    pub similar: Window,
    pub dissimilar: Window,
    /// The labeled index that generated this triplet.
    pub change_point: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Change points that produced triplets, in input order.
    pub used: Vec<usize>,
    /// Change points too close to the sequence edges.
    pub skipped: Vec<usize>,
}

impl TripletSet {
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    /// Triplets generated by the given change points.
    pub fn restricted_to(&self, cps: &[usize]) -> Vec<Triplet> {
        self.triplets
            .iter()
            .filter(|t| cps.contains(&t.change_point))
            .copied()
            .collect()
    }
}

/// Builds four triplets per usable change point.
///
/// With `b` the buffer, the pre-change windows are `[n−b−2w, n−b−w)` and
/// `[n−b−w, n−b)`, the post-change windows `[n+b, n+b+w)` and
/// `[n+b+w, n+b+2w)`. Each window serves once as anchor, paired with its
/// same-side neighbour and with the mirror-image window across the change.
pub fn make_triplets(seq: &LabeledSequence, w: usize, buffer: usize) -> Result<TripletSet> {
    if w == 0 {
        return input("window length must be at least 1");
    }
    let t = seq.len();
    let mut set = TripletSet {
        triplets: Vec::new(),
        used: Vec::new(),
        skipped: Vec::new(),
    };
    for &nc in seq.change_points() {
        let reach = buffer + 2 * w;
        if nc < reach || nc + reach > t {
            set.skipped.push(nc);
            continue;
        }
        let p1 = Window::new(nc - buffer - 2 * w, w);
        let p2 = Window::new(nc - buffer - w, w);
        let f1 = Window::new(nc + buffer, w);
        let f2 = Window::new(nc + buffer + w, w);
        for (anchor, similar, dissimilar) in
            [(p2, p1, f1), (p1, p2, f2), (f1, f2, p2), (f2, f1, p1)]
        {
            set.triplets.push(Triplet {
                anchor,
                similar,
                dissimilar,
                change_point: nc,
            });
        }
        set.used.push(nc);
    }
    if set.triplets.is_empty() {
        return Err(Error::Input(format!(
            "no usable change points: each needs {} samples (buffer {buffer} + 2 windows of {w}) on both sides within length {t}; {} labeled",
            buffer + 2 * w,
            seq.change_points().len()
        )));
    }
    Ok(set)
}
