//! Seeded generators for the synthetic benchmarks.
//!
//! Every generator is a pure function of its [`GenSpec`]: the stream comes
//! from a ChaCha20 generator seeded with `spec.seed`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::metric::LabeledSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    SwitchingVar,
    SwitchingGmm,
    FreqMixture,
    FreqSlopes,
}

impl Dataset {
    pub const ALL: [Dataset; 4] = [
        Dataset::SwitchingVar,
        Dataset::SwitchingGmm,
        Dataset::FreqMixture,
        Dataset::FreqSlopes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::SwitchingVar => "var",
            Dataset::SwitchingGmm => "gmm",
            Dataset::FreqMixture => "freq",
            Dataset::FreqSlopes => "freq-slope",
        }
    }

    /// Samples between consecutive labeled changes.
    pub fn default_segment_len(self) -> usize {
        match self {
            Dataset::SwitchingVar | Dataset::SwitchingGmm => 100,
            // 100 seconds at 10 samples per second.
            Dataset::FreqMixture | Dataset::FreqSlopes => 1000,
        }
    }

    pub fn default_dim(self) -> usize {
        match self {
            Dataset::SwitchingVar => 50,
            Dataset::SwitchingGmm => 100,
            Dataset::FreqMixture => 2,
            Dataset::FreqSlopes => 50,
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "var" | "switching-var" | "switching_var" => Ok(Dataset::SwitchingVar),
            "gmm" | "switching-gmm" | "switching_gmm" => Ok(Dataset::SwitchingGmm),
            "freq" | "freq-mixture" | "freq_mixture" => Ok(Dataset::FreqMixture),
            "freq-slope" | "freq-slopes" | "freq_slopes" => Ok(Dataset::FreqSlopes),
            _ => input(format!(
                "unknown dataset '{s}' (expected one of var, gmm, freq, freq-slope)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub dataset: Dataset,
    pub n_changes: usize,
    pub segment_len: usize,
    /// Multiplies the standard deviation of the dataset's additive noise.
    /// The variance and GMM streams have none, so it has no effect there.
    pub noise_scale: f64,
    pub seed: u64,
    /// Dimension of the GMM stream; ignored elsewhere.
    pub gmm_dim: usize,
}

impl GenSpec {
    pub fn new(dataset: Dataset, n_changes: usize, seed: u64) -> Self {
        Self {
            dataset,
            n_changes,
            segment_len: dataset.default_segment_len(),
            noise_scale: 1.0,
            seed,
            gmm_dim: Dataset::SwitchingGmm.default_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_changes == 0 {
            return input("at least one change is required");
        }
        if self.segment_len < 2 {
            return input(format!(
                "segment length must be at least 2, got {}",
                self.segment_len
            ));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return input(format!(
                "noise scale must be nonnegative, got {}",
                self.noise_scale
            ));
        }
        if self.dataset == Dataset::SwitchingGmm && self.gmm_dim < 3 {
            return input(format!(
                "GMM dimension must be at least 3, got {}",
                self.gmm_dim
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.n_changes + 1) * self.segment_len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn change_points(&self) -> Vec<usize> {
        (1..=self.n_changes).map(|k| k * self.segment_len).collect()
    }
}

pub fn generate(spec: &GenSpec) -> Result<LabeledSequence> {
    match spec.dataset {
        Dataset::SwitchingVar => gen_switching_var(spec),
        Dataset::SwitchingGmm => gen_switching_gmm(spec),
        Dataset::FreqMixture => gen_freq_mixture(spec),
        Dataset::FreqSlopes => gen_freq_slopes(spec),
    }
}

fn rng_for(spec: &GenSpec) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(spec.seed)
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

const AR_BURN_IN: usize = 200;

/// AR(2) in the first dimension with innovation σ alternating 1, 5, 1, …;
/// 49 further dimensions of standard normal noise.
pub fn gen_switching_var(spec: &GenSpec) -> Result<LabeledSequence> {
    spec.validate()?;
    let mut rng = rng_for(spec);
    let t = spec.len();
    let mut data = Array2::zeros((t, 50));
    let (mut x1, mut x2) = (0.0, 0.0);
    for _ in 0..AR_BURN_IN {
        let x = 0.6 * x1 - 0.5 * x2 + normal(&mut rng);
        (x2, x1) = (x1, x);
    }
    for n in 0..t {
        let sigma = if (n / spec.segment_len) % 2 == 0 {
            1.0
        } else {
            5.0
        };
        let x = 0.6 * x1 - 0.5 * x2 + sigma * normal(&mut rng);
        (x2, x1) = (x1, x);
        data[[n, 0]] = x;
        for j in 1..50 {
            data[[n, j]] = normal(&mut rng);
        }
    }
    LabeledSequence::new(data, spec.change_points())
}

/// The two mixtures of the GMM stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmmSide {
    /// `½N(0, I) + ½N(1, Σ₀)`, `Σ₀ = diag(3, 3, 3, 1, …)`.
    Alpha,
    /// `½N(0, I) + ½N(1.5, Σ₁)`, `Σ₁ = diag(5, 5, 5, 1, …)`.
    Beta,
}

impl GmmSide {
    fn params(self) -> (f64, f64) {
        match self {
            GmmSide::Alpha => (1.0, 3.0),
            GmmSide::Beta => (1.5, 5.0),
        }
    }
}

/// Draws one mixture sample into `out`.
pub fn sample_gmm(side: GmmSide, out: &mut [f64], rng: &mut impl Rng) {
    let (mean, var) = side.params();
    let shifted = rng.random_bool(0.5);
    for (j, v) in out.iter_mut().enumerate() {
        let z = normal(rng);
        *v = if shifted {
            let sd = if j < 3 { var.sqrt() } else { 1.0 };
            mean + sd * z
        } else {
            z
        };
    }
}

/// `n × d` i.i.d. draws from one mixture.
pub fn sample_gmm_cloud(side: GmmSide, n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = Array2::zeros((n, d));
    for mut row in out.rows_mut() {
        sample_gmm(side, row.as_slice_mut().expect("standard layout"), rng);
    }
    out
}

pub fn gen_switching_gmm(spec: &GenSpec) -> Result<LabeledSequence> {
    spec.validate()?;
    let mut rng = rng_for(spec);
    let t = spec.len();
    let mut data = Array2::zeros((t, spec.gmm_dim));
    for (n, mut row) in data.rows_mut().into_iter().enumerate() {
        let side = if (n / spec.segment_len) % 2 == 0 {
            GmmSide::Alpha
        } else {
            GmmSide::Beta
        };
        sample_gmm(side, row.as_slice_mut().expect("standard layout"), &mut rng);
    }
    LabeledSequence::new(data, spec.change_points())
}

/// Samples per second of the frequency streams.
pub const SAMPLE_RATE: f64 = 10.0;

const FREQ_DIM1: [[f64; 3]; 2] = [[0.1, 0.5, 0.3], [0.1, 0.5, 0.35]];
const FREQ_DIM2: [[f64; 3]; 2] = [[1.0, 1.5, 1.7], [1.0, 1.5, 0.35]];
const FREQ_NOISE_VAR: f64 = 0.1;

fn sines(freqs: &[f64; 3], t: f64) -> f64 {
    freqs.iter().map(|f| (2.0 * PI * f * t).sin()).sum()
}

/// Noise-free value of the frequency stream at sample `n` for segment type
/// `kind` (0 or 1).
pub fn freq_signal(n: usize, kind: usize) -> [f64; 2] {
    let t = n as f64 / SAMPLE_RATE;
    [sines(&FREQ_DIM1[kind], t), sines(&FREQ_DIM2[kind], t)]
}

pub fn gen_freq_mixture(spec: &GenSpec) -> Result<LabeledSequence> {
    spec.validate()?;
    let mut rng = rng_for(spec);
    let data = freq_block(spec, &mut rng);
    LabeledSequence::new(data, spec.change_points())
}

fn freq_block(spec: &GenSpec, rng: &mut ChaCha20Rng) -> Array2<f64> {
    let t = spec.len();
    let sd = spec.noise_scale * FREQ_NOISE_VAR.sqrt();
    let mut data = Array2::zeros((t, 2));
    for n in 0..t {
        let kind = (n / spec.segment_len) % 2;
        let clean = freq_signal(n, kind);
        for j in 0..2 {
            let e = if sd > 0.0 { sd * normal(rng) } else { 0.0 };
            data[[n, j]] = clean[j] + e;
        }
    }
    data
}

/// Per-sample gradient of the slope dimensions.
pub const SLOPE: f64 = 0.06;
/// Samples between slope reversals.
pub const SLOPE_PERIOD: usize = 1000;
/// First slope reversal; offset so reversals never fall on a labeled change.
pub const SLOPE_OFFSET: usize = 500;
const SLOPE_NOISE_VAR: f64 = 1e-4;

/// Noise-free value of slope dimension `k` (0-based among the 48) at `n`.
///
/// The first 24 start falling, the rest start rising; the direction flips
/// at `SLOPE_OFFSET + j·SLOPE_PERIOD`.
pub fn slope_signal(n: usize, k: usize) -> f64 {
    let sign0 = if k < 24 { -1.0 } else { 1.0 };
    let mut value = 0.0;
    let mut start = 0;
    let mut sign = sign0;
    let mut end = SLOPE_OFFSET;
    while end <= n {
        value += sign * SLOPE * (end - start) as f64;
        sign = -sign;
        start = end;
        end += SLOPE_PERIOD;
    }
    value + sign * SLOPE * (n - start) as f64
}

/// Breakpoints of the slope dimensions inside a stream of length `t`.
pub fn slope_breakpoints(t: usize) -> Vec<usize> {
    (0..)
        .map(|j| SLOPE_OFFSET + j * SLOPE_PERIOD)
        .take_while(|&b| b < t)
        .collect()
}

/// Frequency stream plus 48 zig-zag dimensions; labels mark only the
/// frequency switches.
pub fn gen_freq_slopes(spec: &GenSpec) -> Result<LabeledSequence> {
    spec.validate()?;
    let mut rng = rng_for(spec);
    let freq = freq_block(spec, &mut rng);
    let t = spec.len();
    let sd = spec.noise_scale * SLOPE_NOISE_VAR.sqrt();
    let mut data = Array2::zeros((t, 50));
    data.slice_mut(s![.., 0..2]).assign(&freq);
    for n in 0..t {
        for k in 0..48 {
            let e = if sd > 0.0 { sd * normal(&mut rng) } else { 0.0 };
            data[[n, 2 + k]] = slope_signal(n, k) + e;
        }
    }
    LabeledSequence::new(data, spec.change_points())
}
