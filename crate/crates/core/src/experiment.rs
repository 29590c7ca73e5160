//! Two-sample error studies on the GMM pair.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datagen::{sample_gmm_cloud, GmmSide};
use crate::error::{input, Result};
use crate::eval::{two_sample_trials, CurveAxis, ErrorCurve, Scorer, TrialDivergences};

/// Windows of `n` draws from one side of the GMM stream, with optional
/// additive `N(0, noise_var·I)` noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmPair {
    pub dim: usize,
    pub window: usize,
    /// Variance of the added noise; 0 adds none.
    pub noise_var: f64,
}

impl GmmPair {
    pub fn sample(&self, side: GmmSide, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let mut x = sample_gmm_cloud(side, self.window, self.dim, rng);
        if self.noise_var > 0.0 {
            let sd = self.noise_var.sqrt();
            x.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
        }
        x
    }

    /// Null-vs-null and null-vs-alternative divergences; the null side is
    /// the first mixture.
    pub fn trials(&self, scorer: &Scorer, n_trials: usize, seed: u64) -> Result<TrialDivergences> {
        if self.window == 0 || self.dim == 0 {
            return input("window and dimension must be positive");
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return input(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_var
            ));
        }
        let pair = *self;
        two_sample_trials(
            move |rng: &mut ChaCha8Rng| pair.sample(GmmSide::Alpha, rng),
            move |rng: &mut ChaCha8Rng| pair.sample(GmmSide::Beta, rng),
            scorer,
            n_trials,
            seed,
        )
    }
}

fn study(
    axis: CurveAxis,
    values: &[f64],
    make: impl Fn(f64) -> GmmPair,
    scorer: &Scorer,
    n_trials: usize,
    seed: u64,
) -> Result<ErrorCurve> {
    if values.is_empty() {
        return input("at least one axis value is required");
    }
    let mut points = Vec::new();
    for &v in values {
        let trials = make(v).trials(scorer, n_trials, seed)?;
        points.extend(trials.curve(axis, v, &trials.thresholds()).points);
    }
    Ok(ErrorCurve { axis, points })
}

/// Full Type-1/Type-2 trade-off for each window size.
pub fn errors_vs_window(
    scorer: &Scorer,
    windows: &[usize],
    noise_var: f64,
    n_trials: usize,
    seed: u64,
) -> Result<ErrorCurve> {
    let dim = scorer.metric.input_dim();
    let values: Vec<f64> = windows.iter().map(|&w| w as f64).collect();
    study(
        CurveAxis::WindowSize,
        &values,
        |w| GmmPair {
            dim,
            window: w as usize,
            noise_var,
        },
        scorer,
        n_trials,
        seed,
    )
}

/// Full Type-1/Type-2 trade-off for each noise variance.
pub fn errors_vs_noise(
    scorer: &Scorer,
    window: usize,
    noise_vars: &[f64],
    n_trials: usize,
    seed: u64,
) -> Result<ErrorCurve> {
    let dim = scorer.metric.input_dim();
    study(
        CurveAxis::NoiseLevel,
        noise_vars,
        |v| GmmPair {
            dim,
            window,
            noise_var: v,
        },
        scorer,
        n_trials,
        seed,
    )
}
