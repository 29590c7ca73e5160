use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::init::{init_metric, InitScheme};
use super::objective::{PairKey, TripletObjective};
use super::standardize::Standardizer;
use super::triplets::{make_triplets, LabeledSequence, Triplet};
use crate::error::{input, Error, Result};
use crate::ot::{DualPotentials, GradMode, GroundMetric, SolverConfig};

/// How per-triplet hinge terms are combined into the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    /// Plain sum. With many triplets the step size has to shrink accordingly.
    Sum,
    /// Sum divided by the number of triplets in the set.
    #[default]
    Mean,
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Rows of `L`.
    pub proj_dim: usize,
    pub gamma: f64,
    pub learn_rate: f64,
    pub margin: f64,
    /// Weight of the ℓ1 penalty; 0 disables the proximal step.
    pub l1_weight: f64,
    pub iterations: usize,
    pub window: usize,
    pub buffer: usize,
    /// Share of labeled change points held out for model selection.
    pub validation_fraction: f64,
    pub seed: u64,
    pub grad_mode: GradMode,
    /// `None` picks [`InitScheme::default_for`].
    pub init: Option<InitScheme>,
    pub solver: SolverConfig,
    /// Z-score features before harvesting triplets.
    pub standardize: bool,
    /// Applies to the reported loss histories as well as the gradient.
    #[serde(default)]
    pub reduction: LossReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            proj_dim: 5,
            gamma: 0.1,
            learn_rate: 0.01,
            margin: 1.0,
            l1_weight: 0.0,
            iterations: 2000,
            window: 10,
            buffer: 0,
            validation_fraction: 0.2,
            seed: 0,
            grad_mode: GradMode::PaperCrossOnly,
            init: None,
            solver: SolverConfig::default(),
            standardize: true,
            reduction: LossReduction::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.proj_dim == 0 {
            return input("projection dimension must be at least 1");
        }
        if self.window == 0 {
            return input("window must be at least 1");
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("learning rate", self.learn_rate),
            ("margin", self.margin),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return input(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.l1_weight.is_finite() && self.l1_weight >= 0.0) {
            return input(format!(
                "l1 weight must be nonnegative, got {}",
                self.l1_weight
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return input(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// Transform at `best_iteration`, acting on standardized features.
    pub metric: GroundMetric,
    pub standardizer: Standardizer,
    /// Loss before step `t`, for `t = 0..=iterations`.
    pub train_loss_history: Vec<f64>,
    /// Empty when no change points were held out.
    pub val_loss_history: Vec<f64>,
    pub best_iteration: usize,
    pub config: TrainConfig,
    pub train_change_points: Vec<usize>,
    pub val_change_points: Vec<usize>,
    /// Non-fatal conditions worth reporting (skipped labels, tiny windows).
    pub warnings: Vec<String>,
}

/// `sign(x)·max(|x| − t, 0)`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// One proximal-gradient step `prox_{μλ‖·‖₁}(L − μ·G)`.
pub fn proximal_step(
    l: &Array2<f64>,
    grad: &Array2<f64>,
    learn_rate: f64,
    l1_weight: f64,
) -> Array2<f64> {
    let mut next = l - &(grad * learn_rate);
    if l1_weight > 0.0 {
        let t = learn_rate * l1_weight;
        next.mapv_inplace(|v| soft_threshold(v, t));
    }
    next
}

/// Splits change points into (train, validation), shuffling with `seed`.
pub fn split_change_points(cps: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order = cps.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * cps.len() as f64).round() as usize).min(cps.len().saturating_sub(1));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Learns `L` by proximal gradient descent on the triplet loss.
pub fn train_metric(seq: &LabeledSequence, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let standardizer = if cfg.standardize {
        Standardizer::fit(seq.data().view())
    } else {
        Standardizer::identity(seq.dim())
    };
    let data = standardizer.apply(seq.data().view())?;
    let z = LabeledSequence::new(data, seq.change_points().to_vec())?;
    let set = make_triplets(&z, cfg.window, cfg.buffer)?;

    let mut warnings = Vec::new();
    if !set.skipped.is_empty() {
        warnings.push(format!(
            "{} change point(s) too close to the sequence edges were skipped: {:?}",
            set.skipped.len(),
            set.skipped
        ));
    }
    if cfg.window == 1 {
        warnings.push("window of 1 sample: every cloud is a single point".into());
    }

    let (train_cps, val_cps) = split_change_points(&set.used, cfg.validation_fraction, cfg.seed);
    let train_t = set.restricted_to(&train_cps);
    let val_t = set.restricted_to(&val_cps);
    let d = z.dim();
    let scheme = cfg
        .init
        .unwrap_or_else(|| InitScheme::default_for(cfg.proj_dim, d));
    let l0 = init_metric(cfg.proj_dim, d, scheme, cfg.seed)?;

    let (train_hist, val_hist, best, l_best) = descend(z.data().view(), &train_t, &val_t, l0, cfg)?;
    Ok(TrainedModel {
        metric: GroundMetric::new(l_best, cfg.gamma)?,
        standardizer,
        train_loss_history: train_hist,
        val_loss_history: val_hist,
        best_iteration: best,
        config: cfg.clone(),
        train_change_points: train_cps,
        val_change_points: val_cps,
        warnings,
    })
}

type Descent = (Vec<f64>, Vec<f64>, usize, Array2<f64>);

fn descend(
    data: ArrayView2<'_, f64>,
    train: &[Triplet],
    val: &[Triplet],
    l0: Array2<f64>,
    cfg: &TrainConfig,
) -> Result<Descent> {
    let train_obj = TripletObjective::new(data, train, cfg.margin, cfg.solver)?;
    let val_obj = TripletObjective::new(data, val, cfg.margin, cfg.solver)?;
    let mut warm_train: HashMap<PairKey, DualPotentials> = HashMap::new();
    let mut warm_val: HashMap<PairKey, DualPotentials> = HashMap::new();
    let mut train_hist = Vec::with_capacity(cfg.iterations + 1);
    let mut val_hist = Vec::with_capacity(cfg.iterations + 1);
    let mut l = l0;
    let mut best = (0, f64::INFINITY, l.clone());
    let scale = |n: usize| match cfg.reduction {
        LossReduction::Sum => 1.0,
        LossReduction::Mean => 1.0 / n.max(1) as f64,
    };
    let (train_scale, val_scale) = (scale(train.len()), scale(val.len()));

    for t in 0..=cfg.iterations {
        let diverged = || Error::Diverged {
            last_finite_iteration: t.saturating_sub(1),
        };
        if l.iter().any(|v| !v.is_finite()) {
            return Err(diverged());
        }
        // Past the first iterate, an overflowing kernel means `L` has blown up.
        let blown = |e: Error| match e {
            Error::Triplet { ref source, .. }
                if t > 0 && matches!(**source, Error::Numerical(_)) =>
            {
                diverged()
            }
            e => e,
        };
        let metric = GroundMetric::new(l.clone(), cfg.gamma)?;
        let eval = train_obj
            .evaluate_warm(&metric, Some(&warm_train))
            .map_err(blown)?;
        let loss = eval.loss * train_scale;
        if !loss.is_finite() {
            return Err(diverged());
        }
        train_hist.push(loss);
        let select = if val.is_empty() {
            loss
        } else {
            let v = val_obj
                .evaluate_warm(&metric, Some(&warm_val))
                .map_err(blown)?;
            let v_loss = v.loss * val_scale;
            if !v_loss.is_finite() {
                return Err(diverged());
            }
            warm_val = TripletObjective::potentials(&v);
            val_hist.push(v_loss);
            v_loss
        };
        // Ties go to the later iterate, which has had more proximal shrinkage.
        if select <= best.1 {
            best = (t, select, l.clone());
        }
        if t == cfg.iterations {
            break;
        }
        let mut grad = train_obj.gradient(&metric, &eval, cfg.grad_mode);
        grad *= train_scale;
        warm_train = TripletObjective::potentials(&eval);
        l = proximal_step(&l, &grad, cfg.learn_rate, cfg.l1_weight);
    }
    Ok((train_hist, val_hist, best.0, best.2))
}
