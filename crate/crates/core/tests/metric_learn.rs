use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sinkcpd::datagen::{generate, Dataset, GenSpec};
use sinkcpd::metric::{
    init_metric, loss_gradient, make_triplets, proximal_step, soft_threshold, train_metric,
    triplet_loss, InitScheme, LabeledSequence, LossReduction, TrainConfig, Triplet,
    TripletObjective, Window,
};
use sinkcpd::ot::{pairwise_sq_dists, sinkhorn_solve, GradMode, GroundMetric, SolverConfig};
use sinkcpd::Error;

fn tight() -> SolverConfig {
    SolverConfig {
        tol: 1e-12,
        max_iter: 100_000,
    }
}

fn zeros(t: usize, cps: Vec<usize>) -> LabeledSequence {
    LabeledSequence::new(Array2::zeros((t, 2)), cps).unwrap()
}

fn small_gmm(changes: usize, dim: usize, seed: u64) -> LabeledSequence {
    let mut spec = GenSpec::new(Dataset::SwitchingGmm, changes, seed);
    spec.gmm_dim = dim;
    generate(&spec).unwrap()
}

#[test]
fn triplet_layout_example() {
    let set = make_triplets(&zeros(1000, vec![500]), 10, 0).unwrap();
    assert_eq!(set.len(), 4);
    let mut windows: Vec<(usize, usize)> = set
        .triplets
        .iter()
        .flat_map(|t| [t.anchor, t.similar, t.dissimilar])
        .map(|w| (w.start, w.end()))
        .collect();
    windows.sort_unstable();
    windows.dedup();
    assert_eq!(
        windows,
        vec![(480, 490), (490, 500), (500, 510), (510, 520)]
    );
}

#[test]
fn edge_change_points_are_skipped() {
    let set = make_triplets(&zeros(1000, vec![15, 500]), 10, 0).unwrap();
    assert_eq!(set.skipped, vec![15]);
    assert_eq!(set.used, vec![500]);
    let err = make_triplets(&zeros(1000, vec![15]), 10, 0).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn buffer_offsets_windows() {
    let set = make_triplets(&zeros(1000, vec![500]), 15, 10).unwrap();
    let starts: Vec<usize> = set.triplets.iter().map(|t| t.anchor.start).collect();
    assert_eq!(starts, vec![475, 460, 510, 525]);
}

#[test]
fn triplets_respect_sides() {
    let cps = vec![100, 230, 400, 401, 700];
    let set = make_triplets(&zeros(800, cps), 12, 3).unwrap();
    for t in &set.triplets {
        let nc = t.change_point;
        let before = |w: Window| w.end() <= nc;
        assert_eq!(before(t.anchor), before(t.similar));
        assert_ne!(before(t.anchor), before(t.dissimilar));
        for (a, b) in [
            (t.anchor, t.similar),
            (t.anchor, t.dissimilar),
            (t.similar, t.dissimilar),
        ] {
            assert!(!a.overlaps(&b));
        }
    }
}

#[test]
fn zero_metric_violates_every_triplet() {
    let seq = small_gmm(3, 4, 1);
    let set = make_triplets(&seq, 10, 0).unwrap();
    let m = GroundMetric::new(Array2::zeros((2, 4)), 0.1).unwrap();
    let (loss, viol) = triplet_loss(&m, seq.data().view(), &set.triplets, 0.7, &tight()).unwrap();
    assert_abs_diff_eq!(loss, 0.7 * set.len() as f64, epsilon = 1e-12);
    assert_eq!(viol, (0..set.len()).collect::<Vec<_>>());
    let g = loss_gradient(
        &m,
        seq.data().view(),
        &set.triplets,
        &viol,
        &tight(),
        GradMode::FullDebiased,
    )
    .unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn satisfied_hinge_gives_zero_loss() {
    // Two constant-ish regimes far apart.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut data = Array2::from_shape_fn((200, 2), |_| rng.random_range(-0.1..0.1));
    data.slice_mut(ndarray::s![100.., ..])
        .mapv_inplace(|v| v + 50.0);
    let seq = LabeledSequence::new(data, vec![100]).unwrap();
    let set = make_triplets(&seq, 10, 0).unwrap();
    let m = GroundMetric::identity(2, 0.1).unwrap();
    let (loss, viol) = triplet_loss(&m, seq.data().view(), &set.triplets, 1.0, &tight()).unwrap();
    assert_eq!(loss, 0.0);
    assert!(viol.is_empty());
    let g = loss_gradient(
        &m,
        seq.data().view(),
        &set.triplets,
        &viol,
        &tight(),
        GradMode::PaperCrossOnly,
    )
    .unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

/// Debiased divergence assembled directly from solver calls.
fn divergence_by_hand(x: &Array2<f64>, y: &Array2<f64>, l: &Array2<f64>, gamma: f64) -> f64 {
    let w = |a: &Array2<f64>, b: &Array2<f64>| {
        let (pa, pb) = (a.dot(&l.t()), b.dot(&l.t()));
        let c = pairwise_sq_dists(pa.view(), pb.view());
        let ua = vec![1.0 / a.nrows() as f64; a.nrows()];
        let ub = vec![1.0 / b.nrows() as f64; b.nrows()];
        sinkhorn_solve(c.view(), &ua, &ub, gamma, &tight())
            .unwrap()
            .value
    };
    w(x, y) - 0.5 * w(x, x) - 0.5 * w(y, y)
}

#[test]
fn single_triplet_matches_hand_composition() {
    let data = array![
        [0.0, 0.0],
        [0.5, 0.2],
        [0.1, -0.3],
        [0.4, 0.4],
        [1.5, 1.0],
        [2.0, 0.7]
    ];
    let t = Triplet {
        anchor: Window::new(0, 2),
        similar: Window::new(2, 2),
        dissimilar: Window::new(4, 2),
        change_point: 4,
    };
    let l = array![[1.0, 0.5], [-0.2, 0.8]];
    let gamma = 0.1;
    let m = GroundMetric::new(l.clone(), gamma).unwrap();
    let (loss, viol) = triplet_loss(&m, data.view(), &[t], 1.0, &tight()).unwrap();
    let part = |w: Window| data.slice(ndarray::s![w.start..w.end(), ..]).to_owned();
    let s = divergence_by_hand(&part(t.anchor), &part(t.similar), &l, gamma);
    let d = divergence_by_hand(&part(t.anchor), &part(t.dissimilar), &l, gamma);
    let expect = (1.0 - (d - s)).max(0.0);
    assert_abs_diff_eq!(loss, expect, epsilon = 1e-9);
    assert_eq!(viol.is_empty(), expect == 0.0);
}

#[test]
fn loss_gradient_matches_finite_differences_of_smooth_part() {
    let seq = small_gmm(2, 3, 4);
    let set = make_triplets(&seq, 6, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = Array2::from_shape_fn((2, 3), |_| rng.random_range(-0.5..0.5));
    let gamma = 0.5;
    let margin = 5.0;
    let m = GroundMetric::new(l.clone(), gamma).unwrap();
    let (_, viol) = triplet_loss(&m, seq.data().view(), &set.triplets, margin, &tight()).unwrap();
    assert!(!viol.is_empty());
    let g = loss_gradient(
        &m,
        seq.data().view(),
        &set.triplets,
        &viol,
        &tight(),
        GradMode::FullDebiased,
    )
    .unwrap();
    // The smooth part fixes the violation set found at `l`.
    let smooth = |l: &Array2<f64>| {
        let m = GroundMetric::new(l.clone(), gamma).unwrap();
        let subset: Vec<Triplet> = viol.iter().map(|&v| set.triplets[v]).collect();
        let obj = TripletObjective::new(seq.data().view(), &subset, margin, tight()).unwrap();
        let e = obj.evaluate(&m).unwrap();
        e.similar_div
            .iter()
            .zip(&e.dissimilar_div)
            .map(|(s, d)| margin - (d - s))
            .sum::<f64>()
    };
    let h = 1e-5;
    let mut fd = Array2::zeros(l.dim());
    for i in 0..l.nrows() {
        for j in 0..l.ncols() {
            let mut lp = l.clone();
            lp[[i, j]] += h;
            let mut lm = l.clone();
            lm[[i, j]] -= h;
            fd[[i, j]] = (smooth(&lp) - smooth(&lm)) / (2.0 * h);
        }
    }
    let err = (&g - &fd).mapv(|v| v * v).sum().sqrt() / fd.mapv(|v| v * v).sum().sqrt();
    assert!(err <= 1e-3, "relative error {err}");
}

#[test]
fn non_violating_triplets_do_not_change_the_gradient() {
    let seq = small_gmm(3, 3, 6);
    let set = make_triplets(&seq, 8, 0).unwrap();
    let m = GroundMetric::identity(3, 0.2).unwrap();
    let data = seq.data().view();
    let chosen = vec![1, 4, 6];
    let g_all = loss_gradient(
        &m,
        data,
        &set.triplets,
        &chosen,
        &tight(),
        GradMode::PaperCrossOnly,
    )
    .unwrap();
    let subset: Vec<Triplet> = chosen.iter().map(|&v| set.triplets[v]).collect();
    let g_sub = loss_gradient(
        &m,
        data,
        &subset,
        &[0, 1, 2],
        &tight(),
        GradMode::PaperCrossOnly,
    )
    .unwrap();
    for (a, b) in g_all.iter().zip(&g_sub) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

#[test]
fn init_examples() {
    assert_eq!(
        init_metric(3, 3, InitScheme::IdentityLike, 0).unwrap(),
        Array2::<f64>::eye(3)
    );
    let two = init_metric(2, 5, InitScheme::IdentityLike, 0).unwrap();
    assert_eq!(
        two,
        Array2::<f64>::eye(5).slice(ndarray::s![..2, ..]).to_owned()
    );
    let a = init_metric(5, 100, InitScheme::ScaledGaussian, 7).unwrap();
    let b = init_metric(5, 100, InitScheme::ScaledGaussian, 7).unwrap();
    assert_eq!(a, b);
    let sd = (a.mapv(|v| v * v).sum() / a.len() as f64).sqrt();
    assert!((sd - 0.1).abs() < 0.02, "{sd}");
    assert!(init_metric(4, 3, InitScheme::IdentityLike, 0).is_err());
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        proj_dim: 3,
        window: 10,
        iterations: 5,
        solver: SolverConfig {
            tol: 1e-9,
            max_iter: 5000,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_iterations_return_the_initialization() {
    let seq = small_gmm(6, 4, 8);
    let cfg = TrainConfig {
        iterations: 0,
        ..quick_cfg()
    };
    let model = train_metric(&seq, &cfg).unwrap();
    assert_eq!(
        model.metric.l(),
        &init_metric(3, 4, InitScheme::IdentityLike, 0).unwrap()
    );
    assert_eq!(model.best_iteration, 0);
    assert_eq!(model.train_loss_history.len(), 1);
}

#[test]
fn training_is_deterministic_and_selects_the_best_iterate() {
    let seq = small_gmm(10, 4, 9);
    let a = train_metric(&seq, &quick_cfg()).unwrap();
    let b = train_metric(&seq, &quick_cfg()).unwrap();
    assert_eq!(a.train_loss_history, b.train_loss_history);
    assert_eq!(a.val_loss_history, b.val_loss_history);
    assert_eq!(a.metric, b.metric);
    assert_eq!(a.train_loss_history.len(), 6);
    assert_eq!(a.val_loss_history.len(), 6);
    let min = a
        .val_loss_history
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.val_loss_history[a.best_iteration], min);
    assert_eq!(a.val_change_points.len(), 2);
}

#[test]
fn one_training_step_is_a_proximal_step() {
    let seq = small_gmm(6, 4, 10);
    let cfg = TrainConfig {
        iterations: 1,
        learn_rate: 1e-3,
        l1_weight: 0.5,
        validation_fraction: 0.0,
        standardize: false,
        reduction: LossReduction::Sum,
        ..quick_cfg()
    };
    let model = train_metric(&seq, &cfg).unwrap();
    let set = make_triplets(&seq, cfg.window, 0).unwrap();
    let l0 = init_metric(3, 4, InitScheme::IdentityLike, 0).unwrap();
    let m0 = GroundMetric::new(l0.clone(), cfg.gamma).unwrap();
    let obj =
        TripletObjective::new(seq.data().view(), &set.triplets, cfg.margin, cfg.solver).unwrap();
    let eval = obj.evaluate(&m0).unwrap();
    let grad = obj.gradient(&m0, &eval, cfg.grad_mode);
    let expect = proximal_step(&l0, &grad, cfg.learn_rate, cfg.l1_weight);
    for ((i, j), &v) in expect.indexed_iter() {
        let plain = l0[[i, j]] - cfg.learn_rate * grad[[i, j]];
        assert_eq!(v, soft_threshold(plain, cfg.learn_rate * cfg.l1_weight));
    }
    if model.best_iteration == 1 {
        for (a, b) in model.metric.l().iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    } else {
        assert!(model.train_loss_history[1] >= model.train_loss_history[0]);
    }
}

#[test]
fn heavy_l1_shrinks_the_transform_to_zero() {
    let seq = small_gmm(4, 4, 11);
    let set = make_triplets(&seq, 10, 0).unwrap();
    let data = seq.data().view();
    let mut l = init_metric(3, 4, InitScheme::IdentityLike, 0).unwrap();
    let lr = 0.01;
    let mut norms = vec![l.mapv(f64::abs).sum()];
    for _ in 0..40 {
        let m = GroundMetric::new(l.clone(), 0.1).unwrap();
        let (_, viol) = triplet_loss(&m, data, &set.triplets, 1.0, &tight()).unwrap();
        let g = loss_gradient(
            &m,
            data,
            &set.triplets,
            &viol,
            &tight(),
            GradMode::PaperCrossOnly,
        )
        .unwrap();
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        l = proximal_step(&l, &g, lr, 10.0 * scale.max(1.0));
        norms.push(l.mapv(f64::abs).sum());
    }
    assert!(norms.windows(2).all(|w| w[1] <= w[0]), "{norms:?}");
    assert_eq!(*norms.last().unwrap(), 0.0);
}

#[test]
fn published_gmm_setting_improves_validation_loss() {
    let seq = small_gmm(25, 100, 2024);
    let cfg = TrainConfig {
        proj_dim: 5,
        window: 10,
        gamma: 0.1,
        learn_rate: 0.01,
        iterations: 2000,
        ..TrainConfig::default()
    };
    let model = train_metric(&seq, &cfg).unwrap();
    let v = &model.val_loss_history;
    assert_eq!(v.len(), 2001);
    assert!(
        v[model.best_iteration] < v[0],
        "{} vs {}",
        v[model.best_iteration],
        v[0]
    );
}

#[test]
fn mean_reduction_divides_the_summed_loss() {
    let seq = small_gmm(6, 4, 10);
    let base = TrainConfig {
        iterations: 0,
        validation_fraction: 0.0,
        standardize: false,
        ..quick_cfg()
    };
    let sum = train_metric(
        &seq,
        &TrainConfig {
            reduction: LossReduction::Sum,
            ..base.clone()
        },
    )
    .unwrap();
    let mean = train_metric(&seq, &base).unwrap();
    let n = make_triplets(&seq, base.window, 0).unwrap().len() as f64;
    assert_abs_diff_eq!(
        mean.train_loss_history[0] * n,
        sum.train_loss_history[0],
        epsilon = 1e-9
    );
}

#[test]
fn runaway_steps_report_divergence() {
    let seq = small_gmm(6, 4, 10);
    let cfg = TrainConfig {
        learn_rate: 1e6,
        iterations: 50,
        reduction: LossReduction::Sum,
        ..quick_cfg()
    };
    match train_metric(&seq, &cfg) {
        Err(sinkcpd::Error::Diverged { .. }) => {}
        other => panic!("{:?}", other.map(|m| m.train_loss_history)),
    }
}

#[test]
fn ties_at_zero_loss_select_the_latest_iterate() {
    let data = Array2::from_shape_fn((120, 2), |(i, j)| {
        let level = if (i / 30) % 2 == 1 { 100.0 } else { 0.0 };
        level + 0.01 * ((i * 7 + j * 3) % 5) as f64
    });
    let seq = LabeledSequence::new(data, vec![30, 60, 90]).unwrap();
    let cfg = TrainConfig {
        proj_dim: 2,
        window: 5,
        iterations: 4,
        validation_fraction: 0.0,
        standardize: false,
        ..quick_cfg()
    };
    let model = train_metric(&seq, &cfg).unwrap();
    assert!(model.train_loss_history.iter().all(|&v| v == 0.0));
    assert_eq!(model.best_iteration, 4);
}
