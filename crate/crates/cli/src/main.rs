use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sinkcpd::datagen::{generate, Dataset, GenSpec};
use sinkcpd::detector::{change_scores, change_scores_warm, detect, DetectMode};
use sinkcpd::eval::{auc, projection_dim_study, AucOptions, ErrorCurve, Scorer};
use sinkcpd::experiment::{errors_vs_noise, errors_vs_window, GmmPair};
use sinkcpd::io::{
    atomic_write, load_model, read_labels, read_scores_csv, read_sequence_csv, save_model,
    write_labels, write_scores_csv, write_sequence_csv, ModelFile,
};
use sinkcpd::metric::{train_metric, InitScheme, LabeledSequence, LossReduction, Standardizer};
use sinkcpd::ot::{GradMode, GroundMetric, SolverConfig};
use sinkcpd::presets::Preset;
use sinkcpd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sinkcpd",
    version,
    about = "Change-point detection with learned-metric Sinkhorn divergences"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled sequence to <out>/data.csv and <out>/labels.txt.
    Generate(GenerateArgs),
    /// Learn a ground metric from a labeled sequence.
    Train(TrainArgs),
    /// Score a sequence with sliding windows and threshold the scores.
    Detect(DetectArgs),
    /// ROC/AUC of a score file against labels (JSON on stdout).
    Eval(EvalArgs),
    /// Two-sample error studies written as CSV curves.
    Experiment {
        #[command(subcommand)]
        which: Experiment,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// var, gmm, freq or freq-slope.
    #[arg(long)]
    dataset: Dataset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 25)]
    changes: usize,
    /// Samples per segment (dataset default when omitted).
    #[arg(long)]
    segment_len: Option<usize>,
    /// Multiplier on the additive noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    /// Dimension of the GMM stream.
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradArg {
    CrossOnly,
    FullDebiased,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    IdentityLike,
    ScaledGaussian,
}

#[derive(Args)]
struct SolverArgs {
    /// Marginal residual tolerance of the Sinkhorn solver.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Start from a published row: gmm, freq, freq-slope, beedance, hasc,
    /// yahoo, ecg, sleep. Explicit flags override it.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    proj_dim: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    #[arg(long)]
    l1: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GradArg::CrossOnly)]
    grad_mode: GradArg,
    /// How hinge terms are combined over the triplets.
    #[arg(long, value_enum, default_value_t = ReductionArg::Mean)]
    reduction: ReductionArg,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Use raw features instead of z-scoring them.
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Peak,
}

impl From<ModeArg> for DetectMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => DetectMode::Raw,
            ModeArg::Peak => DetectMode::Peak,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model; without one the identity metric scores raw features.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Window length (the model's training window when omitted).
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Detection threshold; `inf` disables detections.
    #[arg(long, allow_hyphen_values = true)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Peak)]
    mode: ModeArg,
    /// Peak neighborhood (defaults to the window).
    #[arg(long)]
    min_separation: Option<usize>,
    /// Regularization for the identity metric; ignored with a model.
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Warm-start consecutive solves from the previous window's potentials.
    #[arg(long)]
    warm: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
    /// Detection list (defaults to `<out>` with a `.detections.txt` suffix).
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Match tolerance in samples.
    #[arg(long, default_value_t = 0)]
    margin: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    min_separation: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScorerArgs {
    /// Trained model; identity metric on raw features when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dimension of the GMM pair when no model is given.
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    #[arg(long, default_value_t = 500)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Experiment {
    /// Type-1/Type-2 trade-off per window size.
    ErrorsVsWindow {
        #[arg(long, value_delimiter = ',', required = true)]
        windows: Vec<usize>,
        /// Variance of additive Gaussian noise.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Type-1/Type-2 trade-off per noise variance.
    ErrorsVsNoise {
        #[arg(long, value_delimiter = ',', required = true)]
        noise: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[command(flatten)]
        scorer: ScorerArgs,
    },
    /// Train one metric per projection dimension on a generated GMM stream
    /// and report rank and Type-1 error at a fixed Type-2 error.
    ProjDim {
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 25)]
        changes: usize,
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        window: usize,
        #[arg(long, default_value_t = 0.1)]
        target_type2: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SINKCPD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Input(format!(
            "SINKCPD_THREADS must be a positive integer, got '{raw}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment { which } => cmd_experiment(which),
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let mut spec = GenSpec::new(a.dataset, a.changes, a.seed);
    if let Some(n) = a.segment_len {
        spec.segment_len = n;
    }
    spec.noise_scale = a.noise_scale;
    spec.gmm_dim = a.dim;
    let seq = generate(&spec)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Input(format!("{}: {e}", a.out.display())))?;
    write_sequence_csv(&a.out.join("data.csv"), seq.data())?;
    write_labels(&a.out.join("labels.txt"), seq.change_points())?;
    eprintln!(
        "wrote {} x {} sequence with {} changes to {}",
        seq.len(),
        seq.dim(),
        seq.change_points().len(),
        a.out.display()
    );
    Ok(())
}

fn load_labeled(data: &Path, labels: &Path) -> Result<LabeledSequence> {
    let x = read_sequence_csv(data)?;
    let cps = read_labels(labels)?;
    if let Some(&bad) = cps.iter().find(|&&c| c >= x.nrows()) {
        return Err(Error::Input(format!(
            "label {bad} is outside a sequence of length {}",
            x.nrows()
        )));
    }
    LabeledSequence::new(x, cps)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let seq = load_labeled(&a.data, &a.labels)?;
    let mut cfg = a.preset.map(Preset::config).unwrap_or_default();
    if let Some(v) = a.proj_dim {
        cfg.proj_dim = v;
    }
    if let Some(v) = a.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = a.lr {
        cfg.learn_rate = v;
    }
    if let Some(v) = a.l1 {
        cfg.l1_weight = v;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.buffer {
        cfg.buffer = v;
    }
    cfg.margin = a.margin;
    cfg.iterations = a.iters;
    cfg.validation_fraction = a.val_frac;
    cfg.seed = a.seed;
    cfg.grad_mode = match a.grad_mode {
        GradArg::CrossOnly => GradMode::PaperCrossOnly,
        GradArg::FullDebiased => GradMode::FullDebiased,
    };
    cfg.reduction = match a.reduction {
        ReductionArg::Sum => LossReduction::Sum,
        ReductionArg::Mean => LossReduction::Mean,
    };
    cfg.init = a.init.map(|i| match i {
        InitArg::IdentityLike => InitScheme::IdentityLike,
        InitArg::ScaledGaussian => InitScheme::ScaledGaussian,
    });
    cfg.standardize = !a.no_standardize;
    cfg.solver = a.solver.config();

    let model = train_metric(&seq, &cfg)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    save_model(&a.out, &ModelFile::from_model(&model))?;
    let last = |h: &[f64]| h.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "trained {}x{} metric: best iteration {}, final train loss {:.6}, final validation loss {:.6}",
        cfg.proj_dim,
        seq.dim(),
        model.best_iteration,
        last(&model.train_loss_history),
        last(&model.val_loss_history)
    );
    Ok(())
}

/// Metric and feature transform from a model file, or the identity on raw
/// features.
fn scorer_parts(
    model: Option<&Path>,
    dim: usize,
    gamma: f64,
) -> Result<(GroundMetric, Standardizer, Option<ModelFile>)> {
    match model {
        Some(p) => {
            let m = load_model(p)?;
            Ok((m.metric()?, m.standardizer(), Some(m)))
        }
        None => Ok((
            GroundMetric::identity(dim, gamma)?,
            Standardizer::identity(dim),
            None,
        )),
    }
}

fn cmd_detect(a: DetectArgs) -> Result<()> {
    let x = read_sequence_csv(&a.data)?;
    let (metric, standardizer, file) = scorer_parts(a.model.as_deref(), x.ncols(), a.gamma)?;
    if let Some(f) = &file {
        if f.d != x.ncols() {
            return Err(Error::Input(format!(
                "model expects {}-dimensional data but {} has {} columns",
                f.d,
                a.data.display(),
                x.ncols()
            )));
        }
    }
    let w = match (a.window, &file) {
        (Some(w), _) => w,
        (None, Some(f)) => f.config.window,
        (None, None) => return Err(Error::Input("--window is required without --model".into())),
    };
    let z = standardizer.apply(x.view())?;
    let solver = a.solver.config();
    let scores = if a.warm {
        change_scores_warm(z.view(), &metric, w, a.stride, &solver)?
    } else {
        change_scores(z.view(), &metric, w, a.stride, &solver)?
    };
    let det = detect(
        &scores,
        a.threshold,
        a.min_separation.unwrap_or(w),
        a.mode.into(),
    )?;
    write_scores_csv(&a.out, &scores)?;
    let det_path = a.detections.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".detections.txt");
        PathBuf::from(p)
    });
    write_labels(&det_path, &det.indices)?;
    eprintln!(
        "scored {} positions (valid {}..={}), {} detections",
        scores.len(),
        scores.valid_range.0,
        scores.valid_range.1,
        det.indices.len()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let scores = read_scores_csv(&a.scores)?;
    let labels = read_labels(&a.labels)?;
    let opts = AucOptions {
        match_margin: a.margin,
        mode: a.mode.into(),
        min_separation: a.min_separation,
    };
    let report = auc(&scores, &labels, &opts)?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    if let Some(p) = &a.out {
        atomic_write(p, json.as_bytes())?;
    }
    // A closed pipe (e.g. `| head`) is not an error for the caller.
    let mut stdout = std::io::stdout().lock();
    match stdout
        .write_all(json.as_bytes())
        .and_then(|()| stdout.flush())
    {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(Error::Input(format!("writing report: {e}")))
        }
        _ => Ok(()),
    }
}

fn scorer_from(a: &ScorerArgs) -> Result<Scorer> {
    let (metric, standardizer, _) = scorer_parts(a.model.as_deref(), a.dim, a.gamma)?;
    Ok(Scorer {
        metric,
        standardizer,
        solver: a.solver.config(),
    })
}

fn curve_csv(curve: &ErrorCurve) -> String {
    let mut out = String::from("axis_value,threshold,type1,type2\n");
    for p in &curve.points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.axis_value, p.threshold, p.type1, p.type2
        );
    }
    out
}

fn cmd_experiment(which: Experiment) -> Result<()> {
    match which {
        Experiment::ErrorsVsWindow {
            windows,
            noise,
            scorer,
        } => {
            let s = scorer_from(&scorer)?;
            let curve = errors_vs_window(&s, &windows, noise, scorer.trials, scorer.seed)?;
            atomic_write(&scorer.out, curve_csv(&curve).as_bytes())
        }
        Experiment::ErrorsVsNoise {
            noise,
            window,
            scorer,
        } => {
            let s = scorer_from(&scorer)?;
            let curve = errors_vs_noise(&s, window, &noise, scorer.trials, scorer.seed)?;
            atomic_write(&scorer.out, curve_csv(&curve).as_bytes())
        }
        Experiment::ProjDim {
            dims,
            changes,
            dim,
            iters,
            window,
            target_type2,
            trials,
            seed,
            solver,
            out,
        } => {
            let mut spec = GenSpec::new(Dataset::SwitchingGmm, changes, seed);
            spec.gmm_dim = dim;
            let seq = generate(&spec)?;
            let mut base = Preset::Gmm.config();
            base.iterations = iters;
            base.window = window;
            base.seed = seed;
            base.solver = solver.config();
            let pair = GmmPair {
                dim,
                window,
                noise_var: 0.0,
            };
            let (_, entries) = projection_dim_study(
                &seq,
                &base,
                &dims,
                move |rng: &mut _| pair.sample(sinkcpd::datagen::GmmSide::Alpha, rng),
                move |rng: &mut _| pair.sample(sinkcpd::datagen::GmmSide::Beta, rng),
                trials,
                target_type2,
                seed,
            )?;
            let mut csv = String::from("proj_dim,rank,threshold,type1,type2,error\n");
            for e in &entries {
                let rank = e.rank.map(|r| r.to_string()).unwrap_or_default();
                let err = e.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
                let _ = writeln!(
                    csv,
                    "{},{rank},{},{},{},{err}",
                    e.proj_dim, e.threshold, e.type1, e.type2
                );
            }
            atomic_write(&out, csv.as_bytes())
        }
    }
}
