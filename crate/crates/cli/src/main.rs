mod render;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use setseg_core::checkpoint::Checkpoint;
use setseg_core::data::{generate_synthetic, load_dataset, save_dataset, Dataset, SynthSpec};
use setseg_core::eval::{iod, midpoint_hit, mof, Aggregation};
use setseg_core::infer::{
    mc_align, mc_segment, GrammarPool, Inference, InferenceOptions, PoolSampling,
};
use setseg_core::nnet::{forward, Regularizer};
use setseg_core::predictions::{read_predictions, write_predictions};
use setseg_core::train::{fit, TrainConfig};
use setseg_core::{FeatureMode, HmmVariant, Segmentation};

#[derive(Parser)]
#[command(
    name = "setseg",
    version,
    about = "Set-supervised temporal action segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset pair.
    Synth(SynthArgs),
    /// Train a network and HMM from set-level annotations.
    Train(TrainArgs),
    /// Segment videos, sampling action sets from the training pool.
    Segment(SegmentArgs),
    /// Align videos to their annotated action sets.
    Align(AlignArgs),
    /// Score predictions against framewise ground truth.
    Eval(EvalArgs),
    /// Draw predictions (and ground truth, when present) as PNG strips.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON synthetic spec; the built-in benchmark spec when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HmmArg {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegArg {
    None,
    Base,
    Npair,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Hard,
    Soft,
}

#[derive(Args)]
struct BackgroundArgs {
    /// Do not add a declared background class to every video's set.
    #[arg(long)]
    exclude_background: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    hmm: Option<HmmArg>,
    #[arg(long, value_enum)]
    reg: Option<RegArg>,
    #[arg(long, value_enum)]
    feature_mode: Option<FeatureArg>,
    #[arg(long)]
    prune: bool,
    #[arg(long)]
    lmin: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Line-delimited JSON log, one record per iteration.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Also write the checkpoint every N iterations.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[command(flatten)]
    background: BackgroundArgs,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Predictions file.
    #[arg(long)]
    out: PathBuf,
    /// Monte Carlo candidates per video.
    #[arg(long, default_value_t = setseg_core::infer::DEFAULT_CANDIDATES)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Longest segment considered by the alignment DP.
    #[arg(long)]
    max_duration: Option<usize>,
    #[command(flatten)]
    background: BackgroundArgs,
}

#[derive(Args)]
struct SegmentArgs {
    /// Dataset whose action sets form the sampling pool.
    #[arg(long)]
    train_data: PathBuf,
    /// Weight pool sets by how many training videos carry them.
    #[arg(long)]
    multiplicity: bool,
    #[command(flatten)]
    common: InferArgs,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    common: InferArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Mof,
    Iod,
    MidpointHit,
    All,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset with framewise labels.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::All)]
    metric: MetricArg,
    /// Average per video instead of pooling.
    #[arg(long)]
    per_video_mean: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output directory, one PNG per video.
    #[arg(long)]
    out: PathBuf,
    /// Pixels per frame.
    #[arg(long, default_value_t = 4)]
    scale: u32,
    /// Pixel height of each row.
    #[arg(long, default_value_t = 24)]
    row_height: u32,
}

/// An error attributable to the invocation rather than the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn require_exists(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(UsageError(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn load(path: &Path, background: &BackgroundArgs) -> anyhow::Result<Dataset> {
    require_exists(path, "dataset")?;
    let mut ds =
        load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if !background.exclude_background {
        ds.include_background_in_sets();
    }
    Ok(ds)
}

fn run_synth(args: SynthArgs) -> anyhow::Result<()> {
    let total = args.train + args.test;
    let spec = match &args.spec {
        Some(path) => {
            require_exists(path, "spec")?;
            let mut spec: SynthSpec = serde_json::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            spec.num_videos = total;
            spec.seed = args.seed;
            spec
        }
        None => SynthSpec::benchmark(total, args.seed),
    };
    let mut train = generate_synthetic(&spec)?;
    let test = train.split_off(args.train);
    save_dataset(&train, &args.out.join("train"))?;
    save_dataset(&test, &args.out.join("test"))?;
    fs::write(
        args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec)?,
    )?;
    println!(
        "wrote {} training and {} test videos to {}",
        train.videos.len(),
        test.videos.len(),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            require_exists(path, "config")?;
            serde_json::from_str(&fs::read_to_string(path)?)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(h) = args.hmm {
        config.hmm = match h {
            HmmArg::Static => HmmVariant::Static,
            HmmArg::Dynamic => HmmVariant::Dynamic,
        };
    }
    if let Some(r) = args.reg {
        config.regularizer = match r {
            RegArg::None => Regularizer::None,
            RegArg::Base => Regularizer::Base,
            RegArg::Npair => Regularizer::Npair,
        };
    }
    if let Some(f) = args.feature_mode {
        config.feature_mode = match f {
            FeatureArg::Hard => FeatureMode::Hard,
            FeatureArg::Soft => FeatureMode::Soft,
        };
    }
    config.prune |= args.prune;
    if let Some(l) = args.lmin {
        config.min_length = l;
    }
    if let Some(h) = args.hidden {
        config.hidden = h;
    }
    if args.checkpoint_every == Some(0) {
        bail!(UsageError("--checkpoint-every must be positive".into()));
    }
    let dataset = load(&args.data, &args.background)?;
    let mut log = match &args.log {
        Some(path) => Some(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating log {}", path.display()))?,
        )),
        None => None,
    };
    let state = fit(&dataset, &config, |report, state| {
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(report).expect("report serializes");
            writeln!(w, "{line}")?;
        }
        if let Some(every) = args.checkpoint_every {
            if state.iteration % every == 0 {
                state.checkpoint().save(&args.out)?;
            }
        }
        Ok(())
    })?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    state.checkpoint().save(&args.out)?;
    println!(
        "trained {} iterations, checkpoint {}",
        state.iteration,
        args.out.display()
    );
    Ok(())
}

enum Mode {
    Segment(GrammarPool),
    Align,
}

fn run_inference(args: &InferArgs, mode: Mode, sampling: PoolSampling) -> anyhow::Result<()> {
    require_exists(&args.checkpoint, "checkpoint")?;
    if args.k == 0 {
        bail!(UsageError("--k must be at least 1".into()));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset = load(&args.data, &args.background)?;
    if dataset.num_classes() != ckpt.hmm.num_classes() {
        bail!(
            "dataset has {} classes, checkpoint {}",
            dataset.num_classes(),
            ckpt.hmm.num_classes()
        );
    }
    let opts = InferenceOptions {
        candidates: args.k,
        sampling,
        max_duration: args.max_duration,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(dataset.videos.len());
    for (i, video) in dataset.videos.iter().enumerate() {
        let cache = forward(&ckpt.net, video.features.view())?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rng.set_stream(i as u64);
        let result: Inference = match &mode {
            Mode::Segment(pool) => mc_segment(&cache, &ckpt.hmm, pool, &opts, &mut rng),
            Mode::Align => mc_align(&cache, &ckpt.hmm, &video.set, &opts, &mut rng),
        }
        .with_context(|| format!("video {}", video.id))?;
        log::info!(
            "{}: {} candidates, {} distinct, log posterior {:.3}",
            video.id,
            result.accepted,
            result.distinct,
            result.log_posterior
        );
        out.push((video.id.clone(), result.segmentation));
    }
    write_predictions(&args.out, &out, &dataset.vocabulary)?;
    println!(
        "wrote predictions for {} videos to {}",
        out.len(),
        args.out.display()
    );
    Ok(())
}

fn run_segment(args: SegmentArgs) -> anyhow::Result<()> {
    let train = load(&args.train_data, &args.common.background)?;
    let pool = GrammarPool::new(train.videos.iter().map(|v| &v.set))?;
    let sampling = if args.multiplicity {
        PoolSampling::Multiplicity
    } else {
        PoolSampling::Uniform
    };
    run_inference(&args.common, Mode::Segment(pool), sampling)
}

fn run_align(args: AlignArgs) -> anyhow::Result<()> {
    run_inference(&args.common, Mode::Align, PoolSampling::Uniform)
}

/// Pairs each prediction with its video's ground truth, in dataset order.
fn paired(
    preds: &[(String, Segmentation)],
    dataset: &Dataset,
) -> anyhow::Result<Vec<(String, Segmentation, Segmentation)>> {
    let mut out = Vec::with_capacity(preds.len());
    for (id, seg) in preds {
        let video = dataset
            .video(id)
            .with_context(|| format!("prediction for unknown video {id}"))?;
        let labels = video
            .labels
            .as_ref()
            .with_context(|| format!("video {id} has no framewise labels"))?;
        out.push((id.clone(), seg.clone(), Segmentation::from_labels(labels)));
    }
    Ok(out)
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    require_exists(&args.predictions, "predictions")?;
    require_exists(&args.data, "dataset")?;
    let dataset = load_dataset(&args.data)?;
    let preds = read_predictions(&args.predictions, &dataset.vocabulary)?;
    let rows = paired(&preds, &dataset)?;
    let agg = if args.per_video_mean {
        Aggregation::PerVideoMean
    } else {
        Aggregation::Pooled
    };
    let want = |m: MetricArg| args.metric == m || args.metric == MetricArg::All;
    let mut stdout = io::stdout().lock();
    if want(MetricArg::Mof) {
        let labels: Vec<(Vec<usize>, Vec<usize>)> = rows
            .iter()
            .map(|(_, p, t)| (p.to_labels(), t.to_labels()))
            .collect();
        let report = mof(
            rows.iter()
                .zip(&labels)
                .map(|((id, _, _), (p, t))| (id.as_str(), &p[..], &t[..])),
            agg,
        )?;
        write!(stdout, "{report}")?;
    }
    if want(MetricArg::Iod) {
        write!(
            stdout,
            "{}",
            iod(rows.iter().map(|(id, p, t)| (id.as_str(), p, t)), agg)?
        )?;
    }
    if want(MetricArg::MidpointHit) {
        write!(
            stdout,
            "{}",
            midpoint_hit(rows.iter().map(|(id, p, t)| (id.as_str(), p, t)), agg)?
        )?;
    }
    Ok(())
}

fn run_render(args: RenderArgs) -> anyhow::Result<()> {
    require_exists(&args.predictions, "predictions")?;
    require_exists(&args.data, "dataset")?;
    if args.scale == 0 || args.row_height == 0 {
        bail!(UsageError(
            "--scale and --row-height must be positive".into()
        ));
    }
    let dataset = load_dataset(&args.data)?;
    let preds = read_predictions(&args.predictions, &dataset.vocabulary)?;
    fs::create_dir_all(&args.out)?;
    for (id, seg) in &preds {
        let truth = dataset
            .video(id)
            .and_then(|v| v.labels.as_ref())
            .map(|l| Segmentation::from_labels(l));
        let img = render::strip(seg, truth.as_ref(), args.scale, args.row_height);
        let path = args.out.join(format!("{id}.png"));
        img.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("rendered {} videos to {}", preds.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Segment(a) => run_segment(a),
        Command::Align(a) => run_align(a),
        Command::Eval(a) => run_eval(a),
        Command::Render(a) => run_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
