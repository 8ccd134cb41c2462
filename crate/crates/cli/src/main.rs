//! `strokeforge` command line: data conversion, training and model inspection.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strokeforge::curriculum::CurriculumKind;
use strokeforge::generate::{
    classify_trace, final_answer, generate_unguided, render_svg, DEFAULT_MAX_STEPS,
};
use strokeforge::model::{LayerKind, Model};
use strokeforge::seed::{rng_for, SAMPLE};
use strokeforge::strokes::{
    convert_dataset, parse_idx_images, parse_idx_labels, read_dataset, read_idx_file,
    write_dataset, Conversion, StrokeSequence,
};
use strokeforge::trainer::{
    evaluate, loss_by_position, transfer_trainer, views, BatchMode, Checkpoint, RunDir,
    TrainConfig, Trainer, TransferVariant,
};
use strokeforge::{Error, Result};

/// Keys a run manifest holds beside the training config.
const TRAIN_DATA: &str = "train_data";
const TEST_DATA: &str = "test_data";
/// Images converted per round while looking for `--limit` sequences.
const CONVERT_CHUNK: usize = 2000;

#[derive(Parser)]
#[command(
    name = "strokeforge",
    version,
    about = "Pen-stroke digit sequences and mixture density networks"
)]
struct Cli {
    /// Worker threads for conversion and evaluation.
    #[arg(long, global = true, env = "STROKEFORGE_THREADS", default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert IDX images and labels into a stroke dataset file.
    Convert(ConvertArgs),
    /// Train a model, writing metrics and checkpoints to a run directory.
    Train(TrainArgs),
    /// Report RMSE, loss and accuracy of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Sample digits from a checkpoint.
    Generate(GenerateArgs),
    /// Classify a dataset, optionally writing per-step class outputs.
    Classify(ClassifyArgs),
    /// Mean prediction loss at each sequence position.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stop after this many converted sequences.
    #[arg(long)]
    limit: Option<usize>,
    /// Write the skipped images and reasons here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; a run manifest also works.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// regular, length, size or classes.
    #[arg(long)]
    curriculum: Option<CurriculumKind>,
    /// sequences[:N] or points[:N].
    #[arg(long)]
    batch_mode: Option<String>,
    /// lstm or ff.
    #[arg(long)]
    layer: Option<LayerKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget_points: Option<u64>,
    /// Extra config overrides, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from a checkpoint of this run.
    #[arg(long, conflicts_with = "transfer_from")]
    resume: Option<PathBuf>,
    /// Train a classifier starting from this checkpoint's weights.
    #[arg(long)]
    transfer_from: Option<PathBuf>,
    /// transfer-both, transfer-class, scratch-both or scratch-class.
    #[arg(long)]
    variant: Option<TransferVariant>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    max_steps: usize,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Also write the samples as a stroke dataset file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV of class probabilities after every input step.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 60)]
    max_pos: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn convert(args: &ConvertArgs) -> Result<()> {
    let images = parse_idx_images(&read_idx_file(&args.images)?)?;
    let labels = parse_idx_labels(&read_idx_file(&args.labels)?)?;
    if images.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let conversion = match args.limit {
        None => convert_dataset(&images, &labels)?,
        Some(limit) => {
            let mut acc = Conversion::default();
            let mut start = 0;
            while acc.sequences.len() < limit && start < images.len() {
                let end = (start + CONVERT_CHUNK).min(images.len());
                let part = convert_dataset(&images[start..end], &labels[start..end])?;
                acc.sequences.extend(part.sequences);
                acc.source_index
                    .extend(part.source_index.iter().map(|i| i + start));
                acc.skipped.extend(part.skipped.into_iter().map(|mut s| {
                    s.index += start;
                    s
                }));
                start = end;
            }
            if acc.sequences.len() > limit {
                let last = acc.source_index[limit - 1];
                acc.sequences.truncate(limit);
                acc.source_index.truncate(limit);
                acc.skipped.retain(|s| s.index < last);
            }
            acc
        }
    };
    write_dataset(&args.out, &conversion.sequences)?;
    if let Some(log) = &args.log {
        let mut text = String::new();
        for s in &conversion.skipped {
            let _ = writeln!(text, "{}\t{}", s.index, s.reason);
        }
        write_file(log, text)?;
    }
    println!("sequences {}", conversion.sequences.len());
    println!("skipped {}", conversion.skipped.len());
    println!("mean_length {:.3}", conversion.mean_length());
    for q in [0.5, 0.9, 0.99] {
        println!(
            "p{:.0}_length {}",
            q * 100.0,
            conversion.length_percentile(q)
        );
    }
    Ok(())
}

/// Split manifest data paths from the config keys.
fn read_config(path: &Path) -> Result<(TrainConfig, Option<PathBuf>, Option<PathBuf>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rest = String::new();
    let (mut train, mut test) = (None, None);
    for line in text.lines() {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some((TRAIN_DATA, v)) => train = Some(PathBuf::from(v)),
            Some((TEST_DATA, v)) => test = Some(PathBuf::from(v)),
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    Ok((TrainConfig::parse(&rest)?, train, test))
}

fn batch_mode(text: &str) -> Result<BatchMode> {
    match text {
        "sequences" => Ok(BatchMode::Sequences(50)),
        "points" => Ok(BatchMode::Points(2000)),
        other => other.parse(),
    }
}

fn apply_flags(config: &mut TrainConfig, args: &TrainArgs) -> Result<()> {
    if let Some(c) = args.curriculum {
        config.curriculum = c;
    }
    if let Some(m) = &args.batch_mode {
        config.batch_mode = batch_mode(m)?;
    }
    if let Some(l) = args.layer {
        config.layer = l;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(b) = args.budget_points {
        config.budget_points = b;
    }
    for pair in &args.overrides {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
        config.set(k.trim(), v)?;
    }
    config.validate()
}

fn manifest(config: &TrainConfig, train: &Path, test: &Path) -> String {
    format!(
        "{TRAIN_DATA} = {}\n{TEST_DATA} = {}\n{}",
        train.display(),
        test.display(),
        config.to_text()
    )
}

fn train(args: &TrainArgs) -> Result<()> {
    let (mut config, mut train_path, mut test_path) = match &args.config {
        Some(path) => read_config(path)?,
        None => (TrainConfig::default(), None, None),
    };
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    if let Some(ck) = &resume {
        config = ck.config.clone();
    }
    apply_flags(&mut config, args)?;
    train_path = args.train.clone().or(train_path);
    test_path = args.test.clone().or(test_path);
    let (Some(train_path), Some(test_path)) = (train_path, test_path) else {
        return Err(Error::Config(
            "--train and --test are required unless the config names them".into(),
        ));
    };
    let train = read_dataset(&train_path)?;
    let test = read_dataset(&test_path)?;

    let mut trainer = match (resume, &args.transfer_from) {
        (Some(mut ck), _) => {
            if ck.config != config {
                log::info!(
                    "resuming with an updated budget of {}",
                    config.budget_points
                );
            }
            ck.config.budget_points = config.budget_points;
            Trainer::resume(ck, &train, &test)?
        }
        (None, Some(source)) => {
            let source = Checkpoint::load(source)?;
            let variant = args.variant.unwrap_or(TransferVariant::TransferClassOnly);
            transfer_trainer(Some(&source), variant, &config, &train, &test)?
        }
        (None, None) => match args.variant {
            Some(variant) => transfer_trainer(None, variant, &config, &train, &test)?,
            None => Trainer::new(config, &train, &test)?,
        },
    };
    let config = trainer.config().clone();
    let resumed = args.resume.is_some().then(|| *trainer.state());
    let mut dir = RunDir::open(&args.out_dir, config.checkpoint_every, resumed.as_ref())?;
    write_file(
        &dir.path(RunDir::MANIFEST),
        manifest(&config, &train_path, &test_path),
    )?;
    log::info!(
        "training {} sequences, testing {}, budget {} points",
        train.len(),
        test.len(),
        config.budget_points
    );
    match trainer.run(&mut dir) {
        Ok(()) => {}
        Err(e @ Error::Aborted { .. }) => {
            let path = dir.path("aborted.ckpt");
            trainer.checkpoint().save(&path)?;
            eprintln!("last good state saved to {}", path.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    }
    trainer.checkpoint().save(&dir.path(RunDir::FINAL))?;
    if let Some(last) = trainer.metrics().last() {
        println!(
            "points {} epoch {} test_rmse {:.6} test_loss {:.6} accuracy {:.4}",
            last.points, last.epoch, last.test_rmse, last.test_loss, last.accuracy
        );
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<(Model, TrainConfig)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::from_params(ck.config.model_config(), ck.params)?;
    Ok((model, ck.config))
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (model, config) = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    let e = evaluate(&model, &views(&data), &config.loss_settings())?;
    println!("rmse {}", e.rmse);
    println!("loss {}", e.loss);
    println!("accuracy {}", e.accuracy);
    println!("points {}", e.points);
    println!("sequences {}", e.sequences);
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let mut rng = rng_for(args.seed, SAMPLE);
    let samples: Vec<StrokeSequence> = (0..args.n)
        .map(|_| generate_unguided(&model, &mut rng, args.max_steps, 0))
        .collect::<Result<_>>()?;
    for (i, s) in samples.iter().enumerate() {
        println!(
            "sample {i}: {} steps, {} strokes",
            s.len(),
            s.stroke_count()
        );
    }
    if let Some(path) = &args.svg {
        let steps: Vec<_> = samples.iter().map(StrokeSequence::steps).collect();
        write_file(path, render_svg(&steps))?;
    }
    if let Some(path) = &args.out {
        write_dataset(path, &samples)?;
    }
    Ok(())
}

fn classify(args: &ClassifyArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    let mut csv = String::from("sequence,step,label,p0,p1,p2,p3,p4,p5,p6,p7,p8,p9\n");
    let (mut correct, mut answered) = (0, 0);
    for (i, seq) in data.iter().enumerate() {
        let trace = classify_trace(&model, seq.view())?;
        if let Some(answer) = final_answer(&trace) {
            answered += 1;
            correct += usize::from(answer == usize::from(seq.label()));
        }
        if args.trace.is_some() {
            for (t, row) in trace.iter().enumerate() {
                let probs: Vec<String> = row.iter().map(ToString::to_string).collect();
                let _ = writeln!(csv, "{i},{},{},{}", t + 1, seq.label(), probs.join(","));
            }
        }
    }
    if let Some(path) = &args.trace {
        write_file(path, csv)?;
    }
    if answered == 0 {
        return Err(Error::Invalid("no sequence has an input step".into()));
    }
    println!("accuracy {}", correct as f64 / answered as f64);
    println!("sequences {answered}");
    Ok(())
}

fn profile(args: &ProfileArgs) -> Result<()> {
    let (model, _) = load_model(&args.checkpoint)?;
    let data = read_dataset(&args.data)?;
    let rows = loss_by_position(&model, &views(&data), args.max_pos)?;
    let mut csv = String::from("position,mean_loss,count\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{}", r.position, r.mean, r.count);
    }
    match &args.out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Convert(a) => convert(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Classify(a) => classify(a),
        Command::Profile(a) => profile(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Aborted { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
