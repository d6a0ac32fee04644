use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::Device;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sonoclass::config::RunConfig;
use sonoclass::dataset::{
    assign_splits, pixel_intensity_histogram, scan_dataset_with_warnings, list_images, ClassLabel, DatasetManifest,
    IntensityHistogram, ScanWarning, SplitTag,
};
use sonoclass::evaluation::evaluate;
use sonoclass::interpretability::{
    display_image, lime_explain, prediction_caption, render_lime_panel, render_saliency_panel, saliency_map,
};
use sonoclass::model::{BackboneName, BackboneSpec, Classifier, WeightsSource};
use sonoclass::preprocess::encode_label;
use sonoclass::reporting::{
    benchmark, comparison_rows, render_class_distribution, render_intensity_histograms, render_training_curves,
    write_comparison, write_predictions, BenchmarkConfig, ComparisonInput,
};
use sonoclass::synthetic::{make_synthetic, SyntheticConfig};
use sonoclass::training::{load_checkpoint, save_checkpoint, train, LabeledSet};
use sonoclass::{Error, Result};

#[derive(Parser)]
#[command(name = "sonoclass", version, about = "Healthy/Unhealthy ultrasound frame classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset root with Healthy/ and Unhealthy/ subdirectories.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Directory for every artifact of the command.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Seed for splits, initialisation, shuffling and LIME sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint directory (default: <out-dir>/checkpoint).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Backbone name, optionally `name:weights_source`.
    #[arg(long, global = true)]
    backbone: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Lime,
    Saliency,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Class counts, stratified split and intensity histograms.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Train the classifier and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a split with a checkpoint and write metrics.json.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Name recorded in metrics.json (default: the backbone name).
        #[arg(long)]
        name: Option<String>,
    },
    /// Write probabilities for every image under --data-dir.
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Explain one prediction with LIME or gradient saliency.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, value_enum, default_value = "lime")]
        method: Method,
    },
    /// Build a comparison table from metrics JSON files.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Time training, inference and (optionally) explanation.
    Benchmark {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        sample_size: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value = "")]
        hardware_note: String,
        #[arg(long)]
        with_explanation: bool,
    },
    /// Write a small seeded synthetic dataset into --out-dir.
    MakeSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        n_healthy: usize,
        #[arg(long, default_value_t = 16)]
        n_unhealthy: usize,
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Analyze { common }
            | Command::Train { common }
            | Command::Evaluate { common, .. }
            | Command::Predict { common }
            | Command::Explain { common, .. }
            | Command::Compare { common, .. }
            | Command::Benchmark { common, .. }
            | Command::MakeSynthetic { common, .. } => common,
        }
    }
}

fn parse_backbone(text: &str) -> Result<BackboneSpec> {
    let (name, source) = match text.split_once(':') {
        Some((n, s)) => (n, Some(s)),
        None => (text, None),
    };
    let name: BackboneName = name.parse()?;
    let source = match source {
        Some("imagenet") => WeightsSource::Imagenet,
        Some("radimagenet") => WeightsSource::Radimagenet,
        Some("random") => WeightsSource::Random,
        Some(other) => return Err(Error::Input(format!("unknown weights source `{other}`"))),
        None => match name {
            BackboneName::TinyTestCnn => WeightsSource::Random,
            BackboneName::RadimagenetDensenet => WeightsSource::Radimagenet,
            _ => WeightsSource::Imagenet,
        },
    };
    Ok(BackboneSpec::new(name, source))
}

/// Loads the config file (if any), applies flag overrides and validates.
fn effective_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &c.data_dir {
        cfg.paths.data_dir = Some(d.clone());
    }
    if let Some(d) = &c.out_dir {
        cfg.paths.out_dir = Some(d.clone());
    }
    if let Some(d) = &c.checkpoint {
        cfg.paths.checkpoint = Some(d.clone());
    }
    if let Some(s) = c.seed {
        cfg.set_seed(s);
    }
    if let Some(t) = c.threshold {
        cfg.threshold = t;
    }
    if let Some(b) = &c.backbone {
        cfg.backbone = parse_backbone(b)?;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = c.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn data_dir(&self) -> Result<&Path> {
        self.cfg
            .paths
            .data_dir
            .as_deref()
            .ok_or_else(|| Error::Input("--data-dir (or paths.data_dir) is required".into()))
    }

    fn checkpoint(&self) -> PathBuf {
        self.cfg.paths.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }

    fn load_model(&self) -> Result<sonoclass::training::Checkpoint> {
        load_checkpoint(&self.checkpoint(), &Device::Cpu)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::Io { path: path.into(), source: e })
}

#[derive(Serialize)]
struct Stats {
    total: usize,
    counts: std::collections::BTreeMap<ClassLabel, usize>,
    /// Majority count over minority count; `None` when a class is absent.
    imbalance_ratio: Option<f64>,
    split_counts: std::collections::BTreeMap<String, std::collections::BTreeMap<ClassLabel, usize>>,
    skipped: Vec<String>,
    unreadable: Vec<String>,
}

fn run_analyze(ctx: &Ctx) -> Result<()> {
    let (manifest, warnings) = scan_dataset_with_warnings(ctx.data_dir()?)?;
    let split = assign_splits(&manifest, &ctx.cfg.split)?;
    split.write_csv(&ctx.out.join("manifest.csv"))?;
    render_class_distribution(manifest.counts(), &ctx.out.join("class_distribution.png"))?;

    let mut unreadable = Vec::new();
    let mut hists = Vec::new();
    for label in ClassLabel::ALL {
        let records = manifest.with_label(label);
        let hist = if records.is_empty() {
            IntensityHistogram::empty(label)
        } else {
            let (h, failed) = pixel_intensity_histogram(&records)?;
            unreadable.extend(failed.into_iter().map(|(p, e)| format!("{}: {e}", p.display())));
            h
        };
        hist.write_csv(&ctx.out.join(format!("histogram_{}.csv", label.as_str())))?;
        hists.push(hist);
    }
    if hists.iter().all(|h| h.n_images > 0) {
        render_intensity_histograms(&hists[0], &hists[1], &ctx.out.join("intensity_histograms.png"))?;
    } else {
        log::warn!("one class has no readable images; intensity histogram figure skipped");
    }

    let (h, u) = (manifest.count(ClassLabel::Healthy), manifest.count(ClassLabel::Unhealthy));
    let split_counts = [SplitTag::Train, SplitTag::Val, SplitTag::Test]
        .into_iter()
        .map(|t| (t.as_str().to_string(), split.filter_split(t).counts().clone()))
        .collect();
    let stats = Stats {
        total: manifest.len(),
        counts: manifest.counts().clone(),
        imbalance_ratio: (h.min(u) > 0).then(|| h.max(u) as f64 / h.min(u) as f64),
        split_counts,
        skipped: warnings
            .iter()
            .map(|w| match w {
                ScanWarning::UnknownDirectory(p) | ScanWarning::UnsupportedFile(p) => p.display().to_string(),
            })
            .collect(),
        unreadable,
    };
    write_json(&stats, &ctx.out.join("stats.json"))?;
    println!("{} images: {} healthy, {} unhealthy", manifest.len(), h, u);
    Ok(())
}

fn run_train(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let (manifest, _) = scan_dataset_with_warnings(ctx.data_dir()?)?;
    let split = assign_splits(&manifest, &cfg.split)?;
    split.write_csv(&ctx.out.join("manifest.csv"))?;
    let train_set = LabeledSet::from_manifest(&split.filter_split(SplitTag::Train), &cfg.preprocess);
    let val_set = LabeledSet::from_manifest(&split.filter_split(SplitTag::Val), &cfg.preprocess);
    let mut model = Classifier::build(&cfg.model_config(), &Device::Cpu)?;
    log::info!(
        "backbone {} (feature map {}), {} trainable parameters",
        cfg.backbone.name,
        model.feature_shape(),
        model.trainable_parameter_count()
    );
    let history = train(&mut model, &train_set, &val_set, &cfg.train)?;
    save_checkpoint(&model, &history, Some(&cfg.train), Some(&cfg.split), &ctx.checkpoint())?;
    history.write_csv(&ctx.out.join("history.csv"))?;
    render_training_curves(&history, &ctx.out.join("training_curves.png"))?;
    if let (Some(l), Some(a)) = (history.val_loss.last(), history.val_accuracy.last()) {
        println!("trained {} epochs: val_loss {l:.4}, val_accuracy {a:.4}", history.len());
    }
    Ok(())
}

fn run_evaluate(ctx: &Ctx, split_arg: SplitArg, name: Option<String>) -> Result<()> {
    let ckpt = ctx.load_model()?;
    let (manifest, _) = scan_dataset_with_warnings(ctx.data_dir()?)?;
    let records: DatasetManifest = match split_arg {
        SplitArg::All => manifest,
        other => {
            // reproduce the split the checkpoint was trained with
            let spec = ckpt.meta.split.clone().unwrap_or_else(|| ctx.cfg.split.clone());
            let tag = match other {
                SplitArg::Train => SplitTag::Train,
                SplitArg::Val => SplitTag::Val,
                _ => SplitTag::Test,
            };
            assign_splits(&manifest, &spec)?.filter_split(tag)
        }
    };
    if records.is_empty() {
        return Err(Error::Input("the selected split is empty".into()));
    }
    let set = LabeledSet::from_manifest(&records, &ckpt.model.config().preprocess);
    let images = set.all_images()?;
    let labels: Vec<u8> = records.records().iter().map(|r| encode_label(r.label)).collect();
    let mut report = evaluate(&ckpt.model, &images, &labels, ctx.cfg.threshold)?;
    report.model_name = Some(name.unwrap_or_else(|| ckpt.model.config().backbone.name.to_string()));
    report.write_json(&ctx.out.join("metrics.json"))?;
    println!("{}", report.summary());
    Ok(())
}

fn run_predict(ctx: &Ctx) -> Result<()> {
    let ckpt = ctx.load_model()?;
    let paths = list_images(ctx.data_dir()?)?;
    let summary = write_predictions(&ckpt.model, &paths, ctx.cfg.threshold, &ctx.out.join("predictions.csv"))?;
    println!("{} predictions written, {} files failed", summary.written, summary.failed.len());
    Ok(())
}

fn run_explain(ctx: &Ctx, image: &Path, method: Method) -> Result<()> {
    let ckpt = ctx.load_model()?;
    let model = &ckpt.model;
    let preprocess = &model.config().preprocess;
    let img = preprocess.load(image)?;
    let prob = model.predict_proba(std::slice::from_ref(&img))?[0];
    let original = display_image(&img, preprocess.normalization);
    let caption = prediction_caption(prob, ctx.cfg.threshold);
    match method {
        Method::Lime => {
            let exp = lime_explain(model, &img, &ctx.cfg.lime)?;
            exp.write_json(&ctx.out.join("lime_explanation.json"))?;
            render_lime_panel(&original, &exp, &caption, &ctx.out.join("lime_overlay.png"))?;
            println!("{caption}; top segments {:?}", exp.top_segments);
        }
        Method::Saliency => {
            let map = saliency_map(model, &img)?;
            map.write_json(&ctx.out.join("saliency.json"))?;
            render_saliency_panel(&original, &map, &caption, &ctx.out.join("saliency_overlay.png"))?;
            println!("{caption}; saliency mean {:.4}", map.mean());
        }
    }
    Ok(())
}

fn run_compare(ctx: &Ctx, files: &[PathBuf]) -> Result<()> {
    let inputs = files.iter().map(|f| ComparisonInput::read_json(f)).collect::<Result<Vec<_>>>()?;
    let rows = comparison_rows(&inputs)?;
    write_comparison(&rows, &ctx.out.join("comparison.csv"), &ctx.out.join("comparison.txt"))?;
    print!("{}", sonoclass::reporting::format_table(&rows));
    Ok(())
}

fn run_benchmark(ctx: &Ctx, sample_size: usize, config: BenchmarkConfig) -> Result<()> {
    let ckpt_dir = ctx.checkpoint();
    let model = if ckpt_dir.exists() {
        load_checkpoint(&ckpt_dir, &Device::Cpu)?.model
    } else {
        log::info!("no checkpoint at {}, timing a freshly built model", ckpt_dir.display());
        Classifier::build(&ctx.cfg.model_config(), &Device::Cpu)?
    };
    let (manifest, _) = scan_dataset_with_warnings(ctx.data_dir()?)?;
    let sample = DatasetManifest::new(manifest.records().iter().take(sample_size.max(1)).cloned().collect());
    let report = benchmark(&model, &sample, &config)?;
    report.write_json(&ctx.out.join("timing.json"))?;
    println!(
        "train {:.3} s/epoch, inference {:.4} s/image over {} images",
        report.train_seconds_per_epoch, report.inference_seconds_per_image, report.n_images
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common().clone();
    let cfg = effective_config(&common)?;
    let out = cfg.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    let ctx = Ctx { cfg, out };
    if !matches!(cli.command, Command::MakeSynthetic { .. }) {
        ctx.cfg.write_json(&ctx.out.join("effective_config.json"))?;
    }
    match cli.command {
        Command::Analyze { .. } => run_analyze(&ctx),
        Command::Train { .. } => run_train(&ctx),
        Command::Evaluate { split, name, .. } => run_evaluate(&ctx, split, name),
        Command::Predict { .. } => run_predict(&ctx),
        Command::Explain { image, method, .. } => run_explain(&ctx, &image, method),
        Command::Compare { metrics, .. } => run_compare(&ctx, &metrics),
        Command::Benchmark { sample_size, repetitions, hardware_note, with_explanation, .. } => run_benchmark(
            &ctx,
            sample_size,
            BenchmarkConfig {
                repetitions,
                batch_size: ctx.cfg.train.batch_size,
                hardware_note,
                include_explanation: with_explanation,
            },
        ),
        Command::MakeSynthetic { n_healthy, n_unhealthy, size, .. } => {
            let seed = common.seed.unwrap_or(SyntheticConfig::default().seed);
            let m = make_synthetic(&ctx.out, &SyntheticConfig { n_healthy, n_unhealthy, size, seed })?;
            println!("wrote {} synthetic images to {}", m.len(), ctx.out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
