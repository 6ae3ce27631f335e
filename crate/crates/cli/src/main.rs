use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use brand_attention::brand_score::{
    brand_attention_score, detect_logos, hypothesis_table, run_hypothesis, write_hypothesis_report, BoxSource,
    OverlapMode, ScoreConfig, ScoreScale,
};
use brand_attention::datamodel::{
    ingest_hypothesis_dataset, load_boxes, load_density_map, load_fixation_map, load_image, load_saliency_png,
    save_boxes, save_image_png, save_saliency_png, BoundingBoxSet,
};
use brand_attention::objectives::{evaluate_dataset, EvalPair};
use brand_attention::pipeline::SaliencyPredictor;
use brand_attention::textmap::{build_text_map, detect_text_regions};
use brand_attention::trainer::{self, load_eval_items, load_training_samples, TrainConfig, TrainOptions};
use brand_attention::{Error, ErrorKind, Result};
use brand_attention_cli::service::{self, AppState, ServiceConfig};
use brand_attention_cli::setup::{logo_detector, ModelArgs};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "brand-attention", version, about = "Text-aware saliency and brand attention scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict a saliency map and write it as a 16-bit PNG at the image's size.
    Saliency {
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Brand attention score of an image (or a precomputed saliency map).
    Score(ScoreArgs),
    /// Run the logo detector and print its boxes as JSON.
    DetectLogos {
        image: PathBuf,
        #[arg(long, env = "BRAND_ATTENTION_LOGO_DETECTOR", value_name = "COMMAND")]
        logo_detector: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write the text map (image pixels inside detected text, black elsewhere).
    Textmap {
        image: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train on DATA/images, DATA/maps and optional DATA/fixations.
    Train(TrainArgs),
    /// Saliency metrics, for a directory of predictions or for a model.
    Evaluate(EvaluateArgs),
    /// Score every condition of a hypothesis dataset (root/hypothesis/condition/images).
    Hypothesis {
        dataset: PathBuf,
        /// CSV report path.
        #[arg(short, long)]
        out: PathBuf,
        /// Detect boxes instead of reading the annotation files.
        #[arg(long, env = "BRAND_ATTENTION_LOGO_DETECTOR", value_name = "COMMAND")]
        logo_detector: Option<String>,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Serve the HTTP scoring API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Union,
    PerBoxSum,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Percent,
    Fraction,
}

#[derive(Args)]
struct ScoringArgs {
    /// Saliency values below this are ignored.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "union")]
    mode: ModeArg,
    #[arg(long, value_enum, default_value = "percent")]
    scale: ScaleArg,
}

impl ScoringArgs {
    fn config(&self) -> Result<ScoreConfig> {
        let cfg = ScoreConfig {
            threshold: self.threshold,
            overlap_mode: match self.mode {
                ModeArg::Union => OverlapMode::Union,
                ModeArg::PerBoxSum => OverlapMode::PerBoxSum,
            },
            scale: match self.scale {
                ScaleArg::Percent => ScoreScale::Percent,
                ScaleArg::Fraction => ScoreScale::Fraction,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Image to score; optional with --saliency.
    #[arg(required_unless_present = "saliency")]
    image: Option<PathBuf>,
    /// Box file (JSON). Without it the logo detector is run.
    #[arg(long)]
    boxes: Option<PathBuf>,
    /// Use this saliency PNG instead of running the model.
    #[arg(long)]
    saliency: Option<PathBuf>,
    #[arg(long, env = "BRAND_ATTENTION_LOGO_DETECTOR", value_name = "COMMAND")]
    logo_detector: Option<String>,
    #[command(flatten)]
    scoring: ScoringArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation set, same layout as --data.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Training config JSON; flags below override it.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Checkpoints, final weights and the NDJSON training record go here.
    #[arg(short, long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted maps, one PNG per ground-truth name.
    #[arg(long, requires = "gt", conflicts_with = "data")]
    pred: Option<PathBuf>,
    /// Ground truth: GT/maps and optional GT/fixations.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Run the model over DATA/images and compare with DATA/maps.
    #[arg(long, required_unless_present = "pred")]
    data: Option<PathBuf>,
    /// Also write per-metric mean and std as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Row label in the printed table.
    #[arg(long, default_value = "model")]
    label: String,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1", env = "BRAND_ATTENTION_HOST")]
    host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080, env = "BRAND_ATTENTION_PORT")]
    port: u16,
    /// Concurrent inference jobs.
    #[arg(long, default_value_t = 1, env = "BRAND_ATTENTION_WORKERS")]
    workers: usize,
    /// Largest request body in bytes.
    #[arg(long, default_value_t = 20 << 20, env = "BRAND_ATTENTION_UPLOAD_LIMIT")]
    upload_limit: usize,
    #[arg(long, env = "BRAND_ATTENTION_LOGO_DETECTOR", value_name = "COMMAND")]
    logo_detector: Option<String>,
    #[command(flatten)]
    model: ModelArgs,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Input => 2,
        ErrorKind::Io => 3,
        ErrorKind::Model => 4,
        ErrorKind::Detector => 5,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn predict_at_original(model: &ModelArgs, image: &Path) -> Result<brand_attention::datamodel::SaliencyMap> {
    let pipeline = model.pipeline()?;
    let loaded = load_image(image, pipeline.working_size())?;
    pipeline.predict(&loaded)
}

fn score(args: ScoreArgs) -> Result<()> {
    let cfg = args.scoring.config()?;
    let map = match (&args.saliency, &args.image) {
        (Some(png), _) => load_saliency_png(png)?,
        (None, Some(image)) => predict_at_original(&args.model, image)?,
        (None, None) => unreachable!("clap requires an image without --saliency"),
    };
    let shape = map.grid().shape();
    let boxes = match (&args.boxes, args.logo_detector.as_deref(), &args.image) {
        (Some(path), _, _) => load_boxes(path, Some(shape))?,
        (None, Some(spec), Some(image)) => {
            let detector = logo_detector(Some(spec))?.expect("spec given");
            let loaded = load_image(image, (32, 32))?;
            let boxes = detect_logos(&loaded, detector.as_ref())?;
            boxes.validate(Some(shape))?;
            boxes
        }
        _ => {
            return Err(Error::InvalidInput(
                "no boxes: pass --boxes, or an image with --logo-detector".into(),
            ))
        }
    };
    println!("{}", brand_attention_score(map.grid(), &boxes, &cfg)?);
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| Error::Malformed {
                what: "training config",
                message: e.to_string(),
            })?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.lr {
        config.initial_lr = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if args.max_steps.is_some() {
        config.max_steps = args.max_steps;
    }
    config.validate()?;
    let model = args.model.build_model()?;
    let detector = args.model.text_detector()?;
    let samples = load_training_samples(&args.data, model.working_size(), detector.as_ref())?;
    let val = match &args.val {
        Some(dir) => Some(load_training_samples(dir, model.working_size(), detector.as_ref())?),
        None => None,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let record_path = args.out.join("train.ndjson");
    log::info!("training on {} samples", samples.len());
    let record = trainer::train(
        &model,
        &samples,
        &config,
        &TrainOptions {
            validation: val.as_deref(),
            checkpoint_dir: Some(&args.out),
            record_path: Some(&record_path),
        },
    )?;
    let last = args.out.join("final.safetensors");
    model.save_checkpoint(&last, Some(record.epochs.len()))?;
    println!(
        "{}",
        serde_json::json!({
            "checkpoint": last,
            "record": record_path,
            "epochs": record.epochs.len(),
            "steps": record.total_steps(),
            "final_loss": record.epochs.last().map(|e| e.train_loss),
        })
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let report = if let (Some(pred), Some(gt)) = (&args.pred, &args.gt) {
        evaluate_directories(pred, gt)?
    } else {
        let data = args.data.as_ref().expect("clap requires --data without --pred");
        let pipeline = args.model.pipeline()?;
        let items = load_eval_items(data, pipeline.working_size())?;
        trainer::evaluate(&pipeline, &items)?
    };
    if let Some(path) = &args.csv {
        write_text(path, &report.to_csv())?;
    }
    println!("{}", report.table(&args.label));
    Ok(())
}

/// Pairs `pred/<name>.png` with `gt/maps/<name>.png`; predictions are
/// resized to the ground truth when the sizes differ.
fn evaluate_directories(pred: &Path, gt: &Path) -> Result<brand_attention::objectives::MetricsReport> {
    let maps = gt.join("maps");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&maps)
        .map_err(|e| Error::Io {
            path: maps.clone(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidInput(format!("no ground-truth maps in {}", maps.display())));
    }
    let pairs = names
        .iter()
        .map(|density_path| {
            let file = density_path.file_name().expect("listed file");
            let density = load_density_map(density_path)?;
            let (h, w) = density.shape();
            let mut prediction = load_saliency_png(pred.join(file))?;
            if prediction.grid().shape() != (h, w) {
                prediction = prediction.resized(h, w);
            }
            let fix = gt.join("fixations").join(file);
            Ok(EvalPair {
                name: Path::new(file).file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                prediction,
                density,
                fixations: if fix.is_file() { Some(load_fixation_map(&fix)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_dataset(&pairs)
}

fn serve(args: ServeArgs) -> Result<()> {
    let detector = logo_detector(args.logo_detector.as_deref())?;
    let state = AppState::new(
        ServiceConfig {
            upload_limit: args.upload_limit,
            workers: args.workers,
        },
        detector,
    );
    let model = args.model;
    let addr = std::net::SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Io {
        path: PathBuf::from("<runtime>"),
        source: e,
    })?;
    runtime
        .block_on(service::serve(addr, state, move || {
            let pipeline = model.pipeline()?;
            let id = pipeline.model().checkpoint_id()?;
            Ok((Arc::new(pipeline) as Arc<dyn SaliencyPredictor>, id))
        }))
        .map_err(|e| Error::Io {
            path: PathBuf::from(addr.to_string()),
            source: e,
        })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Saliency { image, out, model } => {
            let map = predict_at_original(&model, &image)?;
            save_saliency_png(&out, &map)?;
            let (h, w) = map.grid().shape();
            println!("{}", serde_json::json!({ "out": out, "height": h, "width": w }));
            Ok(())
        }
        Command::Score(args) => score(args),
        Command::DetectLogos {
            image,
            logo_detector: spec,
            out,
        } => {
            let detector = logo_detector(Some(&spec))?.expect("spec given");
            let boxes: BoundingBoxSet = detect_logos(&load_image(&image, (32, 32))?, detector.as_ref())?;
            match out {
                Some(path) => save_boxes(path, &boxes)?,
                None => println!("{}", boxes.to_json()),
            }
            Ok(())
        }
        Command::Textmap { image, out, model } => {
            let [h, w] = model.model_config()?.resolution;
            let loaded = load_image(&image, (h, w))?;
            let regions = detect_text_regions(&loaded, model.text_detector()?.as_ref())?;
            save_image_png(&out, build_text_map(&loaded.tensor, &regions)?.tensor())
        }
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Hypothesis {
            dataset,
            out,
            logo_detector: spec,
            scoring,
            model,
        } => {
            let cfg = scoring.config()?;
            let ds = ingest_hypothesis_dataset(&dataset)?;
            let detector = logo_detector(spec.as_deref())?;
            let source = match &detector {
                Some(d) => BoxSource::Detector(d.as_ref()),
                None => BoxSource::Annotations,
            };
            let pipeline = model.pipeline()?;
            let stats = run_hypothesis(&ds, &pipeline, source, &cfg)?;
            write_hypothesis_report(&stats, &out)?;
            println!("{}", hypothesis_table(&stats)?);
            Ok(())
        }
        Command::Serve(args) => serve(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("{}", serde_json::json!({ "error": kind.as_str(), "message": e.to_string() }));
            ExitCode::from(exit_code(kind))
        }
    }
}
