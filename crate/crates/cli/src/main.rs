use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use vecspot::config::RunConfig;
use vecspot::features::{featurize, PriorMode};
use vecspot::geometry::Drawing;
use vecspot::io::checkpoint;
use vecspot::io::drawing::{read_drawing, serialize_drawing};
use vecspot::io::panoptic::{parse_panoptic, serialize_panoptic, PanopticResult};
use vecspot::io::prediction::{parse_predictions, serialize_predictions, PredictionDoc};
use vecspot::io::svg::{render_svg, Coloring};
use vecspot::io::tokens::{tokens_to_binary, tokens_to_json, SampleDoc};
use vecspot::io::{write_json, Strictness};
use vecspot::metrics::WeightMode;
use vecspot::model::SpotterModel;
use vecspot::pipeline::{self, Evaluator};
use vecspot::sampler::{point_tokens, tokenize_drawing, SamplingConfig};
use vecspot::synth;

#[derive(Parser)]
#[command(name = "vecspot", version, about = "Panoptic symbol spotting for vector CAD drawings")]
struct Cli {
    /// Accept unknown JSON fields with a warning instead of failing.
    #[arg(long, global = true)]
    lenient: bool,
    /// Worker threads for per-drawing stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Line,
    Point,
}

#[derive(Clone, Copy, ValueEnum)]
enum TensorFormat {
    Json,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prior {
    WithLayerPrior,
    WithoutPrior,
}

impl From<Prior> for PriorMode {
    fn from(p: Prior) -> Self {
        match p {
            Prior::WithLayerPrior => PriorMode::WithLayerPrior,
            Prior::WithoutPrior => PriorMode::WithoutPrior,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ColoringArg {
    Gt,
    SemanticPred,
    Panoptic,
}

#[derive(Clone, Copy, ValueEnum)]
enum Weighting {
    Length,
    LogLength,
}

impl From<Weighting> for WeightMode {
    fn from(w: Weighting) -> Self {
        match w {
            Weighting::Length => WeightMode::Length,
            Weighting::LogLength => WeightMode::LogLength,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic drawings with ground truth.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration whose `synth` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Coordinate jitter in drawing units.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Sample a drawing into line segments (or points).
    Sample {
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "line")]
        strategy: Strategy,
    },
    /// Compute normalized line-token features.
    Featurize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "with-layer-prior")]
        prior: Prior,
        /// Output format; defaults to binary for `.bin` paths, JSON otherwise.
        #[arg(long, value_enum)]
        format: Option<TensorFormat>,
    },
    /// Run a trained model on a drawing.
    Infer {
        /// Checkpoint manifest written by `train-toy`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on synthetic drawings and evaluate on the training set.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        prior: Option<Prior>,
        /// Number of drawings to render as SVG (ground truth and prediction).
        #[arg(long, default_value_t = 3)]
        renders: usize,
    },
    /// Branch fusion refinement and panoptic assembly.
    Refine {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Drawing supplying the class table and primitive set.
        #[arg(long)]
        drawing: Option<PathBuf>,
        /// Assemble the raw predictions without refinement.
        #[arg(long)]
        skip_bfr: bool,
    },
    /// Score a panoptic result against a drawing's ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "length")]
        weight_mode: Weighting,
    },
    /// Render a drawing as SVG.
    Render {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "gt")]
        coloring: ColoringArg,
        /// Panoptic result for the prediction colorings.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Compare line-token and point-token counts.
    TokensReport {
        /// Drawings to count; synthetic drawings are used when none are given.
        #[arg(long, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        synth_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn strictness(cli: &Cli) -> Strictness {
    if cli.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn load_config(path: Option<&Path>, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => base,
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn drawing(path: &Path, s: Strictness) -> Result<Drawing> {
    read_drawing(path, s).with_context(|| format!("reading drawing {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn sampling(alpha: f64) -> Result<SamplingConfig> {
    let cfg = SamplingConfig::with_alpha(alpha);
    cfg.validate()?;
    Ok(cfg)
}

fn panoptic_file(path: &Path, s: Strictness) -> Result<PanopticResult> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_panoptic(&bytes, s).with_context(|| format!("parsing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    let strict = strictness(&cli);
    match cli.command {
        Command::Synth {
            seed,
            count,
            out,
            config,
            noise,
        } => {
            let mut cfg = load_config(config.as_deref(), RunConfig::default())?.synth;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = count {
                cfg.count = c;
            }
            if let Some(n) = noise {
                cfg.noise = n;
            }
            let drawings = synth::generate(&cfg)?;
            for (i, d) in drawings.iter().enumerate() {
                write(&out.join(format!("{}.json", synth::drawing_name(i))), &serialize_drawing(d)?)?;
            }
            println!("wrote {} drawings to {}", drawings.len(), out.display());
        }
        Command::Sample {
            alpha,
            input,
            output,
            strategy,
        } => {
            let d = drawing(&input, strict)?;
            let cfg = sampling(alpha)?;
            let doc = match strategy {
                Strategy::Line => {
                    let t = tokenize_drawing(&d, &cfg);
                    SampleDoc::lines(alpha, &t.segments, &t.capped)
                }
                Strategy::Point => SampleDoc::points(alpha, &point_tokens(&d, &cfg)),
            };
            write(&output, &vecspot::io::to_json_bytes(&doc)?)?;
        }
        Command::Featurize {
            input,
            output,
            alpha,
            prior,
            format,
        } => {
            let d = drawing(&input, strict)?;
            let t = tokenize_drawing(&d, &sampling(alpha)?);
            let tokens = featurize(&d, &t, prior.into())?;
            let binary = match format {
                Some(TensorFormat::Binary) => true,
                Some(TensorFormat::Json) => false,
                None => output.extension().is_some_and(|e| e == "bin"),
            };
            let bytes = if binary { tokens_to_binary(&tokens) } else { tokens_to_json(&tokens)? };
            write(&output, &bytes)?;
        }
        Command::Infer {
            model,
            input,
            output,
            seed,
        } => {
            let ckpt = checkpoint::load(&model).with_context(|| format!("loading {}", model.display()))?;
            let m = SpotterModel::from_checkpoint(&ckpt)?;
            let d = drawing(&input, strict)?;
            let mut cfg = RunConfig::default();
            cfg.apply_env()?;
            let seed = seed.unwrap_or(cfg.inference_seed);
            let preds = m.predict(&m.prepare(&d)?, seed)?;
            let doc = PredictionDoc::from_predictions(&preds, Some(&m.classes));
            write(&output, &serialize_predictions(&doc)?)?;
        }
        Command::TrainToy {
            out,
            config,
            epochs,
            count,
            prior,
            renders,
        } => {
            let mut cfg = load_config(config.as_deref(), RunConfig::toy())?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(c) = count {
                cfg.synth.count = c;
            }
            if let Some(p) = prior {
                cfg.model.prior_mode = p.into();
            }
            train_toy(&cfg, &out, renders)?;
        }
        Command::Refine {
            input,
            output,
            drawing: drawing_path,
            skip_bfr,
        } => {
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let doc = parse_predictions(&bytes, strict).with_context(|| format!("parsing {}", input.display()))?;
            let d = drawing_path.as_deref().map(|p| drawing(p, strict)).transpose()?;
            let classes = match (&d, doc.class_table()) {
                (Some(d), _) => d.classes.clone(),
                (None, Some(c)) => c,
                (None, None) => bail!("predictions carry no class table; pass --drawing"),
            };
            classes.check()?;
            let ids: Option<Vec<u64>> = d.as_ref().map(|d| d.primitives.iter().map(|p| p.id).collect());
            let preds = doc.resolve(ids.as_deref(), classes.count())?;
            let result = pipeline::panoptic(&preds, &classes, !skip_bfr);
            write(&output, &serialize_panoptic(&result)?)?;
        }
        Command::Eval {
            gt,
            pred,
            report,
            weight_mode,
        } => {
            let d = drawing(&gt, strict)?;
            let result = panoptic_file(&pred, strict)?;
            if result.classes != d.classes {
                bail!("class tables of {} and {} differ", gt.display(), pred.display());
            }
            let mode: WeightMode = weight_mode.into();
            let score = pipeline::score_drawing(&result, &d, mode)?;
            let mut eval = Evaluator::default();
            let name = gt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            eval.add(0, &name, Ok(score));
            let r = eval.finish(&d.classes, mode, true);
            write_json(&report, &r)?;
            println!(
                "PQ {:.4} RQ {:.4} SQ {:.4} | thing {:.4} stuff {:.4} | F1 {:.4} wF1 {:.4}",
                r.panoptic.pq, r.panoptic.rq, r.panoptic.sq, r.panoptic.pq_thing, r.panoptic.pq_stuff, r.f1, r.wf1
            );
        }
        Command::Render {
            input,
            output,
            coloring,
            pred,
        } => {
            let d = drawing(&input, strict)?;
            let result = pred.as_deref().map(|p| panoptic_file(p, strict)).transpose()?;
            let coloring = match (coloring, &result) {
                (ColoringArg::Gt, _) => Coloring::GroundTruth,
                (ColoringArg::SemanticPred, Some(r)) => Coloring::Semantic(r),
                (ColoringArg::Panoptic, Some(r)) => Coloring::Panoptic(r),
                (_, None) => bail!("prediction colorings need --pred"),
            };
            write(&output, &render_svg(&d, coloring))?;
        }
        Command::TokensReport {
            inputs,
            synth_count,
            seed,
            alpha,
            output,
        } => {
            let cfg = sampling(alpha)?;
            let (drawings, names): (Vec<Drawing>, Vec<String>) = if inputs.is_empty() {
                let mut s = RunConfig::default();
                s.synth.seed = seed;
                s.apply_env()?;
                s.synth.count = synth_count;
                let d = synth::generate(&s.synth)?;
                let names = (0..d.len()).map(synth::drawing_name).collect();
                (d, names)
            } else {
                let d = inputs.iter().map(|p| drawing(p, strict)).collect::<Result<Vec<_>>>()?;
                let names = inputs.iter().map(|p| p.display().to_string()).collect();
                (d, names)
            };
            let r = pipeline::token_report(&drawings, &names, &cfg);
            write_json(&output, &r)?;
            println!(
                "{} drawings: {} line tokens, {} point tokens, ratio {:.3}",
                r.drawings.len(),
                r.line_tokens,
                r.point_tokens,
                r.ratio
            );
        }
    }
    Ok(())
}

fn train_toy(cfg: &RunConfig, out: &Path, renders: usize) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let epochs = cfg.train.epochs;
    let (drawings, run) = pipeline::run_toy(cfg, |s| {
        if s.epoch % 10 == 0 || s.epoch + 1 == epochs {
            log::info!(
                "epoch {:>4}: loss {:.4} (cls {:.4} bce {:.4} dice {:.4} sem {:.4})",
                s.epoch,
                s.mean.total,
                s.mean.cls,
                s.mean.bce,
                s.mean.dice,
                s.mean.sem
            );
        }
    })?;
    write_json(&out.join("config.json"), cfg)?;
    checkpoint::save(&out.join("model.json"), &run.model.checkpoint()?)?;
    write_json(&out.join("train.json"), &run.train)?;
    write_json(&out.join("eval.json"), &run.eval)?;
    write_json(&out.join("eval-skip-bfr.json"), &run.eval_skip_bfr)?;
    for (i, d) in drawings.iter().take(renders).enumerate() {
        let name = synth::drawing_name(i);
        let (_, result) = pipeline::infer_drawing(&run.model, d, pipeline::drawing_seed(cfg.inference_seed, i), cfg.bfr)?;
        write(&out.join("renders").join(format!("{name}-gt.svg")), &render_svg(d, Coloring::GroundTruth))?;
        write(
            &out.join("renders").join(format!("{name}-panoptic.svg")),
            &render_svg(d, Coloring::Panoptic(&result)),
        )?;
    }
    println!(
        "PQ {:.4} (skip-bfr {:.4}) | thing {:.4} stuff {:.4} | F1 {:.4} wF1 {:.4}",
        run.eval.panoptic.pq,
        run.eval_skip_bfr.panoptic.pq,
        run.eval.panoptic.pq_thing,
        run.eval.panoptic.pq_stuff,
        run.eval.f1,
        run.eval.wf1
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
