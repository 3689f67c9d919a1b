//! `fusionkit` command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fusionkit::active::{bootstrap, CuratedMaskSet};
use fusionkit::blob::{remove_small_blobs, MinArea};
use fusionkit::ensemble::{accuracy, nll};
use fusionkit::fcn::{fc_to_conv, heatmap, Shape, SmallNet, Tensor3};
use fusionkit::fusion::save_weights;
use fusionkit::ga::{evolve, GaConfig};
use fusionkit::harness::{report, split, SplitSpec};
use fusionkit::mlp::{train, MlpDataset, TrainSchedule, DEFAULT_HIDDEN, DEFAULT_LAMBDA};
use fusionkit::raster::{read_ppm, write_pgm, GrayImage};
use fusionkit::skin::{load_pixel_file, SkinModel, Variant};
use fusionkit::temporal::{fit_gaussian, parse_grid, sweep, DEFAULT_FPS};
use fusionkit::{ClassDistribution, FusionRegistry, FusionStrategy, PredictionLog, PredictionRecord};

#[derive(Parser)]
#[command(name = "fusionkit", version, about = "Skin segmentation, ensemble fusion and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gaussian skin-colour model.
    #[command(subcommand)]
    Skin(SkinCommand),
    /// Fuse a prediction log by plain or weighted voting.
    Fuse {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Majority)]
        mode: Mode,
        /// Weights file, required with `--mode weighted`.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Where to write the fused log (single classifier column `fused`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search ensemble weights with the genetic algorithm.
    GaTrain {
        #[arg(long)]
        log: PathBuf,
        /// TOML file with any of the GA settings; missing keys keep defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the MLP fuser.
    MlpTrain {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HIDDEN)]
        hidden: usize,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a prediction log with a trained MLP.
    MlpFuse {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense-to-convolution conversion and heatmaps.
    #[command(subcommand)]
    Fcn(FcnCommand),
    /// Sweep the temporal smoothing window and fit a Gaussian to the curve.
    Smooth {
        #[arg(long)]
        log: PathBuf,
        /// `majority` or a weights file.
        #[arg(long, default_value = "majority")]
        weights: String,
        #[arg(long, default_value_t = DEFAULT_FPS)]
        fps: f64,
        /// Window lengths in seconds as `start:step:end`.
        #[arg(long, default_value = "0:0.25:10")]
        m_grid: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Split a log, fuse it and write metrics, confusion matrix and report.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        /// `random:<fraction>:<seed>` or `sessions:<file>`.
        #[arg(long)]
        split: String,
        /// `majority`, `weights:<file>` or `mlp:<file>`.
        #[arg(long, default_value = "majority")]
        fusion: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SkinCommand {
    /// Fit a model on a labelled pixel file.
    Fit {
        #[arg(long)]
        pixels: PathBuf,
        #[arg(long, default_value = "v1")]
        variant: Variant,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a PPM image into a probability heatmap and a binary mask.
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Drop mask blobs below this many pixels (`auto` scales with the image).
        #[arg(long, default_value = "auto")]
        min_area: MinArea,
    },
    /// Fit a position-aware model from curated v1 masks.
    Bootstrap {
        #[arg(long)]
        v1_model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        pixels_per_image: usize,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FcnCommand {
    /// Rewrite dense layers as convolutions for a canonical input shape.
    Convert {
        #[arg(long)]
        net: PathBuf,
        /// Input shape the dense layers were trained on, `HxWxC`.
        #[arg(long)]
        canonical: Shape,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a converted net over an image; writes `<out>.c0.pgm` and `<out>.c1.pgm`.
    Heatmap {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Majority,
    Weighted,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Skin(cmd) => skin(cmd),
        Command::Fuse { log, mode, weights, out } => {
            let spec = match (mode, weights) {
                (Mode::Majority, None) => "majority".to_string(),
                (Mode::Majority, Some(_)) => bail!("--weights only applies to --mode weighted"),
                (Mode::Weighted, Some(w)) => format!("weights:{}", w.display()),
                (Mode::Weighted, None) => bail!("--mode weighted needs --weights <file>"),
            };
            let log = PredictionLog::load(&log)?;
            let strategy = FusionRegistry::builtin().build(&spec, &log.classifiers)?;
            fuse_and_report(&log, strategy.as_ref(), out.as_deref())
        }
        Command::GaTrain { log, config, seed, out } => {
            let log = PredictionLog::load(&log)?;
            let mut cfg: GaConfig = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => GaConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = evolve(&cfg, &log)?;
            let best = outcome.best;
            save_weights(&out, &log.classifiers, &best.weights()?)?;
            println!("nll\t{:.6}", -best.fitness.unwrap_or(f64::NEG_INFINITY));
            for (name, w) in log.classifiers.iter().zip(&best.genes) {
                println!("weight\t{name}\t{w:.6}");
            }
            Ok(())
        }
        Command::MlpTrain { log, hidden, lambda, seed, out } => {
            let log = PredictionLog::load(&log)?;
            let data = MlpDataset::from_log(&log);
            let fuser = train(&data, log.num_classifiers(), hidden, &TrainSchedule::default(), seed, lambda)?;
            fuser.save(&out)?;
            println!("loss\t{:.6}", fuser.loss(&data)?);
            Ok(())
        }
        Command::MlpFuse { log, model, out } => {
            let log = PredictionLog::load(&log)?;
            let spec = format!("mlp:{}", model.display());
            let strategy = FusionRegistry::builtin().build(&spec, &log.classifiers)?;
            fuse_and_report(&log, strategy.as_ref(), out.as_deref())
        }
        Command::Fcn(cmd) => fcn(cmd),
        Command::Smooth {
            log,
            weights,
            fps,
            m_grid,
            report,
        } => smooth(&log, &weights, fps, &m_grid, &report),
        Command::Evaluate { log, split: s, fusion, out } => {
            let log = PredictionLog::load(&log)?;
            let spec: SplitSpec = s.parse()?;
            let strategy = FusionRegistry::builtin().build(&fusion, &log.classifiers)?;
            let (train, test) = split(&log, &spec)?;
            let rep = report(&train, &test, strategy.as_ref())?;
            rep.write_to(&out)?;
            print!("{}", rep.to_text());
            Ok(())
        }
    }
}

fn skin(cmd: SkinCommand) -> Result<()> {
    match cmd {
        SkinCommand::Fit { pixels, variant, out } => {
            let samples = load_pixel_file(&pixels)?;
            if let Some(s) = samples.first() {
                if s.features.len() != variant.dim() {
                    bail!(
                        "{} has {} feature columns but variant {} needs {}",
                        pixels.display(),
                        s.features.len(),
                        variant.as_str(),
                        variant.dim()
                    );
                }
            }
            let model = SkinModel::fit(&samples)?;
            model.save(&out)?;
            println!("fitted {} on {} samples", variant.as_str(), samples.len());
            Ok(())
        }
        SkinCommand::Segment {
            model,
            image,
            heatmap,
            mask,
            min_area,
        } => {
            let model = SkinModel::load(&model)?;
            let img = read_ppm(&image)?;
            let seg = model.segment(&img)?;
            write_pgm(&heatmap, &seg.heatmap.to_gray())?;
            let filtered = remove_small_blobs(&seg.mask, min_area)?;
            write_pgm(&mask, &filtered.to_gray())?;
            println!("skin pixels\t{}", filtered.count());
            Ok(())
        }
        SkinCommand::Bootstrap {
            v1_model,
            manifest,
            pixels_per_image,
            fraction,
            seed,
            out,
        } => {
            let v1 = SkinModel::load(&v1_model)?;
            let set = CuratedMaskSet::from_manifest(&manifest, pixels_per_image)?;
            let v2 = bootstrap(&v1, &set, fraction, seed)?;
            v2.save(&out)?;
            println!("bootstrapped v2 from {} curated images", set.entries.len());
            Ok(())
        }
    }
}

fn fcn(cmd: FcnCommand) -> Result<()> {
    match cmd {
        FcnCommand::Convert { net, canonical, out } => {
            let converted = fc_to_conv(&SmallNet::load(&net)?, canonical)?;
            converted.save(&out)?;
            Ok(())
        }
        FcnCommand::Heatmap { net, image, out } => {
            let net = SmallNet::load(&net)?;
            let input = Tensor3::from_rgb(&read_ppm(&image)?);
            let map = heatmap(&net, &input)?;
            let base = out.to_string_lossy();
            let base = base.strip_suffix(".pgm").unwrap_or(&base);
            for c in 0..2 {
                let gray = GrayImage {
                    width: map.width,
                    height: map.height,
                    pixels: (0..map.height * map.width)
                        .map(|i| (255.0 * map.values[i * 2 + c]).round() as u8)
                        .collect(),
                };
                let path = format!("{base}.c{c}.pgm");
                write_pgm(&path, &gray)?;
                println!("{path}");
            }
            Ok(())
        }
    }
}

fn fuse_and_report(log: &PredictionLog, strategy: &dyn FusionStrategy, out: Option<&Path>) -> Result<()> {
    let fused = strategy.fuse_log(log)?;
    let truths = log.truths();
    println!("nll\t{:.6}", nll(&fused, &truths)?);
    println!("accuracy\t{:.4}", accuracy(&fused, &truths)?);
    if let Some(out) = out {
        fused_log(log, &fused)?.save(out)?;
    }
    Ok(())
}

fn fused_log(log: &PredictionLog, fused: &[ClassDistribution]) -> Result<PredictionLog> {
    let records = log
        .records
        .iter()
        .zip(fused)
        .map(|(r, f)| PredictionRecord {
            outputs: vec![*f],
            ..r.clone()
        })
        .collect();
    Ok(PredictionLog::new(vec!["fused".into()], records)?)
}

fn smooth(log: &Path, weights: &str, fps: f64, grid: &str, report: &Path) -> Result<()> {
    let log = PredictionLog::load(log)?;
    let spec = if weights == "majority" {
        "majority".to_string()
    } else {
        format!("weights:{weights}")
    };
    let strategy = FusionRegistry::builtin().build(&spec, &log.classifiers)?;
    let fused = strategy.fuse_log(&log)?;
    let grid = parse_grid(grid)?;
    let curve = sweep(&log.records, &fused, &grid, fps)?;

    let mut csv = String::from("m_s,accuracy\n");
    for (m, acc) in &curve {
        csv.push_str(&format!("{m},{acc:.4}\n"));
    }
    match fit_gaussian(&curve) {
        Ok(fit) => {
            csv.push_str("\na,mu,sigma,c\n");
            csv.push_str(&format!("{},{},{},{}\n", fit.amplitude, fit.mean, fit.sigma, fit.offset));
            println!(
                "fit\ta={:.6}\tmu={:.6}\tsigma={:.6}\tc={:.6}",
                fit.amplitude, fit.mean, fit.sigma, fit.offset
            );
        }
        Err(e) => eprintln!("warning: no Gaussian fit: {e}"),
    }
    fs::write(report, csv).with_context(|| format!("writing {}", report.display()))?;
    let best = curve.iter().max_by(|a, b| a.1.total_cmp(&b.1)).expect("grid is non-empty");
    println!("best\tM={}\taccuracy={:.4}", best.0, best.1);
    Ok(())
}
