use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hierdet::data::{
    ellipse_to_box, load_image, load_wider, parse_fddb, parse_wider, size_histogram, synth_generate, top_size_csv,
    top_size_table, write_corpus, CORPUS_BOXES, CORPUS_ELLIPSES,
};
use hierdet::eval::{average_precision, roc_continuous, roc_discrete, EvalCurve};
use hierdet::geometry::BBox;
use hierdet::harness::{
    detect, detect_images, load_checkpoint, log_csv, train_loop, Config, DetectConfig,
};
use hierdet::network::{build_network, Model};
use hierdet::receptive_field::{erf_estimate, trf_table};
use hierdet::{Error, Result};

#[derive(Parser)]
#[command(name = "hierdet", version, about = "Train, run and evaluate the hierarchical face detector")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ap,
    RocDiscrete,
    RocContinuous,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnnotationFormat {
    Wider,
    Fddb,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a corpus directory and write a checkpoint
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding `wider.txt` and the images it lists
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log CSV, default `<out>.log.csv`
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on a corpus directory
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "ap")]
        metric: Metric,
        /// Curve output, `x,y` rows
        #[arg(long)]
        csv: PathBuf,
        /// Evaluation settings (`eval.*` keys)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Detect faces in one image; prints `x1,y1,x2,y2,score`
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        score_floor: f64,
        #[arg(long, default_value_t = 0.45)]
        nms_iou: f64,
    },
    /// Print the default boxes of one hierarchy as CSV
    Anchors {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        hierarchy: usize,
    },
    /// Print theoretical (and optionally effective) receptive fields
    Rf {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        effective: bool,
        /// Weights for the effective estimate; random init when absent
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        mass: f64,
        #[arg(long, default_value_t = 16)]
        trials: usize,
    },
    /// Face-size histogram and most common image sizes per bucket
    Stats {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, value_enum, default_value = "wider")]
        format: AnnotationFormat,
        /// Image root; enables the per-bucket image-size table
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Generate a synthetic corpus directory
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Histogram every traced layer's activations on one image
    DumpActivations {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
}

fn config_or_default(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(load_checkpoint(path)?.model)
}

fn train(config: Option<&Path>, data: &Path, out: &Path, log: Option<&Path>) -> Result<()> {
    let cfg = config_or_default(config)?;
    let records = parse_wider(&read(&data.join(CORPUS_BOXES))?)?;
    let set = load_wider(&records, data, cfg.network.input_channels)?;
    let mut model = build_network(&cfg.network, cfg.train.seed)?;
    eprintln!(
        "training {} parameters on {} images for {} iterations",
        model.num_parameters(),
        set.len(),
        cfg.train.total_iters
    );
    let every = (cfg.train.total_iters / 20).max(1);
    let rows = train_loop(&mut model, &set, &cfg.train, &cfg.augment, Some(out), &mut |r| {
        if (r.iter + 1) % every == 0 {
            eprintln!("iter {:>6}  loss {:.4}  N {}  lr {}", r.iter + 1, r.loss.total, r.loss.n_matched, r.lr);
        }
    })?;
    let log_path = log.map_or_else(
        || {
            let mut p = out.as_os_str().to_owned();
            p.push(".log.csv");
            PathBuf::from(p)
        },
        Path::to_path_buf,
    );
    write(&log_path, &log_csv(&rows))
}

fn eval(ckpt: &Path, data: &Path, metric: Metric, csv: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = config_or_default(config)?;
    let model = load_model(ckpt)?;
    let records = parse_wider(&read(&data.join(CORPUS_BOXES))?)?;
    let set = load_wider(&records, data, model.spec.input_channels)?;
    let images: Vec<_> = set.iter().map(|a| a.image.clone()).collect();
    let dets = detect_images(&model, &images, &DetectConfig::from(&cfg.eval))?;
    let iou = cfg.eval.iou_threshold;
    let (curve, n_gt): (EvalCurve, usize) = match metric {
        Metric::Ap => {
            let gts: Vec<Vec<BBox>> = set.iter().map(|a| a.boxes.clone()).collect();
            (average_precision(&dets, &gts, iou)?.1, gts.iter().map(Vec::len).sum())
        }
        Metric::RocDiscrete | Metric::RocContinuous => {
            let fddb = parse_fddb(&read(&data.join(CORPUS_ELLIPSES))?)?;
            let by_path: std::collections::HashMap<&str, _> =
                fddb.iter().map(|r| (r.path.as_str(), r.ellipses.clone())).collect();
            let ellipses = records
                .iter()
                .map(|r| {
                    by_path
                        .get(r.path.as_str())
                        .cloned()
                        .ok_or_else(|| Error::Lookup(format!("{} has no ellipse annotation", r.path)))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = ellipses.iter().map(Vec::len).sum();
            let c = if matches!(metric, Metric::RocDiscrete) {
                roc_discrete(&dets, &ellipses, iou)?
            } else {
                roc_continuous(&dets, &ellipses, iou, cfg.eval.raster_scale)?
            };
            (c, n)
        }
    };
    write(csv, &curve.to_csv())?;
    print!("{}", curve.summary_csv(set.len(), n_gt, dets.len()));
    Ok(())
}

fn detect_cmd(ckpt: &Path, image: &Path, score_floor: f64, nms_iou: f64) -> Result<()> {
    let model = load_model(ckpt)?;
    let mut s = String::from("x1,y1,x2,y2,score\n");
    for d in detect(&model, image, score_floor, nms_iou)? {
        let b = d.bbox;
        let _ = writeln!(s, "{},{},{},{},{}", b.x1, b.y1, b.x2, b.y2, d.score);
    }
    print!("{s}");
    Ok(())
}

fn anchors(config: Option<&Path>, k: usize) -> Result<()> {
    let cfg = config_or_default(config)?;
    let model = build_network(&cfg.network, 0)?;
    let set = model
        .anchors()
        .get(k)
        .ok_or_else(|| Error::Lookup(format!("hierarchy {k} of {}", model.anchors().len())))?;
    let mut out = std::io::stdout().lock();
    set.write_csv(&mut out).map_err(|e| Error::io("<stdout>", e))
}

fn rf(config: Option<&Path>, effective: bool, ckpt: Option<&Path>, mass: f64, trials: usize) -> Result<()> {
    let cfg = config_or_default(config)?;
    let model = match ckpt {
        Some(p) => load_model(p)?,
        None => build_network(&cfg.network, cfg.train.seed)?,
    };
    let mut s = String::from(if effective {
        "layer,trf,jump,start,erf_radius,erf_side\n"
    } else {
        "layer,trf,jump,start\n"
    });
    for (name, st) in trf_table(&model.spec) {
        let _ = write!(s, "{name},{},{},{}", st.rf_f64(), st.jump_f64(), st.start_f64());
        if effective {
            let e = erf_estimate(&model, &name, mass, trials, cfg.train.seed)?;
            let _ = write!(s, ",{},{}", e.radius, e.side);
        }
        s.push('\n');
    }
    print!("{s}");
    Ok(())
}

fn stats(annotations: &Path, format: AnnotationFormat, root: Option<&Path>) -> Result<()> {
    let text = read(annotations)?;
    let per_image: Vec<(String, Vec<BBox>)> = match format {
        AnnotationFormat::Wider => parse_wider(&text)?.into_iter().map(|r| (r.path, r.boxes)).collect(),
        AnnotationFormat::Fddb => parse_fddb(&text)?
            .into_iter()
            .map(|r| (r.path, r.ellipses.iter().map(ellipse_to_box).collect()))
            .collect(),
    };
    let hist = size_histogram(per_image.iter().flat_map(|(_, b)| b));
    print!("{}", hist.to_csv());
    if let Some(root) = root {
        let mut sized = Vec::with_capacity(per_image.len());
        for (path, boxes) in per_image {
            let p = root.join(&path);
            let (w, h) = image::image_dimensions(&p).map_err(|e| Error::Image {
                path: p.clone(),
                msg: e.to_string(),
            })?;
            sized.push((boxes, (h as usize, w as usize)));
        }
        println!();
        print!("{}", top_size_csv(&top_size_table(&sized)));
    }
    Ok(())
}

fn synth(out: &Path, count: usize, seed: u64, config: Option<&Path>) -> Result<()> {
    let mut sc = config_or_default(config)?.synth;
    sc.count = count;
    sc.seed = seed;
    let images = synth_generate(&sc)?;
    write_corpus(out, &images)?;
    eprintln!("wrote {count} images to {}", out.display());
    Ok(())
}

fn dump_activations(ckpt: &Path, image: &Path, bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::Validation(vec!["--bins must be positive".into()]));
    }
    let model = load_model(ckpt)?;
    let t = load_image(image, model.spec.input_channels)?;
    let size = model.spec.input_size;
    let item = hierdet::data::AnnotatedImage::new(t, Vec::new(), image.display().to_string())?;
    let item = hierdet::data::resize_with_boxes(&item, (size, size));
    let (ctx, _) = model.infer(&hierdet::data::batch_images(&[item])?)?;
    let mut s = String::from("layer,bin_lo,bin_hi,count\n");
    for (name, v) in &ctx.trace {
        let data = ctx.tape.value(*v).data();
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for &x in data {
            let i = (((x - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let a = lo + i as f64 * width;
            let _ = writeln!(s, "{name},{a},{},{c}", a + width);
        }
    }
    print!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, data, out, log } => train(config.as_deref(), &data, &out, log.as_deref()),
        Cmd::Eval {
            ckpt,
            data,
            metric,
            csv,
            config,
        } => eval(&ckpt, &data, metric, &csv, config.as_deref()),
        Cmd::Detect {
            ckpt,
            image,
            score_floor,
            nms_iou,
        } => detect_cmd(&ckpt, &image, score_floor, nms_iou),
        Cmd::Anchors { config, hierarchy } => anchors(config.as_deref(), hierarchy),
        Cmd::Rf {
            config,
            effective,
            ckpt,
            mass,
            trials,
        } => rf(config.as_deref(), effective, ckpt.as_deref(), mass, trials),
        Cmd::Stats {
            annotations,
            format,
            root,
        } => stats(&annotations, format, root.as_deref()),
        Cmd::Synth {
            out,
            count,
            seed,
            config,
        } => synth(&out, count, seed, config.as_deref()),
        Cmd::DumpActivations { ckpt, image, bins } => dump_activations(&ckpt, &image, bins),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
