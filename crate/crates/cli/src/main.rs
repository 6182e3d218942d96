use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hpm::config::RunConfig;
use hpm::detection::{detect, Detection};
use hpm::error::{Error, Result};
use hpm::eval::{
    detection_pr, localize_faces, occlusion_pr_sweep, render_overlay, score_faces, svg_curve, write_csv, LocalizedFace, Series,
};
use hpm::features::Image;
use hpm::model::{load_model, save_model};
use hpm::supervision::{supervise, DatasetManifest, Supervision};
use hpm::synth::{PlantedConfig, PlantedGenerator};
use hpm::training::{list_images, train, RoundLog};

/// Environment variable giving the default worker count.
const WORKERS_ENV: &str = "HPM_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "hpm", version, about = "Occlusion-aware face detection and landmark localization")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides the configuration and HPM_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derive viewpoint, shape and occlusion labels for an annotated dataset.
    Supervise {
        /// Dataset manifest (JSON).
        manifest: PathBuf,
    },
    /// Train a model from supervision labels and a directory of negatives.
    Train {
        /// Supervision file written by `supervise`.
        supervision: PathBuf,
        /// Directory of face-free images.
        #[arg(long)]
        negatives: PathBuf,
    },
    /// Detect faces in images or directories of images.
    Detect {
        model: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Score threshold; the configured value when omitted.
        #[arg(long)]
        threshold: Option<f64>,
        /// Also write an overlay PNG per image.
        #[arg(long)]
        overlays: bool,
    },
    /// Localize landmarks inside the boxes of a manifest.
    Localize { model: PathBuf, manifest: PathBuf },
    /// Score predictions against a ground-truth manifest.
    Eval {
        kind: EvalKind,
        /// `localize` output for localization and occlusion, `detect`
        /// output for detection.
        predictions: PathBuf,
        manifest: PathBuf,
    },
    /// Occlusion precision/recall and localization over the bias-offset grid.
    Sweep { model: PathBuf, manifest: PathBuf },
    /// Write a planted synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        test: usize,
        #[arg(long, default_value_t = 40)]
        negatives: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalKind {
    Localization,
    Occlusion,
    Detection,
}

/// One line of the detection JSONL.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ImageDetection {
    image: PathBuf,
    #[serde(flatten)]
    detection: Detection,
}

#[derive(Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: &'static str,
    config_sha256: String,
    config: RunConfig,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

struct Run {
    name: &'static str,
    config: RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn output(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn finish(self) -> Result<()> {
        let config_json = serde_json::to_string(&self.config)?;
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>> {
            paths
                .iter()
                .filter(|p| p.is_file())
                .map(|p| {
                    Ok(FileDigest {
                        path: p.clone(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.name.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: hex::encode(Sha256::digest(config_json.as_bytes())),
            config: self.config.clone(),
            inputs: digest(&self.inputs)?,
            outputs: digest(&self.outputs)?,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(self.out.join("run_manifest.json"), text + "\n")?;
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Domain(_) | Error::TooLarge(_) => 2,
        Error::NonConvergence { .. } => 4,
        Error::Data(_)
        | Error::Corrupt { .. }
        | Error::NotFound
        | Error::Image { .. }
        | Error::Io(_)
        | Error::Json(_) => 3,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn worker_count(cfg: &RunConfig) -> Result<Option<usize>> {
    if let Some(w) = cfg.workers {
        return Ok(Some(w));
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(&config)? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    std::fs::create_dir_all(&cli.out)?;
    pool.install(|| dispatch(&cli, config))
}

fn dispatch(cli: &Cli, config: RunConfig) -> Result<()> {
    let mut run = Run {
        name: "",
        config,
        out: cli.out.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Some(p) = &run.config.topology {
        let p = p.clone();
        run.input(&p);
    }
    if let Some(p) = &run.config.reference_shapes {
        let p = p.clone();
        run.input(&p);
    }
    match &cli.command {
        Command::Supervise { manifest } => {
            run.name = "supervise";
            cmd_supervise(&mut run, manifest)?;
        }
        Command::Train { supervision, negatives } => {
            run.name = "train";
            cmd_train(&mut run, supervision, negatives)?;
        }
        Command::Detect {
            model,
            inputs,
            threshold,
            overlays,
        } => {
            run.name = "detect";
            cmd_detect(&mut run, model, inputs, *threshold, *overlays)?;
        }
        Command::Localize { model, manifest } => {
            run.name = "localize";
            cmd_localize(&mut run, model, manifest)?;
        }
        Command::Eval {
            kind,
            predictions,
            manifest,
        } => {
            run.name = "eval";
            cmd_eval(&mut run, *kind, predictions, manifest)?;
        }
        Command::Sweep { model, manifest } => {
            run.name = "sweep";
            cmd_sweep(&mut run, model, manifest)?;
        }
        Command::Synth {
            train,
            test,
            negatives,
        } => {
            run.name = "synth";
            cmd_synth(&mut run, *train, *test, *negatives)?;
        }
    }
    run.finish()
}

fn load_manifest(run: &mut Run, path: &Path) -> Result<DatasetManifest> {
    run.input(path);
    let manifest = DatasetManifest::load(path)?;
    if manifest.examples.is_empty() {
        return Err(Error::Data(format!("{} lists no examples", path.display())));
    }
    Ok(manifest)
}

fn cmd_supervise(run: &mut Run, manifest: &Path) -> Result<()> {
    let data = load_manifest(run, manifest)?;
    let topology = run.config.topology()?;
    let refs = run.config.references()?;
    let sup = supervise(&data, &refs, &topology, &run.config.supervision)?;
    for ex in &sup.examples {
        if ex.virtual_index == 0 {
            run.input(&ex.image);
        }
    }
    let out = run.output("supervision.json");
    sup.save(&out)?;
    eprintln!("{} supervised examples written to {}", sup.examples.len(), out.display());
    Ok(())
}

fn cmd_train(run: &mut Run, supervision: &Path, negatives: &Path) -> Result<()> {
    run.input(supervision);
    let negs = list_images(negatives)?;
    if negs.is_empty() {
        return Err(Error::Data(format!("{} holds no images", negatives.display())));
    }
    for n in &negs {
        run.input(n);
    }
    let sup = Supervision::load(supervision)?;
    let checkpoints = run.out.join("checkpoints");
    std::fs::create_dir_all(&checkpoints)?;
    let log_path = run.output("training_log.csv");
    let mut log = BufWriter::new(File::create(&log_path)?);
    writeln!(log, "{}", RoundLog::CSV_HEADER)?;
    let mut written = Vec::new();
    let out = train(&sup, &negs, &run.config.training, |entry, model| {
        writeln!(log, "{}", entry.csv_row())?;
        log.flush()?;
        let path = checkpoints.join(format!("round_{:02}.json", entry.round));
        save_model(model, &path)?;
        written.push(path);
        eprintln!(
            "round {}: {} negatives, {} new, objective {:.6}",
            entry.round, entry.negatives, entry.new_constraints, entry.objective
        );
        Ok(())
    })?;
    drop(log);
    run.outputs.extend(written);
    let model_path = run.output("model.json");
    save_model(&out.model, &model_path)?;
    eprintln!("model written to {}", model_path.display());
    Ok(())
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            out.extend(list_images(p)?);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn cmd_detect(run: &mut Run, model: &Path, inputs: &[PathBuf], threshold: Option<f64>, overlays: bool) -> Result<()> {
    run.input(model);
    let model = load_model(model)?;
    let mut cfg = run.config.detection.clone();
    if let Some(t) = threshold {
        if t.is_nan() {
            return Err(Error::Config("threshold must be a number".into()));
        }
        cfg.threshold = t;
    }
    let images = collect_images(inputs)?;
    let results: Vec<(PathBuf, Result<(Image, Vec<Detection>)>)> = {
        use rayon::prelude::*;
        images
            .par_iter()
            .map(|p| {
                let r = Image::load(p).and_then(|img| detect(&model, &img, &cfg).map(|d| (img, d)));
                (p.clone(), r)
            })
            .collect()
    };
    let out_path = run.output("detections.jsonl");
    let mut out = BufWriter::new(File::create(&out_path)?);
    let mut failed = 0;
    if overlays {
        std::fs::create_dir_all(run.out.join("overlays"))?;
    }
    for (i, (path, result)) in results.into_iter().enumerate() {
        match result {
            Ok((img, dets)) => {
                run.input(&path);
                for d in &dets {
                    let line = ImageDetection {
                        image: path.clone(),
                        detection: d.clone(),
                    };
                    serde_json::to_writer(&mut out, &line)?;
                    out.write_all(b"\n")?;
                }
                if overlays {
                    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    let name = format!("overlays/{i:04}_{stem}.png");
                    let target = run.output(&name);
                    render_overlay(&img, &dets).save_png(&target)?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("skipping {}: {e}", path.display());
            }
        }
    }
    out.flush()?;
    if failed > 0 && failed == images.len() {
        return Err(Error::Data(format!("none of the {failed} inputs could be processed")));
    }
    Ok(())
}

fn cmd_localize(run: &mut Run, model: &Path, manifest: &Path) -> Result<()> {
    run.input(model);
    let model = load_model(model)?;
    let data = load_manifest(run, manifest)?;
    let located = localize_faces(&model, &data.examples, &run.config.detection)?;
    let out_path = run.output("localizations.jsonl");
    let mut out = BufWriter::new(File::create(&out_path)?);
    for l in &located {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let missing = located.iter().filter(|l| l.detection.is_none()).count();
    if missing > 0 {
        eprintln!("{missing} of {} faces had no detection covering their box", located.len());
    }
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn cmd_eval(run: &mut Run, kind: EvalKind, predictions: &Path, manifest: &Path) -> Result<()> {
    run.input(predictions);
    let data = load_manifest(run, manifest)?;
    let eval = run.config.evaluation.clone();
    let eyes = run.config.supervision.eyes.clone();
    match kind {
        EvalKind::Localization | EvalKind::Occlusion => {
            let located: Vec<LocalizedFace> = read_lines(predictions)?;
            if located.len() != data.examples.len() {
                return Err(Error::Data(format!(
                    "{} predictions for {} ground-truth faces",
                    located.len(),
                    data.examples.len()
                )));
            }
            let mut dets = vec![None; located.len()];
            for l in located {
                let slot = dets
                    .get_mut(l.face)
                    .ok_or_else(|| Error::Data(format!("prediction for unknown face {}", l.face)))?;
                *slot = Some(l.detection);
            }
            let dets: Vec<Option<Detection>> = dets
                .into_iter()
                .enumerate()
                .map(|(i, d)| d.ok_or_else(|| Error::Data(format!("no prediction for face {i}"))))
                .collect::<Result<_>>()?;
            let scores = score_faces(&data.examples, &dets, &eyes, eval.success_threshold)?;
            if kind == EvalKind::Localization {
                let rep = &scores.localization;
                std::fs::write(
                    run.output("localization_report.json"),
                    serde_json::to_string_pretty(&scores.localization)? + "\n",
                )?;
                let rows: Vec<Vec<String>> = rep.ced.iter().map(|(t, f)| vec![t.to_string(), f.to_string()]).collect();
                write_csv(run.output("ced.csv"), &["threshold", "fraction"], &rows)?;
                let series = [Series {
                    name: "model".into(),
                    points: rep.ced.clone(),
                }];
                std::fs::write(
                    run.output("ced.svg"),
                    svg_curve("Cumulative error distribution", "normalized error", "fraction of faces", 0.3, &series),
                )?;
                println!(
                    "mean error {:.4}, success rate {:.4} at {}, failures {}",
                    rep.mean_error, rep.success_rate, rep.threshold, scores.failures
                );
            } else {
                let summary = BTreeMap::from([
                    ("precision", scores.precision),
                    ("recall", scores.recall),
                    ("f1", scores.f1),
                    ("failures", scores.failures as f64),
                ]);
                std::fs::write(run.output("occlusion_report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
                println!(
                    "occlusion precision {:.4}, recall {:.4}, f1 {:.4}",
                    scores.precision, scores.recall, scores.f1
                );
            }
        }
        EvalKind::Detection => {
            let lines: Vec<ImageDetection> = read_lines(predictions)?;
            let mut images: Vec<PathBuf> = Vec::new();
            let mut truths: Vec<Vec<_>> = Vec::new();
            for face in &data.examples {
                let b = face
                    .bbox
                    .ok_or_else(|| Error::Data(format!("{} has a face without a box", face.image.display())))?;
                let occluded = face.occluded.as_ref().is_some_and(|f| f.iter().any(|&o| o));
                match images.iter().position(|p| *p == face.image) {
                    Some(i) => truths[i].push((b, occluded)),
                    None => {
                        images.push(face.image.clone());
                        truths.push(vec![(b, occluded)]);
                    }
                }
            }
            let mut dets: Vec<Vec<_>> = vec![Vec::new(); images.len()];
            for l in lines {
                let i = images
                    .iter()
                    .position(|p| same_file(p, &l.image))
                    .ok_or_else(|| Error::Data(format!("detection for {} which the manifest does not list", l.image.display())))?;
                dets[i].push((l.detection.score, l.detection.bbox));
            }
            let pr = detection_pr(&dets, &truths, eval.detection_iou)?;
            std::fs::write(run.output("detection_report.json"), serde_json::to_string_pretty(&pr)? + "\n")?;
            let rows = |pts: &[hpm::eval::PrPoint]| -> Vec<Vec<String>> {
                pts.iter()
                    .map(|p| {
                        vec![
                            p.parameter.to_string(),
                            p.tp.to_string(),
                            p.fp.to_string(),
                            p.precision.to_string(),
                            p.recall.to_string(),
                        ]
                    })
                    .collect()
            };
            let header = ["threshold", "tp", "fp", "precision", "recall"];
            write_csv(run.output("detection_pr.csv"), &header, &rows(&pr.all))?;
            write_csv(run.output("detection_pr_occluded.csv"), &header, &rows(&pr.occluded))?;
            let curve = |pts: &[hpm::eval::PrPoint]| pts.iter().map(|p| (p.recall, p.precision)).collect();
            let series = [
                Series {
                    name: "all faces".into(),
                    points: curve(&pr.all),
                },
                Series {
                    name: "occluded faces".into(),
                    points: curve(&pr.occluded),
                },
            ];
            std::fs::write(
                run.output("detection_pr.svg"),
                svg_curve("Detection precision/recall", "recall", "precision", 1.0, &series),
            )?;
            println!("AP {:.4}, occluded AP {:.4}", pr.ap, pr.ap_occluded);
        }
    }
    Ok(())
}

fn same_file(a: &Path, b: &Path) -> bool {
    if a == b {
        return true;
    }
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn cmd_sweep(run: &mut Run, model: &Path, manifest: &Path) -> Result<()> {
    run.input(model);
    let model = load_model(model)?;
    let data = load_manifest(run, manifest)?;
    let eval = run.config.evaluation.clone();
    let points = occlusion_pr_sweep(
        &model,
        &data.examples,
        &eval.alphas,
        &run.config.detection,
        &run.config.supervision.eyes,
        eval.success_threshold,
    )?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.alpha.to_string(),
                p.precision.to_string(),
                p.recall.to_string(),
                p.f1.to_string(),
                p.localization.mean_error.to_string(),
                p.localization.success_rate.to_string(),
                p.failures.to_string(),
            ]
        })
        .collect();
    write_csv(
        run.output("sweep.csv"),
        &["alpha", "precision", "recall", "f1", "mean_error", "success_rate", "failures"],
        &rows,
    )?;
    std::fs::write(run.output("sweep.json"), serde_json::to_string_pretty(&points)? + "\n")?;
    let pr = [Series {
        name: "model".into(),
        points: points.iter().map(|p| (p.recall, p.precision)).collect(),
    }];
    std::fs::write(
        run.output("occlusion_pr.svg"),
        svg_curve("Occlusion precision/recall", "recall", "precision", 1.0, &pr),
    )?;
    for p in &points {
        println!(
            "alpha {}: precision {:.4}, recall {:.4}, mean error {:.4}",
            p.alpha, p.precision, p.recall, p.localization.mean_error
        );
    }
    Ok(())
}

fn cmd_synth(run: &mut Run, train: usize, test: usize, negatives: usize) -> Result<()> {
    let planted = PlantedConfig {
        seed: run.config.seed.unwrap_or(0),
        ..PlantedConfig::default()
    };
    let gen = PlantedGenerator::new(planted)?;
    let ds = gen.write_dataset(&run.out, train, test, negatives)?;
    run.outputs.extend([ds.train, ds.test, ds.references, ds.config]);
    println!(
        "wrote {train} training and {test} test faces and {negatives} negatives under {}",
        run.out.display()
    );
    Ok(())
}
