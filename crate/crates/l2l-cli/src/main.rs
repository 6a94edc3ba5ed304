//! `l2l` — command-line front-end binding the leaf pipeline stages into
//! reproducible runs. Every command loads the layered configuration
//! (defaults < TOML file < `L2L_` env vars < flags), executes one stage and
//! writes a JSON run manifest listing every file it read and emitted with
//! content hashes. Progress goes to stderr (plain or `--json-logs`); output
//! files never contain timestamps, so equal (inputs, config, seed) runs are
//! byte-identical.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use l2l_core::checkpoint::Checkpoint;
use l2l_core::config::{load_config, PipelineConfig};
use l2l_core::error::{Error, Result};
use l2l_core::manifest::RunManifest;
use l2l_core::raster::SkeletonMask;
use l2l_core::resvae::LatentPrior;
use l2l_core::{anomaly, components, dataset, pix2pix, raster, resvae, roc_plot, toy, workflow};

#[derive(Parser)]
#[command(
    name = "l2l",
    version,
    about = "Synthetic leaf pipeline: skeleton generation, colorization, evaluation"
)]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override (highest precedence); stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Emit line-delimited JSON progress logs on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural paired dataset (or raw acquisition layout).
    Toydata {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of leaves.
        #[arg(long, default_value_t = 64)]
        n: usize,
        /// Square image size (overrides the dataset.size config value).
        #[arg(long)]
        size: Option<usize>,
        /// Write per-wavelength grayscale planes and probe annotations (the
        /// acquisition layout `preprocess` consumes) instead of ready pairs.
        #[arg(long)]
        raw: bool,
    },
    /// Run the preprocessing chain over an acquisition directory.
    Preprocess {
        /// Acquisition directory: one subdirectory per leaf.
        #[arg(long)]
        input: PathBuf,
        /// Output paired-dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the skeleton variational autoencoder on a paired dataset.
    TrainResvae {
        /// Paired dataset directory (from preprocess/toydata).
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the latent sampling prior of a trained skeleton model.
    FitPrior {
        /// Paired dataset directory the model was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Trained skeleton-model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output prior JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the skeleton-to-leaf translator on a paired dataset.
    TrainPix2pix {
        /// Paired dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic leaves: sample skeletons, then colorize.
    Generate {
        /// Number of leaves to generate.
        #[arg(long)]
        n: usize,
        /// Skeleton-model checkpoint.
        #[arg(long)]
        vae: PathBuf,
        /// Latent prior JSON file.
        #[arg(long)]
        prior: PathBuf,
        /// Translator checkpoint.
        #[arg(long)]
        translator: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Reduce each sampled skeleton to its largest component before
        /// colorization.
        #[arg(long)]
        refine: bool,
        /// Additionally clean the colorized leaves: keep the largest
        /// above-background region and blank the rest.
        #[arg(long)]
        refine_colorized: bool,
    },
    /// Keep the largest connected component of a binary mask image.
    Refine {
        /// Input mask PNG.
        #[arg(long)]
        input: PathBuf,
        /// Output mask PNG.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score how well a translator reproduces a known skeleton/leaf pair.
    ConsistencyCheck {
        /// Translator checkpoint.
        #[arg(long)]
        translator: PathBuf,
        /// Skeleton mask PNG.
        #[arg(long)]
        skeleton: PathBuf,
        /// Reference leaf PNG.
        #[arg(long)]
        target: PathBuf,
        /// Output report JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score real vs generated leaves with a reconstruction autoencoder.
    Evaluate {
        /// Paired dataset directory of real leaves.
        #[arg(long)]
        real: PathBuf,
        /// Directory of generated leaves (`*_leaf.png`).
        #[arg(long)]
        synthetic: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Reuse a trained autoencoder instead of training one on the real
        /// set.
        #[arg(long)]
        ae_checkpoint: Option<PathBuf>,
    },
    /// Render the ROC curve of a scores CSV as a PNG.
    RocPlot {
        /// Scores CSV (`source_id,label,score`).
        #[arg(long)]
        scores: PathBuf,
        /// Output PNG file.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Stderr progress logger. Wall times appear only here, never in output
/// files, so artifacts stay reproducible.
struct Log {
    json: bool,
    start: Instant,
}

impl Log {
    fn new(json: bool) -> Self {
        Log {
            json,
            start: Instant::now(),
        }
    }

    fn event(&self, kind: &str, fields: &[(&str, serde_json::Value)]) {
        let wall = self.start.elapsed().as_secs_f64();
        if self.json {
            let mut obj = serde_json::Map::new();
            obj.insert("event".into(), kind.into());
            obj.insert("wall_time".into(), wall.into());
            for (k, v) in fields {
                obj.insert((*k).into(), v.clone());
            }
            eprintln!("{}", serde_json::Value::Object(obj));
        } else {
            let rest: Vec<String> = fields.iter().map(|(k, v)| format!("{k}={v}")).collect();
            eprintln!("[{wall:8.2}s] {kind} {}", rest.join(" "));
        }
    }
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are not failures; bad usage exits 2.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let log = Log::new(cli.json_logs);
    match run(cli, &log) {
        Ok(()) => 0,
        Err(err) => {
            let category = err.category();
            if log.json {
                log.event(
                    "error",
                    &[("category", category.into()), ("message", err.to_string().into())],
                );
            } else {
                eprintln!("error [{category}]: {err}");
            }
            match category {
                "config" => 3,
                "usage" => 2,
                _ => 1,
            }
        }
    }
}

fn run(cli: Cli, log: &Log) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.derive_stage_seeds();
        cfg.validate()?;
    }
    match cli.command {
        Command::Toydata { out, n, size, raw } => cmd_toydata(&cfg, log, &out, n, size, raw),
        Command::Preprocess { input, out } => cmd_preprocess(&cfg, log, &input, &out),
        Command::TrainResvae { data, out } => cmd_train_resvae(&cfg, log, &data, &out),
        Command::FitPrior {
            data,
            checkpoint,
            out,
        } => cmd_fit_prior(&cfg, log, &data, &checkpoint, &out),
        Command::TrainPix2pix { data, out } => cmd_train_pix2pix(&cfg, log, &data, &out),
        Command::Generate {
            n,
            vae,
            prior,
            translator,
            out,
            refine,
            refine_colorized,
        } => cmd_generate(&cfg, log, n, &vae, &prior, &translator, &out, refine, refine_colorized),
        Command::Refine { input, out } => cmd_refine(&cfg, log, &input, &out),
        Command::ConsistencyCheck {
            translator,
            skeleton,
            target,
            out,
        } => cmd_consistency_check(&cfg, log, &translator, &skeleton, &target, &out),
        Command::Evaluate {
            real,
            synthetic,
            out,
            ae_checkpoint,
        } => cmd_evaluate(&cfg, log, &real, &synthetic, &out, ae_checkpoint.as_deref()),
        Command::RocPlot { scores, out } => cmd_roc_plot(&cfg, log, &scores, &out),
    }
}

fn new_manifest(command: &str, cfg: &PipelineConfig) -> RunManifest {
    let snapshot = serde_json::to_value(cfg).expect("config serializes");
    RunManifest::new(command, cfg.seed, snapshot)
}

/// Manifest location: inside directory outputs, next to file outputs.
fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join("run_manifest.json")
    } else {
        let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

fn finish(manifest: &mut RunManifest, path: &Path, log: &Log) -> Result<()> {
    manifest.save(path)?;
    // The manifest itself is the one file not listed inside itself.
    log.event(
        "done",
        &[
            ("run_id", manifest.run_id.clone().into()),
            ("artifacts", manifest.artifacts.len().into()),
            ("manifest", path.display().to_string().into()),
        ],
    );
    Ok(())
}

/// Recursively list files under `dir`, sorted for deterministic hashing.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_toydata(
    cfg: &PipelineConfig,
    log: &Log,
    out: &Path,
    n: usize,
    size: Option<usize>,
    raw: bool,
) -> Result<()> {
    let size = size.unwrap_or(cfg.dataset.size);
    let seed = cfg.dataset.seed;
    let mut manifest = new_manifest("toydata", cfg);
    manifest.add_note("n", n);
    manifest.add_note("size", size);
    manifest.add_note("raw", raw);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if raw {
        toy::write_toy_input_dir(out, n, size, seed)?;
        for f in files_under(out)? {
            manifest.add_artifact(&f)?;
        }
    } else {
        let samples = toy::generate_toy_dataset(n, size, seed, cfg.dataset.mode)?;
        let records = samples
            .iter()
            .map(|s| dataset::SampleRecord {
                id: s.skeleton.source_id.clone(),
                source_id: s.skeleton.source_id.clone(),
                augment: None,
            })
            .collect();
        let ds_manifest = dataset::DatasetManifest {
            mode: cfg.dataset.mode,
            size,
            seed,
            augment_factor: 1,
            hot_pixel_k: cfg.dataset.hot_pixel_k,
            samples: records,
        };
        for f in dataset::save_pairs(out, &samples, &ds_manifest)? {
            manifest.add_artifact(&f)?;
        }
    }
    log.event("toydata", &[("n", n.into()), ("size", size.into())]);
    finish(&mut manifest, &manifest_path(out, true), log)
}

fn cmd_preprocess(cfg: &PipelineConfig, log: &Log, input: &Path, out: &Path) -> Result<()> {
    let mut manifest = new_manifest("preprocess", cfg);
    for f in files_under(input)? {
        manifest.add_input(&f)?;
    }
    let (samples, ds_manifest) = dataset::build_dataset(
        input,
        cfg.dataset.mode,
        cfg.dataset.augment_factor,
        cfg.dataset.size,
        cfg.dataset.seed,
        cfg.dataset.hot_pixel_k,
    )?;
    log.event(
        "preprocessed",
        &[
            ("samples", samples.len().into()),
            ("augment_factor", cfg.dataset.augment_factor.into()),
        ],
    );
    for f in dataset::save_pairs(out, &samples, &ds_manifest)? {
        manifest.add_artifact(&f)?;
    }
    manifest.add_note("samples", samples.len());
    finish(&mut manifest, &manifest_path(out, true), log)
}

fn load_training_pairs(
    data: &Path,
    manifest: &mut RunManifest,
) -> Result<(Vec<l2l_core::raster::PairedSample>, dataset::DatasetManifest)> {
    for f in files_under(data)? {
        manifest.add_input(&f)?;
    }
    let (samples, ds_manifest) = dataset::load_pairs(data)?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((samples, ds_manifest))
}

fn cmd_train_resvae(cfg: &PipelineConfig, log: &Log, data: &Path, out: &Path) -> Result<()> {
    let mut manifest = new_manifest("train-resvae", cfg);
    let (samples, ds_manifest) = load_training_pairs(data, &mut manifest)?;
    let mut vae_cfg = cfg.vae.clone();
    vae_cfg.image_size = ds_manifest.size;
    let skeletons: Vec<SkeletonMask> = samples.into_iter().map(|s| s.skeleton).collect();
    log.event(
        "train_start",
        &[("model", "resvae".into()), ("samples", skeletons.len().into())],
    );
    let every = (vae_cfg.epochs / 20).max(1);
    let ckpt = resvae::train_resvae(&skeletons, &vae_cfg, |r| {
        if r.epoch % every == 0 || r.epoch + 1 == vae_cfg.epochs {
            log.event(
                "epoch",
                &[
                    ("epoch", r.epoch.into()),
                    ("total_loss", r.total_loss.into()),
                    ("recon_loss", r.recon_loss.into()),
                    ("kl_loss", r.kl_loss.into()),
                ],
            );
        }
    })?;
    ckpt.save(out)?;
    manifest.add_artifact(out)?;
    manifest.add_note("epochs", vae_cfg.epochs);
    finish(&mut manifest, &manifest_path(out, false), log)
}

fn cmd_fit_prior(
    cfg: &PipelineConfig,
    log: &Log,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
) -> Result<()> {
    let mut manifest = new_manifest("fit-prior", cfg);
    let (samples, _) = load_training_pairs(data, &mut manifest)?;
    manifest.add_checkpoint(checkpoint)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut vae = resvae::ResVae::from_checkpoint(&ckpt)?;
    let skeletons: Vec<SkeletonMask> = samples.into_iter().map(|s| s.skeleton).collect();
    let prior = resvae::fit_latent_prior(&mut vae, &skeletons)?;
    let json = serde_json::to_string_pretty(&prior).expect("prior serializes");
    std::fs::write(out, json).map_err(|e| Error::io(out, e))?;
    manifest.add_artifact(out)?;
    log.event("prior_fitted", &[("dim", prior.mean.len().into())]);
    finish(&mut manifest, &manifest_path(out, false), log)
}

fn cmd_train_pix2pix(cfg: &PipelineConfig, log: &Log, data: &Path, out: &Path) -> Result<()> {
    let mut manifest = new_manifest("train-pix2pix", cfg);
    let (samples, ds_manifest) = load_training_pairs(data, &mut manifest)?;
    let mut t_cfg = cfg.translator.clone();
    t_cfg.image_size = ds_manifest.size;
    t_cfg.mode = ds_manifest.mode;
    log.event(
        "train_start",
        &[("model", "pix2pix".into()), ("samples", samples.len().into())],
    );
    let every = (t_cfg.steps / 20).max(1);
    let ckpt = pix2pix::train_pix2pix(&samples, &t_cfg, |r| {
        if r.step % every == 0 || r.step + 1 == t_cfg.steps {
            log.event(
                "step",
                &[
                    ("step", r.step.into()),
                    ("d_loss", r.d_loss.into()),
                    ("g_adv_loss", r.g_adv_loss.into()),
                    ("g_l1_loss", r.g_l1_loss.into()),
                ],
            );
        }
    })?;
    ckpt.save(out)?;
    manifest.add_artifact(out)?;
    manifest.add_note("steps", t_cfg.steps);
    finish(&mut manifest, &manifest_path(out, false), log)
}

#[allow(clippy::too_many_arguments)]
fn cmd_generate(
    cfg: &PipelineConfig,
    log: &Log,
    n: usize,
    vae: &Path,
    prior_path: &Path,
    translator: &Path,
    out: &Path,
    refine: bool,
    refine_colorized: bool,
) -> Result<()> {
    let mut manifest = new_manifest("generate", cfg);
    manifest.add_checkpoint(vae)?;
    manifest.add_checkpoint(translator)?;
    manifest.add_input(prior_path)?;
    let vae_ckpt = Checkpoint::load(vae)?;
    let p2p_ckpt = Checkpoint::load(translator)?;
    let prior_text = std::fs::read_to_string(prior_path).map_err(|e| Error::io(prior_path, e))?;
    let prior: LatentPrior = serde_json::from_str(&prior_text).map_err(|e| Error::Config {
        key: prior_path.display().to_string(),
        message: format!("prior parse error: {e}"),
    })?;

    let mut leaves = workflow::generate_leaves(n, &vae_ckpt, &prior, &p2p_ckpt, cfg.seed, refine)?;
    if refine_colorized {
        for leaf in &mut leaves {
            *leaf = workflow::refine_colorized(leaf)?;
        }
    }
    log.event(
        "generated",
        &[("n", n.into()), ("refine", refine.into()), ("refine_colorized", refine_colorized.into())],
    );

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    #[derive(serde::Serialize)]
    struct LeafRecord<'a> {
        index: usize,
        source_id: &'a str,
        seed: u64,
        refined: bool,
        latent: &'a [f32],
    }
    let mut records = Vec::new();
    for (i, leaf) in leaves.iter().enumerate() {
        let skel_path = out.join(format!("{i:04}_skel.png"));
        raster::save_mask(&leaf.skeleton, &skel_path)?;
        let leaf_path = out.join(format!("{i:04}_leaf.png"));
        raster::save_spectral_image(&leaf.image, &leaf_path)?;
        manifest.add_artifact(&skel_path)?;
        manifest.add_artifact(&leaf_path)?;
        records.push(LeafRecord {
            index: i,
            source_id: &leaf.skeleton.source_id,
            seed: leaf.seed,
            refined: leaf.refined,
            latent: &leaf.latent,
        });
    }
    let meta_path = out.join("leaves.json");
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    manifest.add_artifact(&meta_path)?;
    manifest.add_note("n", n);
    finish(&mut manifest, &manifest_path(out, true), log)
}

fn cmd_refine(cfg: &PipelineConfig, log: &Log, input: &Path, out: &Path) -> Result<()> {
    let mut manifest = new_manifest("refine", cfg);
    manifest.add_input(input)?;
    let mask = raster::load_mask(input)?;
    let before = mask.foreground_count();
    let refined = SkeletonMask::new(components::refine(&mask.pixels)?, mask.source_id.clone());
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    raster::save_mask(&refined, out)?;
    manifest.add_artifact(out)?;
    manifest.add_note("pixels_before", before);
    manifest.add_note("pixels_after", refined.foreground_count());
    log.event(
        "refined",
        &[("before", before.into()), ("after", refined.foreground_count().into())],
    );
    finish(&mut manifest, &manifest_path(out, false), log)
}

fn cmd_consistency_check(
    cfg: &PipelineConfig,
    log: &Log,
    translator: &Path,
    skeleton: &Path,
    target: &Path,
    out: &Path,
) -> Result<()> {
    let mut manifest = new_manifest("consistency-check", cfg);
    manifest.add_checkpoint(translator)?;
    manifest.add_input(skeleton)?;
    manifest.add_input(target)?;
    let ckpt = Checkpoint::load(translator)?;
    let p2p = pix2pix::Pix2Pix::from_checkpoint(&ckpt)?;
    let mode = p2p.config.mode;
    let mask = raster::load_mask(skeleton)?;
    let image = raster::load_spectral_image(target, &mode.channels())?;
    let sample = l2l_core::raster::PairedSample::new(mask, image, mode)?;
    let score = workflow::consistency_check(&ckpt, &sample)?;
    let report = serde_json::json!({
        "skeleton": skeleton.display().to_string(),
        "target": target.display().to_string(),
        "mean_absolute_error": score,
    });
    std::fs::write(out, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| Error::io(out, e))?;
    manifest.add_artifact(out)?;
    manifest.add_note("mean_absolute_error", score);
    log.event("consistency", &[("mean_absolute_error", score.into())]);
    println!("mean_absolute_error={score}");
    finish(&mut manifest, &manifest_path(out, false), log)
}

fn cmd_evaluate(
    cfg: &PipelineConfig,
    log: &Log,
    real_dir: &Path,
    synthetic_dir: &Path,
    out: &Path,
    ae_checkpoint: Option<&Path>,
) -> Result<()> {
    let mut manifest = new_manifest("evaluate", cfg);
    let (real_samples, ds_manifest) = load_training_pairs(real_dir, &mut manifest)?;
    let real: Vec<_> = real_samples.into_iter().map(|s| s.target).collect();

    // Generated leaves: every `*_leaf.png` in the directory, sorted by name.
    let mut synthetic = Vec::new();
    let labels = ds_manifest.mode.channels();
    for f in files_under(synthetic_dir)? {
        let name = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if name.ends_with("_leaf.png") {
            manifest.add_input(&f)?;
            synthetic.push(raster::load_spectral_image(&f, &labels)?);
        }
    }
    if synthetic.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no *_leaf.png files in {}",
            synthetic_dir.display()
        )));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut ae = match ae_checkpoint {
        Some(path) => {
            manifest.add_checkpoint(path)?;
            anomaly::AnomalyAe::from_checkpoint(&Checkpoint::load(path)?)?
        }
        None => {
            let mut ae_cfg = cfg.eval.clone();
            ae_cfg.image_size = ds_manifest.size;
            log.event(
                "train_start",
                &[("model", "anomaly_ae".into()), ("samples", real.len().into())],
            );
            let every = (ae_cfg.epochs / 10).max(1);
            let ckpt = anomaly::train_anomaly_ae(&real, &ae_cfg, |r| {
                if r.epoch % every == 0 || r.epoch + 1 == ae_cfg.epochs {
                    log.event("epoch", &[("epoch", r.epoch.into()), ("loss", r.loss.into())]);
                }
            })?;
            let ckpt_path = out.join("ae.ckpt");
            ckpt.save(&ckpt_path)?;
            manifest.add_artifact(&ckpt_path)?;
            anomaly::AnomalyAe::from_checkpoint(&ckpt)?
        }
    };

    let report = anomaly::evaluate_synthetic_set(&mut ae, &real, &synthetic)?;
    let curve = anomaly::roc_curve(&report.scores)?;

    let scores_path = out.join("scores.csv");
    std::fs::write(&scores_path, anomaly::scores_to_csv(&report.scores))
        .map_err(|e| Error::io(&scores_path, e))?;
    let roc_csv_path = out.join("roc.csv");
    std::fs::write(&roc_csv_path, roc_plot::roc_to_csv(&curve))
        .map_err(|e| Error::io(&roc_csv_path, e))?;
    let roc_png_path = out.join("roc.png");
    roc_plot::render_roc_plot(&curve, report.auc, &roc_png_path)?;
    let report_path = out.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| Error::io(&report_path, e))?;
    for p in [&scores_path, &roc_csv_path, &roc_png_path, &report_path] {
        manifest.add_artifact(p)?;
    }
    manifest.add_note("auc", report.auc);
    manifest.add_note("real_count", report.real_count);
    manifest.add_note("synthetic_count", report.synthetic_count);
    log.event(
        "evaluated",
        &[("auc", report.auc.into()), ("detection_rate", report.detection_rate.into())],
    );
    finish(&mut manifest, &manifest_path(out, true), log)
}

fn cmd_roc_plot(cfg: &PipelineConfig, log: &Log, scores_path: &Path, out: &Path) -> Result<()> {
    let mut manifest = new_manifest("roc-plot", cfg);
    manifest.add_input(scores_path)?;
    let text = std::fs::read_to_string(scores_path).map_err(|e| Error::io(scores_path, e))?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "source_id,label,score" {
                return Err(Error::InvalidArgument(format!(
                    "unexpected scores header: {line}"
                )));
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::InvalidArgument(format!("bad scores row {}: {line}", i + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let synthetic = match parts[1] {
            "synthetic" => true,
            "real" => false,
            _ => return Err(bad()),
        };
        let value: f32 = parts[2].parse().map_err(|_| bad())?;
        scores.push(anomaly::AnomalyScore {
            source_id: parts[0].to_string(),
            value,
            synthetic,
        });
    }
    let curve = anomaly::roc_curve(&scores)?;
    let area = anomaly::auc(&curve);
    roc_plot::render_roc_plot(&curve, area, out)?;
    manifest.add_artifact(out)?;
    manifest.add_note("auc", area);
    log.event("roc_plot", &[("auc", area.into()), ("points", curve.points.len().into())]);
    finish(&mut manifest, &manifest_path(out, false), log)
}
