use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use porogen::cgan::{ConditionLabel, LatentVector};
use porogen::checkpoint::Checkpoint;
use porogen::corpus::{
    build_corpus, default_blur_radius, load_source_dir, BalanceOptions, BuildOptions, Corpus, CorpusSource,
    SyntheticSpec,
};
use porogen::evaluation::{emit_scatter, latent_seed, validate, ValidationOptions};
use porogen::segmentation::{measure_porosity, ColorImage, Porosity};
use porogen::training::{continue_training, train, TrainingOutput, TrainingSet};
use porogen::welllog::{load_log, synthesize_track, write_track, TrackOptions, MANIFEST_FILE};
use porogen::Error;
use serde_json::{json, Value};

use crate::config::{self, PipelineConfig};
use crate::{Cli, Command, CorpusArgs};

/// Exit code for an error that reached `main`.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

pub fn run(cli: Cli) -> Result<()> {
    let loaded = config::load(cli.config.as_deref())?;
    let mut cfg = loaded.config.clone();
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let t = &cli.thresholds;
    let seg = &mut cfg.segmentation;
    for (slot, flag) in [
        (&mut seg.hue_lo, t.hue_lo),
        (&mut seg.hue_hi, t.hue_hi),
        (&mut seg.sat_min, t.sat_min),
        (&mut seg.val_min, t.val_min),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    apply_command_flags(&cli.command, &mut cfg);
    cfg.validate()?;

    if cli.dry_run {
        let resolved = json!({ "command": command_name(&cli.command), "config": cfg });
        println!("{}", serde_json::to_string_pretty(&resolved)?);
        return Ok(());
    }
    if let Some(w) = cfg.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("configuring the worker pool")?;
    }

    let summary = match &cli.command {
        Command::Ingest(a) => ingest(&cfg, &a.src, &a.out)?,
        Command::SynthCorpus(a) => synth_corpus(&cfg, &a.out)?,
        Command::Train(a) => {
            // Unless given explicitly, image size and class count follow the corpus.
            let follow = Follow {
                image_size: a.image_size.is_none() && !loaded.file_sets("network.image_size"),
                classes: a.classes.is_none() && !loaded.file_sets("network.num_classes"),
            };
            train_cmd(&cfg, a, follow)?
        }
        Command::Generate(a) => generate(&cfg, a)?,
        Command::Validate(a) => validate_cmd(&cfg, &a.ckpt, &a.out)?,
        Command::Logsynth(a) => logsynth(&cfg, a)?,
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    }
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::SynthCorpus(_) => "synth-corpus",
        Command::Train(_) => "train",
        Command::Generate(_) => "generate",
        Command::Validate(_) => "validate",
        Command::Logsynth(_) => "logsynth",
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_corpus_flags(a: &CorpusArgs, cfg: &mut PipelineConfig) {
    let c = &mut cfg.corpus;
    set(&mut c.seed, a.seed);
    if a.target_per_class.is_some() {
        c.target_per_class = a.target_per_class;
    }
    c.downsample |= a.downsample;
    if a.no_balance {
        c.balance = false;
    }
    set(&mut c.holdout_fraction, a.holdout_fraction);
    if a.no_clamp {
        cfg.binning.clamp = false;
    }
}

fn apply_command_flags(cmd: &Command, cfg: &mut PipelineConfig) {
    match cmd {
        Command::Ingest(a) => {
            set(&mut cfg.corpus.tile, a.tile);
            if a.stride.is_some() {
                cfg.corpus.stride = a.stride;
            }
            apply_corpus_flags(&a.corpus, cfg);
        }
        Command::SynthCorpus(a) => {
            set(&mut cfg.binning.classes, a.classes);
            set(&mut cfg.corpus.per_class, a.per_class);
            set(&mut cfg.corpus.tile, a.size);
            if a.blur_radius.is_some() {
                cfg.corpus.blur_radius = a.blur_radius;
            }
            apply_corpus_flags(&a.corpus, cfg);
        }
        Command::Train(a) => {
            let n = &mut cfg.network;
            set(&mut n.image_size, a.image_size);
            set(&mut n.num_classes, a.classes);
            set(&mut n.base_channels, a.base_channels);
            set(&mut n.latent_dim, a.latent_dim);
            let t = &mut cfg.training;
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch_size, a.batch);
            set(&mut t.learning_rate, a.lr);
            set(&mut t.seed, a.seed);
            set(&mut t.checkpoint_every, a.checkpoint_every);
            if a.lr_decay_from.is_some() {
                t.lr_decay_from = a.lr_decay_from;
            }
        }
        Command::Generate(a) => {
            set(&mut cfg.generate.n, a.n);
            set(&mut cfg.generate.seed, a.seed);
        }
        Command::Validate(a) => {
            let e = &mut cfg.evaluation;
            set(&mut e.per_class, a.per_class);
            set(&mut e.margin, a.margin);
            set(&mut e.margin_mode, a.margin_mode.map(Into::into));
            set(&mut e.seed, a.seed);
            e.allow_untrained |= a.allow_untrained;
        }
        Command::Logsynth(a) => {
            set(&mut cfg.welllog.seed, a.seed);
            set(&mut cfg.welllog.k_per_depth, a.k_per_depth);
        }
    }
}

fn build_options(cfg: &PipelineConfig) -> Result<BuildOptions> {
    let c = &cfg.corpus;
    Ok(BuildOptions {
        binning: cfg.binning.build()?,
        tile_size: c.tile,
        stride: c.stride.unwrap_or(c.tile),
        thresholds: cfg.segmentation,
        balance: c.balance.then_some(BalanceOptions {
            target_per_class: c.target_per_class,
            downsample: c.downsample,
        }),
        holdout_fraction: c.holdout_fraction,
        seed: c.seed,
    })
}

fn corpus_summary(corpus: &Corpus, out: &Path) -> Result<Value> {
    let manifest = corpus.write(out)?;
    let counts = corpus.class_counts();
    eprintln!(
        "wrote {} tiles ({}px) to {}; per class {:?}",
        corpus.tiles.len(),
        corpus.tile_size,
        out.display(),
        counts
    );
    Ok(json!({
        "out": out,
        "tiles": corpus.tiles.len(),
        "tile_size": corpus.tile_size,
        "class_counts": counts,
        "manifest_digest": manifest.digest(),
    }))
}

fn ingest(cfg: &PipelineConfig, src: &Path, out: &Path) -> Result<Value> {
    let sources = load_source_dir(src)?;
    let corpus = build_corpus(&CorpusSource::Images(sources), &build_options(cfg)?)?;
    corpus_summary(&corpus, out)
}

fn synth_corpus(cfg: &PipelineConfig, out: &Path) -> Result<Value> {
    let opts = build_options(cfg)?;
    let spec = SyntheticSpec {
        classes: opts.binning.num_classes(),
        per_class: cfg.corpus.per_class,
        tile_size: cfg.corpus.tile,
        blur_radius: cfg
            .corpus
            .blur_radius
            .unwrap_or_else(|| default_blur_radius(cfg.corpus.tile)),
    };
    let corpus = build_corpus(&CorpusSource::Synthetic(spec), &opts)?;
    corpus_summary(&corpus, out)
}

struct Follow {
    image_size: bool,
    classes: bool,
}

fn train_cmd(cfg: &PipelineConfig, a: &crate::TrainArgs, follow: Follow) -> Result<Value> {
    let data = TrainingSet::load(&a.corpus)?;
    let mut net = cfg.network;
    if follow.image_size {
        net.image_size = data.tile_size;
    }
    if follow.classes {
        net.num_classes = data.binning.num_classes();
    }
    let output = TrainingOutput { dir: a.out.clone() };
    eprintln!(
        "training on {} tiles ({} classes, {}px) for {} epochs",
        data.len(),
        data.binning.num_classes(),
        data.tile_size,
        cfg.training.epochs
    );
    let (ckpt, reports) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let c = ckpt.config();
            if c.image_size != net.image_size || c.num_classes != net.num_classes {
                return Err(Error::Config(format!(
                    "resumed checkpoint is {}px with {} classes, requested {}px with {}",
                    c.image_size, c.num_classes, net.image_size, net.num_classes
                ))
                .into());
            }
            continue_training(ckpt, &data, &cfg.training, Some(&output))?
        }
        None => train(&data, &net, &cfg.training, Some(&output))?,
    };
    let last = reports.last().expect("at least one epoch");
    Ok(json!({
        "checkpoint": output.final_path(),
        "digest": ckpt.digest(),
        "epoch": ckpt.epoch,
        "last_epoch": last,
        "log": a.out.join(TrainingOutput::LOG_FILE),
    }))
}

fn load_trained(path: &Path, allow_untrained: bool) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.epoch == 0 && !allow_untrained {
        return Err(Error::Checkpoint(format!(
            "{} is untrained (epoch 0); pass --allow-untrained to use it anyway",
            path.display()
        ))
        .into());
    }
    Ok(ckpt)
}

fn generate(cfg: &PipelineConfig, a: &crate::GenerateArgs) -> Result<Value> {
    let ckpt = load_trained(&a.ckpt, a.allow_untrained)?;
    let binning = if a.no_clamp {
        ckpt.binning.clone().with_clamp(false)
    } else {
        ckpt.binning.clone()
    };
    let class = match (a.class, a.phi) {
        (Some(c), _) => {
            binning.check_class(c)?;
            c
        }
        (None, Some(phi)) => binning.bin_for(Porosity::new(phi)?.value())?,
        (None, None) => unreachable!("clap requires --phi or --class"),
    };
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let g = &ckpt.networks.generator;
    let seeds: Vec<u64> = (0..cfg.generate.n)
        .map(|i| latent_seed(cfg.generate.seed, class, i))
        .collect();
    let zs: Vec<LatentVector> = seeds
        .iter()
        .map(|&s| LatentVector::sample(g.config().latent_dim, s))
        .collect();
    let images = g.generate(&zs, &vec![ConditionLabel(class); zs.len()])?;
    let mut records = Vec::new();
    for (i, (img, seed)) in images.iter().zip(&seeds).enumerate() {
        let img = ColorImage::from_rgb8(&img.to_color().to_rgb8());
        let path = a.out.join(format!("sample_c{class:02}_{i:04}.png"));
        img.save_png(&path)?;
        let phi = measure_porosity(&img, &cfg.segmentation)?.value();
        eprintln!("{}  porosity {phi:.4}", path.display());
        records.push(json!({ "path": path, "seed": seed, "measured_porosity": phi }));
    }
    let (lo, hi) = binning.range(class);
    Ok(json!({
        "class_index": class,
        "class_range": [lo, hi],
        "representative_porosity": binning.midpoint(class),
        "images": records,
    }))
}

fn validate_cmd(cfg: &PipelineConfig, ckpt_path: &Path, out: &Path) -> Result<Value> {
    let e = &cfg.evaluation;
    let ckpt = load_trained(ckpt_path, e.allow_untrained)?;
    let opts = ValidationOptions {
        n_per_class: e.per_class,
        seed: e.seed,
        margin: e.margin,
        margin_mode: e.margin_mode,
        thresholds: cfg.segmentation,
        allow_untrained: e.allow_untrained,
    };
    let report = validate(&ckpt, &opts)?;
    fs::create_dir_all(out).map_err(|err| Error::Io {
        path: out.to_path_buf(),
        source: err,
    })?;
    let report_path = out.join("report.json");
    fs::write(&report_path, report.to_json()).map_err(|err| Error::Io {
        path: report_path.clone(),
        source: err,
    })?;
    emit_scatter(&report, out)?;
    eprintln!(
        "overall accuracy {:.3} (margin {} {:?}); class/porosity spearman {:?}",
        report.overall_accuracy, report.margin, report.margin_mode, report.class_porosity_spearman
    );
    for (k, (acc, mean)) in report
        .per_class_accuracy
        .iter()
        .zip(&report.per_class_mean_porosity)
        .enumerate()
    {
        eprintln!("  class {k}: accuracy {acc:.3}, mean porosity {mean:.4}");
    }
    Ok(json!({
        "report": report_path,
        "overall_accuracy": report.overall_accuracy,
        "per_class_accuracy": report.per_class_accuracy,
        "per_class_mean_porosity": report.per_class_mean_porosity,
        "class_porosity_spearman": report.class_porosity_spearman,
        "config_digest": report.config_digest,
    }))
}

fn logsynth(cfg: &PipelineConfig, a: &crate::LogsynthArgs) -> Result<Value> {
    let log = load_log(&a.log)?;
    let ckpt = load_trained(&a.ckpt, a.allow_untrained)?;
    let opts = TrackOptions {
        k_per_depth: cfg.welllog.k_per_depth,
        seed: cfg.welllog.seed,
        thresholds: cfg.segmentation,
        allow_untrained: a.allow_untrained,
    };
    let track = synthesize_track(&log, &ckpt, &opts)?;
    write_track(&track, &log, &a.out)?;
    eprintln!(
        "wrote {} depths x {} images to {}",
        track.manifest.entries.len(),
        opts.k_per_depth,
        a.out.display()
    );
    Ok(json!({
        "manifest": a.out.join(MANIFEST_FILE),
        "figure": a.out.join(porogen::welllog::FIGURE_FILE),
        "entries": track.manifest.entries.len(),
    }))
}
