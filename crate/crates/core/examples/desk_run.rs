//! Desk-scale training run: synthetic 10 x 500 corpus at 64px, validation
//! after every epoch.
//!
//! usage: desk_run [epochs] [lr_decay_from|-] [label_smoothing] [seed] [base_channels] [lr]
//!
//! The seed drives the corpus, the training and the validation.

use std::time::Instant;

use porogen::cgan::NetworkConfig;
use porogen::checkpoint::Checkpoint;
use porogen::corpus::{build_corpus, default_blur_radius, BuildOptions, CorpusSource, SyntheticSpec};
use porogen::evaluation::{validate, ValidationOptions};
use porogen::training::{continue_training, TrainingConfig, TrainingSet};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let epochs: u64 = arg(0, "24").parse()?;
    let decay = arg(1, "12");
    let lr_decay_from = if decay == "-" { None } else { Some(decay.parse()?) };
    let label_smoothing: f64 = arg(2, "0").parse()?;
    let seed: u64 = arg(3, "7").parse()?;
    let base_channels: usize = arg(4, "16").parse()?;
    let learning_rate: f64 = arg(5, "2e-4").parse()?;

    let t = Instant::now();
    let spec = SyntheticSpec {
        classes: 10,
        per_class: 500,
        tile_size: 64,
        blur_radius: default_blur_radius(64),
    };
    let corpus = build_corpus(
        &CorpusSource::Synthetic(spec),
        &BuildOptions {
            seed,
            ..BuildOptions::new(64)
        },
    )?;
    let data = TrainingSet::from_corpus(&corpus);
    eprintln!("corpus {} tiles in {:.1}s", data.len(), t.elapsed().as_secs_f64());

    let net = NetworkConfig {
        image_size: 64,
        base_channels,
        ..Default::default()
    };
    let schedule = TrainingConfig {
        epochs,
        seed,
        lr_decay_from,
        label_smoothing,
        learning_rate,
        ..Default::default()
    };
    let mut ckpt = Checkpoint::init(&net, &data.binning, seed)?;
    for e in 1..=epochs {
        // one epoch at a time so every epoch can be validated
        let cfg = TrainingConfig {
            epochs: 1,
            learning_rate: schedule.learning_rate_at(e, epochs),
            lr_decay_from: None,
            ..schedule
        };
        let (c, rep) = continue_training(ckpt, &data, &cfg, None)?;
        ckpt = c;
        let r = &rep[0];
        let v = validate(
            &ckpt,
            &ValidationOptions {
                n_per_class: 100,
                seed,
                ..Default::default()
            },
        )?;
        let means: Vec<String> = v
            .per_class_mean_porosity
            .iter()
            .map(|m| format!("{m:.3}"))
            .collect();
        eprintln!(
            "ep {:2} lr {:.2e} D {:.3} G {:.3} {:5.1}s | acc {:.3} rho {:?} means {}",
            r.epoch,
            r.learning_rate,
            r.d_loss,
            r.g_loss,
            r.seconds,
            v.overall_accuracy,
            v.class_porosity_spearman,
            means.join(" ")
        );
    }
    Ok(())
}
