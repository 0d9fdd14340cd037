use std::path::{Path, PathBuf};

use serde_json::json;

use unet_cd::synthdata::{compute_stats, load_png, read_manifest, tile, tile_mask, ClassMask, LabeledImage};
use unet_cd::trainer::{save_checkpoint, train, Dataset, TrainConfig};
use unet_cd::unet::{UNetConfig, UNetModel};

use super::synth::MANIFEST;
use crate::args::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, to_value, write_json, RunManifest};

/// Scene records (those without a pair id) of `data/manifest.tsv`, cut into
/// `size`-pixel tiles.
pub fn load_scenes(data: &Path, size: usize, limit: Option<usize>) -> CliResult<(Vec<LabeledImage>, Vec<PathBuf>)> {
    if !data.is_dir() {
        return Err(CliError::Usage(format!("data directory {} does not exist", data.display())));
    }
    let manifest = data.join(MANIFEST);
    if !manifest.is_file() {
        return Err(CliError::Usage(format!("{} has no {MANIFEST}", data.display())));
    }
    let records = read_manifest(&manifest).map_err(|e| CliError::at(&manifest, e))?;
    let mut scenes = Vec::new();
    let mut inputs = vec![manifest];
    for r in records.iter().filter(|r| r.pair_id.is_none()).take(limit.unwrap_or(usize::MAX)) {
        let image = load_png(&r.image).map_err(|e| CliError::at(&r.image, e))?;
        let mask_rgb = load_png(&r.mask).map_err(|e| CliError::at(&r.mask, e))?;
        let mask = ClassMask::from_rgb(&mask_rgb).map_err(|e| CliError::at(&r.mask, e))?;
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(CliError::Validation(format!("{}: mask size differs from image", r.mask.display())));
        }
        if image.width() < size || image.height() < size {
            return Err(CliError::Validation(format!(
                "{} is {}x{}, smaller than the {size}-pixel input",
                r.image.display(),
                image.width(),
                image.height()
            )));
        }
        for (image, mask) in tile(&image, size, size)?.into_iter().zip(tile_mask(&mask, size, size)?) {
            scenes.push(LabeledImage { image, mask });
        }
        inputs.push(r.image.clone());
    }
    if scenes.is_empty() {
        return Err(CliError::Usage(format!("{} lists no scenes", data.display())));
    }
    Ok((scenes, inputs))
}

fn validate(args: &TrainArgs) -> CliResult<()> {
    if args.epochs == 0 || args.batch == 0 {
        return Err(CliError::Usage("--epochs and --batch must be positive".into()));
    }
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(CliError::Usage(format!("--lr {} must be positive", args.lr)));
    }
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::Usage(format!("--holdout {} is outside [0, 1)", args.holdout)));
    }
    Ok(())
}

pub fn run(args: &TrainArgs) -> CliResult<RunManifest> {
    validate(args)?;
    let model_config = UNetConfig::new(args.input_size, args.base_channels);
    model_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (scenes, inputs) = load_scenes(&args.data, args.input_size, args.limit)?;

    // The last scenes form the holdout; generated scenes are independent draws.
    let held = ((scenes.len() as f64 * args.holdout).round() as usize).min(scenes.len() - 1);
    let (train_set, holdout_set) = scenes.split_at(scenes.len() - held);
    let stats = compute_stats(train_set.iter().map(|s| &s.image))?;
    let data = Dataset::from_labeled(train_set, &stats)?;
    let holdout = Dataset::from_labeled(holdout_set, &stats)?;

    let config = TrainConfig {
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let mut model = UNetModel::init(model_config.clone(), args.seed)?;
    model.norm = stats.clone();
    println!(
        "training on {} images ({} held out), {} parameters",
        data.len(),
        holdout.len(),
        model.parameter_count()
    );
    let outcome = train(&mut model, &data, &holdout, &config, |r| match r.holdout_accuracy {
        Some(acc) => println!("epoch {:>3}  loss {:.5}  holdout accuracy {:.4}", r.epoch, r.train_loss, acc),
        None => println!("epoch {:>3}  loss {:.5}", r.epoch, r.train_loss),
    })?;

    let best_path = sibling(&args.out, "best.uncd");
    let history_path = sibling(&args.out, "history.json");
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&model, &outcome.history, &args.out).map_err(|e| CliError::at(&args.out, e))?;
    let (best_epoch, best) = match &outcome.best {
        Some((epoch, m)) => (*epoch, m),
        None => (args.epochs, &model),
    };
    let best_history = &outcome.history[..best_epoch];
    save_checkpoint(best, best_history, &best_path).map_err(|e| CliError::at(&best_path, e))?;
    write_json(&history_path, &outcome.history)?;
    println!("best holdout epoch {best_epoch}; wrote {} and {}", args.out.display(), best_path.display());

    let mut run = RunManifest::new("train", args, Some(args.seed))?;
    run.resolved = json!({
        "model": to_value(&model_config)?,
        "optimizer": to_value(&config)?,
        "normalization": to_value(&stats)?,
        "train_images": data.len(),
        "holdout_images": holdout.len(),
        "best_epoch": best_epoch,
    });
    run.inputs = inputs;
    run.outputs = vec![args.out.clone(), best_path, history_path];
    run.write(&sibling(&args.out, "run.json"))?;
    Ok(run)
}
