pub mod detect;
pub mod eval;
pub mod gradcheck;
pub mod segment;
pub mod synth;
pub mod train;

use std::path::Path;

use unet_cd::changedet::ThresholdSchedule;
use unet_cd::synthdata::{load_png, normalize, RgbImage};
use unet_cd::trainer::{load_checkpoint, Checkpoint};
use unet_cd::unet::{UNetModel, LEVELS};
use unet_cd::Tensor;

use crate::error::{CliError, CliResult};

pub(crate) fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub(crate) fn open_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    require_file(path, "checkpoint")?;
    load_checkpoint(path).map_err(|e| CliError::at(path, e))
}

pub(crate) fn open_png(path: &Path) -> CliResult<RgbImage> {
    require_file(path, "image")?;
    load_png(path).map_err(|e| CliError::at(path, e))
}

/// Normalizes `image` with the model's statistics after checking its size.
pub(crate) fn model_input(model: &UNetModel, image: &RgbImage, path: &Path) -> CliResult<Tensor> {
    let s = model.config.input_size;
    if image.width() != s || image.height() != s {
        return Err(CliError::Validation(format!(
            "{} is {}x{}, the model takes {s}x{s}",
            path.display(),
            image.width(),
            image.height()
        )));
    }
    Ok(normalize(image, &model.norm)?)
}

pub(crate) fn schedule(thresholds: &[f32]) -> CliResult<ThresholdSchedule> {
    let thetas: [f32; LEVELS] = thresholds
        .try_into()
        .map_err(|_| CliError::Usage(format!("expected {LEVELS} thresholds, got {}", thresholds.len())))?;
    ThresholdSchedule::new(thetas).map_err(|e| CliError::Usage(e.to_string()))
}

pub(crate) fn check_epsilon(epsilon: f32) -> CliResult<()> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("epsilon {epsilon} must be finite and non-negative")))
    }
}
