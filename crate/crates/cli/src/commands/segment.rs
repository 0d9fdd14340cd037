use serde_json::json;

use unet_cd::metrics::argmax_map;
use unet_cd::synthdata::{save_png, Class, ClassMask, RgbImage, NUM_CLASSES};
use unet_cd::Tensor;

use super::{model_input, open_checkpoint, open_png};
use crate::args::SegmentArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, RunManifest};

/// Each class probability, quantized to `round(255·p)`, drives the color
/// channel of that class's rendering color.
pub fn probability_image(probs: &Tensor) -> RgbImage {
    let [_, _, h, w] = probs.shape();
    let plane = h * w;
    let p = probs.sample(0);
    RgbImage::from_fn(w, h, |x, y| {
        let mut px = [0u8; 3];
        for class in Class::ALL {
            let q = (255.0 * p[class.index() * plane + y * w + x]).round().clamp(0.0, 255.0) as u8;
            for (ch, &c) in class.color().iter().enumerate() {
                if c == 255 {
                    px[ch] = q;
                }
            }
        }
        px
    })
}

/// `left` and `right` next to each other.
pub fn side_by_side(left: &RgbImage, right: &RgbImage) -> RgbImage {
    let w = left.width();
    RgbImage::from_fn(w + right.width(), left.height(), |x, y| {
        if x < w {
            left.get(x, y)
        } else {
            right.get(x - w, y)
        }
    })
}

pub fn run(args: &SegmentArgs) -> CliResult<RunManifest> {
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let image = open_png(&args.image)?;
    let x = model_input(&ckpt.model, &image, &args.image)?;
    let probs = ckpt.model.segment(&x)?;
    let [_, _, h, w] = probs.shape();
    let classes = ClassMask::from_raw(w, h, argmax_map(&probs))?;
    let out = side_by_side(&probability_image(&probs), &classes.to_rgb());
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_png(&out, &args.out).map_err(|e| CliError::at(&args.out, e))?;

    let hist = classes.histogram();
    let total = (w * h) as f64;
    let mut fractions = serde_json::Map::new();
    for (i, class) in Class::ALL.iter().enumerate().take(NUM_CLASSES) {
        println!("{:<10} {:.4}", class.name(), hist[i] as f64 / total);
        fractions.insert(class.name().into(), json!(hist[i] as f64 / total));
    }
    let mut run = RunManifest::new("segment", args, None)?;
    run.resolved = json!({ "class_fractions": fractions });
    run.inputs = vec![args.checkpoint.clone(), args.image.clone()];
    run.outputs = vec![args.out.clone()];
    run.write(&sibling(&args.out, "run.json"))?;
    Ok(run)
}
