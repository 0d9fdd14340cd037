use std::fs;

use serde::Serialize;

use unet_cd::changedet::{render_change, ChangeDetector, ChangeReport, ThresholdSchedule};
use unet_cd::synthdata::save_png;

use super::{check_epsilon, model_input, open_checkpoint, open_png, schedule};
use crate::args::DetectArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::{write_json, RunManifest};

pub const RENDERED: &str = "change.png";
pub const MASK: &str = "change_mask.png";
pub const REPORT: &str = "report.json";

#[derive(Debug, Serialize)]
pub struct DetectReport {
    pub thresholds: ThresholdSchedule,
    pub epsilon_change: f32,
    #[serde(flatten)]
    pub change: ChangeReport,
    pub changed_fraction: f64,
    pub rendered: String,
    pub mask: String,
}

pub fn run(args: &DetectArgs) -> CliResult<RunManifest> {
    let schedule = schedule(&args.thresholds)?;
    check_epsilon(args.epsilon)?;
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let model = &ckpt.model;
    let before = model_input(model, &open_png(&args.before)?, &args.before)?;
    let after = model_input(model, &open_png(&args.after)?, &args.after)?;
    let result = ChangeDetector::new(model).detect(&before, &after, &schedule, args.epsilon)?;

    fs::create_dir_all(&args.out)?;
    let rendered = args.out.join(RENDERED);
    let mask = args.out.join(MASK);
    save_png(&render_change(&result), &rendered).map_err(|e| CliError::at(&rendered, e))?;
    save_png(&result.changed.to_rgb(), &mask).map_err(|e| CliError::at(&mask, e))?;
    let report = DetectReport {
        thresholds: schedule,
        epsilon_change: args.epsilon,
        change: result.report(),
        changed_fraction: result.changed.fraction(),
        rendered: RENDERED.into(),
        mask: MASK.into(),
    };
    let report_path = args.out.join(REPORT);
    write_json(&report_path, &report)?;

    println!(
        "{} of {} pixels changed ({:.4})",
        report.change.changed_pixels, report.change.total_pixels, report.changed_fraction
    );
    for (l, f) in report.change.di_nonzero_fraction.iter().enumerate() {
        println!("DI{} nonzero {:.4}", l + 1, f);
    }
    let mut run = RunManifest::new("detect", args, None)?;
    run.inputs = vec![args.checkpoint.clone(), args.before.clone(), args.after.clone()];
    run.outputs = vec![rendered, mask, report_path];
    run.write(&args.out.join("run.json"))?;
    Ok(run)
}
