//! Change-detection scoring over a pairs manifest, aggregated per
//! (change fraction, noise variance) cell.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use unet_cd::changedet::{ChangeDetector, ThresholdSchedule};
use unet_cd::metrics::{pcc1, pcc2, ChangeConfusion, ClassConfusion};
use unet_cd::synthdata::{load_png, read_manifest, ChangeMask, ClassMask, ManifestRecord};

use super::synth::parse_pair_id;
use super::{check_epsilon, model_input, open_checkpoint, require_file, schedule};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, write_json, RunManifest};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairResult {
    pub pair_id: String,
    pub fraction: Option<f64>,
    pub variance: Option<f64>,
    pub pcc1: f64,
    /// Class accuracy over the truly changed pixels; absent when nothing changed.
    pub pcc2: Option<f64>,
    pub change: ChangeConfusion,
    pub classes: Option<ClassConfusion>,
    pub predicted_changed_fraction: f64,
    pub true_changed_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellSummary {
    pub fraction: Option<f64>,
    pub variance: Option<f64>,
    pub pairs: usize,
    pub pcc1_mean: f64,
    /// Sample standard deviation; 0 for a single pair.
    pub pcc1_std: f64,
    pub pcc2_pairs: usize,
    pub pcc2_mean: Option<f64>,
    pub pcc2_std: Option<f64>,
    pub change: ChangeConfusion,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub thresholds: ThresholdSchedule,
    pub epsilon_change: f32,
    pub cells: Vec<CellSummary>,
    pub pairs: Vec<PairResult>,
}

pub struct PairPaths<'a> {
    pub id: &'a str,
    pub before: &'a ManifestRecord,
    pub after: &'a ManifestRecord,
}

/// Matches the two records of every pair id, in manifest order.
pub fn collect_pairs(records: &[ManifestRecord]) -> CliResult<Vec<PairPaths<'_>>> {
    let mut order = Vec::new();
    let mut by_id: BTreeMap<&str, Vec<&ManifestRecord>> = BTreeMap::new();
    for r in records {
        if let Some(id) = r.pair_id.as_deref() {
            let entry = by_id.entry(id).or_default();
            if entry.is_empty() {
                order.push(id);
            }
            entry.push(r);
        }
    }
    order
        .into_iter()
        .map(|id| {
            let rs = &by_id[id];
            let before: Vec<_> = rs.iter().filter(|r| r.change_mask.is_none()).collect();
            let after: Vec<_> = rs.iter().filter(|r| r.change_mask.is_some()).collect();
            match (before.as_slice(), after.as_slice()) {
                ([b], [a]) => Ok(PairPaths { id, before: b, after: a }),
                _ => Err(CliError::Validation(format!(
                    "pair {id} needs one record without and one with a change mask, found {}",
                    rs.len()
                ))),
            }
        })
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

type Cell<'a> = ((Option<f64>, Option<f64>), Vec<&'a PairResult>);

fn key_order(a: &Option<f64>, b: &Option<f64>) -> std::cmp::Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(y),
        (a, b) => a.is_none().cmp(&b.is_none()),
    }
}

/// Per-cell means and dispersion. Noiseless cells come first, by fraction,
/// then the noise cells by variance.
pub fn summarize(pairs: &[PairResult]) -> Vec<CellSummary> {
    let mut cells: Vec<Cell> = Vec::new();
    for p in pairs {
        let key = (p.fraction, p.variance);
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(p),
            None => cells.push((key, vec![p])),
        }
    }
    cells.sort_by(|(a, _), (b, _)| key_order(&a.1, &b.1).then(key_order(&a.0, &b.0)));
    cells
        .into_iter()
        .map(|((fraction, variance), ps)| {
            let p1: Vec<f64> = ps.iter().map(|p| p.pcc1).collect();
            let p2: Vec<f64> = ps.iter().filter_map(|p| p.pcc2).collect();
            let (pcc1_mean, pcc1_std) = mean_std(&p1);
            let (pcc2_mean, pcc2_std) = if p2.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_std(&p2);
                (Some(m), Some(s))
            };
            let mut change = ChangeConfusion::default();
            for p in &ps {
                change.tp += p.change.tp;
                change.tn += p.change.tn;
                change.fp += p.change.fp;
                change.fn_ += p.change.fn_;
            }
            CellSummary {
                fraction,
                variance,
                pairs: ps.len(),
                pcc1_mean,
                pcc1_std,
                pcc2_pairs: p2.len(),
                pcc2_mean,
                pcc2_std,
                change,
            }
        })
        .collect()
}

fn png(path: &Path) -> CliResult<unet_cd::synthdata::RgbImage> {
    load_png(path).map_err(|e| CliError::at(path, e))
}

fn evaluate_pair(
    detector: &ChangeDetector<'_>,
    pair: &PairPaths<'_>,
    schedule: &ThresholdSchedule,
    epsilon: f32,
) -> CliResult<PairResult> {
    let model = detector.model();
    let before = model_input(model, &png(&pair.before.image)?, &pair.before.image)?;
    let after = model_input(model, &png(&pair.after.image)?, &pair.after.image)?;
    let classes_path = &pair.after.mask;
    let truth_classes = ClassMask::from_rgb(&png(classes_path)?).map_err(|e| CliError::at(classes_path, e))?;
    let change_path = pair.after.change_mask.as_ref().expect("after record has a change mask");
    let truth_change = ChangeMask::from_rgb(&png(change_path)?);

    let result = detector.detect(&before, &after, schedule, epsilon)?;
    let (score1, change) = pcc1(result.changed.as_raw(), truth_change.as_raw()).map_err(|e| CliError::at(change_path, e))?;
    let (pcc2_score, classes) = if truth_change.count() > 0 {
        let (s, c) = pcc2(result.classes.as_raw(), truth_classes.as_raw(), Some(truth_change.as_raw()))
            .map_err(|e| CliError::at(classes_path, e))?;
        (Some(s), Some(c))
    } else {
        (None, None)
    };
    let cell = parse_pair_id(pair.id);
    Ok(PairResult {
        pair_id: pair.id.to_string(),
        fraction: cell.map(|c| c.0),
        variance: cell.map(|c| c.1),
        pcc1: score1,
        pcc2: pcc2_score,
        change,
        classes,
        predicted_changed_fraction: result.changed.fraction(),
        true_changed_fraction: truth_change.fraction(),
    })
}

pub fn run(args: &EvalArgs) -> CliResult<RunManifest> {
    let schedule = schedule(&args.thresholds)?;
    check_epsilon(args.epsilon)?;
    require_file(&args.pairs, "pairs manifest")?;
    let ckpt = open_checkpoint(&args.checkpoint)?;
    let records = read_manifest(&args.pairs).map_err(|e| CliError::at(&args.pairs, e))?;
    let pairs = collect_pairs(&records)?;
    if pairs.is_empty() {
        return Err(CliError::Usage(format!("{} lists no change pairs", args.pairs.display())));
    }

    let detector = ChangeDetector::new(&ckpt.model);
    let results: Vec<PairResult> = if unet_cd::parallel::is_deterministic() {
        pairs
            .iter()
            .map(|p| evaluate_pair(&detector, p, &schedule, args.epsilon))
            .collect::<CliResult<_>>()?
    } else {
        pairs
            .par_iter()
            .map(|p| evaluate_pair(&detector, p, &schedule, args.epsilon))
            .collect::<CliResult<_>>()?
    };
    let cells = summarize(&results);

    println!("{:>8} {:>8} {:>5} {:>14} {:>14}", "change", "variance", "pairs", "PCC1", "PCC2");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
    for c in &cells {
        println!(
            "{:>8} {:>8} {:>5} {:>7.4}±{:<6.4} {:>7}",
            show(c.fraction),
            show(c.variance),
            c.pairs,
            c.pcc1_mean,
            c.pcc1_std,
            c.pcc2_mean.map_or("-".into(), |m| format!("{m:.4}±{:.4}", c.pcc2_std.unwrap_or(0.0))),
        );
    }

    let report = EvalReport {
        thresholds: schedule,
        epsilon_change: args.epsilon,
        cells,
        pairs: results,
    };
    write_json(&args.out, &report)?;
    let mut run = RunManifest::new("eval", args, None)?;
    run.inputs = vec![args.checkpoint.clone(), args.pairs.clone()];
    run.outputs = vec![args.out.clone()];
    run.write(&sibling(&args.out, "run.json"))?;
    Ok(run)
}
