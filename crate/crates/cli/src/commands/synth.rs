//! Synthetic dataset generation.
//!
//! Layout under the output directory:
//!
//! ```text
//! scenes/s0000.png, scenes/s0000_mask.png
//! pairs/s0000_f0.05_after.png, ..._after_mask.png, ..._change.png
//! pairs/s0000_f0.05_v10_after.png            noisy after image of the 5% pair
//! manifest.tsv, run.json
//! ```
//!
//! Scene records carry no pair id. Each pair is two records with the id
//! `s0000:<fraction>:<variance>`: the scene itself, then the after image with
//! its class mask and change mask.

use std::fs;
use std::path::{Path, PathBuf};

use unet_cd::synthdata::{
    add_gaussian_noise, generate_scene, save_png, simulate_change, write_manifest, ChangeConfig, ManifestRecord,
    MAX_FOLIAGE_JITTER, MIN_SCENE_SIZE,
};

use crate::args::SynthArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// Change fraction the noise grid is built on.
pub const NOISE_FRACTION: f64 = 0.05;

pub const MANIFEST: &str = "manifest.tsv";

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, salt: u64) -> u64 {
    splitmix(seed ^ splitmix(salt))
}

pub fn pair_id(scene: usize, fraction: f64, variance: f64) -> String {
    format!("s{scene:04}:{fraction}:{variance}")
}

/// Inverse of [`pair_id`]: (fraction, variance).
pub fn parse_pair_id(id: &str) -> Option<(f64, f64)> {
    let mut parts = id.split(':');
    let _scene = parts.next()?;
    let f = parts.next()?.parse().ok()?;
    let v = parts.next()?.parse().ok()?;
    parts.next().is_none().then_some((f, v))
}

fn validate(args: &SynthArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    if args.size < MIN_SCENE_SIZE {
        return Err(CliError::Usage(format!("--size must be at least {MIN_SCENE_SIZE}")));
    }
    if let Some(f) = args.fractions.iter().find(|f| !(**f > 0.0 && **f < 0.5)) {
        return Err(CliError::Usage(format!("change fraction {f} is outside (0, 0.5)")));
    }
    if let Some(v) = args.variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(CliError::Usage(format!("noise variance {v} must be positive")));
    }
    if args.foliage_jitter > MAX_FOLIAGE_JITTER {
        return Err(CliError::Usage(format!("--foliage-jitter is at most {MAX_FOLIAGE_JITTER}")));
    }
    Ok(())
}

pub fn run(args: &SynthArgs) -> CliResult<RunManifest> {
    validate(args)?;
    let out = &args.out;
    fs::create_dir_all(out.join("scenes"))?;
    if !args.no_pairs {
        fs::create_dir_all(out.join("pairs"))?;
    }
    let mut run = RunManifest::new("synth", args, Some(args.seed))?;
    let mut records = Vec::new();
    let mut pair_records = Vec::new();
    let mut save = |img: &unet_cd::synthdata::RgbImage, rel: PathBuf| -> CliResult<PathBuf> {
        let path = out.join(&rel);
        save_png(img, &path).map_err(|e| CliError::at(&path, e))?;
        run.outputs.push(path);
        Ok(rel)
    };

    for i in 0..args.count {
        let scene_seed = derive(args.seed, i as u64);
        let scene = generate_scene(scene_seed, args.size)?;
        let image = save(&scene.image, Path::new("scenes").join(format!("s{i:04}.png")))?;
        let mask = save(&scene.mask.to_rgb(), Path::new("scenes").join(format!("s{i:04}_mask.png")))?;
        records.push(ManifestRecord {
            image: image.clone(),
            mask: mask.clone(),
            pair_id: None,
            change_mask: None,
        });
        if args.no_pairs {
            continue;
        }

        let mut fractions = args.fractions.clone();
        if !args.variances.is_empty() && !fractions.contains(&NOISE_FRACTION) {
            fractions.push(NOISE_FRACTION);
        }
        for &f in &fractions {
            let change_seed = derive(scene_seed, f.to_bits());
            let config = ChangeConfig {
                fraction: f,
                foliage_jitter: args.foliage_jitter,
            };
            let pair = simulate_change(&scene, &config, change_seed)?;
            let stem = format!("s{i:04}_f{f}");
            let dir = Path::new("pairs");
            let after_mask = save(&pair.after_classes.to_rgb(), dir.join(format!("{stem}_after_mask.png")))?;
            let change = save(&pair.change_mask.to_rgb(), dir.join(format!("{stem}_change.png")))?;
            let mut push_pair = |after: PathBuf, variance: f64| {
                let id = pair_id(i, f, variance);
                pair_records.push(ManifestRecord {
                    image: image.clone(),
                    mask: mask.clone(),
                    pair_id: Some(id.clone()),
                    change_mask: None,
                });
                pair_records.push(ManifestRecord {
                    image: after,
                    mask: after_mask.clone(),
                    pair_id: Some(id),
                    change_mask: Some(change.clone()),
                });
            };
            if args.fractions.contains(&f) {
                let after = save(&pair.after, dir.join(format!("{stem}_after.png")))?;
                push_pair(after, 0.0);
            }
            if f == NOISE_FRACTION {
                for &v in &args.variances {
                    let noisy = add_gaussian_noise(&pair.after, v, derive(change_seed, v.to_bits()))?;
                    let after = save(&noisy, dir.join(format!("{stem}_v{v}_after.png")))?;
                    push_pair(after, v);
                }
            }
        }
    }

    records.extend(pair_records);
    let manifest = out.join(MANIFEST);
    write_manifest(&manifest, &records).map_err(|e| CliError::at(&manifest, e))?;
    run.outputs.push(manifest);
    run.write(&out.join("run.json"))?;
    println!(
        "wrote {} scenes and {} pairs to {}",
        args.count,
        records.iter().filter(|r| r.change_mask.is_some()).count(),
        out.display()
    );
    Ok(run)
}
