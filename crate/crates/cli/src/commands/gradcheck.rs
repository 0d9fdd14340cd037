use unet_cd::trainer::{grad_check, GradCheckConfig};

use crate::args::GradcheckArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::{sibling, write_json, RunManifest};

pub fn run(args: &GradcheckArgs) -> CliResult<RunManifest> {
    if !(args.tolerance.is_finite() && args.tolerance > 0.0) {
        return Err(CliError::Usage(format!("--tolerance {} must be positive", args.tolerance)));
    }
    let config = GradCheckConfig {
        batch: args.batch,
        samples_per_kind: args.samples,
        step: args.step,
        tolerance: args.tolerance,
        seed: args.seed,
        zero_input: args.zero_input,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    for (kind, err) in &report.per_kind {
        println!("{kind:<14} max rel err {err:.3e}");
    }
    if let Some(w) = &report.worst {
        println!(
            "worst: {} [{}] analytic {:.6e} numeric {:.6e} rel err {:.3e}",
            w.param, w.index, w.analytic, w.numeric, w.rel_err
        );
    }
    let mut run = RunManifest::new("gradcheck", args, Some(args.seed))?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        run.outputs.push(out.clone());
        run.write(&sibling(out, "run.json"))?;
    }
    if report.passed {
        println!("PASS: max rel err {:.3e} <= {:.1e}", report.max_rel_err, args.tolerance);
        Ok(run)
    } else if !report.all_finite {
        Err(CliError::Validation("non-finite loss or gradient".into()))
    } else {
        Err(CliError::Validation(format!(
            "FAIL: max rel err {:.3e} > {:.1e}",
            report.max_rel_err, args.tolerance
        )))
    }
}
