use std::path::{Path, PathBuf};

use pointclean::io::{load_cloud_auto, save_cloud, write_labels, CloudFormat};
use pointclean::model::checkpoint::load_checkpoint;
use pointclean::pipeline::{clean_observed, CleaningConfig};

use crate::error::{ensure_parent, read_text, require_file, write_text, CliError, CliResult};
use crate::CleanArgs;

/// `out.xyz` -> `out.<suffix>`.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    output.with_extension(suffix)
}

fn load_config(path: Option<&Path>) -> CliResult<CleaningConfig> {
    let Some(p) = path else {
        return Ok(CleaningConfig::default());
    };
    toml::from_str(&read_text(p)?)
        .map_err(|e| pointclean::Error::Config(format!("{}: {e}", p.display())).into())
}

pub fn run(args: CleanArgs) -> CliResult<()> {
    require_file(&args.input)?;
    require_file(&args.denoise_model)?;
    if let Some(p) = &args.outlier_model {
        require_file(p)?;
    }
    if let Some(p) = &args.reference {
        require_file(p)?;
    }
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.patch_seed = s;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if args.skip_outliers {
        config.skip_outliers = true;
    }
    config.validate()?;
    let format = match args.format {
        Some(f) => f.into(),
        None => CloudFormat::from_path(&args.output).unwrap_or(CloudFormat::Xyz),
    };

    let cloud = load_cloud_auto(&args.input)?;
    let reference = args.reference.as_deref().map(load_cloud_auto).transpose()?;
    let (denoise, _) = load_checkpoint(&args.denoise_model)?;
    let outlier = match &args.outlier_model {
        Some(p) if !config.skip_outliers => Some(load_checkpoint(p)?.0),
        _ => None,
    };
    ensure_parent(&args.output)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let result = clean_observed(
        &cloud,
        outlier.as_ref(),
        &denoise,
        &config,
        reference.as_ref(),
        |it, c| {
            if args.intermediates {
                let p = sibling(&args.output, &format!("iter{it}.{}", format.extension()));
                save_cloud(c, &p, format)?;
                written.push(p);
            }
            Ok(())
        },
    );
    let outcome = result.map_err(CliError::from).and_then(|(cleaned, trace)| {
        save_cloud(&cleaned, &args.output, format)?;
        written.push(args.output.clone());
        if let Some(labels) = &trace.outlier_labels {
            let p = sibling(&args.output, "removed");
            write_labels(labels, &p)?;
            written.push(p);
        }
        let p = sibling(&args.output, "trace.json");
        write_text(&p, &trace.to_json()?)?;
        Ok((cleaned, trace))
    });
    let (cleaned, trace) = match outcome {
        Ok(v) => v,
        Err(e) => {
            for p in &written {
                let _ = std::fs::remove_file(p);
            }
            return Err(e);
        }
    };
    println!(
        "{} points in, {} removed as outliers, {} iterations, {} points written to {}",
        trace.input_points,
        trace.removed_outliers,
        trace.iterations.len(),
        cleaned.len(),
        args.output.display()
    );
    if let Some(c) = trace.iterations.last().and_then(|t| t.chamfer) {
        println!("chamfer against reference: {c:.6e}");
    }
    Ok(())
}
