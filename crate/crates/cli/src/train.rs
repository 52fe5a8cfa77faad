use pointclean::corruption::dataset::DatasetManifest;
use pointclean::model::checkpoint::load_checkpoint;
use pointclean::training::{train_manifest, TrainConfig, TrainOptions, TrainingSet};
use pointclean::Error;

use crate::error::{ensure_dir, read_text, require_file, CliResult};
use crate::TrainArgs;

pub fn run(args: TrainArgs) -> CliResult<()> {
    require_file(&args.config)?;
    require_file(&args.input)?;
    if let Some(v) = &args.validation {
        require_file(v)?;
    }
    if let Some(r) = &args.resume {
        require_file(r)?;
    }
    let mut tc = TrainConfig::from_toml(&read_text(&args.config)?)?;
    if let Some(s) = args.seed {
        tc.master_seed = s;
    }
    let model_config = tc.model_config();
    let manifest = DatasetManifest::load(&args.input)?;
    let validation = match &args.validation {
        Some(p) => Some(TrainingSet::from_manifest(&DatasetManifest::load(p)?)?),
        None => None,
    };
    let resume = match &args.resume {
        Some(p) => {
            let (params, opt) = load_checkpoint(p)?;
            let opt = opt.ok_or_else(|| {
                Error::Checkpoint(format!(
                    "{} has no optimizer state to resume from",
                    p.display()
                ))
            })?;
            Some((params, opt))
        }
        None => None,
    };
    ensure_dir(&args.output)?;

    let run = train_manifest(
        &manifest,
        &model_config,
        &tc,
        TrainOptions {
            validation: validation.as_ref(),
            out_dir: Some(&args.output),
            resume,
        },
    )?;
    let last = run.loss_curve.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs in {:.1}s, final loss {last:.6}",
        run.loss_curve.len(),
        run.wall_clock_secs
    );
    if let Some(e) = run.best_epoch {
        println!("best validation at epoch {e}");
    }
    println!("checkpoints and curves in {}", args.output.display());
    Ok(())
}
