use pointclean::io::{load_cloud_auto, read_labels, write_ply};
use pointclean::metrics::{error_color, MetricReport};
use pointclean::PointCloud;

use crate::error::{ensure_parent, require_file, write_text, CliResult};
use crate::EvaluateArgs;

/// Both clouds divided by the reference bounding-box diagonal, the same
/// transform the cleaning trace measures under.
fn scaled(
    cleaned: &PointCloud,
    reference: &PointCloud,
) -> pointclean::Result<(PointCloud, PointCloud)> {
    let d = reference.scale_diagonal()?;
    let f = |c: &PointCloud| {
        PointCloud::new(c.points().iter().map(|p| (p.coords / d).into()).collect())
    };
    Ok((f(cleaned)?, f(reference)?))
}

pub fn run(args: EvaluateArgs) -> CliResult<()> {
    require_file(&args.input)?;
    require_file(&args.reference)?;
    for p in [&args.predicted, &args.truth].into_iter().flatten() {
        require_file(p)?;
    }
    let mut cleaned = load_cloud_auto(&args.input)?;
    let mut reference = load_cloud_auto(&args.reference)?;
    if args.normalize {
        (cleaned, reference) = scaled(&cleaned, &reference)?;
    }
    let labels = match (&args.predicted, &args.truth) {
        (Some(p), Some(t)) => Some((read_labels(p)?, read_labels(t)?)),
        _ => None,
    };
    let mut report = MetricReport::compute(
        &cleaned,
        &reference,
        labels.as_ref().map(|(p, t)| (p.as_slice(), t.as_slice())),
        args.colored.is_some(),
    )?;
    report.label = args.label.clone();
    if let Some(path) = &args.colored {
        ensure_parent(path)?;
        let max = report
            .per_point_distances
            .iter()
            .copied()
            .fold(0.0, f64::max);
        let colors: Vec<[u8; 3]> = report
            .per_point_distances
            .iter()
            .map(|&d| error_color(d, max))
            .collect();
        write_ply(&cleaned, Some(&colors), path)?;
        report.per_point_distances.clear();
    }
    ensure_parent(&args.output)?;
    write_text(&args.output, &report.to_json()?)?;
    println!("chamfer {:.6e}  rmsd {:.6e}", report.chamfer, report.rmsd);
    if let Some(f2) = report.f2 {
        println!("F2 {f2:.4}");
    }
    Ok(())
}
