use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pointclean::metrics::MetricReport;
use pointclean::pipeline::CleaningTrace;

use crate::error::{ensure_dir, read_text, require_file, write_text, CliError, CliResult};
use crate::plot::{line_chart, Series};
use crate::ReportArgs;

const CURVES_HEADER: [&str; 3] = ["epoch", "train_loss", "val_metric"];

struct Curves {
    epochs: Vec<f64>,
    loss: Vec<f64>,
    val: Vec<Option<f64>>,
}

enum Input {
    Metrics(MetricReport),
    Trace(CleaningTrace),
    Curves(Curves),
}

fn schema(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Schema(format!("{}: {msg}", path.display()))
}

fn read_curves(path: &Path) -> CliResult<Curves> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| schema(path, e))?;
    if header.iter().ne(CURVES_HEADER) {
        return Err(schema(
            path,
            format!("expected header {}", CURVES_HEADER.join(",")),
        ));
    }
    let mut c = Curves {
        epochs: Vec::new(),
        loss: Vec::new(),
        val: Vec::new(),
    };
    for rec in r.records() {
        let rec = rec.map_err(|e| schema(path, e))?;
        let num =
            |i: usize| -> CliResult<f64> { rec[i].trim().parse().map_err(|e| schema(path, e)) };
        c.epochs.push(num(0)?);
        c.loss.push(num(1)?);
        c.val.push(if rec[2].trim().is_empty() {
            None
        } else {
            Some(num(2)?)
        });
    }
    Ok(c)
}

fn read_input(path: &Path) -> CliResult<Input> {
    require_file(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("csv") {
        return Ok(Input::Curves(read_curves(path)?));
    }
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(path, e))?;
    let has = |k: &str| value.get(k).is_some();
    if has("chamfer") && has("rmsd") {
        serde_json::from_value(value)
            .map(Input::Metrics)
            .map_err(|e| schema(path, e))
    } else if has("iterations") && has("input_points") {
        serde_json::from_value(value)
            .map(Input::Trace)
            .map_err(|e| schema(path, e))
    } else {
        Err(schema(path, "neither a metric report nor a cleaning trace"))
    }
}

/// File stems, made unique by suffixing a counter.
fn unique_stems(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    paths
        .iter()
        .map(|p| {
            let base = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut name = base.clone();
            let mut k = 1;
            while !seen.insert(name.clone()) {
                k += 1;
                name = format!("{base}_{k}");
            }
            name
        })
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

pub fn run(args: ReportArgs) -> CliResult<()> {
    let inputs = args
        .input
        .iter()
        .map(|p| read_input(p))
        .collect::<CliResult<Vec<_>>>()?;
    ensure_dir(&args.output)?;
    let stems = unique_stems(&args.input);

    let mut md = String::from("# Summary\n");
    let mut plots = Vec::new();

    // Metric reports: one plot across all of them, abscissa from the label.
    let reports: Vec<(&str, &MetricReport)> = inputs
        .iter()
        .zip(&stems)
        .filter_map(|(i, s)| match i {
            Input::Metrics(m) => Some((s.as_str(), m)),
            _ => None,
        })
        .collect();
    if !reports.is_empty() {
        let numeric = reports
            .iter()
            .all(|(_, m)| m.label.as_deref().is_some_and(|l| l.parse::<f64>().is_ok()));
        let x = |i: usize, m: &MetricReport| -> f64 {
            if numeric {
                m.label
                    .as_deref()
                    .and_then(|l| l.parse().ok())
                    .unwrap_or(f64::NAN)
            } else {
                i as f64
            }
        };
        let mut pts: Vec<(f64, f64)> = reports
            .iter()
            .enumerate()
            .map(|(i, (_, m))| (x(i, m), m.chamfer))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path = args.output.join("metric_vs_noise.svg");
        let x_label = if numeric { "noise level" } else { "report" };
        line_chart(
            &path,
            "Chamfer measure",
            x_label,
            "chamfer",
            &[Series {
                name: "chamfer".into(),
                points: pts,
            }],
        )?;
        plots.push(path);

        md.push_str("\n## Metrics\n\n| report | label | points | chamfer | rmsd | F2 |\n|---|---|---|---|---|---|\n");
        let (mut chamfer, mut rmsd, mut points) = (0.0, 0.0, 0usize);
        for (s, m) in &reports {
            writeln!(
                md,
                "| {s} | {} | {} | {:.6e} | {:.6e} | {} |",
                m.label.as_deref().unwrap_or("-"),
                m.cleaned_points,
                m.chamfer,
                m.rmsd,
                opt(m.f2, 4)
            )
            .expect("string write");
            chamfer += m.chamfer;
            rmsd += m.rmsd;
            points += m.cleaned_points;
        }
        writeln!(
            md,
            "| **total** | | {points} | {chamfer:.6e} | {rmsd:.6e} | |"
        )
        .expect("string write");
    }

    let mut train_rows = String::new();
    let mut trace_rows = String::new();
    for (input, stem) in inputs.iter().zip(&stems) {
        match input {
            Input::Curves(c) => {
                let path = args.output.join(format!("loss_{stem}.svg"));
                line_chart(
                    &path,
                    &format!("Training loss ({stem})"),
                    "epoch",
                    "mean loss",
                    &[Series {
                        name: "train loss".into(),
                        points: c
                            .epochs
                            .iter()
                            .copied()
                            .zip(c.loss.iter().copied())
                            .collect(),
                    }],
                )?;
                plots.push(path);
                let best = c.val.iter().flatten().copied().reduce(f64::min);
                writeln!(
                    train_rows,
                    "| {stem} | {} | {} | {} |",
                    c.loss.len(),
                    opt(c.loss.last().copied(), 6),
                    best.map(|b| format!("{b:.6e}"))
                        .unwrap_or_else(|| "-".into())
                )
                .expect("string write");
            }
            Input::Trace(t) => {
                let chamfers: Vec<Option<f64>> = std::iter::once(t.initial_chamfer)
                    .chain(t.iterations.iter().map(|i| i.chamfer))
                    .collect();
                let (y_label, points): (&str, Vec<(f64, f64)>) =
                    if chamfers.iter().all(Option::is_some) {
                        (
                            "chamfer",
                            chamfers
                                .iter()
                                .enumerate()
                                .map(|(i, c)| (i as f64, c.unwrap_or(f64::NAN)))
                                .collect(),
                        )
                    } else {
                        (
                            "mean displacement",
                            t.iterations
                                .iter()
                                .map(|i| (i.iteration as f64, i.mean_displacement))
                                .collect(),
                        )
                    };
                let path = args.output.join(format!("iterations_{stem}.svg"));
                line_chart(
                    &path,
                    &format!("Per-iteration {y_label} ({stem})"),
                    "iteration",
                    y_label,
                    &[Series {
                        name: y_label.into(),
                        points,
                    }],
                )?;
                plots.push(path);
                writeln!(
                    trace_rows,
                    "| {stem} | {} | {} | {} | {} |",
                    t.input_points,
                    t.removed_outliers,
                    t.iterations.len(),
                    opt(t.iterations.last().and_then(|i| i.chamfer), 8)
                )
                .expect("string write");
            }
            Input::Metrics(_) => {}
        }
    }
    if !train_rows.is_empty() {
        md.push_str(
            "\n## Training\n\n| run | epochs | final loss | best validation |\n|---|---|---|---|\n",
        );
        md.push_str(&train_rows);
    }
    if !trace_rows.is_empty() {
        md.push_str(
            "\n## Cleaning\n\n| trace | input points | removed outliers | iterations | final chamfer |\n|---|---|---|---|---|\n",
        );
        md.push_str(&trace_rows);
    }
    md.push_str("\n## Plots\n\n");
    for p in &plots {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        writeln!(md, "- [{name}]({name})").expect("string write");
    }
    write_text(&args.output.join("summary.md"), &md)?;
    println!(
        "{} plots and summary.md written to {}",
        plots.len(),
        args.output.display()
    );
    Ok(())
}
