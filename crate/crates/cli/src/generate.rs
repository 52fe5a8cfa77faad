use std::path::Path;

use pointclean::corruption::dataset::{generate_dataset, DatasetConfig};
use pointclean::corruption::mesh::Mesh;
use pointclean::corruption::shapes;
use pointclean::io::load_obj;
use pointclean::Error;

use crate::error::{ensure_dir, read_text, CliError, CliResult};
use crate::GenerateArgs;

/// `.obj` files in `dir`, sorted by file name so ordering never depends on
/// the file system.
fn load_meshes(dir: &Path) -> CliResult<Vec<(String, Mesh)>> {
    if !dir.is_dir() {
        return Err(CliError::io(dir, "not a directory"));
    }
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((name, load_obj(&p)?.normalized_to_unit_diagonal()?));
    }
    Ok(out)
}

pub fn run(args: GenerateArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(p) => DatasetConfig::from_toml(&read_text(p)?)?,
        None => DatasetConfig::denoising(),
    };
    if let Some(s) = args.seed {
        config.master_seed = s;
    }
    if let Some(f) = args.format {
        config.format = f.into();
    }
    config.validate()?;

    let mut meshes = match &args.input {
        Some(dir) => load_meshes(dir)?,
        None => Vec::new(),
    };
    for name in &args.builtin {
        meshes.push((name.clone(), shapes::builtin(name)?));
    }
    if meshes.is_empty() {
        return Err(Error::Config("no meshes found in the input directory".into()).into());
    }
    if let Some(dup) = meshes
        .iter()
        .enumerate()
        .find(|(i, (n, _))| meshes[..*i].iter().any(|(m, _)| m == n))
    {
        return Err(Error::Config(format!("shape name `{}` appears twice", dup.1 .0)).into());
    }

    ensure_dir(&args.output)?;
    let manifest = generate_dataset(&meshes, &config, &args.output)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    println!(
        "wrote {} entries for {} shapes to {}",
        manifest.entries.len(),
        meshes.len(),
        args.output.join("manifest.json").display()
    );
    Ok(())
}
