use std::fs;
use std::path::Path;

use evfuse::data::{citation_paths, generate_sbm, load_citation_raw, load_generic_dir, DatasetBundle, SbmSpec, GENERIC_FEATURES};
use evfuse::train::TrainConfig;
use evfuse::{Error, Result};

use crate::{ConfigArgs, DatasetArgs, DatasetFormat};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_sbm_spec(path: &Path) -> Result<SbmSpec> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

pub fn load_dataset(args: &DatasetArgs) -> Result<DatasetBundle> {
    let path = &args.dataset;
    let format = match args.dataset_format {
        DatasetFormat::Auto if path.join(GENERIC_FEATURES).is_file() => DatasetFormat::Generic,
        DatasetFormat::Auto if path.extension().is_some_and(|e| e == "toml") => DatasetFormat::Sbm,
        DatasetFormat::Auto => DatasetFormat::Citation,
        f => f,
    };
    match format {
        DatasetFormat::Generic => load_generic_dir(path),
        DatasetFormat::Sbm => generate_sbm(&load_sbm_spec(path)?),
        DatasetFormat::Citation => {
            let (content, cites) = citation_paths(path)?;
            let loaded = load_citation_raw(&content, &cites, None)?;
            if loaded.dangling > 0 {
                eprintln!("warning: skipped {} citations with unknown endpoints", loaded.dangling);
            }
            Ok(loaded.bundle)
        }
        DatasetFormat::Auto => unreachable!("resolved above"),
    }
}

pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut c = match &args.config {
        Some(p) => toml::from_str::<TrainConfig>(&read_text(p)?)
            .map_err(|e| Error::Input(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    macro_rules! apply {
        ($($field:ident => $target:ident),* $(,)?) => {
            $(if let Some(v) = args.$field.clone() { c.$target = v; })*
        };
    }
    apply!(
        learning_rate => learning_rate,
        weight_decay => weight_decay,
        hidden_size => hidden_size,
        dropout_rate => dropout_rate,
        perturb_sigma => perturb_sigma,
        steps => propagation_steps,
        include_hop0 => include_hop0,
        row_normalize => row_normalize,
        lambda_kl => lambda_kl,
        lambda_dis => lambda_dis,
        max_epochs => max_epochs,
        patience => patience,
        seed => seed,
    );
    if let Some(h) = &args.hops {
        c.hops = Some(h.clone());
    }
    c.validate()?;
    Ok(c)
}
