use std::path::Path;

use clap::ArgMatches;
use lep_core::confidence::{extract_descriptors, train_network, AeTrainConfig};
use lep_core::mesh::SubpartGrouping;
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, load_datasets, required_string, resolve, resolve_opt_string,
    resolve_string, scheme_by_id, CmdError, CmdResult, FileConfig,
};

/// Builtin grouping for a scheme id; custom schemes require a grouping file.
fn builtin_grouping(scheme_id: &str) -> Option<SubpartGrouping> {
    use lep_core::data::SynthScheme;
    match scheme_id {
        "face49" => Some(SubpartGrouping::default_face49()),
        "synth17" => Some(SynthScheme::Face17.grouping()),
        "synth5" => Some(SynthScheme::Face5.grouping()),
        _ => None,
    }
}

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let manifests: Vec<String> = matches
        .get_many::<String>("manifest")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let scheme_id = resolve_string(matches, &file, "scheme", "face49");
    let scheme = scheme_by_id(&scheme_id)?;
    let out = required_string(matches, &file, "out")?;

    // a grouping file is configuration: missing or malformed -> exit 2
    let grouping = match resolve_opt_string(matches, &file, "grouping") {
        Some(path) => SubpartGrouping::load(Path::new(&path), scheme.n_points)
            .map_err(|e| CmdError::config(e.to_string()))?,
        None => builtin_grouping(&scheme_id).ok_or_else(|| {
            CmdError::config(format!(
                "scheme {scheme_id} has no builtin grouping; pass --grouping"
            ))
        })?,
    };

    let cfg = AeTrainConfig {
        updates: resolve(matches, &file, "updates", 15_000)?,
        learning_rate: resolve(matches, &file, "rate", 0.01)?,
        weight_decay: resolve(matches, &file, "decay", 0.001)?,
        noise_fraction: resolve(matches, &file, "noise", 0.25)?,
        class_alternating: !matches.get_flag("no-alternate"),
        seed: resolve(matches, &file, "seed", 1)?,
    };

    let dataset = load_datasets(&manifests, scheme.clone())?;
    let descriptors: Vec<Vec<Vec<f64>>> = dataset
        .samples
        .iter()
        .map(|s| extract_descriptors(&s.channels, &s.shape))
        .collect();
    let labels: Option<Vec<usize>> = dataset
        .samples
        .iter()
        .map(|s| s.label)
        .collect::<Option<Vec<usize>>>();

    let network = train_network(&descriptors, labels.as_deref(), &scheme, &grouping, &cfg)
        .map_err(from_core)?;

    let out_path = ensure_parent(&out)?;
    model_io::save_network(&network, &out_path).map_err(from_core)?;
    let sigma_mean = network.sigma0.iter().sum::<f64>() / network.sigma0.len() as f64;
    println!(
        "trained confidence network ({} point layers, {} group layers, mean sigma0 {:.3e}) -> {}",
        network.point_layers.len(),
        network.group_layers.iter().flatten().count(),
        sigma_mean,
        out_path.display()
    );
    Ok(())
}
