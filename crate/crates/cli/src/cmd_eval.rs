use std::path::Path;

use clap::ArgMatches;
use lep_core::data::OccludeRegion;
use lep_core::eval::{occlusion_sweep, oob_evaluate, SweepArtifacts, SweepRow, Weighting};
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, load_datasets, resolve, resolve_opt_string, resolve_string,
    scheme_by_id, CmdError, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let manifests: Vec<String> = matches
        .get_many::<String>("manifest")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let scheme = scheme_by_id(&resolve_string(matches, &file, "scheme", "face49"))?;
    let dataset = load_datasets(&manifests, scheme)?;

    if matches.get_flag("sweep") {
        run_sweep(matches, &file, &dataset)
    } else {
        run_oob(matches, &file, &dataset)
    }
}

fn run_oob(
    matches: &ArgMatches,
    file: &FileConfig,
    dataset: &lep_core::data::Dataset,
) -> CmdResult<()> {
    let model_path = resolve_opt_string(matches, file, "model")
        .ok_or_else(|| CmdError::config("plain evaluation requires --model"))?;
    let model = model_io::load_forest(Path::new(&model_path)).map_err(from_core)?;
    let network = match resolve_opt_string(matches, file, "network") {
        Some(p) => Some(model_io::load_network(Path::new(&p)).map_err(from_core)?),
        None => None,
    };
    let weighting = match &network {
        Some(net) => Weighting::Confidence(net),
        None => Weighting::Uniform,
    };
    let report = oob_evaluate(&model, dataset, weighting).map_err(from_core)?;
    match report.accuracy {
        Some(acc) => println!(
            "OOB accuracy {:.4} over {} samples ({} excluded)",
            acc, report.evaluated, report.excluded
        ),
        None => println!(
            "OOB accuracy undefined: every sample excluded ({})",
            report.excluded
        ),
    }
    print!("{}", report.confusion.to_display_string());
    Ok(())
}

fn run_sweep(
    matches: &ArgMatches,
    file: &FileConfig,
    dataset: &lep_core::data::Dataset,
) -> CmdResult<()> {
    let ls_paths: Vec<String> = matches
        .get_many::<String>("ls-model")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let rs_paths: Vec<String> = matches
        .get_many::<String>("rs-model")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    if ls_paths.is_empty() || ls_paths.len() != rs_paths.len() {
        return Err(CmdError::config(
            "sweep mode needs matching --ls-model/--rs-model lists (one pair per locality)",
        ));
    }
    let network_path = resolve_opt_string(matches, file, "network")
        .ok_or_else(|| CmdError::config("sweep mode requires --network for the WLS variant"))?;
    let network = model_io::load_network(Path::new(&network_path)).map_err(from_core)?;

    let mut artifacts = Vec::new();
    for (ls, rs) in ls_paths.iter().zip(&rs_paths) {
        let ls = model_io::load_forest(Path::new(ls)).map_err(from_core)?;
        let rs = model_io::load_forest(Path::new(rs)).map_err(from_core)?;
        artifacts.push(SweepArtifacts {
            locality: ls.config.locality,
            rs,
            ls,
        });
    }

    let regions_raw = resolve_string(matches, file, "regions", "none,eyes,mouth");
    let mut regions = Vec::new();
    for token in regions_raw.split(',') {
        let token = token.trim();
        match token {
            "none" => regions.push(None),
            _ => match OccludeRegion::parse(token) {
                Some(r) => regions.push(Some(r)),
                None => {
                    return Err(CmdError::config(format!("unknown region {token:?}")));
                }
            },
        }
    }
    if regions.is_empty() {
        return Err(CmdError::config("empty region list"));
    }

    let margin: f64 = resolve(matches, file, "margin", 20.0)?;
    let jitter: Option<f64> = match resolve_opt_string(matches, file, "jitter") {
        Some(raw) => Some(
            raw.parse()
                .map_err(|_| CmdError::config(format!("invalid value {raw:?} for --jitter")))?,
        ),
        None => None,
    };
    let seed: u64 = resolve(matches, file, "seed", 1)?;

    let rows = occlusion_sweep(
        &artifacts, &network, dataset, &regions, margin, jitter, seed,
    )
    .map_err(from_core)?;

    let mut csv = String::from(SweepRow::CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    match resolve_opt_string(matches, file, "out") {
        Some(out) => {
            let path = ensure_parent(&out)?;
            std::fs::write(&path, &csv).map_err(|e| CmdError::data(format!("{out}: {e}")))?;
            println!("{} sweep rows -> {}", rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
