use std::path::Path;

use clap::ArgMatches;
use lep_core::au::{heatmap, heatmap_by_label};
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, required_string, resolve_opt_string, CmdError, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let model_path = required_string(matches, &file, "model")?;
    let model = model_io::load_au_forest(Path::new(&model_path)).map_err(from_core)?;
    let per_label = matches.get_flag("per-label");

    let mut out = String::new();
    if per_label {
        out.push_str("au,triangle,label,proportion\n");
    } else {
        out.push_str("au,triangle,proportion\n");
    }
    for (idx, au) in model.au_ids.iter().enumerate() {
        let Some(detector) = &model.detectors[idx] else {
            continue;
        };
        if per_label {
            let Some(map) = heatmap_by_label(detector, model.n_labels()) else {
                continue;
            };
            for (t, row) in map.iter().enumerate() {
                for (l, p) in row.iter().enumerate() {
                    if *p > 0.0 {
                        out.push_str(&format!("{au},{t},{},{p}\n", model.classes[l]));
                    }
                }
            }
        } else {
            let Some(map) = heatmap(detector, model.n_labels()) else {
                continue;
            };
            for (t, p) in map.iter().enumerate() {
                if *p > 0.0 {
                    out.push_str(&format!("{au},{t},{p}\n"));
                }
            }
        }
    }

    match resolve_opt_string(matches, &file, "out") {
        Some(path) => {
            let path = ensure_parent(&path)?;
            std::fs::write(&path, &out)
                .map_err(|e| CmdError::data(format!("{}: {e}", path.display())))?;
            println!("heat map table -> {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}
