use clap::ArgMatches;
use lep_core::eval::{oob_evaluate, Weighting};
use lep_core::features::CandidateCounts;
use lep_core::forest::{train_ls_rf, train_rs_rf, TrainConfig};
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, load_datasets, required_string, resolve, resolve_opt_string,
    resolve_string, scheme_by_id, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let manifests: Vec<String> = matches
        .get_many::<String>("manifest")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let scheme = scheme_by_id(&resolve_string(matches, &file, "scheme", "face49"))?;
    let out = required_string(matches, &file, "out")?;

    let cfg = TrainConfig {
        trees: resolve(matches, &file, "trees", 1000)?,
        locality: resolve(matches, &file, "locality", 0.1)?,
        subject_fraction: resolve(matches, &file, "subject-fraction", 0.632)?,
        counts: CandidateCounts {
            phi1: resolve(matches, &file, "phi1", 40)?,
            phi2: resolve(matches, &file, "phi2", 40)?,
            phi3: resolve(matches, &file, "phi3", 160)?,
            phi0: 0,
        },
        thresholds_per_feature: resolve(matches, &file, "thresholds", 25)?,
        max_depth: resolve(matches, &file, "max-depth", 30)?,
        min_samples_leaf: resolve(matches, &file, "min-leaf", 1)?,
        seed: resolve(matches, &file, "seed", 1)?,
    };

    let dataset = load_datasets(&manifests, scheme)?;
    let samples = dataset.expression_samples();
    let global = matches.get_flag("global");
    let model = if global {
        train_rs_rf(&samples, &cfg)
    } else {
        train_ls_rf(&samples, &cfg)
    }
    .map_err(from_core)?;

    let out_path = ensure_parent(&out)?;
    model_io::save_forest(&model, &out_path).map_err(from_core)?;
    println!(
        "trained {} ({} trees, {} classes, {} triangles) -> {}",
        model.kind.as_str(),
        model.trees.len(),
        model.n_classes(),
        model.n_triangles(),
        out_path.display()
    );

    if let Some(census_out) = resolve_opt_string(matches, &file, "census-out") {
        let census = model.root_census();
        let mut csv = String::from("triangle,fraction\n");
        for (t, f) in census.iter().enumerate() {
            csv.push_str(&format!("{t},{f}\n"));
        }
        let path = ensure_parent(&census_out)?;
        std::fs::write(&path, csv)
            .map_err(|e| crate::common::CmdError::data(format!("{census_out}: {e}")))?;
        println!("root-feature census -> {}", path.display());
    }

    if !matches.get_flag("no-report") {
        let report = oob_evaluate(&model, &dataset, Weighting::Uniform).map_err(from_core)?;
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

        let census = model.root_census();
        let mut ranked: Vec<(usize, f64)> = census.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let top: Vec<String> = ranked
            .iter()
            .take(5)
            .filter(|(_, f)| *f > 0.0)
            .map(|(t, f)| format!("t{t}:{f:.3}"))
            .collect();
        println!("root-feature census, top triangles: {}", top.join(" "));
    }
    Ok(())
}
