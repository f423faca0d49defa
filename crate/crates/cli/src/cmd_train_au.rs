use std::path::Path;

use clap::ArgMatches;
use lep_core::au::{
    extract_lep_features, extract_lep_features_oob, predict_au_oob, train_au_forest, AuSamples,
    AuStrategy, AuTrainConfig,
};
use lep_core::eval::auc;
use lep_core::forest::LocalForest;
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, load_datasets, required_string, resolve, resolve_string,
    scheme_by_id, CmdError, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let manifests: Vec<String> = matches
        .get_many::<String>("manifest")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let scheme = scheme_by_id(&resolve_string(matches, &file, "scheme", "face49"))?;
    let out = required_string(matches, &file, "out")?;

    let model_paths: Vec<String> = matches
        .get_many::<String>("model")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let models: Vec<LocalForest> = model_paths
        .iter()
        .map(|p| model_io::load_forest(Path::new(p)).map_err(from_core))
        .collect::<CmdResult<_>>()?;
    let model_refs: Vec<&LocalForest> = models.iter().collect();

    let strategy = match resolve_string(matches, &file, "strategy", "auto").as_str() {
        "m1" => AuStrategy::M1,
        "m2" => AuStrategy::M2,
        "auto" => {
            if models.len() > 1 {
                AuStrategy::M2
            } else {
                AuStrategy::M1
            }
        }
        other => return Err(CmdError::config(format!("unknown strategy {other:?}"))),
    };

    let cfg = AuTrainConfig {
        trees: resolve(matches, &file, "trees", 50)?,
        subject_fraction: resolve(matches, &file, "subject-fraction", 0.632)?,
        candidates: resolve(matches, &file, "candidates", 100)?,
        thresholds_per_feature: resolve(matches, &file, "thresholds", 25)?,
        seed: resolve(matches, &file, "seed", 1)?,
        ..AuTrainConfig::default()
    };

    let dataset = load_datasets(&manifests, scheme)?;
    if dataset.au_ids.is_empty() {
        return Err(CmdError::data("the dataset carries no AU labels"));
    }

    // OOB LEP generation applies when a source model was trained on the
    // same subjects ("auto" probes the models' bootstrap bookkeeping)
    let oob_mode = resolve_string(matches, &file, "oob-leps", "auto");
    let use_oob = match oob_mode.as_str() {
        "on" => true,
        "off" => false,
        "auto" => dataset.samples.iter().any(|s| {
            models
                .iter()
                .any(|m| !m.oob_trees_for(&s.subject).is_empty())
        }),
        other => return Err(CmdError::config(format!("unknown oob-leps mode {other:?}"))),
    };

    let mut features = Vec::with_capacity(dataset.len());
    let mut subjects = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let f = if use_oob {
            extract_lep_features_oob(&model_refs, &s.channels, &s.shape, &s.subject)
        } else {
            extract_lep_features(&model_refs, &s.channels, &s.shape)
        }
        .map_err(from_core)?;
        features.push(f);
        subjects.push(s.subject.clone());
        labels.push(s.aus.clone());
    }
    let samples = AuSamples {
        features,
        subjects,
        labels,
    };

    let au_forest = train_au_forest(
        &samples,
        &dataset.au_ids,
        strategy,
        models.iter().map(|m| m.id.clone()).collect(),
        models[0].classes.clone(),
        models[0].n_triangles(),
        &cfg,
    )
    .map_err(from_core)?;

    let out_path = ensure_parent(&out)?;
    model_io::save_au_forest(&au_forest, &out_path).map_err(from_core)?;
    println!(
        "trained {} AU detectors ({} strategy, {} source models, oob-leps {}) -> {}",
        au_forest.detectors.iter().flatten().count(),
        au_forest.strategy.as_str(),
        au_forest.n_models(),
        if use_oob { "on" } else { "off" },
        out_path.display()
    );

    // per-AU OOB AUC report
    for (idx, au) in au_forest.au_ids.iter().enumerate() {
        if au_forest.detectors[idx].is_none() {
            println!("AU {au}: skipped (single-class labels)");
            continue;
        }
        let mut scores = Vec::new();
        let mut truth = Vec::new();
        for (i, s) in dataset.samples.iter().enumerate() {
            let Some(label) = s.aus[idx] else { continue };
            if let Some(score) = predict_au_oob(&au_forest, idx, &samples.features[i], &s.subject) {
                scores.push(score);
                truth.push(label);
            }
        }
        match auc(&scores, &truth) {
            Ok(roc) => println!(
                "AU {au}: OOB AUC {:.4} over {} samples",
                roc.auc,
                scores.len()
            ),
            Err(_) => println!("AU {au}: OOB AUC undefined (single-class OOB sample set)"),
        }
    }
    Ok(())
}
