use std::path::Path;
use std::time::Instant;

use clap::ArgMatches;
use lep_core::au::{au_confidence, extract_lep_features, predict_au};
use lep_core::channels::compute_channels;
use lep_core::confidence::triangle_confidence;
use lep_core::data::load_pgm;
use lep_core::forest::LocalForest;
use lep_core::lep::{aggregate, lep_field, weighted_aggregate};
use lep_core::mesh::Shape;
use lep_core::model_io;

use crate::common::{
    ensure_parent, from_core, required_string, resolve_opt_string, CmdError, CmdResult, FileConfig,
};

/// Runs channels -> confidence -> LEP -> AU on one image. The report is
/// deterministic (no timings); wall-clock per-stage timings go to stdout.
pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let image_path = required_string(matches, &file, "image")?;
    let landmarks_path = required_string(matches, &file, "landmarks")?;

    let model_paths: Vec<String> = matches
        .get_many::<String>("model")
        .map(|v| v.cloned().collect())
        .unwrap_or_default();
    let models: Vec<LocalForest> = model_paths
        .iter()
        .map(|p| model_io::load_forest(Path::new(p)).map_err(from_core))
        .collect::<CmdResult<_>>()?;
    let model_refs: Vec<&LocalForest> = models.iter().collect();
    let primary = &models[0];

    let network = match resolve_opt_string(matches, &file, "network") {
        Some(p) => Some(model_io::load_network(Path::new(&p)).map_err(from_core)?),
        None => None,
    };
    let au_model = match resolve_opt_string(matches, &file, "au-model") {
        Some(p) => Some(model_io::load_au_forest(Path::new(&p)).map_err(from_core)?),
        None => None,
    };
    if let Some(au) = &au_model {
        if au.n_models() != models.len() {
            return Err(CmdError::config(format!(
                "AU model expects {} LEP source models, {} given",
                au.n_models(),
                models.len()
            )));
        }
    }

    let image = load_pgm(Path::new(&image_path)).map_err(from_core)?;
    let shape = Shape::load(
        Path::new(&landmarks_path),
        primary.mean_shape.scheme.clone(),
    )
    .map_err(from_core)?;

    // stage 1: integral channels
    let t0 = Instant::now();
    let channels = compute_channels(&image).map_err(from_core)?;
    let t_channels = t0.elapsed();

    // stage 2: confidence weights
    let t0 = Instant::now();
    let confidences = match &network {
        Some(net) => Some(net.confidences(&channels, &shape).map_err(from_core)?),
        None => None,
    };
    let tri_conf = confidences
        .as_ref()
        .map(|c| triangle_confidence(&c.alphas, &primary.mesh));
    let t_confidence = t0.elapsed();

    // stage 3: LEP field + prediction
    let t0 = Instant::now();
    let ctx = primary
        .image_context(&channels, &shape)
        .map_err(from_core)?;
    let field = lep_field(primary, &ctx);
    let prediction = match &tri_conf {
        Some(weights) => match weighted_aggregate(&field, weights) {
            Ok(p) => p,
            Err(_) => aggregate(primary, &ctx), // total occlusion fallback
        },
        None => aggregate(primary, &ctx),
    };
    let t_lep = t0.elapsed();

    // stage 4: AU detection
    let t0 = Instant::now();
    let au_scores = match &au_model {
        Some(au) => {
            let features =
                extract_lep_features(&model_refs, &channels, &shape).map_err(from_core)?;
            Some((au, predict_au(au, &features).map_err(from_core)?))
        }
        None => None,
    };
    let t_au = t0.elapsed();

    // deterministic report
    let mut report = String::new();
    report.push_str(&format!("model,{}\n", primary.id));
    for (name, p) in primary.classes.iter().zip(&prediction.probabilities) {
        report.push_str(&format!("class,{name},{p}\n"));
    }
    report.push_str(&format!(
        "prediction,{}\n",
        primary.classes[prediction.label]
    ));
    for t in 0..field.n_triangles() {
        report.push_str(&format!("lep,{t}"));
        for l in 0..field.n_classes() {
            report.push_str(&format!(",{}", field.probabilities(t)[l]));
        }
        report.push_str(&format!(",{}\n", field.z(t)));
    }
    if let Some(conf) = &confidences {
        for (k, (e, a)) in conf.errors.iter().zip(&conf.alphas).enumerate() {
            report.push_str(&format!("confidence,{k},{e},{a}\n"));
        }
        for (t, a) in tri_conf.as_ref().unwrap().iter().enumerate() {
            report.push_str(&format!("triconf,{t},{a}\n"));
        }
    }
    if let Some((au, scores)) = &au_scores {
        for (idx, id) in au.au_ids.iter().enumerate() {
            let score = match scores[idx] {
                Some(s) => format!("{s}"),
                None => "skipped".to_string(),
            };
            let alpha = match (&tri_conf, &au.detectors[idx]) {
                (Some(tc), Some(det)) => au_confidence(det, au.n_labels(), tc)
                    .map_or("-".to_string(), |a| format!("{a}")),
                _ => "-".to_string(),
            };
            report.push_str(&format!("au,{id},{score},{alpha}\n"));
        }
    }

    match resolve_opt_string(matches, &file, "out") {
        Some(out) => {
            let path = ensure_parent(&out)?;
            std::fs::write(&path, &report).map_err(|e| CmdError::data(format!("{out}: {e}")))?;
        }
        None => print!("{report}"),
    }

    let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
    println!("timing,channels,{:.3}", ms(t_channels));
    println!("timing,confidence,{:.3}", ms(t_confidence));
    println!("timing,lep,{:.3}", ms(t_lep));
    println!("timing,au,{:.3}", ms(t_au));
    println!(
        "timing,total,{:.3}",
        ms(t_channels + t_confidence + t_lep + t_au)
    );
    Ok(())
}
