use clap::ArgMatches;
use lep_core::data::{synth_generate, SignalPlacement, SynthScheme, SyntheticConfig};

use crate::common::{
    from_core, required_string, resolve, resolve_string, CmdError, CmdResult, FileConfig,
};

pub fn run(matches: &ArgMatches) -> CmdResult<()> {
    let file = FileConfig::from_matches(matches)?;
    let out = required_string(matches, &file, "out")?;
    let scheme_name = resolve_string(matches, &file, "scheme", "synth17");
    let scheme = SynthScheme::parse(&scheme_name)
        .ok_or_else(|| CmdError::config(format!("unknown synthetic scheme {scheme_name:?}")))?;
    let signal_name = resolve_string(matches, &file, "signal", "mixed");
    let signal = match signal_name.as_str() {
        "mouth" => SignalPlacement::MouthOnly,
        "eyes" => SignalPlacement::EyesOnly,
        "mixed" => SignalPlacement::Mixed,
        other => {
            return Err(CmdError::config(format!(
                "unknown signal placement {other:?}"
            )))
        }
    };

    let cfg = SyntheticConfig {
        subjects: resolve(matches, &file, "subjects", 10)?,
        classes: resolve(matches, &file, "classes", 7)?,
        samples_per_class: resolve(matches, &file, "samples", 10)?,
        scheme,
        image_size: resolve(matches, &file, "size", 96)?,
        signal,
        geometry_amplitude: resolve(matches, &file, "geometry", 1.0)?,
        mouth_contrast: resolve(matches, &file, "mouth-contrast", 60.0)?,
        eye_contrast: resolve(matches, &file, "eye-contrast", 30.0)?,
        nose_contrast: resolve(matches, &file, "nose-contrast", 20.0)?,
        eye_orientation_jitter: resolve(matches, &file, "eye-wobble", 0.05)?,
        noise: resolve(matches, &file, "noise", 0.0)?,
        subject_jitter: resolve(matches, &file, "subject-jitter", 0.008)?,
        with_au_labels: matches.get_flag("au-labels"),
        seed: resolve(matches, &file, "seed", 1)?,
    };

    let dataset = synth_generate(&cfg).map_err(from_core)?;
    let dir = std::path::PathBuf::from(&out);
    std::fs::create_dir_all(&dir).map_err(|e| CmdError::data(format!("{out}: {e}")))?;
    let id = resolve_string(matches, &file, "id", "synthetic");
    let manifest = dataset.write_dir(&dir, &id).map_err(from_core)?;
    println!(
        "wrote {} samples ({} classes, {} subjects) to {}",
        dataset.len(),
        dataset.labels.len(),
        cfg.subjects,
        manifest.display()
    );
    Ok(())
}
