//! Shared command plumbing: exit-code mapping, config-file resolution and
//! dataset loading/merging.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::ArgMatches;
use lep_core::data::{Dataset, DatasetManifest, Sample};
use lep_core::mesh::LandmarkScheme;
use lep_core::Error as CoreError;

/// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 training failure.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAIN: i32 = 4;

pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl CmdError {
    pub fn config(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CmdError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

/// Default mapping from library errors: I/O, parse and model-file problems
/// are data errors; training failures map to the training exit code;
/// invalid or incompatible inputs are configuration errors.
pub fn from_core(e: CoreError) -> CmdError {
    let code = match &e {
        CoreError::Io { .. } | CoreError::Parse { .. } | CoreError::Model(_) => EXIT_DATA,
        CoreError::Train(_) => EXIT_TRAIN,
        CoreError::InvalidInput(_) | CoreError::Incompatible(_) => EXIT_CONFIG,
    };
    CmdError {
        code,
        message: e.to_string(),
    }
}

pub type CmdResult<T> = Result<T, CmdError>;

/// `key = value` configuration file (lowest precedence after flags).
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig {
            values: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CmdError::config(format!("{}: {e}", path.display())))?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CmdError::config(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    idx + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn from_matches(matches: &ArgMatches) -> CmdResult<Self> {
        match matches.get_one::<String>("config") {
            Some(path) => Self::load(Path::new(path)),
            None => Ok(Self::empty()),
        }
    }

    fn get(&self, key: &str) -> Option<&String> {
        self.values.get(key)
    }
}

/// Resolves one option with precedence flag > config file > default.
pub fn resolve<T: FromStr>(
    matches: &ArgMatches,
    file: &FileConfig,
    key: &str,
    default: T,
) -> CmdResult<T> {
    let source = matches.get_one::<String>(key).or_else(|| file.get(key));
    match source {
        Some(raw) => raw
            .parse()
            .map_err(|_| CmdError::config(format!("invalid value {raw:?} for --{key}"))),
        None => Ok(default),
    }
}

pub fn resolve_string(matches: &ArgMatches, file: &FileConfig, key: &str, default: &str) -> String {
    matches
        .get_one::<String>(key)
        .or_else(|| file.get(key))
        .cloned()
        .unwrap_or_else(|| default.to_string())
}

pub fn resolve_opt_string(matches: &ArgMatches, file: &FileConfig, key: &str) -> Option<String> {
    matches
        .get_one::<String>(key)
        .or_else(|| file.get(key))
        .cloned()
}

pub fn required_string(matches: &ArgMatches, file: &FileConfig, key: &str) -> CmdResult<String> {
    resolve_opt_string(matches, file, key)
        .ok_or_else(|| CmdError::config(format!("missing required option --{key}")))
}

pub fn scheme_by_id(id: &str) -> CmdResult<Arc<LandmarkScheme>> {
    LandmarkScheme::builtin(id).ok_or_else(|| {
        CmdError::config(format!(
            "unknown landmark scheme {id:?} (builtin: face49, synth17, synth5)"
        ))
    })
}

/// Caps rayon's worker count; 0 keeps the default (all cores).
pub fn configure_jobs(matches: &ArgMatches) -> CmdResult<()> {
    let jobs: usize = match matches.get_one::<String>("jobs") {
        Some(raw) => raw
            .parse()
            .map_err(|_| CmdError::config(format!("invalid value {raw:?} for --jobs")))?,
        None => 0,
    };
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CmdError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Loads one or more manifests into a single dataset. Merging unions the
/// label and AU dictionaries (sorted) and prefixes subjects with the
/// manifest id, so subjects from different corpora can never collide.
pub fn load_datasets(paths: &[String], scheme: Arc<LandmarkScheme>) -> CmdResult<Dataset> {
    if paths.is_empty() {
        return Err(CmdError::config("at least one --manifest is required"));
    }
    let mut loaded = Vec::new();
    for path in paths {
        let manifest = DatasetManifest::load(Path::new(path)).map_err(from_core)?;
        let dataset = manifest.load_dataset(scheme.clone()).map_err(from_core)?;
        loaded.push((manifest.id, dataset));
    }
    if loaded.len() == 1 {
        return Ok(loaded.pop().unwrap().1);
    }

    let mut labels: Vec<String> = loaded
        .iter()
        .flat_map(|(_, d)| d.labels.iter().cloned())
        .collect();
    labels.sort();
    labels.dedup();
    let mut au_ids: Vec<String> = loaded
        .iter()
        .flat_map(|(_, d)| d.au_ids.iter().cloned())
        .collect();
    au_ids.sort();
    au_ids.dedup();

    let mut samples = Vec::new();
    for (id, dataset) in &loaded {
        for sample in &dataset.samples {
            let label = sample
                .label
                .map(|l| labels.iter().position(|x| x == &dataset.labels[l]).unwrap());
            let aus = au_ids
                .iter()
                .map(|au| {
                    dataset
                        .au_ids
                        .iter()
                        .position(|x| x == au)
                        .and_then(|i| sample.aus.get(i).copied().flatten())
                })
                .collect();
            samples.push(Sample {
                id: format!("{id}/{}", sample.id),
                image: sample.image.clone(),
                channels: sample.channels.clone(),
                shape: sample.shape.clone(),
                label,
                subject: format!("{id}:{}", sample.subject),
                aus,
            });
        }
    }
    Ok(Dataset {
        scheme,
        labels,
        au_ids,
        samples,
    })
}

/// Creates the parent directory of an output path if needed.
pub fn ensure_parent(path: &str) -> CmdResult<PathBuf> {
    let path = PathBuf::from(path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CmdError::data(format!("{}: {e}", parent.display())))?;
        }
    }
    Ok(path)
}
