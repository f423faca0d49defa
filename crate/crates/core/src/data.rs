//! Dataset manifests, PGM/landmark ingestion, the synthetic face generator
//! and synthetic occlusion overlays.
//!
//! The manifest is a small CSV (`image,subject,expression,landmarks,aus`)
//! with optional directive comments declaring the dataset id, the expression
//! dictionary and the AU list. The synthetic generator produces procedural
//! faces whose class signal placement (mouth, eyes, everywhere) is known by
//! construction, so protocol-level properties can be tested without any
//! licensed corpus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channels::{compute_channels, GrayImage, IntegralChannels};
use crate::error::{Error, Result};
use crate::forest::{derive_seed, ExpressionSamples};
use crate::mesh::{LandmarkScheme, Point, Shape, SubpartGrouping};

// ---------------------------------------------------------------------------
// PGM I/O

/// Reads a binary (P5) PGM file with maxval <= 255.
pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::parse(path, 1, msg))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of PGM header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let width: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    GrayImage::new(width, height, bytes[pos..pos + need].to_vec()).map_err(|e| e.to_string())
}

/// Writes a binary (P5) PGM file.
pub fn save_pgm(image: &GrayImage, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Manifests

/// One manifest row. `aus` maps AU id to activation (`None` encodes '?').
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: String,
    pub subject: String,
    pub expression: Option<String>,
    pub landmarks: String,
    pub aus: BTreeMap<String, Option<bool>>,
}

/// A validated dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub id: String,
    pub base_dir: PathBuf,
    /// Expression dictionary, either declared via `# labels:` or inferred
    /// (sorted) from the records.
    pub labels: Vec<String>,
    /// AU ids, declared via `# aus:` or inferred (sorted).
    pub au_ids: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

const MANIFEST_HEADER: &str = "image,subject,expression,landmarks,aus";

fn parse_au_field(
    field: &str,
    path: &Path,
    lineno: usize,
) -> Result<BTreeMap<String, Option<bool>>> {
    let mut aus = BTreeMap::new();
    if field.is_empty() {
        return Ok(aus);
    }
    for token in field.split(';') {
        let Some((id, value)) = token.split_once(':') else {
            return Err(Error::parse(
                path,
                lineno,
                format!("AU token {token:?} is not id:value"),
            ));
        };
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty AU id"));
        }
        let value = match value {
            "0" => Some(false),
            "1" => Some(true),
            "?" => None,
            other => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("AU value {other:?} not in {{0,1,?}}"),
                ))
            }
        };
        if aus.insert(id.to_string(), value).is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate AU id {id:?}"),
            ));
        }
    }
    Ok(aus)
}

impl DatasetManifest {
    /// Parses and validates a manifest file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let default_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Self::parse(&text, base_dir, default_id, path)
    }

    fn parse(text: &str, base_dir: PathBuf, default_id: String, path: &Path) -> Result<Self> {
        let mut id = default_id;
        let mut declared_labels: Option<Vec<String>> = None;
        let mut declared_aus: Option<Vec<String>> = None;
        let mut header_seen = false;
        let mut records = Vec::new();
        let mut keys = std::collections::HashSet::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(directive) = line.strip_prefix('#') {
                let directive = directive.trim();
                if let Some(v) = directive.strip_prefix("dataset:") {
                    id = v.trim().to_string();
                } else if let Some(v) = directive.strip_prefix("labels:") {
                    declared_labels = Some(v.split(',').map(|s| s.trim().to_string()).collect());
                } else if let Some(v) = directive.strip_prefix("aus:") {
                    declared_aus = Some(v.split(',').map(|s| s.trim().to_string()).collect());
                }
                continue;
            }
            if !header_seen {
                if line != MANIFEST_HEADER {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("expected header {MANIFEST_HEADER:?}"),
                    ));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 5 comma-separated fields, got {}", fields.len()),
                ));
            }
            let (image, subject, expression, landmarks, aus) =
                (fields[0], fields[1], fields[2], fields[3], fields[4]);
            if image.is_empty() || landmarks.is_empty() {
                return Err(Error::parse(path, lineno, "empty image or landmarks path"));
            }
            if subject.is_empty() {
                return Err(Error::parse(path, lineno, "empty subject id"));
            }
            let expression = match expression {
                "-" | "" => None,
                name => {
                    if let Some(labels) = &declared_labels {
                        if !labels.iter().any(|l| l == name) {
                            return Err(Error::parse(
                                path,
                                lineno,
                                format!("unknown expression label {name:?}"),
                            ));
                        }
                    }
                    Some(name.to_string())
                }
            };
            let aus = parse_au_field(aus, path, lineno)?;
            if let Some(declared) = &declared_aus {
                if let Some(unknown) = aus.keys().find(|k| !declared.contains(k)) {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("unknown AU id {unknown:?}"),
                    ));
                }
            }
            if !keys.insert((image.to_string(), subject.to_string())) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("duplicate (image, subject) pair ({image}, {subject})"),
                ));
            }
            records.push(ManifestRecord {
                image: image.to_string(),
                subject: subject.to_string(),
                expression,
                landmarks: landmarks.to_string(),
                aus,
            });
        }
        if !header_seen {
            return Err(Error::parse(path, 1, "missing manifest header"));
        }

        let labels = declared_labels.unwrap_or_else(|| {
            let mut l: Vec<String> = records
                .iter()
                .filter_map(|r| r.expression.clone())
                .collect();
            l.sort();
            l.dedup();
            l
        });
        let au_ids = declared_aus.unwrap_or_else(|| {
            let mut a: Vec<String> = records.iter().flat_map(|r| r.aus.keys().cloned()).collect();
            a.sort();
            a.dedup();
            a
        });
        Ok(DatasetManifest {
            id,
            base_dir,
            labels,
            au_ids,
            records,
        })
    }

    /// Serializes the manifest back to its text form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# dataset: {}\n", self.id));
        if !self.labels.is_empty() {
            out.push_str(&format!("# labels: {}\n", self.labels.join(",")));
        }
        if !self.au_ids.is_empty() {
            out.push_str(&format!("# aus: {}\n", self.au_ids.join(",")));
        }
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for r in &self.records {
            let aus = r
                .aus
                .iter()
                .map(|(id, v)| {
                    let v = match v {
                        Some(true) => "1",
                        Some(false) => "0",
                        None => "?",
                    };
                    format!("{id}:{v}")
                })
                .collect::<Vec<_>>()
                .join(";");
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image,
                r.subject,
                r.expression.as_deref().unwrap_or("-"),
                r.landmarks,
                aus
            ));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Loads every referenced image and landmark file and computes the
    /// integral channels.
    pub fn load_dataset(&self, scheme: Arc<LandmarkScheme>) -> Result<Dataset> {
        let loaded: Result<Vec<(GrayImage, Shape)>> = self
            .records
            .par_iter()
            .map(|r| {
                let image = load_pgm(&self.base_dir.join(&r.image))?;
                let shape = Shape::load(&self.base_dir.join(&r.landmarks), scheme.clone())?;
                Ok((image, shape))
            })
            .collect();
        let loaded = loaded?;

        let mut samples = Vec::with_capacity(self.records.len());
        for (record, (image, shape)) in self.records.iter().zip(loaded) {
            let label = match &record.expression {
                Some(name) => {
                    Some(self.labels.iter().position(|l| l == name).ok_or_else(|| {
                        Error::InvalidInput(format!("label {name:?} not in dictionary"))
                    })?)
                }
                None => None,
            };
            let aus = self
                .au_ids
                .iter()
                .map(|id| record.aus.get(id).copied().flatten())
                .collect();
            samples.push(SampleSource {
                id: record.image.clone(),
                image,
                shape,
                label,
                subject: record.subject.clone(),
                aus,
            });
        }
        Dataset::from_sources(scheme, self.labels.clone(), self.au_ids.clone(), samples)
    }
}

// ---------------------------------------------------------------------------
// Datasets

/// One loaded sample: raster, integral channels, aligned shape, labels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub channels: IntegralChannels,
    pub shape: Shape,
    pub label: Option<usize>,
    pub subject: String,
    /// Parallel to `Dataset::au_ids`; `None` = unlabeled for that AU.
    pub aus: Vec<Option<bool>>,
}

struct SampleSource {
    id: String,
    image: GrayImage,
    shape: Shape,
    label: Option<usize>,
    subject: String,
    aus: Vec<Option<bool>>,
}

/// An in-memory dataset with precomputed integral channels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scheme: Arc<LandmarkScheme>,
    /// Expression dictionary; sample labels index into it.
    pub labels: Vec<String>,
    pub au_ids: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    fn from_sources(
        scheme: Arc<LandmarkScheme>,
        labels: Vec<String>,
        au_ids: Vec<String>,
        sources: Vec<SampleSource>,
    ) -> Result<Self> {
        let samples: Result<Vec<Sample>> = sources
            .into_par_iter()
            .map(|s| {
                let channels = compute_channels(&s.image)?;
                Ok(Sample {
                    id: s.id,
                    image: s.image,
                    channels,
                    shape: s.shape,
                    label: s.label,
                    subject: s.subject,
                    aus: s.aus,
                })
            })
            .collect();
        Ok(Dataset {
            scheme,
            labels,
            au_ids,
            samples: samples?,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// View of the expression-labeled samples for forest training.
    pub fn expression_samples(&self) -> ExpressionSamples<'_> {
        let mut channels = Vec::new();
        let mut shapes = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        for s in &self.samples {
            if let Some(label) = s.label {
                channels.push(&s.channels);
                shapes.push(&s.shape);
                labels.push(label);
                subjects.push(s.subject.clone());
            }
        }
        ExpressionSamples {
            channels,
            shapes,
            labels,
            subjects,
            class_names: self.labels.clone(),
        }
    }

    /// Writes images, landmark files and a manifest under `dir`.
    pub fn write_dir(&self, dir: &Path, dataset_id: &str) -> Result<PathBuf> {
        let img_dir = dir.join("images");
        let lm_dir = dir.join("landmarks");
        std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        std::fs::create_dir_all(&lm_dir).map_err(|e| Error::io(&lm_dir, e))?;
        let mut records = Vec::with_capacity(self.samples.len());
        for sample in &self.samples {
            let image_rel = format!("images/{}.pgm", sample.id);
            let lm_rel = format!("landmarks/{}.txt", sample.id);
            save_pgm(&sample.image, &dir.join(&image_rel))?;
            sample.shape.save(&dir.join(&lm_rel))?;
            let mut aus = BTreeMap::new();
            for (id, v) in self.au_ids.iter().zip(&sample.aus) {
                if let Some(v) = v {
                    aus.insert(id.clone(), Some(*v));
                }
            }
            records.push(ManifestRecord {
                image: image_rel,
                subject: sample.subject.clone(),
                expression: sample.label.map(|l| self.labels[l].clone()),
                landmarks: lm_rel,
                aus,
            });
        }
        let manifest = DatasetManifest {
            id: dataset_id.to_string(),
            base_dir: dir.to_path_buf(),
            labels: self.labels.clone(),
            au_ids: self.au_ids.clone(),
            records,
        };
        let path = dir.join("manifest.csv");
        manifest.save(&path)?;
        Ok(path)
    }
}

// ---------------------------------------------------------------------------
// Synthetic occlusions

/// Face region to occlude. Eyes include the eyebrows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccludeRegion {
    Eyes,
    Mouth,
}

impl OccludeRegion {
    pub fn as_str(&self) -> &'static str {
        match self {
            OccludeRegion::Eyes => "eyes",
            OccludeRegion::Mouth => "mouth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eyes" => Some(OccludeRegion::Eyes),
            "mouth" => Some(OccludeRegion::Mouth),
            _ => None,
        }
    }

    fn landmark_set<'a>(&self, scheme: &'a LandmarkScheme) -> &'a [usize] {
        match self {
            OccludeRegion::Eyes => &scheme.eyes_region,
            OccludeRegion::Mouth => &scheme.mouth_region,
        }
    }
}

/// Pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OcclusionBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Overlays uniform noise over the bounding box of the region's landmarks,
/// expanded by `margin` pixels (default 20 in the CLI). When
/// `landmark_jitter` is set, landmarks inside the box are perturbed by
/// Gaussian noise with sigma `landmark_jitter * iod`, emulating the
/// alignment degradation occlusions cause.
pub fn occlude(
    image: &GrayImage,
    shape: &Shape,
    region: OccludeRegion,
    margin: f64,
    landmark_jitter: Option<f64>,
    rng: &mut impl Rng,
) -> Result<(GrayImage, OcclusionBox, Shape)> {
    let indices = region.landmark_set(shape.scheme());
    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &i in indices {
        let p = shape.point(i);
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let (min_x, max_x) = (min_x - margin, max_x + margin);
    let (min_y, max_y) = (min_y - margin, max_y + margin);
    let (w, h) = (image.width() as f64, image.height() as f64);
    if max_x < 0.0 || max_y < 0.0 || min_x > w || min_y > h {
        return Err(Error::InvalidInput(
            "occlusion box lies entirely outside the image".into(),
        ));
    }
    let x0 = min_x.max(0.0).floor() as usize;
    let y0 = min_y.max(0.0).floor() as usize;
    let x1 = (max_x.ceil() as usize + 1).min(image.width());
    let y1 = (max_y.ceil() as usize + 1).min(image.height());
    let bbox = OcclusionBox { x0, y0, x1, y1 };

    let mut occluded = image.clone();
    for y in y0..y1 {
        for x in x0..x1 {
            occluded.set(x, y, rng.gen());
        }
    }

    let shape_out = match landmark_jitter {
        None => shape.clone(),
        Some(sigma_frac) => {
            let sigma = sigma_frac * shape.interocular_distance();
            let points: Vec<Point> = shape
                .points()
                .iter()
                .map(|&p| {
                    let inside =
                        p.x >= x0 as f64 && p.x < x1 as f64 && p.y >= y0 as f64 && p.y < y1 as f64;
                    if inside {
                        Point::new(p.x + sigma * gaussian(rng), p.y + sigma * gaussian(rng))
                    } else {
                        p
                    }
                })
                .collect();
            Shape::new(points, shape.scheme().clone())?
        }
    };
    Ok((occluded, bbox, shape_out))
}

// ---------------------------------------------------------------------------
// Synthetic faces

/// Canonical synthetic expression dictionary (alphabetical).
pub const SYNTH_CLASSES: [&str; 7] = [
    "anger", "disgust", "fear", "happy", "neutral", "sadness", "surprise",
];

/// Synthetic AU dictionary: each AU is active for a fixed subset of the
/// expression classes, mirroring how deformations drive muscle activations.
pub const SYNTH_AU_IDS: [&str; 12] = [
    "1", "2", "4", "5", "6", "7", "9", "12", "15", "17", "20", "25",
];

/// Which classes activate an AU (by class name).
pub fn synth_au_active(au: &str, class_name: &str) -> bool {
    let classes: &[&str] = match au {
        "1" => &["surprise"],
        "2" => &["fear", "surprise"],
        "4" => &["anger", "disgust"],
        "5" => &["fear"],
        "6" => &["happy"],
        "7" => &["anger"],
        "9" => &["disgust"],
        "12" => &["happy"],
        "15" => &["sadness"],
        "17" => &["anger", "sadness"],
        "20" => &["fear", "sadness"],
        "25" => &["happy", "surprise"],
        _ => &[],
    };
    classes.contains(&class_name)
}

/// Which synthetic landmark scheme to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthScheme {
    /// 17 points: brows, eyes, nose, mouth hexagon.
    Face17,
    /// 5 points: eyes, nose tip, mouth corners.
    Face5,
}

/// 17-point synthetic scheme: 0-3 brows (left outer/inner, right
/// inner/outer), 4-7 eyes (left outer/inner, right inner/outer), 8 nose
/// bridge, 9-10 nostrils, 11-16 mouth (left corner, top-left, top-right,
/// right corner, bottom-right, bottom-left).
pub fn synth17_scheme() -> Arc<LandmarkScheme> {
    LandmarkScheme::new(
        "synth17",
        17,
        vec![4, 5],
        vec![6, 7],
        (0..=7).collect(),
        (11..=16).collect(),
    )
    .expect("builtin scheme is valid")
}

/// 5-point toy scheme: 0 left eye, 1 right eye, 2 nose, 3 mouth-left,
/// 4 mouth-right.
pub fn synth5_scheme() -> Arc<LandmarkScheme> {
    LandmarkScheme::new("synth5", 5, vec![0], vec![1], vec![0, 1], vec![3, 4])
        .expect("builtin scheme is valid")
}

impl SynthScheme {
    pub fn scheme(&self) -> Arc<LandmarkScheme> {
        match self {
            SynthScheme::Face17 => synth17_scheme(),
            SynthScheme::Face5 => synth5_scheme(),
        }
    }

    /// Base landmark layout in unit coordinates (fractions of image size).
    fn base_layout(&self) -> Vec<(f64, f64)> {
        match self {
            SynthScheme::Face17 => vec![
                (0.20, 0.30), // 0 left brow outer
                (0.38, 0.28), // 1 left brow inner
                (0.62, 0.28), // 2 right brow inner
                (0.80, 0.30), // 3 right brow outer
                (0.24, 0.40), // 4 left eye outer
                (0.40, 0.40), // 5 left eye inner
                (0.60, 0.40), // 6 right eye inner
                (0.76, 0.40), // 7 right eye outer
                (0.50, 0.50), // 8 nose bridge
                (0.42, 0.62), // 9 left nostril
                (0.58, 0.62), // 10 right nostril
                (0.32, 0.78), // 11 mouth left corner
                (0.42, 0.75), // 12 mouth top-left
                (0.58, 0.75), // 13 mouth top-right
                (0.68, 0.78), // 14 mouth right corner
                (0.58, 0.84), // 15 mouth bottom-right
                (0.42, 0.84), // 16 mouth bottom-left
            ],
            SynthScheme::Face5 => vec![
                (0.29, 0.33), // 0 left eye
                (0.71, 0.33), // 1 right eye
                (0.50, 0.55), // 2 nose
                (0.35, 0.72), // 3 mouth left
                (0.65, 0.72), // 4 mouth right
            ],
        }
    }

    /// Default subpart grouping for the confidence network.
    pub fn grouping(&self) -> SubpartGrouping {
        match self {
            SynthScheme::Face17 => SubpartGrouping::new(
                [
                    vec![0, 1, 4, 5],
                    vec![2, 3, 6, 7],
                    vec![8, 9, 10],
                    vec![11, 12, 16],
                    vec![13, 14, 15],
                ],
                17,
            )
            .expect("builtin grouping is valid"),
            SynthScheme::Face5 => {
                SubpartGrouping::new([vec![0], vec![1], vec![2], vec![3], vec![4]], 5)
                    .expect("builtin grouping is valid")
            }
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "synth17" => Some(SynthScheme::Face17),
            "synth5" => Some(SynthScheme::Face5),
            _ => None,
        }
    }

    fn mouth_points(&self) -> &'static [usize] {
        match self {
            SynthScheme::Face17 => &[11, 12, 13, 14, 15, 16],
            SynthScheme::Face5 => &[3, 4],
        }
    }
}

/// Where the class signal lives in generated faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalPlacement {
    /// Only the mouth region carries class information.
    MouthOnly,
    /// Only the eye/brow region carries class information.
    EyesOnly,
    /// Mouth, eyes and nose all carry class information (mouth strongest).
    Mixed,
}

/// Synthetic dataset configuration. With `noise` at zero the class signal
/// is exact (Bayes accuracy 1.0 by construction); per-sample sub-pixel
/// translations still vary the rasters so samples are never duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub subjects: usize,
    pub classes: usize,
    /// Samples per subject per class.
    pub samples_per_class: usize,
    pub scheme: SynthScheme,
    pub image_size: usize,
    pub signal: SignalPlacement,
    /// Scales the per-class landmark deformations; 0 disables geometry cues.
    pub geometry_amplitude: f64,
    pub mouth_contrast: f64,
    pub eye_contrast: f64,
    pub nose_contrast: f64,
    /// Per-sample wobble (radians) on the eye grating orientation; keeps the
    /// eye signal separable but noisier than the mouth, so greedy training
    /// prefers mouth splits.
    pub eye_orientation_jitter: f64,
    /// Pixel noise sigma (gray levels).
    pub noise: f64,
    /// Per-subject landmark offset sigma, as a fraction of image size.
    pub subject_jitter: f64,
    pub with_au_labels: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            subjects: 10,
            classes: 7,
            samples_per_class: 10,
            scheme: SynthScheme::Face17,
            image_size: 96,
            signal: SignalPlacement::Mixed,
            geometry_amplitude: 1.0,
            mouth_contrast: 60.0,
            eye_contrast: 30.0,
            nose_contrast: 20.0,
            eye_orientation_jitter: 0.05,
            noise: 0.0,
            subject_jitter: 0.008,
            with_au_labels: false,
            seed: 1,
        }
    }
}

/// Per-class landmark deformations in unit coordinates (before the
/// amplitude scale). Eye points are never moved, keeping the inter-ocular
/// distance class-independent.
fn class_deformation(scheme: SynthScheme, class: usize, point: usize) -> (f64, f64) {
    let name = SYNTH_CLASSES[class];
    match scheme {
        SynthScheme::Face17 => match (name, point) {
            // anger: inner brows pulled down and together, slight frown
            ("anger", 1) => (0.01, 0.025),
            ("anger", 2) => (-0.01, 0.025),
            ("anger", 11) => (0.0, 0.012),
            ("anger", 14) => (0.0, 0.012),
            // disgust: nostrils and upper lip raised
            ("disgust", 9) => (0.0, -0.02),
            ("disgust", 10) => (0.0, -0.02),
            ("disgust", 12) => (0.0, -0.016),
            ("disgust", 13) => (0.0, -0.016),
            // fear: brows raised, mouth corners stretched outward
            ("fear", 0) => (0.0, -0.018),
            ("fear", 1) => (0.0, -0.022),
            ("fear", 2) => (0.0, -0.022),
            ("fear", 3) => (0.0, -0.018),
            ("fear", 11) => (-0.018, 0.0),
            ("fear", 14) => (0.018, 0.0),
            // happy: mouth corners raised and widened
            ("happy", 11) => (-0.012, -0.03),
            ("happy", 14) => (0.012, -0.03),
            ("happy", 12) => (0.0, -0.008),
            ("happy", 13) => (0.0, -0.008),
            // sadness: mouth corners dropped, outer brows raised a little
            ("sadness", 11) => (0.0, 0.03),
            ("sadness", 14) => (0.0, 0.03),
            ("sadness", 0) => (0.0, -0.01),
            ("sadness", 3) => (0.0, -0.01),
            // surprise: brows high, jaw dropped
            ("surprise", 0) => (0.0, -0.035),
            ("surprise", 1) => (0.0, -0.035),
            ("surprise", 2) => (0.0, -0.035),
            ("surprise", 3) => (0.0, -0.035),
            ("surprise", 15) => (0.0, 0.04),
            ("surprise", 16) => (0.0, 0.04),
            _ => (0.0, 0.0),
        },
        SynthScheme::Face5 => match (name, point) {
            ("anger", 3) | ("anger", 4) => (0.0, 0.012),
            ("happy", 3) => (-0.012, -0.03),
            ("happy", 4) => (0.012, -0.03),
            ("sadness", 3) | ("sadness", 4) => (0.0, 0.03),
            ("fear", 3) => (-0.018, 0.0),
            ("fear", 4) => (0.018, 0.0),
            ("surprise", 3) | ("surprise", 4) => (0.0, 0.035),
            ("disgust", 3) | ("disgust", 4) => (0.0, -0.015),
            _ => (0.0, 0.0),
        },
    }
}

struct Grating {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
    theta: f64,
    wavelength: f64,
    contrast: f64,
    phase: f64,
}

fn paint_grating(pixels: &mut [f64], size: usize, g: &Grating) {
    if g.contrast == 0.0 {
        return;
    }
    let x0 = ((g.cx - g.half_w).floor().max(0.0)) as usize;
    let x1 = ((g.cx + g.half_w).ceil() as usize).min(size);
    let y0 = ((g.cy - g.half_h).floor().max(0.0)) as usize;
    let y1 = ((g.cy + g.half_h).ceil() as usize).min(size);
    let (sin_t, cos_t) = g.theta.sin_cos();
    let k = 2.0 * std::f64::consts::PI / g.wavelength;
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 - g.cx;
            let dy = y as f64 - g.cy;
            let s = (k * (dx * cos_t + dy * sin_t) + g.phase).sin();
            pixels[y * size + x] += g.contrast * s;
        }
    }
}

/// Landmark groups anchoring each texture patch, with the patch half-size
/// in unit coordinates: (anchor landmarks, half_w, half_h). The grating is
/// painted around the mean of the anchor landmarks of the concrete sample,
/// so texture stays locked to the face exactly like tracked skin detail.
#[allow(clippy::type_complexity)]
fn texture_patches(
    scheme: SynthScheme,
) -> (
    Vec<(&'static [usize], f64, f64)>,
    (&'static [usize], f64, f64),
    (&'static [usize], f64, f64),
) {
    match scheme {
        SynthScheme::Face17 => (
            vec![
                (&[0usize, 1, 4, 5][..], 0.11, 0.085), // left eye + brow
                (&[2usize, 3, 6, 7][..], 0.11, 0.085), // right eye + brow
            ],
            (&[8usize, 9, 10][..], 0.080, 0.070), // nose
            (&[11usize, 12, 13, 14, 15, 16][..], 0.200, 0.095), // mouth
        ),
        SynthScheme::Face5 => (
            vec![(&[0usize][..], 0.10, 0.09), (&[1usize][..], 0.10, 0.09)],
            (&[2usize][..], 0.09, 0.08),
            (&[3usize, 4][..], 0.20, 0.10),
        ),
    }
}

/// Mean position of a set of landmarks.
fn anchor_center(points: &[Point], anchors: &[usize]) -> (f64, f64) {
    let n = anchors.len() as f64;
    let (sx, sy) = anchors.iter().fold((0.0, 0.0), |(sx, sy), &i| {
        (sx + points[i].x, sy + points[i].y)
    });
    (sx / n, sy / n)
}

/// Generates a procedural expression dataset. Class signal is carried by
/// oriented gratings (one orientation per class and region) and by landmark
/// deformations; the placement config decides which regions vary with the
/// class and which stay constant.
pub fn synth_generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.classes < 2 || cfg.classes > SYNTH_CLASSES.len() {
        return Err(Error::InvalidInput(format!(
            "synthetic classes must be in 2..={}, got {}",
            SYNTH_CLASSES.len(),
            cfg.classes
        )));
    }
    if cfg.subjects < 2 {
        return Err(Error::InvalidInput("need at least 2 subjects".into()));
    }
    if cfg.image_size < 32 {
        return Err(Error::InvalidInput("image size below 32 pixels".into()));
    }

    let scheme = cfg.scheme.scheme();
    let size = cfg.image_size;
    let s = size as f64;
    let layout = cfg.scheme.base_layout();
    let labels: Vec<String> = SYNTH_CLASSES[..cfg.classes]
        .iter()
        .map(|c| c.to_string())
        .collect();
    let au_ids: Vec<String> = if cfg.with_au_labels {
        SYNTH_AU_IDS.iter().map(|a| a.to_string()).collect()
    } else {
        Vec::new()
    };
    let (eye_patches, nose_patch, mouth_patch) = texture_patches(cfg.scheme);
    let wavelength = 0.057 * s;
    let class_theta =
        |class: usize| (class as f64 + 0.5) * std::f64::consts::PI / cfg.classes as f64;
    const NEUTRAL_THETA: f64 = 0.4;

    // Per-subject landmark offsets, fixed across the subject's samples.
    // Grating phases are anchored to the region centers and shared by all
    // subjects: local texture around a landmark is consistent across faces
    // (as with real lip or brow edges), so each landmark's descriptors form
    // tight per-class clusters the confidence network can capture.
    let subject_offsets: Vec<Vec<(f64, f64)>> = (0..cfg.subjects)
        .map(|subj| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5AB0 + subj as u64));
            layout
                .iter()
                .map(|_| {
                    (
                        cfg.subject_jitter * s * gaussian(&mut rng),
                        cfg.subject_jitter * s * gaussian(&mut rng),
                    )
                })
                .collect()
        })
        .collect();

    let mut sources = Vec::new();
    let mut sample_index = 0u64;
    for subj in 0..cfg.subjects {
        for class in 0..cfg.classes {
            for rep in 0..cfg.samples_per_class {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x100_000 + sample_index));
                sample_index += 1;

                let (tx, ty) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let geometry_on = |mouth_point: bool| match cfg.signal {
                    SignalPlacement::MouthOnly => mouth_point,
                    SignalPlacement::EyesOnly => !mouth_point,
                    SignalPlacement::Mixed => true,
                };
                let mouth_set = cfg.scheme.mouth_points();
                let points: Vec<Point> = layout
                    .iter()
                    .enumerate()
                    .map(|(k, &(ux, uy))| {
                        let (dx, dy) = class_deformation(cfg.scheme, class, k);
                        let apply = geometry_on(mouth_set.contains(&k));
                        let (dx, dy) = if apply {
                            (dx * cfg.geometry_amplitude, dy * cfg.geometry_amplitude)
                        } else {
                            (0.0, 0.0)
                        };
                        let (ox, oy) = subject_offsets[subj][k];
                        Point::new((ux + dx) * s + ox + tx, (uy + dy) * s + oy + ty)
                    })
                    .collect();
                let shape = Shape::new(points, scheme.clone())?;

                // textures: class-driven orientation where the signal lives,
                // a fixed orientation elsewhere
                let mut pixels = vec![128.0f64; size * size];
                let mouth_theta = match cfg.signal {
                    SignalPlacement::EyesOnly => NEUTRAL_THETA,
                    _ => class_theta(class),
                };
                let eye_theta = match cfg.signal {
                    SignalPlacement::MouthOnly => NEUTRAL_THETA,
                    _ => class_theta(class) + cfg.eye_orientation_jitter * gaussian(&mut rng),
                };
                let nose_theta = match cfg.signal {
                    SignalPlacement::Mixed => class_theta(class),
                    _ => NEUTRAL_THETA,
                };
                let points = shape.points();
                let (mcx, mcy) = anchor_center(points, mouth_patch.0);
                paint_grating(
                    &mut pixels,
                    size,
                    &Grating {
                        cx: mcx,
                        cy: mcy,
                        half_w: mouth_patch.1 * s,
                        half_h: mouth_patch.2 * s,
                        theta: mouth_theta,
                        wavelength,
                        contrast: cfg.mouth_contrast,
                        phase: 0.0,
                    },
                );
                for patch in &eye_patches {
                    let (ecx, ecy) = anchor_center(points, patch.0);
                    paint_grating(
                        &mut pixels,
                        size,
                        &Grating {
                            cx: ecx,
                            cy: ecy,
                            half_w: patch.1 * s,
                            half_h: patch.2 * s,
                            theta: eye_theta,
                            wavelength,
                            contrast: cfg.eye_contrast,
                            phase: 0.0,
                        },
                    );
                }
                let (ncx, ncy) = anchor_center(points, nose_patch.0);
                paint_grating(
                    &mut pixels,
                    size,
                    &Grating {
                        cx: ncx,
                        cy: ncy,
                        half_w: nose_patch.1 * s,
                        half_h: nose_patch.2 * s,
                        theta: nose_theta,
                        wavelength,
                        contrast: cfg.nose_contrast,
                        phase: 0.0,
                    },
                );
                if cfg.noise > 0.0 {
                    for p in &mut pixels {
                        *p += cfg.noise * gaussian(&mut rng);
                    }
                }
                let image = GrayImage::new(
                    size,
                    size,
                    pixels
                        .iter()
                        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
                        .collect(),
                )?;

                let aus = if cfg.with_au_labels {
                    au_ids
                        .iter()
                        .map(|id| Some(synth_au_active(id, &labels[class])))
                        .collect()
                } else {
                    Vec::new()
                };
                sources.push(SampleSource {
                    id: format!("subj{subj:02}_{}_{rep:02}", labels[class]),
                    image,
                    shape,
                    label: Some(class),
                    subject: format!("subj{subj:02}"),
                    aus,
                });
            }
        }
    }

    Dataset::from_sources(scheme, labels, au_ids, sources)
}
