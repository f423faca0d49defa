//! Action-Unit detection over LEP features: one small binary forest per AU,
//! a root-feature census, AU-specific confidence and heat maps.
//!
//! The AU layer never looks at pixels. Its only feature template reads one
//! component of the flattened LEP field, with thresholds drawn uniformly in
//! [0, 1]. Under the M2 strategy the feature vector concatenates the LEP
//! fields of several source models (one per expression dataset); M1 instead
//! trains a single source model on merged datasets, so both strategies meet
//! here as "one or more source models".

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::IntegralChannels;
use crate::error::{Error, Result};
use crate::features::{
    CandidateCounts, CandidatePool, Feature, FeatureSpace, LepVectorContext, ThresholdRanges,
};
use crate::forest::{
    derive_seed, grow_tree, predict_nodes, subject_bootstrap, LocalForest, Node, TrainConfig,
    TrainingSet,
};
use crate::lep::{lep_field, lep_field_subset};
use crate::mesh::Shape;

/// How the LEP layer under an AU model was assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuStrategy {
    /// One source model trained on merged expression datasets.
    M1,
    /// Concatenated LEP features from per-dataset source models.
    M2,
}

impl AuStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuStrategy::M1 => "m1",
            AuStrategy::M2 => "m2",
        }
    }
}

/// AU-layer training hyperparameters; 50 trees and 100 candidate LEP
/// components with 25 thresholds each, all in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuTrainConfig {
    pub trees: usize,
    pub subject_fraction: f64,
    pub candidates: usize,
    pub thresholds_per_feature: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for AuTrainConfig {
    fn default() -> Self {
        AuTrainConfig {
            trees: 50,
            subject_fraction: 0.632,
            candidates: 100,
            thresholds_per_feature: 25,
            max_depth: 30,
            min_samples_leaf: 1,
            seed: 1,
        }
    }
}

impl AuTrainConfig {
    fn as_tree_config(&self) -> TrainConfig {
        TrainConfig {
            trees: self.trees,
            subject_fraction: self.subject_fraction,
            counts: CandidateCounts {
                phi1: 0,
                phi2: 0,
                phi3: 0,
                phi0: self.candidates,
            },
            thresholds_per_feature: self.thresholds_per_feature,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// One AU tree: nodes plus out-of-bag subject bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuTree {
    pub nodes: Vec<Node>,
    pub oob_subjects: Vec<String>,
}

impl AuTree {
    pub fn is_oob_for(&self, subject: &str) -> bool {
        self.oob_subjects
            .binary_search_by(|s| s.as_str().cmp(subject))
            .is_ok()
    }
}

/// Binary detector for one AU with its root-feature census
/// `N[triangle * n_labels + label]`, summed over source models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuDetector {
    pub trees: Vec<AuTree>,
    pub census: Vec<u32>,
}

impl AuDetector {
    /// Census marginalized over expression labels: `N_m(triangle)`.
    pub fn census_by_triangle(&self, n_labels: usize) -> Vec<u32> {
        self.census
            .chunks(n_labels)
            .map(|c| c.iter().sum())
            .collect()
    }
}

/// The second-layer AU model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuForest {
    pub id: String,
    pub strategy: AuStrategy,
    /// Ids of the LEP source models, in concatenation order.
    pub source_model_ids: Vec<String>,
    /// Expression dictionary of the LEP layer.
    pub classes: Vec<String>,
    pub n_triangles: usize,
    pub au_ids: Vec<String>,
    /// One detector per AU id; `None` when the AU was skipped for having
    /// single-class labels.
    pub detectors: Vec<Option<AuDetector>>,
    pub config: AuTrainConfig,
}

impl AuForest {
    pub fn n_labels(&self) -> usize {
        self.classes.len()
    }

    pub fn n_models(&self) -> usize {
        self.source_model_ids.len()
    }

    pub fn feature_len(&self) -> usize {
        self.n_models() * self.n_triangles * self.n_labels()
    }

    pub fn detector(&self, au: &str) -> Option<&AuDetector> {
        self.au_ids
            .iter()
            .position(|a| a == au)
            .and_then(|i| self.detectors[i].as_ref())
    }
}

/// Flattens LEP fields of one image across source models into the AU
/// feature vector (model-major, then triangle, then label; uncovered
/// triangles filled with the uniform prior).
pub fn extract_lep_features(
    models: &[&LocalForest],
    channels: &IntegralChannels,
    shape: &Shape,
) -> Result<Vec<f64>> {
    extract_lep_features_for(models, channels, shape, None)
}

/// Same as [`extract_lep_features`], but each model only uses the trees
/// whose bootstrap excluded `subject` (the OOB protocol). Models without
/// any OOB tree for the subject fall back to all trees (cross-dataset
/// sources never saw the subject in the first place).
pub fn extract_lep_features_oob(
    models: &[&LocalForest],
    channels: &IntegralChannels,
    shape: &Shape,
    subject: &str,
) -> Result<Vec<f64>> {
    extract_lep_features_for(models, channels, shape, Some(subject))
}

fn extract_lep_features_for(
    models: &[&LocalForest],
    channels: &IntegralChannels,
    shape: &Shape,
    oob_subject: Option<&str>,
) -> Result<Vec<f64>> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidInput("no LEP source models".into()))?;
    for m in models {
        if m.scheme_id() != first.scheme_id()
            || m.n_triangles() != first.n_triangles()
            || m.classes != first.classes
        {
            return Err(Error::Incompatible(
                "LEP source models must share scheme, mesh size and classes".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(models.len() * first.n_triangles() * first.n_classes());
    for model in models {
        let ctx = model.image_context(channels, shape)?;
        let field = match oob_subject {
            Some(subject) => {
                let oob = model.oob_trees_for(subject);
                if oob.is_empty() {
                    lep_field(model, &ctx)
                } else {
                    lep_field_subset(model, &ctx, &oob)
                }
            }
            None => lep_field(model, &ctx),
        };
        out.extend(field.flatten_with(1.0 / model.n_classes() as f64));
    }
    Ok(out)
}

/// AU training samples: LEP feature vectors, subjects and per-AU labels
/// (`None` marks a missing annotation; the sample is excluded for that AU).
pub struct AuSamples {
    pub features: Vec<Vec<f64>>,
    pub subjects: Vec<String>,
    /// `labels[sample][au_index]`.
    pub labels: Vec<Vec<Option<bool>>>,
}

struct AuBoundSet<'a> {
    samples: &'a AuSamples,
    /// Indices of samples labelled for the current AU.
    indices: Vec<usize>,
    labels: Vec<usize>,
    n_labels: usize,
    /// Per-model triangle count (LEP components use local triangle indices).
    n_triangles: usize,
}

impl TrainingSet for AuBoundSet<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }
    fn n_classes(&self) -> usize {
        2
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
    fn subject(&self, i: usize) -> &str {
        &self.samples.subjects[self.indices[i]]
    }
    fn eval(&self, i: usize, feature: &Feature) -> f64 {
        LepVectorContext::new(
            &self.samples.features[self.indices[i]],
            self.n_labels,
            self.n_triangles,
        )
        .eval(feature)
    }
}

/// Trains one independent binary forest per AU over the LEP feature space.
/// AUs whose labelled samples are single-class are skipped (detector =
/// `None`). The root-feature census is tallied per detector at completion.
#[allow(clippy::too_many_arguments)]
pub fn train_au_forest(
    samples: &AuSamples,
    au_ids: &[String],
    strategy: AuStrategy,
    source_model_ids: Vec<String>,
    classes: Vec<String>,
    n_triangles: usize,
    cfg: &AuTrainConfig,
) -> Result<AuForest> {
    let n = samples.features.len();
    if n == 0 {
        return Err(Error::Train("no AU training samples".into()));
    }
    if samples.subjects.len() != n || samples.labels.len() != n {
        return Err(Error::Train("AU sample field lengths disagree".into()));
    }
    let n_models = source_model_ids.len().max(1);
    let n_labels = classes.len();
    let feature_len = n_models * n_triangles * n_labels;
    if samples.features.iter().any(|f| f.len() != feature_len) {
        return Err(Error::Train(format!(
            "LEP feature vectors must have {feature_len} components"
        )));
    }

    let tree_cfg = cfg.as_tree_config();
    let pool = CandidatePool::lep_space(n_models, n_labels, n_triangles);
    let ranges = ThresholdRanges::default(); // phi0 thresholds are uniform in [0, 1]

    let detectors: Result<Vec<Option<AuDetector>>> = au_ids
        .par_iter()
        .enumerate()
        .map(|(au_idx, _)| {
            let indices: Vec<usize> = (0..n)
                .filter(|&i| samples.labels[i][au_idx].is_some())
                .collect();
            let labels: Vec<usize> = indices
                .iter()
                .map(|&i| usize::from(samples.labels[i][au_idx].unwrap()))
                .collect();
            let has_both = labels.contains(&0) && labels.contains(&1);
            if !has_both {
                return Ok(None); // single-class AU: skipped
            }
            let bound = AuBoundSet {
                samples,
                indices,
                labels,
                n_labels,
                n_triangles,
            };
            let trees: Result<Vec<AuTree>> = (0..cfg.trees)
                .map(|t| {
                    let stream = ((au_idx as u64) << 32) | t as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
                    let (in_bag, oob_subjects) =
                        subject_bootstrap(&bound, cfg.subject_fraction, &mut rng)?;
                    let nodes = grow_tree(&bound, &in_bag, &pool, &ranges, &tree_cfg, &mut rng)?;
                    Ok(AuTree {
                        nodes,
                        oob_subjects,
                    })
                })
                .collect();
            let trees = trees?;

            // root-feature census, summed over source models (triangle
            // indices in LEP components are already per-model)
            let mut census = vec![0u32; n_triangles * n_labels];
            for tree in &trees {
                if let Node::Split {
                    feature:
                        Feature::LepComponent {
                            label, triangle, ..
                        },
                    ..
                } = &tree.nodes[0]
                {
                    census[triangle * n_labels + label] += 1;
                }
            }
            Ok(Some(AuDetector { trees, census }))
        })
        .collect();

    let id = format!(
        "au-{}-{:016x}",
        strategy.as_str(),
        derive_seed(cfg.seed, 0xA0 ^ (n as u64) << 24 ^ au_ids.len() as u64)
    );
    Ok(AuForest {
        id,
        strategy,
        source_model_ids,
        classes,
        n_triangles,
        au_ids: au_ids.to_vec(),
        detectors: detectors?,
        config: cfg.clone(),
    })
}

fn vote_fraction(
    forest: &AuForest,
    detector: &AuDetector,
    features: &[f64],
    trees: &[usize],
) -> f64 {
    let ctx = LepVectorContext::new(features, forest.n_labels(), forest.n_triangles);
    let active = trees
        .iter()
        .filter(|&&t| predict_nodes(&detector.trees[t].nodes, &ctx) == 1)
        .count();
    active as f64 / trees.len().max(1) as f64
}

/// Per-AU activation score: the fraction of trees voting "active".
/// Skipped AUs yield `None`.
pub fn predict_au(forest: &AuForest, features: &[f64]) -> Result<Vec<Option<f64>>> {
    if features.len() != forest.feature_len() {
        return Err(Error::Incompatible(format!(
            "feature vector of {} components, model expects {}",
            features.len(),
            forest.feature_len()
        )));
    }
    Ok(forest
        .detectors
        .iter()
        .map(|d| {
            d.as_ref().map(|det| {
                let all: Vec<usize> = (0..det.trees.len()).collect();
                vote_fraction(forest, det, features, &all)
            })
        })
        .collect())
}

/// Activation score of one AU using only trees that are OOB for `subject`;
/// `None` when the AU was skipped or no tree is OOB.
pub fn predict_au_oob(
    forest: &AuForest,
    au_index: usize,
    features: &[f64],
    subject: &str,
) -> Option<f64> {
    let detector = forest.detectors[au_index].as_ref()?;
    let oob: Vec<usize> = (0..detector.trees.len())
        .filter(|&t| detector.trees[t].is_oob_for(subject))
        .collect();
    if oob.is_empty() {
        return None;
    }
    Some(vote_fraction(forest, detector, features, &oob))
}

/// AU-specific confidence: the census-weighted mean of the per-triangle
/// confidences. `None` when the census is all zero (every tree is a leaf).
pub fn au_confidence(detector: &AuDetector, n_labels: usize, tri_conf: &[f64]) -> Option<f64> {
    let by_triangle = detector.census_by_triangle(n_labels);
    let total: u32 = by_triangle.iter().sum();
    if total == 0 {
        return None;
    }
    let weighted: f64 = by_triangle
        .iter()
        .zip(tri_conf)
        .map(|(&n, &a)| n as f64 * a)
        .sum();
    Some(weighted / total as f64)
}

/// Census proportions per triangle (marginalized over expression labels).
/// `None` when the census is all zero.
pub fn heatmap(detector: &AuDetector, n_labels: usize) -> Option<Vec<f64>> {
    let by_triangle = detector.census_by_triangle(n_labels);
    let total: u32 = by_triangle.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        by_triangle
            .iter()
            .map(|&n| n as f64 / total as f64)
            .collect(),
    )
}

/// Census proportions per (triangle, expression label) pair.
pub fn heatmap_by_label(detector: &AuDetector, n_labels: usize) -> Option<Vec<Vec<f64>>> {
    let total: u32 = detector.census.iter().sum();
    if total == 0 {
        return None;
    }
    Some(
        detector
            .census
            .chunks(n_labels)
            .map(|c| c.iter().map(|&n| n as f64 / total as f64).collect())
            .collect(),
    )
}
