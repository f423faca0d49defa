//! Local-subspace random forest training: random facial masks, subject-level
//! balanced bagging, greedy Gini tree induction.
//!
//! Each tree of an LS-RF is grown on a connected set of mesh triangles (its
//! facial mask) covering roughly a fraction `R` of the face surface, and on a
//! class-balanced bootstrap drawn at the subject level. The baseline RS-RF
//! uses the same machinery with every mask set to the full mesh.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::IntegralChannels;
use crate::error::{Error, Result};
use crate::features::{
    sample_candidates, sample_thresholds, CandidateCounts, CandidatePool, Feature, FeatureSpace,
    ImageContext, ThresholdRanges,
};
use crate::mesh::{compute_mean_shape, triangulate, FacialMesh, MeanShape, Shape};

/// Stable per-stream seed derivation (splitmix64 over master xor stream), so
/// parallel and serial training consume identical random sequences.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A connected set of mesh triangles and the surface fraction it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacialMask {
    /// Sorted triangle indices.
    pub triangles: Vec<usize>,
    /// Covered fraction of the mean-shape surface.
    pub surface: f64,
}

impl FacialMask {
    pub fn full(mesh: &FacialMesh) -> Self {
        FacialMask {
            triangles: (0..mesh.len()).collect(),
            surface: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn contains(&self, t: usize) -> bool {
        self.triangles.binary_search(&t).is_ok()
    }
}

/// Grows a random connected mask: start from a uniform-random triangle, then
/// repeatedly add a uniform-random unused edge-neighbor of the region until
/// the accumulated surface reaches `locality`.
pub fn generate_mask(mesh: &FacialMesh, locality: f64, rng: &mut impl Rng) -> FacialMask {
    assert!(
        locality > 0.0 && locality <= 1.0,
        "locality must be in (0, 1]"
    );
    let n = mesh.len();
    let mut used = vec![false; n];
    let mut triangles = Vec::new();
    let mut frontier: Vec<usize> = Vec::new();

    let seed = rng.gen_range(0..n);
    used[seed] = true;
    triangles.push(seed);
    let mut surface = mesh.surface(seed);
    for &nb in &mesh.adjacency[seed] {
        frontier.push(nb);
    }

    while surface < locality && !frontier.is_empty() {
        let pick = rng.gen_range(0..frontier.len());
        let t = frontier.swap_remove(pick);
        used[t] = true;
        triangles.push(t);
        surface += mesh.surface(t);
        for &nb in &mesh.adjacency[t] {
            if !used[nb] && !frontier.contains(&nb) {
                frontier.push(nb);
            }
        }
    }

    triangles.sort_unstable();
    FacialMask { triangles, surface }
}

/// Forest training hyperparameters. Defaults follow the reference protocol:
/// 1000 trees, locality 0.1, 40/40/160 candidates, 25 thresholds per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub trees: usize,
    /// Target surface fraction per mask (R).
    pub locality: f64,
    /// Fraction of subjects drawn into each bootstrap.
    pub subject_fraction: f64,
    pub counts: CandidateCounts,
    pub thresholds_per_feature: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trees: 1000,
            locality: 0.1,
            subject_fraction: 0.632,
            counts: CandidateCounts::expression(),
            thresholds_per_feature: 25,
            max_depth: 30,
            min_samples_leaf: 1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidInput("tree count must be at least 1".into()));
        }
        if !(self.locality > 0.0 && self.locality <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "locality {} outside (0, 1]",
                self.locality
            )));
        }
        if !(self.subject_fraction > 0.0 && self.subject_fraction <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "subject fraction {} outside (0, 1]",
                self.subject_fraction
            )));
        }
        Ok(())
    }
}

/// One tree node: either a binary split or a leaf holding the class whose
/// one-hot vector the tree emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: Feature,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        class: u32,
    },
}

/// Routes a context through the nodes (feature value <= threshold goes
/// left) and returns the leaf class.
pub fn predict_nodes(nodes: &[Node], ctx: &impl FeatureSpace) -> usize {
    let mut at = 0usize;
    loop {
        match &nodes[at] {
            Node::Leaf { class } => return *class as usize,
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                at = if ctx.eval(feature) <= *threshold {
                    *left as usize
                } else {
                    *right as usize
                };
            }
        }
    }
}

/// A grown tree with its facial mask and out-of-bag subject bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub mask: FacialMask,
    /// Subjects excluded from this tree's bootstrap (sorted).
    pub oob_subjects: Vec<String>,
}

impl DecisionTree {
    pub fn predict(&self, ctx: &impl FeatureSpace) -> usize {
        predict_nodes(&self.nodes, ctx)
    }

    pub fn is_oob_for(&self, subject: &str) -> bool {
        self.oob_subjects
            .binary_search_by(|s| s.as_str().cmp(subject))
            .is_ok()
    }

    /// Root split feature, if the tree is not a single leaf.
    pub fn root_feature(&self) -> Option<&Feature> {
        match &self.nodes[0] {
            Node::Split { feature, .. } => Some(feature),
            Node::Leaf { .. } => None,
        }
    }
}

/// Sample access required by tree induction. Implemented by the image-bound
/// expression view and by the LEP feature-vector view of the AU layer.
pub trait TrainingSet: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn n_classes(&self) -> usize;
    fn label(&self, i: usize) -> usize;
    fn subject(&self, i: usize) -> &str;
    fn eval(&self, i: usize, feature: &Feature) -> f64;
}

/// Draws a class-balanced bootstrap at the subject level: `fraction` of the
/// subjects (without replacement), then every class downsampled to the
/// in-bag minority count. Returns in-bag sample indices and the sorted
/// out-of-bag subject ids.
pub fn subject_bootstrap(
    ts: &impl TrainingSet,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<usize>, Vec<String>)> {
    let mut subjects: Vec<&str> = (0..ts.len()).map(|i| ts.subject(i)).collect();
    subjects.sort_unstable();
    subjects.dedup();
    let n_subj = subjects.len();
    if n_subj == 0 {
        return Err(Error::Train("dataset has no subjects".into()));
    }
    let n_sel = ((fraction * n_subj as f64).ceil() as usize).clamp(1, n_subj);

    const MAX_RETRIES: usize = 10;
    for _ in 0..MAX_RETRIES {
        // partial Fisher-Yates over subject indices
        let mut order: Vec<usize> = (0..n_subj).collect();
        for i in 0..n_sel {
            let j = rng.gen_range(i..n_subj);
            order.swap(i, j);
        }
        let mut selected: Vec<&str> = order[..n_sel].iter().map(|&i| subjects[i]).collect();
        selected.sort_unstable();

        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ts.n_classes()];
        for i in 0..ts.len() {
            if selected.binary_search(&ts.subject(i)).is_ok() {
                per_class[ts.label(i)].push(i);
            }
        }
        let minority = per_class.iter().map(Vec::len).min().unwrap_or(0);
        if minority == 0 {
            continue; // a class is absent from the drawn subjects; redraw
        }

        let mut in_bag = Vec::with_capacity(minority * ts.n_classes());
        for samples in &mut per_class {
            // downsample to the minority count
            for i in 0..minority {
                let j = rng.gen_range(i..samples.len());
                samples.swap(i, j);
            }
            in_bag.extend_from_slice(&samples[..minority]);
        }
        in_bag.sort_unstable();

        let oob: Vec<String> = subjects
            .iter()
            .filter(|s| selected.binary_search(s).is_err())
            .map(|s| s.to_string())
            .collect();
        return Ok((in_bag, oob));
    }
    Err(Error::Train(format!(
        "could not draw a bootstrap containing every class after {MAX_RETRIES} subject draws"
    )))
}

/// Gini impurity of a class-count histogram.
fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / nf;
            p * p
        })
        .sum::<f64>()
}

/// Split-search record for one node, kept when auditing is enabled.
#[cfg(test)]
pub(crate) struct NodeAudit {
    pub chosen: f64,
    pub evaluated: Vec<f64>,
}

struct Grower<'a, T: TrainingSet> {
    ts: &'a T,
    pool: &'a CandidatePool,
    ranges: &'a ThresholdRanges,
    cfg: &'a TrainConfig,
    nodes: Vec<Node>,
    #[cfg(test)]
    audit: Option<Vec<NodeAudit>>,
}

impl<T: TrainingSet> Grower<'_, T> {
    fn majority(&self, indices: &[usize]) -> u32 {
        let mut counts = vec![0usize; self.ts.n_classes()];
        for &i in indices {
            counts[self.ts.label(i)] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best as u32
    }

    fn is_pure(&self, indices: &[usize]) -> bool {
        let first = self.ts.label(indices[0]);
        indices.iter().all(|&i| self.ts.label(i) == first)
    }

    fn build(&mut self, indices: &[usize], depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let make_leaf =
            indices.len() < 2 * min_leaf || depth >= self.cfg.max_depth || self.is_pure(indices);
        if make_leaf {
            let class = self.majority(indices);
            self.nodes.push(Node::Leaf { class });
            return (self.nodes.len() - 1) as u32;
        }

        let candidates = sample_candidates(self.pool, &self.cfg.counts, rng);
        let n = indices.len();
        let n_classes = self.ts.n_classes();
        let mut total_counts = vec![0usize; n_classes];
        for &i in indices.iter() {
            total_counts[self.ts.label(i)] += 1;
        }

        let mut best: Option<(f64, usize, f64)> = None; // (score, candidate idx, threshold)
        #[cfg(test)]
        let mut evaluated_scores = Vec::new();

        let mut values: Vec<(f64, usize)> = Vec::with_capacity(n);
        for (fi, feature) in candidates.iter().enumerate() {
            values.clear();
            values.extend(
                indices
                    .iter()
                    .map(|&i| (self.ts.eval(i, feature), self.ts.label(i))),
            );
            values.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let (lo, hi) = self.ranges.for_feature(feature);
            let mut thresholds = sample_thresholds(lo, hi, self.cfg.thresholds_per_feature, rng);
            thresholds.sort_unstable_by(f64::total_cmp);

            let mut left_counts = vec![0usize; n_classes];
            let mut cursor = 0usize;
            for &theta in &thresholds {
                while cursor < n && values[cursor].0 <= theta {
                    left_counts[values[cursor].1] += 1;
                    cursor += 1;
                }
                let nl = cursor;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let right_counts: Vec<usize> = total_counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(&t, &l)| t - l)
                    .collect();
                let score = (nl as f64 * gini(&left_counts, nl)
                    + nr as f64 * gini(&right_counts, nr))
                    / n as f64;
                #[cfg(test)]
                evaluated_scores.push(score);
                // strict < keeps the first-sampled candidate on ties
                if best.is_none() || score < best.unwrap().0 {
                    best = Some((score, fi, theta));
                }
            }
        }

        let Some((best_score, fi, theta)) = best else {
            // every candidate produced an empty child
            let class = self.majority(indices);
            self.nodes.push(Node::Leaf { class });
            return (self.nodes.len() - 1) as u32;
        };
        let _ = best_score;
        #[cfg(test)]
        if let Some(audit) = &mut self.audit {
            audit.push(NodeAudit {
                chosen: best_score,
                evaluated: evaluated_scores,
            });
        }

        let feature = candidates.into_iter().nth(fi).unwrap();
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.ts.eval(i, &feature) <= theta);

        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { class: 0 }); // placeholder
        let left = self.build(&left_idx, depth + 1, rng);
        let right = self.build(&right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold: theta,
            left,
            right,
        };
        at as u32
    }
}

/// Grows one tree on the given in-bag sample indices, drawing candidates
/// from `pool`. Returns the node array (root at index 0).
pub fn grow_tree(
    ts: &impl TrainingSet,
    in_bag: &[usize],
    pool: &CandidatePool,
    ranges: &ThresholdRanges,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Node>> {
    if in_bag.is_empty() {
        return Err(Error::Train(
            "cannot grow a tree on an empty bootstrap".into(),
        ));
    }
    let mut grower = Grower {
        ts,
        pool,
        ranges,
        cfg,
        nodes: Vec::new(),
        #[cfg(test)]
        audit: None,
    };
    grower.build(in_bag, 0, rng);
    Ok(grower.nodes)
}

/// Whether the forest was trained on local masks or on the full mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestKind {
    /// Local subspaces (LS-RF): one random facial mask per tree.
    LocalSubspace,
    /// Classical random subspaces (RS-RF): every mask is the full mesh.
    RandomSubspace,
}

impl ForestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ForestKind::LocalSubspace => "ls-rf",
            ForestKind::RandomSubspace => "rs-rf",
        }
    }
}

/// A trained expression forest: trees with masks, the mesh they index, the
/// class dictionary and everything needed to reproduce training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalForest {
    pub id: String,
    pub kind: ForestKind,
    /// Expression label dictionary; leaf classes index into it.
    pub classes: Vec<String>,
    pub mean_shape: MeanShape,
    pub mesh: FacialMesh,
    pub config: TrainConfig,
    pub threshold_ranges: ThresholdRanges,
    pub trees: Vec<DecisionTree>,
}

impl LocalForest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.mesh.len()
    }

    pub fn scheme_id(&self) -> &str {
        &self.mean_shape.scheme.id
    }

    /// Binds one image to this forest's mesh for feature evaluation.
    /// Fails when the shape follows a different landmark scheme.
    pub fn image_context<'a>(
        &'a self,
        channels: &'a IntegralChannels,
        shape: &'a Shape,
    ) -> Result<ImageContext<'a>> {
        if shape.scheme().id != self.scheme_id() {
            return Err(Error::Incompatible(format!(
                "shape scheme {} does not match model scheme {}",
                shape.scheme().id,
                self.scheme_id()
            )));
        }
        Ok(ImageContext::new(channels, shape, &self.mesh))
    }

    /// Indices of trees whose bootstrap excluded `subject`.
    pub fn oob_trees_for(&self, subject: &str) -> Vec<usize> {
        (0..self.trees.len())
            .filter(|&t| self.trees[t].is_oob_for(subject))
            .collect()
    }

    /// Normalized root-feature location census over triangles: channel
    /// windows count on their own triangle, geometric features are split
    /// evenly over the mask triangles touching their landmarks. Sums to 1
    /// when any tree has a root split.
    pub fn root_census(&self) -> Vec<f64> {
        let mut census = vec![0.0; self.mesh.len()];
        let mut total = 0.0;
        for tree in &self.trees {
            let Some(feature) = tree.root_feature() else {
                continue;
            };
            total += 1.0;
            match feature {
                Feature::ChannelWindow { triangle, .. } => census[*triangle] += 1.0,
                Feature::LepComponent { triangle, .. } => census[*triangle] += 1.0,
                Feature::PointDistance { a, b } => {
                    self.spread_point_weight(&mut census, &tree.mask, &[*a, *b]);
                }
                Feature::PointAngle { a, b, c, .. } => {
                    self.spread_point_weight(&mut census, &tree.mask, &[*a, *b, *c]);
                }
            }
        }
        if total > 0.0 {
            for v in &mut census {
                *v /= total;
            }
        }
        census
    }

    fn spread_point_weight(&self, census: &mut [f64], mask: &FacialMask, points: &[usize]) {
        let touching: Vec<usize> = mask
            .triangles
            .iter()
            .copied()
            .filter(|&t| self.mesh.triangles[t].iter().any(|v| points.contains(v)))
            .collect();
        let targets: &[usize] = if touching.is_empty() {
            &mask.triangles
        } else {
            &touching
        };
        let w = 1.0 / targets.len() as f64;
        for &t in targets {
            census[t] += w;
        }
    }
}

/// Expression training data: per-sample channels, shapes, class labels and
/// subject ids, plus the class dictionary.
pub struct ExpressionSamples<'a> {
    pub channels: Vec<&'a IntegralChannels>,
    pub shapes: Vec<&'a Shape>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    pub class_names: Vec<String>,
}

impl ExpressionSamples<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            return Err(Error::Train("no training samples".into()));
        }
        if self.shapes.len() != n || self.labels.len() != n || self.subjects.len() != n {
            return Err(Error::Train("sample field lengths disagree".into()));
        }
        let scheme = &self.shapes[0].scheme().id;
        if self.shapes.iter().any(|s| &s.scheme().id != scheme) {
            return Err(Error::Train(
                "mixed landmark schemes in training data".into(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Train(format!(
                "label index {bad} outside the class dictionary"
            )));
        }
        let distinct_labels = {
            let mut l = self.labels.clone();
            l.sort_unstable();
            l.dedup();
            l.len()
        };
        if distinct_labels < 2 {
            return Err(Error::Train("need at least 2 classes".into()));
        }
        let distinct_subjects = {
            let mut s = self.subjects.clone();
            s.sort_unstable();
            s.dedup();
            s.len()
        };
        if distinct_subjects < 2 {
            return Err(Error::Train("need at least 2 subjects".into()));
        }
        Ok(())
    }
}

/// The image-bound training view handed to `grow_tree`.
struct BoundSamples<'a> {
    ctxs: Vec<ImageContext<'a>>,
    labels: &'a [usize],
    subjects: &'a [String],
    n_classes: usize,
}

impl TrainingSet for BoundSamples<'_> {
    fn len(&self) -> usize {
        self.ctxs.len()
    }
    fn n_classes(&self) -> usize {
        self.n_classes
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
    fn subject(&self, i: usize) -> &str {
        &self.subjects[i]
    }
    fn eval(&self, i: usize, feature: &Feature) -> f64 {
        self.ctxs[i].eval(feature)
    }
}

/// Estimates per-template threshold bounds: candidate features sampled over
/// the full mesh, evaluated on a 10% random subsample of the training data.
fn estimate_threshold_ranges(
    ts: &impl TrainingSet,
    pool: &CandidatePool,
    counts: &CandidateCounts,
    rng: &mut ChaCha8Rng,
) -> ThresholdRanges {
    let n = ts.len();
    let subsample_len = ((n as f64 * 0.1).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..subsample_len {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    let subsample = &order[..subsample_len];

    let features = sample_candidates(pool, counts, rng);
    let mut ranges = ThresholdRanges::default();
    let mut seen = [false; 4];
    for feature in &features {
        let slot = match feature.template_id() {
            1 => &mut ranges.phi1,
            2 => &mut ranges.phi2,
            3 => &mut ranges.phi3,
            _ => continue, // LEP components keep the fixed [0, 1] range
        };
        for &i in subsample {
            let v = ts.eval(i, feature);
            if !v.is_finite() {
                continue;
            }
            let k = feature.template_id() as usize;
            if !seen[k] {
                *slot = (v, v);
                seen[k] = true;
            } else {
                slot.0 = slot.0.min(v);
                slot.1 = slot.1.max(v);
            }
        }
    }
    ranges
}

fn train_forest(
    samples: &ExpressionSamples<'_>,
    cfg: &TrainConfig,
    kind: ForestKind,
) -> Result<LocalForest> {
    samples.validate()?;
    cfg.validate()?;

    let mean_shape = compute_mean_shape(&samples.shapes)?;
    let mesh = triangulate(&mean_shape)?;

    let bound = BoundSamples {
        ctxs: samples
            .channels
            .iter()
            .zip(&samples.shapes)
            .map(|(ch, sh)| ImageContext::new(ch, sh, &mesh))
            .collect(),
        labels: &samples.labels,
        subjects: &samples.subjects,
        n_classes: samples.class_names.len(),
    };

    let full_mask = FacialMask::full(&mesh);
    let full_pool = CandidatePool::from_mask(&mesh, &full_mask.triangles);
    let mut range_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let threshold_ranges =
        estimate_threshold_ranges(&bound, &full_pool, &cfg.counts, &mut range_rng);

    let trees: Result<Vec<DecisionTree>> = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, t as u64));
            let mask = match kind {
                ForestKind::LocalSubspace => generate_mask(&mesh, cfg.locality, &mut rng),
                ForestKind::RandomSubspace => full_mask.clone(),
            };
            let (in_bag, oob_subjects) = subject_bootstrap(&bound, cfg.subject_fraction, &mut rng)?;
            let pool = CandidatePool::from_mask(&mesh, &mask.triangles);
            let nodes = grow_tree(&bound, &in_bag, &pool, &threshold_ranges, cfg, &mut rng)?;
            Ok(DecisionTree {
                nodes,
                mask,
                oob_subjects,
            })
        })
        .collect();

    let id = format!(
        "{}-{:016x}",
        kind.as_str(),
        derive_seed(
            cfg.seed,
            0x006D_0DE1 ^ ((cfg.trees as u64) << 32) ^ samples.channels.len() as u64
        )
    );
    Ok(LocalForest {
        id,
        kind,
        classes: samples.class_names.clone(),
        mean_shape,
        mesh,
        config: cfg.clone(),
        threshold_ranges,
        trees: trees?,
    })
}

/// Trains a Local Subspace Random Forest: every tree gets its own random
/// connected facial mask and subject-level balanced bootstrap.
pub fn train_ls_rf(samples: &ExpressionSamples<'_>, cfg: &TrainConfig) -> Result<LocalForest> {
    train_forest(samples, cfg, ForestKind::LocalSubspace)
}

/// Trains the global baseline (RS-RF): identical protocol, full-mesh masks.
pub fn train_rs_rf(samples: &ExpressionSamples<'_>, cfg: &TrainConfig) -> Result<LocalForest> {
    train_forest(samples, cfg, ForestKind::RandomSubspace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Point;
    use std::sync::Arc;

    fn test_mesh(n_points: usize, seed: u64) -> (MeanShape, FacialMesh) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scheme = crate::mesh::LandmarkScheme::new(
            "t",
            n_points,
            vec![0],
            vec![1],
            vec![0, 1],
            vec![n_points - 1],
        )
        .unwrap();
        loop {
            let pts: Vec<Point> = (0..n_points)
                .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let Ok(shape) = Shape::new(pts, scheme.clone()) else {
                continue;
            };
            let mean = compute_mean_shape(std::slice::from_ref(&shape)).unwrap();
            if let Ok(mesh) = triangulate(&mean) {
                return (mean, mesh);
            }
        }
    }

    fn mask_is_connected(mask: &FacialMask, mesh: &FacialMesh) -> bool {
        if mask.triangles.is_empty() {
            return false;
        }
        let mut seen = vec![false; mesh.len()];
        let mut stack = vec![mask.triangles[0]];
        seen[mask.triangles[0]] = true;
        let mut visited = 0;
        while let Some(t) = stack.pop() {
            visited += 1;
            for &nb in &mesh.adjacency[t] {
                if !seen[nb] && mask.contains(nb) {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        visited == mask.triangles.len()
    }

    #[test]
    fn full_locality_covers_everything() {
        let (_, mesh) = test_mesh(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mask = generate_mask(&mesh, 1.0, &mut rng);
        assert_eq!(mask.len(), mesh.len());
        assert!((mask.surface - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tiny_locality_can_be_single_triangle() {
        let (_, mesh) = test_mesh(12, 4);
        let smallest = mesh.surfaces.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // with R below the smallest surface every mask stops after one triangle
        let mask = generate_mask(&mesh, smallest * 0.5, &mut rng);
        assert_eq!(mask.len(), 1);
    }

    #[test]
    fn masks_are_connected_with_bounded_coverage() {
        let (_, mesh) = test_mesh(20, 5);
        let max_surface = mesh.surfaces.iter().cloned().fold(0.0, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let mask = generate_mask(&mesh, 0.1, &mut rng);
            assert!(mask_is_connected(&mask, &mesh));
            assert!(
                mask.surface >= 0.1 - 1e-12 && mask.surface <= 0.1 + max_surface + 1e-12,
                "coverage {} outside [0.1, 0.1 + {max_surface}]",
                mask.surface
            );
        }
    }

    /// LEP-vector-backed mock training set: `dims`-dimensional feature
    /// vectors served through LepComponent features.
    struct VecSet {
        vectors: Vec<Vec<f64>>,
        labels: Vec<usize>,
        subjects: Vec<String>,
        n_classes: usize,
    }

    impl VecSet {
        fn dims(&self) -> usize {
            self.vectors[0].len()
        }
        fn pool(&self) -> CandidatePool {
            CandidatePool::lep_space(1, 1, self.dims())
        }
        fn counts(&self) -> CandidateCounts {
            CandidateCounts {
                phi1: 0,
                phi2: 0,
                phi3: 0,
                phi0: 40,
            }
        }
    }

    impl TrainingSet for VecSet {
        fn len(&self) -> usize {
            self.vectors.len()
        }
        fn n_classes(&self) -> usize {
            self.n_classes
        }
        fn label(&self, i: usize) -> usize {
            self.labels[i]
        }
        fn subject(&self, i: usize) -> &str {
            &self.subjects[i]
        }
        fn eval(&self, i: usize, feature: &Feature) -> f64 {
            crate::features::LepVectorContext::new(&self.vectors[i], 1, self.dims()).eval(feature)
        }
    }

    fn vec_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            trees: 1,
            counts: CandidateCounts {
                phi1: 0,
                phi2: 0,
                phi3: 0,
                phi0: 40,
            },
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn bootstrap_balances_and_separates_oob() {
        // 6 subjects, class 0 has twice the samples of class 1
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        for s in 0..6 {
            for k in 0..3 {
                vectors.push(vec![s as f64 + k as f64]);
                labels.push(usize::from(k == 2)); // 2 samples class 0, 1 sample class 1
                subjects.push(format!("s{s}"));
            }
        }
        let ts = VecSet {
            vectors,
            labels,
            subjects,
            n_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (in_bag, oob) = subject_bootstrap(&ts, 0.632, &mut rng).unwrap();
            let mut counts = [0usize; 2];
            for &i in &in_bag {
                counts[ts.label(i)] += 1;
                // no in-bag sample may belong to an OOB subject
                assert!(!oob.contains(&ts.subject(i).to_string()));
            }
            assert_eq!(counts[0], counts[1], "downsampling must balance classes");
        }
    }

    #[test]
    fn bootstrap_full_fraction_keeps_all_subjects_when_balanced() {
        let ts = VecSet {
            vectors: (0..8).map(|i| vec![i as f64]).collect(),
            labels: vec![0, 1, 0, 1, 0, 1, 0, 1],
            subjects: (0..4).flat_map(|s| vec![format!("s{s}"); 2]).collect(),
            n_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (in_bag, oob) = subject_bootstrap(&ts, 1.0, &mut rng).unwrap();
        assert_eq!(
            in_bag.len(),
            8,
            "balanced data at fraction 1.0 keeps everything"
        );
        assert!(oob.is_empty());
    }

    #[test]
    fn bootstrap_downsamples_to_minority() {
        // all subjects selected: 100 vs 50 -> 50/50
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        for i in 0..150 {
            vectors.push(vec![i as f64]);
            labels.push(usize::from(i >= 100));
            subjects.push(format!("s{}", i % 5));
        }
        let ts = VecSet {
            vectors,
            labels,
            subjects,
            n_classes: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (in_bag, _) = subject_bootstrap(&ts, 1.0, &mut rng).unwrap();
        let ones = in_bag.iter().filter(|&&i| ts.label(i) == 1).count();
        assert_eq!(in_bag.len(), 2 * ones);
        assert_eq!(ones, 50);
    }

    #[test]
    fn pure_input_gives_single_leaf() {
        let ts = VecSet {
            vectors: (0..5).map(|i| vec![i as f64]).collect(),
            labels: vec![1; 5],
            subjects: (0..5).map(|i| format!("s{i}")).collect(),
            n_classes: 2,
        };
        let cfg = vec_cfg(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nodes = grow_tree(
            &ts,
            &[0, 1, 2, 3, 4],
            &ts.pool(),
            &ThresholdRanges::default(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(nodes.len(), 1);
        assert!(matches!(nodes[0], Node::Leaf { class: 1 }));
    }

    #[test]
    fn separable_1d_data_yields_depth_one_perfect_tree() {
        // threshold-separable at 0.5: values below are class 0
        let ts = VecSet {
            vectors: vec![
                vec![0.1],
                vec![0.2],
                vec![0.3],
                vec![0.7],
                vec![0.8],
                vec![0.9],
            ],
            labels: vec![0, 0, 0, 1, 1, 1],
            subjects: (0..6).map(|i| format!("s{i}")).collect(),
            n_classes: 2,
        };
        // linear-scan oracle: the sorted values have exactly one class boundary
        {
            let mut pairs: Vec<(f64, usize)> = ts
                .vectors
                .iter()
                .map(|v| v[0])
                .zip(ts.labels.clone())
                .collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let boundary_count = pairs.windows(2).filter(|w| w[0].1 != w[1].1).count();
            assert_eq!(boundary_count, 1, "oracle: exactly one class boundary");
        }
        let cfg = vec_cfg(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let indices: Vec<usize> = (0..6).collect();
        let nodes = grow_tree(
            &ts,
            &indices,
            &ts.pool(),
            &ThresholdRanges::default(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(nodes.len(), 3, "one split, two leaves");
        for &i in &indices {
            let ctx = crate::features::LepVectorContext::new(&ts.vectors[i], 1, 1);
            assert_eq!(predict_nodes(&nodes, &ctx), ts.labels[i]);
        }
    }

    #[test]
    fn xor_needs_depth_two() {
        let ts = VecSet {
            vectors: vec![
                vec![0.0, 0.0],
                vec![1.0, 1.0],
                vec![0.0, 1.0],
                vec![1.0, 0.0],
            ],
            labels: vec![0, 0, 1, 1],
            subjects: (0..4).map(|i| format!("s{i}")).collect(),
            n_classes: 2,
        };
        // exhaustive depth-1 impossibility: no single-dimension threshold
        // separates XOR
        for dim in 0..2 {
            for theta in [-0.5, 0.0, 0.5, 1.5] {
                let left: Vec<usize> = (0..4).filter(|&i| ts.vectors[i][dim] <= theta).collect();
                let right: Vec<usize> = (0..4).filter(|&i| ts.vectors[i][dim] > theta).collect();
                let pure = |set: &[usize]| {
                    set.is_empty() || set.iter().all(|&i| ts.labels[i] == ts.labels[set[0]])
                };
                assert!(
                    !(pure(&left) && pure(&right)),
                    "depth-1 split should not separate XOR"
                );
            }
        }

        let pool = CandidatePool::lep_space(1, 1, 2);
        let cfg = TrainConfig {
            counts: CandidateCounts {
                phi1: 0,
                phi2: 0,
                phi3: 0,
                phi0: 60,
            },
            seed: 4,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let nodes = grow_tree(
            &ts,
            &[0, 1, 2, 3],
            &pool,
            &ThresholdRanges::default(),
            &cfg,
            &mut rng,
        )
        .unwrap();
        // perfect fit
        for i in 0..4 {
            let ctx = crate::features::LepVectorContext::new(&ts.vectors[i], 1, 2);
            assert_eq!(predict_nodes(&nodes, &ctx), ts.labels[i]);
        }
        // depth >= 2: the root's children are not both leaves
        let Node::Split { left, right, .. } = &nodes[0] else {
            panic!("root must split");
        };
        let both_leaves = matches!(nodes[*left as usize], Node::Leaf { .. })
            && matches!(nodes[*right as usize], Node::Leaf { .. });
        assert!(!both_leaves);
    }

    #[test]
    fn depth_cap_is_respected() {
        // non-separable labels force growth until the cap stops it
        let mut rng_data = ChaCha8Rng::seed_from_u64(12);
        let ts = VecSet {
            vectors: (0..64).map(|_| vec![rng_data.gen::<f64>()]).collect(),
            labels: (0..64).map(|i| i % 2).collect(),
            subjects: (0..64).map(|i| format!("s{i}")).collect(),
            n_classes: 2,
        };
        let cfg = TrainConfig {
            max_depth: 3,
            counts: ts.counts(),
            seed: 13,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let indices: Vec<usize> = (0..64).collect();
        let nodes = grow_tree(
            &ts,
            &indices,
            &ts.pool(),
            &ThresholdRanges::default(),
            &cfg,
            &mut rng,
        )
        .unwrap();

        fn depth_of(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + depth_of(nodes, *left as usize).max(depth_of(nodes, *right as usize))
                }
            }
        }
        assert!(depth_of(&nodes, 0) <= 3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(TrainConfig {
            trees: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            locality: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            locality: 1.5,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            subject_fraction: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn chosen_split_score_is_minimal() {
        let mut rng_data = ChaCha8Rng::seed_from_u64(8);
        let ts = VecSet {
            vectors: (0..30)
                .map(|_| vec![rng_data.gen::<f64>(), rng_data.gen::<f64>()])
                .collect(),
            labels: (0..30).map(|i| i % 3).collect(),
            subjects: (0..30).map(|i| format!("s{i}")).collect(),
            n_classes: 3,
        };
        let pool = CandidatePool::lep_space(1, 1, 2);
        let cfg = TrainConfig {
            counts: ts.counts(),
            max_depth: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        let mut grower = Grower {
            ts: &ts,
            pool: &pool,
            ranges: &ThresholdRanges::default(),
            cfg: &cfg,
            nodes: Vec::new(),
            audit: Some(Vec::new()),
        };
        let indices: Vec<usize> = (0..30).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        grower.build(&indices, 0, &mut rng);
        let audits = grower.audit.take().unwrap();
        assert!(!audits.is_empty());
        for audit in audits {
            for &score in &audit.evaluated {
                assert!(audit.chosen <= score + 1e-15);
            }
        }
    }

    #[test]
    fn derive_seed_spreads_streams() {
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    fn tiny_expression_samples(
        n_subjects: usize,
        per_class: usize,
        seed: u64,
    ) -> (
        Vec<crate::channels::IntegralChannels>,
        Vec<Shape>,
        Vec<usize>,
        Vec<String>,
    ) {
        // two classes distinguished by mouth-point position (pure geometry)
        let scheme =
            crate::mesh::LandmarkScheme::new("t5", 5, vec![0], vec![1], vec![0, 1], vec![3, 4])
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut channels = Vec::new();
        let mut shapes = Vec::new();
        let mut labels = Vec::new();
        let mut subjects = Vec::new();
        let img =
            crate::channels::GrayImage::from_fn(24, 24, |x, y| ((x * 7 + y * 13) % 251) as u8);
        for s in 0..n_subjects {
            for class in 0..2usize {
                for _ in 0..per_class {
                    let dy = if class == 0 { 0.0 } else { 6.0 };
                    let mut jitter = || rng.gen_range(-0.3..0.3);
                    let pts = vec![
                        Point::new(4.0 + jitter(), 6.0 + jitter()),
                        Point::new(20.0 + jitter(), 6.0 + jitter()),
                        Point::new(12.0 + jitter(), 12.0 + jitter()),
                        Point::new(8.0 + jitter(), 16.0 + dy + jitter()),
                        Point::new(16.0 + jitter(), 16.0 + dy + jitter()),
                    ];
                    shapes.push(Shape::new(pts, scheme.clone()).unwrap());
                    channels.push(crate::channels::compute_channels(&img).unwrap());
                    labels.push(class);
                    subjects.push(format!("subj{s}"));
                }
            }
        }
        (channels, shapes, labels, subjects)
    }

    fn as_samples<'a>(
        channels: &'a [crate::channels::IntegralChannels],
        shapes: &'a [Shape],
        labels: &'a [usize],
        subjects: &'a [String],
    ) -> ExpressionSamples<'a> {
        ExpressionSamples {
            channels: channels.iter().collect(),
            shapes: shapes.iter().collect(),
            labels: labels.to_vec(),
            subjects: subjects.to_vec(),
            class_names: vec!["a".into(), "b".into()],
        }
    }

    #[test]
    fn ls_rf_trains_and_recovers_geometry_split() {
        let (channels, shapes, labels, subjects) = tiny_expression_samples(4, 3, 21);
        let samples = as_samples(&channels, &shapes, &labels, &subjects);
        let cfg = TrainConfig {
            trees: 24,
            locality: 0.3,
            seed: 5,
            ..TrainConfig::default()
        };
        let forest = train_ls_rf(&samples, &cfg).unwrap();
        assert_eq!(forest.trees.len(), 24);
        assert_eq!(forest.kind, ForestKind::LocalSubspace);

        // every appearance split honors its mask
        for tree in &forest.trees {
            for node in &tree.nodes {
                if let Node::Split {
                    feature: Feature::ChannelWindow { triangle, .. },
                    ..
                } = node
                {
                    assert!(tree.mask.contains(*triangle));
                }
            }
        }

        // training samples mostly recovered by majority vote over all trees
        let mut correct = 0;
        for i in 0..shapes.len() {
            let ctx = forest.image_context(&channels[i], &shapes[i]).unwrap();
            let mut votes = [0usize; 2];
            for tree in &forest.trees {
                votes[tree.predict(&ctx)] += 1;
            }
            let pred = usize::from(votes[1] > votes[0]);
            correct += usize::from(pred == labels[i]);
        }
        assert!(correct as f64 / shapes.len() as f64 >= 0.9);
    }

    #[test]
    fn rs_rf_masks_cover_the_mesh() {
        let (channels, shapes, labels, subjects) = tiny_expression_samples(3, 2, 22);
        let samples = as_samples(&channels, &shapes, &labels, &subjects);
        let cfg = TrainConfig {
            trees: 5,
            seed: 6,
            ..TrainConfig::default()
        };
        let forest = train_rs_rf(&samples, &cfg).unwrap();
        for tree in &forest.trees {
            assert_eq!(tree.mask.len(), forest.mesh.len());
        }
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let (channels, shapes, labels, subjects) = tiny_expression_samples(3, 2, 23);
        let samples = as_samples(&channels, &shapes, &labels, &subjects);
        let cfg = TrainConfig {
            trees: 8,
            locality: 0.4,
            seed: 77,
            ..TrainConfig::default()
        };
        let a = train_ls_rf(&samples, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| train_ls_rf(&samples, &cfg).unwrap());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn scheme_mismatch_is_rejected_at_prediction() {
        let (channels, shapes, labels, subjects) = tiny_expression_samples(3, 2, 26);
        let samples = as_samples(&channels, &shapes, &labels, &subjects);
        let forest = train_ls_rf(
            &samples,
            &TrainConfig {
                trees: 2,
                seed: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let other =
            crate::mesh::LandmarkScheme::new("other", 5, vec![0], vec![1], vec![0, 1], vec![4])
                .unwrap();
        let shape = Shape::new(shapes[0].points().to_vec(), Arc::clone(&other)).unwrap();
        assert!(forest.image_context(&channels[0], &shape).is_err());
    }

    #[test]
    fn root_census_sums_to_one() {
        let (channels, shapes, labels, subjects) = tiny_expression_samples(4, 2, 27);
        let samples = as_samples(&channels, &shapes, &labels, &subjects);
        let forest = train_ls_rf(
            &samples,
            &TrainConfig {
                trees: 16,
                locality: 0.3,
                seed: 9,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let census = forest.root_census();
        let any_root = forest.trees.iter().any(|t| t.root_feature().is_some());
        if any_root {
            let total: f64 = census.iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "census total {total}");
        }
    }
}
