//! LEP aggregation algebra: per-triangle expression probabilities, global
//! and confidence-weighted predictions.
//!
//! Every tree emits a one-hot class vector. Summing those votes per triangle
//! (each tree weighted by one over its mask size, restricted to triangles
//! inside the mask) yields the Local Expression Prediction field; its mass
//! column `Z` makes the global average recoverable as a Z-weighted sum over
//! triangles, and lets per-triangle confidences reweight the prediction.

use crate::error::{Error, Result};
use crate::features::{FeatureSpace, ImageContext};
use crate::forest::LocalForest;

/// Per-triangle expression probability vectors with their normalizing mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LepField {
    /// `probs[t]` is the probability vector over classes for triangle `t`;
    /// all zeros when the triangle is uncovered.
    probs: Vec<Vec<f64>>,
    /// Vote mass per triangle before normalization.
    z: Vec<f64>,
    n_classes: usize,
}

impl LepField {
    pub fn n_triangles(&self) -> usize {
        self.probs.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Probability vector of triangle `t` (normalized; zeros if uncovered).
    pub fn probabilities(&self, t: usize) -> &[f64] {
        &self.probs[t]
    }

    pub fn z(&self, t: usize) -> f64 {
        self.z[t]
    }

    /// A triangle is covered when at least one tree's mask contains it.
    pub fn is_covered(&self, t: usize) -> bool {
        self.z[t] > 0.0
    }

    /// Flattens to triangle-major order with `fill` (typically the uniform
    /// prior 1/L) substituted for uncovered triangles.
    pub fn flatten_with(&self, fill: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.probs.len() * self.n_classes);
        for t in 0..self.probs.len() {
            if self.is_covered(t) {
                out.extend_from_slice(&self.probs[t]);
            } else {
                out.extend(std::iter::repeat_n(fill, self.n_classes));
            }
        }
        out
    }

    /// The LEP probability component for (label, triangle); uncovered
    /// triangles return the uniform prior.
    pub fn component(&self, label: usize, t: usize) -> f64 {
        if self.is_covered(t) {
            self.probs[t][label]
        } else {
            1.0 / self.n_classes as f64
        }
    }

    /// Text export: one row per triangle, the class probabilities followed
    /// by the Z column, tab-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in 0..self.n_triangles() {
            for l in 0..self.n_classes {
                out.push_str(&format!("{}\t", self.probs[t][l]));
            }
            out.push_str(&format!("{}\n", self.z[t]));
        }
        out
    }
}

/// A categorical expression prediction: simplex probability vector plus the
/// argmax label (ties broken toward the lowest class index).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionPrediction {
    pub probabilities: Vec<f64>,
    pub label: usize,
}

impl ExpressionPrediction {
    fn from_probabilities(probabilities: Vec<f64>) -> Self {
        let mut label = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[label] {
                label = i;
            }
        }
        ExpressionPrediction {
            probabilities,
            label,
        }
    }
}

/// Computes the LEP field over a subset of trees: each tree whose mask
/// contains triangle `t` contributes its one-hot vote scaled by 1/|M_t|;
/// the accumulated mass `Z_t` normalizes the triangle's vector.
pub fn lep_field_subset(
    forest: &LocalForest,
    ctx: &ImageContext<'_>,
    tree_indices: &[usize],
) -> LepField {
    let n_tri = forest.n_triangles();
    let n_classes = forest.n_classes();
    let mut probs = vec![vec![0.0; n_classes]; n_tri];
    let mut z = vec![0.0; n_tri];
    for &ti in tree_indices {
        let tree = &forest.trees[ti];
        let class = tree.predict(ctx);
        let w = 1.0 / tree.mask.len() as f64;
        for &t in &tree.mask.triangles {
            probs[t][class] += w;
            z[t] += w;
        }
    }
    for t in 0..n_tri {
        if z[t] > 0.0 {
            for p in &mut probs[t] {
                *p /= z[t];
            }
        }
    }
    LepField {
        probs,
        z,
        n_classes,
    }
}

/// LEP field over all trees of the forest.
pub fn lep_field(forest: &LocalForest, ctx: &ImageContext<'_>) -> LepField {
    let all: Vec<usize> = (0..forest.trees.len()).collect();
    lep_field_subset(forest, ctx, &all)
}

/// Global prediction over a tree subset: the mean of one-hot votes.
pub fn aggregate_subset(
    forest: &LocalForest,
    ctx: &ImageContext<'_>,
    tree_indices: &[usize],
) -> ExpressionPrediction {
    let n_classes = forest.n_classes();
    let mut probs = vec![0.0; n_classes];
    for &ti in tree_indices {
        probs[forest.trees[ti].predict(ctx)] += 1.0;
    }
    if !tree_indices.is_empty() {
        for p in &mut probs {
            *p /= tree_indices.len() as f64;
        }
    }
    ExpressionPrediction::from_probabilities(probs)
}

/// Global prediction: prediction probabilities averaged among all trees.
pub fn aggregate(forest: &LocalForest, ctx: &ImageContext<'_>) -> ExpressionPrediction {
    let all: Vec<usize> = (0..forest.trees.len()).collect();
    aggregate_subset(forest, ctx, &all)
}

/// Confidence-weighted prediction: sum over triangles of
/// `weight * Z * p(l | I, t)`, normalized by the total weighted mass.
/// Uncovered triangles carry no mass, so they drop out naturally. Fails
/// when the effective weight is zero everywhere (total occlusion).
pub fn weighted_aggregate(field: &LepField, weights: &[f64]) -> Result<ExpressionPrediction> {
    if weights.len() != field.n_triangles() {
        return Err(Error::InvalidInput(format!(
            "{} weights for {} triangles",
            weights.len(),
            field.n_triangles()
        )));
    }
    if let Some(&bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidInput(format!(
            "confidence weights must be finite and non-negative, found {bad}"
        )));
    }
    let n_classes = field.n_classes();
    let mut probs = vec![0.0; n_classes];
    let mut mass = 0.0;
    for t in 0..field.n_triangles() {
        let wz = weights[t] * field.z(t);
        if wz == 0.0 {
            continue;
        }
        mass += wz;
        for (p, &q) in probs.iter_mut().zip(field.probabilities(t)) {
            *p += wz * q;
        }
    }
    if mass <= 0.0 {
        return Err(Error::InvalidInput(
            "total occlusion: every covered triangle has zero confidence".into(),
        ));
    }
    for p in &mut probs {
        *p /= mass;
    }
    Ok(ExpressionPrediction::from_probabilities(probs))
}

/// Evaluates one feature-space context against a tree subset and applies
/// per-triangle weights in a single call (OOB evaluation convenience).
pub fn weighted_aggregate_subset(
    forest: &LocalForest,
    ctx: &ImageContext<'_>,
    tree_indices: &[usize],
    weights: &[f64],
) -> Result<ExpressionPrediction> {
    weighted_aggregate(&lep_field_subset(forest, ctx, tree_indices), weights)
}

/// One-hot vote of a single tree (used in tests and reports).
pub fn tree_vote(forest: &LocalForest, ctx: &impl FeatureSpace, tree: usize) -> Vec<f64> {
    let mut v = vec![0.0; forest.n_classes()];
    v[forest.trees[tree].predict(ctx)] = 1.0;
    v
}
