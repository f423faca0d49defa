//! Protocol orchestration: subject-level OOB accuracy, confusion matrices,
//! rank-statistic ROC-AUC and occlusion sweeps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::confidence::{triangle_confidence, ConfidenceNetwork};
use crate::data::{occlude, Dataset, OccludeRegion, Sample};
use crate::error::{Error, Result};
use crate::forest::{derive_seed, LocalForest};
use crate::lep::{aggregate_subset, lep_field_subset, weighted_aggregate};

/// Class-count confusion matrix over a fixed label dictionary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Exactly trace/total; `None` when nothing was recorded.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// Row-normalized percentages; rows with no samples are all zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Aligned text table of row percentages (0.1% resolution).
    pub fn to_display_string(&self) -> String {
        let mut out = String::new();
        let width = self
            .labels
            .iter()
            .map(|l| l.len())
            .max()
            .unwrap_or(4)
            .max(6);
        out.push_str(&format!("{:width$}", ""));
        for l in &self.labels {
            out.push_str(&format!(" {l:>width$}"));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(self.row_percentages()) {
            out.push_str(&format!("{label:>width$}"));
            for v in row {
                out.push_str(&format!(" {v:>width$.1}"));
            }
            out.push('\n');
        }
        out
    }

    fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Outcome of an OOB evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct OobReport {
    /// `None` when every sample was excluded.
    pub accuracy: Option<f64>,
    pub evaluated: usize,
    /// Samples with no OOB tree (their subject was in every bootstrap).
    pub excluded: usize,
    pub confusion: ConfusionMatrix,
}

/// Prediction weighting for evaluation.
#[derive(Clone, Copy)]
pub enum Weighting<'a> {
    /// Plain tree-average over the OOB subset.
    Uniform,
    /// Confidence-weighted LEP aggregation (WLS-RF) using this network.
    Confidence(&'a ConfidenceNetwork),
}

/// Maps dataset label indices onto model class indices by name.
fn label_map(model: &LocalForest, data: &Dataset) -> Result<Vec<usize>> {
    data.labels
        .iter()
        .map(|name| {
            model
                .classes
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Incompatible(format!("label {name:?} unknown to the model")))
        })
        .collect()
}

/// Predicts one sample through the trees that are OOB for its subject.
fn predict_oob_sample(
    model: &LocalForest,
    sample: &Sample,
    weighting: &Weighting<'_>,
) -> Result<Option<usize>> {
    let oob = model.oob_trees_for(&sample.subject);
    if oob.is_empty() {
        return Ok(None);
    }
    let ctx = model.image_context(&sample.channels, &sample.shape)?;
    let prediction = match weighting {
        Weighting::Uniform => aggregate_subset(model, &ctx, &oob),
        Weighting::Confidence(net) => {
            let conf = net.confidences(&sample.channels, &sample.shape)?;
            let tri = triangle_confidence(&conf.alphas, &model.mesh);
            let field = lep_field_subset(model, &ctx, &oob);
            match weighted_aggregate(&field, &tri) {
                Ok(p) => p,
                // total occlusion: fall back to the unweighted aggregate
                Err(_) => aggregate_subset(model, &ctx, &oob),
            }
        }
    };
    Ok(Some(prediction.label))
}

/// Subject-level OOB evaluation: each sample is predicted using only trees
/// whose bootstrap excluded its subject. Samples without OOB trees are
/// excluded and counted, never silently dropped.
pub fn oob_evaluate(
    model: &LocalForest,
    data: &Dataset,
    weighting: Weighting<'_>,
) -> Result<OobReport> {
    let map = label_map(model, data)?;
    let labeled: Vec<&Sample> = data.samples.iter().filter(|s| s.label.is_some()).collect();

    let partials: Result<Vec<(ConfusionMatrix, usize)>> = labeled
        .par_chunks(64.max(labeled.len() / 64 + 1))
        .map(|chunk| {
            let mut confusion = ConfusionMatrix::new(model.classes.clone());
            let mut excluded = 0usize;
            for sample in chunk {
                let truth = map[sample.label.unwrap()];
                match predict_oob_sample(model, sample, &weighting)? {
                    Some(pred) => confusion.record(truth, pred),
                    None => excluded += 1,
                }
            }
            Ok((confusion, excluded))
        })
        .collect();

    let mut confusion = ConfusionMatrix::new(model.classes.clone());
    let mut excluded = 0usize;
    for (partial, ex) in partials? {
        confusion.merge(&partial);
        excluded += ex;
    }
    Ok(OobReport {
        accuracy: confusion.accuracy(),
        evaluated: confusion.total() as usize,
        excluded,
        confusion,
    })
}

/// ROC curve summary: area under the curve plus the staircase points.
#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
}

/// Rank-statistic AUC (Mann-Whitney with midranks for ties).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores/labels length mismatch".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidInput(
            "AUC needs both positive and negative samples".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks over tie groups, summed for the positives
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let auc_value =
        (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);

    // staircase points, thresholds descending
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let mut j = i;
        while j > 0 && scores[order[j - 1]] == scores[order[i - 1]] {
            j -= 1;
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(RocResult {
        auc: auc_value,
        points,
    })
}

/// One row of an occlusion sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variant: String,
    pub region: String,
    pub locality: f64,
    pub accuracy: Option<f64>,
    pub evaluated: usize,
    pub excluded: usize,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "variant,region,locality,accuracy,evaluated,excluded";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.variant,
            self.region,
            self.locality,
            self.accuracy.map_or("nan".into(), |a| format!("{a:.6}")),
            self.evaluated,
            self.excluded
        )
    }
}

/// Trained artifacts for one locality value.
pub struct SweepArtifacts {
    pub locality: f64,
    pub rs: LocalForest,
    pub ls: LocalForest,
}

/// Builds the occluded copy of a dataset for one region: every image gets a
/// noise overlay (and optionally landmark jitter) over the region box, and
/// its channels are recomputed.
pub fn occlude_dataset(
    data: &Dataset,
    region: OccludeRegion,
    margin: f64,
    landmark_jitter: Option<f64>,
    seed: u64,
) -> Result<Dataset> {
    let samples: Result<Vec<Sample>> = data
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let (image, _, shape) = occlude(
                &sample.image,
                &sample.shape,
                region,
                margin,
                landmark_jitter,
                &mut rng,
            )?;
            let channels = crate::channels::compute_channels(&image)?;
            Ok(Sample {
                id: sample.id.clone(),
                image,
                channels,
                shape,
                label: sample.label,
                subject: sample.subject.clone(),
                aus: sample.aus.clone(),
            })
        })
        .collect();
    Ok(Dataset {
        scheme: data.scheme.clone(),
        labels: data.labels.clone(),
        au_ids: data.au_ids.clone(),
        samples: samples?,
    })
}

/// Grid evaluation over {RS-RF, LS-RF, WLS-RF} x regions x locality values.
/// `None` in `regions` means the clean dataset; that column reuses the
/// plain OOB path, so it reproduces `oob_evaluate` exactly. Occlusions are
/// generated once per region and shared by every variant (paired runs).
pub fn occlusion_sweep(
    artifacts: &[SweepArtifacts],
    network: &ConfidenceNetwork,
    data: &Dataset,
    regions: &[Option<OccludeRegion>],
    margin: f64,
    landmark_jitter: Option<f64>,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if artifacts.is_empty() || regions.is_empty() {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    let mut rows = Vec::new();
    for (region_idx, region) in regions.iter().enumerate() {
        let occluded;
        let eval_data = match region {
            None => data,
            Some(r) => {
                occluded = occlude_dataset(
                    data,
                    *r,
                    margin,
                    landmark_jitter,
                    derive_seed(seed, region_idx as u64),
                )?;
                &occluded
            }
        };
        let region_name = region.map_or("none", |r| r.as_str()).to_string();
        for art in artifacts {
            let runs: [(&str, &LocalForest, Weighting<'_>); 3] = [
                ("rs-rf", &art.rs, Weighting::Uniform),
                ("ls-rf", &art.ls, Weighting::Uniform),
                ("wls-rf", &art.ls, Weighting::Confidence(network)),
            ];
            for (variant, model, weighting) in runs {
                let report = oob_evaluate(model, eval_data, weighting)?;
                rows.push(SweepRow {
                    variant: variant.to_string(),
                    region: region_name.clone(),
                    locality: art.locality,
                    accuracy: report.accuracy,
                    evaluated: report.evaluated,
                    excluded: report.excluded,
                });
            }
        }
    }
    Ok(rows)
}
