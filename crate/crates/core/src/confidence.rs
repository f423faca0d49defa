//! Hierarchical two-layer tied-weight denoising autoencoder and the
//! confidence measurements derived from its reconstruction error.
//!
//! A first layer of autoencoders (one per landmark, 225 -> 125 units)
//! captures the HOG texture around each aligned feature point. A second
//! layer (one per face subpart, 125*N -> 65*N units) reconstructs the
//! concatenated first-layer encodings of a group of related points, so an
//! occlusion covering the group is visible even at points whose own patch
//! still looks plausible. The squared reconstruction error through the full
//! encode/decode stack is turned into a per-point confidence
//! `alpha = exp(-error / sigma0)` with `sigma0` calibrated as the median
//! clean-data error; triangle confidence is the minimum over the vertices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::IntegralChannels;
use crate::error::{Error, Result};
use crate::forest::derive_seed;
use crate::mesh::{FacialMesh, LandmarkScheme, Shape, Subpart, SubpartGrouping};

/// First-layer hidden units per landmark.
pub const L1_HIDDEN: usize = 125;
/// Second-layer hidden units per grouped landmark (half compression of 125).
pub const L2_HIDDEN_PER_POINT: usize = 65;
/// Input conditioning for the autoencoders: window-normalized HOG entries
/// average 1/cells^2, far below the working range of a sigmoid layer with
/// tied weights. Scaling by the cell count puts them at unit order; the
/// sigma0 calibration absorbs the factor, so confidences are unaffected.
pub const DESCRIPTOR_SCALE: f64 = (crate::channels::HOG_CELLS * crate::channels::HOG_CELLS) as f64;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One tied-weight autoencoder layer: encoder `y = sigmoid(w x + b)`,
/// decoder `x~ = w^T y + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderLayer {
    pub input: usize,
    pub hidden: usize,
    /// Row-major `hidden x input` weight matrix.
    pub weights: Vec<f64>,
    pub enc_bias: Vec<f64>,
    pub dec_bias: Vec<f64>,
}

impl AutoencoderLayer {
    /// Uniform init in +/- 1/sqrt(input), zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        AutoencoderLayer {
            input,
            hidden,
            weights: (0..hidden * input)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect(),
            enc_bias: vec![0.0; hidden],
            dec_bias: vec![0.0; input],
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        let mut y = Vec::with_capacity(self.hidden);
        for h in 0..self.hidden {
            let row = &self.weights[h * self.input..(h + 1) * self.input];
            let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum();
            y.push(sigmoid(a + self.enc_bias[h]));
        }
        y
    }

    pub fn decode(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.hidden);
        let mut x = self.dec_bias.clone();
        for h in 0..self.hidden {
            let row = &self.weights[h * self.input..(h + 1) * self.input];
            let yh = y[h];
            for (xi, w) in x.iter_mut().zip(row) {
                *xi += w * yh;
            }
        }
        x
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.decode(&self.encode(x))
    }

    /// Objective for one presentation: half squared reconstruction error of
    /// the corrupted input against the clean target, plus the weight-decay
    /// term `decay/2 * ||w||^2`.
    pub fn loss(&self, corrupted: &[f64], clean: &[f64], decay: f64) -> f64 {
        let recon = self.reconstruct(corrupted);
        let err: f64 = recon
            .iter()
            .zip(clean)
            .map(|(r, t)| (r - t) * (r - t))
            .sum();
        let reg: f64 = self.weights.iter().map(|w| w * w).sum();
        0.5 * err + 0.5 * decay * reg
    }

    /// Analytic gradients of [`AutoencoderLayer::loss`]. The tied weight
    /// matrix receives both the encoder and the decoder contribution.
    pub fn gradients(&self, corrupted: &[f64], clean: &[f64], decay: f64) -> LayerGradients {
        let y = self.encode(corrupted);
        let recon = self.decode(&y);
        let residual: Vec<f64> = recon.iter().zip(clean).map(|(r, t)| r - t).collect();

        // d_loss/d_y, back through the decoder x~ = w^T y + c
        let mut dy = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let row = &self.weights[h * self.input..(h + 1) * self.input];
            dy[h] = row.iter().zip(&residual).map(|(w, r)| w * r).sum();
        }
        // through the sigmoid
        let da: Vec<f64> = dy
            .iter()
            .zip(&y)
            .map(|(d, yh)| d * yh * (1.0 - yh))
            .collect();

        let mut dw = vec![0.0; self.hidden * self.input];
        for h in 0..self.hidden {
            let row = &mut dw[h * self.input..(h + 1) * self.input];
            let (dah, yh) = (da[h], y[h]);
            for ((g, &xi), &ri) in row.iter_mut().zip(corrupted).zip(&residual) {
                *g = dah * xi + yh * ri;
            }
        }
        if decay != 0.0 {
            for (g, w) in dw.iter_mut().zip(&self.weights) {
                *g += decay * w;
            }
        }

        LayerGradients {
            weights: dw,
            enc_bias: da,
            dec_bias: residual,
        }
    }

    fn step(&mut self, grads: &LayerGradients, rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            *w -= rate * g;
        }
        for (b, g) in self.enc_bias.iter_mut().zip(&grads.enc_bias) {
            *b -= rate * g;
        }
        for (c, g) in self.dec_bias.iter_mut().zip(&grads.dec_bias) {
            *c -= rate * g;
        }
    }
}

/// Gradients of one SGD presentation.
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub enc_bias: Vec<f64>,
    pub dec_bias: Vec<f64>,
}

/// Stochastic training hyperparameters; defaults follow the reference
/// recipe: 15000 updates, rate 0.01, decay 0.001, 25% masking noise,
/// class-alternating sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub updates: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of input coordinates zeroed per presentation.
    pub noise_fraction: f64,
    /// Alternate presentations between expression classes when labels exist.
    pub class_alternating: bool,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            updates: 15_000,
            learning_rate: 0.01,
            weight_decay: 0.001,
            noise_fraction: 0.25,
            class_alternating: true,
            seed: 1,
        }
    }
}

impl AeTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.updates == 0 || self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidInput(
                "autoencoder updates must be positive; rate/decay non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::InvalidInput(format!(
                "masking-noise fraction {} outside [0, 1)",
                self.noise_fraction
            )));
        }
        Ok(())
    }
}

/// First/last-decile loss means of one layer's training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub first_decile_mean: f64,
    pub last_decile_mean: f64,
}

/// Cycles classes round-robin when labels are available, otherwise uniform.
struct PresentationSampler {
    per_class: Vec<Vec<usize>>,
    all: usize,
    cursor: usize,
}

impl PresentationSampler {
    fn new(n: usize, labels: Option<&[usize]>, alternating: bool) -> Self {
        let per_class = match labels {
            Some(labels) if alternating => {
                let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
                let mut per_class = vec![Vec::new(); n_classes];
                for (i, &l) in labels.iter().enumerate() {
                    per_class[l].push(i);
                }
                per_class.retain(|c| !c.is_empty());
                per_class
            }
            _ => Vec::new(),
        };
        PresentationSampler {
            per_class,
            all: n,
            cursor: 0,
        }
    }

    fn next(&mut self, rng: &mut impl Rng) -> usize {
        if self.per_class.is_empty() {
            return rng.gen_range(0..self.all);
        }
        let class = &self.per_class[self.cursor];
        self.cursor = (self.cursor + 1) % self.per_class.len();
        class[rng.gen_range(0..class.len())]
    }
}

/// Trains one denoising layer: per update, zero a random `noise_fraction`
/// subset of the input coordinates, forward, squared loss against the CLEAN
/// input, gradient step with weight decay.
pub fn train_layer(
    inputs: &[Vec<f64>],
    labels: Option<&[usize]>,
    hidden: usize,
    cfg: &AeTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(AutoencoderLayer, TrainStats)> {
    cfg.validate()?;
    let first = inputs
        .first()
        .ok_or_else(|| Error::Train("no descriptors to train on".into()))?;
    let input_dim = first.len();
    if inputs.iter().any(|x| x.len() != input_dim) {
        return Err(Error::Train("descriptor dimensions disagree".into()));
    }

    let mut layer = AutoencoderLayer::init(input_dim, hidden, rng);
    let mut sampler = PresentationSampler::new(inputs.len(), labels, cfg.class_alternating);
    let mut corrupted = vec![0.0; input_dim];
    let n_mask = ((cfg.noise_fraction * input_dim as f64).round() as usize).min(input_dim);
    let mut mask_order: Vec<usize> = (0..input_dim).collect();

    let decile = (cfg.updates / 10).max(1);
    let mut first_sum = 0.0;
    let mut first_n = 0usize;
    let mut last_sum = 0.0;
    let mut last_n = 0usize;

    for update in 0..cfg.updates {
        let pick = sampler.next(rng);
        let clean = &inputs[pick];
        corrupted.copy_from_slice(clean);
        for i in 0..n_mask {
            let j = rng.gen_range(i..input_dim);
            mask_order.swap(i, j);
            corrupted[mask_order[i]] = 0.0;
        }

        let grads = layer.gradients(&corrupted, clean, cfg.weight_decay);
        let loss = layer.loss(&corrupted, clean, cfg.weight_decay);
        if !loss.is_finite() {
            return Err(Error::Train(format!(
                "autoencoder loss diverged at update {update} (loss {loss})"
            )));
        }
        layer.step(&grads, cfg.learning_rate);

        if update < decile {
            first_sum += loss;
            first_n += 1;
        }
        if update + decile >= cfg.updates {
            last_sum += loss;
            last_n += 1;
        }
    }

    Ok((
        layer,
        TrainStats {
            first_decile_mean: first_sum / first_n.max(1) as f64,
            last_decile_mean: last_sum / last_n.max(1) as f64,
        },
    ))
}

/// The full confidence stack: per-landmark first-layer autoencoders,
/// per-subpart second-layer autoencoders, and the calibration scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceNetwork {
    pub scheme: LandmarkScheme,
    pub grouping: SubpartGrouping,
    /// One 225 -> 125 layer per landmark.
    pub point_layers: Vec<AutoencoderLayer>,
    /// One group layer per subpart slot; empty slots hold `None`.
    pub group_layers: Vec<Option<AutoencoderLayer>>,
    /// Median clean reconstruction error per landmark; empty until
    /// calibration.
    pub sigma0: Vec<f64>,
}

/// Per-image confidence output.
#[derive(Debug, Clone, PartialEq)]
pub struct Confidences {
    /// Squared reconstruction error per landmark.
    pub errors: Vec<f64>,
    /// `exp(-error / sigma0)` per landmark, in (0, 1].
    pub alphas: Vec<f64>,
}

/// Extracts the per-landmark HOG descriptors of one image, conditioned for
/// the autoencoder stack (see [`DESCRIPTOR_SCALE`]).
pub fn extract_descriptors(channels: &IntegralChannels, shape: &Shape) -> Vec<Vec<f64>> {
    let iod = shape.interocular_distance();
    shape
        .points()
        .iter()
        .map(|&p| {
            channels
                .hog_descriptor(p, iod)
                .values()
                .iter()
                .map(|v| v * DESCRIPTOR_SCALE)
                .collect()
        })
        .collect()
}

impl ConfidenceNetwork {
    pub fn n_points(&self) -> usize {
        self.scheme.n_points
    }

    pub fn is_calibrated(&self) -> bool {
        !self.sigma0.is_empty()
    }

    /// Runs the full encode/decode stack for one subpart: every landmark of
    /// the group is encoded (L1), the encodings are concatenated and passed
    /// through the group layer (L2), and the reconstructed encodings are
    /// decoded back (L1) into per-point descriptor reconstructions.
    pub fn reconstruct_group(
        &self,
        part: Subpart,
        descriptors: &[&[f64]],
    ) -> Result<Vec<Vec<f64>>> {
        let group = self.grouping.group(part);
        if group.len() != descriptors.len() {
            return Err(Error::InvalidInput(format!(
                "{} descriptors for subpart {} of {} landmarks",
                descriptors.len(),
                part.name(),
                group.len()
            )));
        }
        let layer2 = self.group_layers[part as usize]
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("subpart {} is empty", part.name())))?;

        let mut xi = Vec::with_capacity(group.len() * L1_HIDDEN);
        for (&k, desc) in group.iter().zip(descriptors) {
            let l1 = &self.point_layers[k];
            if desc.len() != l1.input {
                return Err(Error::InvalidInput(format!(
                    "descriptor of {} values, layer expects {}",
                    desc.len(),
                    l1.input
                )));
            }
            xi.extend(l1.encode(desc));
        }
        let xi_recon = layer2.reconstruct(&xi);

        let mut out = Vec::with_capacity(group.len());
        for (slot, &k) in group.iter().enumerate() {
            let l1 = &self.point_layers[k];
            let y = &xi_recon[slot * l1.hidden..(slot + 1) * l1.hidden];
            out.push(l1.decode(y));
        }
        Ok(out)
    }

    /// Squared reconstruction errors for every landmark of one subpart.
    pub fn group_errors(&self, part: Subpart, descriptors: &[&[f64]]) -> Result<Vec<f64>> {
        let recon = self.reconstruct_group(part, descriptors)?;
        Ok(descriptors
            .iter()
            .zip(&recon)
            .map(|(d, r)| d.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect())
    }

    /// Per-landmark reconstruction errors of one image. A landmark belonging
    /// to several subparts takes its error from the first group in subpart
    /// order; landmarks outside every group get error 0.
    pub fn point_errors(&self, descriptors: &[Vec<f64>]) -> Result<Vec<f64>> {
        if descriptors.len() != self.n_points() {
            return Err(Error::InvalidInput(format!(
                "{} descriptors for a {}-point scheme",
                descriptors.len(),
                self.n_points()
            )));
        }
        let mut errors = vec![f64::NAN; self.n_points()];
        for (part, group) in self.grouping.groups() {
            if group.is_empty() {
                continue;
            }
            let descs: Vec<&[f64]> = group.iter().map(|&k| descriptors[k].as_slice()).collect();
            let group_errors = self.group_errors(part, &descs)?;
            for (&k, e) in group.iter().zip(group_errors) {
                if errors[k].is_nan() {
                    errors[k] = e;
                }
            }
        }
        for e in &mut errors {
            if e.is_nan() {
                *e = 0.0;
            }
        }
        Ok(errors)
    }

    /// Confidence of landmark `k` given its reconstruction error:
    /// `exp(-error / sigma0(k))`, strictly decreasing in the error.
    pub fn point_confidence(&self, k: usize, error: f64) -> Result<f64> {
        if !self.is_calibrated() {
            return Err(Error::Model(
                "confidence network is not calibrated (no sigma0)".into(),
            ));
        }
        Ok((-error / self.sigma0[k]).exp())
    }

    /// Errors and confidences for one image.
    pub fn confidences(&self, channels: &IntegralChannels, shape: &Shape) -> Result<Confidences> {
        if shape.scheme().id != self.scheme.id {
            return Err(Error::Incompatible(format!(
                "shape scheme {} does not match network scheme {}",
                shape.scheme().id,
                self.scheme.id
            )));
        }
        let descriptors = extract_descriptors(channels, shape);
        let errors = self.point_errors(&descriptors)?;
        let alphas = errors
            .iter()
            .enumerate()
            .map(|(k, &e)| self.point_confidence(k, e))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Confidences { errors, alphas })
    }

    /// Calibrates `sigma0` per landmark as the median clean reconstruction
    /// error over a validation set of per-image descriptor lists.
    pub fn calibrate(&mut self, validation: &[Vec<Vec<f64>>]) -> Result<()> {
        if validation.is_empty() {
            return Err(Error::InvalidInput(
                "cannot calibrate on an empty validation set".into(),
            ));
        }
        let n_p = self.n_points();
        let mut per_point: Vec<Vec<f64>> = vec![Vec::with_capacity(validation.len()); n_p];
        for descriptors in validation {
            let errors = self.point_errors(descriptors)?;
            for (k, e) in errors.into_iter().enumerate() {
                per_point[k].push(e);
            }
        }
        self.sigma0 = per_point
            .into_iter()
            .map(|errors| median(errors).max(1e-12))
            .collect();
        Ok(())
    }
}

/// Median of a sample; even counts average the two central values.
pub fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Minimum vertex confidence per mesh triangle.
pub fn triangle_confidence(alphas: &[f64], mesh: &FacialMesh) -> Vec<f64> {
    mesh.triangles
        .iter()
        .map(|t| t.iter().map(|&v| alphas[v]).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Trains the full network layer-wise: every landmark's first layer on its
/// clean descriptors, then every subpart's second layer on the concatenated
/// first-layer encodings, then sigma0 calibration on the same clean data.
pub fn train_network(
    descriptors: &[Vec<Vec<f64>>],
    labels: Option<&[usize]>,
    scheme: &LandmarkScheme,
    grouping: &SubpartGrouping,
    cfg: &AeTrainConfig,
) -> Result<ConfidenceNetwork> {
    cfg.validate()?;
    if descriptors.is_empty() {
        return Err(Error::Train("no training images".into()));
    }
    let n_p = scheme.n_points;
    if descriptors.iter().any(|d| d.len() != n_p) {
        return Err(Error::Train(format!(
            "descriptor lists must hold {n_p} landmarks"
        )));
    }
    if let Some(labels) = labels {
        if labels.len() != descriptors.len() {
            return Err(Error::Train("label count does not match images".into()));
        }
    }

    // first layer, independently per landmark
    let point_layers: Result<Vec<AutoencoderLayer>> = (0..n_p)
        .into_par_iter()
        .map(|k| {
            let inputs: Vec<Vec<f64>> = descriptors.iter().map(|d| d[k].clone()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k as u64));
            train_layer(&inputs, labels, L1_HIDDEN, cfg, &mut rng).map(|(l, _)| l)
        })
        .collect();
    let point_layers = point_layers?;

    // second layer per non-empty subpart, on concatenated encodings
    let groups: Vec<(Subpart, Vec<usize>)> =
        grouping.groups().map(|(p, g)| (p, g.to_vec())).collect();
    let group_layers: Result<Vec<Option<AutoencoderLayer>>> = groups
        .par_iter()
        .map(|(part, group)| {
            if group.is_empty() {
                return Ok(None);
            }
            let inputs: Vec<Vec<f64>> = descriptors
                .iter()
                .map(|d| {
                    let mut xi = Vec::with_capacity(group.len() * L1_HIDDEN);
                    for &k in group {
                        xi.extend(point_layers[k].encode(&d[k]));
                    }
                    xi
                })
                .collect();
            let hidden = L2_HIDDEN_PER_POINT * group.len();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1000 + *part as u64));
            train_layer(&inputs, labels, hidden, cfg, &mut rng).map(|(l, _)| Some(l))
        })
        .collect();

    let mut network = ConfidenceNetwork {
        scheme: scheme.clone(),
        grouping: grouping.clone(),
        point_layers,
        group_layers: group_layers?,
        sigma0: Vec::new(),
    };
    network.calibrate(descriptors)?;
    Ok(network)
}
