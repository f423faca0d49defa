//! Binary split-candidate templates and their on-the-fly sampling.
//!
//! Four templates exist: normalized point distances, point-triple angles
//! (cosine or sine), integral channel-window ratios evaluated at barycentric
//! face locations, and raw LEP components (used only by the AU layer).
//! Parameters are drawn uniformly during training, restricted to the
//! geometry of the growing tree's facial mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channels::{IntegralChannels, N_CHANNELS};
use crate::mesh::{FacialMesh, Shape};

/// A fully parameterized split feature. Thresholds are stored separately in
/// the tree nodes that use the feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Feature {
    /// Distance between two landmarks over the inter-ocular distance.
    PointDistance { a: usize, b: usize },
    /// Cosine (or sine) of the angle at vertex `b` formed with `a` and `c`.
    PointAngle {
        a: usize,
        b: usize,
        c: usize,
        use_cos: bool,
    },
    /// Channel-window ratio at a barycentric location of a mesh triangle;
    /// window side is `size_frac` times the inter-ocular distance.
    ChannelWindow {
        triangle: usize,
        channel: usize,
        size_frac: f64,
        bary: [f64; 3],
    },
    /// One component of a LEP feature vector (AU layer only).
    LepComponent {
        model: usize,
        label: usize,
        triangle: usize,
    },
}

impl Feature {
    pub fn template_id(&self) -> u8 {
        match self {
            Feature::LepComponent { .. } => 0,
            Feature::PointDistance { .. } => 1,
            Feature::PointAngle { .. } => 2,
            Feature::ChannelWindow { .. } => 3,
        }
    }
}

/// Normalized landmark distance: ||f_a - f_b|| / iod(f).
pub fn point_distance(shape: &Shape, a: usize, b: usize) -> f64 {
    shape.point(a).distance(&shape.point(b)) / shape.interocular_distance()
}

/// Cosine or sine of the angle at vertex `b` between rays b->a and b->c.
/// The signed two-argument form keeps both outputs continuous through zero.
/// Degenerate rays (coincident points) evaluate to 0.
pub fn point_angle(shape: &Shape, a: usize, b: usize, c: usize, use_cos: bool) -> f64 {
    let (pa, pb, pc) = (shape.point(a), shape.point(b), shape.point(c));
    let (ux, uy) = (pa.x - pb.x, pa.y - pb.y);
    let (vx, vy) = (pc.x - pb.x, pc.y - pb.y);
    let nu = ux.hypot(uy);
    let nv = vx.hypot(vy);
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    let cos = (ux * vx + uy * vy) / (nu * nv);
    let sin = (ux * vy - uy * vx) / (nu * nv);
    if use_cos {
        cos
    } else {
        sin
    }
}

/// Integral channel histogram ratio: channel `channel` mass over gradient
/// magnitude mass within a window of side `size_frac * iod`, centered at the
/// barycentric point of `triangle`. Out-of-image windows evaluate to 0.
pub fn channel_window(
    channels: &IntegralChannels,
    shape: &Shape,
    mesh: &FacialMesh,
    triangle: usize,
    channel: usize,
    size_frac: f64,
    bary: [f64; 3],
) -> f64 {
    channel_window_iod(
        channels,
        shape,
        mesh,
        triangle,
        channel,
        size_frac,
        bary,
        shape.interocular_distance(),
    )
}

#[allow(clippy::too_many_arguments)]
fn channel_window_iod(
    channels: &IntegralChannels,
    shape: &Shape,
    mesh: &FacialMesh,
    triangle: usize,
    channel: usize,
    size_frac: f64,
    bary: [f64; 3],
    iod: f64,
) -> f64 {
    let center = match mesh.barycentric_point(shape, triangle, bary[0], bary[1], bary[2]) {
        Ok(p) => p,
        Err(_) => return 0.0,
    };
    let side = size_frac * iod;
    let hist = channels.window_histogram(center, side);
    if hist.out_of_bounds {
        return 0.0;
    }
    let eps = 1e-8 * side * side;
    hist.sums[channel] / (hist.sums[0] + eps)
}

/// Evaluation context shared by every feature template. Image-domain
/// contexts serve the geometric and appearance templates; LEP-vector
/// contexts serve the AU layer.
pub trait FeatureSpace {
    fn eval(&self, feature: &Feature) -> f64;
}

/// Bundles one image's channels, its aligned shape and the forest's mesh.
/// The inter-ocular distance is cached; it divides every geometric feature.
pub struct ImageContext<'a> {
    pub channels: &'a IntegralChannels,
    pub shape: &'a Shape,
    pub mesh: &'a FacialMesh,
    iod: f64,
}

impl<'a> ImageContext<'a> {
    pub fn new(channels: &'a IntegralChannels, shape: &'a Shape, mesh: &'a FacialMesh) -> Self {
        ImageContext {
            channels,
            shape,
            mesh,
            iod: shape.interocular_distance(),
        }
    }
}

impl FeatureSpace for ImageContext<'_> {
    fn eval(&self, feature: &Feature) -> f64 {
        match *feature {
            Feature::PointDistance { a, b } => {
                self.shape.point(a).distance(&self.shape.point(b)) / self.iod
            }
            Feature::PointAngle { a, b, c, use_cos } => point_angle(self.shape, a, b, c, use_cos),
            Feature::ChannelWindow {
                triangle,
                channel,
                size_frac,
                bary,
            } => channel_window_iod(
                self.channels,
                self.shape,
                self.mesh,
                triangle,
                channel,
                size_frac,
                bary,
                self.iod,
            ),
            Feature::LepComponent { .. } => {
                debug_assert!(false, "LEP component evaluated on an image context");
                0.0
            }
        }
    }
}

/// A flattened LEP feature vector, laid out model-major, then triangle,
/// then expression label: index = (model * n_triangles + triangle) *
/// n_labels + label.
pub struct LepVectorContext<'a> {
    pub values: &'a [f64],
    pub n_labels: usize,
    pub n_triangles: usize,
}

impl<'a> LepVectorContext<'a> {
    pub fn new(values: &'a [f64], n_labels: usize, n_triangles: usize) -> Self {
        debug_assert_eq!(values.len() % (n_labels * n_triangles), 0);
        LepVectorContext {
            values,
            n_labels,
            n_triangles,
        }
    }
}

impl FeatureSpace for LepVectorContext<'_> {
    fn eval(&self, feature: &Feature) -> f64 {
        match *feature {
            Feature::LepComponent {
                model,
                label,
                triangle,
            } => {
                let idx = (model * self.n_triangles + triangle) * self.n_labels + label;
                self.values[idx]
            }
            _ => {
                debug_assert!(false, "image feature evaluated on a LEP vector context");
                0.0
            }
        }
    }
}

/// How many candidates of each template to draw per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub phi1: usize,
    pub phi2: usize,
    pub phi3: usize,
    pub phi0: usize,
}

impl CandidateCounts {
    /// Expression trees: 40 distances, 40 angles, 160 channel windows.
    pub fn expression() -> Self {
        CandidateCounts {
            phi1: 40,
            phi2: 40,
            phi3: 160,
            phi0: 0,
        }
    }

    /// AU trees: 100 LEP components.
    pub fn action_unit() -> Self {
        CandidateCounts {
            phi1: 0,
            phi2: 0,
            phi3: 0,
            phi0: 100,
        }
    }

    pub fn total(&self) -> usize {
        self.phi1 + self.phi2 + self.phi3 + self.phi0
    }
}

/// Per-template threshold bounds, estimated from training data before the
/// trees are grown. LEP components always use [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRanges {
    pub phi1: (f64, f64),
    pub phi2: (f64, f64),
    pub phi3: (f64, f64),
    pub phi0: (f64, f64),
}

impl Default for ThresholdRanges {
    fn default() -> Self {
        ThresholdRanges {
            phi1: (0.0, 2.0),
            phi2: (-1.0, 1.0),
            phi3: (0.0, 1.0),
            phi0: (0.0, 1.0),
        }
    }
}

impl ThresholdRanges {
    pub fn for_feature(&self, f: &Feature) -> (f64, f64) {
        match f {
            Feature::PointDistance { .. } => self.phi1,
            Feature::PointAngle { .. } => self.phi2,
            Feature::ChannelWindow { .. } => self.phi3,
            Feature::LepComponent { .. } => self.phi0,
        }
    }
}

/// The geometry a tree may draw candidates from: the distinct vertices and
/// triangle indices of its facial mask (or the full mesh for global trees
/// and the flattened LEP space for AU trees).
#[derive(Debug, Clone)]
pub struct CandidatePool {
    /// Landmark indices usable by distance/angle templates.
    pub points: Vec<usize>,
    /// Triangle indices usable by channel-window (and LEP) templates.
    pub triangles: Vec<usize>,
    /// Number of expression labels, for LEP components.
    pub n_labels: usize,
    /// Number of concatenated source models, for LEP components.
    pub n_models: usize,
    /// Window side bounds for channel windows, as fractions of the iod.
    pub sz_range: (f64, f64),
}

impl CandidatePool {
    /// Pool over a set of mask triangles: points are the distinct vertices.
    pub fn from_mask(mesh: &FacialMesh, mask_triangles: &[usize]) -> Self {
        let mut points: Vec<usize> = mask_triangles
            .iter()
            .flat_map(|&t| mesh.triangles[t])
            .collect();
        points.sort_unstable();
        points.dedup();
        CandidatePool {
            points,
            triangles: mask_triangles.to_vec(),
            n_labels: 0,
            n_models: 1,
            sz_range: (0.05, 0.5),
        }
    }

    /// Pool over a flattened LEP feature space (AU trees).
    pub fn lep_space(n_models: usize, n_labels: usize, n_triangles: usize) -> Self {
        CandidatePool {
            points: Vec::new(),
            triangles: (0..n_triangles).collect(),
            n_labels,
            n_models,
            sz_range: (0.05, 0.5),
        }
    }
}

/// Uniform sample on the unit simplex (uniform over the triangle).
fn sample_barycentric(rng: &mut impl Rng) -> [f64; 3] {
    let su = rng.gen::<f64>().sqrt();
    let v = rng.gen::<f64>();
    [1.0 - su, su * (1.0 - v), su * v]
}

/// Draws split-candidate features for one node, restricted to the pool.
pub fn sample_candidates(
    pool: &CandidatePool,
    counts: &CandidateCounts,
    rng: &mut impl Rng,
) -> Vec<Feature> {
    let mut out = Vec::with_capacity(counts.total());
    if counts.phi2 > 0 {
        // a valid mask exposes at least one triangle, i.e. 3 distinct points
        assert!(pool.points.len() >= 2, "mask with < 2 distinct vertices");
    }
    let pick = |rng: &mut dyn rand::RngCore, set: &[usize]| set[rng.gen_range(0..set.len())];
    for _ in 0..counts.phi1 {
        out.push(Feature::PointDistance {
            a: pick(rng, &pool.points),
            b: pick(rng, &pool.points),
        });
    }
    for _ in 0..counts.phi2 {
        let b = pick(rng, &pool.points);
        // vertex must differ from both ray endpoints; masks always expose
        // at least one triangle, hence at least 3 distinct points
        let a = loop {
            let a = pick(rng, &pool.points);
            if a != b {
                break a;
            }
        };
        let c = loop {
            let c = pick(rng, &pool.points);
            if c != b {
                break c;
            }
        };
        out.push(Feature::PointAngle {
            a,
            b,
            c,
            use_cos: rng.gen(),
        });
    }
    for _ in 0..counts.phi3 {
        out.push(Feature::ChannelWindow {
            triangle: pick(rng, &pool.triangles),
            channel: rng.gen_range(0..N_CHANNELS),
            size_frac: rng.gen_range(pool.sz_range.0..=pool.sz_range.1),
            bary: sample_barycentric(rng),
        });
    }
    for _ in 0..counts.phi0 {
        out.push(Feature::LepComponent {
            model: rng.gen_range(0..pool.n_models),
            label: rng.gen_range(0..pool.n_labels),
            triangle: pick(rng, &pool.triangles),
        });
    }
    out
}

/// Draws `n` candidate thresholds uniformly in [lo, hi].
pub fn sample_thresholds(lo: f64, hi: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
        .collect()
}
