//! Shapes, the mean shape, the facial mesh and its barycentric geometry.
//!
//! A [`Shape`] is an ordered list of aligned landmark coordinates following a
//! named [`LandmarkScheme`]. The mesh is a Delaunay triangulation of the mean
//! shape, computed once and indexed identically across all images, so that a
//! triangle index means the same face region everywhere.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2-D point in pixel (or normalized) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Names a point-ordering convention and the index sets the pipeline needs
/// from it: eye centers (for the inter-ocular distance) and the eye/mouth
/// regions used for synthetic occlusions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkScheme {
    pub id: String,
    pub n_points: usize,
    /// Landmarks averaged to obtain the left eye center.
    pub left_eye: Vec<usize>,
    /// Landmarks averaged to obtain the right eye center.
    pub right_eye: Vec<usize>,
    /// Eye region including the eyebrows (occlusion bounding box).
    pub eyes_region: Vec<usize>,
    /// Mouth region (occlusion bounding box).
    pub mouth_region: Vec<usize>,
}

impl LandmarkScheme {
    pub fn new(
        id: impl Into<String>,
        n_points: usize,
        left_eye: Vec<usize>,
        right_eye: Vec<usize>,
        eyes_region: Vec<usize>,
        mouth_region: Vec<usize>,
    ) -> Result<Arc<Self>> {
        let scheme = LandmarkScheme {
            id: id.into(),
            n_points,
            left_eye,
            right_eye,
            eyes_region,
            mouth_region,
        };
        scheme.validate()?;
        Ok(Arc::new(scheme))
    }

    fn validate(&self) -> Result<()> {
        if self.n_points < 3 {
            return Err(Error::InvalidInput(format!(
                "scheme {}: needs at least 3 points, has {}",
                self.id, self.n_points
            )));
        }
        for (name, set) in [
            ("left-eye", &self.left_eye),
            ("right-eye", &self.right_eye),
            ("eyes-region", &self.eyes_region),
            ("mouth-region", &self.mouth_region),
        ] {
            if set.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "scheme {}: empty {name} index set",
                    self.id
                )));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= self.n_points) {
                return Err(Error::InvalidInput(format!(
                    "scheme {}: {name} index {bad} out of range (N_p = {})",
                    self.id, self.n_points
                )));
            }
        }
        Ok(())
    }

    /// The default 49-point scheme: 2x5 eyebrows, 9 nose, 2x6 eyes, 18 mouth
    /// (12 outer + 6 inner). Indices:
    /// 0-4 left brow, 5-9 right brow, 10-18 nose (10-13 bridge, 14-18
    /// nostril line), 19-24 left eye, 25-30 right eye, 31-42 outer mouth
    /// ring clockwise from the left corner, 43-48 inner mouth ring.
    pub fn face49() -> Arc<Self> {
        LandmarkScheme::new(
            "face49",
            49,
            (19..=24).collect(),
            (25..=30).collect(),
            (0..=9).chain(19..=30).collect(),
            (31..=48).collect(),
        )
        .expect("builtin scheme is valid")
    }

    /// Look a builtin scheme up by id.
    pub fn builtin(id: &str) -> Option<Arc<Self>> {
        match id {
            "face49" => Some(Self::face49()),
            "synth17" => Some(crate::data::synth17_scheme()),
            "synth5" => Some(crate::data::synth5_scheme()),
            _ => None,
        }
    }
}

/// Aligned landmark coordinates for one face image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    points: Vec<Point>,
    scheme: Arc<LandmarkScheme>,
}

impl Shape {
    /// Validates the point count, finiteness and a strictly positive
    /// inter-ocular distance.
    pub fn new(points: Vec<Point>, scheme: Arc<LandmarkScheme>) -> Result<Self> {
        if points.len() != scheme.n_points {
            return Err(Error::InvalidInput(format!(
                "shape has {} points, scheme {} expects {}",
                points.len(),
                scheme.id,
                scheme.n_points
            )));
        }
        if let Some((i, _)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "shape point {i} is not finite"
            )));
        }
        let shape = Shape { points, scheme };
        if shape.interocular_distance() <= 0.0 {
            return Err(Error::InvalidInput(
                "degenerate shape: inter-ocular distance is zero".into(),
            ));
        }
        Ok(shape)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn scheme(&self) -> &Arc<LandmarkScheme> {
        &self.scheme
    }

    pub fn centroid(&self) -> Point {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    fn eye_center(&self, indices: &[usize]) -> Point {
        let n = indices.len() as f64;
        let (sx, sy) = indices.iter().fold((0.0, 0.0), |(sx, sy), &i| {
            (sx + self.points[i].x, sy + self.points[i].y)
        });
        Point::new(sx / n, sy / n)
    }

    /// Euclidean distance between the two eye centers.
    pub fn interocular_distance(&self) -> f64 {
        self.eye_center(&self.scheme.left_eye)
            .distance(&self.eye_center(&self.scheme.right_eye))
    }

    /// Reads the plain-text landmark format: one `x y` line per point,
    /// exactly N_p lines, ordered per scheme.
    pub fn load(path: &Path, scheme: Arc<LandmarkScheme>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (x, y) = match (it.next(), it.next(), it.next()) {
                (Some(x), Some(y), None) => (x, y),
                _ => {
                    return Err(Error::parse(
                        path,
                        lineno + 1,
                        "expected exactly two coordinates",
                    ))
                }
            };
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad coordinate {s:?}")))
            };
            points.push(Point::new(parse(x)?, parse(y)?));
        }
        if points.len() != scheme.n_points {
            return Err(Error::InvalidInput(format!(
                "{}: {} landmark lines, scheme {} expects {}",
                path.display(),
                points.len(),
                scheme.id,
                scheme.n_points
            )));
        }
        Shape::new(points, scheme)
    }

    /// Writes the landmark file format accepted by [`Shape::load`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for p in &self.points {
            out.push_str(&format!("{} {}\n", p.x, p.y));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Per-coordinate mean of inter-ocular-normalized, centroid-centered shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanShape {
    pub points: Vec<Point>,
    pub source_count: usize,
    pub scheme: Arc<LandmarkScheme>,
}

/// Normalizes a shape for averaging: centroid translated to the origin,
/// coordinates divided by the inter-ocular distance.
fn normalized_points(shape: &Shape) -> Vec<Point> {
    let c = shape.centroid();
    let iod = shape.interocular_distance();
    shape
        .points()
        .iter()
        .map(|p| Point::new((p.x - c.x) / iod, (p.y - c.y) / iod))
        .collect()
}

/// Computes the mean shape over inter-ocular-normalized input shapes.
pub fn compute_mean_shape<S: std::borrow::Borrow<Shape>>(shapes: &[S]) -> Result<MeanShape> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot average an empty list of shapes".into()))?
        .borrow();
    let scheme = first.scheme().clone();
    let n_p = scheme.n_points;
    let mut acc = vec![Point::new(0.0, 0.0); n_p];
    for shape in shapes {
        let shape = shape.borrow();
        if shape.scheme().id != scheme.id || shape.points().len() != n_p {
            return Err(Error::InvalidInput(format!(
                "mixed landmark schemes: {} vs {}",
                shape.scheme().id,
                scheme.id
            )));
        }
        for (a, p) in acc.iter_mut().zip(normalized_points(shape)) {
            a.x += p.x;
            a.y += p.y;
        }
    }
    let n = shapes.len() as f64;
    for a in &mut acc {
        a.x /= n;
        a.y /= n;
    }
    Ok(MeanShape {
        points: acc,
        source_count: shapes.len(),
        scheme,
    })
}

/// Twice the signed area of the triangle `a`, `b`, `c`.
fn cross2(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Shoelace area of a triangle given by three points.
pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * cross2(a, b, c).abs()
}

/// The triangulation over the mean shape. Triangle indices are shared across
/// every image; `surfaces` holds each triangle's fraction of the total mesh
/// area on the mean shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacialMesh {
    pub triangles: Vec<[usize; 3]>,
    /// For each triangle, the indices of edge-sharing neighbors (sorted).
    pub adjacency: Vec<Vec<usize>>,
    /// Normalized surface fractions on the mean shape; they sum to 1.
    pub surfaces: Vec<f64>,
}

impl FacialMesh {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Surface fraction of triangle `t` as stored (mean-shape geometry).
    pub fn surface(&self, t: usize) -> f64 {
        self.surfaces[t]
    }

    /// Shoelace area of triangle `t` over arbitrary coordinates, divided by
    /// the total area of the mesh over those coordinates.
    pub fn surface_on(&self, points: &[Point], t: usize) -> f64 {
        let area = |tri: &[usize; 3]| triangle_area(points[tri[0]], points[tri[1]], points[tri[2]]);
        let total: f64 = self.triangles.iter().map(area).sum();
        area(&self.triangles[t]) / total
    }

    /// Convex combination of the three vertex coordinates of triangle `t`
    /// on the given shape. Weights must lie on the unit simplex.
    pub fn barycentric_point(
        &self,
        shape: &Shape,
        t: usize,
        alpha: f64,
        beta: f64,
        gamma: f64,
    ) -> Result<Point> {
        const TOL: f64 = 1e-9;
        let sum = alpha + beta + gamma;
        if (sum - 1.0).abs() > TOL
            || !(-TOL..=1.0 + TOL).contains(&alpha)
            || !(-TOL..=1.0 + TOL).contains(&beta)
            || !(-TOL..=1.0 + TOL).contains(&gamma)
        {
            return Err(Error::InvalidInput(format!(
                "barycentric weights ({alpha}, {beta}, {gamma}) outside the simplex"
            )));
        }
        let [i, j, k] = self.triangles[t];
        let (a, b, c) = (shape.point(i), shape.point(j), shape.point(k));
        Ok(Point::new(
            alpha * a.x + beta * b.x + gamma * c.x,
            alpha * a.y + beta * b.y + gamma * c.y,
        ))
    }
}

/// Delaunay triangulation of the mean shape via Bowyer-Watson insertion.
///
/// The output is canonicalized (triangles CCW with the smallest vertex index
/// first, list sorted lexicographically) so identical input coordinates give
/// an identical mesh regardless of construction order.
pub fn triangulate(mean: &MeanShape) -> Result<FacialMesh> {
    let points = &mean.points;
    let raw = bowyer_watson(points)?;

    let mut triangles: Vec<[usize; 3]> = raw
        .into_iter()
        .map(|mut t| {
            // Force counter-clockwise in y-down coordinates is irrelevant;
            // normalize to positive orientation and smallest index first.
            if cross2(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
            let min_pos = (0..3).min_by_key(|&i| t[i]).unwrap();
            t.rotate_left(min_pos);
            t
        })
        .collect();
    triangles.sort_unstable();

    // surfaces
    let areas: Vec<f64> = triangles
        .iter()
        .map(|t| triangle_area(points[t[0]], points[t[1]], points[t[2]]))
        .collect();
    let total: f64 = areas.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "triangulation has zero total area (collinear input?)".into(),
        ));
    }
    if areas.iter().any(|&a| a <= 0.0) {
        return Err(Error::InvalidInput(
            "triangulation produced a degenerate triangle".into(),
        ));
    }
    let surfaces: Vec<f64> = areas.iter().map(|a| a / total).collect();

    // adjacency from shared edges
    let mut edge_owners: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (ti, t) in triangles.iter().enumerate() {
        for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (e.0.min(e.1), e.0.max(e.1));
            edge_owners.entry(key).or_default().push(ti);
        }
    }
    let mut adjacency = vec![Vec::new(); triangles.len()];
    for owners in edge_owners.values() {
        if owners.len() == 2 {
            adjacency[owners[0]].push(owners[1]);
            adjacency[owners[1]].push(owners[0]);
        }
    }
    for nbrs in &mut adjacency {
        nbrs.sort_unstable();
        nbrs.dedup();
    }

    Ok(FacialMesh {
        triangles,
        adjacency,
        surfaces,
    })
}

/// Plain Bowyer-Watson over f64 coordinates. Landmark meshes are tiny
/// (tens of points), so the O(n^2) insertion loop is fine.
fn bowyer_watson(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "triangulation needs at least 3 points, got {n}"
        )));
    }
    // Super-triangle comfortably containing every input point.
    let (mut min_x, mut min_y, mut max_x, mut max_y) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for p in points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let big = 64.0 * span;
    let super_pts = [
        Point::new(cx - big, cy - 0.5 * big),
        Point::new(cx + big, cy - 0.5 * big),
        Point::new(cx, cy + big),
    ];
    let coord = |i: usize| -> Point {
        if i < n {
            points[i]
        } else {
            super_pts[i - n]
        }
    };

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    for p in 0..n {
        let pt = coord(p);
        // Triangles whose circumcircle strictly contains the new point.
        let mut bad = Vec::new();
        for (i, t) in tris.iter().enumerate() {
            if in_circumcircle(coord(t[0]), coord(t[1]), coord(t[2]), pt) {
                bad.push(i);
            }
        }
        // Boundary of the cavity: edges appearing in exactly one bad triangle.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &i in &bad {
            let t = tris[i];
            for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let rev = (e.1, e.0);
                if let Some(pos) = edges.iter().position(|&x| x == rev || x == e) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(e);
                }
            }
        }
        for &i in bad.iter().rev() {
            tris.swap_remove(i);
        }
        for (a, b) in edges {
            tris.push([a, b, p]);
        }
    }

    tris.retain(|t| t.iter().all(|&v| v < n));
    if tris.is_empty() {
        return Err(Error::InvalidInput(
            "all points are collinear; no triangulation exists".into(),
        ));
    }
    Ok(tris)
}

/// True when `p` lies strictly inside the circumcircle of `a`, `b`, `c`.
fn in_circumcircle(a: Point, b: Point, c: Point, p: Point) -> bool {
    // Standard incircle determinant, sign-corrected for orientation.
    let (ax, ay) = (a.x - p.x, a.y - p.y);
    let (bx, by) = (b.x - p.x, b.y - p.y);
    let (cx, cy) = (c.x - p.x, c.y - p.y);
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by) - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    let orient = cross2(a, b, c);
    if orient > 0.0 {
        det > 0.0
    } else {
        det < 0.0
    }
}

/// The five face subparts used by the hierarchical autoencoder. Slots may be
/// empty for reduced test schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subpart {
    LeftEye,
    RightEye,
    Nose,
    LeftMouth,
    RightMouth,
}

impl Subpart {
    pub const ALL: [Subpart; 5] = [
        Subpart::LeftEye,
        Subpart::RightEye,
        Subpart::Nose,
        Subpart::LeftMouth,
        Subpart::RightMouth,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Subpart::LeftEye => "left-eye",
            Subpart::RightEye => "right-eye",
            Subpart::Nose => "nose",
            Subpart::LeftMouth => "left-mouth",
            Subpart::RightMouth => "right-mouth",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Subpart::ALL.iter().copied().find(|s| s.name() == name)
    }
}

/// Landmark index lists for the five subparts. Groups may share indices
/// (e.g. mouth corners) and sizes are configurable per scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubpartGrouping {
    groups: [Vec<usize>; 5],
}

impl SubpartGrouping {
    pub fn new(groups: [Vec<usize>; 5], n_points: usize) -> Result<Self> {
        for (part, group) in Subpart::ALL.iter().zip(&groups) {
            if let Some(&bad) = group.iter().find(|&&i| i >= n_points) {
                return Err(Error::InvalidInput(format!(
                    "grouping: {} index {bad} out of range (N_p = {n_points})",
                    part.name()
                )));
            }
        }
        Ok(SubpartGrouping { groups })
    }

    pub fn group(&self, part: Subpart) -> &[usize] {
        &self.groups[part as usize]
    }

    pub fn groups(&self) -> impl Iterator<Item = (Subpart, &[usize])> {
        Subpart::ALL
            .iter()
            .zip(&self.groups)
            .map(|(&p, g)| (p, g.as_slice()))
    }

    /// First subpart whose group contains landmark `k`, if any.
    pub fn subpart_of(&self, k: usize) -> Option<Subpart> {
        self.groups().find(|(_, g)| g.contains(&k)).map(|(p, _)| p)
    }

    /// Default grouping for the 49-point scheme: sizes 12, 12, 8, 11, 11.
    /// The nose-bridge top and the mouth centers/inner corners are shared
    /// between the neighboring groups.
    pub fn default_face49() -> Self {
        SubpartGrouping::new(
            [
                vec![0, 1, 2, 3, 4, 19, 20, 21, 22, 23, 24, 10],
                vec![5, 6, 7, 8, 9, 25, 26, 27, 28, 29, 30, 10],
                vec![11, 12, 13, 14, 15, 16, 17, 18],
                vec![31, 32, 33, 34, 40, 41, 42, 43, 44, 48, 46],
                vec![34, 35, 36, 37, 38, 39, 40, 43, 45, 46, 47],
            ],
            49,
        )
        .expect("builtin grouping is valid")
    }

    /// Parses the plain-text grouping format: one line per group, the group
    /// name followed by whitespace-separated landmark indices.
    pub fn parse(text: &str, n_points: usize, path: &Path) -> Result<Self> {
        let mut groups: [Option<Vec<usize>>; 5] = Default::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let name = it.next().unwrap();
            let part = Subpart::from_name(name).ok_or_else(|| {
                Error::parse(path, lineno + 1, format!("unknown subpart {name:?}"))
            })?;
            let mut indices = Vec::new();
            for tok in it {
                let idx: usize = tok.parse().map_err(|_| {
                    Error::parse(path, lineno + 1, format!("bad landmark index {tok:?}"))
                })?;
                indices.push(idx);
            }
            if groups[part as usize].replace(indices).is_some() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("duplicate group {name:?}"),
                ));
            }
        }
        let groups = groups.map(Option::unwrap_or_default);
        SubpartGrouping::new(groups, n_points)
    }

    pub fn load(path: &Path, n_points: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n_points, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (part, group) in self.groups() {
            out.push_str(part.name());
            for i in group {
                out.push_str(&format!(" {i}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_scheme(n: usize) -> Arc<LandmarkScheme> {
        // Points 0 and 1 act as the eye centers.
        LandmarkScheme::new("toy", n, vec![0], vec![1], vec![0, 1], vec![n - 1]).unwrap()
    }

    fn random_shape(rng: &mut ChaCha8Rng, n: usize) -> Shape {
        loop {
            let points: Vec<Point> = (0..n)
                .map(|_| Point::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
                .collect();
            if let Ok(s) = Shape::new(points, toy_scheme(n)) {
                return s;
            }
        }
    }

    #[test]
    fn shape_rejects_wrong_count_and_nonfinite() {
        let scheme = toy_scheme(3);
        assert!(Shape::new(vec![Point::new(0.0, 0.0)], scheme.clone()).is_err());
        assert!(Shape::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(f64::NAN, 0.0),
                Point::new(1.0, 1.0)
            ],
            scheme.clone()
        )
        .is_err());
        // coincident eye centers -> zero iod
        assert!(Shape::new(
            vec![
                Point::new(2.0, 2.0),
                Point::new(2.0, 2.0),
                Point::new(1.0, 1.0)
            ],
            scheme
        )
        .is_err());
    }

    #[test]
    fn iod_simple_and_scaling() {
        let scheme = toy_scheme(3);
        let s = Shape::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(60.0, 0.0),
                Point::new(30.0, 40.0),
            ],
            scheme.clone(),
        )
        .unwrap();
        assert_eq!(s.interocular_distance(), 60.0);

        let doubled = Shape::new(
            s.points()
                .iter()
                .map(|p| Point::new(2.0 * p.x, 2.0 * p.y))
                .collect(),
            scheme,
        )
        .unwrap();
        assert!((doubled.interocular_distance() - 120.0).abs() < 1e-12);
    }

    #[test]
    fn iod_matches_centroid_distance_oracle() {
        let scheme =
            LandmarkScheme::new("toy4", 4, vec![0, 1], vec![2, 3], vec![0, 1, 2, 3], vec![0])
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pts: Vec<Point> = (0..4)
                .map(|_| Point::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let Ok(shape) = Shape::new(pts.clone(), scheme.clone()) else {
                continue;
            };
            let lc = Point::new((pts[0].x + pts[1].x) / 2.0, (pts[0].y + pts[1].y) / 2.0);
            let rc = Point::new((pts[2].x + pts[3].x) / 2.0, (pts[2].y + pts[3].y) / 2.0);
            let expected = ((lc.x - rc.x).powi(2) + (lc.y - rc.y).powi(2)).sqrt();
            assert!((shape.interocular_distance() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_shape_of_one_is_that_shape_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_shape(&mut rng, 5);
        let mean = compute_mean_shape(std::slice::from_ref(&s)).unwrap();
        let expected = normalized_points(&s);
        for (m, e) in mean.points.iter().zip(expected) {
            assert!((m.x - e.x).abs() < 1e-15 && (m.y - e.y).abs() < 1e-15);
        }
        assert_eq!(mean.source_count, 1);
    }

    #[test]
    fn mean_shape_of_mirrored_pair_is_zero() {
        let scheme = toy_scheme(4);
        let pts = vec![
            Point::new(-3.0, 0.5),
            Point::new(3.0, -0.5),
            Point::new(1.0, 2.0),
            Point::new(-1.0, -2.0),
        ];
        let mirrored: Vec<Point> = pts.iter().map(|p| Point::new(-p.x, -p.y)).collect();
        let a = Shape::new(pts, scheme.clone()).unwrap();
        let b = Shape::new(mirrored, scheme).unwrap();
        let mean = compute_mean_shape(&[a, b]).unwrap();
        for p in &mean.points {
            assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        }
    }

    #[test]
    fn mean_shape_matches_direct_average_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let shapes: Vec<Shape> = (0..10).map(|_| random_shape(&mut rng, 6)).collect();
        let mean = compute_mean_shape(&shapes).unwrap();

        // Independent oracle: average the normalized coordinates one index
        // at a time, with its own normalization arithmetic.
        for i in 0..6 {
            let (mut ex, mut ey) = (0.0, 0.0);
            for s in &shapes {
                let n = s.points().len() as f64;
                let cx: f64 = s.points().iter().map(|p| p.x).sum::<f64>() / n;
                let cy: f64 = s.points().iter().map(|p| p.y).sum::<f64>() / n;
                let iod = {
                    let l = s.point(0);
                    let r = s.point(1);
                    ((l.x - r.x).powi(2) + (l.y - r.y).powi(2)).sqrt()
                };
                ex += (s.point(i).x - cx) / iod;
                ey += (s.point(i).y - cy) / iod;
            }
            ex /= shapes.len() as f64;
            ey /= shapes.len() as f64;
            assert!((mean.points[i].x - ex).abs() < 1e-12);
            assert!((mean.points[i].y - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_shape_rejects_empty_and_mismatched() {
        assert!(compute_mean_shape::<Shape>(&[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_shape(&mut rng, 4);
        let b = random_shape(&mut rng, 5);
        assert!(compute_mean_shape(&[a, b]).is_err());
    }

    #[test]
    fn mean_shape_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shapes: Vec<Shape> = (0..5).map(|_| random_shape(&mut rng, 4)).collect();
        let forward = compute_mean_shape(&shapes).unwrap();
        let mut reversed = shapes;
        reversed.reverse();
        let backward = compute_mean_shape(&reversed).unwrap();
        for (f, b) in forward.points.iter().zip(&backward.points) {
            assert!((f.x - b.x).abs() < 1e-12 && (f.y - b.y).abs() < 1e-12);
        }
    }

    fn mean_of_points(points: Vec<Point>) -> MeanShape {
        let n = points.len();
        MeanShape {
            points,
            source_count: 1,
            scheme: toy_scheme(n),
        }
    }

    #[test]
    fn triangulate_three_points() {
        let mean = mean_of_points(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        let mesh = triangulate(&mean).unwrap();
        assert_eq!(mesh.len(), 1);
        assert!((mesh.surface(0) - 1.0).abs() < 1e-12);
        assert!(mesh.adjacency[0].is_empty());
    }

    #[test]
    fn triangulate_unit_square() {
        let mean = mean_of_points(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ]);
        let mesh = triangulate(&mean).unwrap();
        assert_eq!(mesh.len(), 2);
        assert!((mesh.surface(0) - 0.5).abs() < 1e-12);
        assert!((mesh.surface(1) - 0.5).abs() < 1e-12);
        assert_eq!(mesh.adjacency[0], vec![1]);
        assert_eq!(mesh.adjacency[1], vec![0]);
    }

    #[test]
    fn triangulate_rejects_collinear() {
        let mean = mean_of_points(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
        ]);
        assert!(triangulate(&mean).is_err());
    }

    /// Andrew monotone chain; returns hull vertex count.
    fn convex_hull_size(points: &[Point]) -> usize {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| {
            points[a]
                .x
                .partial_cmp(&points[b].x)
                .unwrap()
                .then(points[a].y.partial_cmp(&points[b].y).unwrap())
        });
        let build = |iter: &mut dyn Iterator<Item = usize>| {
            let mut h: Vec<usize> = Vec::new();
            for i in iter {
                while h.len() >= 2
                    && cross2(points[h[h.len() - 2]], points[h[h.len() - 1]], points[i]) <= 0.0
                {
                    h.pop();
                }
                h.push(i);
            }
            h
        };
        let lower = build(&mut idx.iter().copied());
        let upper = build(&mut idx.iter().rev().copied());
        lower.len() + upper.len() - 2
    }

    #[test]
    fn triangulate_satisfies_euler_count_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..5 {
            let points: Vec<Point> = (0..30)
                .map(|_| Point::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)))
                .collect();
            let mean = mean_of_points(points.clone());
            let mesh = triangulate(&mean).unwrap();
            let h = convex_hull_size(&points);
            assert_eq!(mesh.len(), 2 * 30 - 2 - h, "hull size {h}");
            // fractions sum to 1
            let total: f64 = mesh.surfaces.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            // adjacency symmetric
            for (t, nbrs) in mesh.adjacency.iter().enumerate() {
                for &nb in nbrs {
                    assert!(mesh.adjacency[nb].contains(&t));
                }
            }
        }
    }

    #[test]
    fn triangulation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Point> = (0..20)
            .map(|_| Point::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)))
            .collect();
        let a = triangulate(&mean_of_points(points.clone())).unwrap();
        let b = triangulate(&mean_of_points(points)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn surface_on_matches_shoelace_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let points: Vec<Point> = (0..15)
            .map(|_| Point::new(rng.gen_range(0.0..40.0), rng.gen_range(0.0..40.0)))
            .collect();
        let mean = mean_of_points(points.clone());
        let mesh = triangulate(&mean).unwrap();

        let shoelace = |a: Point, b: Point, c: Point| -> f64 {
            0.5 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y)).abs()
        };
        let total: f64 = mesh
            .triangles
            .iter()
            .map(|t| shoelace(points[t[0]], points[t[1]], points[t[2]]))
            .sum();
        let mut sum = 0.0;
        for t in 0..mesh.len() {
            let [i, j, k] = mesh.triangles[t];
            let expected = shoelace(points[i], points[j], points[k]) / total;
            let got = mesh.surface_on(&points, t);
            assert!((got - expected).abs() < 1e-12);
            assert!((got - mesh.surface(t)).abs() < 1e-9);
            sum += got;
        }
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_congruent_triangles_have_half_surface() {
        let mean = mean_of_points(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ]);
        let mesh = triangulate(&mean).unwrap();
        assert_eq!(mesh.len(), 2);
        for t in 0..2 {
            assert!((mesh.surface_on(&mean.points, t) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_point_vertices_and_centroid() {
        let scheme = toy_scheme(3);
        let shape = Shape::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(4.0, 0.0),
                Point::new(0.0, 4.0),
            ],
            scheme.clone(),
        )
        .unwrap();
        let mean = compute_mean_shape(std::slice::from_ref(&shape)).unwrap();
        let mesh = triangulate(&mean).unwrap();

        let v = mesh.barycentric_point(&shape, 0, 1.0, 0.0, 0.0).unwrap();
        let first = shape.point(mesh.triangles[0][0]);
        assert!((v.x - first.x).abs() < 1e-12 && (v.y - first.y).abs() < 1e-12);

        let c = mesh
            .barycentric_point(&shape, 0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)
            .unwrap();
        assert!((c.x - 4.0 / 3.0).abs() < 1e-12 && (c.y - 4.0 / 3.0).abs() < 1e-12);

        assert!(mesh.barycentric_point(&shape, 0, 0.7, 0.7, -0.4).is_err());
        assert!(mesh.barycentric_point(&shape, 0, 0.5, 0.2, 0.2).is_err());
    }

    #[test]
    fn barycentric_point_matches_affine_oracle_and_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let shape = random_shape(&mut rng, 8);
        let mean = compute_mean_shape(std::slice::from_ref(&shape)).unwrap();
        let mesh = triangulate(&mean).unwrap();

        for _ in 0..50 {
            let t = rng.gen_range(0..mesh.len());
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            let su = u.sqrt();
            let alpha = 1.0 - su;
            let beta = su * (1.0 - v);
            let gamma = su * v;

            let got = mesh
                .barycentric_point(&shape, t, alpha, beta, gamma)
                .unwrap();
            let [i, j, k] = mesh.triangles[t];
            let (p, q, r) = (shape.point(i), shape.point(j), shape.point(k));
            assert!((got.x - (alpha * p.x + beta * q.x + gamma * r.x)).abs() < 1e-12);
            assert!((got.y - (alpha * p.y + beta * q.y + gamma * r.y)).abs() < 1e-12);

            // affine equivariance: map the shape, the point maps with it
            let map = |p: Point| Point::new(2.0 * p.x - 3.0 * p.y + 1.0, p.x + 0.5 * p.y - 2.0);
            let mapped = Shape::new(
                shape.points().iter().map(|&p| map(p)).collect(),
                shape.scheme().clone(),
            )
            .unwrap();
            let got_mapped = mesh
                .barycentric_point(&mapped, t, alpha, beta, gamma)
                .unwrap();
            let expected = map(got);
            assert!((got_mapped.x - expected.x).abs() < 1e-9);
            assert!((got_mapped.y - expected.y).abs() < 1e-9);
        }
    }

    #[test]
    fn grouping_roundtrip_and_validation() {
        let g = SubpartGrouping::default_face49();
        let text = g.to_text();
        let parsed = SubpartGrouping::parse(&text, 49, Path::new("inline")).unwrap();
        assert_eq!(g, parsed);
        assert_eq!(g.group(Subpart::LeftEye).len(), 12);
        assert_eq!(g.group(Subpart::RightEye).len(), 12);
        assert_eq!(g.group(Subpart::Nose).len(), 8);
        assert_eq!(g.group(Subpart::LeftMouth).len(), 11);
        assert_eq!(g.group(Subpart::RightMouth).len(), 11);
        // every landmark of the 49-point scheme is covered
        for k in 0..49 {
            assert!(g.subpart_of(k).is_some(), "landmark {k} uncovered");
        }
        assert!(SubpartGrouping::new([vec![49], vec![], vec![], vec![], vec![]], 49).is_err());
    }

    #[test]
    fn landmark_file_roundtrip() {
        let dir = std::env::temp_dir().join("lep-mesh-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pts.txt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = random_shape(&mut rng, 5);
        shape.save(&path).unwrap();
        let loaded = Shape::load(&path, shape.scheme().clone()).unwrap();
        assert_eq!(shape, loaded);
    }
}
