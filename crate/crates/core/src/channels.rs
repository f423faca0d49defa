//! Gradient-based integral feature channels and HOG descriptor extraction.
//!
//! Nine feature maps are computed per image: map 0 holds the gradient
//! magnitude, maps 1-8 the magnitude mass of an 8-bin quantization of the
//! unsigned gradient orientation over [0, pi). Each map is stored as a 2-D
//! prefix sum, so any axis-aligned window histogram costs four lookups per
//! channel. The channels are computed once per image and shared by the split
//! features and the confidence network descriptors.

use crate::error::{Error, Result};
use crate::mesh::Point;

pub const N_CHANNELS: usize = 9;
/// HOG descriptors cover 5x5 cells of 9 channels each.
pub const HOG_CELLS: usize = 5;
pub const HOG_DIM: usize = HOG_CELLS * HOG_CELLS * N_CHANNELS;

/// An 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "pixel buffer of {} bytes does not match {width}x{height}",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

/// Per-channel sums over a window, plus a flag raised when the requested
/// window lies entirely outside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSum {
    pub sums: [f64; N_CHANNELS],
    pub out_of_bounds: bool,
}

/// The nine integral maps of one image. Immutable after construction; all
/// queries are read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralChannels {
    width: usize,
    height: usize,
    /// Nine prefix-sum maps of size (width + 1) * (height + 1).
    maps: Vec<Vec<f64>>,
}

/// Computes the raw 9 feature maps of an image: central-difference gradients
/// with replicated borders, Euclidean magnitude, unsigned orientation
/// quantized to 8 bins over [0, pi).
fn feature_maps(image: &GrayImage) -> Vec<Vec<f64>> {
    let (w, h) = (image.width, image.height);
    let mut maps = vec![vec![0.0; w * h]; N_CHANNELS];
    for y in 0..h {
        for x in 0..w {
            let xl = image.get(x.saturating_sub(1), y) as f64;
            let xr = image.get((x + 1).min(w - 1), y) as f64;
            let yu = image.get(x, y.saturating_sub(1)) as f64;
            let yd = image.get(x, (y + 1).min(h - 1)) as f64;
            let gx = 0.5 * (xr - xl);
            let gy = 0.5 * (yd - yu);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            let bin = ((theta / std::f64::consts::PI) * 8.0) as usize;
            let bin = bin.min(7);
            maps[0][y * w + x] = mag;
            maps[1 + bin][y * w + x] = mag;
        }
    }
    maps
}

/// Computes the integral feature channels of a grayscale image.
pub fn compute_channels(image: &GrayImage) -> Result<IntegralChannels> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} too small for gradient channels (minimum 3x3)"
        )));
    }
    let raw = feature_maps(image);
    let mut maps = Vec::with_capacity(N_CHANNELS);
    for raw_map in &raw {
        let mut ii = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += raw_map[y * w + x];
                ii[(y + 1) * (w + 1) + (x + 1)] = ii[y * (w + 1) + (x + 1)] + row;
            }
        }
        maps.push(ii);
    }
    Ok(IntegralChannels {
        width: w,
        height: h,
        maps,
    })
}

impl IntegralChannels {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of channel `ch` over the integer rectangle [x0, x1) x [y0, y1),
    /// four lookups into the prefix-sum map. Bounds must be pre-clipped.
    fn rect_sum(&self, ch: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let w1 = self.width + 1;
        let m = &self.maps[ch];
        let sum = m[y1 * w1 + x1] - m[y0 * w1 + x1] - m[y1 * w1 + x0] + m[y0 * w1 + x0];
        // cancellation in the four-corner difference can leave -1e-12 noise
        sum.max(0.0)
    }

    /// Clips a continuous window to integer pixel bounds. Returns `None`
    /// if the rounded window is empty after clipping.
    fn clip(&self, x0f: f64, y0f: f64, x1f: f64, y1f: f64) -> Option<(usize, usize, usize, usize)> {
        let round = |v: f64| (v + 0.5).floor();
        let x0 = round(x0f).max(0.0) as usize;
        let y0 = round(y0f).max(0.0) as usize;
        let x1 = (round(x1f).max(0.0) as usize).min(self.width);
        let y1 = (round(y1f).max(0.0) as usize).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            None
        } else {
            Some((x0, y0, x1, y1))
        }
    }

    /// Per-channel sums over the axis-aligned square of side `size` centered
    /// at `center`, clipped to the image. A window entirely outside the image
    /// yields zeros with the out-of-bounds flag set.
    pub fn window_histogram(&self, center: Point, size: f64) -> WindowSum {
        let half = 0.5 * size;
        let (x0f, y0f) = (center.x - half, center.y - half);
        let (x1f, y1f) = (center.x + half, center.y + half);
        let fully_outside =
            x1f < 0.0 || y1f < 0.0 || x0f > self.width as f64 || y0f > self.height as f64;
        let mut sums = [0.0; N_CHANNELS];
        if let Some((x0, y0, x1, y1)) = self.clip(x0f, y0f, x1f, y1f) {
            for (ch, s) in sums.iter_mut().enumerate() {
                *s = self.rect_sum(ch, x0, y0, x1, y1);
            }
        }
        WindowSum {
            sums,
            out_of_bounds: fully_outside,
        }
    }

    /// Extracts the 225-dimensional HOG descriptor around `point`: 5x5 cells,
    /// total window side iod/3, 9 channel sums per cell, the whole vector
    /// divided by the window's gradient-magnitude mass (plus epsilon).
    pub fn hog_descriptor(&self, point: Point, iod: f64) -> HogDescriptor {
        let side = iod / 3.0;
        let cell = side / HOG_CELLS as f64;
        let x_start = point.x - 0.5 * side;
        let y_start = point.y - 0.5 * side;
        // cell edges from one grid formula, so cells tile the window exactly
        let edge = |start: f64, i: usize| start + i as f64 * cell;
        let mut values = vec![0.0; HOG_DIM];
        for cy in 0..HOG_CELLS {
            for cx in 0..HOG_CELLS {
                if let Some((x0, y0, x1, y1)) = self.clip(
                    edge(x_start, cx),
                    edge(y_start, cy),
                    edge(x_start, cx + 1),
                    edge(y_start, cy + 1),
                ) {
                    let base = (cy * HOG_CELLS + cx) * N_CHANNELS;
                    for ch in 0..N_CHANNELS {
                        values[base + ch] = self.rect_sum(ch, x0, y0, x1, y1);
                    }
                }
            }
        }
        let total_magnitude = match self.clip(
            edge(x_start, 0),
            edge(y_start, 0),
            edge(x_start, HOG_CELLS),
            edge(y_start, HOG_CELLS),
        ) {
            Some((x0, y0, x1, y1)) => self.rect_sum(0, x0, y0, x1, y1),
            None => 0.0,
        };
        let norm = total_magnitude + 1e-8 * side * side;
        for v in &mut values {
            *v /= norm;
        }
        HogDescriptor { values }
    }
}

/// Block-normalized 225-dimensional HOG descriptor of one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct HogDescriptor {
    values: Vec<f64>,
}

impl HogDescriptor {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |_, _| rng.gen())
    }

    /// Brute-force oracle: raw feature maps summed over a rectangle without
    /// any integral-image shortcut.
    fn brute_rect_sum(
        image: &GrayImage,
        ch: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    ) -> f64 {
        let raw = feature_maps(image);
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                sum += raw[ch][y * image.width() + x];
            }
        }
        sum
    }

    #[test]
    fn rejects_tiny_images() {
        let img = GrayImage::from_fn(2, 5, |_, _| 0);
        assert!(compute_channels(&img).is_err());
    }

    #[test]
    fn constant_image_gives_zero_maps() {
        let img = GrayImage::from_fn(16, 16, |_, _| 137);
        let ch = compute_channels(&img).unwrap();
        let full = ch.window_histogram(Point::new(8.0, 8.0), 32.0);
        assert_eq!(full.sums, [0.0; N_CHANNELS]);
        assert!(!full.out_of_bounds);
    }

    #[test]
    fn vertical_step_edge_concentrates_in_horizontal_bin() {
        // Columns < 8 are dark, >= 8 bright: gradient is purely horizontal.
        let img = GrayImage::from_fn(16, 16, |x, _| if x < 8 { 10 } else { 200 });
        let ch = compute_channels(&img).unwrap();
        let full = ch.window_histogram(Point::new(8.0, 8.0), 100.0);
        assert!(full.sums[0] > 0.0);
        // all orientation mass in bin 0 (theta = 0)
        assert!((full.sums[1] - full.sums[0]).abs() < 1e-9);
        for b in 2..N_CHANNELS {
            assert_eq!(full.sums[b], 0.0);
        }
        // magnitude concentrated on the two columns adjacent to the edge
        let strip = ch.rect_sum(0, 7, 0, 9, 16);
        assert!((strip - full.sums[0]).abs() < 1e-9);
    }

    #[test]
    fn integral_queries_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let img = random_image(&mut rng, 32, 32);
        let ch = compute_channels(&img).unwrap();
        for _ in 0..1000 {
            let x0 = rng.gen_range(0..32);
            let x1 = rng.gen_range(x0 + 1..=32);
            let y0 = rng.gen_range(0..32);
            let y1 = rng.gen_range(y0 + 1..=32);
            let c = rng.gen_range(0..N_CHANNELS);
            let fast = ch.rect_sum(c, x0, y0, x1, y1);
            let slow = brute_rect_sum(&img, c, x0, y0, x1, y1);
            let tol = 1e-6 * slow.abs().max(1.0);
            assert!(
                (fast - slow).abs() < tol,
                "channel {c} rect ({x0},{y0})-({x1},{y1}): {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn window_histogram_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = random_image(&mut rng, 20, 20);
        let ch = compute_channels(&img).unwrap();

        // full-image window equals per-channel totals
        let full = ch.window_histogram(Point::new(10.0, 10.0), 40.0);
        for c in 0..N_CHANNELS {
            let total = ch.rect_sum(c, 0, 0, 20, 20);
            assert!((full.sums[c] - total).abs() < 1e-9);
        }

        // zero-area window
        let zero = ch.window_histogram(Point::new(10.0, 10.0), 0.0);
        assert_eq!(zero.sums, [0.0; N_CHANNELS]);
        assert!(!zero.out_of_bounds);

        // fully outside
        let out = ch.window_histogram(Point::new(-100.0, -100.0), 4.0);
        assert_eq!(out.sums, [0.0; N_CHANNELS]);
        assert!(out.out_of_bounds);
    }

    #[test]
    fn orientation_mass_sums_to_magnitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = random_image(&mut rng, 24, 24);
        let ch = compute_channels(&img).unwrap();
        let mag = ch.rect_sum(0, 0, 0, 24, 24);
        let orient: f64 = (1..N_CHANNELS).map(|c| ch.rect_sum(c, 0, 0, 24, 24)).sum();
        assert!((mag - orient).abs() <= 1e-6 * mag.max(1.0));
    }

    #[test]
    fn integral_maps_are_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = random_image(&mut rng, 16, 12);
        let ch = compute_channels(&img).unwrap();
        for m in &ch.maps {
            for y in 0..=12 {
                for x in 1..=16 {
                    assert!(m[y * 17 + x] >= m[y * 17 + x - 1]);
                }
            }
            for x in 0..=16 {
                for y in 1..=12 {
                    assert!(m[y * 17 + x] >= m[(y - 1) * 17 + x]);
                }
            }
        }
    }

    #[test]
    fn hog_descriptor_is_225_and_zero_on_flat_images() {
        let img = GrayImage::from_fn(32, 32, |_, _| 99);
        let ch = compute_channels(&img).unwrap();
        let d = ch.hog_descriptor(Point::new(16.0, 16.0), 24.0);
        assert_eq!(d.len(), 225);
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hog_descriptor_matches_cell_summing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let img = random_image(&mut rng, 48, 48);
        let ch = compute_channels(&img).unwrap();
        for _ in 0..10 {
            let p = Point::new(rng.gen_range(5.0..43.0), rng.gen_range(5.0..43.0));
            let iod = rng.gen_range(20.0..60.0);
            let desc = ch.hog_descriptor(p, iod);

            // Oracle: recompute each cell by brute-force summation of raw maps.
            let side = iod / 3.0;
            let cell = side / 5.0;
            let xs = p.x - 0.5 * side;
            let ys = p.y - 0.5 * side;
            let round = |v: f64| (v + 0.5).floor();
            let clipi = |v: f64, hi: usize| (round(v).max(0.0) as usize).min(hi);
            let mut expected = vec![0.0; HOG_DIM];
            for cy in 0..5 {
                for cx in 0..5 {
                    let x0 = clipi(xs + cx as f64 * cell, 48);
                    let x1 = clipi(xs + (cx + 1) as f64 * cell, 48);
                    let y0 = clipi(ys + cy as f64 * cell, 48);
                    let y1 = clipi(ys + (cy + 1) as f64 * cell, 48);
                    if x0 >= x1 || y0 >= y1 {
                        continue;
                    }
                    for c in 0..N_CHANNELS {
                        expected[(cy * 5 + cx) * N_CHANNELS + c] =
                            brute_rect_sum(&img, c, x0, y0, x1, y1);
                    }
                }
            }
            let x0 = clipi(xs, 48);
            let x1 = clipi(xs + 5.0 * cell, 48);
            let y0 = clipi(ys, 48);
            let y1 = clipi(ys + 5.0 * cell, 48);
            let total = if x0 < x1 && y0 < y1 {
                brute_rect_sum(&img, 0, x0, y0, x1, y1)
            } else {
                0.0
            };
            let norm = total + 1e-8 * side * side;
            for v in &mut expected {
                *v /= norm;
            }
            for (a, b) in desc.values().iter().zip(&expected) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
            assert!(desc.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
            // magnitude cells sum to <= 1 and orientation cells to <= 1,
            // so the Euclidean norm is bounded by 2
            let norm = desc.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 2.0, "descriptor norm {norm}");
        }
    }

    #[test]
    fn hog_descriptor_invariant_to_intensity_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayImage::from_fn(32, 32, |_, _| rng.gen_range(0..200));
        let shifted = GrayImage::from_fn(32, 32, |x, y| img.get(x, y) + 50);
        let a = compute_channels(&img).unwrap();
        let b = compute_channels(&shifted).unwrap();
        let p = Point::new(16.0, 16.0);
        assert_eq!(a.hog_descriptor(p, 30.0), b.hog_descriptor(p, 30.0));
    }

    #[test]
    fn channel_queries_are_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 24, 24);
        let ch1 = compute_channels(&img).unwrap();
        let ch2 = compute_channels(&img).unwrap();
        let p = Point::new(11.5, 9.25);
        for _ in 0..3 {
            assert_eq!(ch1.hog_descriptor(p, 21.0), ch2.hog_descriptor(p, 21.0));
            assert_eq!(
                ch1.window_histogram(p, 7.0).sums,
                ch2.window_histogram(p, 7.0).sums
            );
        }
    }
}
