//! Synthetic spines with known geometry.
//!
//! Vertebrae are rectangles centred on a prescribed midline `x(y)` at evenly
//! spaced heights and rotated by a per-vertebra tilt. The reference angles
//! are computed here from the prescribed tilts and the analytic edge
//! midpoints. That path never builds direction vectors or an angle matrix,
//! which keeps it independent of [`crate::cobb`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cobb::{CobbSelection, CobbTriple, DEFAULT_S_EPS};
use crate::error::{Error, Result};
use crate::geometry::{
    normalize_landmarks, quad_to_gt_box, BoundingBox, Detection, ImageDims, Point2, SpineLandmarks, VertebraQuad,
    DEFAULT_PAD_H, DEFAULT_PAD_W, NUM_VERTEBRAE,
};
use crate::io::{PredictedVertebra, PredictionRecord};

/// Horizontal offset of the midline as a function of `t ∈ [0, 1]` running
/// from the top vertebra to the bottom one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Midline {
    /// `Σ c_k t^k`
    Polynomial { coefficients: Vec<f64> },
    /// `amplitude · sin(2π · periods · t + phase)`
    Sinusoid { amplitude: f64, periods: f64, phase: f64 },
}

impl Midline {
    pub fn offset(&self, t: f64) -> f64 {
        match self {
            Midline::Polynomial { coefficients } => coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c),
            Midline::Sinusoid {
                amplitude,
                periods,
                phase,
            } => amplitude * (std::f64::consts::TAU * periods * t + phase).sin(),
        }
    }

    /// `d offset / dt`
    pub fn slope(&self, t: f64) -> f64 {
        match self {
            Midline::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * t + k as f64 * c),
            Midline::Sinusoid {
                amplitude,
                periods,
                phase,
            } => {
                let w = std::f64::consts::TAU * periods;
                amplitude * w * (w * t + phase).cos()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TiltProfile {
    /// Endplates perpendicular to the midline tangent, plus a uniform
    /// per-vertebra jitter in `[-jitter_deg, jitter_deg]`.
    FromMidline { jitter_deg: f64 },
    /// Explicit tilts in degrees, one per vertebra.
    Prescribed { degrees: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineParams {
    pub midline: Midline,
    pub tilt_profile: TiltProfile,
    pub dims: ImageDims,
    /// Midline `x` at zero offset.
    pub center_x: f64,
    /// Centre `y` of the top vertebra.
    pub top_y: f64,
    /// Centre-to-centre vertical distance.
    pub spacing: f64,
    pub vertebra_width: f64,
    pub vertebra_height: f64,
    /// Gaussian noise added to every landmark coordinate, pixels.
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    /// Single curve: half a sine period.
    C,
    /// Double curve: about one full sine period.
    S,
    Straight,
}

impl SpineParams {
    /// Upright spine with no curvature, tilt or noise.
    pub fn straight(seed: u64) -> Self {
        Self {
            midline: Midline::Polynomial { coefficients: vec![] },
            tilt_profile: TiltProfile::FromMidline { jitter_deg: 0.0 },
            dims: ImageDims {
                width: 1000.0,
                height: 2400.0,
            },
            center_x: 500.0,
            top_y: 500.0,
            spacing: 70.0,
            vertebra_width: 45.0,
            vertebra_height: 28.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    /// Random realistic spine of the given kind, noise free. Neighbouring
    /// vertebra centres stay within half a padded box width of each other, so
    /// the outlier filter keeps every vertebra.
    pub fn random(kind: CurveKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
        let vertebra_width: f64 = rng.random_range(35.0..55.0);
        let vertebra_height: f64 = rng.random_range(22.0..32.0);
        let spacing = vertebra_height + rng.random_range(8.0..20.0);
        let span = 16.0 * spacing + vertebra_height;
        let height = (span * rng.random_range(1.3..2.8)).round();
        let width = (height * rng.random_range(0.35..0.55)).round();
        let margin = 2.0 * vertebra_height;
        let top_y = margin + rng.random::<f64>() * (height - span - 2.0 * margin) + vertebra_height / 2.0;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let midline = match kind {
            // max slope π·A / (16·spacing) ≤ 0.48
            CurveKind::C => Midline::Sinusoid {
                amplitude: sign * rng.random_range(0.3..2.4) * spacing,
                periods: 0.5,
                phase: 0.0,
            },
            // max slope 2π·1.1·A / (16·spacing) ≤ 0.48
            CurveKind::S => Midline::Sinusoid {
                amplitude: sign * rng.random_range(0.4..1.1) * spacing,
                periods: rng.random_range(0.9..1.1),
                phase: rng.random_range(-0.3..0.3),
            },
            CurveKind::Straight => Midline::Polynomial { coefficients: vec![] },
        };
        let jitter_deg = if kind == CurveKind::Straight { 0.0 } else { 0.5 };
        Self {
            midline,
            tilt_profile: TiltProfile::FromMidline { jitter_deg },
            dims: ImageDims { width, height },
            center_x: width / 2.0,
            top_y,
            spacing,
            vertebra_width,
            vertebra_height,
            noise_sigma: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        ImageDims::new(self.dims.width, self.dims.height)?;
        if !(self.vertebra_width > 0.0 && self.vertebra_height > 0.0) {
            return Err(Error::Config(format!(
                "vertebra size must be positive, got {}x{}",
                self.vertebra_width, self.vertebra_height
            )));
        }
        if self.spacing < self.vertebra_height {
            return Err(Error::Config(format!(
                "vertebrae overlap: spacing {} is less than vertebra height {}",
                self.spacing, self.vertebra_height
            )));
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return Err(Error::Config(format!("noise sigma {} must be non-negative", self.noise_sigma)));
        }
        if let TiltProfile::Prescribed { degrees } = &self.tilt_profile {
            if degrees.len() != NUM_VERTEBRAE {
                return Err(Error::Config(format!(
                    "{} prescribed tilts for {NUM_VERTEBRAE} vertebrae",
                    degrees.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpine {
    pub spine: SpineLandmarks,
    pub dims: ImageDims,
    /// Angles of the noise-free geometry.
    pub oracle: CobbTriple,
    /// Per-vertebra tilt in degrees; positive turns the endplate toward +y.
    pub tilts: Vec<f64>,
    pub centers: Vec<Point2>,
}

/// Builds a spine from `params`. Noise, when requested, is added after the
/// oracle angles are computed.
pub fn generate_spine(params: &SpineParams) -> Result<SyntheticSpine> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = NUM_VERTEBRAE;
    let length = (n - 1) as f64 * params.spacing;

    let mut centers = Vec::with_capacity(n);
    let mut tilts = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        centers.push(Point2::new(
            params.center_x + params.midline.offset(t),
            params.top_y + i as f64 * params.spacing,
        ));
        let tilt = match &params.tilt_profile {
            TiltProfile::FromMidline { jitter_deg } => {
                // endplate ⟂ tangent (dx/dy, 1)
                let dxdy = params.midline.slope(t) / length;
                let jitter = if *jitter_deg > 0.0 {
                    rng.random_range(-jitter_deg..=*jitter_deg)
                } else {
                    0.0
                };
                (-dxdy).atan().to_degrees() + jitter
            }
            TiltProfile::Prescribed { degrees } => degrees[i],
        };
        if tilt.abs() >= 90.0 {
            return Err(Error::Config(format!("vertebra {i} tilt {tilt} is not below 90 degrees")));
        }
        tilts.push(tilt);
    }

    let (hw, hh) = (params.vertebra_width / 2.0, params.vertebra_height / 2.0);
    let mut quads: Vec<VertebraQuad> = centers
        .iter()
        .zip(&tilts)
        .map(|(c, &deg)| {
            let (s, co) = deg.to_radians().sin_cos();
            let p = |x: f64, y: f64| Point2::new(c.x + co * x - s * y, c.y + s * x + co * y);
            VertebraQuad::new(p(-hw, -hh), p(hw, -hh), p(-hw, hh), p(hw, hh))
        })
        .collect();

    let oracle = oracle_angles(&tilts, &centers, params.vertebra_height, params.dims);

    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma)
            .map_err(|e| Error::Config(format!("noise sigma: {e}")))?;
        for q in &mut quads {
            for p in &mut q.corners {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
            }
        }
    }
    let spine = SpineLandmarks::new(quads);
    spine
        .validate()
        .map_err(|e| Error::Config(format!("generated spine is invalid (noise too large?): {e}")))?;

    Ok(SyntheticSpine {
        spine,
        dims: params.dims,
        oracle,
        tilts,
        centers,
    })
}

/// Angle between two endplates from their tilts, capped at 90 degrees.
fn pair_angle(a: f64, b: f64) -> f64 {
    let mut d = (a - b).abs() % 360.0;
    if d > 180.0 {
        d = 360.0 - d;
    }
    d.min(90.0)
}

/// Reference angles from prescribed tilts and analytic midpoints.
///
/// All-pairs loops with first-wins ties. The S-shape test uses the identity
/// `|(Σr)² − (Σ|r|)²| = 4·P·N`, where `P` and `N` are the summed positive
/// and negative residual magnitudes.
pub fn oracle_angles(tilts: &[f64], centers: &[Point2], vertebra_height: f64, dims: ImageDims) -> CobbTriple {
    let n = tilts.len();
    let angle = |i: usize, j: usize| if i == j { 0.0 } else { pair_angle(tilts[i], tilts[j]) };

    let (mut upper, mut lower, mut mt) = (0, 0, f64::NEG_INFINITY);
    for i in 0..n {
        let mut best_j = 0;
        let mut best = angle(i, 0);
        for j in 1..n {
            if angle(i, j) > best {
                best = angle(i, j);
                best_j = j;
            }
        }
        if best > mt {
            mt = best;
            upper = i;
            lower = best_j;
        }
    }

    let h = vertebra_height / 2.0;
    let mut midline = Vec::with_capacity(2 * n);
    for (c, &deg) in centers.iter().zip(tilts) {
        let (s, co) = deg.to_radians().sin_cos();
        midline.push(Point2::new(c.x + h * s, c.y - h * co));
        midline.push(Point2::new(c.x - h * s, c.y + h * co));
    }
    let s_shaped = oracle_s_shape(&midline);

    let best_in = |row: usize, cols: std::ops::RangeInclusive<usize>| -> (usize, f64) {
        let mut best = (*cols.start(), angle(row, *cols.start()));
        for j in cols {
            if angle(row, j) > best.1 {
                best = (j, angle(row, j));
            }
        }
        best
    };

    let (pt, tl) = if !s_shaped {
        (angle(0, upper), angle(n - 1, lower))
    } else if midline[2 * upper].y + midline[2 * lower].y < dims.height {
        (best_in(upper, 0..=upper).1, best_in(lower, lower..=n - 1).1)
    } else {
        let (k, pt) = best_in(upper, 0..=upper);
        (pt, best_in(k, 0..=k).1)
    };

    CobbTriple {
        mt,
        pt,
        tl,
        selection: Some(CobbSelection {
            upper_idx: upper,
            lower_idx: lower,
            s_shaped,
        }),
    }
}

fn oracle_s_shape(midline: &[Point2]) -> bool {
    let first = midline[0];
    let last = midline[midline.len() - 1];
    let (mut pos, mut neg) = (0.0, 0.0);
    for p in &midline[..midline.len() - 2] {
        let r = if first.x != last.x && first.y != last.y {
            (p.y - last.y) / (first.y - last.y) - (p.x - last.x) / (first.x - last.x)
        } else {
            (last.x - first.x) * (p.y - first.y) - (last.y - first.y) * (p.x - first.x)
        };
        if r > 0.0 {
            pos += r;
        } else {
            neg -= r;
        }
    }
    4.0 * pos * neg > DEFAULT_S_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub pad_w: f64,
    pub pad_h: f64,
    /// Far-off boxes inserted between vertebrae.
    pub outliers: usize,
    /// Vertebrae removed from the detections.
    pub drop: usize,
    /// Outlier x-distance from its neighbours in units of its box width.
    pub outlier_offset: (f64, f64),
    /// Rows removed above the detector input.
    pub crop_top_offset: f64,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            pad_w: DEFAULT_PAD_W,
            pad_h: DEFAULT_PAD_H,
            outliers: 0,
            drop: 0,
            outlier_offset: (1.5, 3.0),
            crop_top_offset: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub record: PredictionRecord,
    /// Indices into `record.detections` of injected outliers.
    pub injected: Vec<usize>,
    /// Vertebra indices left out of the detections.
    pub dropped: Vec<usize>,
}

/// Turns a spine into detector-style output: padded GT boxes with
/// box-normalized corners, optionally with dropped vertebrae and injected
/// outlier boxes. Detections are listed top to bottom.
///
/// Outliers go into distinct, non-adjacent gaps away from both ends, so each
/// real vertebra keeps at least one real neighbour.
pub fn perturb_to_detections(
    image_id: &str,
    spine: &SpineLandmarks,
    dims: ImageDims,
    params: &PerturbParams,
) -> Result<Perturbed> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = spine.len();
    if params.drop >= n {
        return Err(Error::Config(format!("cannot drop {} of {n} vertebrae", params.drop)));
    }
    let mut dropped: Vec<usize> = rand::seq::index::sample(&mut rng, n, params.drop).into_vec();
    dropped.sort_unstable();

    let off = params.crop_top_offset;
    let mut real = Vec::new();
    for (i, q) in spine.vertebrae.iter().enumerate() {
        if dropped.binary_search(&i).is_ok() {
            continue;
        }
        let bbox = quad_to_gt_box(q, params.pad_w, params.pad_h, dims)?;
        let landmarks = normalize_landmarks(q, &bbox)?;
        let shifted = BoundingBox {
            y_min: bbox.y_min - off,
            y_max: bbox.y_max - off,
            ..bbox
        };
        real.push(PredictedVertebra {
            detection: Detection::new(shifted),
            landmarks,
        });
    }

    // gap g sits between real[g] and real[g + 1]
    let candidates: Vec<usize> = (1..real.len().saturating_sub(2)).collect();
    let mut gaps = Vec::new();
    let mut pool = candidates;
    while gaps.len() < params.outliers {
        pool.retain(|g| gaps.iter().all(|&h: &usize| g.abs_diff(h) > 1));
        if pool.is_empty() {
            return Err(Error::Config(format!(
                "room for only {} outliers among {} detections",
                gaps.len(),
                real.len()
            )));
        }
        let g = pool.swap_remove(rng.random_range(0..pool.len()));
        gaps.push(g);
    }
    gaps.sort_unstable();

    let mut detections = Vec::with_capacity(real.len() + gaps.len());
    let mut injected = Vec::new();
    for (g, det) in real.iter().enumerate() {
        detections.push(*det);
        if gaps.binary_search(&g).is_ok() {
            let (a, b) = (det.detection.bbox, real[g + 1].detection.bbox);
            let w = (a.width() + b.width()) / 2.0;
            let h = (a.height() + b.height()) / 2.0;
            let cy = (a.center().y + b.center().y) / 2.0;
            let (lo, hi) = (a.center().x.min(b.center().x), a.center().x.max(b.center().x));
            let dist = rng.random_range(params.outlier_offset.0..params.outlier_offset.1).max(0.51) * w;
            let right = hi + dist;
            let left = lo - dist;
            let cx = if right + w / 2.0 <= dims.width || left - w / 2.0 < 0.0 {
                right
            } else {
                left
            };
            injected.push(detections.len());
            detections.push(PredictedVertebra {
                detection: Detection::with_score(
                    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)?,
                    rng.random_range(0.3..0.9),
                )?,
                landmarks: [
                    Point2::new(0.2, 0.2),
                    Point2::new(0.8, 0.25),
                    Point2::new(0.2, 0.75),
                    Point2::new(0.8, 0.8),
                ],
            });
        }
    }

    Ok(Perturbed {
        record: PredictionRecord {
            image_id: image_id.to_owned(),
            dims,
            crop_top_offset: (off != 0.0).then_some(off),
            detections,
        },
        injected,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cobb::is_s_shape;
    use crate::postprocess::{reject_outliers, OutlierWidthRule};

    #[test]
    fn straight_spine_has_zero_oracle() {
        let s = generate_spine(&SpineParams::straight(1)).unwrap();
        assert_eq!(s.oracle.as_array(), [0.0, 0.0, 0.0]);
        assert!(s.tilts.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn linear_tilts_give_twenty_degrees() {
        let degrees: Vec<f64> = (0..17).map(|i| -10.0 + 20.0 * i as f64 / 16.0).collect();
        let params = SpineParams {
            tilt_profile: TiltProfile::Prescribed { degrees },
            ..SpineParams::straight(2)
        };
        let s = generate_spine(&params).unwrap();
        assert!((s.oracle.mt - 20.0).abs() < 1e-12);
        let sel = s.oracle.selection.unwrap();
        assert_eq!((sel.upper_idx, sel.lower_idx), (0, 16));
    }

    #[test]
    fn sinusoidal_midline_is_s_shaped() {
        let params = SpineParams {
            midline: Midline::Sinusoid {
                amplitude: 60.0,
                periods: 1.0,
                phase: 0.2,
            },
            ..SpineParams::straight(3)
        };
        let s = generate_spine(&params).unwrap();
        assert!(s.tilts.iter().any(|&t| t > 1.0) && s.tilts.iter().any(|&t| t < -1.0));
        assert!(s.oracle.selection.unwrap().s_shaped);
        assert!(is_s_shape(&s.spine.midline(), DEFAULT_S_EPS).unwrap());
    }

    #[test]
    fn half_period_midline_is_c_shaped() {
        let params = SpineParams {
            midline: Midline::Sinusoid {
                amplitude: 80.0,
                periods: 0.5,
                phase: 0.0,
            },
            ..SpineParams::straight(3)
        };
        let s = generate_spine(&params).unwrap();
        assert!(!s.oracle.selection.unwrap().s_shaped);
        assert!(!is_s_shape(&s.spine.midline(), DEFAULT_S_EPS).unwrap());
    }

    #[test]
    fn overlap_is_rejected() {
        let params = SpineParams {
            spacing: 20.0,
            ..SpineParams::straight(4)
        };
        assert!(matches!(generate_spine(&params), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_spine() {
        for kind in [CurveKind::C, CurveKind::S] {
            let mut p = SpineParams::random(kind, 42);
            p.noise_sigma = 0.7;
            let a = generate_spine(&p).unwrap();
            let b = generate_spine(&p).unwrap();
            assert_eq!(a, b);
            p.seed = 43;
            assert_ne!(generate_spine(&p).unwrap().spine, a.spine);
        }
    }

    #[test]
    fn midline_slope_matches_finite_difference() {
        let lines = [
            Midline::Polynomial { coefficients: vec![3.0, -2.0, 5.0, 1.5] },
            Midline::Sinusoid { amplitude: 40.0, periods: 1.1, phase: 0.3 },
        ];
        for m in &lines {
            for t in [0.0, 0.25, 0.6, 1.0] {
                let h = 1e-6;
                let fd = (m.offset(t + h) - m.offset(t - h)) / (2.0 * h);
                assert!((fd - m.slope(t)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn injected_outlier_is_exactly_rejected() {
        let s = generate_spine(&SpineParams::random(CurveKind::C, 7)).unwrap();
        let params = PerturbParams {
            outliers: 1,
            seed: 9,
            ..Default::default()
        };
        let p = perturb_to_detections("img", &s.spine, s.dims, &params).unwrap();
        assert_eq!(p.record.detections.len(), 18);
        let dets: Vec<Detection> = p.record.detections.iter().map(|d| d.detection).collect();
        let split = reject_outliers(&dets, OutlierWidthRule::Own).unwrap();
        assert_eq!(split.rejected, p.injected);
    }

    #[test]
    fn dropped_boxes_are_reported() {
        let s = generate_spine(&SpineParams::random(CurveKind::S, 8)).unwrap();
        let params = PerturbParams {
            drop: 2,
            seed: 1,
            ..Default::default()
        };
        let p = perturb_to_detections("img", &s.spine, s.dims, &params).unwrap();
        assert_eq!(p.record.detections.len(), 15);
        assert_eq!(p.dropped.len(), 2);
        assert!(p.record.validate().is_ok());
    }

    #[test]
    fn too_many_outliers_is_an_error() {
        let s = generate_spine(&SpineParams::straight(1)).unwrap();
        let params = PerturbParams {
            outliers: 9,
            ..Default::default()
        };
        assert!(perturb_to_detections("img", &s.spine, s.dims, &params).is_err());
    }
}
