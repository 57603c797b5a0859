//! Inference-time cleanup between the detector and the angle computation.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Detection, ImageDims, Point2, SpineLandmarks, VertebraQuad};

/// Top crop fraction tuned on the reference image.
pub const DEFAULT_CT0: f64 = 0.18;
/// Bottom crop fraction tuned on the reference image.
pub const DEFAULT_CB0: f64 = 0.21;
pub const DEFAULT_POLY_DEGREE: usize = 6;

/// Fractions of the image height removed from the top and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub top: f64,
    pub bottom: f64,
}

impl CropSpec {
    pub const NONE: CropSpec = CropSpec {
        top: 0.0,
        bottom: 0.0,
    };

    pub fn new(top: f64, bottom: f64) -> Result<Self> {
        if !(top.is_finite() && bottom.is_finite() && top >= 0.0 && bottom >= 0.0) {
            return Err(Error::Config(format!(
                "crop fractions must be finite and non-negative, got top={top} bottom={bottom}"
            )));
        }
        if top + bottom >= 1.0 {
            return Err(Error::Config(format!(
                "crop removes the whole image: top={top} + bottom={bottom} >= 1"
            )));
        }
        Ok(Self { top, bottom })
    }
}

/// Scales the reference crop fractions by the ratio of aspect ratios
/// (`width / height`) of the image and the reference image.
pub fn compute_crop(aspect: f64, ref_aspect: f64, ct0: f64, cb0: f64) -> Result<CropSpec> {
    if !(aspect.is_finite() && aspect > 0.0) {
        return Err(Error::Config(format!("aspect ratio must be positive, got {aspect}")));
    }
    if !(ref_aspect.is_finite() && ref_aspect > 0.0) {
        return Err(Error::Config(format!(
            "reference aspect ratio must be positive, got {ref_aspect}"
        )));
    }
    let scale = aspect / ref_aspect;
    CropSpec::new(ct0 * scale, cb0 * scale)
}

/// An image after cropping, with the number of rows removed above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CroppedFrame {
    pub dims: ImageDims,
    pub top_offset: f64,
}

/// Whole-pixel crop of `dims`. Landmarks found in the cropped image map back
/// to the original by adding `top_offset` to `y`.
pub fn apply_crop(dims: ImageDims, crop: CropSpec) -> Result<CroppedFrame> {
    let top = (crop.top * dims.height).round();
    let bottom = (crop.bottom * dims.height).round();
    let height = dims.height - top - bottom;
    if height <= 0.0 {
        return Err(Error::Config(format!(
            "crop {crop:?} leaves no rows of a {}-row image",
            dims.height
        )));
    }
    Ok(CroppedFrame {
        dims: ImageDims {
            width: dims.width,
            height,
        },
        top_offset: top,
    })
}

/// Whose width sets the outlier distance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierWidthRule {
    /// Half of the candidate box's own width.
    #[default]
    Own,
    /// Half of the mean width of the candidate and its neighbours.
    NeighborMean,
}

impl std::str::FromStr for OutlierWidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "own" => Ok(Self::Own),
            "neighbor-mean" => Ok(Self::NeighborMean),
            other => Err(Error::Config(format!(
                "unknown outlier width rule '{other}' (expected own or neighbor-mean)"
            ))),
        }
    }
}

/// Result of [`reject_outliers`]. Indices refer to the caller's input order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierSplit {
    /// Kept input indices, sorted top to bottom.
    pub kept: Vec<usize>,
    /// Rejected input indices, sorted top to bottom.
    pub rejected: Vec<usize>,
}

fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    let (ca, cb) = (a.bbox.center(), b.bbox.center());
    ca.y.total_cmp(&cb.y)
        .then(ca.x.total_cmp(&cb.x))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.score.total_cmp(&b.score))
}

/// Input indices of `dets` sorted top to bottom by box y-center. Ties fall
/// through to the remaining box fields so the order is total.
pub fn sort_top_to_bottom(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| detection_order(&dets[a], &dets[b]).then(a.cmp(&b)));
    order
}

/// Drops boxes whose x-center is more than half a box width away from the
/// x-centers of all their vertical neighbours (two in the interior, one at the
/// ends). All marks are computed against the original neighbours before any
/// box is removed.
pub fn reject_outliers(dets: &[Detection], rule: OutlierWidthRule) -> Result<OutlierSplit> {
    if dets.is_empty() {
        return Err(Error::InvalidInput("no detections to filter".into()));
    }
    let order = sort_top_to_bottom(dets);
    let centers: Vec<f64> = order.iter().map(|&i| dets[i].bbox.center().x).collect();
    let widths: Vec<f64> = order.iter().map(|&i| dets[i].bbox.width()).collect();
    let n = order.len();

    let mut split = OutlierSplit::default();
    for k in 0..n {
        let neighbours: Vec<usize> = [k.checked_sub(1), (k + 1 < n).then_some(k + 1)]
            .into_iter()
            .flatten()
            .collect();
        let threshold = match rule {
            OutlierWidthRule::Own => widths[k] / 2.0,
            OutlierWidthRule::NeighborMean => {
                let total = widths[k] + neighbours.iter().map(|&j| widths[j]).sum::<f64>();
                total / (neighbours.len() + 1) as f64 / 2.0
            }
        };
        let outlier = !neighbours.is_empty()
            && neighbours
                .iter()
                .all(|&j| (centers[k] - centers[j]).abs() > threshold);
        if outlier {
            split.rejected.push(order[k]);
        } else {
            split.kept.push(order[k]);
        }
    }
    Ok(split)
}

/// Trims or pads a top-to-bottom sequence to exactly `target` items: extras
/// are dropped from the bottom, and missing ones are filled with copies of
/// the bottom item.
pub fn enforce_count<T: Clone>(mut items: Vec<T>, target: usize) -> Result<Vec<T>> {
    let Some(bottom) = items.last().cloned() else {
        return Err(Error::InvalidInput(
            "cannot enforce vertebra count on an empty sequence".into(),
        ));
    };
    if target == 0 {
        return Err(Error::Config("target count must be positive".into()));
    }
    items.truncate(target);
    items.resize(target, bottom);
    Ok(items)
}

/// Least-squares polynomial `x = P((y - y_center) / y_scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub degree: usize,
    /// Ascending powers of the normalized abscissa.
    pub coefficients: Vec<f64>,
    pub y_center: f64,
    pub y_scale: f64,
    /// Euclidean norm of the fit residuals.
    pub residual_norm: f64,
}

impl PolyFit {
    pub fn normalize(&self, y: f64) -> f64 {
        (y - self.y_center) / self.y_scale
    }

    pub fn eval(&self, y: f64) -> f64 {
        let t = self.normalize(y);
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Fits `x` as a polynomial of `y` over `(y, x)` pairs.
///
/// `y` is centered on its mean and scaled by its largest deviation before
/// building the Vandermonde matrix, and the system is solved through a QR
/// factorization.
pub fn fit_polynomial(points: &[(f64, f64)], degree: usize) -> Result<PolyFit> {
    let needed = degree + 1;
    if points.iter().any(|(y, x)| !y.is_finite() || !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite point in polynomial fit".into()));
    }
    let mut ys: Vec<f64> = points.iter().map(|p| p.0).collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    if ys.len() < needed {
        return Err(Error::RankDeficient {
            degree,
            distinct: ys.len(),
            needed,
        });
    }

    let n = points.len();
    let y_center = points.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let spread = points
        .iter()
        .map(|p| (p.0 - y_center).abs())
        .fold(0.0, f64::max);
    let y_scale = if spread > 0.0 { spread } else { 1.0 };

    let design = DMatrix::from_fn(n, needed, |r, c| {
        ((points[r].0 - y_center) / y_scale).powi(c as i32)
    });
    let rhs = DVector::from_iterator(n, points.iter().map(|p| p.1));
    let qr = design.clone().qr();
    let qtb = qr.q().transpose() * &rhs;
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= diag_max * 1e-13) {
        return Err(Error::RankDeficient {
            degree,
            distinct: ys.len(),
            needed,
        });
    }
    let coeffs = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficient {
            degree,
            distinct: ys.len(),
            needed,
        })?;
    let residual_norm = (&design * &coeffs - rhs).norm();

    Ok(PolyFit {
        degree,
        coefficients: coeffs.iter().copied().collect(),
        y_center,
        y_scale,
        residual_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothMode {
    /// One curve through all four corners of every vertebra.
    #[default]
    AllPoints,
    /// Separate curves through the left corners and the right corners.
    LeftRightSplit,
}

impl std::str::FromStr for SmoothMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-points" => Ok(Self::AllPoints),
            "left-right-split" => Ok(Self::LeftRightSplit),
            other => Err(Error::Config(format!(
                "unknown smoothing mode '{other}' (expected all-points or left-right-split)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub spine: SpineLandmarks,
    /// One fit for all-points mode, `[left, right]` for the split mode.
    pub fits: Vec<PolyFit>,
    /// Vertebrae whose left corners ended up at or right of their right corners.
    pub collapsed: Vec<usize>,
}

/// Replaces every landmark's `x` with the value of a polynomial in `y` fitted
/// through the landmarks. `y` coordinates are never changed.
pub fn smooth_landmarks(spine: &SpineLandmarks, degree: usize, mode: SmoothMode) -> Result<Smoothed> {
    if spine.is_empty() {
        return Err(Error::InvalidInput("cannot smooth an empty spine".into()));
    }
    let pairs = |corners: &[usize]| -> Vec<(f64, f64)> {
        spine
            .vertebrae
            .iter()
            .flat_map(|q| corners.iter().map(move |&c| (q.corners[c].y, q.corners[c].x)))
            .collect()
    };
    // fit index used for each corner slot TL, TR, BL, BR
    let (fits, slot_fit) = match mode {
        SmoothMode::AllPoints => (vec![fit_polynomial(&pairs(&[0, 1, 2, 3]), degree)?], [0, 0, 0, 0]),
        SmoothMode::LeftRightSplit => (
            vec![
                fit_polynomial(&pairs(&[0, 2]), degree)?,
                fit_polynomial(&pairs(&[1, 3]), degree)?,
            ],
            [0, 1, 0, 1],
        ),
    };

    let vertebrae: Vec<VertebraQuad> = spine
        .vertebrae
        .iter()
        .map(|q| {
            let mut corners = q.corners;
            for (slot, p) in corners.iter_mut().enumerate() {
                *p = Point2::new(fits[slot_fit[slot]].eval(p.y), p.y);
            }
            VertebraQuad { corners }
        })
        .collect();
    let collapsed = vertebrae
        .iter()
        .enumerate()
        .filter(|(_, q)| !(q.tl().x < q.tr().x && q.bl().x < q.br().x))
        .map(|(i, _)| i)
        .collect();
    Ok(Smoothed {
        spine: SpineLandmarks::new(vertebrae),
        fits,
        collapsed,
    })
}
