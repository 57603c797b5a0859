//! Three-angle Cobb computation from 68 vertebra landmarks.
//!
//! Each vertebra's tilt is the direction from its left-edge
//! midpoint to its right-edge midpoint. The pairwise angle matrix caps every
//! angle at 90 degrees. The largest entry is the main thoracic angle. The
//! proximal thoracic and thoracolumbar angles come from either the matrix
//! border (single curve) or a search above or below the main pair (double
//! curve). Ties always go to the lowest index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageDims, Point2, SpineLandmarks, NUM_VERTEBRAE};

/// Threshold on the S-shape statistic used by the reference algorithm.
pub const DEFAULT_S_EPS: f64 = 1e-4;

/// Symmetric matrix of pairwise vertebra tilt differences in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleMatrix {
    n: usize,
    values: Vec<f64>,
}

impl AngleMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Which vertebrae the angles were read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CobbSelection {
    /// Row of the matrix maximum.
    pub upper_idx: usize,
    /// Column of the matrix maximum.
    pub lower_idx: usize,
    pub s_shaped: bool,
}

impl CobbSelection {
    /// The matrix argmax does not order its pair top-to-bottom; this flags
    /// spines where the "upper" vertebra of the main curve is actually lower.
    pub fn pair_inverted(&self) -> bool {
        self.upper_idx > self.lower_idx
    }
}

/// Main thoracic, proximal thoracic and thoracolumbar/lumbar angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CobbTriple {
    pub mt: f64,
    pub pt: f64,
    pub tl: f64,
    /// Present when the triple was computed from landmarks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<CobbSelection>,
}

impl CobbTriple {
    pub fn new(mt: f64, pt: f64, tl: f64) -> Self {
        Self {
            mt,
            pt,
            tl,
            selection: None,
        }
    }

    /// `[MT, PT, TL]`
    pub fn as_array(&self) -> [f64; 3] {
        [self.mt, self.pt, self.tl]
    }
}

/// Pairwise angles between vertebra direction vectors, with the cosine clipped
/// to `[0, 1]` so anti-parallel and obtuse pairs read as 90 degrees.
pub fn angle_matrix(spine: &SpineLandmarks) -> Result<AngleMatrix> {
    let dirs = spine
        .vertebrae
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let v = q.direction().map_err(|e| {
                Error::Degenerate(format!("vertebra {i}: {e}"))
            })?;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dirs.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let cos = dirs[i].dot(dirs[j]) / (dirs[i].norm() * dirs[j].norm());
            let a = cos.clamp(0.0, 1.0).acos().to_degrees();
            values[i * n + j] = a;
            values[j * n + i] = a;
        }
    }
    Ok(AngleMatrix { n, values })
}

/// Double-curve test on the 34 top/bottom edge midpoints.
///
/// Residuals measure each point's offset from the chord joining the first and
/// last midpoint. The spine is S-shaped when the residuals take both signs,
/// i.e. `|(Σ r)^2 - (Σ |r|)^2| > eps`. The last two midpoints are excluded from
/// the residuals, as in the reference code.
pub fn is_s_shape(midline: &[Point2], eps: f64) -> Result<bool> {
    if midline.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "midline needs at least 3 points, got {}",
            midline.len()
        )));
    }
    let first = midline[0];
    let last = midline[midline.len() - 1];
    let (dx, dy) = (first.x - last.x, first.y - last.y);
    let count = midline.len() - 2;
    let residuals: Vec<f64> = if dx != 0.0 && dy != 0.0 {
        midline[..count]
            .iter()
            .map(|p| (p.y - last.y) / dy - (p.x - last.x) / dx)
            .collect()
    } else {
        // chord is axis-aligned: signed side-of-chord test instead
        let chord = last.sub(first);
        midline[..count]
            .iter()
            .map(|p| {
                let v = p.sub(first);
                chord.x * v.y - chord.y * v.x
            })
            .collect()
    };
    let mut signed = 0.0;
    let mut absolute = 0.0;
    for &a in &residuals {
        for &b in &residuals {
            signed += a * b;
            absolute += (a * b).abs();
        }
    }
    Ok((signed - absolute).abs() > eps)
}

fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Computes MT, PT and TL/L for a 17-vertebra spine.
///
/// `dims.height` selects between the upper and lower double-curve branches.
pub fn cobb_angles(spine: &SpineLandmarks, dims: ImageDims) -> Result<CobbTriple> {
    cobb_angles_with_eps(spine, dims, DEFAULT_S_EPS)
}

pub fn cobb_angles_with_eps(spine: &SpineLandmarks, dims: ImageDims, eps: f64) -> Result<CobbTriple> {
    if spine.len() != NUM_VERTEBRAE {
        return Err(Error::InvalidInput(format!(
            "Cobb angles need exactly {NUM_VERTEBRAE} vertebrae, got {}",
            spine.len()
        )));
    }
    let matrix = angle_matrix(spine)?;
    let last = spine.len() - 1;

    let row_max: Vec<(usize, f64)> = (0..matrix.size()).map(|i| argmax_first(matrix.row(i))).collect();
    let maxima: Vec<f64> = row_max.iter().map(|&(_, v)| v).collect();
    let (upper, mt) = argmax_first(&maxima);
    let lower = row_max[upper].0;

    let midline = spine.midline();
    let s_shaped = is_s_shape(&midline, eps)?;

    let (pt, tl) = if !s_shaped {
        (matrix.get(0, upper), matrix.get(last, lower))
    } else {
        let (pt_idx, pt) = argmax_first(&matrix.row(upper)[..=upper]);
        let y_sum = midline[2 * upper].y + midline[2 * lower].y;
        if y_sum < dims.height {
            let (_, tl) = argmax_first(&matrix.row(lower)[lower..]);
            (pt, tl)
        } else {
            let (_, tl) = argmax_first(&matrix.row(pt_idx)[..=pt_idx]);
            (pt, tl)
        }
    };

    Ok(CobbTriple {
        mt,
        pt,
        tl,
        selection: Some(CobbSelection {
            upper_idx: upper,
            lower_idx: lower,
            s_shaped,
        }),
    })
}
