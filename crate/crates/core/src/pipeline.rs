//! Detections and box-relative corners in, Cobb angles out.
//!
//! Per image: work out the crop offset, drop outlier boxes, force the count
//! to 17, map the corners back into the original image, optionally smooth,
//! then compute the angles. Every run also produces the angles of the
//! intermediate stages, so ablations are a matter of reading the output.

use serde::{Deserialize, Serialize};

use crate::cobb::{cobb_angles, CobbTriple};
use crate::error::{Error, Result};
use crate::geometry::{denormalize_landmarks, BoundingBox, Detection, ImageDims, SpineLandmarks, NUM_VERTEBRAE};
use crate::io::PredictionRecord;
use crate::postprocess::{
    apply_crop, compute_crop, enforce_count, reject_outliers, smooth_landmarks, sort_top_to_bottom, OutlierWidthRule,
    PolyFit, SmoothMode, DEFAULT_CB0, DEFAULT_CT0, DEFAULT_POLY_DEGREE,
};

/// Crop parameters used when a record does not state its own offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropParams {
    pub ct0: f64,
    pub cb0: f64,
    /// Aspect ratio (width / height) of the image the fractions were tuned on.
    pub ref_aspect: f64,
}

impl CropParams {
    pub fn new(ref_aspect: f64) -> Self {
        Self {
            ct0: DEFAULT_CT0,
            cb0: DEFAULT_CB0,
            ref_aspect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub degree: usize,
    pub mode: SmoothMode,
}

impl Default for SmoothingParams {
    fn default() -> Self {
        Self {
            degree: DEFAULT_POLY_DEGREE,
            mode: SmoothMode::AllPoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub crop: Option<CropParams>,
    pub reject_outliers: bool,
    pub outlier_rule: OutlierWidthRule,
    pub target_count: usize,
    /// Smoothing applied to the final landmarks; the smoothed stage is also
    /// reported when this is `None`, using default parameters.
    pub smoothing: Option<SmoothingParams>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            crop: None,
            reject_outliers: true,
            outlier_rule: OutlierWidthRule::Own,
            target_count: NUM_VERTEBRAE,
            smoothing: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Count enforcement only.
    Raw,
    /// Outlier rejection, then count enforcement.
    Outliers,
    /// Outlier rejection, count enforcement and smoothing.
    Smoothed,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Raw, Stage::Outliers, Stage::Smoothed];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Raw => "raw",
            Stage::Outliers => "outliers",
            Stage::Smoothed => "smoothed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAngles {
    pub stage: Stage,
    /// `None` when the stage itself failed (for example a rank-deficient fit).
    pub angles: Option<CobbTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub image_id: String,
    pub dims: ImageDims,
    pub crop_top_offset: f64,
    /// Kept boxes in original-image pixels, top to bottom.
    pub kept_boxes: Vec<BoundingBox>,
    pub rejected_boxes: Vec<BoundingBox>,
    /// Landmarks after count enforcement, before smoothing.
    pub landmarks: SpineLandmarks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothed: Option<SpineLandmarks>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<PolyFit>,
    /// Vertebrae whose corners crossed over during smoothing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collapsed: Vec<usize>,
    pub angles: CobbTriple,
    pub stages: Vec<StageAngles>,
}

impl PipelineOutput {
    pub fn stage(&self, stage: Stage) -> Option<&StageAngles> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

/// Rows removed above the detector input for `record`.
pub fn crop_offset(record: &PredictionRecord, opts: &PipelineOptions) -> Result<f64> {
    if let Some(off) = record.crop_top_offset {
        return Ok(off);
    }
    match opts.crop {
        Some(c) => {
            let spec = compute_crop(record.dims.aspect_ratio(), c.ref_aspect, c.ct0, c.cb0)?;
            Ok(apply_crop(record.dims, spec)?.top_offset)
        }
        None => Ok(0.0),
    }
}

fn spine_from(record: &PredictionRecord, order: &[usize], offset: f64, target: usize) -> Result<SpineLandmarks> {
    let chosen = enforce_count(order.to_vec(), target)?;
    Ok(SpineLandmarks::new(
        chosen
            .iter()
            .map(|&i| {
                let d = &record.detections[i];
                denormalize_landmarks(&d.landmarks, &d.detection.bbox, offset)
            })
            .collect(),
    ))
}

fn shift(b: BoundingBox, offset: f64) -> BoundingBox {
    BoundingBox {
        y_min: b.y_min + offset,
        y_max: b.y_max + offset,
        ..b
    }
}

fn stage_result(stage: Stage, r: Result<CobbTriple>) -> StageAngles {
    match r {
        Ok(a) => StageAngles {
            stage,
            angles: Some(a),
            error: None,
        },
        Err(e) => StageAngles {
            stage,
            angles: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the full chain on one prediction record.
pub fn run_record(record: &PredictionRecord, opts: &PipelineOptions) -> Result<PipelineOutput> {
    record.validate()?;
    if record.detections.is_empty() {
        return Err(Error::InvalidInput(format!("'{}': no detections", record.image_id)));
    }
    let offset = crop_offset(record, opts)?;
    let dims = record.dims;
    let dets: Vec<Detection> = record.detections.iter().map(|d| d.detection).collect();

    let all = sort_top_to_bottom(&dets);
    let split = reject_outliers(&dets, opts.outlier_rule)?;
    if split.kept.is_empty() {
        return Err(Error::InvalidInput(format!(
            "'{}': every detection was rejected as an outlier",
            record.image_id
        )));
    }

    let raw = spine_from(record, &all, offset, opts.target_count)?;
    let filtered = spine_from(record, &split.kept, offset, opts.target_count)?;
    let (kept, rejected): (Vec<usize>, Vec<usize>) = if opts.reject_outliers {
        (split.kept.clone(), split.rejected.clone())
    } else {
        (all.clone(), vec![])
    };
    let landmarks = if opts.reject_outliers { filtered.clone() } else { raw.clone() };

    let smoothing = opts.smoothing.unwrap_or_default();
    let smoothed = smooth_landmarks(&filtered, smoothing.degree, smoothing.mode);

    let stages = vec![
        stage_result(Stage::Raw, cobb_angles(&raw, dims)),
        stage_result(Stage::Outliers, cobb_angles(&filtered, dims)),
        stage_result(
            Stage::Smoothed,
            smoothed
                .as_ref()
                .map_err(|e| Error::InvalidInput(e.to_string()))
                .and_then(|s| cobb_angles(&s.spine, dims)),
        ),
    ];

    let (final_spine, smoothed_spine, fits, collapsed) = match opts.smoothing {
        Some(p) => {
            let s = smooth_landmarks(&landmarks, p.degree, p.mode)?;
            (s.spine.clone(), Some(s.spine), s.fits, s.collapsed)
        }
        None => (landmarks.clone(), None, vec![], vec![]),
    };
    let angles = cobb_angles(&final_spine, dims)?;

    Ok(PipelineOutput {
        image_id: record.image_id.clone(),
        dims,
        crop_top_offset: offset,
        kept_boxes: kept.iter().map(|&i| shift(dets[i].bbox, offset)).collect(),
        rejected_boxes: rejected.iter().map(|&i| shift(dets[i].bbox, offset)).collect(),
        landmarks,
        smoothed: smoothed_spine,
        fits,
        collapsed,
        angles,
        stages,
    })
}

/// Angles straight from landmarks (no detections): count enforcement and
/// optional smoothing only.
pub fn run_landmarks(
    image_id: &str,
    spine: &SpineLandmarks,
    dims: ImageDims,
    opts: &PipelineOptions,
) -> Result<PipelineOutput> {
    let landmarks = SpineLandmarks::new(enforce_count(spine.vertebrae.clone(), opts.target_count)?);
    let raw = stage_result(Stage::Raw, cobb_angles(&landmarks, dims));
    let smoothing = opts.smoothing.unwrap_or_default();
    let smoothed = smooth_landmarks(&landmarks, smoothing.degree, smoothing.mode);
    let stages = vec![
        StageAngles {
            stage: Stage::Outliers,
            ..raw.clone()
        },
        raw,
        stage_result(
            Stage::Smoothed,
            smoothed
                .as_ref()
                .map_err(|e| Error::InvalidInput(e.to_string()))
                .and_then(|s| cobb_angles(&s.spine, dims)),
        ),
    ];
    let (final_spine, smoothed_spine, fits, collapsed) = match opts.smoothing {
        Some(_) => {
            let s = smoothed?;
            (s.spine.clone(), Some(s.spine), s.fits, s.collapsed)
        }
        None => (landmarks.clone(), None, vec![], vec![]),
    };
    let angles = cobb_angles(&final_spine, dims)?;
    let mut stages = stages;
    stages.sort_by_key(|s| s.stage as u8);
    Ok(PipelineOutput {
        image_id: image_id.to_owned(),
        dims,
        crop_top_offset: 0.0,
        kept_boxes: vec![],
        rejected_boxes: vec![],
        landmarks,
        smoothed: smoothed_spine,
        fits,
        collapsed,
        angles,
        stages,
    })
}
