//! File formats: landmark and angle CSV, detector prediction interchange,
//! GT box tables and evaluation reports.
//!
//! All writers go through a temporary file that is renamed into place, so a
//! crashed run never leaves a half-written output behind. Floats are written
//! with Rust's shortest round-trip formatting, so write-then-read reproduces
//! every value bit for bit.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cobb::CobbTriple;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection, ImageDims, Point2, SpineLandmarks, VertebraQuad, NUM_VERTEBRAE};
use crate::metrics::EvalReport;

pub const NUM_LANDMARK_VALUES: usize = NUM_VERTEBRAE * 4 * 2;

pub const PREDICTIONS_FORMAT: &str = "cobbkit-predictions";
pub const PREDICTIONS_VERSION: u32 = 1;

/// How the 136 coordinates of one image are laid out in a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkLayout {
    /// `x0, y0, x1, y1, ...`
    #[default]
    XyInterleaved,
    /// `x0 .. x67, y0 .. y67`
    XBlockYBlock,
}

impl FromStr for LandmarkLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xy-interleaved" => Ok(Self::XyInterleaved),
            "x-block-y-block" => Ok(Self::XBlockYBlock),
            other => Err(Error::Config(format!(
                "unknown landmark layout '{other}' (expected xy-interleaved or x-block-y-block)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corner {
    Tl,
    Tr,
    Bl,
    Br,
}

impl Corner {
    fn canonical_index(self) -> usize {
        match self {
            Corner::Tl => 0,
            Corner::Tr => 1,
            Corner::Bl => 2,
            Corner::Br => 3,
        }
    }
}

/// The corner stored in each of the four per-vertebra slots of a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CornerOrder(pub [Corner; 4]);

impl CornerOrder {
    pub const CANONICAL: CornerOrder = CornerOrder([Corner::Tl, Corner::Tr, Corner::Bl, Corner::Br]);

    /// Reorders file-slot points into canonical TL, TR, BL, BR.
    pub fn to_canonical(&self, slots: [Point2; 4]) -> [Point2; 4] {
        let mut out = [Point2::default(); 4];
        for (slot, corner) in self.0.iter().enumerate() {
            out[corner.canonical_index()] = slots[slot];
        }
        out
    }

    pub fn from_canonical(&self, corners: [Point2; 4]) -> [Point2; 4] {
        self.0.map(|c| corners[c.canonical_index()])
    }
}

impl Default for CornerOrder {
    fn default() -> Self {
        Self::CANONICAL
    }
}

impl FromStr for CornerOrder {
    type Err = Error;

    /// Parses `tl,tr,bl,br` style lists.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("corner order '{s}' must list tl, tr, bl, br once each"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let mut corners = [Corner::Tl; 4];
        for (slot, p) in parts.iter().enumerate() {
            corners[slot] = match p.to_ascii_lowercase().as_str() {
                "tl" => Corner::Tl,
                "tr" => Corner::Tr,
                "bl" => Corner::Bl,
                "br" => Corner::Br,
                _ => return Err(bad()),
            };
        }
        if corners.iter().collect::<HashSet<_>>().len() != 4 {
            return Err(bad());
        }
        Ok(Self(corners))
    }
}

impl std::fmt::Display for CornerOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|c| match c {
                Corner::Tl => "tl",
                Corner::Tr => "tr",
                Corner::Bl => "bl",
                Corner::Br => "br",
            })
            .collect();
        f.write_str(&names.join(","))
    }
}

/// Column order of the three angles in an angle file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngleOrder {
    #[default]
    MtPtTl,
    PtMtTl,
}

impl AngleOrder {
    fn to_triple(self, v: [f64; 3]) -> CobbTriple {
        match self {
            AngleOrder::MtPtTl => CobbTriple::new(v[0], v[1], v[2]),
            AngleOrder::PtMtTl => CobbTriple::new(v[1], v[0], v[2]),
        }
    }
}

impl FromStr for AngleOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mt-pt-tl" => Ok(Self::MtPtTl),
            "pt-mt-tl" => Ok(Self::PtMtTl),
            other => Err(Error::Config(format!(
                "unknown angle order '{other}' (expected mt-pt-tl or pt-mt-tl)"
            ))),
        }
    }
}

/// Where image ids come from when reading landmark or angle rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum IdSource {
    /// Leading `image_id` column (plus `width,height` for landmarks).
    #[default]
    Column,
    /// Bare numeric rows; ids listed one per row in a separate file.
    Sidecar(Vec<String>),
}

#[derive(Debug, Clone, Default)]
pub struct LandmarkCsvOptions {
    pub layout: LandmarkLayout,
    pub corner_order: CornerOrder,
    pub ids: IdSource,
    /// Image sizes by id; required for sidecar rows.
    pub dims: BTreeMap<String, ImageDims>,
}

/// One image of a landmark dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub image_id: String,
    pub dims: ImageDims,
    pub landmarks: Option<SpineLandmarks>,
    pub gt_angles: Option<CobbTriple>,
    /// The file held coordinates in `[0, 1]` that were scaled by `dims`.
    pub normalized_input: bool,
    /// Validation problems; such rows are kept, not dropped.
    pub warnings: Vec<String>,
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank records paired with their 1-based line numbers.
fn csv_records(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, r) in reader.records().enumerate() {
        let rec = r.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        out.push((line, rec));
    }
    Ok(out)
}

fn is_header(rec: &csv::StringRecord) -> bool {
    rec.get(0).is_some_and(|f| f.eq_ignore_ascii_case("image_id"))
}

fn parse_f64(path: &Path, row: usize, column: usize, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: format!("column {}: '{field}' is not a number", column + 1),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("column {}: non-finite value '{field}'", column + 1),
        });
    }
    Ok(v)
}

/// Reads a sidecar id list, one id per non-empty line.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// Reads `image_id,width,height` rows.
pub fn read_dims_csv(path: &Path) -> Result<BTreeMap<String, ImageDims>> {
    let mut out = BTreeMap::new();
    for (i, (row, rec)) in csv_records(path)?.iter().enumerate() {
        let row = *row;
        if i == 0 && is_header(rec) {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("expected 3 fields (image_id,width,height), got {}", rec.len()),
            });
        }
        let id = non_empty_id(path, row, &rec[0])?;
        let dims = ImageDims::new(parse_f64(path, row, 1, &rec[1])?, parse_f64(path, row, 2, &rec[2])?)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row,
                message: e.to_string(),
            })?;
        out.insert(id, dims);
    }
    Ok(out)
}

fn non_empty_id(path: &Path, row: usize, field: &str) -> Result<String> {
    if field.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            message: "missing image id".into(),
        });
    }
    Ok(field.to_owned())
}

fn points_from_values(values: &[f64], layout: LandmarkLayout) -> Vec<Point2> {
    let n = values.len() / 2;
    (0..n)
        .map(|k| match layout {
            LandmarkLayout::XyInterleaved => Point2::new(values[2 * k], values[2 * k + 1]),
            LandmarkLayout::XBlockYBlock => Point2::new(values[k], values[n + k]),
        })
        .collect()
}

fn values_from_points(points: &[Point2], layout: LandmarkLayout) -> Vec<f64> {
    match layout {
        LandmarkLayout::XyInterleaved => points.iter().flat_map(|p| [p.x, p.y]).collect(),
        LandmarkLayout::XBlockYBlock => points
            .iter()
            .map(|p| p.x)
            .chain(points.iter().map(|p| p.y))
            .collect(),
    }
}

/// Reads 68-landmark rows into dataset records.
///
/// Rows whose landmarks break the spine invariants are kept with a warning.
/// Rows whose values all lie in `[0, 1]` are treated as normalized and scaled
/// by the image size.
pub fn read_landmark_csv(path: &Path, opts: &LandmarkCsvOptions) -> Result<Vec<DatasetRecord>> {
    let rows = csv_records(path)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut data_row = 0;
    for (i, (row, rec)) in rows.iter().enumerate() {
        let row = *row;
        if i == 0 && is_header(rec) {
            continue;
        }
        let (id, dims, first_value) = match &opts.ids {
            IdSource::Column => {
                let expected = NUM_LANDMARK_VALUES + 3;
                if rec.len() != expected {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("expected {expected} fields (image_id,width,height + 136 coordinates), got {}", rec.len()),
                    });
                }
                let id = non_empty_id(path, row, &rec[0])?;
                let dims = ImageDims::new(parse_f64(path, row, 1, &rec[1])?, parse_f64(path, row, 2, &rec[2])?)
                    .map_err(|e| Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: e.to_string(),
                    })?;
                (id, dims, 3)
            }
            IdSource::Sidecar(ids) => {
                if rec.len() != NUM_LANDMARK_VALUES {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("expected {NUM_LANDMARK_VALUES} coordinates, got {}", rec.len()),
                    });
                }
                let id = ids.get(data_row).cloned().ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("no sidecar id for data row {} ({} ids given)", data_row + 1, ids.len()),
                })?;
                let dims = *opts.dims.get(&id).ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("no image size for '{id}'"),
                })?;
                (id, dims, 0)
            }
        };
        data_row += 1;
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate image id '{id}'"),
            });
        }
        let values = (first_value..rec.len())
            .map(|c| parse_f64(path, row, c, &rec[c]))
            .collect::<Result<Vec<f64>>>()?;

        let normalized = values.iter().all(|v| (0.0..=1.0).contains(v));
        let mut points = points_from_values(&values, opts.layout);
        let mut warnings = Vec::new();
        if normalized {
            for p in &mut points {
                p.x *= dims.width;
                p.y *= dims.height;
            }
            warnings.push(format!(
                "coordinates in [0, 1]; scaled by image size {}x{}",
                dims.width, dims.height
            ));
        }
        let quads = points
            .chunks_exact(4)
            .map(|c| {
                let [tl, tr, bl, br] = opts.corner_order.to_canonical([c[0], c[1], c[2], c[3]]);
                VertebraQuad::new(tl, tr, bl, br)
            })
            .collect();
        let spine = SpineLandmarks::new(quads);
        if let Err(e) = spine.validate() {
            warnings.push(format!("validation: {e}"));
        }
        records.push(DatasetRecord {
            image_id: id,
            dims,
            landmarks: Some(spine),
            gt_angles: None,
            normalized_input: normalized,
            warnings,
        });
    }
    if let IdSource::Sidecar(ids) = &opts.ids {
        if ids.len() != data_row {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("{} sidecar ids for {data_row} landmark rows", ids.len()),
            });
        }
    }
    Ok(records)
}

/// Writes records with landmarks in the `image_id,width,height,...` form.
pub fn write_landmark_csv(
    path: &Path,
    records: &[DatasetRecord],
    layout: LandmarkLayout,
    corner_order: CornerOrder,
) -> Result<()> {
    let mut out = String::from("image_id,width,height");
    let names: Vec<String> = match layout {
        LandmarkLayout::XyInterleaved => (0..NUM_LANDMARK_VALUES / 2)
            .flat_map(|k| [format!("x{k}"), format!("y{k}")])
            .collect(),
        LandmarkLayout::XBlockYBlock => (0..NUM_LANDMARK_VALUES / 2)
            .map(|k| format!("x{k}"))
            .chain((0..NUM_LANDMARK_VALUES / 2).map(|k| format!("y{k}")))
            .collect(),
    };
    for n in names {
        out.push(',');
        out.push_str(&n);
    }
    out.push('\n');
    for r in records {
        let spine = r.landmarks.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("record '{}' has no landmarks", r.image_id))
        })?;
        if spine.len() != NUM_VERTEBRAE {
            return Err(Error::InvalidInput(format!(
                "record '{}' has {} vertebrae",
                r.image_id,
                spine.len()
            )));
        }
        let points: Vec<Point2> = spine
            .vertebrae
            .iter()
            .flat_map(|q| corner_order.from_canonical(q.corners))
            .collect();
        let _ = write!(out, "{},{},{}", csv_field(&r.image_id), r.dims.width, r.dims.height);
        for v in values_from_points(&points, layout) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Reads `image_id,a1,a2,a3[,...]` rows; columns after the third angle are
/// ignored so angle files written by [`write_angles_csv`] read back directly.
pub fn read_angles_csv(path: &Path, order: AngleOrder) -> Result<BTreeMap<String, CobbTriple>> {
    read_angles(path, order, &IdSource::Column)
}

/// Like [`read_angles_csv`] for bare three-column rows with sidecar ids.
pub fn read_angles_csv_with_ids(
    path: &Path,
    order: AngleOrder,
    ids: Vec<String>,
) -> Result<BTreeMap<String, CobbTriple>> {
    read_angles(path, order, &IdSource::Sidecar(ids))
}

fn read_angles(path: &Path, order: AngleOrder, ids: &IdSource) -> Result<BTreeMap<String, CobbTriple>> {
    let mut out = BTreeMap::new();
    let mut data_row = 0;
    for (i, (row, rec)) in csv_records(path)?.iter().enumerate() {
        let row = *row;
        if i == 0 && (is_header(rec) || rec.get(0).is_some_and(|f| f.parse::<f64>().is_err() && matches!(ids, IdSource::Sidecar(_)))) {
            continue;
        }
        let (id, start) = match ids {
            IdSource::Column => {
                if rec.len() < 4 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("expected image_id and 3 angles, got {} fields", rec.len()),
                    });
                }
                (non_empty_id(path, row, &rec[0])?, 1)
            }
            IdSource::Sidecar(list) => {
                if rec.len() != 3 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("expected 3 angles, got {} fields", rec.len()),
                    });
                }
                let id = list.get(data_row).cloned().ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    message: format!("no sidecar id for data row {}", data_row + 1),
                })?;
                (id, 0)
            }
        };
        data_row += 1;
        let mut v = [0.0; 3];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_f64(path, row, start + k, &rec[start + k])?;
        }
        if out.insert(id.clone(), order.to_triple(v)).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: format!("duplicate image id '{id}'"),
            });
        }
    }
    if let IdSource::Sidecar(list) = ids {
        if list.len() != data_row {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("{} sidecar ids for {data_row} angle rows", list.len()),
            });
        }
    }
    Ok(out)
}

/// Writes `image_id,mt,pt,tl,upper_idx,lower_idx,s_shaped,pair_inverted`.
/// Selection columns are empty for triples without a selection.
pub fn write_angles_csv(path: &Path, rows: &[(String, CobbTriple)]) -> Result<()> {
    let mut out = String::from("image_id,mt,pt,tl,upper_idx,lower_idx,s_shaped,pair_inverted\n");
    for (id, t) in rows {
        let _ = write!(out, "{},{},{},{}", csv_field(id), t.mt, t.pt, t.tl);
        match t.selection {
            Some(s) => {
                let _ = writeln!(out, ",{},{},{},{}", s.upper_idx, s.lower_idx, s.s_shaped, s.pair_inverted());
            }
            None => out.push_str(",,,,\n"),
        }
    }
    write_atomic(path, out.as_bytes())
}

/// One detected vertebra: its box and the corners regressed inside it,
/// normalized to the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedVertebra {
    #[serde(flatten)]
    pub detection: Detection,
    /// `[TL, TR, BL, BR]` in box-normalized coordinates.
    pub landmarks: [Point2; 4],
}

/// Detector and landmark-regressor output for one image.
///
/// Boxes are in the pixel frame of the (possibly cropped) detector input;
/// `crop_top_offset` rows were removed above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    /// Size of the original, uncropped image.
    pub dims: ImageDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_top_offset: Option<f64>,
    pub detections: Vec<PredictedVertebra>,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidInput("empty image id".into()));
        }
        ImageDims::new(self.dims.width, self.dims.height)?;
        if let Some(off) = self.crop_top_offset {
            if !(off.is_finite() && off >= 0.0) {
                return Err(Error::InvalidInput(format!("crop offset {off} must be non-negative")));
            }
        }
        for (k, d) in self.detections.iter().enumerate() {
            d.detection
                .validate()
                .map_err(|e| Error::InvalidInput(format!("detection {k}: {e}")))?;
            if let Some(p) = d
                .landmarks
                .iter()
                .find(|p| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y))
            {
                return Err(Error::InvalidInput(format!(
                    "detection {k}: normalized landmark ({}, {}) outside [0, 1]",
                    p.x, p.y
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PredictionFile {
    format: String,
    version: u32,
    records: Vec<PredictionRecord>,
}

/// Reads a prediction file, checking its format tag, version and records.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = read_to_string(path)?;
    let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("not a prediction file: {e}"),
    })?;
    let format = header.get("format").and_then(|v| v.as_str());
    if format != Some(PREDICTIONS_FORMAT) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("format tag {format:?}, expected '{PREDICTIONS_FORMAT}'"),
        });
    }
    let version = header.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(PREDICTIONS_VERSION)) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("unsupported version {version:?}, this build reads version {PREDICTIONS_VERSION}"),
        });
    }
    let file: PredictionFile = serde_json::from_value(header).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    for r in &file.records {
        r.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("record '{}': {e}", r.image_id),
        })?;
        if !seen.insert(r.image_id.as_str()) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("duplicate image id '{}'", r.image_id),
            });
        }
    }
    Ok(file.records)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = PredictionFile {
        format: PREDICTIONS_FORMAT.into(),
        version: PREDICTIONS_VERSION,
        records: records.to_vec(),
    };
    let text = serde_json::to_string_pretty(&file).expect("prediction records serialize");
    write_atomic(path, text.as_bytes())
}

/// One padded GT box with the box-normalized corners it encloses.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRow {
    pub image_id: String,
    pub vertebra: usize,
    pub bbox: BoundingBox,
    pub normalized: [Point2; 4],
}

/// Writes `image_id,vertebra,x_min,y_min,x_max,y_max,u_tl,v_tl,...,u_br,v_br`.
pub fn write_boxes_csv(path: &Path, rows: &[BoxRow]) -> Result<()> {
    let mut out = String::from(
        "image_id,vertebra,x_min,y_min,x_max,y_max,u_tl,v_tl,u_tr,v_tr,u_bl,v_bl,u_br,v_br\n",
    );
    for r in rows {
        let b = r.bbox;
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            csv_field(&r.image_id),
            r.vertebra,
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max
        );
        for p in r.normalized {
            let _ = write!(out, ",{},{}", p.x, p.y);
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path, text.as_bytes())
}

/// Writes `image_id,numerator,denominator,ratio,excluded`, one row per image.
pub fn write_report_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut out = String::from("image_id,numerator,denominator,ratio,excluded\n");
    for s in &report.per_image {
        let ratio = s.ratio.map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&s.image_id),
            s.numerator,
            s.denominator,
            ratio,
            s.ratio.is_none()
        );
    }
    write_atomic(path, out.as_bytes())
}
