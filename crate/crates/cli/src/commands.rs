use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cobbkit::geometry::{normalize_landmarks, quad_to_gt_box, ImageDims, SpineLandmarks};
use cobbkit::io::{self, BoxRow, DatasetRecord, IdSource, LandmarkCsvOptions, PredictionRecord};
use cobbkit::metrics::{self, SmapeVariant};
use cobbkit::pipeline::{run_landmarks, run_record, PipelineOutput, Stage};
use cobbkit::render::{render_svg, Overlay};
use cobbkit::synth::{generate_spine, perturb_to_detections, CurveKind, PerturbParams, SpineParams};
use cobbkit::{CobbTriple, Error};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::{AnglesArgs, EvaluateArgs, Kind, LandmarkInput, RenderArgs, SynthArgs, Variant};

const CONFIG_FILE: &str = "pipeline_config.json";

fn persist_config(cfg: &PipelineConfig, command: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Persisted<'a> {
        command: &'a str,
        #[serde(flatten)]
        config: &'a PipelineConfig,
    }
    io::write_json(&cfg.out_dir.join(CONFIG_FILE), &Persisted { command, config: cfg })?;
    Ok(())
}

fn pool(cfg: &PipelineConfig) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .context("starting worker threads")
}

/// A file name derived from an image id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn read_landmarks(cfg: &PipelineConfig, path: &Path, ids: Option<&PathBuf>, dims: Option<&PathBuf>) -> Result<Vec<DatasetRecord>> {
    let mut opts = LandmarkCsvOptions {
        layout: cfg.layout,
        corner_order: cfg.corner_order(),
        ..Default::default()
    };
    if let Some(ids) = ids {
        opts.ids = IdSource::Sidecar(io::read_id_list(ids)?);
    }
    if let Some(dims) = dims {
        opts.dims = io::read_dims_csv(dims)?;
    }
    let records = io::read_landmark_csv(path, &opts)?;
    for r in &records {
        for w in &r.warnings {
            eprintln!("warning: {}: {w}", r.image_id);
        }
    }
    Ok(records)
}

pub fn boxes(cfg: &PipelineConfig, args: &LandmarkInput) -> Result<()> {
    let records = read_landmarks(cfg, &args.landmarks, args.ids.as_ref(), args.dims.as_ref())?;
    if records.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no landmark rows", args.landmarks.display())).into());
    }
    let mut rows = Vec::new();
    for r in &records {
        let spine = r.landmarks.as_ref().expect("landmark reader fills landmarks");
        for (k, quad) in spine.vertebrae.iter().enumerate() {
            let bbox = quad_to_gt_box(quad, cfg.pad_w, cfg.pad_h, r.dims)
                .with_context(|| format!("{} vertebra {k}", r.image_id))?;
            let normalized =
                normalize_landmarks(quad, &bbox).with_context(|| format!("{} vertebra {k}", r.image_id))?;
            rows.push(BoxRow {
                image_id: r.image_id.clone(),
                vertebra: k,
                bbox,
                normalized,
            });
        }
    }
    io::write_boxes_csv(&cfg.out_dir.join("boxes.csv"), &rows)?;
    persist_config(cfg, "boxes")?;
    println!("{} boxes from {} images", rows.len(), records.len());
    Ok(())
}

enum AngleInput {
    Predictions(Vec<PredictionRecord>),
    Landmarks(Vec<(String, SpineLandmarks, ImageDims)>),
}

impl AngleInput {
    fn len(&self) -> usize {
        match self {
            AngleInput::Predictions(v) => v.len(),
            AngleInput::Landmarks(v) => v.len(),
        }
    }

    fn id(&self, i: usize) -> &str {
        match self {
            AngleInput::Predictions(v) => &v[i].image_id,
            AngleInput::Landmarks(v) => &v[i].0,
        }
    }

    fn run(&self, i: usize, cfg: &PipelineConfig) -> cobbkit::Result<PipelineOutput> {
        let opts = cfg.pipeline_options();
        match self {
            AngleInput::Predictions(v) => run_record(&v[i], &opts),
            AngleInput::Landmarks(v) => run_landmarks(&v[i].0, &v[i].1, v[i].2, &opts),
        }
    }
}

fn stage_table(outputs: &[PipelineOutput]) -> String {
    let mut out = String::from("image_id,stage,mt,pt,tl,error\n");
    for o in outputs {
        for s in &o.stages {
            let (a, e) = match (&s.angles, &s.error) {
                (Some(a), _) => (format!("{},{},{}", a.mt, a.pt, a.tl), String::new()),
                (None, e) => (",,".to_owned(), e.clone().unwrap_or_default().replace([',', '\n'], ";")),
            };
            let _ = writeln!(out, "{},{},{a},{e}", o.image_id, s.stage.name());
        }
    }
    out
}

fn ablation_table(outputs: &[PipelineOutput], gt: &BTreeMap<String, CobbTriple>) -> Result<String> {
    let mut out = String::from("stage,smape,n_images,mae_mt,mae_pt,mae_tl\n");
    for stage in Stage::ALL {
        let mut ids = Vec::new();
        let mut g = Vec::new();
        let mut p = Vec::new();
        for o in outputs {
            let (Some(truth), Some(pred)) = (gt.get(&o.image_id), o.stage(stage).and_then(|s| s.angles)) else {
                continue;
            };
            ids.push(o.image_id.clone());
            g.push(*truth);
            p.push(pred);
        }
        if ids.is_empty() {
            let _ = writeln!(out, "{},,0,,,", stage.name());
            continue;
        }
        let r = metrics::evaluate(&ids, &g, &p, SmapeVariant::Challenge)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            stage.name(),
            r.smape,
            r.n_images,
            r.mae_per_angle[0],
            r.mae_per_angle[1],
            r.mae_per_angle[2]
        );
    }
    Ok(out)
}

pub fn angles(cfg: &PipelineConfig, args: &AnglesArgs) -> Result<()> {
    let input = match (&args.predictions, &args.landmarks) {
        (Some(p), _) => AngleInput::Predictions(io::read_predictions(p)?),
        (None, Some(l)) => AngleInput::Landmarks(
            read_landmarks(cfg, l, args.ids.as_ref(), args.dims.as_ref())?
                .into_iter()
                .map(|r| (r.image_id, r.landmarks.expect("landmark reader fills landmarks"), r.dims))
                .collect(),
        ),
        (None, None) => unreachable!("clap requires one input"),
    };
    let gt = match &args.gt {
        Some(p) => Some(io::read_angles_csv(p, cfg.angle_order)?),
        None => None,
    };

    let results: Vec<cobbkit::Result<PipelineOutput>> =
        pool(cfg)?.install(|| (0..input.len()).into_par_iter().map(|i| input.run(i, cfg)).collect());

    let mut outputs = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => {
                if !o.collapsed.is_empty() {
                    eprintln!("warning: {}: smoothing collapsed vertebrae {:?}", o.image_id, o.collapsed);
                }
                outputs.push(o);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", input.id(i));
                failed.push(input.id(i).to_owned());
            }
        }
    }

    let rows: Vec<(String, CobbTriple)> = outputs.iter().map(|o| (o.image_id.clone(), o.angles)).collect();
    io::write_angles_csv(&cfg.out_dir.join("angles.csv"), &rows)?;
    if args.dump_stages {
        io::write_atomic(&cfg.out_dir.join("stages.csv"), stage_table(&outputs).as_bytes())?;
        for o in &outputs {
            io::write_json(&cfg.out_dir.join("stages").join(format!("{}.json", file_stem(&o.image_id))), o)?;
        }
    }
    if let Some(gt) = &gt {
        io::write_atomic(&cfg.out_dir.join("ablation.csv"), ablation_table(&outputs, gt)?.as_bytes())?;
    }
    persist_config(cfg, "angles")?;
    println!("{} of {} images processed", outputs.len(), input.len());

    if !failed.is_empty() {
        return Err(Error::InvalidInput(format!("{} images failed: {}", failed.len(), failed.join(", "))).into());
    }
    Ok(())
}

fn read_angle_file(cfg: &PipelineConfig, path: &Path, ids: Option<&PathBuf>) -> Result<BTreeMap<String, CobbTriple>> {
    Ok(match ids {
        Some(ids) => io::read_angles_csv_with_ids(path, cfg.angle_order, io::read_id_list(ids)?)?,
        None => io::read_angles_csv(path, cfg.angle_order)?,
    })
}

pub fn evaluate(cfg: &PipelineConfig, args: &EvaluateArgs) -> Result<()> {
    let gt = read_angle_file(cfg, &args.gt, args.gt_ids.as_ref())?;
    let pred = read_angle_file(cfg, &args.pred, args.pred_ids.as_ref())?;
    let (ids, g, p) = metrics::pair_by_id(&gt, &pred)?;
    let variant = match args.variant {
        Variant::Challenge => SmapeVariant::Challenge,
        Variant::Textbook => SmapeVariant::Textbook,
    };
    let report = metrics::evaluate(&ids, &g, &p, variant)?;
    io::write_json(&cfg.out_dir.join("report.json"), &report)?;
    io::write_report_csv(&cfg.out_dir.join("report.csv"), &report)?;
    persist_config(cfg, "evaluate")?;
    println!("SMAPE {:.4}% over {} images", report.smape, report.n_images);
    println!(
        "MAE  MT {:.4}  PT {:.4}  TL {:.4}",
        report.mae_per_angle[0], report.mae_per_angle[1], report.mae_per_angle[2]
    );
    for id in &report.excluded {
        eprintln!("warning: {id}: zero angles with non-zero error, excluded from the mean");
    }
    Ok(())
}

pub fn render(cfg: &PipelineConfig, args: &RenderArgs) -> Result<()> {
    let records = io::read_predictions(&args.predictions)?;
    let selected: Vec<&PredictionRecord> = if args.image_ids.is_empty() {
        records.iter().collect()
    } else {
        let chosen: Vec<&PredictionRecord> =
            records.iter().filter(|r| args.image_ids.contains(&r.image_id)).collect();
        if chosen.len() != args.image_ids.len() {
            let missing: Vec<&String> =
                args.image_ids.iter().filter(|id| !chosen.iter().any(|r| &r.image_id == *id)).collect();
            return Err(Error::InvalidInput(format!("image ids not in the prediction file: {missing:?}")).into());
        }
        chosen
    };
    let mut opts = cfg.pipeline_options();
    opts.smoothing = Some(cfg.smoothing());

    let svgs: Vec<(String, String)> = pool(cfg)?.install(|| {
        selected
            .par_iter()
            .map(|r| {
                let svg = if r.detections.is_empty() {
                    render_svg(&Overlay::warning(&r.image_id, Some(r.dims), "no detections"))
                } else {
                    match run_record(r, &opts) {
                        Ok(out) => render_svg(&Overlay::from_output(&out)),
                        Err(e) => {
                            eprintln!("warning: {}: {e}", r.image_id);
                            render_svg(&Overlay::warning(&r.image_id, Some(r.dims), &e.to_string()))
                        }
                    }
                };
                (r.image_id.clone(), svg)
            })
            .collect()
    });
    for (id, svg) in &svgs {
        io::write_atomic(&cfg.out_dir.join("render").join(format!("{}.svg", file_stem(id))), svg.as_bytes())?;
    }
    persist_config(cfg, "render")?;
    println!("{} overlays written", svgs.len());
    Ok(())
}

#[derive(Serialize)]
struct OracleEntry {
    image_id: String,
    kind: CurveKind,
    angles: CobbTriple,
    tilts: Vec<f64>,
    injected: Vec<usize>,
    dropped: Vec<usize>,
}

pub fn synth(cfg: &PipelineConfig, args: &SynthArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::Config("count must be at least 1".into()).into());
    }
    let make = |i: usize| -> cobbkit::Result<(DatasetRecord, PredictionRecord, OracleEntry)> {
        let kind = match args.kind {
            Kind::C => CurveKind::C,
            Kind::S => CurveKind::S,
            Kind::Straight => CurveKind::Straight,
            Kind::Mixed if i.is_multiple_of(2) => CurveKind::C,
            Kind::Mixed => CurveKind::S,
        };
        let seed = args.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let mut params = SpineParams::random(kind, seed);
        params.noise_sigma = args.noise;
        let s = generate_spine(&params)?;
        let id = format!("synth_{i:04}");
        let perturbed = perturb_to_detections(
            &id,
            &s.spine,
            s.dims,
            &PerturbParams {
                pad_w: cfg.pad_w,
                pad_h: cfg.pad_h,
                outliers: args.outliers,
                drop: args.drop,
                crop_top_offset: args.crop_top_offset,
                seed,
                ..Default::default()
            },
        )?;
        let record = DatasetRecord {
            image_id: id.clone(),
            dims: s.dims,
            landmarks: Some(s.spine),
            gt_angles: Some(s.oracle),
            normalized_input: false,
            warnings: vec![],
        };
        let oracle = OracleEntry {
            image_id: id,
            kind,
            angles: s.oracle,
            tilts: s.tilts,
            injected: perturbed.injected,
            dropped: perturbed.dropped,
        };
        Ok((record, perturbed.record, oracle))
    };
    let made: Vec<_> = pool(cfg)?.install(|| (0..args.count).into_par_iter().map(make).collect::<cobbkit::Result<Vec<_>>>())?;

    let mut dataset = Vec::new();
    let mut predictions = Vec::new();
    let mut oracle = Vec::new();
    for (d, p, o) in made {
        dataset.push(d);
        predictions.push(p);
        oracle.push(o);
    }
    let angles: Vec<(String, CobbTriple)> = oracle.iter().map(|o| (o.image_id.clone(), o.angles)).collect();
    io::write_landmark_csv(&cfg.out_dir.join("landmarks.csv"), &dataset, cfg.layout, cfg.corner_order())?;
    io::write_angles_csv(&cfg.out_dir.join("angles_gt.csv"), &angles)?;
    io::write_predictions(&cfg.out_dir.join("predictions.json"), &predictions)?;
    io::write_json(&cfg.out_dir.join("oracle.json"), &oracle)?;
    persist_config(cfg, "synth")?;
    println!("{} synthetic images written to {}", args.count, cfg.out_dir.display());
    Ok(())
}
