//! SVG overlays of a processed image: boxes, landmarks and fitted curves.
//!
//! Output is a plain string with fixed number formatting, so identical input
//! gives byte-identical files. Elements carry classes (`box kept`,
//! `box rejected`, `landmark`, `smoothed`, `curve`) for downstream styling
//! and counting.

use std::fmt::Write;

use crate::geometry::{BoundingBox, ImageDims, SpineLandmarks};
use crate::pipeline::PipelineOutput;
use crate::postprocess::PolyFit;

const CURVE_SAMPLES: usize = 64;

#[derive(Debug, Clone, Default)]
pub struct Overlay<'a> {
    pub title: String,
    pub dims: Option<ImageDims>,
    pub kept: &'a [BoundingBox],
    pub rejected: &'a [BoundingBox],
    pub landmarks: Option<&'a SpineLandmarks>,
    pub smoothed: Option<&'a SpineLandmarks>,
    pub fits: &'a [PolyFit],
    pub warnings: Vec<String>,
}

impl<'a> Overlay<'a> {
    pub fn from_output(out: &'a PipelineOutput) -> Self {
        let mut warnings = Vec::new();
        if !out.collapsed.is_empty() {
            warnings.push(format!("smoothing collapsed vertebrae {:?}", out.collapsed));
        }
        Self {
            title: out.image_id.clone(),
            dims: Some(out.dims),
            kept: &out.kept_boxes,
            rejected: &out.rejected_boxes,
            landmarks: Some(&out.landmarks),
            smoothed: out.smoothed.as_ref(),
            fits: &out.fits,
            warnings,
        }
    }

    /// An overlay with nothing drawn but the given warning.
    pub fn warning(title: &str, dims: Option<ImageDims>, message: &str) -> Self {
        Self {
            title: title.to_owned(),
            dims,
            warnings: vec![message.to_owned()],
            ..Default::default()
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn f(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn boxes(svg: &mut String, class: &str, items: &[BoundingBox]) {
    for b in items {
        let _ = writeln!(
            svg,
            r#"    <rect class="box {class}" x="{}" y="{}" width="{}" height="{}"/>"#,
            f(b.x_min),
            f(b.y_min),
            f(b.width()),
            f(b.height())
        );
    }
}

fn points(svg: &mut String, class: &str, spine: &SpineLandmarks) {
    for (i, q) in spine.vertebrae.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"    <polygon class="{class}-quad" data-vertebra="{i}" points="{},{} {},{} {},{} {},{}"/>"#,
            f(q.tl().x),
            f(q.tl().y),
            f(q.tr().x),
            f(q.tr().y),
            f(q.br().x),
            f(q.br().y),
            f(q.bl().x),
            f(q.bl().y)
        );
        for p in q.corners {
            let _ = writeln!(svg, r#"    <circle class="{class}" cx="{}" cy="{}" r="3"/>"#, f(p.x), f(p.y));
        }
    }
}

fn y_range(spine: Option<&SpineLandmarks>, fit: &PolyFit) -> (f64, f64) {
    match spine.filter(|s| !s.is_empty()) {
        Some(s) => s
            .points()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y))),
        None => (fit.y_center - fit.y_scale, fit.y_center + fit.y_scale),
    }
}

/// Renders the overlay as a standalone SVG document.
pub fn render_svg(ov: &Overlay) -> String {
    let (w, h) = match ov.dims {
        Some(d) => (d.width, d.height),
        None => (512.0, 512.0),
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        f(w),
        f(h),
        f(w),
        f(h)
    );
    let _ = writeln!(svg, "  <title>{}</title>", escape(&ov.title));
    svg.push_str(concat!(
        "  <style>\n",
        "    .box { fill: none; stroke-width: 2; }\n",
        "    .kept { stroke: #1e90ff; }\n",
        "    .rejected { stroke: #ff3030; stroke-dasharray: 8 4; }\n",
        "    .landmark { fill: #ffd700; }\n",
        "    .landmark-quad { fill: none; stroke: #ffd700; stroke-width: 1; }\n",
        "    .smoothed { fill: #32cd32; }\n",
        "    .smoothed-quad { fill: none; stroke: #32cd32; stroke-width: 1; }\n",
        "    .curve { fill: none; stroke: #32cd32; stroke-width: 2; }\n",
        "    .warning { fill: #ff3030; font: 24px sans-serif; }\n",
        "  </style>\n",
    ));
    let _ = writeln!(svg, r##"  <rect class="frame" x="0" y="0" width="{}" height="{}" fill="#000"/>"##, f(w), f(h));

    svg.push_str("  <g id=\"boxes\">\n");
    boxes(&mut svg, "kept", ov.kept);
    boxes(&mut svg, "rejected", ov.rejected);
    svg.push_str("  </g>\n");

    svg.push_str("  <g id=\"landmarks\">\n");
    if let Some(s) = ov.landmarks {
        points(&mut svg, "landmark", s);
    }
    svg.push_str("  </g>\n");

    svg.push_str("  <g id=\"smoothing\">\n");
    for fit in ov.fits {
        let (lo, hi) = y_range(ov.landmarks, fit);
        let pts: Vec<String> = (0..=CURVE_SAMPLES)
            .map(|k| {
                let y = lo + (hi - lo) * k as f64 / CURVE_SAMPLES as f64;
                format!("{},{}", f(fit.eval(y)), f(y))
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"    <polyline class="curve" data-degree="{}" points="{}"/>"#,
            fit.degree,
            pts.join(" ")
        );
    }
    if let Some(s) = ov.smoothed {
        points(&mut svg, "smoothed", s);
    }
    svg.push_str("  </g>\n");

    if !ov.warnings.is_empty() {
        svg.push_str("  <g id=\"warnings\">\n");
        for (i, msg) in ov.warnings.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"    <text class="warning" x="16" y="{}">{}</text>"#,
                32 + 30 * i,
                escape(msg)
            );
        }
        svg.push_str("  </g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
