//! LabelMe-style polygon annotations.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;

use super::GraphError;

/// Default RoI vocabulary for the left proximal femur.
pub const FEMUR_ROIS: [&str; 7] = [
    "femur head",
    "subcapital",
    "inferior neck",
    "superior neck",
    "intertrochanteric",
    "greater trochanter",
    "femur shaft",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnknownLabelPolicy {
    #[default]
    Reject,
    Warn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVocabulary {
    pub labels: Vec<String>,
    pub unknown: UnknownLabelPolicy,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self {
            labels: FEMUR_ROIS.iter().map(|s| s.to_string()).collect(),
            unknown: UnknownLabelPolicy::Reject,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoiAnnotation {
    pub label: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationFile {
    /// Image path resolved against the annotation file's directory.
    pub image_path: Option<PathBuf>,
    pub rois: Vec<RoiAnnotation>,
}

#[derive(Deserialize)]
struct RawFile {
    #[serde(alias = "imagePath", default)]
    image_path: Option<String>,
    shapes: Vec<RawShape>,
}

#[derive(Deserialize)]
struct RawShape {
    label: String,
    points: Vec<[f64; 2]>,
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent polygon edges touch.
pub fn is_simple_polygon(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Parse annotation JSON text. `base_dir` resolves a relative image path.
pub fn parse_annotations_str(text: &str, base_dir: Option<&Path>, vocab: &LabelVocabulary) -> Result<AnnotationFile, GraphError> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| GraphError::Parse {
        context: "annotation file".into(),
        source: e,
    })?;
    let mut seen = HashSet::new();
    let mut rois = Vec::with_capacity(raw.shapes.len());
    for (idx, shape) in raw.shapes.into_iter().enumerate() {
        let ctx = |reason: String| GraphError::Annotation {
            shape: idx,
            label: shape.label.clone(),
            reason,
        };
        if shape.points.len() < 3 {
            return Err(ctx(format!("degenerate polygon ({} vertices, need at least 3)", shape.points.len())));
        }
        if shape.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ctx("non-finite vertex coordinate".into()));
        }
        if !is_simple_polygon(&shape.points) {
            return Err(ctx("self-intersecting polygon".into()));
        }
        if !seen.insert(shape.label.clone()) {
            return Err(ctx(format!("duplicate label `{}`", shape.label)));
        }
        if !vocab.labels.iter().any(|l| l == &shape.label) {
            match vocab.unknown {
                UnknownLabelPolicy::Reject => return Err(ctx(format!("label `{}` is not in the RoI vocabulary", shape.label))),
                UnknownLabelPolicy::Warn => warn!("shape {idx}: label `{}` is not in the RoI vocabulary", shape.label),
            }
        }
        rois.push(RoiAnnotation {
            label: shape.label,
            polygon: shape.points,
        });
    }
    let image_path = raw.image_path.map(|p| match base_dir {
        Some(dir) if Path::new(&p).is_relative() => dir.join(p),
        _ => PathBuf::from(p),
    });
    Ok(AnnotationFile { image_path, rois })
}

pub fn parse_annotations(path: &Path, vocab: &LabelVocabulary) -> Result<AnnotationFile, GraphError> {
    let text = fs::read_to_string(path).map_err(|e| GraphError::io(path, e))?;
    parse_annotations_str(&text, path.parent(), vocab).map_err(|e| e.with_path(path))
}
