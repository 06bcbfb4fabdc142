//! RoI annotations to attributed spatial graphs, plus graph and manifest files.

pub mod annotation;
pub mod edges;
mod graph;
pub mod raster;
pub mod split;

use std::fs;
use std::path::Path;

use thiserror::Error;

pub use annotation::{parse_annotations, AnnotationFile, FEMUR_ROIS, LabelVocabulary, RoiAnnotation, UnknownLabelPolicy};
pub use edges::{build_connected, build_edges_delaunay, build_edges_distance, build_edges_knn, ensure_connected, EdgeSet, EdgeSpec};
pub use graph::{BuildMethod, BuildParams, Node, RoiGraph, SubjectLabel};
pub use raster::{centroid, load_grayscale, rasterize_polygon, GrayImage, Mask};
pub use split::{make_split, DatasetManifest, DatasetSplit, ManifestEntry, SplitRole};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("shape {shape} (`{label}`): {reason}")]
    Annotation { shape: usize, label: String, reason: String },
    #[error("empty RoI mask")]
    EmptyMask,
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("graph `{graph_id}`: {reason}")]
    Invalid { graph_id: String, reason: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("image {path}: {reason}")]
    Image { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {inner}")]
    InFile { path: String, inner: Box<GraphError> },
}

impl GraphError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn with_path(self, path: &Path) -> Self {
        match self {
            e @ (Self::Io { .. } | Self::InFile { .. }) => e,
            e => Self::InFile {
                path: path.display().to_string(),
                inner: Box::new(e),
            },
        }
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), GraphError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| GraphError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| GraphError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| GraphError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize, d: usize, seed: u64) -> RoiGraph {
        let c: Vec<[f64; 2]> = (0..n).map(|i| [(i * 7 % 13) as f64 * 3.0 + seed as f64, (i * 5 % 11) as f64 * 4.0]).collect();
        let (edges, params) = build_connected(&c, &EdgeSpec::knn(2)).unwrap();
        RoiGraph {
            graph_id: format!("g{seed}"),
            subject_label: SubjectLabel::Fractured,
            build_method: BuildMethod::Knn,
            build_params: params,
            nodes: c
                .iter()
                .enumerate()
                .map(|(i, &centroid)| Node {
                    label: format!("roi{i}"),
                    centroid,
                    features: (0..d).map(|k| (i * d + k) as f64 * 0.1 - 1.0 / 3.0).collect(),
                })
                .collect(),
            edges: edges.into_iter().map(|(i, j)| [i, j]).collect(),
        }
    }

    #[test]
    fn validate_catches_broken_invariants() {
        let g = sample(5, 3, 0);
        g.validate().unwrap();
        let mut bad = g.clone();
        bad.edges.push([2, 2]);
        assert!(bad.validate().is_err());
        let mut bad = g.clone();
        bad.edges = vec![[0, 1]];
        assert!(bad.validate().unwrap_err().to_string().contains("not connected"));
        let mut bad = g.clone();
        bad.nodes[1].features.pop();
        assert!(bad.validate().is_err());
        let mut bad = g;
        let e = bad.edges[0];
        bad.edges.insert(0, e);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn permutation_moves_edges_with_nodes() {
        let g = sample(4, 2, 1);
        let p = g.permuted(&[3, 0, 2, 1]);
        p.validate().unwrap();
        assert_eq!(p.nodes[0], g.nodes[3]);
        assert_eq!(p.edges.len(), g.edges.len());
    }

    proptest! {
        #[test]
        fn graph_json_round_trip(n in 1usize..9, d in 1usize..6, seed in 0u64..50) {
            let g = sample(n, d, seed);
            let back = RoiGraph::from_json(&g.to_json()).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
